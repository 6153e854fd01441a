//! Tasks, linear readouts and memory metrics.
//!
//! Alignment convention: row `t` of a [`DrivenRun`] is the observation after
//! the step driven by `u_t`, and delay `k` targets `u_{t-(k-1)}`.

use std::ops::Range;

use nalgebra::Cholesky;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::probe::ResponseKernel;
use crate::reservoirs::Reservoir;
use crate::rng::{derive_seed, stream, stream_rng};
use crate::rome::{Encoder, MemoryOperator};

pub const DEFAULT_WASHOUT: usize = 200;
pub const TRAIN_FRACTION: f64 = 0.7;

pub const NARMA_COEFFS: NarmaCoefficients = NarmaCoefficients { alpha: 0.3, beta: 0.05, gamma: 1.5, delta: 0.1 };
pub const NARMA_ORDER: usize = 10;
pub const NARMA_INPUT_RANGE: (f64, f64) = (0.0, 0.5);
const NARMA_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NarmaCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// i.i.d. uniform on `[-a, a]`; variance `a²/3`.
pub fn gen_white_input(t: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    if amplitude == 0.0 {
        return vec![0.0; t];
    }
    let mut rng = stream_rng(seed, stream::INPUT, 0);
    (0..t).map(|_| rng.random_range(-amplitude..=amplitude)).collect()
}

pub fn white_input_variance(amplitude: f64) -> f64 {
    amplitude * amplitude / 3.0
}

/// i.i.d. uniform on `[0, 0.5]`.
pub fn gen_narma_input(t: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream::INPUT, 1);
    (0..t).map(|_| rng.random_range(NARMA_INPUT_RANGE.0..=NARMA_INPUT_RANGE.1)).collect()
}

pub fn narma_input_variance() -> f64 {
    let w = NARMA_INPUT_RANGE.1 - NARMA_INPUT_RANGE.0;
    w * w / 12.0
}

/// NARMA10 target aligned with the input: element `t` is `y_{t+1}`, the value
/// produced from inputs up to `u_t`, starting from zero history.
pub fn gen_narma10(u: &[f64]) -> Result<Vec<f64>> {
    if u.len() <= NARMA_ORDER {
        return Err(Error::invalid(format!("NARMA10 needs more than {NARMA_ORDER} inputs, got {}", u.len())));
    }
    if let Some(bad) = u.iter().position(|&x| !(NARMA_INPUT_RANGE.0..=NARMA_INPUT_RANGE.1).contains(&x)) {
        return Err(Error::invalid(format!("NARMA10 input {} at index {bad} outside [0, 0.5]", u[bad])));
    }
    let c = NARMA_COEFFS;
    // y[i] holds y_i; y_0 = 0.
    let mut y = vec![0.0; u.len() + 1];
    let mut window = 0.0;
    for t in 0..u.len() {
        window += y[t];
        if t >= NARMA_ORDER {
            window -= y[t - NARMA_ORDER];
        }
        let u_lag = if t >= NARMA_ORDER - 1 { u[t + 1 - NARMA_ORDER] } else { 0.0 };
        let next = c.alpha * y[t] + c.beta * y[t] * window + c.gamma * u_lag * u[t] + c.delta;
        if !next.is_finite() || next.abs() > NARMA_LIMIT {
            return Err(Error::UnstableTask { step: t + 1 });
        }
        y[t + 1] = next;
    }
    y.remove(0);
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct DrivenRun {
    /// `T × obs_dim`.
    pub observations: Matrix,
    /// `T × m`.
    pub inputs: Matrix,
    pub washout: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl DrivenRun {
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn input(&self, channel: usize) -> Vec<f64> {
        self.inputs.column(channel).iter().copied().collect()
    }

    /// Contiguous train/test split of the post-washout samples.
    pub fn with_split(mut self, train_fraction: f64) -> Result<Self> {
        let (train, test) = split_ranges(self.len(), self.washout, train_fraction)?;
        self.train = train;
        self.test = test;
        Ok(self)
    }

    /// Delay-`k` target series (zero before the start of the input).
    pub fn delayed_input(&self, k: usize, channel: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::invalid("delays start at 1"));
        }
        if k - 1 > self.washout {
            return Err(Error::InsufficientData(format!("delay {k} exceeds washout {}", self.washout)));
        }
        let u = self.inputs.column(channel);
        Ok((0..self.len()).map(|t| if t + 1 >= k { u[t + 1 - k] } else { 0.0 }).collect())
    }
}

fn split_ranges(len: usize, washout: usize, train_fraction: f64) -> Result<(Range<usize>, Range<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    if washout >= len {
        return Err(Error::InsufficientData(format!("washout {washout} leaves no samples out of {len}")));
    }
    let usable = len - washout;
    let n_train = (usable as f64 * train_fraction).round() as usize;
    if n_train < 2 || usable - n_train < 2 {
        return Err(Error::InsufficientData(format!("{usable} post-washout samples are too few to split")));
    }
    Ok((washout..washout + n_train, washout + n_train..len))
}

/// Drive `reservoir` with `G u_t`. The reservoir is reset with a seed derived
/// from `seed`, so independent calls with the same seed are identical.
pub fn drive<R: Reservoir>(reservoir: &R, enc: &Encoder, u: &Matrix, washout: usize, seed: u64) -> Result<DrivenRun> {
    if enc.n_in() != reservoir.n_in() {
        return Err(Error::dim(format!("encoder has {} rows, reservoir input support {}", enc.n_in(), reservoir.n_in())));
    }
    if u.ncols() != enc.channels() {
        return Err(Error::dim(format!("input has {} channels, encoder {}", u.ncols(), enc.channels())));
    }
    let mut res = reservoir.clone();
    res.reset(derive_seed(seed, stream::DYNAMICS, 1));
    let t_len = u.nrows();
    let d = res.obs_dim();
    let mut obs = Matrix::zeros(t_len, d);
    let mut drive = vec![0.0; enc.n_in()];
    let mut ut = vec![0.0; u.ncols()];
    let mut row = vec![0.0; d];
    for t in 0..t_len {
        for (c, v) in ut.iter_mut().enumerate() {
            *v = u[(t, c)];
        }
        enc.drive(&ut, &mut drive);
        res.step(&drive)?;
        res.observe_into(&mut row);
        for (j, &v) in row.iter().enumerate() {
            obs[(t, j)] = v;
        }
    }
    let (train, test) = split_ranges(t_len, washout, TRAIN_FRACTION)?;
    Ok(DrivenRun { observations: obs, inputs: u.clone(), washout, train, test })
}

/// Scalar-input convenience wrapper around [`drive`].
pub fn drive_scalar<R: Reservoir>(reservoir: &R, enc: &Encoder, u: &[f64], washout: usize, seed: u64) -> Result<DrivenRun> {
    drive(reservoir, enc, &Matrix::from_column_slice(u.len(), 1, u), washout, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    pub w_out: Vector,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

impl ReadoutModel {
    pub fn predict(&self, obs: &Matrix, rows: Range<usize>) -> Vec<f64> {
        let x = obs.rows(rows.start, rows.len());
        (x * &self.w_out).iter().map(|v| v + self.intercept).collect()
    }
}

/// Centered normal equations for one set of training rows, factorized once
/// and reused for any number of targets.
pub struct ReadoutSolver {
    rows: Range<usize>,
    mean: Vector,
    centered: Matrix,
    chol: Cholesky<f64, nalgebra::Dyn>,
    pub ridge_lambda: f64,
    pub auto_regularized: bool,
}

impl ReadoutSolver {
    pub fn new(obs: &Matrix, rows: Range<usize>, ridge_lambda: f64) -> Result<Self> {
        if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
            return Err(Error::invalid(format!("ridge lambda must be finite and nonnegative, got {ridge_lambda}")));
        }
        let n = rows.len();
        let d = obs.ncols();
        if n < 2 || (ridge_lambda == 0.0 && n <= d) {
            return Err(Error::InsufficientData(format!("{n} training rows for {d} observation coordinates")));
        }
        let x = obs.rows(rows.start, n);
        let mean = x.row_mean().transpose();
        let mut centered = x.into_owned();
        for mut r in centered.row_iter_mut() {
            r -= mean.transpose();
        }
        let gram = centered.tr_mul(&centered);
        let try_factor = |lambda: f64| {
            let mut a = gram.clone();
            for i in 0..d {
                a[(i, i)] += lambda;
            }
            Cholesky::new(a).filter(well_conditioned)
        };
        let (chol, lambda, auto) = match try_factor(ridge_lambda) {
            Some(c) => (c, ridge_lambda, false),
            None => {
                let fallback = ridge_lambda.max(1e-8 * gram.trace() / d as f64);
                if !(fallback > 0.0) {
                    return Err(Error::Singular("observations have zero variance on the training range".into()));
                }
                log::warn!("readout normal equations singular; regularizing with lambda = {fallback:e}");
                let c = try_factor(fallback).ok_or_else(|| Error::Singular("regularized normal equations".into()))?;
                (c, fallback, true)
            }
        };
        Ok(Self { rows, mean, centered, chol, ridge_lambda: lambda, auto_regularized: auto })
    }

    /// `target` is indexed by absolute time; only the solver's rows are used.
    pub fn fit(&self, target: &[f64]) -> Result<ReadoutModel> {
        let y = &target[self.rows.clone()];
        let y_mean = numerics::mean(y);
        let yc = Vector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
        let rhs = self.centered.tr_mul(&yc);
        let w = self.chol.solve(&rhs);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("readout solution is not finite".into()));
        }
        let intercept = y_mean - self.mean.dot(&w);
        Ok(ReadoutModel { w_out: w, intercept, ridge_lambda: self.ridge_lambda })
    }
}

fn well_conditioned(c: &Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = c.l_dirty();
    let diag = l.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    max > 0.0 && min * min > 1e-14 * max * max && diag.iter().all(|v| v.is_finite())
}

/// OLS/ridge readout with intercept on the train range of `run`.
pub fn fit_readout(run: &DrivenRun, target: &[f64], ridge_lambda: f64) -> Result<ReadoutModel> {
    check_target(run, target)?;
    ReadoutSolver::new(&run.observations, run.train.clone(), ridge_lambda)?.fit(target)
}

fn check_target(run: &DrivenRun, target: &[f64]) -> Result<()> {
    if target.len() != run.len() {
        return Err(Error::dim(format!("target has {} samples, run {}", target.len(), run.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    /// Squared Pearson correlation on the test range.
    pub corr2: f64,
    /// Coefficient of determination on the test range.
    pub r2: f64,
}

pub fn score(model: &ReadoutModel, run: &DrivenRun, target: &[f64]) -> Result<Score> {
    check_target(run, target)?;
    let pred = model.predict(&run.observations, run.test.clone());
    let y = &target[run.test.clone()];
    Ok(Score { corr2: numerics::pearson_corr_sq(&pred, y)?, r2: numerics::coeff_determination(&pred, y)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayScore {
    pub k: usize,
    pub mf: f64,
    pub r2: f64,
}

/// Test-range scores for each delay on channel 0, sharing one factorization.
pub fn delay_scores(run: &DrivenRun, delays: &[usize], ridge_lambda: f64) -> Result<Vec<DelayScore>> {
    let solver = ReadoutSolver::new(&run.observations, run.train.clone(), ridge_lambda)?;
    delays
        .iter()
        .map(|&k| {
            let target = run.delayed_input(k, 0)?;
            let s = score(&solver.fit(&target)?, run, &target)?;
            Ok(DelayScore { k, mf: s.corr2, r2: s.r2 })
        })
        .collect()
}

/// `MF(k) = corr²(y_t, u_{t-(k-1)})` on the test range.
pub fn memory_function_empirical(run: &DrivenRun, k: usize) -> Result<f64> {
    Ok(delay_scores(run, &[k], 0.0)?[0].mf)
}

/// `(MF(1..=k_max), Σ_k MF(k))`.
pub fn memory_curve(run: &DrivenRun, k_max: usize) -> Result<(Vec<f64>, f64)> {
    let delays: Vec<usize> = (1..=k_max).collect();
    let mf: Vec<f64> = delay_scores(run, &delays, 0.0)?.into_iter().map(|s| s.mf).collect();
    let mc = mf.iter().sum();
    Ok((mf, mc))
}

/// `MF(k) = Tr(R(k) G̃ G̃ᵀ R(k)ᵀ C⁻¹)` for `k = 1..=k_max`, with metric covariance `C`.
pub fn mf_analytic(kernel: &ResponseKernel, metric_cov: &Matrix, enc: &Encoder) -> Result<Vec<f64>> {
    if metric_cov.nrows() != kernel.obs_dim() {
        return Err(Error::dim(format!(
            "metric covariance has dimension {}, kernel observations {}",
            metric_cov.nrows(),
            kernel.obs_dim()
        )));
    }
    if enc.n_in() != kernel.n_in() {
        return Err(Error::dim(format!("encoder has {} rows, kernel inputs {}", enc.n_in(), kernel.n_in())));
    }
    let inv = numerics::regularized_inverse(metric_cov, 0.0)?;
    let gt = enc.whitened()?;
    kernel
        .blocks
        .iter()
        .map(|r| {
            let a = r * &gt;
            Ok((a.transpose() * &inv * &a).trace().max(0.0))
        })
        .collect()
}

/// Stationary covariance of a driven linear reservoir, `Σ = WΣWᵀ + σ²I + GΣ_sigGᵀ`.
pub fn analytic_driven_covariance(w: &Matrix, noise_sigma: f64, enc: &Encoder) -> Result<Matrix> {
    let n = w.nrows();
    if enc.n_in() != n {
        return Err(Error::dim(format!("encoder has {} rows, W is {n}x{n}", enc.n_in())));
    }
    let q = Matrix::identity(n, n) * (noise_sigma * noise_sigma) + &enc.g * &enc.input_cov * enc.g.transpose();
    numerics::solve_discrete_lyapunov(w, &q, 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedScore {
    pub seed: u64,
    pub r2: Option<f64>,
    pub corr2: Option<f64>,
    /// The task diverged for this seed and it was skipped.
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NarmaStats {
    pub per_seed: Vec<SeedScore>,
    pub mean_r2: f64,
    pub sd_r2: f64,
    pub mean_corr2: f64,
    pub sd_corr2: f64,
    pub coefficients: NarmaCoefficients,
    pub input_range: (f64, f64),
}

pub const NARMA_MIN_LEN: usize = 4000;

/// Single-seed NARMA10 score: input, target and dynamics noise all derive from `seed`.
pub fn narma_seed<R: Reservoir>(reservoir: &R, enc: &Encoder, t: usize, washout: usize, seed: u64) -> Result<SeedScore> {
    let u = gen_narma_input(t, seed);
    let target = match gen_narma10(&u) {
        Ok(y) => y,
        Err(Error::UnstableTask { step }) => {
            log::warn!("NARMA10 diverged at step {step} for seed {seed}; skipping");
            return Ok(SeedScore { seed, r2: None, corr2: None, unstable: true });
        }
        Err(e) => return Err(e),
    };
    let run = drive_scalar(reservoir, enc, &u, washout, seed)?;
    let s = score(&fit_readout(&run, &target, 0.0)?, &run, &target)?;
    Ok(SeedScore { seed, r2: Some(s.r2), corr2: Some(s.corr2), unstable: false })
}

pub fn narma_r2<R: Reservoir>(reservoir: &R, enc: &Encoder, t: usize, seeds: &[u64]) -> Result<NarmaStats> {
    if t < NARMA_MIN_LEN {
        return Err(Error::invalid(format!("NARMA10 runs need T >= {NARMA_MIN_LEN}, got {t}")));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds given"));
    }
    let per_seed: Vec<SeedScore> = seeds
        .par_iter()
        .map(|&s| narma_seed(reservoir, enc, t, DEFAULT_WASHOUT, s))
        .collect::<Result<_>>()?;
    let r2: Vec<f64> = per_seed.iter().filter_map(|s| s.r2).collect();
    let c2: Vec<f64> = per_seed.iter().filter_map(|s| s.corr2).collect();
    if r2.is_empty() {
        return Err(Error::UnstableTask { step: 0 });
    }
    Ok(NarmaStats {
        mean_r2: numerics::mean(&r2),
        sd_r2: numerics::std_dev(&r2),
        mean_corr2: numerics::mean(&c2),
        sd_corr2: numerics::std_dev(&c2),
        per_seed,
        coefficients: NARMA_COEFFS,
        input_range: NARMA_INPUT_RANGE,
    })
}

/// Top eigenvector of `Σ_k w(k) R(k)ᵀ R(k)`: the task direction that ignores noise.
pub fn task_only_direction(kernel: &ResponseKernel, weights: &crate::rome::TaskWeights) -> Result<Vector> {
    crate::rome::check_weights_fit(kernel, weights)?;
    let n = kernel.n_in();
    let mut m = Matrix::zeros(n, n);
    for (k, w) in weights.iter() {
        let r = kernel.block(k)?;
        m += r.tr_mul(r) * w;
    }
    Ok(numerics::sym_eig(&numerics::symmetrize(&m))?.top_vector())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneScan {
    pub angles: Vec<f64>,
    pub values: Vec<f64>,
    /// `(b₁, b₂)` coordinates of the unit noise-minimizing direction, when it
    /// lives in the same space as the encoder.
    pub noise_projection: Option<(f64, f64)>,
}

/// Predicted objective at `√P (cosθ b₁ + sinθ b₂)` with `b₁ ∝ dir_rome` and
/// `b₂` the Gram–Schmidt complement of `dir_task`.
pub fn direction_plane_scan(
    op: &MemoryOperator,
    dir_task: &Vector,
    dir_rome: &Vector,
    power: f64,
    angles: usize,
    sigma_ref: Option<&Matrix>,
) -> Result<PlaneScan> {
    let n = op.dim();
    if dir_task.len() != n || dir_rome.len() != n {
        return Err(Error::dim("plane directions must match the operator dimension"));
    }
    if angles == 0 {
        return Err(Error::invalid("need at least one angle"));
    }
    let nr = dir_rome.norm();
    let nt = dir_task.norm();
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::ZeroEncoder);
    }
    let b1 = dir_rome / nr;
    let t = dir_task / nt;
    let resid = &t - &b1 * b1.dot(&t);
    if resid.norm() < 1e-8 {
        return Err(Error::DegeneratePlane);
    }
    let b2 = &resid / resid.norm();
    let mb1 = &op.matrix * &b1;
    let mb2 = &op.matrix * &b2;
    let (a11, a12, a22) = (b1.dot(&mb1), b1.dot(&mb2), b2.dot(&mb2));
    let mut th = Vec::with_capacity(angles);
    let mut values = Vec::with_capacity(angles);
    for i in 0..angles {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / angles as f64;
        let (s, c) = theta.sin_cos();
        th.push(theta);
        values.push((power * (c * c * a11 + 2.0 * s * c * a12 + s * s * a22)).max(0.0));
    }
    let noise_projection = match sigma_ref {
        Some(s) if s.nrows() == n => {
            let eig = numerics::sym_eig(s)?;
            let v = eig.vectors.column(n - 1);
            Some((b1.dot(&v), b2.dot(&v)))
        }
        _ => None,
    };
    Ok(PlaneScan { angles: th, values, noise_projection })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoirs::{Activation, DenseReservoir};
    use crate::rome::scalar_input_cov;

    fn scalar_enc(g: &[f64], var: f64) -> Encoder {
        Encoder {
            g: Matrix::from_column_slice(g.len(), 1, g),
            power: g.iter().map(|v| v * v).sum::<f64>() * var,
            active_directions: 1,
            power_split: vec![],
            input_cov: scalar_input_cov(var),
        }
    }

    #[test]
    fn white_input() {
        let u = gen_white_input(100_000, 1.0, 3);
        let var = numerics::std_dev(&u).powi(2);
        assert!((var - 1.0 / 3.0).abs() < 0.03 / 3.0);
        assert!(u.iter().all(|v| v.abs() <= 1.0));
        assert!(gen_white_input(10, 0.0, 3).iter().all(|&v| v == 0.0));
        assert_eq!(u, gen_white_input(100_000, 1.0, 3));
        assert_ne!(u[..10], gen_white_input(10, 1.0, 4)[..]);
    }

    #[test]
    fn narma_input() {
        let u = gen_narma_input(100_000, 1);
        assert!(u.iter().all(|v| (0.0..=0.5).contains(v)));
        assert!((numerics::mean(&u) - 0.25).abs() < 0.02 * 0.25);
        assert_eq!(u, gen_narma_input(100_000, 1));
    }

    #[test]
    fn narma_zero_input() {
        let y = gen_narma10(&[0.0; 2000]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-15);
        assert!((y[1] - 0.1305).abs() < 1e-15);
        let fixed = 0.7 - 0.29f64.sqrt();
        assert!((y[1999] - fixed).abs() < 1e-10, "{}", y[1999]);
    }

    #[test]
    fn narma_matches_direct_recursion() {
        let u = gen_narma_input(300, 9);
        let y = gen_narma10(&u).unwrap();
        // Direct transcription with explicit zero history.
        let mut h = vec![0.0; 311];
        let off = 10;
        let uu = |i: isize| if i < 0 { 0.0 } else { u[i as usize] };
        for t in 0..300isize {
            let ti = (t + off as isize) as usize;
            let s: f64 = (0..10).map(|i| h[ti - i]).sum();
            h[ti + 1] = 0.3 * h[ti] + 0.05 * h[ti] * s + 1.5 * uu(t - 9) * uu(t) + 0.1;
        }
        for t in 0..299 {
            assert!((y[t] - h[t + off + 1]).abs() < 1e-13);
        }
    }

    #[test]
    fn narma_guards() {
        assert!(gen_narma10(&[0.1; 5]).is_err());
        let mut u = vec![0.1; 20];
        u[3] = 0.6;
        assert!(matches!(gen_narma10(&u), Err(Error::InvalidInput(_))));
    }

    fn tiny_linear(n: usize, w: Matrix, sigma: f64) -> DenseReservoir {
        assert_eq!(w.nrows(), n);
        DenseReservoir::from_matrix(w, sigma, Activation::Identity).unwrap()
    }

    #[test]
    fn zero_encoder_noise_free_is_silent() {
        let res = tiny_linear(3, Matrix::identity(3, 3) * 0.5, 0.0);
        let u = gen_white_input(500, 1.0, 1);
        let run = drive_scalar(&res, &Encoder::zero(3, scalar_input_cov(1.0 / 3.0)), &u, 200, 1).unwrap();
        assert!(run.observations.rows(200, 300).iter().all(|&v| v == 0.0));
        assert_eq!(run.train, 200..410);
        assert_eq!(run.test, 410..500);
    }

    #[test]
    fn impulse_response_through_encoder() {
        let w = Matrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let res = tiny_linear(2, w.clone(), 0.0);
        let enc = scalar_enc(&[1.0, 2.0], 1.0);
        let mut u = vec![0.0; 20];
        u[0] = 1.0;
        let run = drive_scalar(&res, &enc, &u, 5, 0).unwrap();
        let mut expect = enc.g.column(0).into_owned();
        for t in 0..10 {
            for j in 0..2 {
                assert!((run.observations[(t, j)] - expect[j]).abs() < 1e-14);
            }
            expect = &w * expect;
        }
    }

    #[test]
    fn drive_is_deterministic() {
        let res = tiny_linear(4, Matrix::identity(4, 4) * 0.3, 0.1);
        let enc = scalar_enc(&[1.0, 0.0, 0.5, 0.0], 1.0 / 3.0);
        let u = gen_white_input(300, 1.0, 1);
        let a = drive_scalar(&res, &enc, &u, 50, 7).unwrap();
        let b = drive_scalar(&res, &enc, &u, 50, 7).unwrap();
        let c = drive_scalar(&res, &enc, &u, 50, 8).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_ne!(a.observations, c.observations);
    }

    fn noisy_run(d: usize, t: usize, seed: u64) -> DrivenRun {
        let mut rng = stream_rng(seed, "test", 0);
        let obs = Matrix::from_fn(t, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let (train, test) = split_ranges(t, 0, TRAIN_FRACTION).unwrap();
        DrivenRun { observations: obs, inputs: Matrix::zeros(t, 1), washout: 0, train, test }
    }

    #[test]
    fn readout_exact_recovery() {
        let mut run = noisy_run(5, 400, 1);
        for t in 0..400 {
            run.observations[(t, 0)] += 3.0;
        }
        let target: Vec<f64> = run.observations.column(0).iter().copied().collect();
        let m = fit_readout(&run, &target, 0.0).unwrap();
        assert!((m.w_out[0] - 1.0).abs() < 1e-10);
        assert!(m.w_out.rows(1, 4).iter().all(|v| v.abs() < 1e-10));
        assert!(m.intercept.abs() < 1e-9);
        let pred = m.predict(&run.observations, run.train.clone());
        let err: f64 = pred.iter().zip(&target[run.train.clone()]).map(|(p, y)| (p - y).powi(2)).sum();
        assert!(err < 1e-18);
    }

    #[test]
    fn readout_null_task() {
        let run = noisy_run(50, 10_000, 2);
        let mut rng = stream_rng(99, "test", 1);
        let target: Vec<f64> = (0..10_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let s = score(&fit_readout(&run, &target, 0.0).unwrap(), &run, &target).unwrap();
        assert!(s.r2 <= 0.05 && s.corr2 <= 0.05);
    }

    #[test]
    fn ridge_limit() {
        let run = noisy_run(4, 200, 3);
        let target: Vec<f64> = run.observations.column(1).iter().copied().collect();
        let m = fit_readout(&run, &target, 1e12).unwrap();
        assert!(m.w_out.norm() < 1e-6);
        assert!(fit_readout(&run, &target, -1.0).is_err());
    }

    #[test]
    fn singular_system_is_regularized() {
        let mut run = noisy_run(3, 300, 4);
        for t in 0..300 {
            run.observations[(t, 2)] = run.observations[(t, 0)];
        }
        let target: Vec<f64> = run.observations.column(1).iter().copied().collect();
        let solver = ReadoutSolver::new(&run.observations, run.train.clone(), 0.0).unwrap();
        assert!(solver.auto_regularized && solver.ridge_lambda > 0.0);
        let m = solver.fit(&target).unwrap();
        assert!((m.w_out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn in_sample_error_identity() {
        let run = noisy_run(6, 500, 5);
        let mut rng = stream_rng(5, "test", 2);
        let target: Vec<f64> = (0..500)
            .map(|t| run.observations[(t, 0)] - 0.5 * run.observations[(t, 3)] + rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let m = fit_readout(&run, &target, 0.0).unwrap();
        let pred = m.predict(&run.observations, run.train.clone());
        let y = &target[run.train.clone()];
        let r2 = numerics::coeff_determination(&pred, y).unwrap();
        let c2 = numerics::pearson_corr_sq(&pred, y).unwrap();
        assert!((r2 - c2).abs() < 1e-10);
    }

    #[test]
    fn one_step_memory_is_perfect() {
        let res = tiny_linear(3, Matrix::zeros(3, 3), 0.0);
        let enc = scalar_enc(&[1.0, 0.0, 0.0], 1.0 / 3.0);
        let u = gen_white_input(2000, 1.0, 2);
        let run = drive_scalar(&res, &enc, &u, 200, 1).unwrap();
        let mf1 = memory_function_empirical(&run, 1).unwrap();
        assert!((mf1 - 1.0).abs() < 1e-10);
        let (mf, mc) = memory_curve(&run, 8).unwrap();
        assert!(mc >= 1.0 - 1e-10);
        assert!((mc - mf.iter().sum::<f64>()).abs() < 1e-15);
        assert!(mf[5] <= 0.05);
        assert!(mf.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn delay_beyond_washout_is_rejected() {
        let res = tiny_linear(2, Matrix::zeros(2, 2), 0.0);
        let run = drive_scalar(&res, &scalar_enc(&[1.0, 0.0], 1.0), &gen_white_input(300, 1.0, 0), 10, 0).unwrap();
        assert!(run.delayed_input(12, 0).is_err());
        assert!(run.delayed_input(0, 0).is_err());
    }

    #[test]
    fn scalar_ar1_memory() {
        let (w, g, sigma) = (0.8, 1.0, 0.3);
        let var_u = 1.0 / 3.0;
        let res = tiny_linear(1, Matrix::from_element(1, 1, w), sigma);
        let enc = scalar_enc(&[g], var_u);
        let u = gen_white_input(50_000, 1.0, 11);
        let run = drive_scalar(&res, &enc, &u, 200, 11).unwrap();
        let (mf, _) = memory_curve(&run, 8).unwrap();
        for (i, m) in mf.iter().enumerate() {
            let k = i as i32 + 1;
            let expect = g * g * var_u * w.powi(2 * (k - 1)) * (1.0 - w * w) / (g * g * var_u + sigma * sigma);
            assert!((m - expect).abs() < 0.05, "k={k}: {m} vs {expect}");
        }
    }

    #[test]
    fn analytic_mf_examples() {
        let kernel = ResponseKernel {
            blocks: vec![Matrix::from_element(1, 1, 0.5)],
            probe_amplitude: 1e-3,
            trials: 1,
            nonlinear_warning: false,
        };
        let enc = scalar_enc(&[2.0], 1.0);
        let mf = mf_analytic(&kernel, &Matrix::from_element(1, 1, 4.0), &enc).unwrap();
        assert!((mf[0] - 4.0 * 0.25 / 4.0).abs() < 1e-15);
        let z = mf_analytic(&kernel, &Matrix::from_element(1, 1, 4.0), &Encoder::zero(1, scalar_input_cov(1.0))).unwrap();
        assert_eq!(z, vec![0.0]);
    }

    #[test]
    fn driven_covariance_scalar() {
        let enc = scalar_enc(&[2.0], 0.5);
        let s = analytic_driven_covariance(&Matrix::from_element(1, 1, 0.5), 0.1, &enc).unwrap();
        assert!((s[(0, 0)] - (0.01 + 2.0) / 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_encoder_narma() {
        let res = tiny_linear(5, Matrix::identity(5, 5) * 0.5, 0.05);
        let stats = narma_r2(&res, &Encoder::zero(5, scalar_input_cov(narma_input_variance())), 4000, &[1, 2]).unwrap();
        assert!(stats.mean_r2 < 0.05 && stats.mean_r2 > -0.05);
        assert_eq!(stats.coefficients, NARMA_COEFFS);
        let again = narma_r2(&res, &Encoder::zero(5, scalar_input_cov(narma_input_variance())), 4000, &[1, 2]).unwrap();
        assert_eq!(stats, again);
        assert!(narma_r2(&res, &Encoder::zero(5, scalar_input_cov(1.0)), 100, &[1]).is_err());
    }

    fn diag_op(d: &[f64]) -> MemoryOperator {
        let m = Matrix::from_diagonal(&Vector::from_column_slice(d));
        MemoryOperator {
            eigen: numerics::sym_eig(&m).unwrap(),
            matrix: m,
            weights: crate::rome::TaskWeights::single(1).unwrap(),
            degenerate_top: false,
        }
    }

    #[test]
    fn plane_scan_examples() {
        let op = diag_op(&[3.0, 1.0, 0.5]);
        let rome = op.eigen.top_vector();
        let task = Vector::from_column_slice(&[1.0, 1.0, 0.0]);
        let scan = direction_plane_scan(&op, &task, &rome, 2.0, 360, None).unwrap();
        let (imax, vmax) = scan.values.iter().enumerate().fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        assert!(imax == 0 || imax == 180);
        assert!((vmax - 6.0).abs() < 1e-12);
        for i in 0..180 {
            assert!((scan.values[i] - scan.values[i + 180]).abs() < 1e-12);
        }
        let iso = diag_op(&[1.0, 1.0, 1.0]);
        let flat = direction_plane_scan(&iso, &task, &rome, 1.0, 36, Some(&Matrix::identity(3, 3))).unwrap();
        assert!(flat.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(flat.noise_projection.is_some());
        assert!(matches!(direction_plane_scan(&op, &rome, &(&rome * 2.0), 1.0, 8, None), Err(Error::DegeneratePlane)));
    }
}
