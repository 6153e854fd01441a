//! Measurement of the zero-input working point: observation fluctuations
//! `Σ_ref` and the discrete response kernel `R_S(k)` on the injection
//! coordinates.
//!
//! Lag convention: `R_S(k)` maps an input applied `k` symbols before an
//! observation, counting the injection symbol itself as lag 1. For
//! `x_{t+1} = W x_t + G u_t` this gives `R(k) = W^{k−1}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{from_row_major, row_major, ARTIFACT_VERSION};
use crate::error::{Error, Result};
use crate::numerics::{self, CovarianceAccumulator, Matrix, Vector};
use crate::reservoirs::Reservoir;
use crate::rng::{derive_seed, stream};

/// Lyapunov tolerance for analytic fluctuation estimates.
pub const ANALYTIC_LYAPUNOV_TOL: f64 = 1e-12;
/// Responses larger than this multiple of the probe amplitude are flagged.
pub const RESPONSE_BLOWUP_FACTOR: f64 = 1e3;
const STATIONARITY_BATCHES: usize = 20;
const STATIONARITY_Z: f64 = 5.0;
const STATIONARITY_FRACTION: f64 = 0.1;
/// Trials simulated per parallel batch before folding into the running sum.
const TRIAL_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct FluctuationEstimate {
    pub mean: Vector,
    pub sigma_ref: Matrix,
    /// `None` for analytic (infinite-sample) estimates.
    pub sample_count: Option<usize>,
    /// False when the two halves of the record disagree (working-point drift).
    pub stationary: bool,
}

impl FluctuationEstimate {
    pub fn obs_dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct ResponseKernel {
    /// `blocks[k − 1]` is `R_S(k)`, shape `obs_dim × n_in`.
    pub blocks: Vec<Matrix>,
    pub probe_amplitude: f64,
    pub trials: usize,
    /// Set when some response exceeded the linear-regime guard.
    pub nonlinear_warning: bool,
}

impl ResponseKernel {
    pub fn k_max(&self) -> usize {
        self.blocks.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn n_in(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// `R_S(k)` for `1 ≤ k ≤ k_max`.
    pub fn block(&self, k: usize) -> Result<&Matrix> {
        if k == 0 || k > self.blocks.len() {
            return Err(Error::invalid(format!("delay {k} outside 1..={}", self.blocks.len())));
        }
        Ok(&self.blocks[k - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctuationConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for FluctuationConfig {
    fn default() -> Self {
        Self { steps: 20_000, burn_in: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseConfig {
    pub k_max: usize,
    pub epsilon: f64,
    pub trials: usize,
    /// Zero-input symbols simulated before the impulse in every trial.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { k_max: 50, epsilon: 1e-3, trials: 1, burn_in: 200, seed: 0 }
    }
}

/// Mean and covariance of zero-input observations after a burn-in.
pub fn estimate_fluctuations<R: Reservoir>(reservoir: &R, cfg: &FluctuationConfig) -> Result<FluctuationEstimate> {
    let dim = reservoir.obs_dim();
    if cfg.steps < 10 * dim {
        return Err(Error::InsufficientData(format!(
            "fluctuation estimate needs at least {} steps for obs_dim {dim}, got {}",
            10 * dim,
            cfg.steps
        )));
    }
    let mut r = reservoir.clone();
    r.reset(derive_seed(cfg.seed, stream::DYNAMICS, 0));
    let zero = vec![0.0; r.n_in()];
    for _ in 0..cfg.burn_in {
        r.step(&zero)?;
    }
    let mut acc = CovarianceAccumulator::new(dim);
    let batch_len = (cfg.steps / STATIONARITY_BATCHES).max(1);
    let mut batch_sums = vec![vec![0.0; dim]; STATIONARITY_BATCHES];
    let mut obs = vec![0.0; dim];
    for t in 0..cfg.steps {
        r.step(&zero)?;
        r.observe_into(&mut obs);
        acc.push(&obs)?;
        let b = t / batch_len;
        if b < STATIONARITY_BATCHES {
            for (s, o) in batch_sums[b].iter_mut().zip(&obs) {
                *s += o;
            }
        }
    }
    let (mean, sigma_ref) = acc.finish()?;
    let stationary = halves_agree(&batch_sums, batch_len);
    if !stationary {
        log::warn!("fluctuation record is not stationary; the zero-input working point may still be drifting");
    }
    Ok(FluctuationEstimate { mean, sigma_ref, sample_count: Some(cfg.steps), stationary })
}

/// Batch-means comparison of the first and second half of the record.
fn halves_agree(batch_sums: &[Vec<f64>], batch_len: usize) -> bool {
    let dim = batch_sums[0].len();
    let half = STATIONARITY_BATCHES / 2;
    let mut flagged = 0usize;
    for c in 0..dim {
        let means: Vec<f64> = batch_sums.iter().map(|b| b[c] / batch_len as f64).collect();
        let (a, b) = means.split_at(half);
        let se = |x: &[f64]| numerics::std_dev(x) / (x.len() as f64).sqrt();
        let pooled = (se(a).powi(2) + se(b).powi(2)).sqrt();
        let diff = (numerics::mean(a) - numerics::mean(b)).abs();
        if diff > STATIONARITY_Z * pooled && diff > 1e-12 * (1.0 + numerics::mean(a).abs()) {
            flagged += 1;
        }
    }
    (flagged as f64) <= STATIONARITY_FRACTION * dim as f64
}

/// Stationary covariance of `x_{t+1} = W x_t + σ η` from the discrete Lyapunov equation.
pub fn analytic_fluctuations(w: &Matrix, noise_sigma: f64) -> Result<FluctuationEstimate> {
    let n = w.nrows();
    let q = Matrix::identity(n, n) * (noise_sigma * noise_sigma);
    let sigma_ref = numerics::solve_discrete_lyapunov(w, &q, ANALYTIC_LYAPUNOV_TOL)?;
    Ok(FluctuationEstimate { mean: Vector::zeros(n), sigma_ref, sample_count: None, stationary: true })
}

/// `R(k) = W^{k−1}`, `k = 1..=k_max`.
pub fn analytic_response(w: &Matrix, k_max: usize) -> Result<ResponseKernel> {
    if w.nrows() != w.ncols() {
        return Err(Error::dim("W must be square"));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be positive"));
    }
    let n = w.nrows();
    let mut blocks = Vec::with_capacity(k_max);
    let mut power = Matrix::identity(n, n);
    for _ in 0..k_max {
        let next = w * &power;
        blocks.push(std::mem::replace(&mut power, next));
    }
    Ok(ResponseKernel { blocks, probe_amplitude: 0.0, trials: 0, nonlinear_warning: false })
}

/// Impulse-response estimate with common random numbers: each trial runs one
/// unperturbed and `n_in` perturbed branches from the same burned-in state on
/// the same noise stream, and averages `(obs_pert − obs_ref)/ε`.
pub fn estimate_response<R: Reservoir>(reservoir: &R, cfg: &ResponseConfig) -> Result<ResponseKernel> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::invalid(format!("probe amplitude must be positive, got {}", cfg.epsilon)));
    }
    if cfg.trials == 0 || cfg.k_max == 0 {
        return Err(Error::invalid("trials and k_max must be positive"));
    }
    let (obs_dim, n_in) = (reservoir.obs_dim(), reservoir.n_in());
    let mut sum = vec![Matrix::zeros(obs_dim, n_in); cfg.k_max];
    let mut blowup = false;
    let trial_ids: Vec<usize> = (0..cfg.trials).collect();
    for chunk in trial_ids.chunks(TRIAL_CHUNK) {
        let results: Vec<Result<(Vec<Matrix>, bool)>> =
            chunk.par_iter().map(|&trial| response_trial(reservoir, cfg, trial)).collect();
        // Fixed index order keeps the sum independent of scheduling.
        for res in results {
            let (blocks, flag) = res?;
            blowup |= flag;
            for (acc, b) in sum.iter_mut().zip(&blocks) {
                *acc += b;
            }
        }
    }
    let scale = 1.0 / (cfg.trials as f64 * cfg.epsilon);
    for b in sum.iter_mut() {
        *b *= scale;
    }
    if blowup {
        log::warn!(
            "response exceeded {RESPONSE_BLOWUP_FACTOR}·ε; the probe may be outside the linear regime, try a smaller ε"
        );
    }
    Ok(ResponseKernel { blocks: sum, probe_amplitude: cfg.epsilon, trials: cfg.trials, nonlinear_warning: blowup })
}

/// Raw (unscaled) response differences for one trial.
fn response_trial<R: Reservoir>(reservoir: &R, cfg: &ResponseConfig, trial: usize) -> Result<(Vec<Matrix>, bool)> {
    let (obs_dim, n_in) = (reservoir.obs_dim(), reservoir.n_in());
    let mut base = reservoir.clone();
    base.reset(derive_seed(cfg.seed, stream::TRIAL, trial as u64));
    let zero = vec![0.0; n_in];
    for _ in 0..cfg.burn_in {
        base.step(&zero)?;
    }
    let run = |mut r: R, first: &[f64]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(cfg.k_max * obs_dim);
        let mut obs = vec![0.0; obs_dim];
        for k in 0..cfg.k_max {
            r.step(if k == 0 { first } else { &zero })?;
            r.observe_into(&mut obs);
            out.extend_from_slice(&obs);
        }
        Ok(out)
    };
    let reference = run(base.clone(), &zero)?;
    let mut blocks = vec![Matrix::zeros(obs_dim, n_in); cfg.k_max];
    let limit = RESPONSE_BLOWUP_FACTOR * cfg.epsilon;
    let mut blowup = false;
    let mut impulse = zero.clone();
    for j in 0..n_in {
        impulse[j] = cfg.epsilon;
        let perturbed = run(base.clone(), &impulse)?;
        impulse[j] = 0.0;
        for (k, block) in blocks.iter_mut().enumerate() {
            for i in 0..obs_dim {
                let d = perturbed[k * obs_dim + i] - reference[k * obs_dim + i];
                blowup |= d.abs() > limit;
                block[(i, j)] = d;
            }
        }
    }
    Ok((blocks, blowup))
}

/// Versioned probe artifact; matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeArtifact {
    pub version: u32,
    pub obs_dim: usize,
    pub n_in: usize,
    pub k_max: usize,
    pub mean: Vec<f64>,
    pub sigma_ref: Vec<f64>,
    pub blocks: Vec<Vec<f64>>,
    pub metadata: ProbeMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeMetadata {
    pub model: String,
    pub params_hash: String,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub trials: usize,
    pub analytic: bool,
    pub sample_count: Option<usize>,
    pub stationary: bool,
    pub nonlinear_warning: bool,
}

impl ProbeArtifact {
    pub fn new(fluct: &FluctuationEstimate, kernel: &ResponseKernel, mut metadata: ProbeMetadata) -> Result<Self> {
        if fluct.obs_dim() != kernel.obs_dim() {
            return Err(Error::dim(format!(
                "fluctuation dim {} vs response dim {}",
                fluct.obs_dim(),
                kernel.obs_dim()
            )));
        }
        metadata.sample_count = fluct.sample_count;
        metadata.stationary = fluct.stationary;
        metadata.nonlinear_warning = kernel.nonlinear_warning;
        metadata.epsilon = kernel.probe_amplitude;
        metadata.trials = kernel.trials;
        Ok(Self {
            version: ARTIFACT_VERSION,
            obs_dim: kernel.obs_dim(),
            n_in: kernel.n_in(),
            k_max: kernel.k_max(),
            mean: fluct.mean.iter().copied().collect(),
            sigma_ref: row_major(&fluct.sigma_ref),
            blocks: kernel.blocks.iter().map(row_major).collect(),
            metadata,
        })
    }

    pub fn fluctuations(&self) -> Result<FluctuationEstimate> {
        if self.mean.len() != self.obs_dim {
            return Err(Error::dim("mean length does not match obs_dim"));
        }
        Ok(FluctuationEstimate {
            mean: Vector::from_column_slice(&self.mean),
            sigma_ref: from_row_major(self.obs_dim, self.obs_dim, &self.sigma_ref)?,
            sample_count: self.metadata.sample_count,
            stationary: self.metadata.stationary,
        })
    }

    pub fn kernel(&self) -> Result<ResponseKernel> {
        if self.blocks.len() != self.k_max || self.k_max == 0 {
            return Err(Error::dim("block count does not match k_max"));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| from_row_major(self.obs_dim, self.n_in, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResponseKernel {
            blocks,
            probe_amplitude: self.metadata.epsilon,
            trials: self.metadata.trials,
            nonlinear_warning: self.metadata.nonlinear_warning,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        crate::artifact::to_sorted_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.version != ARTIFACT_VERSION {
            return Err(Error::invalid(format!("unsupported probe artifact version {}", a.version)));
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoirs::{Activation, DenseParams, DenseReservoir};

    fn linear(n: usize, sigma: f64, seed: u64) -> DenseReservoir {
        let p = DenseParams { n, noise_sigma: sigma, seed, density: 0.5, ..DenseParams::default() };
        DenseReservoir::new(&p, Activation::Identity).unwrap()
    }

    #[test]
    fn iid_noise_gives_identity_covariance() {
        let r = DenseReservoir::from_matrix(Matrix::zeros(5, 5), 1.0, Activation::Identity).unwrap();
        let f = estimate_fluctuations(&r, &FluctuationConfig { steps: 50_000, burn_in: 10, seed: 1 }).unwrap();
        let rel = (&f.sigma_ref - Matrix::identity(5, 5)).norm() / 5f64.sqrt();
        assert!(rel < 0.05, "relative error {rel}");
        assert!(f.stationary);
    }

    #[test]
    fn noise_free_reservoir_has_zero_fluctuations() {
        let r = linear(10, 0.0, 2);
        let f = estimate_fluctuations(&r, &FluctuationConfig { steps: 200, burn_in: 50, seed: 1 }).unwrap();
        assert_eq!(f.sigma_ref.norm(), 0.0);
        assert_eq!(f.mean.norm(), 0.0);
    }

    #[test]
    fn too_few_steps_rejected() {
        let r = linear(10, 0.1, 2);
        let cfg = FluctuationConfig { steps: 99, burn_in: 0, seed: 0 };
        assert!(matches!(estimate_fluctuations(&r, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn drifting_record_is_flagged() {
        // Slow deterministic relaxation from a displaced state looks like drift.
        let w = Matrix::identity(3, 3) * 0.9995;
        let mut r = DenseReservoir::from_matrix(w, 1e-4, Activation::Identity).unwrap();
        r.set_state(&[1.0, 1.0, 1.0]).unwrap();
        let mut sums = vec![vec![0.0; 3]; STATIONARITY_BATCHES];
        let mut obs = vec![0.0; 3];
        for t in 0..2000 {
            r.step(&[0.0; 3]).unwrap();
            r.observe_into(&mut obs);
            for (s, o) in sums[t / 100].iter_mut().zip(&obs) {
                *s += o;
            }
        }
        assert!(!halves_agree(&sums, 100));
    }

    #[test]
    fn analytic_response_examples() {
        let w = Matrix::identity(3, 3) * 0.5;
        let k = analytic_response(&w, 3).unwrap();
        assert_eq!(k.block(1).unwrap(), &Matrix::identity(3, 3));
        assert_eq!(k.block(3).unwrap(), &(Matrix::identity(3, 3) * 0.25));
        assert!(k.block(0).is_err() && k.block(4).is_err());

        let r = linear(12, 0.0, 7);
        let w = r.internal_matrix().unwrap().clone();
        let k = analytic_response(&w, 5).unwrap();
        let mut p = Matrix::identity(12, 12);
        for _ in 0..4 {
            p = &w * p;
        }
        assert!((k.block(5).unwrap() - p).abs().max() < 1e-12);
    }

    #[test]
    fn noise_free_impulse_response_matches_powers() {
        let r = linear(15, 0.0, 3);
        let w = r.internal_matrix().unwrap().clone();
        let exact = analytic_response(&w, 20).unwrap();
        let est = estimate_response(
            &r,
            &ResponseConfig { k_max: 20, epsilon: 1e-3, trials: 1, burn_in: 10, seed: 4 },
        )
        .unwrap();
        for k in 1..=20 {
            let err = (est.block(k).unwrap() - exact.block(k).unwrap()).abs().max();
            assert!(err < 1e-10, "k={k}: {err:e}");
        }
        assert!(!est.nonlinear_warning);
    }

    #[test]
    fn esn_linearizes_at_zero() {
        let p = DenseParams { n: 30, noise_sigma: 0.0, seed: 5, ..DenseParams::default() };
        let r = DenseReservoir::new(&p, Activation::Tanh).unwrap();
        let w = r.internal_matrix().unwrap().clone();
        let exact = analytic_response(&w, 10).unwrap();
        let est = estimate_response(&r, &ResponseConfig { k_max: 10, epsilon: 1e-3, trials: 1, burn_in: 0, seed: 0 })
            .unwrap();
        for k in 1..=10 {
            let e = exact.block(k).unwrap();
            let rel = (est.block(k).unwrap() - e).norm() / e.norm();
            assert!(rel < 0.02, "k={k}: {rel}");
        }
    }

    #[test]
    fn response_fades_past_memory_horizon() {
        let r = linear(20, 0.05, 6);
        let k_far = 100; // 10 / (1 − 0.9)
        let est = estimate_response(&r, &ResponseConfig { k_max: k_far, epsilon: 1e-3, trials: 2, burn_in: 5, seed: 1 })
            .unwrap();
        assert!(est.block(k_far).unwrap().norm() < 1e-3 * est.block(1).unwrap().norm());
    }

    #[test]
    fn doubling_epsilon_is_linear_for_linear_model() {
        let r = linear(10, 0.05, 8);
        let cfg = ResponseConfig { k_max: 8, epsilon: 1e-3, trials: 3, burn_in: 20, seed: 2 };
        let a = estimate_response(&r, &cfg).unwrap();
        let b = estimate_response(&r, &ResponseConfig { epsilon: 2e-3, ..cfg }).unwrap();
        for k in 1..=8 {
            let (ba, bb) = (a.block(k).unwrap(), b.block(k).unwrap());
            assert!((ba - bb).abs().max() <= 0.01 * ba.abs().max());
        }
    }

    #[test]
    fn blowup_flag_for_strong_amplification() {
        let w = Matrix::from_row_slice(2, 2, &[0.0, 5000.0, 0.0, 0.0]);
        let r = DenseReservoir::from_matrix(w, 0.0, Activation::Identity).unwrap();
        let est = estimate_response(&r, &ResponseConfig { k_max: 2, epsilon: 1e-3, trials: 1, burn_in: 0, seed: 0 })
            .unwrap();
        assert!(est.nonlinear_warning);
        assert!((est.block(2).unwrap()[(0, 1)] - 5000.0).abs() < 1e-6);
    }

    #[test]
    fn artifact_round_trip() {
        let r = linear(4, 0.1, 9);
        let w = r.internal_matrix().unwrap().clone();
        let f = analytic_fluctuations(&w, 0.1).unwrap();
        let k = analytic_response(&w, 3).unwrap();
        let meta = ProbeMetadata {
            model: "linear".into(),
            params_hash: "x".into(),
            seeds: vec![1],
            epsilon: 0.0,
            trials: 0,
            analytic: true,
            sample_count: None,
            stationary: true,
            nonlinear_warning: false,
        };
        let a = ProbeArtifact::new(&f, &k, meta).unwrap();
        let text = a.to_json().unwrap();
        let back = ProbeArtifact::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert!((back.fluctuations().unwrap().sigma_ref - &f.sigma_ref).norm() == 0.0);
        assert_eq!(back.kernel().unwrap().blocks, k.blocks);
        assert!(text.contains("\"sample_count\": null"));
    }
}
