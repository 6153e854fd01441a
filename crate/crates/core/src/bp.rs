//! Gradient-based encoder optimization.
//!
//! Projected gradient ascent on `J(G̃) = Tr(G̃ᵀ M_w G̃)` over the sphere
//! `‖G̃‖_F² = P`. The iteration is power iteration on `I + 2ηM_w`, so it
//! converges to the same top eigenvector that [`crate::rome`] returns in
//! closed form. An empirical variant ascends the simulated memory function
//! through finite differences.

use serde::Serialize;

use crate::artifact::matrix_hash;
use crate::error::{Error, Result};
use crate::eval::{self, DrivenRun};
use crate::numerics::{self, Matrix};
use crate::reservoirs::Reservoir;
use crate::rome::{self, Encoder, MemoryOperator};

/// `∂J/∂G = 2 M_w G Σ_sig`.
pub fn grad_objective_analytic(op: &MemoryOperator, enc: &Encoder) -> Result<Matrix> {
    if enc.n_in() != op.dim() {
        return Err(Error::dim(format!("encoder has {} rows, operator dimension {}", enc.n_in(), op.dim())));
    }
    Ok(&op.matrix * &enc.g * &enc.input_cov * 2.0)
}

/// Central differences of `objective` with respect to each entry of `G`.
pub fn finite_difference_gradient<F>(mut objective: F, enc: &Encoder, h: f64) -> Result<Matrix>
where
    F: FnMut(&Encoder) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    let mut probe = enc.clone();
    let mut grad = Matrix::zeros(enc.g.nrows(), enc.g.ncols());
    for j in 0..enc.g.ncols() {
        for i in 0..enc.g.nrows() {
            let g0 = enc.g[(i, j)];
            probe.g[(i, j)] = g0 + h;
            let up = objective(&probe)?;
            probe.g[(i, j)] = g0 - h;
            let down = objective(&probe)?;
            probe.g[(i, j)] = g0;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    /// Step size; `None` means `0.1 / λ₁`.
    pub eta: Option<f64>,
    pub steps: usize,
    pub eval_every: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { eta: None, steps: 500, eval_every: 10 }
    }
}

const STALL_WINDOW: usize = 50;
const STALL_TOL: f64 = 1e-8;
const MAX_DECREASES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscentRecord {
    pub step: usize,
    pub alignment: f64,
    pub objective: f64,
    pub r2: Option<f64>,
    pub encoder_hash: String,
}

#[derive(Debug, Clone)]
pub struct AscentTrace {
    pub records: Vec<AscentRecord>,
    pub eta: f64,
    pub final_encoder: Encoder,
    pub converged_early: bool,
}

impl AscentTrace {
    pub fn last(&self) -> &AscentRecord {
        self.records.last().expect("ascent records at least one step")
    }
}

/// Ascent with a caller-supplied objective and whitened gradient `∂J/∂G̃`.
///
/// Each step sets `G̃ ← √P (G̃ + η∇) / ‖G̃ + η∇‖_F` and records the step
/// after the update.
pub fn ascend<F, H>(
    enc0: &Encoder,
    power: f64,
    eta: f64,
    cfg: &AscentConfig,
    reference: &Encoder,
    mut objective_and_grad: F,
    mut eval_hook: Option<H>,
) -> Result<AscentTrace>
where
    F: FnMut(&Matrix) -> Result<(f64, Matrix)>,
    H: FnMut(&Encoder) -> Result<f64>,
{
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("step size must be positive, got {eta}")));
    }
    if cfg.steps == 0 || cfg.eval_every == 0 {
        return Err(Error::invalid("steps and eval_every must be positive"));
    }
    let inv_sqrt_cov = numerics::sym_inv_sqrt(&enc0.input_cov)?;
    let mut gt = enc0.whitened()?;
    let norm = gt.norm();
    if norm == 0.0 {
        return Err(Error::ZeroEncoder);
    }
    gt *= power.sqrt() / norm;
    let to_encoder = |gt: &Matrix| Encoder {
        g: gt * &inv_sqrt_cov,
        power,
        active_directions: enc0.active_directions,
        power_split: vec![power],
        input_cov: enc0.input_cov.clone(),
    };

    let mut records: Vec<AscentRecord> = Vec::with_capacity(cfg.steps);
    let mut history = vec![rome::alignment(&to_encoder(&gt), reference)?];
    let (mut prev_obj, mut grad) = objective_and_grad(&gt)?;
    let mut decreases = 0;
    let mut converged_early = false;
    for step in 1..=cfg.steps {
        let next = &gt + &grad * eta;
        let n = next.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NumericalBlowup { step });
        }
        gt = next * (power.sqrt() / n);
        let (obj, g) = objective_and_grad(&gt)?;
        grad = g;
        if obj < prev_obj - 1e-12 * prev_obj.abs() {
            decreases += 1;
            if decreases >= MAX_DECREASES {
                return Err(Error::StepSize(step));
            }
        } else {
            decreases = 0;
        }
        prev_obj = obj;
        let enc = to_encoder(&gt);
        let alignment = rome::alignment(&enc, reference)?;
        history.push(alignment);
        let stalled = step >= STALL_WINDOW && (alignment - history[step - STALL_WINDOW]).abs() < STALL_TOL;
        let last = stalled || step == cfg.steps;
        let r2 = match eval_hook.as_mut() {
            Some(hook) if step % cfg.eval_every == 0 || last => Some(hook(&enc)?),
            _ => None,
        };
        records.push(AscentRecord { step, alignment, objective: obj, r2, encoder_hash: matrix_hash(&enc.g) });
        if stalled {
            converged_early = step < cfg.steps;
            break;
        }
    }
    let final_encoder = to_encoder(&gt);
    Ok(AscentTrace { records, eta, final_encoder, converged_early })
}

/// Projected ascent on the analytic objective `Tr(G̃ᵀ M_w G̃)`.
pub fn projected_gradient_ascent<H>(
    op: &MemoryOperator,
    enc0: &Encoder,
    power: f64,
    cfg: &AscentConfig,
    reference: &Encoder,
    eval_hook: Option<H>,
) -> Result<AscentTrace>
where
    H: FnMut(&Encoder) -> Result<f64>,
{
    if enc0.n_in() != op.dim() {
        return Err(Error::dim(format!("encoder has {} rows, operator dimension {}", enc0.n_in(), op.dim())));
    }
    let lambda1 = op.lambda_max();
    let eta = match cfg.eta {
        Some(e) => e,
        None if lambda1 > 0.0 => 0.1 / lambda1,
        None => return Err(Error::invalid("memory operator is zero; no ascent direction")),
    };
    let m = &op.matrix;
    ascend(
        enc0,
        power,
        eta,
        cfg,
        reference,
        |gt: &Matrix| {
            let mg = m * gt;
            Ok(((gt.transpose() * &mg).trace(), mg * 2.0))
        },
        eval_hook,
    )
}

/// Simulated single-delay memory function of an encoder, with common random
/// numbers: the input series and dynamics seed are fixed.
pub struct EmpiricalMemoryObjective<R: Reservoir> {
    pub reservoir: R,
    pub delay: usize,
    pub input: Vec<f64>,
    pub washout: usize,
    pub seed: u64,
}

impl<R: Reservoir> EmpiricalMemoryObjective<R> {
    pub fn run(&self, enc: &Encoder) -> Result<DrivenRun> {
        eval::drive_scalar(&self.reservoir, enc, &self.input, self.washout, self.seed)
    }

    pub fn value(&self, enc: &Encoder) -> Result<f64> {
        eval::memory_function_empirical(&self.run(enc)?, self.delay)
    }
}

/// Ascent on the simulated memory function, with the gradient taken by
/// central differences of step `h`. Cost is `2·n_in·m` simulations per step,
/// so this is meant for small systems.
pub fn empirical_gradient_ascent<R: Reservoir>(
    objective: &EmpiricalMemoryObjective<R>,
    enc0: &Encoder,
    power: f64,
    eta: f64,
    h: f64,
    cfg: &AscentConfig,
    reference: &Encoder,
) -> Result<AscentTrace> {
    let inv_sqrt_cov = numerics::sym_inv_sqrt(&enc0.input_cov)?;
    let template = enc0.clone();
    ascend(
        enc0,
        power,
        eta,
        cfg,
        reference,
        |gt: &Matrix| {
            let enc = Encoder { g: gt * &inv_sqrt_cov, ..template.clone() };
            let value = objective.value(&enc)?;
            let grad_g = finite_difference_gradient(|e| objective.value(e), &enc, h)?;
            // ∂J/∂G̃ = ∂J/∂G · Σ_sig^{-1/2}
            Ok((value, grad_g * &inv_sqrt_cov))
        },
        None::<fn(&Encoder) -> Result<f64>>,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Vector;
    use crate::rome::{optimal_encoder, predicted_objective, random_encoder, scalar_input_cov, TaskWeights};

    fn op_from(m: Matrix) -> MemoryOperator {
        let eigen = numerics::sym_eig(&m).unwrap();
        let degenerate_top = eigen.values[0] - eigen.values[1] < 1e-8 * eigen.values[0];
        MemoryOperator { matrix: m, eigen, weights: TaskWeights::single(1).unwrap(), degenerate_top }
    }

    fn random_psd(n: usize, seed: u64) -> MemoryOperator {
        let e = random_encoder(1.0, n * n, &scalar_input_cov(1.0), seed).unwrap();
        let a = Matrix::from_column_slice(n, n, e.g.as_slice());
        op_from(&a * a.transpose())
    }

    fn column(v: &[f64]) -> Encoder {
        Encoder {
            g: Matrix::from_column_slice(v.len(), 1, v),
            power: v.iter().map(|x| x * x).sum(),
            active_directions: 1,
            power_split: vec![],
            input_cov: scalar_input_cov(1.0),
        }
    }

    #[test]
    fn gradient_examples() {
        let op = op_from(Matrix::from_diagonal(&Vector::from_column_slice(&[2.0, 1.0])));
        let g = grad_objective_analytic(&op, &column(&[0.0, 1.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 2.0]);
        let top = optimal_encoder(&op, 3.0, 1, None, &scalar_input_cov(1.0)).unwrap().encoder;
        let gt = grad_objective_analytic(&op, &top).unwrap();
        assert!((rome::matrix_alignment(&gt, &top.g).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let op = random_psd(6, seed);
            let enc = random_encoder(1.3, 6, &scalar_input_cov(0.4), seed + 100).unwrap();
            let a = grad_objective_analytic(&op, &enc).unwrap();
            let fd = finite_difference_gradient(|e| predicted_objective(&op, e), &enc, 1e-5).unwrap();
            assert!((&a - &fd).norm() <= 1e-6 * a.norm(), "seed {seed}");
        }
    }

    #[test]
    fn finite_difference_examples() {
        let enc = column(&[1.0, -2.0]);
        let c = finite_difference_gradient(|_| Ok(4.0), &enc, 1e-3).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        let q = finite_difference_gradient(|e| Ok(e.g.norm_squared()), &enc, 1e-3).unwrap();
        assert!((q[(0, 0)] - 2.0).abs() < 1e-9 && (q[(1, 0)] + 4.0).abs() < 1e-9);
        assert!(finite_difference_gradient(|_| Ok(0.0), &enc, 0.0).is_err());
    }

    #[test]
    fn fixed_point_at_rome_direction() {
        let op = random_psd(5, 1);
        let cov = scalar_input_cov(1.0 / 3.0);
        let star = optimal_encoder(&op, 0.5, 1, None, &cov).unwrap();
        let trace = projected_gradient_ascent(
            &op,
            &star.encoder,
            0.5,
            &AscentConfig { steps: 30, ..AscentConfig::default() },
            &star.encoder,
            None::<fn(&Encoder) -> Result<f64>>,
        )
        .unwrap();
        for r in &trace.records {
            assert!((r.alignment - 1.0).abs() < 1e-12);
            assert!((r.objective - star.predicted_objective).abs() < 1e-10 * star.predicted_objective);
        }
    }

    #[test]
    fn converges_from_random_starts_monotonically() {
        let op = random_psd(8, 2);
        let cov = scalar_input_cov(1.0 / 3.0);
        let star = optimal_encoder(&op, 1.0, 1, None, &cov).unwrap().encoder;
        for seed in 0..10 {
            let start = random_encoder(1.0, 8, &cov, seed).unwrap();
            let cfg = AscentConfig { eta: Some(0.5 / op.lambda_max()), steps: 2000, eval_every: 10 };
            let trace =
                projected_gradient_ascent(&op, &start, 1.0, &cfg, &star, None::<fn(&Encoder) -> Result<f64>>).unwrap();
            assert!(trace.last().alignment >= 0.99, "seed {seed}: {}", trace.last().alignment);
            assert!(trace.records.len() <= cfg.steps);
            for w in trace.records.windows(2) {
                assert!(w[1].objective >= w[0].objective - 1e-12 * w[0].objective);
            }
            assert!((trace.final_encoder.whitened_power().unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_invariance() {
        let op = random_psd(4, 3);
        let cov = scalar_input_cov(1.0);
        let star = optimal_encoder(&op, 1.0, 1, None, &cov).unwrap().encoder;
        let start = random_encoder(1.0, 4, &cov, 9).unwrap();
        let neg = Encoder { g: -start.g.clone(), ..start.clone() };
        let cfg = AscentConfig { steps: 100, ..AscentConfig::default() };
        let none = None::<fn(&Encoder) -> Result<f64>>;
        let a = projected_gradient_ascent(&op, &start, 1.0, &cfg, &star, none).unwrap();
        let b = projected_gradient_ascent(&op, &neg, 1.0, &cfg, &star, none).unwrap();
        let aa: Vec<f64> = a.records.iter().map(|r| r.alignment).collect();
        let bb: Vec<f64> = b.records.iter().map(|r| r.alignment).collect();
        assert_eq!(aa, bb);
    }

    #[test]
    fn eval_hook_schedule() {
        let op = random_psd(3, 4);
        let cov = scalar_input_cov(1.0);
        let star = optimal_encoder(&op, 1.0, 1, None, &cov).unwrap().encoder;
        let start = random_encoder(1.0, 3, &cov, 1).unwrap();
        let mut calls = 0;
        let cfg = AscentConfig { eta: Some(1e-4), steps: 35, eval_every: 10 };
        let trace = projected_gradient_ascent(
            &op,
            &start,
            1.0,
            &cfg,
            &star,
            Some(|_: &Encoder| {
                calls += 1;
                Ok(0.5)
            }),
        )
        .unwrap();
        let with: Vec<usize> = trace.records.iter().filter(|r| r.r2.is_some()).map(|r| r.step).collect();
        assert_eq!(with, vec![10, 20, 30, 35]);
        assert_eq!(calls, 4);
    }

    #[test]
    fn decreasing_objective_is_a_step_size_error() {
        // A gradient with the wrong sign walks downhill every step.
        let start = column(&[1.0, 1.0]);
        let res = ascend(
            &start,
            1.0,
            0.1,
            &AscentConfig::default(),
            &column(&[1.0, 0.0]),
            |gt: &Matrix| Ok((gt[(0, 0)].powi(2), Matrix::from_column_slice(2, 1, &[-2.0 * gt[(0, 0)], 0.0]))),
            None::<fn(&Encoder) -> Result<f64>>,
        );
        assert!(matches!(res, Err(Error::StepSize(20))));
    }

    #[test]
    fn early_stop_when_aligned() {
        let op = random_psd(4, 6);
        let cov = scalar_input_cov(1.0);
        let star = optimal_encoder(&op, 1.0, 1, None, &cov).unwrap().encoder;
        let trace = projected_gradient_ascent(
            &op,
            &star,
            1.0,
            &AscentConfig::default(),
            &star,
            None::<fn(&Encoder) -> Result<f64>>,
        )
        .unwrap();
        assert_eq!(trace.records.len(), STALL_WINDOW);
        assert!(trace.converged_early);
    }
}
