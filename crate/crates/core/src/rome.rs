//! Task-weighted memory operator and power-constrained optimal encoders.
//!
//! With response blocks `R_S(k)` and zero-input fluctuations `Σ_ref`, the
//! memory objective of a whitened encoder `G̃` is `Tr(G̃ᵀ M_w G̃)` with
//! `M_w = Σ_k w(k) R_S(k)ᵀ Σ_ref⁻¹ R_S(k)`. Under `‖G̃‖_F² = P` the maximizer
//! puts the power on the leading eigenvectors of `M_w`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::artifact::{from_row_major, matrix_hash, row_major};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, SymEig};
use crate::probe::{FluctuationEstimate, ResponseKernel};
use crate::rng::{stream, stream_rng};

/// Relative eigen-gap below which the top eigenvalue counts as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-8;
/// Eigenvalues below this fraction of `λ₁` count as outside the range of `M_w`.
pub const RANK_TOL: f64 = 1e-12;
/// Relative tolerance on the encoder power constraint.
pub const POWER_TOL: f64 = 1e-10;

/// Nonnegative weights over discrete delays (`k ≥ 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, f64>", into = "BTreeMap<usize, f64>")]
pub struct TaskWeights(BTreeMap<usize, f64>);

impl TryFrom<BTreeMap<usize, f64>> for TaskWeights {
    type Error = Error;

    fn try_from(map: BTreeMap<usize, f64>) -> Result<Self> {
        if map.contains_key(&0) {
            return Err(Error::invalid("task delays start at 1"));
        }
        if map.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("task weights must be finite and nonnegative"));
        }
        if !map.values().any(|&w| w > 0.0) {
            return Err(Error::invalid("task weights need at least one positive entry"));
        }
        Ok(Self(map))
    }
}

impl From<TaskWeights> for BTreeMap<usize, f64> {
    fn from(w: TaskWeights) -> Self {
        w.0
    }
}

impl TaskWeights {
    pub fn new(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, w) in pairs {
            *map.entry(k).or_insert(0.0) += w;
        }
        Self::try_from(map)
    }

    /// The single-delay task `w = δ_{k}`.
    pub fn single(k: usize) -> Result<Self> {
        Self::new([(k, 1.0)])
    }

    /// Unit weight on each listed delay.
    pub fn uniform(delays: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(delays.into_iter().map(|k| (k, 1.0)))
    }

    pub fn max_delay(&self) -> usize {
        self.0.keys().next_back().copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&k, &w)| (k, w))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::try_from(self.0.iter().map(|(&k, &w)| (k, c * w)).collect::<BTreeMap<_, _>>())
    }
}

#[derive(Debug, Clone)]
pub struct MemoryOperator {
    pub matrix: Matrix,
    pub eigen: SymEig,
    pub weights: TaskWeights,
    /// Top eigenvalue is (numerically) repeated; the returned direction is one
    /// deterministic choice among equally optimal ones.
    pub degenerate_top: bool,
}

impl MemoryOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen.values[0]
    }

    pub fn hash(&self) -> String {
        matrix_hash(&self.matrix)
    }
}

pub fn check_weights_fit(kernel: &ResponseKernel, weights: &TaskWeights) -> Result<()> {
    if weights.max_delay() > kernel.k_max() {
        return Err(Error::invalid(format!(
            "task delay {} exceeds probed k_max {}",
            weights.max_delay(),
            kernel.k_max()
        )));
    }
    Ok(())
}

/// `M_w = Σ_k w(k) R_S(k)ᵀ (Σ_ref + εI)⁻¹ R_S(k)`, symmetrized and eigendecomposed.
pub fn build_memory_operator(
    kernel: &ResponseKernel,
    fluct: &FluctuationEstimate,
    weights: &TaskWeights,
    eps_rel: f64,
) -> Result<MemoryOperator> {
    if kernel.obs_dim() != fluct.obs_dim() {
        return Err(Error::dim(format!(
            "response blocks have {} rows, fluctuation estimate has dimension {}",
            kernel.obs_dim(),
            fluct.obs_dim()
        )));
    }
    check_weights_fit(kernel, weights)?;
    let metric = numerics::regularized_inverse(&fluct.sigma_ref, eps_rel)?;
    let n_in = kernel.n_in();
    let mut m = Matrix::zeros(n_in, n_in);
    for (k, w) in weights.iter() {
        if w == 0.0 {
            continue;
        }
        let r = kernel.block(k)?;
        m += r.transpose() * (&metric * r) * w;
    }
    let m = numerics::symmetrize(&m);
    let eigen = numerics::sym_eig(&m)?;
    let degenerate_top = eigen.dim() > 1 && eigen.values[0] - eigen.values[1] < DEGENERACY_GAP * eigen.values[0].abs();
    if degenerate_top {
        log::warn!("top eigenvalue of the memory operator is degenerate; returning the sign-fixed eigenvector");
    }
    Ok(MemoryOperator { matrix: m, eigen, weights: weights.clone(), degenerate_top })
}

/// Input matrix `G` (`n_in × m`) together with its input-signal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub g: Matrix,
    pub power: f64,
    pub active_directions: usize,
    pub power_split: Vec<f64>,
    /// `Σ_sig`, the covariance of the `m` input channels.
    pub input_cov: Matrix,
}

impl Encoder {
    pub fn n_in(&self) -> usize {
        self.g.nrows()
    }

    pub fn channels(&self) -> usize {
        self.g.ncols()
    }

    /// `G̃ = G Σ_sig^{1/2}`.
    pub fn whitened(&self) -> Result<Matrix> {
        Ok(&self.g * numerics::sym_sqrt(&self.input_cov)?)
    }

    /// `‖G̃‖_F²`.
    pub fn whitened_power(&self) -> Result<f64> {
        Ok(self.whitened()?.norm_squared())
    }

    /// Drive vector `G u` for one input sample.
    pub fn drive(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (c, &uc) in u.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(self.g.column(c).iter()) {
                *o += g * uc;
            }
        }
    }

    /// Same direction, whitened power rescaled to `power`.
    pub fn with_power(&self, power: f64) -> Result<Encoder> {
        if !(power > 0.0) {
            return Err(Error::invalid(format!("power must be positive, got {power}")));
        }
        let current = self.whitened_power()?;
        if current <= 0.0 {
            return Err(Error::ZeroEncoder);
        }
        let s = (power / current).sqrt();
        Ok(Encoder {
            g: &self.g * s,
            power,
            active_directions: self.active_directions,
            power_split: self.power_split.iter().map(|p| p * power / self.power).collect(),
            input_cov: self.input_cov.clone(),
        })
    }

    pub fn zero(n_in: usize, input_cov: Matrix) -> Encoder {
        let m = input_cov.nrows();
        Encoder { g: Matrix::zeros(n_in, m), power: 0.0, active_directions: 0, power_split: vec![], input_cov }
    }
}

/// Covariance of a single white input channel with variance `var`.
pub fn scalar_input_cov(var: f64) -> Matrix {
    Matrix::from_element(1, 1, var)
}

fn check_input_cov(input_cov: &Matrix) -> Result<()> {
    if input_cov.nrows() != input_cov.ncols() || input_cov.nrows() == 0 {
        return Err(Error::dim("input covariance must be square and non-empty"));
    }
    numerics::ensure_finite(input_cov, "input covariance")
}

#[derive(Debug, Clone)]
pub struct OptimalEncoder {
    pub encoder: Encoder,
    /// `J★ = Σ_i p_i λ_i`.
    pub predicted_objective: f64,
    pub degenerate_top: bool,
    /// Some requested direction has `λ_i ≤ 1e-12 λ₁`.
    pub rank_deficient: bool,
}

/// `G̃ = Σ_{i≤r} √p_i v_i e_iᵀ`, mapped back to `G = G̃ Σ_sig^{-1/2}`.
pub fn optimal_encoder(
    op: &MemoryOperator,
    power: f64,
    r: usize,
    power_split: Option<&[f64]>,
    input_cov: &Matrix,
) -> Result<OptimalEncoder> {
    check_input_cov(input_cov)?;
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::invalid(format!("power must be positive, got {power}")));
    }
    let (n_in, m) = (op.dim(), input_cov.nrows());
    if r == 0 || r > n_in.min(m) {
        return Err(Error::invalid(format!("r = {r} must lie in 1..={}", n_in.min(m))));
    }
    let split: Vec<f64> = match power_split {
        Some(p) => {
            if p.len() != r || p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::invalid("power split must have r nonnegative entries"));
            }
            let total: f64 = p.iter().sum();
            if (total - power).abs() > POWER_TOL * power {
                return Err(Error::invalid(format!("power split sums to {total}, expected {power}")));
            }
            p.to_vec()
        }
        None => vec![power / r as f64; r],
    };
    let mut gt = Matrix::zeros(n_in, m);
    let mut objective = 0.0;
    let lambda1 = op.lambda_max();
    let mut rank_deficient = false;
    for (i, &p) in split.iter().enumerate() {
        gt.set_column(i, &(op.eigen.vectors.column(i) * p.sqrt()));
        objective += p * op.eigen.values[i];
        if op.eigen.values[i] <= RANK_TOL * lambda1 {
            rank_deficient = true;
        }
    }
    if rank_deficient {
        log::warn!("requested {r} directions but the memory operator has lower numerical rank");
    }
    let g = gt * numerics::sym_inv_sqrt(input_cov)?;
    Ok(OptimalEncoder {
        encoder: Encoder { g, power, active_directions: r, power_split: split, input_cov: input_cov.clone() },
        predicted_objective: objective,
        degenerate_top: op.degenerate_top,
        rank_deficient,
    })
}

/// Gaussian encoder rescaled to whitened power `power`.
pub fn random_encoder(power: f64, n_in: usize, input_cov: &Matrix, seed: u64) -> Result<Encoder> {
    check_input_cov(input_cov)?;
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::invalid(format!("power must be positive, got {power}")));
    }
    let m = input_cov.nrows();
    let mut rng = stream_rng(seed, stream::ENCODER, 0);
    let g = Matrix::from_fn(n_in, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let enc = Encoder {
        g,
        power: 1.0,
        active_directions: n_in.min(m),
        power_split: vec![1.0 / m as f64; m],
        input_cov: input_cov.clone(),
    };
    let mut enc = enc.with_power(power)?;
    let gt = enc.whitened()?;
    enc.power_split = (0..m).map(|c| gt.column(c).norm_squared()).collect();
    Ok(enc)
}

/// `Tr(G̃ᵀ M_w G̃)`.
pub fn predicted_objective(op: &MemoryOperator, enc: &Encoder) -> Result<f64> {
    if enc.n_in() != op.dim() {
        return Err(Error::dim(format!("encoder has {} rows, operator dimension {}", enc.n_in(), op.dim())));
    }
    let gt = enc.whitened()?;
    Ok((gt.transpose() * &op.matrix * &gt).trace().max(0.0))
}

/// `|⟨vec G_a, vec G_b⟩| / (‖G_a‖_F ‖G_b‖_F)`.
pub fn alignment(a: &Encoder, b: &Encoder) -> Result<f64> {
    matrix_alignment(&a.g, &b.g)
}

pub fn matrix_alignment(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("encoder shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroEncoder);
    }
    Ok((a.dot(b).abs() / (na * nb)).min(1.0))
}

/// Serialized encoder; `g` is row-major `n_in × m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderFile {
    pub n_in: usize,
    pub m: usize,
    #[serde(rename = "P")]
    pub power: f64,
    pub r: usize,
    pub power_split: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    pub input_cov: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub kind: String,
    pub operator_hash: Option<String>,
    pub weights: Option<TaskWeights>,
    pub probe_hash: Option<String>,
    pub predicted_objective: Option<f64>,
    pub eigenvalues: Option<Vec<f64>>,
}

impl EncoderFile {
    pub fn new(enc: &Encoder, provenance: Provenance) -> Self {
        Self {
            n_in: enc.n_in(),
            m: enc.channels(),
            power: enc.power,
            r: enc.active_directions,
            power_split: enc.power_split.clone(),
            g: row_major(&enc.g),
            input_cov: row_major(&enc.input_cov),
            provenance,
        }
    }

    pub fn encoder(&self) -> Result<Encoder> {
        let enc = Encoder {
            g: from_row_major(self.n_in, self.m, &self.g)?,
            power: self.power,
            active_directions: self.r,
            power_split: self.power_split.clone(),
            input_cov: from_row_major(self.m, self.m, &self.input_cov)?,
        };
        let p = enc.whitened_power()?;
        if (p - self.power).abs() > 1e-8 * self.power.max(1e-300) {
            return Err(Error::invalid(format!("encoder file power {} disagrees with G ({p})", self.power)));
        }
        Ok(enc)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::artifact::to_sorted_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
