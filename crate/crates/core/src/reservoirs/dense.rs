use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_drive, Reservoir};
use crate::error::{Error, Result};
use crate::numerics::{spectral_radius, Matrix, Vector};
use crate::rng::{stream, stream_rng, StreamRng};

const MAX_MATRIX_ATTEMPTS: u64 = 8;

/// Parameters shared by the linear reservoir and the echo-state network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseParams {
    pub n: usize,
    pub spectral_radius: f64,
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DenseParams {
    fn default() -> Self {
        Self { n: 100, spectral_radius: 0.9, density: 0.1, noise_sigma: 0.05, seed: 1 }
    }
}

/// Sparse Gaussian matrix rescaled to the requested spectral radius.
pub fn make_random_internal_matrix(n: usize, target: f64, density: f64, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::invalid("reservoir size must be positive"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("spectral radius target {target} outside (0, 1)")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("density {density} outside (0, 1]")));
    }
    for attempt in 0..MAX_MATRIX_ATTEMPTS {
        let mut rng = stream_rng(seed, stream::INIT, attempt);
        let w = Matrix::from_fn(n, n, |_, _| {
            let keep = rng.random::<f64>() < density;
            let v: f64 = rng.sample(StandardNormal);
            if keep { v } else { 0.0 }
        });
        let radius = spectral_radius(&w)?;
        // Nilpotent draws cannot be rescaled; the Schur route reports rounding
        // noise as their radius, which the Gelfand check below exposes.
        if radius > 1e-12 * w.norm() && gelfand_consistent(&w, radius) {
            return Ok(w * (target / radius));
        }
    }
    Err(Error::invalid(format!(
        "no usable random matrix after {MAX_MATRIX_ATTEMPTS} draws (n={n}, density={density})"
    )))
}

/// `‖(W/ρ)^m‖^{1/m} ≥ 1` whenever `ρ` is the true spectral radius; a much
/// smaller value means `ρ` came from rounding noise.
fn gelfand_consistent(w: &Matrix, radius: f64) -> bool {
    let mut p = w / radius;
    let mut m = 1usize;
    while m < w.nrows().max(64) {
        p = &p * &p;
        m *= 2;
    }
    p.norm().powf(1.0 / m as f64) > 0.99
}

fn fill_noise(out: &mut Vector, sigma: f64, rng: &mut StreamRng) {
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = sigma * z;
    }
}

/// `x' = W x + drive + σ η`.
pub fn linear_step(state: &Vector, w: &Matrix, drive: &[f64], sigma: f64, rng: &mut StreamRng) -> Result<Vector> {
    dense_step(state, w, drive, sigma, rng, Activation::Identity)
}

/// `x' = tanh(W x + drive + σ η)`.
pub fn esn_step(state: &Vector, w: &Matrix, drive: &[f64], sigma: f64, rng: &mut StreamRng) -> Result<Vector> {
    dense_step(state, w, drive, sigma, rng, Activation::Tanh)
}

fn dense_step(
    state: &Vector,
    w: &Matrix,
    drive: &[f64],
    sigma: f64,
    rng: &mut StreamRng,
    act: Activation,
) -> Result<Vector> {
    let n = state.len();
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::dim(format!("W is {}x{}, state has {n} entries", w.nrows(), w.ncols())));
    }
    check_drive(drive, n)?;
    let mut noise = Vector::zeros(n);
    fill_noise(&mut noise, sigma, rng);
    let mut next = w * state + Vector::from_column_slice(drive) + noise;
    act.apply(&mut next);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Vector) {
        if self == Activation::Tanh {
            x.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
}

/// Fully observed dense reservoir; injection support is every coordinate.
#[derive(Debug, Clone)]
pub struct DenseReservoir {
    w: Matrix,
    sigma: f64,
    activation: Activation,
    state: Vector,
    noise: Vector,
    rng: StreamRng,
}

impl DenseReservoir {
    pub fn new(params: &DenseParams, activation: Activation) -> Result<Self> {
        if !params.noise_sigma.is_finite() || params.noise_sigma < 0.0 {
            return Err(Error::config(format!("noise_sigma must be finite and >= 0, got {}", params.noise_sigma)));
        }
        let w = make_random_internal_matrix(params.n, params.spectral_radius, params.density, params.seed)?;
        Self::from_matrix(w, params.noise_sigma, activation)
    }

    pub fn from_matrix(w: Matrix, sigma: f64, activation: Activation) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::dim("internal matrix must be square and non-empty"));
        }
        crate::numerics::ensure_finite(&w, "internal matrix")?;
        let n = w.nrows();
        Ok(Self {
            w,
            sigma,
            activation,
            state: Vector::zeros(n),
            noise: Vector::zeros(n),
            rng: stream_rng(0, stream::DYNAMICS, 0),
        })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn state(&self) -> &Vector {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state.len() {
            return Err(Error::dim("state length mismatch"));
        }
        self.state.copy_from_slice(state);
        Ok(())
    }
}

impl Reservoir for DenseReservoir {
    fn obs_dim(&self) -> usize {
        self.state.len()
    }

    fn n_in(&self) -> usize {
        self.state.len()
    }

    fn reset(&mut self, seed: u64) {
        self.state.fill(0.0);
        self.rng = stream_rng(seed, stream::DYNAMICS, 0);
    }

    fn step(&mut self, drive: &[f64]) -> Result<()> {
        check_drive(drive, self.state.len())?;
        fill_noise(&mut self.noise, self.sigma, &mut self.rng);
        // noise ← W x + noise, then add the drive in place.
        self.noise.gemv(1.0, &self.w, &self.state, 1.0);
        for (x, d) in self.noise.iter_mut().zip(drive) {
            *x += d;
        }
        self.activation.apply(&mut self.noise);
        std::mem::swap(&mut self.state, &mut self.noise);
        Ok(())
    }

    fn observe_into(&self, out: &mut [f64]) {
        out.copy_from_slice(self.state.as_slice());
    }

    fn model_name(&self) -> &'static str {
        match self.activation {
            Activation::Identity => "linear",
            Activation::Tanh => "esn",
        }
    }

    fn internal_matrix(&self) -> Option<&Matrix> {
        Some(&self.w)
    }

    fn noise_sigma(&self) -> Option<f64> {
        Some(self.sigma)
    }
}
