//! Reservoir models behind one simulation contract.
//!
//! A reservoir is reset with a seed, advanced one input symbol at a time with
//! an injection vector (the encoded input `G u_t` expressed on the model's
//! input support) and read out through an observation vector. Continuous
//! models subcycle internally; delays are always counted in symbols.

mod dense;
mod lif;
mod spinwave;

pub use dense::{esn_step, linear_step, make_random_internal_matrix, DenseParams, DenseReservoir, Activation};
pub use lif::{LifParams, LifSnn};
pub use spinwave::{SpinWaveParams, SpinWaveReservoir};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Matrix;

pub trait Reservoir: Clone + Send + Sync {
    /// Dimension of the observation vector presented to the readout.
    fn obs_dim(&self) -> usize;

    /// Number of injection coordinates (the input support).
    fn n_in(&self) -> usize;

    /// Restore the initial state and reseed the dynamics-noise stream.
    fn reset(&mut self, seed: u64);

    /// Advance one input symbol. `drive` has length [`Reservoir::n_in`].
    fn step(&mut self, drive: &[f64]) -> Result<()>;

    /// Write the current observation into `out` (length [`Reservoir::obs_dim`]).
    fn observe_into(&self, out: &mut [f64]);

    fn observe(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.obs_dim()];
        self.observe_into(&mut out);
        out
    }

    fn model_name(&self) -> &'static str;

    /// Internal weight matrix when the model is a dense linear/tanh network.
    fn internal_matrix(&self) -> Option<&Matrix> {
        None
    }

    /// Per-step intrinsic noise standard deviation for dense models.
    fn noise_sigma(&self) -> Option<f64> {
        None
    }
}

/// Declarative model description, as read from an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear(DenseParams),
    Esn(DenseParams),
    Spinwave(SpinWaveParams),
    Snn(LifParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear(_) => "linear",
            ModelSpec::Esn(_) => "esn",
            ModelSpec::Spinwave(_) => "spinwave",
            ModelSpec::Snn(_) => "snn",
        }
    }

    pub fn build(&self) -> Result<AnyReservoir> {
        Ok(match self {
            ModelSpec::Linear(p) => AnyReservoir::Dense(DenseReservoir::new(p, Activation::Identity)?),
            ModelSpec::Esn(p) => AnyReservoir::Dense(DenseReservoir::new(p, Activation::Tanh)?),
            ModelSpec::Spinwave(p) => AnyReservoir::SpinWave(SpinWaveReservoir::new(p.clone())?),
            ModelSpec::Snn(p) => AnyReservoir::Snn(LifSnn::new(p.clone())?),
        })
    }
}

/// Closed set of the models a config can name.
#[derive(Debug, Clone)]
pub enum AnyReservoir {
    Dense(DenseReservoir),
    SpinWave(SpinWaveReservoir),
    Snn(LifSnn),
}

macro_rules! dispatch {
    ($self:expr, $r:ident => $body:expr) => {
        match $self {
            AnyReservoir::Dense($r) => $body,
            AnyReservoir::SpinWave($r) => $body,
            AnyReservoir::Snn($r) => $body,
        }
    };
}

impl Reservoir for AnyReservoir {
    fn obs_dim(&self) -> usize {
        dispatch!(self, r => r.obs_dim())
    }
    fn n_in(&self) -> usize {
        dispatch!(self, r => r.n_in())
    }
    fn reset(&mut self, seed: u64) {
        dispatch!(self, r => r.reset(seed))
    }
    fn step(&mut self, drive: &[f64]) -> Result<()> {
        dispatch!(self, r => r.step(drive))
    }
    fn observe_into(&self, out: &mut [f64]) {
        dispatch!(self, r => r.observe_into(out))
    }
    fn model_name(&self) -> &'static str {
        dispatch!(self, r => r.model_name())
    }
    fn internal_matrix(&self) -> Option<&Matrix> {
        dispatch!(self, r => r.internal_matrix())
    }
    fn noise_sigma(&self) -> Option<f64> {
        dispatch!(self, r => r.noise_sigma())
    }
}

pub(crate) fn check_drive(drive: &[f64], n_in: usize) -> Result<()> {
    if drive.len() != n_in {
        return Err(crate::error::Error::dim(format!(
            "drive has length {}, model expects {n_in}",
            drive.len()
        )));
    }
    Ok(())
}
