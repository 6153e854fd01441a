//! Heterogeneous excitatory/inhibitory leaky integrate-and-fire network.
//!
//! Voltages follow `τ_m,i dV_i = (−(V_i − v_rest) + I_syn,i + I_bias + I_in,i) dt + σ √dt η`
//! (forward Euler, currents in mV). Presynaptic spikes kick exponential
//! synaptic traces through a signed weight matrix obeying Dale's law. The
//! observation is the exponentially filtered spike train of the readout
//! neurons, sampled once per input symbol.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_drive, Reservoir};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    pub n: usize,
    pub frac_excitatory: f64,
    /// Membrane time constants are drawn uniformly from this range (ms).
    pub tau_m_range: [f64; 2],
    pub v_rest: f64,
    pub v_reset: f64,
    /// Thresholds are drawn uniformly from this range (mV).
    pub v_th_range: [f64; 2],
    pub t_ref: f64,
    pub tau_syn: f64,
    pub tau_filter: f64,
    pub weight_scale_e: f64,
    pub weight_scale_i: f64,
    pub connection_prob: f64,
    pub noise_current_sigma: f64,
    /// Constant background current setting the spontaneous working point (mV).
    pub bias_current: f64,
    pub input_subset: Vec<usize>,
    pub readout_subset: Vec<usize>,
    pub dt: f64,
    pub substeps_per_symbol: usize,
    pub seed: u64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            n: 200,
            frac_excitatory: 0.8,
            tau_m_range: [10.0, 30.0],
            v_rest: -65.0,
            v_reset: -65.0,
            v_th_range: [-55.0, -50.0],
            t_ref: 2.0,
            tau_syn: 5.0,
            tau_filter: 20.0,
            weight_scale_e: 8.0,
            weight_scale_i: 32.0,
            connection_prob: 0.1,
            noise_current_sigma: 20.0,
            bias_current: 10.0,
            input_subset: (120..160).collect(),
            readout_subset: (0..100).collect(),
            dt: 0.1,
            substeps_per_symbol: 200,
            seed: 1,
        }
    }
}

impl LifParams {
    pub fn n_excitatory(&self) -> usize {
        ((self.n as f64 * self.frac_excitatory).round() as usize).min(self.n)
    }

    fn refractory_steps(&self) -> Result<usize> {
        let ratio = self.t_ref / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config(format!(
                "t_ref = {} is not an integer multiple of dt = {}",
                self.t_ref, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("network needs at least one neuron"));
        }
        if !(self.frac_excitatory > 0.0 && self.frac_excitatory < 1.0) {
            return Err(Error::config(format!("frac_excitatory {} outside (0, 1)", self.frac_excitatory)));
        }
        if !(self.connection_prob > 0.0 && self.connection_prob <= 1.0) {
            return Err(Error::config(format!("connection_prob {} outside (0, 1]", self.connection_prob)));
        }
        for (name, v) in [("dt", self.dt), ("tau_syn", self.tau_syn), ("tau_filter", self.tau_filter)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.tau_m_range[0] > 0.0 && self.tau_m_range[0] <= self.tau_m_range[1]) {
            return Err(Error::config("tau_m_range must be positive and ordered"));
        }
        if self.v_th_range[0] > self.v_th_range[1] || self.v_th_range[0] <= self.v_reset {
            return Err(Error::config("v_th_range must be ordered and above v_reset"));
        }
        if !(self.t_ref >= 0.0) || !(self.noise_current_sigma >= 0.0) {
            return Err(Error::config("t_ref and noise_current_sigma must be nonnegative"));
        }
        if self.substeps_per_symbol == 0 {
            return Err(Error::config("substeps_per_symbol must be positive"));
        }
        self.refractory_steps()?;
        for (name, subset) in [("input_subset", &self.input_subset), ("readout_subset", &self.readout_subset)] {
            if subset.is_empty() {
                return Err(Error::config(format!("{name} must be non-empty")));
            }
            if let Some(&bad) = subset.iter().find(|&&i| i >= self.n) {
                return Err(Error::config(format!("{name} index {bad} out of range for n={}", self.n)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LifSnn {
    params: LifParams,
    /// `weights[(post, pre)]`; column `pre` is contiguous.
    weights: DMatrix<f64>,
    n_exc: usize,
    leak_rate: Vec<f64>,
    noise_gain: Vec<f64>,
    v_th: Vec<f64>,
    refractory_steps: usize,
    syn_decay: f64,
    filter_decay: f64,
    // dynamic state
    v: Vec<f64>,
    syn: Vec<f64>,
    refractory: Vec<usize>,
    filtered: Vec<f64>,
    spiked: Vec<bool>,
    input_current: Vec<f64>,
    rng: StreamRng,
    symbols: usize,
}

impl LifSnn {
    pub fn new(params: LifParams) -> Result<Self> {
        params.validate()?;
        let n = params.n;
        let n_exc = params.n_excitatory();
        let mut rng = stream_rng(params.seed, stream::INIT, 0);
        let uniform = |rng: &mut StreamRng, r: [f64; 2]| r[0] + (r[1] - r[0]) * rng.random::<f64>();
        let tau_m: Vec<f64> = (0..n).map(|_| uniform(&mut rng, params.tau_m_range)).collect();
        let v_th: Vec<f64> = (0..n).map(|_| uniform(&mut rng, params.v_th_range)).collect();
        let mut weights = DMatrix::zeros(n, n);
        for pre in 0..n {
            let (scale, sign) =
                if pre < n_exc { (params.weight_scale_e, 1.0) } else { (params.weight_scale_i, -1.0) };
            for post in 0..n {
                let connect = rng.random::<f64>() < params.connection_prob;
                let magnitude = scale * (0.5 + rng.random::<f64>());
                if connect && post != pre {
                    weights[(post, pre)] = sign * magnitude.abs();
                }
            }
        }
        let leak_rate = tau_m.iter().map(|t| params.dt / t).collect();
        let noise_gain = tau_m.iter().map(|t| params.noise_current_sigma * params.dt.sqrt() / t).collect();
        let mut snn = Self {
            refractory_steps: params.refractory_steps()?,
            syn_decay: (-params.dt / params.tau_syn).exp(),
            filter_decay: (-params.dt / params.tau_filter).exp(),
            weights,
            n_exc,
            leak_rate,
            noise_gain,
            v_th,
            v: vec![params.v_rest; n],
            syn: vec![0.0; n],
            refractory: vec![0; n],
            filtered: vec![0.0; n],
            spiked: vec![false; n],
            input_current: vec![0.0; n],
            rng: stream_rng(params.seed, stream::DYNAMICS, 0),
            symbols: 0,
            params,
        };
        let seed = snn.params.seed;
        snn.reset(seed);
        Ok(snn)
    }

    pub fn params(&self) -> &LifParams {
        &self.params
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn is_excitatory(&self, neuron: usize) -> bool {
        neuron < self.n_exc
    }

    pub fn voltages(&self) -> &[f64] {
        &self.v
    }

    /// Neurons that fired during the most recent substep.
    pub fn spiked(&self) -> &[bool] {
        &self.spiked
    }

    /// Rheobase of the mean threshold, `v_th − v_rest` (mV).
    pub fn rheobase(&self) -> f64 {
        0.5 * (self.params.v_th_range[0] + self.params.v_th_range[1]) - self.params.v_rest
    }

    /// One integration substep; the per-neuron input currents are held in
    /// `input_current`. Returns the number of spikes.
    pub(crate) fn substep(&mut self) -> usize {
        let p = &self.params;
        let n = p.n;
        for s in self.syn.iter_mut() {
            *s *= self.syn_decay;
        }
        for i in 0..n {
            // One draw per neuron per substep, refractory or not, so paired
            // simulations stay on the same noise stream.
            let eta: f64 = self.rng.sample(StandardNormal);
            self.spiked[i] = false;
            if self.refractory[i] > 0 {
                self.refractory[i] -= 1;
                self.v[i] = p.v_reset;
                continue;
            }
            let drive = -(self.v[i] - p.v_rest) + self.syn[i] + p.bias_current + self.input_current[i];
            self.v[i] += self.leak_rate[i] * drive + self.noise_gain[i] * eta;
            if self.v[i] >= self.v_th[i] {
                self.v[i] = p.v_reset;
                self.refractory[i] = self.refractory_steps;
                self.spiked[i] = true;
            }
        }
        let mut count = 0;
        for pre in 0..n {
            if self.spiked[pre] {
                count += 1;
                for (s, w) in self.syn.iter_mut().zip(self.weights.column(pre).iter()) {
                    *s += w;
                }
            }
        }
        for (f, &s) in self.filtered.iter_mut().zip(&self.spiked) {
            *f = *f * self.filter_decay + if s { 1.0 } else { 0.0 };
        }
        count
    }

    pub(crate) fn set_input_currents(&mut self, drive: &[f64]) {
        self.input_current.fill(0.0);
        for (&idx, &c) in self.params.input_subset.iter().zip(drive) {
            self.input_current[idx] += c;
        }
    }
}

impl Reservoir for LifSnn {
    fn obs_dim(&self) -> usize {
        self.params.readout_subset.len()
    }

    fn n_in(&self) -> usize {
        self.params.input_subset.len()
    }

    fn reset(&mut self, seed: u64) {
        self.v.fill(self.params.v_rest);
        self.syn.fill(0.0);
        self.refractory.fill(0);
        self.filtered.fill(0.0);
        self.spiked.fill(false);
        self.input_current.fill(0.0);
        self.rng = stream_rng(seed, stream::DYNAMICS, 0);
        self.symbols = 0;
    }

    fn step(&mut self, drive: &[f64]) -> Result<()> {
        check_drive(drive, self.n_in())?;
        self.set_input_currents(drive);
        for _ in 0..self.params.substeps_per_symbol {
            self.substep();
        }
        self.symbols += 1;
        if self.v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { step: self.symbols });
        }
        Ok(())
    }

    fn observe_into(&self, out: &mut [f64]) {
        for (o, &idx) in out.iter_mut().zip(&self.params.readout_subset) {
            *o = self.filtered[idx];
        }
    }

    fn model_name(&self) -> &'static str {
        "snn"
    }
}
