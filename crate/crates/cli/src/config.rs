//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use rome_core::artifact::{sha256_hex, to_sorted_json};
use rome_core::probe::{FluctuationConfig, ResponseConfig};
use rome_core::reservoirs::ModelSpec;
use rome_core::rome::TaskWeights;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub ascent: AscentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Use closed-form fluctuations and responses (linear model only).
    pub analytic: bool,
    /// Samples for the zero-input fluctuation estimate.
    pub steps: usize,
    pub burn_in: usize,
    pub k_max: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub response_burn_in: usize,
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let f = FluctuationConfig::default();
        let r = ResponseConfig::default();
        Self {
            analytic: false,
            steps: f.steps,
            burn_in: f.burn_in,
            k_max: r.k_max,
            epsilon: r.epsilon,
            trials: r.trials,
            response_burn_in: r.burn_in,
            seed: 0,
        }
    }
}

impl ProbeSection {
    pub fn fluctuation_config(&self) -> FluctuationConfig {
        FluctuationConfig { steps: self.steps, burn_in: self.burn_in, seed: self.seed }
    }

    pub fn response_config(&self) -> ResponseConfig {
        ResponseConfig {
            k_max: self.k_max,
            epsilon: self.epsilon,
            trials: self.trials,
            burn_in: self.response_burn_in,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Reconstruct delayed copies of a white input.
    Delay,
    Narma10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Delays entering the memory operator; defaults to `[1]` for delay
    /// tasks and `1..=10` for NARMA10.
    pub delays: Option<Vec<usize>>,
    /// Weight per entry of `delays`; unit weights when absent.
    pub weights: Option<Vec<f64>>,
    /// White input is uniform on `[-a, a]`.
    pub input_amplitude: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { kind: TaskKind::Delay, delays: None, weights: None, input_amplitude: 1.0 }
    }
}

impl TaskSection {
    pub fn delays(&self) -> Vec<usize> {
        match (&self.delays, self.kind) {
            (Some(d), _) => d.clone(),
            (None, TaskKind::Delay) => vec![1],
            (None, TaskKind::Narma10) => (1..=10).collect(),
        }
    }

    pub fn weights(&self) -> Result<TaskWeights, CliError> {
        let delays = self.delays();
        let weights = match &self.weights {
            Some(w) if w.len() != delays.len() => {
                return Err(CliError::config(format!(
                    "task.weights has {} entries but task.delays has {}",
                    w.len(),
                    delays.len()
                )))
            }
            Some(w) => w.clone(),
            None => vec![1.0; delays.len()],
        };
        TaskWeights::new(delays.into_iter().zip(weights)).map_err(|e| CliError::config(format!("task: {e}")))
    }

    pub fn input_variance(&self) -> f64 {
        match self.kind {
            TaskKind::Delay => rome_core::eval::white_input_variance(self.input_amplitude),
            TaskKind::Narma10 => rome_core::eval::narma_input_variance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Rome,
    Random,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    pub power: f64,
    pub r: usize,
    pub power_split: Option<Vec<f64>>,
    /// Relative regularization of `Σ_ref` before inversion.
    pub eps_rel: f64,
    pub path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { kind: EncoderKind::Rome, power: 1.0, r: 1, power_split: None, eps_rel: 1e-6, path: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub t: usize,
    pub washout: usize,
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    /// Evaluated delays are `1..=k_max` unless `delays` is given.
    pub k_max: usize,
    pub delays: Option<Vec<usize>>,
    pub ridge_lambda: f64,
    /// Number of random same-power encoders evaluated as a baseline band.
    pub random_encoders: usize,
    /// Also evaluate the single-delay optimum at each evaluated delay.
    pub envelope: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            t: 20_000,
            washout: rome_core::eval::DEFAULT_WASHOUT,
            train_fraction: rome_core::eval::TRAIN_FRACTION,
            seeds: vec![0],
            k_max: 10,
            delays: None,
            ridge_lambda: 0.0,
            random_encoders: 0,
            envelope: false,
        }
    }
}

impl RunSection {
    pub fn eval_delays(&self) -> Vec<usize> {
        self.delays.clone().unwrap_or_else(|| (1..=self.k_max).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Explicit power grid; overrides the log grid below.
    pub powers: Option<Vec<f64>>,
    pub power_min: f64,
    pub power_max: f64,
    pub points: usize,
    /// Angular resolution of the plane scan.
    pub angles: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { powers: None, power_min: 1e-3, power_max: 1e2, points: 6, angles: 72 }
    }
}

impl SweepSection {
    pub fn power_grid(&self) -> Vec<f64> {
        if let Some(p) = &self.powers {
            return p.clone();
        }
        if self.points == 1 {
            return vec![self.power_min];
        }
        let (lo, hi) = (self.power_min.log10(), self.power_max.log10());
        (0..self.points).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (self.points - 1) as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AscentSection {
    /// Step size; `0.1 / λ₁` when absent.
    pub eta: Option<f64>,
    pub steps: usize,
    pub eval_every: usize,
    /// Number of random starting encoders.
    pub starts: usize,
    pub seed: u64,
}

impl Default for AscentSection {
    fn default() -> Self {
        Self { eta: None, steps: 500, eval_every: 10, starts: 10, seed: 1000 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::config(msg));
        let p = &self.probe;
        if p.k_max == 0 {
            return bad("probe.k_max must be positive".into());
        }
        if !(p.epsilon > 0.0) || p.trials == 0 {
            return bad("probe.epsilon and probe.trials must be positive".into());
        }
        let weights = self.task.weights()?;
        if weights.max_delay() > p.k_max {
            return bad(format!("task.delays: delay {} exceeds probe.k_max {}", weights.max_delay(), p.k_max));
        }
        if self.task.kind == TaskKind::Delay && !(self.task.input_amplitude > 0.0) {
            return bad("task.input_amplitude must be positive".into());
        }
        let e = &self.encoder;
        if !(e.power > 0.0 && e.power.is_finite()) {
            return bad(format!("encoder.power must be positive, got {}", e.power));
        }
        if e.r == 0 {
            return bad("encoder.r must be at least 1".into());
        }
        if !(e.eps_rel >= 0.0) {
            return bad("encoder.eps_rel must be nonnegative".into());
        }
        if e.kind == EncoderKind::File && e.path.is_none() {
            return bad("encoder.kind = \"file\" needs encoder.path".into());
        }
        let r = &self.run;
        if r.seeds.is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        if r.washout >= r.t {
            return bad(format!("run.washout {} must be below run.t {}", r.washout, r.t));
        }
        let delays = r.eval_delays();
        if delays.is_empty() || delays.contains(&0) {
            return bad("evaluated delays must be non-empty and start at 1".into());
        }
        if let Some(&k) = delays.iter().max() {
            if k > r.washout + 1 {
                return bad(format!("evaluated delay {k} exceeds run.washout + 1 = {}", r.washout + 1));
            }
            if r.envelope && k > p.k_max {
                return bad(format!("run.envelope: delay {k} exceeds probe.k_max {}", p.k_max));
            }
        }
        if self.task.kind == TaskKind::Narma10 && r.t < rome_core::eval::NARMA_MIN_LEN {
            return bad(format!("NARMA10 runs need run.t >= {}", rome_core::eval::NARMA_MIN_LEN));
        }
        if !(r.ridge_lambda >= 0.0) {
            return bad("run.ridge_lambda must be nonnegative".into());
        }
        let s = &self.sweep;
        let grid = s.power_grid();
        if grid.is_empty() || grid.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("sweep power grid must be non-empty and positive".into());
        }
        if s.points == 0 || s.angles == 0 {
            return bad("sweep.points and sweep.angles must be positive".into());
        }
        let a = &self.ascent;
        if a.steps == 0 || a.eval_every == 0 || a.starts == 0 {
            return bad("ascent.steps, ascent.eval_every and ascent.starts must be positive".into());
        }
        if matches!(a.eta, Some(v) if !(v > 0.0)) {
            return bad("ascent.eta must be positive".into());
        }
        Ok(())
    }

    /// Hash of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(sha256_hex(to_sorted_json(self)?.as_bytes()))
    }

    /// Hash of everything a probe artifact depends on: the model, the probe
    /// settings, and whether the closed-form probe was requested.
    pub fn probe_key(&self, analytic: bool) -> Result<String, CliError> {
        let mut probe = self.probe.clone();
        probe.analytic |= analytic;
        Ok(sha256_hex(to_sorted_json(&(&self.model, &probe))?.as_bytes()))
    }
}
