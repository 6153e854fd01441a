//! One-dimensional spin-wave envelope waveguide.
//!
//! The complex envelope obeys
//! `∂t ψ = (−Γ + iΩ0) ψ − v_g ∂x ψ + i D ∂x² ψ + b(x) u(t) + ξ(x, t)`
//! and is integrated with explicit substeps: first-order upwind advection,
//! central second difference for dispersion, and the exact integrating factor
//! `exp((−Γ + iΩ0) dt)` for damping and carrier rotation. The left boundary
//! is a zero-inflow ghost cell; the right boundary copies out and a linear
//! damping ramp (up to 10 Γ) absorbs outgoing waves.
//!
//! A constant carrier drive (`bias`) on the input cells pumps a steady field,
//! which sets the operating point around which the amplitude readout responds
//! linearly to weak inputs.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_drive, Reservoir};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, StreamRng};

const RAMP_MAX_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinWaveParams {
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub substeps_per_symbol: usize,
    pub gamma: f64,
    pub omega0: f64,
    pub v_g: f64,
    pub dispersion: f64,
    pub noise_sigma: f64,
    pub bias: f64,
    /// Input window: the first `w_in` cells.
    pub w_in: usize,
    pub w_out_start: usize,
    pub w_out_len: usize,
    pub absorb_ramp: usize,
    pub seed: u64,
}

impl Default for SpinWaveParams {
    fn default() -> Self {
        Self {
            nx: 200,
            dx: 1.0,
            dt: 0.1,
            substeps_per_symbol: 10,
            gamma: 0.05,
            omega0: 1.0,
            v_g: 4.0,
            dispersion: 0.5,
            noise_sigma: 0.05,
            bias: 1.0,
            w_in: 10,
            w_out_start: 120,
            w_out_len: 40,
            absorb_ramp: 20,
            seed: 1,
        }
    }
}

impl SpinWaveParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("dx", self.dx), ("dt", self.dt)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("gamma", self.gamma),
            ("v_g", self.v_g),
            ("dispersion", self.dispersion),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.omega0.is_finite() || !self.bias.is_finite() {
            return Err(Error::config("omega0 and bias must be finite"));
        }
        if self.substeps_per_symbol == 0 {
            return Err(Error::config("substeps_per_symbol must be positive"));
        }
        let limit = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
        let bound = 0.5
            * limit(self.dx, self.v_g)
                .min(limit(self.dx * self.dx, 2.0 * self.dispersion))
                .min(limit(1.0, self.gamma));
        if self.dt > bound {
            return Err(Error::config(format!("dt = {} violates the CFL bound {bound}", self.dt)));
        }
        if self.w_in == 0 || self.w_out_len == 0 {
            return Err(Error::config("input and readout windows must be non-empty"));
        }
        if self.w_in + self.w_out_len > self.nx || self.w_out_start + self.w_out_len > self.nx {
            return Err(Error::config(format!(
                "windows (w_in={}, readout {}..{}) do not fit in nx={}",
                self.w_in,
                self.w_out_start,
                self.w_out_start + self.w_out_len,
                self.nx
            )));
        }
        if 4 * self.absorb_ramp >= self.nx {
            return Err(Error::config(format!("absorb_ramp {} must be below nx/4", self.absorb_ramp)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpinWaveReservoir {
    params: SpinWaveParams,
    /// Per-cell integrating factor `exp((−Γ_j + iΩ0) dt)`.
    propagator: Vec<Complex64>,
    psi: Vec<Complex64>,
    next: Vec<Complex64>,
    rng: StreamRng,
    symbols: usize,
    substeps: u64,
}

impl SpinWaveReservoir {
    pub fn new(params: SpinWaveParams) -> Result<Self> {
        params.validate()?;
        let nx = params.nx;
        let ramp_start = nx - params.absorb_ramp;
        let propagator = (0..nx)
            .map(|j| {
                let gamma = if j >= ramp_start {
                    let frac = (j - ramp_start + 1) as f64 / params.absorb_ramp as f64;
                    params.gamma * (1.0 + (RAMP_MAX_FACTOR - 1.0) * frac)
                } else {
                    params.gamma
                };
                (Complex64::new(-gamma, params.omega0) * params.dt).exp()
            })
            .collect();
        let mut r = Self {
            propagator,
            psi: vec![Complex64::default(); nx],
            next: vec![Complex64::default(); nx],
            rng: stream_rng(params.seed, stream::DYNAMICS, 0),
            symbols: 0,
            substeps: 0,
            params,
        };
        let seed = r.params.seed;
        r.reset(seed);
        Ok(r)
    }

    pub fn params(&self) -> &SpinWaveParams {
        &self.params
    }

    pub fn field(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn set_field(&mut self, field: &[Complex64]) -> Result<()> {
        if field.len() != self.psi.len() {
            return Err(Error::dim("field length mismatch"));
        }
        self.psi.copy_from_slice(field);
        Ok(())
    }

    pub fn field_norm(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// One explicit substep with the source `source[j]·e^{iΩ0 t}` on the input
    /// cells: the antenna oscillates at the carrier frequency.
    fn substep(&mut self, source: &[Complex64]) {
        let p = &self.params;
        let carrier = Complex64::from_polar(1.0, p.omega0 * p.dt * self.substeps as f64);
        let nx = p.nx;
        let adv = p.v_g / p.dx;
        let disp = Complex64::new(0.0, p.dispersion / (p.dx * p.dx));
        let noise_std = p.noise_sigma * p.dt.sqrt() * std::f64::consts::FRAC_1_SQRT_2;
        let draw_noise = noise_std > 0.0;
        for j in 0..nx {
            let here = self.psi[j];
            let left = if j == 0 { Complex64::default() } else { self.psi[j - 1] };
            let right = if j + 1 == nx { here } else { self.psi[j + 1] };
            let transport = -(here - left) * adv + disp * (right - here * 2.0 + left);
            let mut v = self.propagator[j] * here + transport * p.dt;
            if let Some(s) = source.get(j) {
                v += s * carrier * p.dt;
            }
            if draw_noise {
                let re: f64 = self.rng.sample(StandardNormal);
                let im: f64 = self.rng.sample(StandardNormal);
                v += Complex64::new(re, im) * noise_std;
            }
            self.next[j] = v;
        }
        std::mem::swap(&mut self.psi, &mut self.next);
        self.substeps += 1;
    }

    pub(crate) fn step_with_source(&mut self, source: &[Complex64]) -> Result<()> {
        for _ in 0..self.params.substeps_per_symbol {
            self.substep(source);
        }
        self.symbols += 1;
        if self.psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NumericalBlowup { step: self.symbols });
        }
        Ok(())
    }

    #[cfg(test)]
    fn substep_free(&mut self) {
        self.substep(&[]);
    }
}

impl Reservoir for SpinWaveReservoir {
    fn obs_dim(&self) -> usize {
        self.params.w_out_len
    }

    /// Real and imaginary part of `b` on each input cell.
    fn n_in(&self) -> usize {
        2 * self.params.w_in
    }

    fn reset(&mut self, seed: u64) {
        self.psi.fill(Complex64::default());
        self.rng = stream_rng(seed, stream::DYNAMICS, 0);
        self.symbols = 0;
        self.substeps = 0;
    }

    fn step(&mut self, drive: &[f64]) -> Result<()> {
        check_drive(drive, self.n_in())?;
        let bias = self.params.bias;
        let source: Vec<Complex64> =
            drive.chunks_exact(2).map(|c| Complex64::new(c[0] + bias, c[1])).collect();
        self.step_with_source(&source)
    }

    fn observe_into(&self, out: &mut [f64]) {
        let start = self.params.w_out_start;
        for (o, z) in out.iter_mut().zip(&self.psi[start..start + self.params.w_out_len]) {
            *o = z.norm();
        }
    }

    fn model_name(&self) -> &'static str {
        "spinwave"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(params: SpinWaveParams) -> SpinWaveParams {
        SpinWaveParams { noise_sigma: 0.0, bias: 0.0, ..params }
    }

    fn gaussian_pulse(nx: usize, center: f64, width: f64) -> Vec<Complex64> {
        (0..nx)
            .map(|j| {
                let d = (j as f64 - center) / width;
                Complex64::new((-0.5 * d * d).exp(), 0.0)
            })
            .collect()
    }

    #[test]
    fn rejects_cfl_violation_and_bad_windows() {
        let p = SpinWaveParams { dt: 0.2, ..SpinWaveParams::default() };
        assert!(matches!(SpinWaveReservoir::new(p), Err(Error::Config(_))));
        let p = SpinWaveParams { w_out_start: 180, ..SpinWaveParams::default() };
        assert!(matches!(SpinWaveReservoir::new(p), Err(Error::Config(_))));
        let p = SpinWaveParams { absorb_ramp: 50, ..SpinWaveParams::default() };
        assert!(matches!(SpinWaveReservoir::new(p), Err(Error::Config(_))));
        assert!(SpinWaveReservoir::new(SpinWaveParams::default()).is_ok());
    }

    #[test]
    fn free_field_norm_is_non_increasing() {
        let p = quiet(SpinWaveParams::default());
        let mut r = SpinWaveReservoir::new(p.clone()).unwrap();
        // A smooth pulse and a rough random field.
        let mut rng = stream_rng(3, "field", 0);
        let rough: Vec<Complex64> =
            (0..p.nx).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        for init in [gaussian_pulse(p.nx, 40.0, 4.0), rough] {
            r.set_field(&init).unwrap();
            let mut prev = r.field_norm();
            for _ in 0..2000 {
                r.substep_free();
                let now = r.field_norm();
                assert!(now <= prev * (1.0 + 1e-14), "norm grew {prev} -> {now}");
                prev = now;
            }
        }
    }

    #[test]
    fn decoupled_cells_decay_exactly() {
        let p = SpinWaveParams { v_g: 0.0, dispersion: 0.0, omega0: 2.3, ..quiet(SpinWaveParams::default()) };
        let mut r = SpinWaveReservoir::new(p.clone()).unwrap();
        let init: Vec<Complex64> = (0..p.nx).map(|j| Complex64::new(1.0 + j as f64 * 0.01, -0.5)).collect();
        r.set_field(&init).unwrap();
        let symbols = 30;
        for _ in 0..symbols {
            r.step(&vec![0.0; 2 * p.w_in]).unwrap();
        }
        let t = symbols as f64 * p.substeps_per_symbol as f64 * p.dt;
        // Cells before the absorbing ramp decay at the bulk rate.
        for j in 0..p.nx - p.absorb_ramp {
            let expected = init[j].norm() * (-p.gamma * t).exp();
            assert!((r.field()[j].norm() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn pulse_centroid_moves_at_group_velocity() {
        let p = SpinWaveParams {
            dispersion: 0.0,
            gamma: 0.0,
            v_g: 1.0,
            nx: 400,
            absorb_ramp: 20,
            ..quiet(SpinWaveParams::default())
        };
        let mut r = SpinWaveReservoir::new(p.clone()).unwrap();
        r.set_field(&gaussian_pulse(p.nx, 60.0, 5.0)).unwrap();
        let centroid = |f: &[Complex64]| {
            let m: f64 = f.iter().map(|z| z.norm_sqr()).sum();
            f.iter().enumerate().map(|(j, z)| j as f64 * z.norm_sqr()).sum::<f64>() / m
        };
        let c0 = centroid(r.field());
        let symbols = 50;
        for _ in 0..symbols {
            r.step(&vec![0.0; 2 * p.w_in]).unwrap();
        }
        let travelled = centroid(r.field()) - c0;
        let expected = p.v_g * symbols as f64 * p.substeps_per_symbol as f64 * p.dt / p.dx;
        assert!((travelled - expected).abs() < 1.0, "travelled {travelled}, expected {expected}");
    }

    #[test]
    fn noise_and_drive_are_deterministic() {
        let p = SpinWaveParams::default();
        let run = || {
            let mut r = SpinWaveReservoir::new(p.clone()).unwrap();
            r.reset(11);
            let mut out = Vec::new();
            for t in 0..20 {
                let drive: Vec<f64> = (0..2 * p.w_in).map(|i| ((t * i) as f64).cos()).collect();
                r.step(&drive).unwrap();
                out.extend(r.observe().into_iter().map(f64::to_bits));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let mut r = SpinWaveReservoir::new(SpinWaveParams::default()).unwrap();
        let mut drive = vec![0.0; r.n_in()];
        drive[0] = f64::NAN;
        assert!(matches!(r.step(&drive), Err(Error::NumericalBlowup { step: 1 })));
    }
}
