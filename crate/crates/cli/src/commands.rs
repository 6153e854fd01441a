//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rome_core::artifact::sha256_hex;
use rome_core::bp::{self, AscentConfig};
use rome_core::eval::{self, DelayScore, DrivenRun};
use rome_core::numerics::{self, Matrix};
use rome_core::probe::{self, FluctuationEstimate, ProbeArtifact, ProbeMetadata, ResponseKernel};
use rome_core::reservoirs::{AnyReservoir, ModelSpec, Reservoir};
use rome_core::rng::derive_seed;
use rome_core::rome::{self, Encoder, EncoderFile, MemoryOperator, Provenance, TaskWeights};
use serde_json::Value;

use crate::config::{EncoderKind, ExperimentConfig, TaskKind};
use crate::error::CliError;
use crate::output::{self, Band, Cell, ManifestWriter, Series, Table};

pub const PROBE_FILE: &str = "probe.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RANDOM_METRICS_FILE: &str = "metrics_random.csv";
pub const ENVELOPE_METRICS_FILE: &str = "metrics_envelope.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PLANE_FILE: &str = "sweep_plane.csv";
pub const ASCENT_FILE: &str = "ascent.csv";

/// Resolved inputs shared by all subcommands.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub probe_path: Option<PathBuf>,
    pub encoder_path: Option<PathBuf>,
    pub analytic: bool,
    pub flags: BTreeMap<String, Value>,
}

impl Context {
    fn begin(&self, name: &str) -> Result<ManifestWriter, CliError> {
        ManifestWriter::begin(&self.out, name, self.cfg.hash()?, &self.cfg, self.flags.clone())
    }

    fn reservoir(&self) -> Result<AnyReservoir, CliError> {
        Ok(self.cfg.model.build()?)
    }

    fn input_cov(&self) -> Matrix {
        rome::scalar_input_cov(self.cfg.task.input_variance())
    }

    fn svg(&self) -> bool {
        self.cfg.output.svg
    }
}

/// A probe artifact together with its decoded parts and file hash.
pub struct LoadedProbe {
    pub artifact: ProbeArtifact,
    pub fluct: FluctuationEstimate,
    pub kernel: ResponseKernel,
    pub hash: String,
}

impl LoadedProbe {
    fn from_artifact(artifact: ProbeArtifact, hash: String) -> Result<Self, CliError> {
        Ok(Self { fluct: artifact.fluctuations()?, kernel: artifact.kernel()?, artifact, hash })
    }

    fn operator(&self, weights: &TaskWeights, eps_rel: f64) -> Result<MemoryOperator, CliError> {
        Ok(rome::build_memory_operator(&self.kernel, &self.fluct, weights, eps_rel)?)
    }
}

pub fn cmd_probe(ctx: &Context) -> Result<LoadedProbe, CliError> {
    let mut m = ctx.begin("probe")?;
    let cfg = &ctx.cfg;
    let res = ctx.reservoir()?;
    let p = &cfg.probe;
    let analytic = ctx.analytic || p.analytic;
    let (fluct, kernel) = if analytic {
        let ModelSpec::Linear(params) = &cfg.model else {
            return Err(CliError::config(format!(
                "analytic probing needs a linear model, not {}",
                cfg.model.name()
            )));
        };
        let w = res.internal_matrix().expect("dense models expose W");
        (probe::analytic_fluctuations(w, params.noise_sigma)?, probe::analytic_response(w, p.k_max)?)
    } else {
        let fluct = probe::estimate_fluctuations(&res, &p.fluctuation_config())?;
        let kernel = probe::estimate_response(&res, &p.response_config())?;
        (fluct, kernel)
    };
    if !fluct.stationary {
        m.note("zero-input run failed the stationarity check");
    }
    if kernel.nonlinear_warning {
        m.note("response probe left the linear regime");
    }
    let metadata = ProbeMetadata {
        model: cfg.model.name().into(),
        params_hash: cfg.probe_key(analytic)?,
        seeds: vec![p.seed],
        epsilon: p.epsilon,
        trials: p.trials,
        analytic,
        sample_count: None,
        stationary: fluct.stationary,
        nonlinear_warning: kernel.nonlinear_warning,
    };
    let artifact = ProbeArtifact::new(&fluct, &kernel, metadata)?;
    let text = artifact.to_json()?;
    let path = ctx.probe_path.clone().unwrap_or_else(|| ctx.out.join(PROBE_FILE));
    let hash = if path.parent() == Some(ctx.out.as_path()) {
        m.output(&file_name(&path), text.as_bytes())?;
        sha256_hex(text.as_bytes())
    } else {
        output::write_file(&path, text.as_bytes())?
    };
    m.finish("ok")?;
    Ok(LoadedProbe { artifact, fluct, kernel, hash })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Load the probe artifact, running the probe first when none exists yet.
pub fn load_probe(ctx: &Context) -> Result<LoadedProbe, CliError> {
    let path = ctx.probe_path.clone().unwrap_or_else(|| ctx.out.join(PROBE_FILE));
    if !path.exists() {
        if ctx.probe_path.is_some() {
            return Err(CliError::config(format!("probe artifact {} not found", path.display())));
        }
        log::info!("no probe artifact in {}; probing now", ctx.out.display());
        return cmd_probe(ctx);
    }
    let text = output::read_file(&path)?;
    let artifact = ProbeArtifact::from_json(&text)?;
    if artifact.metadata.params_hash != ctx.cfg.probe_key(ctx.analytic)? {
        return Err(CliError::config(format!(
            "probe artifact {} was built for a different model or probe settings; rerun `rome probe`",
            path.display()
        )));
    }
    let max = ctx.cfg.task.weights()?.max_delay();
    if max > artifact.k_max {
        return Err(CliError::config(format!("task delay {max} exceeds the probe's k_max {}", artifact.k_max)));
    }
    LoadedProbe::from_artifact(artifact, sha256_hex(text.as_bytes()))
}

pub struct Optimized {
    pub operator: MemoryOperator,
    pub result: rome::OptimalEncoder,
    pub file: EncoderFile,
}

fn optimize_with(ctx: &Context, probe: &LoadedProbe, weights: &TaskWeights, power: f64, r: usize) -> Result<Optimized, CliError> {
    let op = probe.operator(weights, ctx.cfg.encoder.eps_rel)?;
    let split = ctx.cfg.encoder.power_split.as_deref();
    let result = rome::optimal_encoder(&op, power, r, split, &ctx.input_cov())?;
    let provenance = Provenance {
        kind: "rome".into(),
        operator_hash: Some(op.hash()),
        weights: Some(weights.clone()),
        probe_hash: Some(probe.hash.clone()),
        predicted_objective: Some(result.predicted_objective),
        eigenvalues: Some(op.eigen.values.iter().take(r).copied().collect()),
    };
    let file = EncoderFile::new(&result.encoder, provenance);
    Ok(Optimized { operator: op, result, file })
}

pub fn cmd_optimize(ctx: &Context) -> Result<Optimized, CliError> {
    let probe = load_probe(ctx)?;
    let mut m = ctx.begin("optimize")?;
    m.input(PROBE_FILE, probe.hash.clone());
    let enc = &ctx.cfg.encoder;
    let opt = optimize_with(ctx, &probe, &ctx.cfg.task.weights()?, enc.power, enc.r)?;
    if opt.result.degenerate_top {
        m.note("top eigenvalue is degenerate; the returned direction is one of several optima");
    }
    if opt.result.rank_deficient {
        m.note("requested more directions than the operator's numerical rank");
    }
    let text = opt.file.to_json()?;
    match &ctx.encoder_path {
        Some(p) => {
            output::write_file(p, text.as_bytes())?;
        }
        None => {
            m.output(ENCODER_FILE, text.as_bytes())?;
        }
    }
    let mut t = Table::new(&["index", "eigenvalue"]);
    for (i, v) in opt.operator.eigen.values.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*v).into()]);
    }
    m.output(SPECTRUM_FILE, &t.to_bytes()?)?;
    m.finish("ok")?;
    Ok(opt)
}

/// Encoder used by `evaluate` for a given run seed.
enum EncoderSource {
    Fixed(Encoder, String),
    RandomPerSeed,
}

fn encoder_source(ctx: &Context) -> Result<EncoderSource, CliError> {
    let load = |path: &Path| -> Result<EncoderSource, CliError> {
        let text = output::read_file(path)?;
        let enc = EncoderFile::from_json(&text)?.encoder()?;
        Ok(EncoderSource::Fixed(enc, sha256_hex(text.as_bytes())))
    };
    if let Some(p) = &ctx.encoder_path {
        return load(p);
    }
    match ctx.cfg.encoder.kind {
        EncoderKind::Random => Ok(EncoderSource::RandomPerSeed),
        EncoderKind::File => load(ctx.cfg.encoder.path.as_ref().expect("validated")),
        EncoderKind::Rome => {
            let path = ctx.out.join(ENCODER_FILE);
            if !path.exists() {
                log::info!("no encoder in {}; optimizing now", ctx.out.display());
                cmd_optimize(ctx)?;
            }
            load(&path)
        }
    }
}

fn random_encoder_for(ctx: &Context, n_in: usize, power: f64, label: &str, index: u64) -> Result<Encoder, CliError> {
    let seed = derive_seed(ctx.cfg.encoder.seed, label, index);
    Ok(rome::random_encoder(power, n_in, &ctx.input_cov(), seed)?)
}

/// Scores of one driven run: one entry per evaluated delay, or a single
/// NARMA10 entry with `k = 0`.
fn score_run<R: Reservoir>(ctx: &Context, res: &R, enc: &Encoder, seed: u64, delays: &[usize]) -> Result<Vec<DelayScore>, CliError> {
    let run_cfg = &ctx.cfg.run;
    match ctx.cfg.task.kind {
        TaskKind::Delay => {
            let u = eval::gen_white_input(run_cfg.t, ctx.cfg.task.input_amplitude, seed);
            let run = drive(res, enc, &u, seed, ctx)?;
            Ok(eval::delay_scores(&run, delays, run_cfg.ridge_lambda)?)
        }
        TaskKind::Narma10 => {
            let u = eval::gen_narma_input(run_cfg.t, seed);
            let target = eval::gen_narma10(&u)?;
            let run = drive(res, enc, &u, seed, ctx)?;
            let model = eval::fit_readout(&run, &target, run_cfg.ridge_lambda)?;
            let s = eval::score(&model, &run, &target)?;
            Ok(vec![DelayScore { k: 0, mf: s.corr2, r2: s.r2 }])
        }
    }
}

fn drive<R: Reservoir>(res: &R, enc: &Encoder, u: &[f64], seed: u64, ctx: &Context) -> Result<DrivenRun, CliError> {
    let r = &ctx.cfg.run;
    Ok(eval::drive_scalar(res, enc, u, r.washout, seed)?.with_split(r.train_fraction)?)
}

/// Returns the table written to `metrics.csv`.
pub fn cmd_evaluate(ctx: &Context) -> Result<Table, CliError> {
    let source = encoder_source(ctx)?;
    let needs_probe = ctx.cfg.run.envelope;
    let probe = if needs_probe { Some(load_probe(ctx)?) } else { None };
    let mut m = ctx.begin("evaluate")?;
    if let EncoderSource::Fixed(_, h) = &source {
        m.input(ENCODER_FILE, h.clone());
    }
    if let Some(p) = &probe {
        m.input(PROBE_FILE, p.hash.clone());
    }
    let res = ctx.reservoir()?;
    let run_cfg = &ctx.cfg.run;
    let delays = match ctx.cfg.task.kind {
        TaskKind::Delay => run_cfg.eval_delays(),
        TaskKind::Narma10 => vec![0],
    };
    let power = ctx.cfg.encoder.power;

    // Configured encoder over all seeds.
    let per_seed: Vec<Result<Vec<DelayScore>, CliError>> = run_cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let enc = match &source {
                EncoderSource::Fixed(e, _) => e.clone(),
                EncoderSource::RandomPerSeed => random_encoder_for(ctx, res.n_in(), power, "random", s)?,
            };
            score_run(ctx, &res, &enc, s, &delays)
        })
        .collect();
    let mut failures = Vec::new();
    let mut ok: Vec<(u64, Vec<DelayScore>)> = Vec::new();
    let mut first_error = None;
    for (&s, r) in run_cfg.seeds.iter().zip(per_seed) {
        match r {
            Ok(v) => ok.push((s, v)),
            Err(e) => {
                log::warn!("seed {s} failed: {e}");
                failures.push(format!("seed {s}: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        for f in &failures {
            m.note(f.clone());
        }
        m.finish("failed")?;
        return Err(first_error.expect("seeds are non-empty"));
    }
    let metrics = seed_table(&ok, &delays);
    m.output(METRICS_FILE, &metrics.to_bytes()?)?;

    // Random-encoder baseline: encoder i runs on seed i mod |seeds|.
    let mut random_rows: Vec<(usize, u64, Vec<DelayScore>)> = Vec::new();
    if run_cfg.random_encoders > 0 {
        let results: Vec<Result<(usize, u64, Vec<DelayScore>), CliError>> = (0..run_cfg.random_encoders)
            .into_par_iter()
            .map(|i| {
                let s = run_cfg.seeds[i % run_cfg.seeds.len()];
                let enc = random_encoder_for(ctx, res.n_in(), power, "random-family", i as u64)?;
                Ok((i, s, score_run(ctx, &res, &enc, s, &delays)?))
            })
            .collect();
        for r in results {
            match r {
                Ok(row) => random_rows.push(row),
                Err(e) => failures.push(format!("random encoder: {e}")),
            }
        }
        let mut t = Table::new(&["encoder", "seed", "k", "mf", "r2"]);
        for (i, s, scores) in &random_rows {
            for sc in scores {
                t.push(vec![(*i).into(), (*s).into(), k_cell(sc.k), sc.mf.into(), sc.r2.into()]);
            }
        }
        for (label, stats) in aggregate(random_rows.iter().map(|(_, _, v)| v.as_slice()), &delays) {
            for (k, mf, r2) in stats {
                t.push(vec![label.into(), Cell::Empty, k_cell(k), mf.into(), r2.into()]);
            }
        }
        m.output(RANDOM_METRICS_FILE, &t.to_bytes()?)?;
    }

    // Single-delay optimum at each evaluated delay.
    let mut envelope: Vec<(u64, Vec<DelayScore>)> = Vec::new();
    let mut envelope_jobs = 0;
    if let (Some(probe), TaskKind::Delay) = (&probe, ctx.cfg.task.kind) {
        let encoders: Vec<Encoder> = delays
            .iter()
            .map(|&k| Ok(optimize_with(ctx, probe, &TaskWeights::single(k)?, power, 1)?.result.encoder))
            .collect::<Result<_, CliError>>()?;
        let jobs: Vec<(u64, usize)> = run_cfg.seeds.iter().flat_map(|&s| (0..delays.len()).map(move |i| (s, i))).collect();
        envelope_jobs = jobs.len();
        let results: Vec<Result<DelayScore, CliError>> = jobs
            .par_iter()
            .map(|&(s, i)| Ok(score_run(ctx, &res, &encoders[i], s, &delays[i..=i])?[0]))
            .collect();
        for (chunk, &s) in results.chunks(delays.len()).zip(&run_cfg.seeds) {
            match chunk.iter().map(|r| r.as_ref().map(|v| *v).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>() {
                Ok(v) => envelope.push((s, v)),
                Err(e) => failures.push(format!("seed {s}, single-delay optimum: {e}")),
            }
        }
        m.output(ENVELOPE_METRICS_FILE, &seed_table(&envelope, &delays).to_bytes()?)?;
    } else if needs_probe {
        m.note("run.envelope is ignored for NARMA10 tasks");
    }

    if ctx.svg() && ctx.cfg.task.kind == TaskKind::Delay {
        let x: Vec<f64> = delays.iter().map(|&k| k as f64).collect();
        let mean_of = |rows: &[&[DelayScore]]| -> Vec<f64> {
            (0..delays.len()).map(|i| numerics::mean(&rows.iter().map(|r| r[i].mf).collect::<Vec<_>>())).collect()
        };
        let main_rows: Vec<&[DelayScore]> = ok.iter().map(|(_, v)| v.as_slice()).collect();
        let mut series = vec![Series { label: "encoder", color: "#c0392b", x: x.clone(), y: mean_of(&main_rows), dashed: false }];
        if !envelope.is_empty() {
            let env_rows: Vec<&[DelayScore]> = envelope.iter().map(|(_, v)| v.as_slice()).collect();
            series.push(Series { label: "single-delay optimum", color: "black", x: x.clone(), y: mean_of(&env_rows), dashed: true });
        }
        let band = (!random_rows.is_empty()).then(|| {
            let rows: Vec<&[DelayScore]> = random_rows.iter().map(|(_, _, v)| v.as_slice()).collect();
            let mean = mean_of(&rows);
            let sd: Vec<f64> =
                (0..delays.len()).map(|i| numerics::std_dev(&rows.iter().map(|r| r[i].mf).collect::<Vec<_>>())).collect();
            series.push(Series { label: "random mean", color: "#2e86c1", x: x.clone(), y: mean.clone(), dashed: false });
            Band {
                x: x.clone(),
                lo: mean.iter().zip(&sd).map(|(m, s)| m - s).collect(),
                hi: mean.iter().zip(&sd).map(|(m, s)| m + s).collect(),
                color: "#2e86c1",
            }
        });
        let svg = output::line_plot("Memory function", "delay k", "MF(k)", &series, band.as_ref(), false);
        m.output("memory.svg", svg.as_bytes())?;
    }

    let total = run_cfg.seeds.len() + run_cfg.random_encoders + envelope_jobs;
    finish_with_failures(m, failures, total)?;
    Ok(metrics)
}

fn k_cell(k: usize) -> Cell {
    if k == 0 {
        Cell::Empty
    } else {
        k.into()
    }
}

fn seed_table(rows: &[(u64, Vec<DelayScore>)], delays: &[usize]) -> Table {
    let mut t = Table::new(&["seed", "k", "mf", "r2"]);
    for (s, scores) in rows {
        for sc in scores {
            t.push(vec![(*s).into(), k_cell(sc.k), sc.mf.into(), sc.r2.into()]);
        }
    }
    for (label, stats) in aggregate(rows.iter().map(|(_, v)| v.as_slice()), delays) {
        for (k, mf, r2) in stats {
            t.push(vec![label.into(), k_cell(k), mf.into(), r2.into()]);
        }
    }
    t
}

type Stats = Vec<(usize, f64, f64)>;

fn aggregate<'a>(rows: impl Iterator<Item = &'a [DelayScore]>, delays: &[usize]) -> [(&'static str, Stats); 2] {
    let rows: Vec<&[DelayScore]> = rows.collect();
    let col = |i: usize, f: fn(&DelayScore) -> f64| rows.iter().map(|r| f(&r[i])).collect::<Vec<_>>();
    let mean = (0..delays.len())
        .map(|i| (delays[i], numerics::mean(&col(i, |s| s.mf)), numerics::mean(&col(i, |s| s.r2))))
        .collect();
    let sd = (0..delays.len())
        .map(|i| (delays[i], numerics::std_dev(&col(i, |s| s.mf)), numerics::std_dev(&col(i, |s| s.r2))))
        .collect();
    [("mean", mean), ("sd", sd)]
}

pub fn cmd_sweep(ctx: &Context, plane: bool) -> Result<Table, CliError> {
    if plane {
        return plane_scan(ctx);
    }
    let probe = load_probe(ctx)?;
    let mut m = ctx.begin("sweep")?;
    m.input(PROBE_FILE, probe.hash.clone());
    let res = ctx.reservoir()?;
    let weights = ctx.cfg.task.weights()?;
    let op = probe.operator(&weights, ctx.cfg.encoder.eps_rel)?;
    let grid = ctx.cfg.sweep.power_grid();
    let seeds = &ctx.cfg.run.seeds;
    let task_delays = ctx.cfg.task.delays();
    let delays: Vec<usize> = match ctx.cfg.task.kind {
        TaskKind::Delay => task_delays,
        TaskKind::Narma10 => vec![0],
    };
    let kinds = ["rome", "random"];
    let jobs: Vec<(usize, usize, u64)> = (0..grid.len())
        .flat_map(|g| kinds.iter().enumerate().flat_map(move |(k, _)| seeds.iter().map(move |&s| (g, k, s))))
        .collect();
    let results: Vec<Result<Vec<DelayScore>, CliError>> = jobs
        .par_iter()
        .map(|&(g, kind, s)| {
            let power = grid[g];
            let enc = if kind == 0 {
                rome::optimal_encoder(&op, power, ctx.cfg.encoder.r, None, &ctx.input_cov())?.encoder
            } else {
                random_encoder_for(ctx, res.n_in(), power, "random", s)?
            };
            score_run(ctx, &res, &enc, s, &delays)
        })
        .collect();
    let mut t = Table::new(&["sweep_var", "value", "encoder_kind", "seed", "metric", "metric_value"]);
    let mut failures = Vec::new();
    // Headline metric per (grid point, encoder kind), for the plot.
    let mut headline = vec![[Vec::new(), Vec::new()]; grid.len()];
    for (&(g, kind, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(scores) => {
                headline[g][kind].push(scores[0].r2);
                for sc in scores {
                    let (mf_name, r2_name) = match sc.k {
                        0 => ("corr2".to_string(), "r2".to_string()),
                        k => (format!("mf_k{k}"), format!("r2_k{k}")),
                    };
                    for (name, v) in [(r2_name, sc.r2), (mf_name, sc.mf)] {
                        t.push(vec!["power".into(), grid[g].into(), kinds[kind].into(), s.into(), name.into(), v.into()]);
                    }
                }
            }
            Err(e) => failures.push(format!("power {} {} seed {s}: {e}", grid[g], kinds[kind])),
        }
    }
    m.output(SWEEP_FILE, &t.to_bytes()?)?;
    if ctx.svg() {
        let metric = if delays[0] == 0 { "R2".to_string() } else { format!("R2 at k={}", delays[0]) };
        let curve = |kind: usize| -> Vec<f64> {
            headline.iter().map(|h| if h[kind].is_empty() { f64::NAN } else { numerics::mean(&h[kind]) }).collect()
        };
        let series = [
            Series { label: "ROME", color: "#c0392b", x: grid.clone(), y: curve(0), dashed: false },
            Series { label: "random", color: "#2e86c1", x: grid.clone(), y: curve(1), dashed: false },
        ];
        let svg = output::line_plot("Performance versus input power", "power P", &metric, &series, None, true);
        m.output("sweep.svg", svg.as_bytes())?;
    }
    finish_with_failures(m, failures, jobs.len())?;
    Ok(t)
}

fn finish_with_failures(mut m: ManifestWriter, failures: Vec<String>, total: usize) -> Result<(), CliError> {
    if failures.is_empty() {
        return m.finish("ok");
    }
    for f in &failures {
        m.note(f.clone());
    }
    m.finish("partial")?;
    Err(CliError::Partial { failed: failures.len(), total, first: failures[0].clone() })
}

fn plane_scan(ctx: &Context) -> Result<Table, CliError> {
    let probe = load_probe(ctx)?;
    let mut m = ctx.begin("sweep-plane")?;
    m.input(PROBE_FILE, probe.hash.clone());
    let weights = ctx.cfg.task.weights()?;
    let op = probe.operator(&weights, ctx.cfg.encoder.eps_rel)?;
    let rome_dir = op.eigen.top_vector();
    let task_dir = eval::task_only_direction(&probe.kernel, &weights)?;
    let power = ctx.cfg.encoder.power;
    let scan = eval::direction_plane_scan(&op, &task_dir, &rome_dir, power, ctx.cfg.sweep.angles, Some(&probe.fluct.sigma_ref))?;
    let mut t = Table::new(&["sweep_var", "value", "encoder_kind", "seed", "metric", "metric_value"]);
    for (a, v) in scan.angles.iter().zip(&scan.values) {
        t.push(vec!["angle".into(), (*a).into(), "plane".into(), Cell::Empty, "objective".into(), (*v).into()]);
    }
    // Marker directions, as angles in the (ROME, task) plane.
    let b1 = &rome_dir / rome_dir.norm();
    let t_unit = &task_dir / task_dir.norm();
    let resid = &t_unit - &b1 * b1.dot(&t_unit);
    let b2 = &resid / resid.norm();
    let value_at = |angle: f64| {
        let v = (&b1 * angle.cos() + &b2 * angle.sin()) * power.sqrt();
        (v.transpose() * &op.matrix * &v)[(0, 0)]
    };
    let task_angle = b2.dot(&t_unit).atan2(b1.dot(&t_unit));
    let mut markers = vec![("rome", 0.0, None), ("task", task_angle, None)];
    if let Some((a, b)) = scan.noise_projection {
        markers.push(("noise_min", b.atan2(a), Some((a * a + b * b).sqrt())));
    } else {
        m.note("noise-minimizing direction lives in observation space, which differs from the input space");
    }
    for (kind, angle, norm) in markers {
        t.push(vec!["angle".into(), angle.into(), kind.into(), Cell::Empty, "objective".into(), value_at(angle).into()]);
        if let Some(n) = norm {
            t.push(vec!["angle".into(), angle.into(), kind.into(), Cell::Empty, "in_plane_norm".into(), n.into()]);
        }
    }
    m.output(PLANE_FILE, &t.to_bytes()?)?;
    if ctx.svg() {
        let deg: Vec<f64> = scan.angles.iter().map(|a| a.to_degrees()).collect();
        let series = [Series { label: "objective", color: "#c0392b", x: deg, y: scan.values.clone(), dashed: false }];
        let svg = output::line_plot("Objective in the task/ROME plane", "angle (deg)", "objective", &series, None, false);
        m.output("plane.svg", svg.as_bytes())?;
    }
    m.finish("ok")?;
    Ok(t)
}

pub fn cmd_ascent(ctx: &Context) -> Result<Table, CliError> {
    let probe = load_probe(ctx)?;
    let mut m = ctx.begin("ascent")?;
    m.input(PROBE_FILE, probe.hash.clone());
    let res = ctx.reservoir()?;
    let weights = ctx.cfg.task.weights()?;
    let power = ctx.cfg.encoder.power;
    let opt = optimize_with(ctx, &probe, &weights, power, 1)?;
    let reference = opt.result.encoder.clone();
    let a = &ctx.cfg.ascent;
    let cfg = AscentConfig { eta: a.eta, steps: a.steps, eval_every: a.eval_every };
    // Empirical score at the heaviest task delay (or NARMA10 R²).
    let eval_delay = weights.iter().fold((0usize, f64::MIN), |best, (k, w)| if w > best.1 { (k, w) } else { best }).0;
    let seed = ctx.cfg.run.seeds[0];
    let r2_of = |enc: &Encoder| -> rome_core::Result<f64> {
        score_run(ctx, &res, enc, seed, &[eval_delay]).map(|v| v[0].r2).map_err(|e| match e {
            CliError::Core(c) => c,
            other => rome_core::Error::InvalidInput(other.to_string()),
        })
    };
    let reference_r2 = r2_of(&reference)?;
    let traces: Vec<Result<bp::AscentTrace, CliError>> = (0..a.starts)
        .into_par_iter()
        .map(|i| {
            let start = rome::random_encoder(power, res.n_in(), &ctx.input_cov(), derive_seed(a.seed, "start", i as u64))?;
            Ok(bp::projected_gradient_ascent(&opt.operator, &start, power, &cfg, &reference, Some(r2_of))?)
        })
        .collect();
    let mut t = Table::new(&["start", "step", "alignment", "objective", "r2"]);
    t.push(vec!["rome".into(), 0usize.into(), 1.0f64.into(), opt.result.predicted_objective.into(), reference_r2.into()]);
    let mut finals = Vec::new();
    for (i, tr) in traces.into_iter().enumerate() {
        let tr = tr?;
        for r in &tr.records {
            t.push(vec![i.into(), r.step.into(), r.alignment.into(), r.objective.into(), r.r2.into()]);
        }
        finals.push(tr);
    }
    m.output(ASCENT_FILE, &t.to_bytes()?)?;
    if ctx.svg() {
        let series: Vec<Series> = finals
            .iter()
            .take(10)
            .map(|tr| Series {
                label: "",
                color: "#7f8c8d",
                x: tr.records.iter().map(|r| r.step as f64).collect(),
                y: tr.records.iter().map(|r| r.alignment).collect(),
                dashed: false,
            })
            .collect();
        let svg = output::line_plot("Gradient ascent alignment", "step", "|cos(G, G*)|", &series, None, false);
        m.output("ascent.svg", svg.as_bytes())?;
    }
    m.finish("ok")?;
    Ok(t)
}
