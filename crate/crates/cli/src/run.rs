//! Executes a parsed configuration and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use isogauss_core::linalg::{condition_number, norm, Matrix};
use isogauss_core::rng::{random_spd, random_spd_with_spectrum, sample_distribution, sample_unit_directions};
use isogauss_core::sigreg::{sigreg_value, whitening_value};
use isogauss_core::table::{fmt_f64, Table};
use isogauss_core::tracking::{
    drift_term_bound, drift_variance_experiment, min_contraction_bound, simulate_tracking, SigmaDrift, Signal,
    TrackingScenario, TrackingTrace,
};
use isogauss_core::train::{accuracy_auc, train_nonstationary, Aux, MetricsRow};
use isogauss_core::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    BoundsSweepCommand, Command, ExperimentConfig, SigmaSpec, SigregEvalCommand, SteinVarianceCommand, TrackingCommand,
    TrainCommand,
};
use crate::error::{Error, Result};
use crate::plot::render_svg;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the stored `config.json` bytes.
    pub config_sha256: String,
    pub version: String,
    pub command: Command,
    pub seeds: Vec<u64>,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub summary: Vec<String>,
    pub manifest: RunManifest,
}

struct Output {
    name: String,
    table: Table,
    plot_columns: &'static [&'static str],
}

#[derive(Default)]
struct SeedResult {
    outputs: Vec<Output>,
    summary: Vec<String>,
    failure: Option<isogauss_core::Error>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Worker pool capped by `ISOGAUSS_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ISOGAUSS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::field("ISOGAUSS_THREADS", format!("expected a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::field("ISOGAUSS_THREADS", e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs every seed, writes `config.json`, the CSVs (and SVGs), and finally
/// `manifest.json`. A diverged run keeps the CSVs it produced but gets no
/// manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_json = cfg.to_json();
    write_file(&dir.join(CONFIG_FILE), config_json.as_bytes())?;

    let pool = thread_pool()?;
    let results: Vec<Result<SeedResult>> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed)).collect());

    let mut names = vec![CONFIG_FILE.to_string()];
    let mut summary = Vec::new();
    let mut failure = None;
    for result in results {
        let result = result?;
        for out in result.outputs {
            let csv = format!("{}.csv", out.name);
            write_file(&dir.join(&csv), &out.table.to_bytes()?)?;
            names.push(csv);
            if cfg.plot && !out.plot_columns.is_empty() {
                let svg_name = format!("{}.svg", out.name);
                let svg = render_svg(&out.table, None, out.plot_columns)?;
                write_file(&dir.join(&svg_name), svg.as_bytes())?;
                names.push(svg_name);
            }
        }
        summary.extend(result.summary);
        failure = failure.or(result.failure);
    }
    if let Some(e) = failure {
        return Err(e.into());
    }

    let manifest = RunManifest {
        config_sha256: sha256_hex(config_json.as_bytes()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: cfg.command,
        seeds: cfg.seeds.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: names.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(RunReport {
        outputs: names.iter().map(|n| dir.join(n)).collect(),
        summary,
        manifest,
    })
}

/// Reads the manifest in `dir` and checks its hash against `config.json`.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::field("manifest", e.to_string()))?;
    let cfg_path = dir.join(CONFIG_FILE);
    let bytes = fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != manifest.config_sha256 {
        return Err(Error::field(
            "config_sha256",
            format!(
                "manifest has {}, config.json hashes to {actual}",
                manifest.config_sha256
            ),
        ));
    }
    Ok(manifest)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    match cfg.command {
        Command::SimulateTracking => tracking(cfg.simulate_tracking.as_ref().expect("filled"), seed),
        Command::Train => train(cfg.train.as_ref().expect("filled"), seed),
        Command::SigregEval => sigreg_eval(cfg.sigreg_eval.as_ref().expect("filled"), seed),
        Command::BoundsSweep => bounds_sweep(cfg.bounds_sweep.as_ref().expect("filled"), seed),
        Command::SteinVariance => stein_variance(cfg.stein_variance.as_ref().expect("filled"), seed),
    }
}

/// The scenario a tracking config describes for `seed`.
pub fn build_scenario(c: &TrackingCommand, seed: u64) -> Result<TrackingScenario> {
    let rng = Rng::new(seed);
    let sigma = match &c.sigma {
        SigmaSpec::Matrix { rows } => Matrix::from_rows(rows)?,
        SigmaSpec::Spectrum { eigenvalues } => random_spd_with_spectrum(eigenvalues, &mut rng.child(0)),
    };
    let d = sigma.rows();
    let signal = match &c.signal {
        Some(s) => s.clone(),
        None => {
            let v = rng.child(1).normal_vec(d);
            let n = norm(&v);
            Signal::Sinusoidal {
                b0: vec![0.0; d],
                amplitude: 1.0,
                omega: 1.0,
                direction: v.iter().map(|x| x / n).collect(),
            }
        }
    };
    let mut s = TrackingScenario::new(sigma, signal, c.horizon);
    s.w0 = c.w0.clone();
    s.dt = c.dt;
    if let Some(drift) = &c.drift_sigma {
        s.drift_sigma = Some(SigmaDrift {
            delta: Matrix::from_rows(&drift.delta)?,
            omega: drift.omega,
        });
    }
    s.validate()?;
    Ok(s)
}

fn trace_table(trace: &TrackingTrace) -> Table {
    let mut t = Table::new(&TrackingTrace::CSV_COLUMNS);
    for row in trace.csv_rows() {
        t.push_numbers(&row);
    }
    t
}

fn tracking(c: &TrackingCommand, seed: u64) -> Result<SeedResult> {
    let scenario = build_scenario(c, seed)?;
    let mut res = SeedResult::default();
    let trace = simulate_tracking(&scenario)?;
    let mut line = format!(
        "seed {seed}: mean gamma after t={} {:.6e}",
        c.burn_in,
        trace.mean_gamma(c.burn_in)
    );
    res.outputs.push(Output {
        name: format!("tracking_seed{seed}"),
        table: trace_table(&trace),
        plot_columns: &["gamma"],
    });
    if c.compare_isotropic {
        let iso = simulate_tracking(&scenario.isotropic_counterpart())?;
        line += &format!(", isotropic {:.6e}", iso.mean_gamma(c.burn_in));
        res.outputs.push(Output {
            name: format!("tracking_isotropic_seed{seed}"),
            table: trace_table(&iso),
            plot_columns: &["gamma"],
        });
    }
    res.summary.push(line);
    Ok(res)
}

fn train(c: &TrainCommand, seed: u64) -> Result<SeedResult> {
    let rng = Rng::new(seed);
    let mut res = SeedResult::default();
    let mut variants = vec![(c.train.aux.name(), c.train.clone())];
    if c.compare_baseline && c.train.aux != Aux::None {
        let mut base = c.train.clone();
        base.aux = Aux::None;
        variants.push(("baseline", base));
    }
    let mut aucs = Vec::new();
    for (label, cfg) in variants {
        let run = train_nonstationary(&cfg, &c.data, &rng)?;
        aucs.push((label, accuracy_auc(&run.rows)));
        res.outputs.push(Output {
            name: format!("train_{label}_seed{seed}"),
            table: MetricsRow::to_table(&run.rows),
            plot_columns: &["train_accuracy", "sigreg_probe"],
        });
        if run.failure.is_some() {
            res.failure = run.failure;
            break;
        }
    }
    let mut line = format!("seed {seed}:");
    for (label, auc) in &aucs {
        line += &format!(" auc[{label}] {auc:.6}");
    }
    if let [(_, a), (_, b)] = aucs[..] {
        line += &format!(" delta {:+.6}", a - b);
    }
    res.summary.push(line);
    Ok(res)
}

fn sigreg_eval(c: &SigregEvalCommand, seed: u64) -> Result<SeedResult> {
    let rng = Rng::new(seed);
    let dirs = sample_unit_directions(c.d, c.sigreg.k_projections, &mut rng.child(0))?;
    let mut table = Table::new(&["distribution", "shift", "scale", "sigreg_loss", "whitening_loss"]);
    let mut res = SeedResult::default();
    for (i, &dist) in c.distributions.iter().enumerate() {
        let x = sample_distribution(dist, 1.0, c.n, c.d, &mut rng.child(1 + i as u64))?;
        for &scale in &c.scales {
            for &shift in &c.shifts {
                let y = x.map(|v| scale * v + shift);
                let loss = sigreg_value(&y, &c.sigreg, &dirs)?;
                table.push(vec![
                    dist.name().to_string(),
                    fmt_f64(shift),
                    fmt_f64(scale),
                    fmt_f64(loss),
                    fmt_f64(whitening_value(&y, c.sigreg.sigma)?),
                ]);
                if shift == 0.0 && scale == 1.0 {
                    res.summary.push(format!("seed {seed}: {dist} sigreg {loss:.6e}"));
                }
            }
        }
    }
    res.outputs.push(Output {
        name: format!("sigreg_eval_seed{seed}"),
        table,
        plot_columns: &[],
    });
    Ok(res)
}

fn bounds_sweep(c: &BoundsSweepCommand, seed: u64) -> Result<SeedResult> {
    let rng = Rng::new(seed);
    let mut table = Table::new(&[
        "d",
        "kappa",
        "lambda_min",
        "trace_over_d",
        "contraction_holds",
        "drift_lhs",
        "drift_bound",
        "drift_holds",
    ]);
    let (mut bad_contraction, mut bad_drift) = (0, 0);
    for (k, &d) in c.dims.iter().enumerate() {
        let mut r = rng.child(k as u64);
        for _ in 0..c.per_dim {
            let sigma = random_spd(d, c.min_eig, c.max_eig, &mut r);
            let e = r.normal_vec(d);
            let v = r.normal_vec(d);
            let n = norm(&v);
            let v: Vec<f64> = v.iter().map(|x| x / n).collect();
            let cb = min_contraction_bound(&sigma)?;
            let db = drift_term_bound(&sigma, &e, &v)?;
            let c_ok = cb.lambda_min <= cb.trace_over_d * (1.0 + 1e-12);
            let d_ok = db.lhs <= db.bound * (1.0 + 1e-10);
            bad_contraction += usize::from(!c_ok);
            bad_drift += usize::from(!d_ok);
            table.push_numbers(&[
                d as f64,
                condition_number(&sigma)?,
                cb.lambda_min,
                cb.trace_over_d,
                f64::from(u8::from(c_ok)),
                db.lhs,
                db.bound,
                f64::from(u8::from(d_ok)),
            ]);
        }
    }
    let res = SeedResult {
        summary: vec![format!(
            "seed {seed}: {} matrices, contraction violations {bad_contraction}, drift violations {bad_drift}",
            table.rows.len()
        )],
        outputs: vec![Output {
            name: format!("bounds_seed{seed}"),
            table,
            plot_columns: &[],
        }],
        failure: None,
    };
    Ok(res)
}

fn stein_variance(c: &SteinVarianceCommand, seed: u64) -> Result<SeedResult> {
    let weights = c.target_weights.clone().unwrap_or_else(|| {
        let mut w = vec![0.0; c.d];
        w[0] = 1.0;
        w
    });
    let est = drift_variance_experiment(&c.distributions, c.sigma_scale, c.d, c.n, &weights, &mut Rng::new(seed))?;
    let mut table = Table::new(&["distribution", "mean", "variance", "std_error", "n"]);
    let mut line = format!("seed {seed}:");
    for e in &est {
        table.push(vec![
            e.dist.name().to_string(),
            fmt_f64(e.mean),
            fmt_f64(e.variance),
            fmt_f64(e.std_error),
            e.n.to_string(),
        ]);
        line += &format!(" var[{}] {:.6e}", e.dist, e.variance);
    }
    Ok(SeedResult {
        outputs: vec![Output {
            name: format!("stein_seed{seed}"),
            table,
            plot_columns: &[],
        }],
        summary: vec![line],
        failure: None,
    })
}
