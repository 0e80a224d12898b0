//! Command-line front end: data simulation, pipeline fitting, set
//! prediction, heatmap grids, diagnostics, and experiment sweeps.
//!
//! Exit codes: 0 success, 2 I/O, 3 config, 4 numeric/fit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ccluster::clustering::ClustererSpec;
use ccluster::conformal::{fit_conformal_pipeline, ConformalPipeline, PipelineConfig};
use ccluster::core::{Dataset, RandomSeed};
use ccluster::error::Error;
use ccluster::evaluate::{run_diagnostics, DiagnosticsReport};
use ccluster::simulate::{generate_mixture_data, run_experiment, ExperimentConfig, GeneratorConfig};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "ccluster", version, about = "Split conformal clustering with stochastic labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArgs {
    /// Root RNG seed (all randomness derives from it).
    #[arg(long)]
    seed: u64,
    /// RNG stream id.
    #[arg(long, default_value_t = 0)]
    stream: u64,
}

impl SeedArgs {
    fn seed(&self) -> RandomSeed {
        RandomSeed {
            seed: self.seed,
            stream: self.stream,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled sample from a mixture generator config.
    Simulate {
        /// JSON config with fields `generator` and `n`.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArgs,
        /// Output CSV for the feature matrix.
        #[arg(long)]
        features_out: PathBuf,
        /// Output CSV for the true labels.
        #[arg(long)]
        labels_out: PathBuf,
    },
    /// Fit a split conformal clustering pipeline on a data CSV.
    Fit {
        /// JSON pipeline config (k, alpha, mode, clusterer, classifier).
        #[arg(long)]
        config: PathBuf,
        /// Feature CSV (header row; comment lines start with '#').
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        seed: SeedArgs,
        /// Output path for the pipeline JSON artifact.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit confidence sets for query points under a fitted pipeline.
    PredictSets {
        /// Pipeline JSON artifact written by `fit`.
        #[arg(long)]
        pipeline: PathBuf,
        /// Query feature CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV: row, set_size, members.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate set sizes over a rectangular grid (2-D pipelines only).
    Heatmap {
        /// JSON config with grid bounds and resolution.
        #[arg(long)]
        config: PathBuf,
        /// Pipeline JSON artifact written by `fit`.
        #[arg(long)]
        pipeline: PathBuf,
        /// Output CSV: x1, x2, set_size, members.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate consistency/stability diagnostics and the coverage bound.
    Diagnostics {
        /// JSON config: generator, clusterer, alpha, n_grid, reps.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArgs,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep-by-method-by-replication simulation experiment.
    Experiment {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        seed: SeedArgs,
        /// Output CSV with one row per cell-replication.
        #[arg(long)]
        tidy_out: PathBuf,
        /// Output CSV with one row per aggregated cell.
        #[arg(long)]
        aggregate_out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) => 2,
        Error::InvalidArgument(_) | Error::Json(_) => 3,
        _ => 4,
    }
}

fn read_config_with_hash(path: &Path) -> Result<(Vec<u8>, String), Error> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok((bytes, format!("{:x}", hasher.finalize())))
}

fn parse_config<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, Error> {
    serde_json::from_slice(bytes).map_err(Error::from)
}

// write-then-rename so an interrupted run never leaves a partial file
fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), Error> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn provenance(config_hash: &str, seed: Option<RandomSeed>) -> String {
    let mut s = String::new();
    writeln!(s, "# tool_version={TOOL_VERSION}").unwrap();
    writeln!(s, "# config_hash={config_hash}").unwrap();
    if let Some(seed) = seed {
        writeln!(s, "# seed={} stream={}", seed.seed, seed.stream).unwrap();
    }
    s
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    generator: GeneratorConfig,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineArtifact {
    tool_version: String,
    config_hash: String,
    pipeline: ConformalPipeline,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatmapConfig {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    nx: usize,
    ny: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnosticsConfig {
    generator: GeneratorConfig,
    #[serde(default)]
    clusterer: ClustererSpec,
    alpha: f64,
    n_grid: Vec<usize>,
    reps: usize,
}

#[derive(Debug, Serialize)]
struct DiagnosticsArtifact {
    tool_version: String,
    config_hash: String,
    seed: RandomSeed,
    alpha: f64,
    reports: Vec<DiagnosticsReport>,
}

fn cmd_simulate(
    config: &Path,
    seed: RandomSeed,
    features_out: &Path,
    labels_out: &Path,
) -> Result<(), Error> {
    let (bytes, hash) = read_config_with_hash(config)?;
    let cfg: SimulateConfig = parse_config(&bytes)?;
    cfg.generator.validate()?;
    let (x, y) = generate_mixture_data(&cfg.generator, cfg.n, seed)?;

    let mut features = provenance(&hash, Some(seed));
    let header: Vec<String> = (1..=x.dim()).map(|j| format!("x{j}")).collect();
    writeln!(features, "{}", header.join(",")).unwrap();
    for i in 0..x.n() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(features, "{}", row.join(",")).unwrap();
    }
    atomic_write(features_out, features.as_bytes())?;

    let mut labels = provenance(&hash, Some(seed));
    writeln!(labels, "label").unwrap();
    for &l in y.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    atomic_write(labels_out, labels.as_bytes())?;

    println!(
        "simulated n={} p={} K={} family={:?} -> {} / {}",
        x.n(),
        x.dim(),
        cfg.generator.k,
        cfg.generator.family,
        features_out.display(),
        labels_out.display()
    );
    Ok(())
}

fn cmd_fit(config: &Path, data: &Path, seed: RandomSeed, out: &Path) -> Result<(), Error> {
    let (bytes, hash) = read_config_with_hash(config)?;
    let cfg: PipelineConfig = parse_config(&bytes)?;
    let x = Dataset::from_csv(data)?;
    let pipeline = fit_conformal_pipeline(&x, &cfg, seed)?;

    let threshold = if pipeline.threshold.is_finite() {
        pipeline.threshold.to_string()
    } else {
        "inf".to_string()
    };
    println!("threshold q_hat = {threshold}");
    println!("alignment sigma_hat = {:?}", pipeline.alignment.map());
    println!(
        "calibration scores: n={} min={} median={} max={}",
        pipeline.score_summary.n_calib,
        pipeline.score_summary.min,
        pipeline.score_summary.median,
        pipeline.score_summary.max
    );

    let artifact = PipelineArtifact {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash,
        pipeline,
    };
    let json = serde_json::to_string_pretty(&artifact).map_err(Error::from)?;
    atomic_write(out, json.as_bytes())?;
    println!("pipeline written to {}", out.display());
    Ok(())
}

fn load_pipeline(path: &Path) -> Result<PipelineArtifact, Error> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

fn members_field(members: &[usize]) -> String {
    members
        .iter()
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn cmd_predict_sets(pipeline: &Path, data: &Path, out: &Path) -> Result<(), Error> {
    let artifact = load_pipeline(pipeline)?;
    let x = Dataset::from_csv(data)?;
    let sets = ccluster::conformal::predict_sets(&artifact.pipeline, &x)?;

    let mut csv = provenance(&artifact.config_hash, None);
    writeln!(csv, "row,set_size,members").unwrap();
    for (i, set) in sets.iter().enumerate() {
        writeln!(csv, "{},{},{}", i, set.size(), members_field(set.members())).unwrap();
    }
    atomic_write(out, csv.as_bytes())?;
    println!("{} sets written to {}", sets.len(), out.display());
    Ok(())
}

fn cmd_heatmap(config: &Path, pipeline: &Path, out: &Path) -> Result<(), Error> {
    let (bytes, hash) = read_config_with_hash(config)?;
    let cfg: HeatmapConfig = parse_config(&bytes)?;
    if cfg.nx < 1 || cfg.ny < 1 {
        return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
    }
    if !(cfg.xmax > cfg.xmin && cfg.ymax > cfg.ymin) {
        return Err(Error::InvalidArgument(
            "grid bounds must satisfy xmax > xmin and ymax > ymin".into(),
        ));
    }
    let artifact = load_pipeline(pipeline)?;
    let pipe = &artifact.pipeline;
    if pipe.predictor.input_dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "heatmap requires a 2-dimensional pipeline, got p = {}",
            pipe.predictor.input_dim()
        )));
    }

    let coord = |lo: f64, hi: f64, steps: usize, i: usize| {
        if steps == 1 {
            (lo + hi) / 2.0
        } else {
            lo + (hi - lo) * i as f64 / (steps - 1) as f64
        }
    };
    let mut csv = provenance(&hash, None);
    writeln!(csv, "x1,x2,set_size,members").unwrap();
    for iy in 0..cfg.ny {
        let x2 = coord(cfg.ymin, cfg.ymax, cfg.ny, iy);
        for ix in 0..cfg.nx {
            let x1 = coord(cfg.xmin, cfg.xmax, cfg.nx, ix);
            let set = pipe.predict_set(&[x1, x2])?;
            writeln!(
                csv,
                "{},{},{},{}",
                x1,
                x2,
                set.size(),
                members_field(set.members())
            )
            .unwrap();
        }
    }
    atomic_write(out, csv.as_bytes())?;
    println!("{} grid cells written to {}", cfg.nx * cfg.ny, out.display());
    Ok(())
}

fn cmd_diagnostics(config: &Path, seed: RandomSeed, out: &Path) -> Result<(), Error> {
    let (bytes, hash) = read_config_with_hash(config)?;
    let cfg: DiagnosticsConfig = parse_config(&bytes)?;
    cfg.generator.validate()?;
    if cfg.n_grid.is_empty() {
        return Err(Error::InvalidArgument("n_grid must be nonempty".into()));
    }
    let mut reports = Vec::with_capacity(cfg.n_grid.len());
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        let report = run_diagnostics(
            &cfg.clusterer,
            &cfg.generator,
            cfg.alpha,
            n,
            cfg.reps,
            seed.child(i as u64),
        )?;
        println!(
            "n={} E_hat={} S_hat_upper={} bound_rhs={}",
            report.n, report.e_hat, report.s_hat_upper, report.bound_rhs
        );
        reports.push(report);
    }
    let artifact = DiagnosticsArtifact {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash,
        seed,
        alpha: cfg.alpha,
        reports,
    };
    let json = serde_json::to_string_pretty(&artifact).map_err(Error::from)?;
    atomic_write(out, json.as_bytes())?;
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_experiment(
    config: &Path,
    seed: RandomSeed,
    tidy_out: &Path,
    aggregate_out: &Path,
) -> Result<(), Error> {
    let (bytes, hash) = read_config_with_hash(config)?;
    let cfg: ExperimentConfig = parse_config(&bytes)?;
    let result = run_experiment(&cfg, seed)?;

    let mut tidy = provenance(&hash, Some(seed));
    writeln!(tidy, "sweep_value,method,rep,ok,coverage,mean_set_size").unwrap();
    for r in &result.records {
        writeln!(
            tidy,
            "{},{},{},{},{},{}",
            r.sweep_value,
            r.method.name(),
            r.rep,
            r.ok,
            r.coverage,
            r.mean_set_size
        )
        .unwrap();
    }
    atomic_write(tidy_out, tidy.as_bytes())?;

    let mut agg = provenance(&hash, Some(seed));
    writeln!(
        agg,
        "sweep_value,method,n_ok,n_failed,invalid,mean_coverage,se_coverage,mean_set_size,se_set_size"
    )
    .unwrap();
    for a in &result.aggregates {
        writeln!(
            agg,
            "{},{},{},{},{},{},{},{},{}",
            a.sweep_value,
            a.method.name(),
            a.n_ok,
            a.n_failed,
            a.invalid,
            a.mean_coverage,
            a.se_coverage,
            a.mean_set_size,
            a.se_set_size
        )
        .unwrap();
    }
    atomic_write(aggregate_out, agg.as_bytes())?;

    println!(
        "{} records, {} aggregates written to {} / {}",
        result.records.len(),
        result.aggregates.len(),
        tidy_out.display(),
        aggregate_out.display()
    );
    if result.any_invalid() {
        return Err(Error::Diagnostics {
            failed: result.aggregates.iter().filter(|a| a.invalid).count(),
            total: result.aggregates.len(),
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate {
            config,
            seed,
            features_out,
            labels_out,
        } => cmd_simulate(config, seed.seed(), features_out, labels_out),
        Command::Fit {
            config,
            data,
            seed,
            out,
        } => cmd_fit(config, data, seed.seed(), out),
        Command::PredictSets {
            pipeline,
            data,
            out,
        } => cmd_predict_sets(pipeline, data, out),
        Command::Heatmap {
            config,
            pipeline,
            out,
        } => cmd_heatmap(config, pipeline, out),
        Command::Diagnostics { config, seed, out } => cmd_diagnostics(config, seed.seed(), out),
        Command::Experiment {
            config,
            seed,
            tidy_out,
            aggregate_out,
        } => cmd_experiment(config, seed.seed(), tidy_out, aggregate_out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
