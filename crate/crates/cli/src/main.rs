//! `granterra`: command-line front end for the granular-terrain leg-force
//! toolkit. One subcommand per pipeline stage — simulate a scenario, ingest
//! trace files into a manifest, train a reduced surrogate, predict at a new
//! rotation speed, cross-validate, assimilate sparse observations, and run
//! the cross-morphology scaling analysis.
//!
//! Exit codes: 0 on success, 2 on validation/input errors, 3 on numerical
//! failures. All file writes are atomic (write to a temp sibling, rename).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use granterra_core::pipeline::{
    self, AssimilateScenarioOptions, DatasetManifest, PipelineError, Prediction, TrainMode,
    TrainOptions, TrainedModel,
};
use granterra_core::ropf;
use granterra_core::sim::{run_leg_rotation, RawSample, ScenarioConfig};
use granterra_core::tensor::DEFAULT_THRESHOLDS;

#[derive(Parser)]
#[command(
    name = "granterra",
    version,
    about = "Predict drag and lift forces on a rotating robot leg in granular terrain"
)]
struct Cli {
    /// Override the seed of every seeded stage (lattice jitter, GP restarts,
    /// assimilation resampling). Defaults come from the input artifacts.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one leg-rotation scenario and write its force trace.
    Simulate(SimulateArgs),
    /// Collect trace CSVs (each with a same-stem JSON sidecar) into a manifest.
    Ingest(IngestArgs),
    /// Train a reduced surrogate for one leg design.
    Train(TrainArgs),
    /// Predict a force trace with 95% bands at a new rotation speed.
    Predict(PredictArgs),
    /// Leave-one-out cross-validation over a design's training conditions.
    Crossval(CrossvalArgs),
    /// Update a model prediction with sparse force observations.
    Assimilate(AssimilateArgs),
    /// Cross-morphology scaling collapse of maximum drag and lift.
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Trace CSV output; a metadata sidecar lands next to it with a `.json`
    /// extension (default: the config's `output`, else `<config>.trace.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw window-averaged force samples to this CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory holding trace CSV + metadata JSON pairs.
    #[arg(long)]
    dir: PathBuf,
    /// Manifest JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Points in the common θ grid simulation traces are resampled onto.
    #[arg(long, default_value_t = 128)]
    trace_points: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest JSON (from `ingest`).
    #[arg(long)]
    manifest: PathBuf,
    /// Leg design: flat, c_leg, reversed_c, l_leg, reversed_l.
    #[arg(long)]
    design: String,
    /// Foot-length fraction; needed only when the manifest holds several
    /// values for the design.
    #[arg(long)]
    fl: Option<f64>,
    /// Mode-energy retention thresholds: condition,behavior,angle
    /// (default 0.95,1.0,0.95).
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Coefficient-surrogate layout: joint | per-behavior.
    #[arg(long, default_value = "joint")]
    mode: TrainMode,
    /// Evidence-maximization restarts per coefficient GP.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Trained model JSON output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model JSON (from `train`).
    #[arg(long)]
    model: PathBuf,
    /// Rotation speed ω in rad/s.
    #[arg(long)]
    omega: f64,
    /// Prediction CSV output (mean and 95% band per behavior); a small JSON
    /// sidecar records the speed and the extrapolation flag.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrossvalArgs {
    /// Dataset manifest JSON (from `ingest`).
    #[arg(long)]
    manifest: PathBuf,
    /// Leg design: flat, c_leg, reversed_c, l_leg, reversed_l.
    #[arg(long)]
    design: String,
    /// Foot-length fraction; needed only when the manifest holds several
    /// values for the design.
    #[arg(long)]
    fl: Option<f64>,
    /// Mode-energy retention thresholds: condition,behavior,angle
    /// (default 0.95,1.0,0.95).
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Coefficient-surrogate layout: joint | per-behavior.
    #[arg(long, default_value = "joint")]
    mode: TrainMode,
    /// Evidence-maximization restarts per coefficient GP.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Cross-validation report JSON output path.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct AssimilateArgs {
    /// Trained model JSON (from `train`).
    #[arg(long)]
    model: PathBuf,
    /// Rotation speed ω in rad/s of the observed scenario.
    #[arg(long)]
    omega: f64,
    /// Observations CSV with header `theta_rad,behavior,value`
    /// (behavior 0 = drag fx, 1 = lift fz).
    #[arg(long)]
    obs: PathBuf,
    /// Measurement noise std per behavior: fx,fz (default: estimated from
    /// the observations themselves).
    #[arg(long, value_delimiter = ',')]
    noise_std: Option<Vec<f64>>,
    /// Particle-filter ensemble size.
    #[arg(long)]
    particles: Option<usize>,
    /// Updated trace CSV output; the full assimilation record (prior,
    /// posterior, diagnostics) lands next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    /// Dataset manifest JSON covering several morphologies (from `ingest`).
    #[arg(long)]
    manifest: PathBuf,
    /// Scaling report JSON output path.
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Ingest(args) => ingest(args),
        Command::Train(args) => train(cli, args),
        Command::Predict(args) => predict(args),
        Command::Crossval(args) => crossval(cli, args),
        Command::Assimilate(args) => assimilate(cli, args),
        Command::Scaling(args) => scaling(args),
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), PipelineError> {
    let mut cfg = ScenarioConfig::from_json(&read_text(&args.config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_path = args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| args.config.with_extension("trace.csv"));

    log::info!(
        "simulating {} ({} leg, ω = {} rad/s)",
        args.config.display(),
        cfg.leg.morphology.name(),
        cfg.schedule.omega
    );
    let run = run_leg_rotation(&cfg)?;

    match &run.trace {
        Some(trace) => {
            pipeline::write_atomic(&out_path, &trace.to_csv())?;
            pipeline::write_atomic(&out_path.with_extension("json"), &run.metadata.to_json())?;
        }
        None => {
            // A static hold has no θ sweep to resample; the raw time series
            // is the product.
            pipeline::write_atomic(&out_path, &raw_csv(&run.raw))?;
            log::info!("static scenario (ω = 0): wrote raw samples, no trace");
        }
    }
    if let Some(raw_path) = &args.raw {
        pipeline::write_atomic(raw_path, &raw_csv(&run.raw))?;
    }
    let diagnostics = serde_json::json!({
        "schema_version": granterra_core::SCHEMA_VERSION,
        "config_digest": cfg.digest(),
        "diagnostics": run.diagnostics,
    });
    pipeline::write_atomic(
        &out_path.with_extension("diagnostics.json"),
        &serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize"),
    )?;

    let d = &run.diagnostics;
    println!(
        "simulate: {} particles, {} steps (dt = {:.3e} s), settled = {}, \
         max momentum residual = {:.3e} -> {}",
        d.n_particles,
        d.n_steps,
        d.dt,
        d.settled,
        d.max_momentum_residual,
        out_path.display()
    );
    Ok(())
}

fn raw_csv(samples: &[RawSample]) -> String {
    let mut out = String::with_capacity(48 * (samples.len() + 1));
    out.push_str("t_s,theta_rad,fx_N_per_m,fz_N_per_m\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.t, s.theta_rad, s.fx_n_per_m, s.fz_n_per_m
        ));
    }
    out
}

fn ingest(args: &IngestArgs) -> Result<(), PipelineError> {
    let manifest = pipeline::ingest(&args.dir, args.trace_points)?;
    pipeline::write_atomic(&args.out, &manifest.to_json())?;
    let n_sim = manifest
        .scenarios
        .iter()
        .filter(|r| r.source == "simulation")
        .count();
    println!(
        "ingest: {} scenarios ({} simulation, {} experiment) -> {}",
        manifest.scenarios.len(),
        n_sim,
        manifest.scenarios.len() - n_sim,
        args.out.display()
    );
    Ok(())
}

fn parse_thresholds(raw: &Option<Vec<f64>>) -> Result<[f64; 3], PipelineError> {
    match raw {
        None => Ok(DEFAULT_THRESHOLDS),
        Some(v) => <[f64; 3]>::try_from(v.clone()).map_err(|v: Vec<f64>| {
            PipelineError::Invalid(format!(
                "--thresholds needs exactly 3 comma-separated values, got {}",
                v.len()
            ))
        }),
    }
}

fn train_options(
    cli: &Cli,
    thresholds: &Option<Vec<f64>>,
    mode: TrainMode,
    restarts: usize,
) -> Result<TrainOptions, PipelineError> {
    let mut opts = TrainOptions {
        thresholds: parse_thresholds(thresholds)?,
        mode,
        restarts,
        ..TrainOptions::default()
    };
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    Ok(opts)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<(), PipelineError> {
    let manifest = DatasetManifest::from_json(&read_text(&args.manifest)?)?;
    let opts = train_options(cli, &args.thresholds, args.mode, args.restarts)?;
    let model = pipeline::train(&manifest, &args.design, args.fl, &opts)?;
    pipeline::write_atomic(&args.out, &model.to_json())?;
    println!(
        "train: {} (fl = {}) over {} conditions, {} coefficient GPs -> {}",
        model.morphology,
        model.fl,
        model.train_omegas.len(),
        model.n_coefficients(),
        args.out.display()
    );
    Ok(())
}

fn prediction_csv(p: &Prediction) -> String {
    let mut out = String::with_capacity(96 * (p.mean.len() + 1));
    out.push_str(
        "theta_rad,fx_N_per_m,fz_N_per_m,fx_lower95,fx_upper95,fz_lower95,fz_upper95\n",
    );
    for i in 0..p.mean.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.mean.theta_rad[i],
            p.mean.fx_n_per_m[i],
            p.mean.fz_n_per_m[i],
            p.lower95.fx_n_per_m[i],
            p.upper95.fx_n_per_m[i],
            p.lower95.fz_n_per_m[i],
            p.upper95.fz_n_per_m[i],
        ));
    }
    out
}

fn predict(args: &PredictArgs) -> Result<(), PipelineError> {
    let model = TrainedModel::from_json(&read_text(&args.model)?)?;
    let pred = model.predict(args.omega)?;
    if pred.extrapolation {
        log::warn!(
            "ω = {} rad/s lies well outside the training range [{}, {}]; \
             treat the bands as optimistic",
            args.omega,
            model.train_omegas.first().unwrap(),
            model.train_omegas.last().unwrap()
        );
    }
    pipeline::write_atomic(&args.out, &prediction_csv(&pred))?;
    let sidecar = serde_json::json!({
        "schema_version": granterra_core::SCHEMA_VERSION,
        "morphology": model.morphology,
        "fl": model.fl,
        "omega_rad_per_s": pred.omega_rad_per_s,
        "extrapolation": pred.extrapolation,
    });
    pipeline::write_atomic(
        &args.out.with_extension("json"),
        &serde_json::to_string_pretty(&sidecar).expect("sidecar serialize"),
    )?;
    println!(
        "predict: {} (fl = {}) at ω = {} rad/s{} -> {}",
        model.morphology,
        model.fl,
        args.omega,
        if pred.extrapolation {
            " [extrapolation]"
        } else {
            ""
        },
        args.out.display()
    );
    Ok(())
}

fn crossval(cli: &Cli, args: &CrossvalArgs) -> Result<(), PipelineError> {
    let manifest = DatasetManifest::from_json(&read_text(&args.manifest)?)?;
    let opts = train_options(cli, &args.thresholds, args.mode, args.restarts)?;
    let report = pipeline::crossval_loo(&manifest, &args.design, args.fl, &opts)?;
    pipeline::write_atomic(&args.report, &report.to_json())?;
    println!(
        "crossval: {} folds; mean relative error fx = {:.4}, fz = {:.4} \
         (edges {:.4}/{:.4}, interior {:.4}/{:.4}) -> {}",
        report.folds.len(),
        report.mean_error[0],
        report.mean_error[1],
        report.edge_mean_error[0],
        report.edge_mean_error[1],
        report.interior_mean_error[0],
        report.interior_mean_error[1],
        args.report.display()
    );
    Ok(())
}

fn assimilate(cli: &Cli, args: &AssimilateArgs) -> Result<(), PipelineError> {
    let model = TrainedModel::from_json(&read_text(&args.model)?)?;
    let observations = ropf::read_observations_csv(&read_text(&args.obs)?)?;
    let mut opts = AssimilateScenarioOptions::default();
    if let Some(ns) = &args.noise_std {
        let pair = <[f64; 2]>::try_from(ns.clone()).map_err(|v: Vec<f64>| {
            PipelineError::Invalid(format!(
                "--noise-std needs exactly 2 comma-separated values (fx,fz), got {}",
                v.len()
            ))
        })?;
        opts.measurement_noise_std = Some(pair);
    }
    if let Some(n) = args.particles {
        opts.ropf.n_particles = n;
    }
    if let Some(seed) = cli.seed {
        opts.ropf.seed = seed;
    }
    let out = pipeline::assimilate_scenario(&model, args.omega, &observations, &opts)?;
    pipeline::write_atomic(&args.out, &out.updated_trace.to_csv())?;
    pipeline::write_atomic(&args.out.with_extension("json"), &out.to_json())?;
    let resamples: usize = out.block_results.iter().map(|b| b.n_resamples).sum();
    println!(
        "assimilate: {} observations at ω = {} rad/s, {} resampling events -> {}",
        observations.len(),
        args.omega,
        resamples,
        args.out.display()
    );
    Ok(())
}

fn scaling(args: &ScalingArgs) -> Result<(), PipelineError> {
    let manifest = DatasetManifest::from_json(&read_text(&args.manifest)?)?;
    let report = pipeline::scaling_analysis(&manifest)?;
    pipeline::write_atomic(&args.report, &report.to_json())?;
    println!(
        "scaling: {} morphologies at {} common speeds -> {}",
        report.morphologies.len(),
        report.omegas.len(),
        args.report.display()
    );
    for (k, &omega) in report.omegas.iter().enumerate() {
        println!(
            "  ω = {:>6.3} rad/s: drag CoV {:.4} -> {:.4}, lift CoV {:.4} -> {:.4}",
            omega,
            report.cov_drag_raw[k],
            report.cov_drag_scaled[k],
            report.cov_lift_raw[k],
            report.cov_lift_scaled[k]
        );
    }
    Ok(())
}
