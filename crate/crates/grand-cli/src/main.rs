//! Command-line driver: diffusion runs, training, evaluation, and the
//! solver/rewiring/depth experiment sweeps, each emitting CSV (plus an SVG
//! sketch) and exactly one manifest under `--out`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.

mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use grand_core::attention::build_attention;
use grand_core::data::{
    load_dataset, save_dataset, synth_grid_image, synth_sbm, Dataset, GridShape,
};
use grand_core::dynamics::LinearDynamics;
use grand_core::field::NodeField;
use grand_core::model::{
    forward, load_checkpoint, save_checkpoint, DiffusionSpace, GrandModel, ModelDims, Variant,
};
use grand_core::rewire::{RewireConfig, RewireMethod};
use grand_core::solver::{integrate, SchemeConfig, SchemeKind};
use grand_core::stability::{envelope_monitor, FIXED_STEP_SLACK};
use grand_core::train::{depth_sweep, evaluate, train, train_on_space, TrainConfig};
use grand_core::{GrandError, Result};

use report::{fmt, hash_dataset_dir, write_csv, write_line_chart, ManifestBuilder};

#[derive(Parser)]
#[command(name = "grand", version, about = "Graph diffusion engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diffuse encoded node features to time T and dump the state and trace.
    Diffuse(DiffuseArgs),
    /// Train a model and save metrics plus the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Accuracy as a function of the integration horizon.
    DepthSweep(DepthSweepArgs),
    /// Compare schemes on one frozen system over a step-size grid.
    SolverCompare(SolverCompareArgs),
    /// Densification sparsity sweep: edges kept vs speed vs accuracy.
    RewireSweep(RewireSweepArgs),
    /// Generate a planted-partition dataset in the canonical layout.
    SynthSbm(SynthSbmArgs),
    /// Generate a grid-image dataset in the canonical layout.
    SynthGrid(SynthGridArgs),
}

#[derive(Args, serde::Serialize)]
struct ModelFlags {
    /// Hidden width of the diffusing state.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Key dimension per attention head.
    #[arg(long, default_value_t = 8)]
    dk: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Skip input feature row-normalization.
    #[arg(long, default_value_t = false)]
    no_normalize: bool,
}

#[derive(Args, serde::Serialize)]
struct SchemeFlags {
    /// Scheme: explicit-euler | implicit-euler | rk4 | ab4 | am4-pc | dopri5 | expm.
    #[arg(long, default_value = "rk4")]
    scheme: String,
    /// Step size (fixed-step) or initial step (adaptive).
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Integration horizon T.
    #[arg(long, default_value_t = 4.0)]
    t: f64,
    /// Tolerance scale: atol = ts*1e-12, rtol = ts*1e-6.
    #[arg(long, default_value_t = 1.0)]
    ts: f64,
}

impl SchemeFlags {
    fn to_config(&self) -> Result<SchemeConfig> {
        let kind: SchemeKind = self.scheme.parse()?;
        Ok(SchemeConfig::with(kind, self.tau, self.t).with_tolerance_scale(self.ts))
    }
}

#[derive(Args, serde::Serialize)]
struct RewireFlags {
    /// Rewire method: ppr | attention-threshold.
    #[arg(long)]
    rewire: Option<String>,
    /// Teleport probability for densification.
    #[arg(long, default_value_t = 0.15)]
    alpha: f64,
    /// Coefficients kept per node during densification.
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Attention threshold for runtime edge selection.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
}

impl RewireFlags {
    fn to_config(&self) -> Result<Option<RewireConfig>> {
        match self.rewire.as_deref() {
            None => Ok(None),
            Some(name) => {
                let method = match name {
                    "ppr" => RewireMethod::Ppr,
                    "attention-threshold" => RewireMethod::AttentionThreshold,
                    other => {
                        return Err(GrandError::InvalidConfig(format!(
                            "unknown rewire method '{other}'"
                        )))
                    }
                };
                Ok(Some(RewireConfig {
                    method,
                    alpha: self.alpha,
                    k: self.k,
                    rho: self.rho,
                    allow_self_loops: true,
                }))
            }
        }
    }
}

#[derive(Args, serde::Serialize)]
struct DiffuseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "grand-l")]
    variant: String,
    #[command(flatten)]
    scheme: SchemeFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "grand-l")]
    variant: String,
    #[command(flatten)]
    scheme: SchemeFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    rewire: RewireFlags,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Optimizer: adam | sgd.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Early-stop patience on validation accuracy; 0 disables.
    #[arg(long, default_value_t = 0)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = false)]
    no_normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct DepthSweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "grand-nl")]
    variant: String,
    /// Comma-separated horizons.
    #[arg(long, default_value = "2,4,8,16,32")]
    t_values: String,
    /// Also train the uniform-diffusivity baseline per horizon.
    #[arg(long, default_value_t = false)]
    baseline: bool,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct SolverCompareArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated scheme names.
    #[arg(long, default_value = "ab4,am4-pc,dopri5")]
    schemes: String,
    /// Comma-separated step sizes.
    #[arg(long, default_value = "0.005,0.1,0.2,0.5,1.0")]
    taus: String,
    #[arg(long, default_value_t = 5.0)]
    t: f64,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct RewireSweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated kept-coefficient counts, descending.
    #[arg(long, default_value = "32,16,8,4,2")]
    k_values: String,
    #[arg(long, default_value_t = 0.15)]
    alpha: f64,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 4.0)]
    t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct SynthSbmArgs {
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct SynthGridArgs {
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    /// Shape: disk | background.
    #[arg(long, default_value = "disk")]
    shape: String,
    #[arg(long, default_value_t = 0.6)]
    radius_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    std::process::exit(code);
}

fn init_thread_pool() {
    if let Ok(raw) = std::env::var("GRAND_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                grand_core::set_thread_cap(n);
            }
        }
    }
}

fn exit_code_for(e: &GrandError) -> i32 {
    match e {
        GrandError::InvalidConfig(_)
        | GrandError::UnsupportedConfig(_)
        | GrandError::DimensionMismatch { .. } => 2,
        GrandError::SolverDiverged { .. }
        | GrandError::CorrectorStalled { .. }
        | GrandError::StepSizeUnderflow { .. }
        | GrandError::TrajectoryDiverged { .. }
        | GrandError::TrainingDiverged { .. }
        | GrandError::DenseLimitExceeded { .. }
        | GrandError::Generator(_) => 3,
        GrandError::Io(_) | GrandError::Json(_) | GrandError::DataFormat { .. } => 4,
        GrandError::DataInvariant(_) => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Diffuse(args) => cmd_diffuse(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::DepthSweep(args) => cmd_depth_sweep(args),
        Command::SolverCompare(args) => cmd_solver_compare(args),
        Command::RewireSweep(args) => cmd_rewire_sweep(args),
        Command::SynthSbm(args) => cmd_synth_sbm(args),
        Command::SynthGrid(args) => cmd_synth_grid(args),
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| GrandError::InvalidConfig(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn model_for_dataset(
    data: &Dataset,
    flags: &ModelFlags,
    variant: Variant,
    scheme: SchemeConfig,
    rewire: Option<RewireConfig>,
    seed: u64,
) -> Result<GrandModel> {
    let dims = ModelDims {
        d_in: data.d_in(),
        hidden: flags.hidden,
        classes: data.classes.max(1),
        d_k: flags.dk,
        heads: flags.heads,
    };
    GrandModel::init(dims, variant, scheme, rewire, seed)
}

fn write_state_csv(path: &Path, state: &NodeField) -> Result<()> {
    let mut rows = Vec::with_capacity(state.n());
    for row in state.values().rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        rows.push(cells.join(","));
    }
    let text = rows.join("\n") + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trace_csv(path: &Path, trace: &grand_core::solver::SolverTrace) -> Result<()> {
    let rows: Vec<String> = trace
        .records
        .iter()
        .map(|r| {
            let min = r.min.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = r.max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            format!(
                "{},{},{},{},{}",
                fmt(r.t),
                fmt(r.tau),
                r.error_estimate.map_or(String::new(), fmt),
                fmt(min),
                fmt(max)
            )
        })
        .collect();
    write_csv(path, "t,tau,err,min,max", &rows)
}

fn cmd_diffuse(args: DiffuseArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "variant": args.variant, "scheme": args.scheme,
        "model": args.model, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("diffuse", config, args.seed, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.model.no_normalize)?;
    let variant: Variant = args.variant.parse()?;
    let scheme = args.scheme.to_config()?;
    let model = model_for_dataset(&data, &args.model, variant, scheme, None, args.seed)?;
    let space = DiffusionSpace::base_only(&data.graph);

    let out = forward(&model, &space, &data.features_field())?;

    let state_path = args.out.join("x_t.csv");
    write_state_csv(&state_path, &out.state)?;
    manifest.record(&state_path);
    let trace_path = args.out.join("trace.csv");
    write_trace_csv(&trace_path, &out.trace)?;
    manifest.record(&trace_path);

    let violations = envelope_monitor(&out.trace, FIXED_STEP_SLACK);
    println!(
        "diffused to t={} in {} steps; envelope violations: {}",
        out.trace.final_t(),
        out.trace.accepted_steps(),
        violations.len()
    );
    manifest.finish()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "variant": args.variant, "scheme": args.scheme,
        "model": args.model, "rewire": args.rewire, "epochs": args.epochs,
        "lr": args.lr, "optimizer": args.optimizer, "weight_decay": args.weight_decay,
        "patience": args.patience, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("train", config, args.seed, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.model.no_normalize)?;
    let variant: Variant = args.variant.parse()?;
    let scheme = args.scheme.to_config()?;
    let rewire = args.rewire.to_config()?;
    let model = model_for_dataset(&data, &args.model, variant, scheme, rewire, args.seed)?;

    let optimizer = match args.optimizer.as_str() {
        "adam" => grand_core::train::OptimizerKind::Adam,
        "sgd" => grand_core::train::OptimizerKind::Sgd,
        other => return Err(GrandError::InvalidConfig(format!("unknown optimizer '{other}'"))),
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        optimizer,
        seed: args.seed,
        weight_decay: args.weight_decay,
        patience: args.patience,
    };
    let outcome = train(model, &data, &cfg)?;

    let metrics_path = args.out.join("metrics.csv");
    let rows: Vec<String> = outcome
        .history
        .iter()
        .map(|m| format!("{},{},{},{}", m.epoch, fmt(m.train_loss), fmt(m.val_acc), fmt(m.test_acc)))
        .collect();
    write_csv(&metrics_path, "epoch,train_loss,val_acc,test_acc", &rows)?;
    manifest.record(&metrics_path);

    let ckpt_path = args.out.join("checkpoint.json");
    save_checkpoint(&outcome.model, &ckpt_path)?;
    manifest.record(&ckpt_path);

    let summary_path = args.out.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "best_epoch": outcome.best_epoch,
            "best_val_acc": outcome.best_val_acc,
            "test_acc": outcome.test_acc,
        }))?,
    )?;
    manifest.record(&summary_path);

    println!(
        "best val acc {:.4} at epoch {}; test acc {:.4}",
        outcome.best_val_acc, outcome.best_epoch, outcome.test_acc
    );
    manifest.finish()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "checkpoint": args.checkpoint, "no_normalize": args.no_normalize,
    });
    let mut manifest = ManifestBuilder::new("eval", config, 0, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.no_normalize)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let (train_loss, val_acc, test_acc) = evaluate(&model, &data)?;

    let eval_path = args.out.join("eval.json");
    std::fs::write(
        &eval_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "train_loss": train_loss, "val_acc": val_acc, "test_acc": test_acc,
        }))?,
    )?;
    manifest.record(&eval_path);
    println!("val acc {val_acc:.4}; test acc {test_acc:.4}");
    manifest.finish()
}

fn cmd_depth_sweep(args: DepthSweepArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "variant": args.variant, "t_values": args.t_values,
        "baseline": args.baseline, "model": args.model, "epochs": args.epochs,
        "lr": args.lr, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("depth-sweep", config, args.seed, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.model.no_normalize)?;
    let horizons: Vec<f64> = parse_list(&args.t_values, "horizon")?;
    let variant: Variant = args.variant.parse()?;
    let scheme = SchemeConfig::with(SchemeKind::Rk4, 1.0, horizons[0]);
    let template = model_for_dataset(&data, &args.model, variant, scheme, None, args.seed)?;
    let cfg = TrainConfig { epochs: args.epochs, lr: args.lr, seed: args.seed, ..Default::default() };

    let points = depth_sweep(&template, &data, &cfg, &horizons, args.baseline)?;

    let csv_path = args.out.join("depth.csv");
    let rows: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "{},{},{}",
                fmt(p.t_end),
                fmt(p.accuracy),
                p.baseline_accuracy.map_or(String::new(), fmt)
            )
        })
        .collect();
    write_csv(&csv_path, "t,accuracy,baseline_accuracy", &rows)?;
    manifest.record(&csv_path);

    let mut series = vec![(
        args.variant.clone(),
        points.iter().map(|p| (p.t_end, p.accuracy)).collect::<Vec<_>>(),
    )];
    if args.baseline {
        series.push((
            "uniform".to_string(),
            points
                .iter()
                .filter_map(|p| p.baseline_accuracy.map(|b| (p.t_end, b)))
                .collect(),
        ));
    }
    let svg_path = args.out.join("depth.svg");
    write_line_chart(&svg_path, "accuracy vs depth", "T", "test accuracy", &series, false, false)?;
    manifest.record(&svg_path);

    for p in &points {
        println!(
            "T={:<6} acc={:.4}{}",
            p.t_end,
            p.accuracy,
            p.baseline_accuracy.map_or(String::new(), |b| format!(" baseline={b:.4}"))
        );
    }
    manifest.finish()
}

#[derive(serde::Serialize)]
struct CompareRow {
    scheme: String,
    tau: f64,
    wall_clock_s: f64,
    error_vs_reference: f64,
    diverged: bool,
}

fn cmd_solver_compare(args: SolverCompareArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "schemes": args.schemes, "taus": args.taus, "t": args.t,
        "model": args.model, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("solver-compare", config, args.seed, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.model.no_normalize)?;
    let schemes: Vec<String> = parse_list(&args.schemes, "scheme")?;
    let taus: Vec<f64> = parse_list(&args.taus, "step size")?;

    // frozen system: attention at the encoded input of a seeded model
    let scheme = SchemeConfig::with(SchemeKind::Dopri5, 0.1, args.t);
    let model =
        model_for_dataset(&data, &args.model, Variant::GrandL, scheme, None, args.seed)?;
    let space = DiffusionSpace::base_only(&data.graph);
    let x0 = model.encode(&data.features_field())?;
    let attention = build_attention(&model.attention, &x0, space.active_pattern())?;

    // tight-tolerance adaptive run as the reference
    let reference = {
        let dynamics = LinearDynamics::new(attention.clone());
        let mut cfg = SchemeConfig::with(SchemeKind::Dopri5, 0.1, args.t);
        cfg.atol = 1e-10;
        cfg.rtol = 1e-8;
        integrate(&dynamics, &x0, &cfg)?.state
    };
    let ref_scale = reference.inf_norm().max(1e-12);
    let initial_amp = x0.inf_norm();

    let mut rows = Vec::new();
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for scheme_name in &schemes {
        let kind: SchemeKind = scheme_name.parse()?;
        let mut pts = Vec::new();
        for &tau in &taus {
            let dynamics = LinearDynamics::new(attention.clone());
            let mut cfg = SchemeConfig::with(kind, tau, args.t);
            cfg.jacobi_max_iters = Some(200_000);
            cfg.pc_max_iters = 500;
            let started = std::time::Instant::now();
            let outcome = integrate(&dynamics, &x0, &cfg);
            let wall = started.elapsed().as_secs_f64();
            let (err, diverged) = match outcome {
                Ok(sol) => {
                    let rel = sol.state.inf_dist(&reference) / ref_scale;
                    let blown = sol.state.inf_norm() > 2.0 * initial_amp.max(1e-12) || rel > 0.5;
                    (rel, blown)
                }
                Err(_) => (f64::INFINITY, true),
            };
            rows.push(CompareRow {
                scheme: scheme_name.clone(),
                tau,
                wall_clock_s: wall,
                error_vs_reference: err,
                diverged,
            });
            if err.is_finite() {
                pts.push((tau, err.max(1e-16)));
            }
        }
        series.push((scheme_name.clone(), pts));
    }

    let csv_path = args.out.join("compare.csv");
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.scheme,
                fmt(r.tau),
                fmt(r.wall_clock_s),
                if r.error_vs_reference.is_finite() { fmt(r.error_vs_reference) } else { "inf".into() },
                r.diverged
            )
        })
        .collect();
    write_csv(&csv_path, "scheme,tau,wall_clock_s,error_vs_reference,diverged", &csv_rows)?;
    manifest.record(&csv_path);

    let svg_path = args.out.join("compare.svg");
    write_line_chart(&svg_path, "error vs step size", "tau", "relative error", &series, true, true)?;
    manifest.record(&svg_path);

    for r in &rows {
        println!(
            "{:<16} tau={:<8} err={:<12.4e} {}  ({:.3}s)",
            r.scheme,
            r.tau,
            r.error_vs_reference,
            if r.diverged { "DIVERGED" } else { "stable" },
            r.wall_clock_s
        );
    }
    manifest.finish()
}

fn cmd_rewire_sweep(args: RewireSweepArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "data": args.data, "k_values": args.k_values, "alpha": args.alpha,
        "model": args.model, "epochs": args.epochs, "lr": args.lr, "t": args.t,
        "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("rewire-sweep", config, args.seed, &args.out)
        .with_input_hash(hash_dataset_dir(&args.data)?);

    let data = load_dataset(&args.data, !args.model.no_normalize)?;
    let k_values: Vec<usize> = parse_list(&args.k_values, "K")?;
    let cfg = TrainConfig { epochs: args.epochs, lr: args.lr, seed: args.seed, ..Default::default() };

    let mut rows = Vec::new();
    let mut acc_series = Vec::new();
    let mut time_series = Vec::new();
    for &k in &k_values {
        let rewire = RewireConfig {
            method: RewireMethod::Ppr,
            alpha: args.alpha,
            k,
            rho: 0.0,
            allow_self_loops: true,
        };
        let scheme = SchemeConfig::with(SchemeKind::Rk4, 1.0, args.t);
        let model = model_for_dataset(
            &data,
            &args.model,
            Variant::GrandNl,
            scheme,
            Some(rewire.clone()),
            args.seed,
        )?;
        // densify outside the timed region
        let space = DiffusionSpace::prepare(&data.graph, Some(&rewire))?;
        let edges = space.active_pattern().nnz();
        let started = std::time::Instant::now();
        let outcome = train_on_space(model, &data, &space, &cfg)?;
        let secs_per_epoch = started.elapsed().as_secs_f64() / outcome.history.len() as f64;

        rows.push(format!("{k},{edges},{},{}", fmt(secs_per_epoch), fmt(outcome.test_acc)));
        acc_series.push((k as f64, outcome.test_acc));
        time_series.push((k as f64, secs_per_epoch));
        println!(
            "K={k:<6} edges={edges:<8} sec/epoch={secs_per_epoch:<10.5} acc={:.4}",
            outcome.test_acc
        );
    }

    let csv_path = args.out.join("rewire.csv");
    write_csv(&csv_path, "k,edges,secs_per_epoch,accuracy", &rows)?;
    manifest.record(&csv_path);

    let svg_path = args.out.join("rewire.svg");
    write_line_chart(
        &svg_path,
        "sparsification tradeoff",
        "K",
        "value",
        &[
            ("accuracy".to_string(), acc_series),
            ("sec/epoch".to_string(), time_series),
        ],
        false,
        false,
    )?;
    manifest.record(&svg_path);
    manifest.finish()
}

fn cmd_synth_sbm(args: SynthSbmArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "blocks": args.blocks, "n": args.n, "p_in": args.p_in, "p_out": args.p_out,
        "noise": args.noise, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("synth-sbm", config, args.seed, &args.out);
    let data = synth_sbm(args.blocks, args.n, args.p_in, args.p_out, args.noise, args.seed)?;
    save_dataset(&data, &args.out)?;
    for name in ["edges.tsv", "features.csv", "labels.txt", "splits.json"] {
        manifest.record(&args.out.join(name));
    }
    println!(
        "generated {} nodes, {} edges, {} classes",
        data.n(),
        data.graph.edge_count(),
        data.classes
    );
    manifest.finish()
}

fn cmd_synth_grid(args: SynthGridArgs) -> Result<()> {
    ensure_out(&args.out)?;
    let config = serde_json::json!({
        "width": args.width, "height": args.height, "shape": args.shape,
        "radius_frac": args.radius_frac, "seed": args.seed,
    });
    let mut manifest = ManifestBuilder::new("synth-grid", config, args.seed, &args.out);
    let shape = match args.shape.as_str() {
        "disk" => GridShape::Disk { radius_frac: args.radius_frac },
        "background" => GridShape::Background,
        other => return Err(GrandError::InvalidConfig(format!("unknown shape '{other}'"))),
    };
    let data = synth_grid_image(args.width, args.height, shape, args.seed)?;
    save_dataset(&data, &args.out)?;
    for name in ["edges.tsv", "features.csv", "labels.txt", "splits.json"] {
        manifest.record(&args.out.join(name));
    }
    println!("generated {}x{} grid ({} nodes)", args.width, args.height, data.n());
    manifest.finish()
}
