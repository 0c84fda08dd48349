//! Command-line entry point: run the case-study problems, override
//! hyperparameters, persist weights, and export metrics and prediction
//! grids for plotting.
//!
//! Every run writes to the output directory: `manifest.json` (the resolved
//! configuration), `history.csv`, `prediction.csv`, `metrics.json`, and
//! optionally `weights.pfw.json`. Exit codes: 0 success, 1 usage error,
//! 2 aborted on a non-finite loss.

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use pinn_core::data::{load_csv, save_csv, SampleSet};
use pinn_core::net::{load_weights, save_weights, write_json_f17, Activation};
use pinn_core::problems::burgers::{burgers_problem, BcStyle, BurgersConfig};
use pinn_core::problems::curve_fit::{curve_fit_problem, CurveFitConfig};
use pinn_core::problems::gradcheck::run_gradcheck;
use pinn_core::problems::ns_inverse::{ns_inverse_problem, taylor_green_dataset, NsInverseConfig};
use pinn_core::problems::von_mises::{vonmises_check, MaterialParams};
use pinn_core::problems::vpinn_heat::{vpinn_heat_problem, VpinnConfig, WeakMode};
use pinn_core::problems::Metrics;
use pinn_core::train::{TrainError, TrainHistory};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NON_FINITE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "pinn",
    about = "Physics-informed network training problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Curve fitting of sin(x)sin(y), optionally physics-constrained.
    Fit(FitArgs),
    /// Viscous Burgers equation with initial/boundary conditions.
    Burgers(BurgersArgs),
    /// Navier-Stokes coefficient identification on a Taylor-Green dataset.
    NsInverse(NsArgs),
    /// Weak-form heat equation with a pre-trained neural test function.
    VpinnHeat(VpinnArgs),
    /// Von Mises residual validity battery (no training).
    VonmisesCheck(VonMisesArgs),
    /// Finite-difference check of reverse-mode gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Output directory for manifest, history, prediction, and metrics.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Training epochs (0 skips training).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (omit for the problem default).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for weight init, sampling, and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layers as WIDTHxCOUNT (e.g. 20x8).
    #[arg(long)]
    layers: Option<String>,
    /// Hidden activation: tanh | sigmoid | relu.
    #[arg(long)]
    activation: Option<String>,
    /// Save trained weights to weights.pfw.json in the output directory.
    #[arg(long)]
    save_weights: bool,
    /// Load weights from a .pfw.json file before (optional) training.
    #[arg(long)]
    load_weights: Option<PathBuf>,
    /// Print a progress line every N epochs.
    #[arg(long, default_value_t = 0)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Impose the governing equation as an extra zero target.
    #[arg(long)]
    constrained: bool,
    /// Evaluation grid resolution per axis.
    #[arg(long, default_value_t = 101)]
    eval_grid: usize,
}

#[derive(Args, Debug)]
struct BurgersArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Boundary-condition style: ids | sign.
    #[arg(long, default_value = "ids")]
    bc_style: String,
    /// Random interior collocation points.
    #[arg(long, default_value_t = 10_000)]
    collocation: usize,
    /// Viscosity (defaults to 0.01/pi).
    #[arg(long)]
    nu: Option<f64>,
}

#[derive(Args, Debug)]
struct NsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Kinematic viscosity of the manufactured dataset.
    #[arg(long, default_value_t = 0.01)]
    nu: f64,
    /// Number of random space-time samples.
    #[arg(long, default_value_t = 5_000)]
    samples: usize,
    /// Upper end of the sampled time interval.
    #[arg(long, default_value_t = 1.0)]
    t_max: f64,
    /// CSV dataset with columns t,x,y,u,v (replaces the manufactured one).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VpinnArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Quadrature resolution per axis.
    #[arg(long, default_value_t = 70)]
    quad: usize,
    /// Weak-form loss mode: integral | pointwise.
    #[arg(long, default_value = "integral")]
    weak_form: String,
    /// Pre-training epochs for the test function.
    #[arg(long)]
    q_epochs: Option<usize>,
    /// Evaluation grid resolution per axis.
    #[arg(long, default_value_t = 101)]
    eval_grid: usize,
}

#[derive(Args, Debug)]
struct VonMisesArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of random stress/strain states.
    #[arg(long, default_value_t = 10_000)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configurations per op kind.
    #[arg(long, default_value_t = 20)]
    configs: usize,
}

/// Parse "WIDTHxCOUNT" into a hidden-layer list.
fn parse_layers(spec: &str) -> Result<Vec<usize>, String> {
    let (w, n) = spec
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{spec}` is not WIDTHxCOUNT (e.g. 20x8)"))?;
    let width: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad layer width `{w}`"))?;
    let count: usize = n
        .trim()
        .parse()
        .map_err(|_| format!("bad layer count `{n}`"))?;
    if width == 0 || count == 0 {
        return Err("layer width and count must be positive".into());
    }
    Ok(vec![width; count])
}

fn parse_activation(name: &str) -> Result<Activation, String> {
    Activation::parse(name).ok_or_else(|| format!("unknown activation `{name}`"))
}

#[derive(Serialize)]
struct MetricsDoc {
    relative_l2: f64,
    l_inf: f64,
    final_loss: f64,
    #[serde(flatten)]
    params: BTreeMap<String, f64>,
}

fn write_metrics(path: &Path, metrics: &Metrics) -> std::io::Result<()> {
    write_json_f17(
        path,
        &MetricsDoc {
            relative_l2: metrics.relative_l2,
            l_inf: metrics.l_inf,
            final_loss: metrics.final_loss,
            params: metrics.params.clone(),
        },
    )
}

fn write_history(path: &Path, history: &TrainHistory) -> std::io::Result<()> {
    let mut buf = Vec::new();
    history.write_csv(&mut buf)?;
    std::fs::write(path, buf)
}

struct RunError {
    code: i32,
    message: String,
}

impl<E: std::fmt::Display> From<E> for RunError {
    fn from(e: E) -> Self {
        RunError {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

type RunResult = Result<(), RunError>;

fn non_finite(e: TrainError) -> RunError {
    let code = match e {
        TrainError::NonFiniteLoss { .. } => EXIT_NON_FINITE,
        _ => EXIT_USAGE,
    };
    RunError {
        code,
        message: e.to_string(),
    }
}

/// Run with explicit arguments; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Burgers(args) => run_burgers(args),
        Command::NsInverse(args) => run_ns(args),
        Command::VpinnHeat(args) => run_vpinn(args),
        Command::VonmisesCheck(args) => run_vonmises(args),
        Command::Gradcheck(args) => run_gradcheck_cmd(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn prepare_out(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)
}

fn run_fit(args: FitArgs) -> RunResult {
    let mut cfg = CurveFitConfig {
        constrained: args.constrained,
        seed: args.common.seed,
        eval_grid: args.eval_grid,
        ..CurveFitConfig::default()
    };
    if let Some(e) = args.common.epochs {
        cfg.epochs = e;
    }
    if args.common.batch_size.is_some() {
        cfg.batch_size = args.common.batch_size;
    }
    if let Some(lr) = args.common.lr {
        cfg.learning_rate = lr;
    }
    if let Some(spec) = &args.common.layers {
        cfg.hidden = parse_layers(spec)?;
    }
    if let Some(act) = &args.common.activation {
        cfg.activation = parse_activation(act)?;
    }
    prepare_out(&args.common.out)?;
    write_json_f17(
        args.common.out.join("manifest.json"),
        &serde_json::json!({
            "problem": "fit",
            "constrained": cfg.constrained,
            "hidden": cfg.hidden,
            "activation": cfg.activation.name(),
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "eval_grid": cfg.eval_grid,
            "load_weights": args.common.load_weights,
        }),
    )?;

    let mut problem = curve_fit_problem(&cfg)?;
    if let Some(path) = &args.common.load_weights {
        load_weights(
            path,
            &problem.graph,
            &mut problem.store,
            &[&problem.functional],
            &[],
        )?;
    }
    let history = if cfg.epochs > 0 {
        problem.train().map_err(|e| match e {
            pinn_core::problems::ProblemError::Train(t) => non_finite(t),
            other => RunError::from(other),
        })?
    } else {
        TrainHistory::default()
    };
    let (prediction, mut metrics) = problem.evaluate()?;
    metrics.final_loss = history.final_loss();
    write_history(&args.common.out.join("history.csv"), &history)?;
    save_csv(args.common.out.join("prediction.csv"), &prediction)?;
    write_metrics(&args.common.out.join("metrics.json"), &metrics)?;
    if args.common.save_weights {
        save_weights(
            args.common.out.join("weights.pfw.json"),
            "fit",
            &problem.graph,
            &problem.store,
            &[&problem.functional],
            &[],
        )?;
    }
    println!(
        "fit: relative_l2 {:.6e}, l_inf {:.6e}",
        metrics.relative_l2, metrics.l_inf
    );
    Ok(())
}

fn run_burgers(args: BurgersArgs) -> RunResult {
    let bc_style = match args.bc_style.as_str() {
        "ids" => BcStyle::Ids,
        "sign" => BcStyle::SignMask,
        other => return Err(format!("unknown bc style `{other}` (ids | sign)").into()),
    };
    let mut cfg = BurgersConfig {
        bc_style,
        collocation: args.collocation,
        seed: args.common.seed,
        ..BurgersConfig::default()
    };
    if let Some(nu) = args.nu {
        cfg.nu = nu;
    }
    if let Some(e) = args.common.epochs {
        cfg.epochs = e;
    }
    if args.common.batch_size.is_some() {
        cfg.batch_size = args.common.batch_size;
    }
    if let Some(lr) = args.common.lr {
        cfg.learning_rate = lr;
    }
    if let Some(spec) = &args.common.layers {
        cfg.hidden = parse_layers(spec)?;
    }
    if let Some(act) = &args.common.activation {
        cfg.activation = parse_activation(act)?;
    }
    prepare_out(&args.common.out)?;
    write_json_f17(
        args.common.out.join("manifest.json"),
        &serde_json::json!({
            "problem": "burgers",
            "bc_style": args.bc_style,
            "hidden": cfg.hidden,
            "activation": cfg.activation.name(),
            "collocation": cfg.collocation,
            "n_initial": cfg.n_initial,
            "n_boundary": cfg.n_boundary,
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "nu": cfg.nu,
            "seed": cfg.seed,
            "eval_times": cfg.eval_times,
            "reference_cells": cfg.reference_cells,
            "load_weights": args.common.load_weights,
        }),
    )?;

    let mut problem = burgers_problem(&cfg)?;
    if let Some(path) = &args.common.load_weights {
        load_weights(path, &problem.graph, &mut problem.store, &[&problem.u], &[])?;
    }
    let history = if cfg.epochs > 0 {
        problem.train().map_err(|e| match e {
            pinn_core::problems::ProblemError::Train(t) => non_finite(t),
            other => RunError::from(other),
        })?
    } else {
        TrainHistory::default()
    };
    let (prediction, mut metrics) = problem.evaluate()?;
    metrics.final_loss = history.final_loss();
    write_history(&args.common.out.join("history.csv"), &history)?;
    save_csv(args.common.out.join("prediction.csv"), &prediction)?;
    write_metrics(&args.common.out.join("metrics.json"), &metrics)?;
    if args.common.save_weights {
        save_weights(
            args.common.out.join("weights.pfw.json"),
            "burgers",
            &problem.graph,
            &problem.store,
            &[&problem.u],
            &[],
        )?;
    }
    println!(
        "burgers: relative_l2 {:.6e}, l_inf {:.6e}",
        metrics.relative_l2, metrics.l_inf
    );
    Ok(())
}

fn run_ns(args: NsArgs) -> RunResult {
    let mut cfg = NsInverseConfig {
        nu: args.nu,
        samples: args.samples,
        t_range: (0.0, args.t_max),
        seed: args.common.seed,
        ..NsInverseConfig::default()
    };
    if let Some(e) = args.common.epochs {
        cfg.epochs = e;
    }
    if args.common.batch_size.is_some() {
        cfg.batch_size = args.common.batch_size;
    }
    if let Some(lr) = args.common.lr {
        cfg.learning_rate = lr;
    }
    if let Some(spec) = &args.common.layers {
        cfg.hidden = parse_layers(spec)?;
    }
    if let Some(act) = &args.common.activation {
        cfg.activation = parse_activation(act)?;
    }
    prepare_out(&args.common.out)?;
    write_json_f17(
        args.common.out.join("manifest.json"),
        &serde_json::json!({
            "problem": "ns-inverse",
            "nu": cfg.nu,
            "samples": cfg.samples,
            "t_range": [cfg.t_range.0, cfg.t_range.1],
            "hidden": cfg.hidden,
            "activation": cfg.activation.name(),
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "decay": cfg.decay,
            "seed": cfg.seed,
            "dataset": args.dataset,
        }),
    )?;

    let dataset: SampleSet = match &args.dataset {
        Some(path) => load_csv(path, &["t", "x", "y", "u", "v"])?,
        None => taylor_green_dataset(cfg.nu, cfg.samples, cfg.t_range, cfg.seed),
    };
    let mut problem = ns_inverse_problem(&dataset, &cfg)?;
    if let Some(path) = &args.common.load_weights {
        load_weights(
            path,
            &problem.graph,
            &mut problem.store,
            &[&problem.p_net, &problem.psi_net],
            &[&problem.lamb1, &problem.lamb2],
        )?;
    }
    let history = if cfg.epochs > 0 {
        problem.train().map_err(|e| match e {
            pinn_core::problems::ProblemError::Train(t) => non_finite(t),
            other => RunError::from(other),
        })?
    } else {
        TrainHistory::default()
    };
    let (prediction, mut metrics) = problem.evaluate()?;
    metrics.final_loss = history.final_loss();
    write_history(&args.common.out.join("history.csv"), &history)?;
    save_csv(args.common.out.join("prediction.csv"), &prediction)?;
    write_metrics(&args.common.out.join("metrics.json"), &metrics)?;
    if args.common.save_weights {
        save_weights(
            args.common.out.join("weights.pfw.json"),
            "ns-inverse",
            &problem.graph,
            &problem.store,
            &[&problem.p_net, &problem.psi_net],
            &[&problem.lamb1, &problem.lamb2],
        )?;
    }
    println!(
        "ns-inverse: lamb1 {:.6}, lamb2 {:.6}",
        metrics.params.get("lamb1").unwrap_or(&f64::NAN),
        metrics.params.get("lamb2").unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn run_vpinn(args: VpinnArgs) -> RunResult {
    let weak_mode = match args.weak_form.as_str() {
        "integral" => WeakMode::Integral,
        "pointwise" => WeakMode::Pointwise,
        other => {
            return Err(format!("unknown weak-form mode `{other}` (integral | pointwise)").into())
        }
    };
    let mut cfg = VpinnConfig {
        n_quad: args.quad,
        weak_mode,
        seed: args.common.seed,
        eval_grid: args.eval_grid,
        ..VpinnConfig::default()
    };
    if let Some(e) = args.common.epochs {
        cfg.t_epochs = e;
    }
    if let Some(q) = args.q_epochs {
        cfg.q_epochs = q;
    }
    if let Some(lr) = args.common.lr {
        cfg.t_learning_rate = lr;
    }
    if let Some(spec) = &args.common.layers {
        cfg.t_hidden = parse_layers(spec)?;
    }
    prepare_out(&args.common.out)?;
    write_json_f17(
        args.common.out.join("manifest.json"),
        &serde_json::json!({
            "problem": "vpinn-heat",
            "n_quad": cfg.n_quad,
            "weak_form": args.weak_form,
            "q_hidden": cfg.q_hidden,
            "t_hidden": cfg.t_hidden,
            "q_epochs": cfg.q_epochs,
            "q_learning_rate": cfg.q_learning_rate,
            "q_boundary_weight": cfg.q_boundary_weight,
            "q_interior_weight": cfg.q_interior_weight,
            "t_epochs": cfg.t_epochs,
            "t_learning_rate": cfg.t_learning_rate,
            "t_decay": cfg.t_decay,
            "bc_weight": cfg.bc_weight,
            "seed": cfg.seed,
            "eval_grid": cfg.eval_grid,
            "load_weights": args.common.load_weights,
        }),
    )?;

    let mut problem = vpinn_heat_problem(&cfg)?;
    let mut history = TrainHistory::default();
    if let Some(path) = &args.common.load_weights {
        load_weights(
            path,
            &problem.graph,
            &mut problem.store,
            &[&problem.q_net, &problem.t_net],
            &[],
        )?;
    } else {
        problem.pretrain_test_function().map_err(|e| match e {
            pinn_core::problems::ProblemError::Train(t) => non_finite(t),
            other => RunError::from(other),
        })?;
        if cfg.t_epochs > 0 {
            history = problem.train().map_err(|e| match e {
                pinn_core::problems::ProblemError::Train(t) => non_finite(t),
                other => RunError::from(other),
            })?;
        }
    }
    let injected = problem.weak_sum_injected()?;
    let (prediction, mut metrics) = problem.evaluate()?;
    metrics.final_loss = history.final_loss();
    metrics.params.insert("weak_sum_injected".into(), injected);
    write_history(&args.common.out.join("history.csv"), &history)?;
    save_csv(args.common.out.join("prediction.csv"), &prediction)?;
    write_metrics(&args.common.out.join("metrics.json"), &metrics)?;
    if args.common.save_weights {
        save_weights(
            args.common.out.join("weights.pfw.json"),
            "vpinn-heat",
            &problem.graph,
            &problem.store,
            &[&problem.q_net, &problem.t_net],
            &[],
        )?;
    }
    println!(
        "vpinn-heat: relative_l2 {:.6e}, injected weak sum {:.3e}",
        metrics.relative_l2, injected
    );
    Ok(())
}

fn run_vonmises(args: VonMisesArgs) -> RunResult {
    prepare_out(&args.out)?;
    write_json_f17(
        args.out.join("manifest.json"),
        &serde_json::json!({
            "problem": "vonmises-check",
            "states": args.states,
            "seed": args.seed,
        }),
    )?;
    let report = vonmises_check(args.states, args.seed, &MaterialParams::default())?;
    let mut metrics = Metrics::default();
    let labels = [
        "pressure", "dev_xx", "dev_yy", "dev_zz", "dev_xy", "yield", "momentum_x", "momentum_y",
    ];
    let mut worst = 0.0f64;
    for (label, value) in labels.iter().zip(report.elastic_residuals) {
        metrics
            .params
            .insert(format!("elastic_residual_{label}"), value);
        worst = worst.max(value);
    }
    metrics.params.insert(
        "pebar_violations".into(),
        report.pebar_violations as f64,
    );
    metrics
        .params
        .insert("max_strain_trace".into(), report.max_strain_trace);
    metrics
        .params
        .insert("max_stress_trace".into(), report.max_stress_trace);
    metrics.l_inf = worst;
    write_metrics(&args.out.join("metrics.json"), &metrics)?;
    println!(
        "vonmises-check: max elastic residual {worst:.3e}, pebar violations {}",
        report.pebar_violations
    );
    if worst < 1e-8 && report.pebar_violations == 0 {
        Ok(())
    } else {
        Err(RunError {
            code: EXIT_USAGE,
            message: "residual validity check failed".into(),
        })
    }
}

fn run_gradcheck_cmd(args: GradcheckArgs) -> RunResult {
    let report = run_gradcheck(args.seed, args.configs)?;
    for (label, err) in &report.cases {
        println!("{label:>16}: max relative error {err:.3e}");
    }
    println!("max relative error: {:.3e}", report.max_rel_error);
    if report.passed(1e-5) {
        Ok(())
    } else {
        Err(RunError {
            code: EXIT_USAGE,
            message: format!(
                "gradient check failed: max relative error {:.3e}",
                report.max_rel_error
            ),
        })
    }
}
