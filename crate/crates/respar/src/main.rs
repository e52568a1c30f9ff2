//! Command-line front end: `dynamics`, `scaling`, `diagnose` and `baseline`
//! subcommands over the library's experiment harness. Exit status: 0 on
//! success, 1 on usage errors, 2 on runtime failures.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use respar::baselines;
use respar::harness::{
    self, auto_n, BaselineChoice, BaselineRunConfig, DiagnoseConfig, DynamicsConfig, RipModeArg,
    ScalingConfig, ScalingMethod,
};
use respar::model::{default_lambda, LambdaSpec, TrainConfig};

#[derive(Parser)]
#[command(
    name = "respar",
    about = "Train the reparametrized sparse-regression model and benchmark interpolators",
    version
)]
struct Cli {
    /// Config file with `key=value` lines; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the full model on one instance and write the trace CSV plus a
    /// JSON summary sidecar.
    Dynamics(DynamicsArgs),
    /// Sweep dimensions × seeds × methods and write the summary CSV.
    Scaling(ScalingArgs),
    /// Print the regularity report (and optionally estimate the RIP
    /// constant) for one instance.
    Diagnose(DiagnoseArgs),
    /// Run a single interpolating baseline and emit its CSV row.
    Baseline(BaselineArgs),
}

#[derive(Args, Clone, Default)]
struct InstanceArgs {
    /// Ambient dimension d.
    #[arg(long)]
    d: Option<usize>,
    /// Sample count; defaults to round(3*sqrt(d)).
    #[arg(long)]
    n: Option<usize>,
    /// Target sparsity (3 gives the three-spike target).
    #[arg(long)]
    s: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    /// Step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Initialization scale for w and u.
    #[arg(long)]
    alpha: Option<f64>,
    /// Second-order scale: a number, or "auto" for the default rule.
    #[arg(long)]
    lambda: Option<String>,
    /// Multiplier applied on top of the resolved lambda.
    #[arg(long)]
    lambda_scale: Option<f64>,
    /// Stop when the training loss reaches this value.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    record_every: Option<u64>,
}

#[derive(Args)]
struct DynamicsArgs {
    #[command(flatten)]
    inst: InstanceArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Threshold constant for the stage-1 end detector.
    #[arg(long)]
    stage1_const: Option<f64>,
    /// Trace CSV path (required; the `.summary.json` sidecar lands next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Comma-separated ascending dimensions, e.g. 400,1600,6400,25600.
    #[arg(long)]
    d_values: Option<String>,
    /// Seeds per dimension.
    #[arg(long)]
    seeds: Option<usize>,
    /// Comma-separated subset of full,hybrid,second-order.
    #[arg(long)]
    methods: Option<String>,
    /// Target sparsity (3 gives the three-spike target).
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Initialization scale for the full model.
    #[arg(long)]
    alpha: Option<f64>,
    /// Stop the GD methods at this training loss.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lambda_scale: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
    /// Parallel sweep workers (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Summary CSV path (required).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    inst: InstanceArgs,
    /// RIP sparsity order; defaults to s+1.
    #[arg(long)]
    rip_k: Option<usize>,
    /// off | exhaustive | monte-carlo
    #[arg(long)]
    rip_mode: Option<String>,
    /// Support samples for monte-carlo mode.
    #[arg(long)]
    rip_samples: Option<usize>,
    /// Load the instance from a SIL1 file instead of generating it.
    #[arg(long)]
    load_instance: Option<PathBuf>,
    /// Dump the generated instance in SIL1 format.
    #[arg(long)]
    save_instance: Option<PathBuf>,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    inst: InstanceArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// min-l2 | lasso | hybrid | second-order
    #[arg(long)]
    method: Option<String>,
    /// L1 penalty for the lasso method; defaults to sigma*sqrt(ln(d)/n).
    #[arg(long)]
    l1_penalty: Option<f64>,
    /// Comma-separated grid multipliers for the hybrid.
    #[arg(long)]
    grid: Option<String>,
    /// Hold out this fraction of rows for hybrid penalty selection instead
    /// of the oracle rule.
    #[arg(long)]
    validation_frac: Option<f64>,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `key=value` file contents; CLI flags override these entries.
struct Overlay {
    map: HashMap<String, String>,
}

impl Overlay {
    fn load(path: Option<&PathBuf>) -> Result<Self, String> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("config line {} is not key=value: {line:?}", idx + 1))?;
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Overlay { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| format!("config key {key}={raw:?} does not parse")),
        }
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let overlay = match Overlay::load(cli.config.as_ref()) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let run = || -> Result<(), CliError> {
        match cli.cmd {
            Cmd::Dynamics(args) => cmd_dynamics(args, &overlay),
            Cmd::Scaling(args) => cmd_scaling(args, &overlay),
            Cmd::Diagnose(args) => cmd_diagnose(args, &overlay),
            Cmd::Baseline(args) => cmd_baseline(args, &overlay),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<String> for CliError {
    fn from(msg: String) -> Self {
        CliError::Usage(msg)
    }
}

impl From<harness::HarnessError> for CliError {
    fn from(e: harness::HarnessError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn resolve_instance(
    args: &InstanceArgs,
    overlay: &Overlay,
    default_d: Option<usize>,
) -> Result<(usize, Option<usize>, usize, f64, u64), CliError> {
    let d = overlay
        .pick(args.d, "d")?
        .or(default_d)
        .ok_or_else(|| CliError::Usage("--d is required".into()))?;
    let n = overlay.pick(args.n, "n")?;
    let s = overlay.pick(args.s, "s")?.unwrap_or(3);
    let sigma = overlay.pick(args.sigma, "sigma")?.unwrap_or(0.1);
    let seed = overlay.pick(args.seed, "seed")?.unwrap_or(1);
    if s == 0 || d == 0 {
        return Err(CliError::Usage("d and s must be positive".into()));
    }
    Ok((d, n, s, sigma, seed))
}

/// Resolves λ from the `--lambda`/`--lambda-scale` pair. `auto` with a scale
/// of exactly 1 stays symbolic so the trainer applies the default rule.
fn resolve_lambda_spec(
    lambda: Option<String>,
    scale: f64,
    n: usize,
    d: usize,
    sigma: f64,
) -> Result<LambdaSpec<f64>, CliError> {
    let lambda = lambda.unwrap_or_else(|| "auto".to_string());
    if lambda == "auto" {
        if (scale - 1.0).abs() < f64::EPSILON {
            Ok(LambdaSpec::Auto)
        } else {
            let base = default_lambda(n, d, sigma).map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(LambdaSpec::Fixed(base * scale))
        }
    } else {
        let v: f64 = lambda.parse().map_err(|_| {
            CliError::Usage(format!(
                "--lambda must be a number or 'auto', got {lambda:?}"
            ))
        })?;
        Ok(LambdaSpec::Fixed(v * scale))
    }
}

fn resolve_train(
    args: &TrainArgs,
    overlay: &Overlay,
    n: usize,
    d: usize,
    sigma: f64,
    default_alpha: f64,
    default_eps: f64,
) -> Result<TrainConfig<f64>, CliError> {
    let eta = overlay.pick(args.eta, "eta")?.unwrap_or(1e-6);
    let alpha = overlay.pick(args.alpha, "alpha")?.unwrap_or(default_alpha);
    let eps = overlay.pick(args.eps, "eps")?.unwrap_or(default_eps);
    let max_iters = overlay
        .pick(args.max_iters, "max-iters")?
        .unwrap_or(20_000_000);
    let record_every = overlay
        .pick(args.record_every, "record-every")?
        .unwrap_or(500);
    let lambda_arg = overlay.pick(args.lambda.clone(), "lambda")?;
    let lambda_scale = overlay
        .pick(args.lambda_scale, "lambda-scale")?
        .unwrap_or(1.0);
    let lambda = resolve_lambda_spec(lambda_arg, lambda_scale, n, d, sigma)?;
    Ok(TrainConfig {
        eta,
        alpha,
        lambda,
        epsilon: eps,
        max_iters,
        record_every,
        stage1_const: 1.0,
    })
}

fn cmd_dynamics(args: DynamicsArgs, overlay: &Overlay) -> Result<(), CliError> {
    // Desk-scale default dimension for the dynamics experiment.
    let (d, n, s, sigma, seed) = resolve_instance(&args.inst, overlay, Some(5000))?;
    let n_resolved = n.unwrap_or_else(|| auto_n(d));
    let mut train = resolve_train(&args.train, overlay, n_resolved, d, sigma, 1e-10, 1e-5)?;
    train.stage1_const = overlay
        .pick(args.stage1_const, "stage1-const")?
        .unwrap_or(1.0);
    let out: Option<PathBuf> = overlay.pick(args.out, "out")?;
    let out = out.ok_or_else(|| CliError::Usage("--out is required for dynamics".into()))?;
    let cfg = DynamicsConfig {
        d,
        n,
        s,
        sigma,
        seed,
        train,
        out: Some(out.clone()),
    };
    let run = harness::run_dynamics(&cfg)?;
    println!("wrote {}", out.display());
    println!("wrote {}", out.with_extension("summary.json").display());
    println!(
        "steps={} stop={} final_train_loss={:.6e} final_test_loss_l2={:.6e} stage1_end_t={}",
        run.summary.steps,
        run.summary.stop,
        run.summary.final_train_loss,
        run.summary.final_test_loss_l2,
        run.summary
            .stage1_end_t
            .map(|t| t.to_string())
            .unwrap_or_else(|| "none".into()),
    );
    Ok(())
}

fn cmd_scaling(args: ScalingArgs, overlay: &Overlay) -> Result<(), CliError> {
    let defaults = ScalingConfig::<f64>::default();
    let d_values = match overlay.pick(args.d_values, "d-values")? {
        Some(raw) => parse_usize_list(&raw)?,
        None => defaults.d_values.clone(),
    };
    let methods = match overlay.pick(args.methods, "methods")? {
        Some(raw) => {
            let mut methods = Vec::new();
            for tok in raw.split(',') {
                let m = ScalingMethod::parse(tok.trim()).ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown method {tok:?}; use full, hybrid, second-order"
                    ))
                })?;
                methods.push(m);
            }
            methods
        }
        None => defaults.methods.clone(),
    };
    let out: Option<PathBuf> = overlay.pick(args.out, "out")?;
    let out = out.ok_or_else(|| CliError::Usage("--out is required for scaling".into()))?;
    let cfg = ScalingConfig {
        d_values,
        seeds_per_d: overlay.pick(args.seeds, "seeds")?.unwrap_or(3),
        s: overlay.pick(args.s, "s")?.unwrap_or(3),
        sigma: overlay.pick(args.sigma, "sigma")?.unwrap_or(0.1),
        methods,
        stop_eps: overlay.pick(args.eps, "eps")?.unwrap_or(1e-4),
        base_seed: overlay.pick(args.seed, "seed")?.unwrap_or(1),
        eta: overlay.pick(args.eta, "eta")?.unwrap_or(1e-6),
        alpha_full: overlay.pick(args.alpha, "alpha")?.unwrap_or(1e-10),
        alpha_second: overlay.get("alpha-second")?.unwrap_or(1e-15),
        lambda_scale: overlay
            .pick(args.lambda_scale, "lambda-scale")?
            .unwrap_or(1.0),
        grid: defaults.grid.clone(),
        max_iters: overlay
            .pick(args.max_iters, "max-iters")?
            .unwrap_or(20_000_000),
        workers: overlay.pick(args.workers, "workers")?.unwrap_or(0),
        out: Some(out.clone()),
    };
    let run = harness::run_scaling(&cfg)?;
    let failures = run.cells.iter().filter(|c| c.result.is_err()).count();
    println!(
        "wrote {} ({} cells, {} failed)",
        out.display(),
        run.cells.len(),
        failures
    );
    Ok(())
}

fn parse_usize_list(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad integer {t:?} in list")))
        })
        .collect()
}

fn cmd_diagnose(args: DiagnoseArgs, overlay: &Overlay) -> Result<(), CliError> {
    // With --load-instance the shape flags are unused; give them inert
    // defaults so the subcommand stays a thin wrapper.
    let (d, n, s, sigma, seed) = if args.load_instance.is_some() {
        (1, None, 1, 0.0, 0)
    } else {
        resolve_instance(&args.inst, overlay, None)?
    };
    let rip_mode = match overlay
        .pick(args.rip_mode, "rip-mode")?
        .unwrap_or_else(|| "off".to_string())
        .as_str()
    {
        "off" => RipModeArg::Off,
        "exhaustive" => RipModeArg::Exhaustive,
        "monte-carlo" | "monte_carlo" => RipModeArg::MonteCarlo,
        other => {
            return Err(CliError::Usage(format!(
                "unknown --rip-mode {other:?}; use off, exhaustive, monte-carlo"
            )))
        }
    };
    let cfg = DiagnoseConfig {
        d,
        n,
        s,
        sigma,
        seed,
        rip_k: overlay.pick(args.rip_k, "rip-k")?,
        rip_mode,
        rip_samples: overlay
            .pick(args.rip_samples, "rip-samples")?
            .unwrap_or(1000),
        load_instance: args.load_instance,
        save_instance: args.save_instance,
        out: overlay.pick(args.out, "out")?,
    };
    let run = harness::run_diagnose(&cfg)?;
    print!("{}", run.lines);
    Ok(())
}

fn cmd_baseline(args: BaselineArgs, overlay: &Overlay) -> Result<(), CliError> {
    let (d, n, s, sigma, seed) = resolve_instance(&args.inst, overlay, None)?;
    let n_resolved = n.unwrap_or_else(|| auto_n(d));
    let method = overlay
        .pick(args.method, "method")?
        .ok_or_else(|| CliError::Usage("--method is required".into()))?;
    let choice = match method.as_str() {
        "min-l2" | "min_l2" => BaselineChoice::MinL2,
        "lasso" => {
            let default_penalty = sigma * ((d as f64).ln() / n_resolved as f64).sqrt();
            let p = overlay
                .pick(args.l1_penalty, "l1-penalty")?
                .unwrap_or(default_penalty);
            if p.is_nan() || p <= 0.0 {
                return Err(CliError::Usage(
                    "--l1-penalty must be positive (or sigma > 0 for the default)".into(),
                ));
            }
            BaselineChoice::Lasso { l1_penalty: p }
        }
        "hybrid" => {
            let grid = match overlay.pick(args.grid, "grid")? {
                Some(raw) => raw
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| CliError::Usage(format!("bad grid entry {t:?}")))
                    })
                    .collect::<Result<Vec<f64>, _>>()?,
                None => vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            };
            BaselineChoice::Hybrid {
                grid,
                validation: overlay.pick(args.validation_frac, "validation-frac")?,
            }
        }
        "second-order" | "second_order" => {
            let train = resolve_train(&args.train, overlay, n_resolved, d, sigma, 1e-15, 1e-4)?;
            BaselineChoice::SecondOrder { train }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown --method {other:?}; use min-l2, lasso, hybrid, second-order"
            )))
        }
    };
    let cfg = BaselineRunConfig {
        d,
        n,
        s,
        sigma,
        seed,
        choice,
        out: overlay.pick(args.out, "out")?,
    };
    let row = harness::run_baseline(&cfg)?;
    println!("{}", baselines::BASELINE_CSV_HEADER);
    println!("{row}");
    Ok(())
}
