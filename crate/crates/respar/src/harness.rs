//! Experiment orchestration: the dynamics run (one instance, full trace, a
//! stage-transition marker and a JSON summary sidecar), the scaling sweep
//! over dimensions and methods, and the regularity diagnostic. All outputs
//! are CSV; a run with a fixed seed produces byte-identical files at any
//! worker count because each sweep cell is internally sequential and rows
//! are emitted in a fixed order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{self, BaselineError, LassoConfig, Selection};
use crate::instance::{
    self, binomial, generate_instance, regularity_report, AssumptionReport, BetaSpec,
    InstanceError, RegressionInstance, EXHAUSTIVE_SUPPORT_CAP,
};
use crate::linalg;
use crate::model::{
    self, detect_stage1_end, LambdaSpec, ModelError, StopReason, TraceRecord, TrainConfig,
    TrainOutcome,
};
use crate::rng::cell_seed;
use crate::Float;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The experiments fix the sample count to `n = round(3√d)`.
pub fn auto_n(d: usize) -> usize {
    (3.0 * (d as f64).sqrt()).round() as usize
}

/// Target generator for a given sparsity: the three-spike vector when
/// `s == 3`, otherwise alternating `±1/√s` spikes on the first `s`
/// coordinates.
pub fn target_spec<F: Float>(s: usize, d: usize) -> BetaSpec<F> {
    if s == 3 {
        return BetaSpec::ThreeSpike;
    }
    let spike = F::one() / F::of_usize(s).sqrt();
    let mut b = ndarray::Array1::zeros(d);
    for k in 0..s.min(d) {
        b[k] = if k % 2 == 0 { spike } else { -spike };
    }
    BetaSpec::ExplicitVector(b)
}

// --- trace CSV ---------------------------------------------------------------

pub const TRACE_CSV_HEADER: &str = "t,train_loss,resid_norm,test_loss_l2,test_loss_sq,\
signal_error_inf,v_norm,v_s_norm,second_order_norm,w_off_inf,u_off_inf,a_t,b_t,gamma_inf,zeta_inf";

/// Renders a trace as CSV with 17-significant-digit floats.
pub fn trace_to_csv<F: Float>(trace: &[TraceRecord<F>]) -> String {
    let mut out = String::with_capacity(64 + trace.len() * 300);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for r in trace {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.train_loss,
            r.resid_norm,
            r.test_loss_l2,
            r.test_loss_l2 * r.test_loss_l2,
            r.signal_error_inf,
            r.v_norm,
            r.v_s_norm,
            r.second_order_norm,
            r.w_off_inf,
            r.u_off_inf,
            r.a_t,
            r.b_t,
            r.gamma_inf,
            r.zeta_inf,
        )
        .expect("writing to String cannot fail");
    }
    out
}

// --- dynamics experiment -----------------------------------------------------

/// Configuration for one dynamics run.
#[derive(Debug, Clone)]
pub struct DynamicsConfig<F: Float> {
    pub d: usize,
    /// `None` resolves to `auto_n(d)`.
    pub n: Option<usize>,
    pub s: usize,
    pub sigma: F,
    pub seed: u64,
    pub train: TrainConfig<F>,
    /// Trace CSV path; a `.summary.json` sidecar lands next to it. `None`
    /// keeps everything in memory.
    pub out: Option<PathBuf>,
}

impl<F: Float> DynamicsConfig<F> {
    /// Experiment defaults at a chosen dimension: `n = round(3√d)`, `s = 3`,
    /// `σ = 0.1`, and the `TrainConfig` defaults (α=1e-10, η=1e-6, ε=1e-5).
    pub fn for_dimension(d: usize, seed: u64) -> Self {
        DynamicsConfig {
            d,
            n: None,
            s: 3,
            sigma: F::cast(0.1),
            seed,
            train: TrainConfig::default(),
            out: None,
        }
    }
}

/// Sidecar metadata for a dynamics run.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicsSummary {
    pub d: usize,
    pub n: usize,
    pub n_rule: String,
    pub s: usize,
    pub sigma: f64,
    pub seed: u64,
    pub lambda: f64,
    pub eta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub stop: String,
    pub final_train_loss: f64,
    pub final_test_loss_l2: f64,
    pub final_test_loss_sq: f64,
    pub stage1_end_t: Option<u64>,
    pub stage1_threshold: f64,
    pub max_gamma_inf: f64,
    pub max_zeta_inf: f64,
    pub max_resid_increase: f64,
    pub wu_min: f64,
    pub wu_max: f64,
    pub b_xi: f64,
    pub xi_norm: f64,
    pub xtxi_norm: f64,
    pub gram_lambda_min: f64,
    pub gram_lambda_max: f64,
    pub ratio_xi_norm: f64,
    pub ratio_b_xi: f64,
    pub ratio_xtxi_norm: f64,
    pub ratio_gram_lambda_min: f64,
    pub ratio_gram_lambda_max: f64,
}

/// Everything a dynamics run produced.
pub struct DynamicsRun<F: Float> {
    pub summary: DynamicsSummary,
    pub trace_csv: String,
    pub outcome: TrainOutcome<F>,
    pub report: AssumptionReport<F>,
    pub instance: RegressionInstance<F>,
}

fn to_f64<F: Float>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// 17-significant-digit float, with non-finite values normalized lowercase.
fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Generates the instance, computes the regularity report, trains the full
/// model with decomposition tracking, detects the stage transition, and
/// writes the trace CSV plus a JSON summary sidecar.
pub fn run_dynamics<F: Float>(cfg: &DynamicsConfig<F>) -> Result<DynamicsRun<F>, HarnessError> {
    let n = cfg.n.unwrap_or_else(|| auto_n(cfg.d));
    let spec = target_spec::<F>(cfg.s, cfg.d);
    let inst = generate_instance(n, cfg.d, cfg.s, cfg.sigma, &spec, cfg.seed)?;
    let report = regularity_report(&inst, cfg.s + 1, 0)?;
    let outcome = model::train(&inst, &cfg.train)?;
    if outcome.stop == StopReason::Diverged {
        return Err(HarnessError::Diverged {
            step: outcome.state.step,
        });
    }
    let stage1_end_t = detect_stage1_end(&outcome.trace, &inst, &report, cfg.train.stage1_const);
    let threshold = cfg.train.stage1_const
        * (report.b_xi + inst.sigma * (F::of_usize(inst.n) / F::of_usize(inst.d)).sqrt());
    let last = outcome
        .trace
        .last()
        .expect("trace always has the initial record");
    let max_gamma = outcome
        .trace
        .iter()
        .map(|r| r.gamma_inf)
        .fold(F::zero(), F::max);
    let max_zeta = outcome
        .trace
        .iter()
        .map(|r| r.zeta_inf)
        .fold(F::zero(), F::max);

    let summary = DynamicsSummary {
        d: cfg.d,
        n,
        n_rule: match cfg.n {
            None => "auto: n = round(3*sqrt(d))".to_string(),
            Some(_) => "explicit".to_string(),
        },
        s: cfg.s,
        sigma: to_f64(cfg.sigma),
        seed: cfg.seed,
        lambda: to_f64(outcome.state.lambda),
        eta: to_f64(cfg.train.eta),
        alpha: to_f64(cfg.train.alpha),
        epsilon: to_f64(cfg.train.epsilon),
        steps: outcome.state.step,
        stop: stop_label(outcome.stop).to_string(),
        final_train_loss: to_f64(last.train_loss),
        final_test_loss_l2: to_f64(last.test_loss_l2),
        final_test_loss_sq: to_f64(last.test_loss_l2 * last.test_loss_l2),
        stage1_end_t,
        stage1_threshold: to_f64(threshold),
        max_gamma_inf: to_f64(max_gamma),
        max_zeta_inf: to_f64(max_zeta),
        max_resid_increase: to_f64(outcome.diagnostics.max_resid_increase),
        wu_min: to_f64(outcome.diagnostics.wu_min),
        wu_max: to_f64(outcome.diagnostics.wu_max),
        b_xi: to_f64(report.b_xi),
        xi_norm: to_f64(report.xi_norm),
        xtxi_norm: to_f64(report.xtxi_norm),
        gram_lambda_min: to_f64(report.gram_lambda_min),
        gram_lambda_max: to_f64(report.gram_lambda_max),
        ratio_xi_norm: to_f64(report.ratios.xi_norm),
        ratio_b_xi: to_f64(report.ratios.b_xi),
        ratio_xtxi_norm: to_f64(report.ratios.xtxi_norm),
        ratio_gram_lambda_min: to_f64(report.ratios.gram_lambda_min),
        ratio_gram_lambda_max: to_f64(report.ratios.gram_lambda_max),
    };

    let trace_csv = trace_to_csv(&outcome.trace);
    if let Some(path) = &cfg.out {
        write_file(path, &trace_csv)?;
        let sidecar = path.with_extension("summary.json");
        let json =
            serde_json::to_string_pretty(&summary).expect("summary serialization is infallible");
        write_file(&sidecar, &json)?;
    }
    Ok(DynamicsRun {
        summary,
        trace_csv,
        outcome,
        report,
        instance: inst,
    })
}

fn stop_label(stop: StopReason) -> &'static str {
    match stop {
        StopReason::LossReached => "loss_reached",
        StopReason::MaxIters => "max_iters",
        StopReason::Diverged => "diverged",
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })
}

// --- scaling experiment ------------------------------------------------------

/// Methods the scaling sweep can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMethod {
    Full,
    Hybrid,
    SecondOrder,
}

impl ScalingMethod {
    pub fn label(&self) -> &'static str {
        match self {
            ScalingMethod::Full => "full",
            ScalingMethod::Hybrid => "hybrid",
            ScalingMethod::SecondOrder => "second_order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(ScalingMethod::Full),
            "hybrid" => Some(ScalingMethod::Hybrid),
            "second-order" | "second_order" => Some(ScalingMethod::SecondOrder),
            _ => None,
        }
    }
}

/// Configuration for the scaling sweep.
#[derive(Debug, Clone)]
pub struct ScalingConfig<F: Float> {
    /// Dimensions to sweep, ascending.
    pub d_values: Vec<usize>,
    pub seeds_per_d: usize,
    /// Target sparsity (3 gives the three-spike target).
    pub s: usize,
    pub sigma: F,
    pub methods: Vec<ScalingMethod>,
    /// Stop the gradient-descent methods at this training loss.
    pub stop_eps: F,
    pub base_seed: u64,
    pub eta: F,
    /// Initialization scale for the full model.
    pub alpha_full: F,
    /// Initialization scale for the second-order-only model.
    pub alpha_second: F,
    /// Multiplier applied to the automatic λ (sensitivity probing).
    pub lambda_scale: F,
    /// Penalty multipliers for the hybrid's Lasso grid.
    pub grid: Vec<F>,
    pub max_iters: u64,
    /// Rayon worker count for sweep cells; 0 means the rayon default.
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl<F: Float> Default for ScalingConfig<F> {
    /// Desk-scale defaults: `d ∈ {400, 1600, 6400, 25600}`, 3 seeds,
    /// `σ = 0.1`, all three methods, stop at training loss 1e-4.
    fn default() -> Self {
        ScalingConfig {
            d_values: vec![400, 1600, 6400, 25600],
            seeds_per_d: 3,
            s: 3,
            sigma: F::cast(0.1),
            methods: vec![
                ScalingMethod::Full,
                ScalingMethod::Hybrid,
                ScalingMethod::SecondOrder,
            ],
            stop_eps: F::cast(1e-4),
            base_seed: 1,
            eta: F::cast(1e-6),
            alpha_full: F::cast(1e-10),
            alpha_second: F::cast(1e-15),
            lambda_scale: F::one(),
            grid: vec![
                F::cast(0.1),
                F::cast(0.2),
                F::cast(0.5),
                F::cast(1.0),
                F::cast(2.0),
                F::cast(5.0),
                F::cast(10.0),
            ],
            max_iters: 20_000_000,
            workers: 0,
            out: None,
        }
    }
}

/// One sweep cell's outcome; failures carry their message so the sweep can
/// finish around them.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method: ScalingMethod,
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub sigma: f64,
    pub seed: u64,
    pub result: Result<CellRow, String>,
}

#[derive(Debug, Clone)]
pub struct CellRow {
    pub train_resid_norm: f64,
    pub test_loss_l2: f64,
    pub meta: String,
}

pub const SCALING_CSV_HEADER: &str = crate::baselines::BASELINE_CSV_HEADER;

/// Result of a sweep: the CSV content (also written to `cfg.out` when set)
/// and the structured per-cell outcomes.
pub struct ScalingRun {
    pub csv: String,
    pub cells: Vec<CellOutcome>,
}

/// Runs every `(d, seed, method)` cell, in parallel when workers allow, and
/// assembles per-run rows plus per-`(d, method)` mean/std aggregate rows.
/// Cells are fully independent: each derives its own seed from
/// `(base_seed, d, seed_index)` and rows are emitted in the fixed
/// `(d, method, seed)` order regardless of scheduling.
pub fn run_scaling<F: Float>(cfg: &ScalingConfig<F>) -> Result<ScalingRun, HarnessError> {
    if cfg.d_values.is_empty() {
        return Err(HarnessError::BadConfig("d_values must be nonempty".into()));
    }
    if !cfg.d_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(HarnessError::BadConfig(
            "d_values must be strictly ascending".into(),
        ));
    }
    if cfg.methods.is_empty() {
        return Err(HarnessError::BadConfig("methods must be nonempty".into()));
    }
    if cfg.seeds_per_d == 0 {
        return Err(HarnessError::BadConfig(
            "seeds_per_d must be positive".into(),
        ));
    }

    let mut cells: Vec<(usize, ScalingMethod, usize)> = Vec::new();
    for &d in &cfg.d_values {
        for &method in &cfg.methods {
            for seed_index in 0..cfg.seeds_per_d {
                cells.push((d, method, seed_index));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::BadConfig(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, method, seed_index)| run_cell(cfg, d, method, seed_index))
            .collect()
    });

    let mut csv = String::new();
    csv.push_str(SCALING_CSV_HEADER);
    csv.push('\n');
    for cell in &outcomes {
        match &cell.result {
            Ok(row) => writeln!(
                csv,
                "{},{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
                cell.method.label(),
                cell.d,
                cell.n,
                cell.s,
                cell.sigma,
                cell.seed,
                row.train_resid_norm,
                row.test_loss_l2,
                row.test_loss_l2 * row.test_loss_l2,
                row.meta,
            )
            .unwrap(),
            Err(msg) => writeln!(
                csv,
                "{},{},{},{},{:.16e},{},nan,nan,nan,error:{}",
                cell.method.label(),
                cell.d,
                cell.n,
                cell.s,
                cell.sigma,
                cell.seed,
                msg.replace([',', '\n'], ";"),
            )
            .unwrap(),
        }
    }

    // Aggregates per (d, method) over the successful seeds; groups whose
    // every seed failed still get their rows (as nan) so the summary shape
    // is predictable. The std is the sample standard deviation (0 with a
    // single seed).
    for &d in &cfg.d_values {
        for &method in &cfg.methods {
            let group: Vec<&CellRow> = outcomes
                .iter()
                .filter(|c| c.d == d && c.method == method)
                .filter_map(|c| c.result.as_ref().ok())
                .collect();
            let n = auto_n(d);
            let k = group.len() as f64;
            let mean = |f: &dyn Fn(&CellRow) -> f64| {
                if group.is_empty() {
                    f64::NAN
                } else {
                    group.iter().map(|r| f(r)).sum::<f64>() / k
                }
            };
            let std = |f: &dyn Fn(&CellRow) -> f64, m: f64| {
                if group.len() < 2 {
                    if group.is_empty() {
                        f64::NAN
                    } else {
                        0.0
                    }
                } else {
                    (group.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                }
            };
            let resid: &dyn Fn(&CellRow) -> f64 = &|r| r.train_resid_norm;
            let test: &dyn Fn(&CellRow) -> f64 = &|r| r.test_loss_l2;
            let test_sq: &dyn Fn(&CellRow) -> f64 = &|r| r.test_loss_l2 * r.test_loss_l2;
            let (m_resid, m_test, m_test_sq) = (mean(resid), mean(test), mean(test_sq));
            writeln!(
                csv,
                "{},{},{},{},{:.16e},mean,{},{},{},aggregate;runs={}",
                method.label(),
                d,
                n,
                cfg.s,
                to_f64(cfg.sigma),
                fmt17(m_resid),
                fmt17(m_test),
                fmt17(m_test_sq),
                group.len(),
            )
            .unwrap();
            writeln!(
                csv,
                "{},{},{},{},{:.16e},std,{},{},{},aggregate;runs={}",
                method.label(),
                d,
                n,
                cfg.s,
                to_f64(cfg.sigma),
                fmt17(std(resid, m_resid)),
                fmt17(std(test, m_test)),
                fmt17(std(test_sq, m_test_sq)),
                group.len(),
            )
            .unwrap();
        }
    }

    if let Some(path) = &cfg.out {
        write_file(path, &csv)?;
    }
    Ok(ScalingRun {
        csv,
        cells: outcomes,
    })
}

fn run_cell<F: Float>(
    cfg: &ScalingConfig<F>,
    d: usize,
    method: ScalingMethod,
    seed_index: usize,
) -> CellOutcome {
    let n = auto_n(d);
    let seed = cell_seed(cfg.base_seed, d, seed_index);
    let make = || -> Result<CellRow, String> {
        let spec = target_spec::<F>(cfg.s, d);
        let inst = generate_instance(n, d, cfg.s, cfg.sigma, &spec, seed)
            .map_err(|e| e.to_string())?;
        match method {
            ScalingMethod::Full => {
                let lambda = model::default_lambda(n, d, cfg.sigma).map_err(|e| e.to_string())?
                    * cfg.lambda_scale;
                let train = TrainConfig {
                    eta: cfg.eta,
                    alpha: cfg.alpha_full,
                    lambda: LambdaSpec::Fixed(lambda),
                    epsilon: cfg.stop_eps,
                    max_iters: cfg.max_iters,
                    record_every: u64::MAX,
                    stage1_const: F::one(),
                };
                let out = model::train(&inst, &train).map_err(|e| e.to_string())?;
                if out.stop == StopReason::Diverged {
                    return Err(format!("diverged at step {}", out.state.step));
                }
                let beta = model::effective_beta(&out.state);
                let mut diff = beta.clone();
                diff -= &inst.beta_star;
                let test = linalg::l2_norm(diff.view());
                let mut r = linalg::mat_vec(inst.x.view(), beta.view());
                r -= &inst.y;
                Ok(CellRow {
                    train_resid_norm: to_f64(linalg::l2_norm(r.view())),
                    test_loss_l2: to_f64(test),
                    meta: format!(
                        "steps={};stop={};lambda={:.6e}",
                        out.state.step,
                        stop_label(out.stop),
                        to_f64(out.state.lambda),
                    ),
                })
            }
            ScalingMethod::Hybrid => {
                let res =
                    baselines::hybrid_interpolator(&inst, &cfg.grid, Selection::OracleTestLoss)
                        .map_err(|e| e.to_string())?;
                Ok(CellRow {
                    train_resid_norm: to_f64(res.train_resid_norm),
                    test_loss_l2: to_f64(res.test_loss_l2),
                    meta: res.meta,
                })
            }
            ScalingMethod::SecondOrder => {
                // The pure model at λ = 1 cannot reach interpolation in any
                // tractable number of steps at these scales; the sweep keeps
                // the full model's λ so the second-order term is the only
                // thing that changes between the two GD methods.
                let lambda = model::default_lambda(n, d, cfg.sigma).map_err(|e| e.to_string())?
                    * cfg.lambda_scale;
                let train = TrainConfig {
                    eta: cfg.eta,
                    alpha: cfg.alpha_second,
                    lambda: LambdaSpec::Fixed(lambda),
                    epsilon: cfg.stop_eps,
                    max_iters: cfg.max_iters,
                    record_every: u64::MAX,
                    stage1_const: F::one(),
                };
                let res = baselines::second_order_gd(&inst, &train).map_err(|e| e.to_string())?;
                Ok(CellRow {
                    train_resid_norm: to_f64(res.train_resid_norm),
                    test_loss_l2: to_f64(res.test_loss_l2),
                    meta: res.meta,
                })
            }
        }
    };
    CellOutcome {
        method,
        d,
        n,
        s: cfg.s,
        sigma: to_f64(cfg.sigma),
        seed,
        result: make(),
    }
}

// --- diagnose ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RipModeArg {
    Off,
    Exhaustive,
    MonteCarlo,
}

#[derive(Debug, Clone)]
pub struct DiagnoseConfig<F: Float> {
    pub d: usize,
    pub n: Option<usize>,
    pub s: usize,
    pub sigma: F,
    pub seed: u64,
    /// RIP sparsity order; `None` defaults to `s + 1`.
    pub rip_k: Option<usize>,
    pub rip_mode: RipModeArg,
    pub rip_samples: usize,
    /// Load the instance from a SIL1 file instead of generating it.
    pub load_instance: Option<PathBuf>,
    /// Dump the instance in SIL1 format after generation.
    pub save_instance: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub struct DiagnoseRun<F: Float> {
    pub report: AssumptionReport<F>,
    /// `key=value` lines, one quantity per line.
    pub lines: String,
    pub csv: String,
}

/// Computes the assumption report and renders it as `key=value` lines plus an
/// optional one-row CSV. Always succeeds on valid inputs regardless of how
/// large the ratios are; this is a diagnostic, not a gate.
pub fn run_diagnose<F: Float>(cfg: &DiagnoseConfig<F>) -> Result<DiagnoseRun<F>, HarnessError> {
    let inst = match &cfg.load_instance {
        Some(path) => instance::load_instance::<F>(path)?,
        None => {
            let n = cfg.n.unwrap_or_else(|| auto_n(cfg.d));
            let spec = target_spec::<F>(cfg.s, cfg.d);
            generate_instance(n, cfg.d, cfg.s, cfg.sigma, &spec, cfg.seed)?
        }
    };
    if let Some(path) = &cfg.save_instance {
        instance::save_instance(&inst, path)?;
    }
    let rip_k = cfg.rip_k.unwrap_or(inst.s + 1).min(inst.d);
    let budget = match cfg.rip_mode {
        RipModeArg::Off => 0,
        RipModeArg::Exhaustive => {
            let total = binomial(inst.d, rip_k);
            if total > EXHAUSTIVE_SUPPORT_CAP {
                return Err(HarnessError::Instance(InstanceError::RipOverCap {
                    supports: total,
                    cap: EXHAUSTIVE_SUPPORT_CAP,
                }));
            }
            total as usize
        }
        RipModeArg::MonteCarlo => cfg.rip_samples,
    };
    let report = regularity_report(&inst, rip_k, budget)?;

    let mut lines = String::new();
    let mut push = |k: &str, v: String| {
        lines.push_str(k);
        lines.push('=');
        lines.push_str(&v);
        lines.push('\n');
    };
    push("n", inst.n.to_string());
    push("d", inst.d.to_string());
    push("s", inst.s.to_string());
    push("sigma", format!("{:.16e}", inst.sigma));
    push("seed", inst.seed.to_string());
    push("xi_norm", format!("{:.16e}", report.xi_norm));
    push("b_xi", format!("{:.16e}", report.b_xi));
    push("xtxi_norm", format!("{:.16e}", report.xtxi_norm));
    push(
        "gram_lambda_min",
        format!("{:.16e}", report.gram_lambda_min),
    );
    push(
        "gram_lambda_max",
        format!("{:.16e}", report.gram_lambda_max),
    );
    push("rip_k", report.rip_k.to_string());
    push(
        "rip_delta",
        match report.rip_delta {
            Some(delta) => format!("{:.16e}", delta),
            None => "skipped".to_string(),
        },
    );
    push(
        "rip_mode",
        match cfg.rip_mode {
            RipModeArg::Off => "off".into(),
            RipModeArg::Exhaustive => "exhaustive".into(),
            RipModeArg::MonteCarlo => format!("monte_carlo:{}", cfg.rip_samples),
        },
    );
    push("ratio_xi_norm", format!("{:.16e}", report.ratios.xi_norm));
    push("ratio_b_xi", format!("{:.16e}", report.ratios.b_xi));
    push(
        "ratio_xtxi_norm",
        format!("{:.16e}", report.ratios.xtxi_norm),
    );
    push(
        "ratio_gram_lambda_min",
        format!("{:.16e}", report.ratios.gram_lambda_min),
    );
    push(
        "ratio_gram_lambda_max",
        format!("{:.16e}", report.ratios.gram_lambda_max),
    );

    let mut csv = String::from(
        "n,d,s,sigma,seed,xi_norm,b_xi,xtxi_norm,gram_lambda_min,gram_lambda_max,rip_k,rip_delta,\
ratio_xi_norm,ratio_b_xi,ratio_xtxi_norm,ratio_gram_lambda_min,ratio_gram_lambda_max\n",
    );
    writeln!(
        csv,
        "{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        inst.n,
        inst.d,
        inst.s,
        inst.sigma,
        inst.seed,
        report.xi_norm,
        report.b_xi,
        report.xtxi_norm,
        report.gram_lambda_min,
        report.gram_lambda_max,
        report.rip_k,
        match report.rip_delta {
            Some(delta) => format!("{delta:.16e}"),
            None => "skipped".to_string(),
        },
        report.ratios.xi_norm,
        report.ratios.b_xi,
        report.ratios.xtxi_norm,
        report.ratios.gram_lambda_min,
        report.ratios.gram_lambda_max,
    )
    .unwrap();

    if let Some(path) = &cfg.out {
        write_file(path, &csv)?;
    }
    Ok(DiagnoseRun { report, lines, csv })
}

// --- single-baseline runs ----------------------------------------------------

/// Which baseline the `baseline` CLI subcommand runs.
#[derive(Debug, Clone)]
pub enum BaselineChoice<F: Float> {
    MinL2,
    Lasso { l1_penalty: F },
    Hybrid { grid: Vec<F>, validation: Option<F> },
    SecondOrder { train: TrainConfig<F> },
}

#[derive(Debug, Clone)]
pub struct BaselineRunConfig<F: Float> {
    pub d: usize,
    pub n: Option<usize>,
    pub s: usize,
    pub sigma: F,
    pub seed: u64,
    pub choice: BaselineChoice<F>,
    pub out: Option<PathBuf>,
}

/// Runs one baseline on a generated instance, returning its CSV row (and
/// writing header+row when an output path is set).
pub fn run_baseline<F: Float>(cfg: &BaselineRunConfig<F>) -> Result<String, HarnessError> {
    let n = cfg.n.unwrap_or_else(|| auto_n(cfg.d));
    let spec = target_spec::<F>(cfg.s, cfg.d);
    let inst = generate_instance(n, cfg.d, cfg.s, cfg.sigma, &spec, cfg.seed)?;
    let result = match &cfg.choice {
        BaselineChoice::MinL2 => baselines::min_l2_interpolator(&inst)?,
        BaselineChoice::Lasso { l1_penalty } => {
            baselines::lasso_baseline(&inst, &LassoConfig::new(*l1_penalty))?
        }
        BaselineChoice::Hybrid { grid, validation } => {
            let selection = match validation {
                Some(f) => Selection::ValidationSplit { fraction: *f },
                None => Selection::OracleTestLoss,
            };
            baselines::hybrid_interpolator(&inst, grid, selection)?
        }
        BaselineChoice::SecondOrder { train } => baselines::second_order_gd(&inst, train)?,
    };
    let row = result.csv_row(&inst);
    if let Some(path) = &cfg.out {
        write_file(path, &format!("{}\n{}\n", SCALING_CSV_HEADER, row))?;
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_n_rounds_to_nearest() {
        assert_eq!(auto_n(400), 60);
        assert_eq!(auto_n(1600), 120);
        assert_eq!(auto_n(5000), 212); // 3*sqrt(5000) = 212.13...
        assert_eq!(auto_n(6400), 240);
        assert_eq!(auto_n(25600), 480);
    }

    #[test]
    fn dynamics_with_huge_epsilon_records_single_row() {
        let mut cfg = DynamicsConfig::<f64>::for_dimension(64, 5);
        cfg.train.epsilon = 1e9;
        cfg.train.lambda = LambdaSpec::Fixed(10.0);
        let run = run_dynamics(&cfg).unwrap();
        assert_eq!(run.outcome.trace.len(), 1);
        assert_eq!(run.summary.steps, 0);
        assert_eq!(run.summary.stop, "loss_reached");
        let lines: Vec<&str> = run.trace_csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], TRACE_CSV_HEADER);
    }

    #[test]
    fn dynamics_reruns_byte_identically() {
        let mut cfg = DynamicsConfig::<f64>::for_dimension(100, 9);
        cfg.train.lambda = LambdaSpec::Fixed(50.0);
        cfg.train.max_iters = 200;
        cfg.train.record_every = 50;
        cfg.train.epsilon = 1e-12;
        let a = run_dynamics(&cfg).unwrap();
        let b = run_dynamics(&cfg).unwrap();
        assert_eq!(a.trace_csv, b.trace_csv);
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
    }

    #[test]
    fn scaling_smallest_config_yields_single_run_row() {
        let cfg = ScalingConfig::<f64> {
            d_values: vec![400],
            seeds_per_d: 1,
            methods: vec![ScalingMethod::Hybrid],
            workers: 1,
            ..ScalingConfig::default()
        };
        let run = run_scaling(&cfg).unwrap();
        assert_eq!(run.cells.len(), 1);
        assert!(run.cells[0].result.is_ok());
        let lines: Vec<&str> = run.csv.trim_end().lines().collect();
        // header + 1 run row + mean + std
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("hybrid,400,60,3,"));
        assert!(lines[2].contains(",mean,"));
        assert!(lines[3].contains(",std,"));
    }

    #[test]
    fn scaling_rejects_unordered_dimensions() {
        let cfg = ScalingConfig::<f64> {
            d_values: vec![1600, 400],
            ..ScalingConfig::default()
        };
        assert!(matches!(run_scaling(&cfg), Err(HarnessError::BadConfig(_))));
    }

    #[test]
    fn scaling_isolates_cell_failures() {
        // sigma = 0 breaks the automatic lambda for GD methods but the
        // hybrid fails too (default grid scale); rows must still appear.
        let cfg = ScalingConfig::<f64> {
            d_values: vec![100],
            seeds_per_d: 2,
            sigma: 0.0,
            methods: vec![ScalingMethod::Full],
            workers: 1,
            ..ScalingConfig::default()
        };
        let run = run_scaling(&cfg).unwrap();
        assert_eq!(run.cells.len(), 2);
        assert!(run.cells.iter().all(|c| c.result.is_err()));
        let lines: Vec<&str> = run.csv.trim_end().lines().collect();
        // header + 2 error rows + nan mean/std rows for the empty group.
        assert_eq!(lines.len(), 5);
        assert!(lines[1].contains("error:"));
        assert!(lines[3].contains(",mean,nan,"));
        assert!(lines[3].contains("runs=0"));
    }

    #[test]
    fn scaling_worker_count_does_not_change_bytes() {
        let base = ScalingConfig::<f64> {
            d_values: vec![144, 400],
            seeds_per_d: 2,
            methods: vec![ScalingMethod::Hybrid, ScalingMethod::SecondOrder],
            stop_eps: 1e-2,
            workers: 1,
            ..ScalingConfig::default()
        };
        let one = run_scaling(&base).unwrap();
        let two = run_scaling(&ScalingConfig {
            workers: 2,
            ..base.clone()
        })
        .unwrap();
        assert_eq!(one.csv, two.csv);
    }

    #[test]
    fn diagnose_zero_noise_prints_zero_quantities() {
        let cfg = DiagnoseConfig::<f64> {
            d: 40,
            n: Some(10),
            s: 3,
            sigma: 0.0,
            seed: 3,
            rip_k: None,
            rip_mode: RipModeArg::Off,
            rip_samples: 0,
            load_instance: None,
            save_instance: None,
            out: None,
        };
        let run = run_diagnose(&cfg).unwrap();
        assert!(run.lines.contains("xi_norm=0.0000000000000000e0"));
        assert!(run.lines.contains("rip_delta=skipped"));
        assert!(run.lines.contains("ratio_xi_norm=inf"));
    }

    #[test]
    fn diagnose_exhaustive_matches_direct_estimate() {
        let cfg = DiagnoseConfig::<f64> {
            d: 30,
            n: Some(60),
            s: 3,
            sigma: 0.1,
            seed: 11,
            rip_k: Some(3),
            rip_mode: RipModeArg::Exhaustive,
            rip_samples: 0,
            load_instance: None,
            save_instance: None,
            out: None,
        };
        let run = run_diagnose(&cfg).unwrap();
        let inst = generate_instance(60, 30, 3, 0.1, &BetaSpec::ThreeSpike, 11).unwrap();
        let oracle = crate::instance::estimate_rip_delta(
            inst.x.view(),
            3,
            crate::instance::RipMode::Exhaustive,
            0,
        )
        .unwrap();
        assert_eq!(run.report.rip_delta.unwrap(), oracle);
    }

    #[test]
    fn diagnose_round_trips_instance_through_sil1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.sil1");
        let cfg = DiagnoseConfig::<f64> {
            d: 24,
            n: Some(9),
            s: 3,
            sigma: 0.2,
            seed: 7,
            rip_k: None,
            rip_mode: RipModeArg::Off,
            rip_samples: 0,
            load_instance: None,
            save_instance: Some(path.clone()),
            out: None,
        };
        let first = run_diagnose(&cfg).unwrap();
        let cfg_load = DiagnoseConfig {
            load_instance: Some(path),
            save_instance: None,
            ..cfg
        };
        let second = run_diagnose(&cfg_load).unwrap();
        assert_eq!(first.lines, second.lines);
    }

    #[test]
    fn baseline_run_emits_pinned_row() {
        let cfg = BaselineRunConfig::<f64> {
            d: 30,
            n: Some(10),
            s: 3,
            sigma: 0.1,
            seed: 5,
            choice: BaselineChoice::MinL2,
            out: None,
        };
        let row = run_baseline(&cfg).unwrap();
        assert!(row.starts_with("min_l2,30,10,3,"));
        assert_eq!(
            row.split(',').count(),
            SCALING_CSV_HEADER.split(',').count()
        );
    }
}
