//! Comparison interpolators: the minimum-ℓ₂-norm solution, cyclic-coordinate
//! Lasso, the Lasso-then-min-ℓ₂ hybrid, and gradient descent on the pure
//! second-order model (`v` pinned at zero).
//!
//! Every result recomputes its training residual at construction, and the
//! Lasso solver certifies its own output with a post-hoc KKT check, so a
//! caller can audit any returned solution without rerunning the solver.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::instance::RegressionInstance;
use crate::linalg::{self, LinalgError};
use crate::model::{self, LambdaSpec, ModelError, StopReason, TrainConfig, UpdateMode};
use crate::Float;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("Gram factorization failed: {0}")]
    GramFactorization(#[from] LinalgError),
    #[error("Lasso did not converge: {sweeps} sweeps, last max coordinate change {last_change}")]
    LassoNotConverged { sweeps: usize, last_change: f64 },
    #[error("gradient descent diverged at step {step}")]
    Diverged { step: u64 },
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which interpolation scheme produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MinL2,
    Lasso,
    Hybrid,
    SecondOrderGd,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::MinL2 => "min_l2",
            Method::Lasso => "lasso",
            Method::Hybrid => "hybrid",
            Method::SecondOrderGd => "second_order",
        }
    }
}

/// A fitted interpolator with its audit quantities.
#[derive(Debug, Clone)]
pub struct BaselineResult<F: Float> {
    pub beta: Array1<F>,
    /// `‖Xβ − y‖₂`, recomputed from `beta` at construction.
    pub train_resid_norm: F,
    /// `‖β − β*‖₂`
    pub test_loss_l2: F,
    pub method: Method,
    /// Method-specific report (chosen grid multiplier, sweep count, steps…)
    /// in `key=value` form, semicolon-separated.
    pub meta: String,
}

impl<F: Float> BaselineResult<F> {
    pub fn new(
        beta: Array1<F>,
        inst: &RegressionInstance<F>,
        method: Method,
        meta: String,
    ) -> Self {
        let mut r = linalg::mat_vec(inst.x.view(), beta.view());
        r -= &inst.y;
        let train_resid_norm = linalg::l2_norm(r.view());
        let mut diff = beta.clone();
        diff -= &inst.beta_star;
        let test_loss_l2 = linalg::l2_norm(diff.view());
        BaselineResult {
            beta,
            train_resid_norm,
            test_loss_l2,
            method,
            meta,
        }
    }

    /// One summary-CSV row:
    /// `method,d,n,s,sigma,seed,train_resid_norm,test_loss_l2,test_loss_sq,meta`.
    pub fn csv_row(&self, inst: &RegressionInstance<F>) -> String {
        format!(
            "{},{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
            self.method.label(),
            inst.d,
            inst.n,
            inst.s,
            inst.sigma,
            inst.seed,
            self.train_resid_norm,
            self.test_loss_l2,
            self.test_loss_l2 * self.test_loss_l2,
            self.meta,
        )
    }
}

/// Header matching [`BaselineResult::csv_row`].
pub const BASELINE_CSV_HEADER: &str =
    "method,d,n,s,sigma,seed,train_resid_norm,test_loss_l2,test_loss_sq,meta";

/// Minimum-ℓ₂-norm interpolator `β = Xᵀ(XXᵀ)⁻¹y`, solved with a Cholesky
/// factorization of the n×n Gram matrix.
pub fn min_l2_interpolator<F: Float>(
    inst: &RegressionInstance<F>,
) -> Result<BaselineResult<F>, BaselineError> {
    let beta = min_l2_fit(inst.x.view(), inst.y.view())?;
    Ok(BaselineResult::new(
        beta,
        inst,
        Method::MinL2,
        String::new(),
    ))
}

/// The raw min-ℓ₂ fit of `(x, y)`, shared with the hybrid's residual step.
pub fn min_l2_fit<F: Float>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
) -> Result<Array1<F>, BaselineError> {
    let gram = linalg::gram(x);
    let chol = linalg::cholesky(gram.view())?;
    let z = linalg::cholesky_solve(chol.view(), y);
    Ok(linalg::mat_t_vec(x, z.view()))
}

/// Lasso hyperparameters. The defaults (`tol = 1e-8`, `max_sweeps = 1e5`) are
/// recorded in every result's meta string.
#[derive(Debug, Clone)]
pub struct LassoConfig<F: Float> {
    pub l1_penalty: F,
    /// Stop when the largest coordinate change in a sweep falls to this.
    pub tol: F,
    pub max_sweeps: usize,
}

impl<F: Float> LassoConfig<F> {
    pub fn new(l1_penalty: F) -> Self {
        LassoConfig {
            l1_penalty,
            tol: F::cast(1e-8),
            max_sweeps: 100_000,
        }
    }
}

/// Everything the Lasso solver can certify about its own output.
#[derive(Debug, Clone)]
pub struct LassoReport<F: Float> {
    pub sweeps: usize,
    pub converged: bool,
    pub last_max_change: F,
    /// `(1/2n)‖Xβ−y‖² + penalty·‖β‖₁` after each sweep; exact coordinate
    /// minimization makes this non-increasing.
    pub objectives: Vec<F>,
    /// `max_{β_j≠0} |(Xᵀ(Xβ−y)/n)_j + penalty·sign(β_j)|`
    pub kkt_active_violation: F,
    /// `max_{β_j=0} max(0, |(Xᵀ(Xβ−y)/n)_j| − penalty)`
    pub kkt_inactive_excess: F,
}

/// A Lasso solution plus its certificate.
#[derive(Debug, Clone)]
pub struct LassoFit<F: Float> {
    pub beta: Array1<F>,
    pub report: LassoReport<F>,
}

/// Minimizes `(1/2n)‖Xβ−y‖₂² + penalty·‖β‖₁` by cyclic coordinate descent
/// with exact soft-threshold updates, maintaining the residual incrementally.
/// Returns an error when `max_sweeps` is exhausted while coordinates still
/// move by more than `tol`.
pub fn lasso_coordinate_descent<F: Float>(
    x: &Array2<F>,
    y: &Array1<F>,
    cfg: &LassoConfig<F>,
) -> Result<LassoFit<F>, BaselineError> {
    let (n, d) = (x.nrows(), x.ncols());
    assert_eq!(y.len(), n, "target length mismatch");
    if cfg.tol.is_nan() || cfg.tol <= F::zero() || cfg.max_sweeps == 0 || cfg.l1_penalty < F::zero()
    {
        return Err(BaselineError::BadInput(
            "lasso config needs tol > 0, max_sweeps >= 1, penalty >= 0".into(),
        ));
    }
    let n_f = F::of_usize(n);
    // Column-major copy: cyclic sweeps touch one column at a time and the
    // design is stored row-major.
    let cols = x.t().as_standard_layout().to_owned();
    let col = |j: usize| cols.row(j);
    let col_sq: Vec<F> = (0..d).map(|j| col(j).dot(&col(j)) / n_f).collect();

    let mut beta: Array1<F> = Array1::zeros(d);
    let mut r = y.to_owned(); // r = y − Xβ
    let mut objectives = Vec::new();
    let mut sweeps = 0;
    let mut last_max_change = F::infinity();
    let mut converged = false;
    while sweeps < cfg.max_sweeps {
        let mut max_change = F::zero();
        for j in 0..d {
            if col_sq[j] == F::zero() {
                continue;
            }
            let old = beta[j];
            let rho = col(j).dot(&r) / n_f + col_sq[j] * old;
            let new = soft_threshold(rho, cfg.l1_penalty) / col_sq[j];
            let delta = new - old;
            if delta != F::zero() {
                let cj = col(j);
                let cj = cj.to_slice().expect("column copy is contiguous");
                for (ri, &xj) in r.iter_mut().zip(cj) {
                    *ri -= delta * xj;
                }
                beta[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        sweeps += 1;
        let obj = linalg::dot(r.view(), r.view()) / (F::cast(2.0) * n_f)
            + cfg.l1_penalty * beta.iter().fold(F::zero(), |s, &b| s + b.abs());
        objectives.push(obj);
        last_max_change = max_change;
        if max_change <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(BaselineError::LassoNotConverged {
            sweeps,
            last_change: last_max_change.to_f64().unwrap_or(f64::NAN),
        });
    }
    let (kkt_active_violation, kkt_inactive_excess) =
        lasso_kkt_violation(x.view(), y.view(), beta.view(), cfg.l1_penalty);
    Ok(LassoFit {
        beta,
        report: LassoReport {
            sweeps,
            converged,
            last_max_change,
            objectives,
            kkt_active_violation,
            kkt_inactive_excess,
        },
    })
}

fn soft_threshold<F: Float>(z: F, threshold: F) -> F {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        F::zero()
    }
}

/// KKT residuals of a candidate Lasso solution, computed from scratch
/// (independently of the solver's maintained residual).
pub fn lasso_kkt_violation<F: Float>(
    x: ArrayView2<F>,
    y: ArrayView1<F>,
    beta: ArrayView1<F>,
    penalty: F,
) -> (F, F) {
    let n_f = F::of_usize(x.nrows());
    let mut pred = linalg::mat_vec(x, beta);
    for (p, &yi) in pred.iter_mut().zip(y.iter()) {
        *p -= yi;
    }
    let grad = linalg::mat_t_vec(x, pred.view());
    let mut active = F::zero();
    let mut inactive = F::zero();
    for (j, &b) in beta.iter().enumerate() {
        let g = grad[j] / n_f;
        if b != F::zero() {
            let sign = if b > F::zero() { F::one() } else { -F::one() };
            active = active.max((g + penalty * sign).abs());
        } else {
            inactive = inactive.max((g.abs() - penalty).max(F::zero()));
        }
    }
    (active, inactive)
}

/// Lasso run against an instance, wrapped as a baseline result.
pub fn lasso_baseline<F: Float>(
    inst: &RegressionInstance<F>,
    cfg: &LassoConfig<F>,
) -> Result<BaselineResult<F>, BaselineError> {
    let fit = lasso_coordinate_descent(&inst.x, &inst.y, cfg)?;
    let meta = format!(
        "penalty={:.6e};sweeps={};tol={:.1e};kkt_active={:.3e};kkt_inactive={:.3e}",
        cfg.l1_penalty,
        fit.report.sweeps,
        cfg.tol,
        fit.report.kkt_active_violation,
        fit.report.kkt_inactive_excess,
    );
    Ok(BaselineResult::new(fit.beta, inst, Method::Lasso, meta))
}

/// How the hybrid picks its Lasso penalty from the grid.
#[derive(Debug, Clone, Copy)]
pub enum Selection<F: Float> {
    /// Pick the candidate with the smallest `‖β_lasso − β*‖₂`. Uses the
    /// ground truth, so it is only meaningful on synthetic benchmarks.
    OracleTestLoss,
    /// Fit candidates on the leading rows, pick by mean-squared error on the
    /// trailing `fraction` of rows, then refit the winner on all rows.
    ValidationSplit { fraction: F },
}

/// Two-step hybrid: Lasso for the sparse signal, then a min-ℓ₂ fit of the
/// residual to absorb the noise. Penalties are `m · σ√(ln(d)/n)` for each
/// grid multiplier `m`; ties in selection break toward the earlier grid
/// entry.
pub fn hybrid_interpolator<F: Float>(
    inst: &RegressionInstance<F>,
    grid: &[F],
    selection: Selection<F>,
) -> Result<BaselineResult<F>, BaselineError> {
    if inst.sigma.is_nan() || inst.sigma <= F::zero() {
        return Err(BaselineError::BadInput(
            "the default penalty scale needs sigma > 0; use hybrid_interpolator_with_scale".into(),
        ));
    }
    let scale = inst.sigma * (F::of_usize(inst.d).ln() / F::of_usize(inst.n)).sqrt();
    hybrid_interpolator_with_scale(inst, grid, selection, scale)
}

/// [`hybrid_interpolator`] with an explicit penalty scale (`penalty = m·scale`).
pub fn hybrid_interpolator_with_scale<F: Float>(
    inst: &RegressionInstance<F>,
    grid: &[F],
    selection: Selection<F>,
    scale: F,
) -> Result<BaselineResult<F>, BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::BadInput(
            "penalty grid must be nonempty".into(),
        ));
    }
    let (best_idx, fit) = match selection {
        Selection::OracleTestLoss => {
            let mut best: Option<(usize, F, LassoFit<F>)> = None;
            for (i, &m) in grid.iter().enumerate() {
                let cfg = LassoConfig::new(m * scale);
                let fit = lasso_coordinate_descent(&inst.x, &inst.y, &cfg)?;
                let mut diff = fit.beta.clone();
                diff -= &inst.beta_star;
                let score = linalg::l2_norm(diff.view());
                let better = match &best {
                    None => true,
                    Some((_, s, _)) => score < *s,
                };
                if better {
                    best = Some((i, score, fit));
                }
            }
            let (i, _, fit) = best.expect("nonempty grid");
            (i, fit)
        }
        Selection::ValidationSplit { fraction } => {
            if fraction.is_nan() || fraction <= F::zero() || fraction >= F::one() {
                return Err(BaselineError::BadInput(
                    "validation fraction must lie in (0, 1)".into(),
                ));
            }
            let n_val = ((F::of_usize(inst.n) * fraction)
                .ceil()
                .to_usize()
                .unwrap_or(1))
            .clamp(1, inst.n - 1);
            let n_train = inst.n - n_val;
            let x_train = inst.x.slice(ndarray::s![..n_train, ..]).to_owned();
            let y_train = inst.y.slice(ndarray::s![..n_train]).to_owned();
            let x_val = inst.x.slice(ndarray::s![n_train.., ..]);
            let y_val = inst.y.slice(ndarray::s![n_train..]);
            let mut best: Option<(usize, F)> = None;
            for (i, &m) in grid.iter().enumerate() {
                let cfg = LassoConfig::new(m * scale);
                let fit = lasso_coordinate_descent(&x_train, &y_train, &cfg)?;
                let mut resid = linalg::mat_vec(x_val, fit.beta.view());
                for (ri, &yi) in resid.iter_mut().zip(y_val.iter()) {
                    *ri -= yi;
                }
                let mse = linalg::dot(resid.view(), resid.view()) / F::of_usize(n_val);
                let better = match &best {
                    None => true,
                    Some((_, s)) => mse < *s,
                };
                if better {
                    best = Some((i, mse));
                }
            }
            let (i, _) = best.expect("nonempty grid");
            let cfg = LassoConfig::new(grid[i] * scale);
            let fit = lasso_coordinate_descent(&inst.x, &inst.y, &cfg)?;
            (i, fit)
        }
    };

    let mut resid_y = inst.y.clone();
    let pred = linalg::mat_vec(inst.x.view(), fit.beta.view());
    resid_y -= &pred;
    let fix = min_l2_fit(inst.x.view(), resid_y.view())?;
    let mut beta = fit.beta.clone();
    beta += &fix;
    let meta = format!(
        "multiplier={:.6e};scale={:.6e};sweeps={};rule={}",
        grid[best_idx],
        scale,
        fit.report.sweeps,
        match selection {
            Selection::OracleTestLoss => "oracle",
            Selection::ValidationSplit { .. } => "validation",
        },
    );
    Ok(BaselineResult::new(beta, inst, Method::Hybrid, meta))
}

/// Gradient descent on `β = λ(w⊙w − u⊙u)` with `v` pinned at zero. With
/// `LambdaSpec::Auto` the scale defaults to 1 (the pure reparametrization);
/// callers that want the full model's λ pass it explicitly.
pub fn second_order_gd<F: Float>(
    inst: &RegressionInstance<F>,
    cfg: &TrainConfig<F>,
) -> Result<BaselineResult<F>, BaselineError> {
    let mut cfg = cfg.clone();
    if cfg.lambda == LambdaSpec::Auto {
        cfg.lambda = LambdaSpec::Fixed(F::one());
    }
    let out = model::train_with(inst, &cfg, UpdateMode::SecondOrderOnly, None)?;
    if out.stop == StopReason::Diverged {
        return Err(BaselineError::Diverged {
            step: out.state.step,
        });
    }
    let beta = model::effective_beta(&out.state);
    let meta = format!(
        "steps={};stop={};lambda={:.6e};alpha={:.1e};eta={:.1e};eps={:.1e}",
        out.state.step,
        match out.stop {
            StopReason::LossReached => "loss",
            StopReason::MaxIters => "max_iters",
            StopReason::Diverged => "diverged",
        },
        out.state.lambda,
        cfg.alpha,
        cfg.eta,
        cfg.epsilon,
    );
    Ok(BaselineResult::new(beta, inst, Method::SecondOrderGd, meta))
}
