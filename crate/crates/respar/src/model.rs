//! The reparametrized model `beta = v + λ(w⊙w − u⊙u)`, its mean-square loss
//! and gradients, the plain gradient-descent training loop, and the
//! instrumentation that tracks the two training stages.
//!
//! Training starts from `v = 0`, `w = u = α·1` with tiny `α`, so the induced
//! coefficient vector is exactly zero at initialization. Stage 1 is the short
//! phase in which the second-order term recovers the sparse signal; Stage 2
//! is the long phase in which the linear term memorizes the noise. The
//! boundary is detected diagnostically from the signal-error trajectory; it
//! never feeds back into training.

use ndarray::Array1;
use thiserror::Error;

use crate::decomposition;
use crate::instance::{AssumptionReport, RegressionInstance};
use crate::linalg;
use crate::Float;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("automatic lambda needs sigma > 0 and n >= 2 (got n={n}, sigma={sigma}); pass an explicit lambda")]
    LambdaNeedsNoise { n: usize, sigma: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("parameters became non-finite at step {step}")]
    Diverged { step: u64 },
}

/// Scale of the second-order term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec<F: Float> {
    /// Resolve via [`default_lambda`] from the instance at hand.
    Auto,
    Fixed(F),
}

/// Gradient-descent hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig<F: Float> {
    /// Step size η.
    pub eta: F,
    /// Initialization scale α for `w` and `u`.
    pub alpha: F,
    pub lambda: LambdaSpec<F>,
    /// Stop once the training loss drops to ε.
    pub epsilon: F,
    pub max_iters: u64,
    /// Trace cadence; the initial and final steps are always recorded.
    pub record_every: u64,
    /// Threshold constant for the stage-transition detector.
    pub stage1_const: F,
}

impl<F: Float> Default for TrainConfig<F> {
    /// The dynamics-experiment defaults: α = 1e-10, η = 1e-6, ε = 1e-5,
    /// automatic λ.
    fn default() -> Self {
        TrainConfig {
            eta: F::cast(1e-6),
            alpha: F::cast(1e-10),
            lambda: LambdaSpec::Auto,
            epsilon: F::cast(1e-5),
            max_iters: 5_000_000,
            record_every: 500,
            stage1_const: F::one(),
        }
    }
}

impl<F: Float> TrainConfig<F> {
    pub fn validate(&self) -> Result<(), ModelError> {
        fn positive<F: crate::Float>(x: F) -> bool {
            x.is_finite() && x > F::zero()
        }
        let mut problems = Vec::new();
        if !positive(self.eta) {
            problems.push("eta must be positive");
        }
        if !positive(self.alpha) {
            problems.push("alpha must be positive");
        }
        if !positive(self.epsilon) {
            problems.push("epsilon must be positive");
        }
        if self.record_every == 0 {
            problems.push("record_every must be at least 1");
        }
        if self.stage1_const <= F::zero() {
            problems.push("stage1_const must be positive");
        }
        if let LambdaSpec::Fixed(l) = self.lambda {
            if !positive(l) {
                problems.push("lambda must be positive");
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::BadConfig(problems.join("; ")))
        }
    }
}

/// Trainable parameters plus the fixed scale λ; the induced coefficient
/// vector is always recomputed from the fields, never cached.
#[derive(Debug, Clone)]
pub struct ModelState<F: Float> {
    pub v: Array1<F>,
    pub w: Array1<F>,
    pub u: Array1<F>,
    pub lambda: F,
    pub step: u64,
}

/// Gradients of the loss at a state, one block per parameter vector.
#[derive(Debug, Clone)]
pub struct Gradients<F: Float> {
    pub w: Array1<F>,
    pub u: Array1<F>,
    pub v: Array1<F>,
}

/// Diagnostics recorded at one training step.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord<F: Float> {
    pub t: u64,
    pub train_loss: F,
    pub resid_norm: F,
    /// `‖β − β*‖₂` (the squared version is derived at CSV-write time).
    pub test_loss_l2: F,
    /// `‖(d/n)v_S + λ w⊙²_{S+} − λ u⊙²_{S−} − β*‖_∞`, the stage-1 progress
    /// measure.
    pub signal_error_inf: F,
    pub v_norm: F,
    pub v_s_norm: F,
    /// `‖λ(w⊙w − u⊙u)‖₂`
    pub second_order_norm: F,
    /// `‖w‖_∞` off the positive support.
    pub w_off_inf: F,
    /// `‖u‖_∞` off the negative support.
    pub u_off_inf: F,
    pub a_t: F,
    pub b_t: F,
    pub gamma_inf: F,
    pub zeta_inf: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LossReached,
    MaxIters,
    Diverged,
}

/// Whether the linear term participates in the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Full,
    /// `v` pinned at zero: the pure second-order model.
    SecondOrderOnly,
}

/// Per-step invariants accumulated over a whole run (the trace only samples
/// recorded steps; these cover every step).
#[derive(Debug, Clone, Copy)]
pub struct RunDiagnostics<F: Float> {
    /// `max_t (‖r^(t+1)‖₂ − ‖r^(t)‖₂)`; nonpositive means the residual norm
    /// never increased.
    pub max_resid_increase: F,
    /// Extremes of `w_k u_k` over all steps and coordinates.
    pub wu_min: F,
    pub wu_max: F,
    /// Largest deviation from the per-step product identity
    /// `w'u' = (1 − (2ηλg)²)·wu`, relative to `max(α², |wu|)`.
    pub product_identity_err: F,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Float> {
    pub state: ModelState<F>,
    pub trace: Vec<TraceRecord<F>>,
    pub stop: StopReason,
    pub diagnostics: RunDiagnostics<F>,
}

/// The scale used in the experiments:
/// `λ = 100 d / (σ n ln(n) (√(ln(d)/n) + √(n/d)))`, natural logarithms.
pub fn default_lambda<F: Float>(n: usize, d: usize, sigma: F) -> Result<F, ModelError> {
    if n < 2 || sigma.is_nan() || sigma <= F::zero() {
        return Err(ModelError::LambdaNeedsNoise {
            n,
            sigma: sigma.to_f64().unwrap_or(f64::NAN),
        });
    }
    let n_f = F::of_usize(n);
    let d_f = F::of_usize(d);
    let bracket = (d_f.ln() / n_f).sqrt() + (n_f / d_f).sqrt();
    Ok(F::cast(100.0) * d_f / (sigma * n_f * n_f.ln() * bracket))
}

fn resolve_lambda<F: Float>(
    cfg: &TrainConfig<F>,
    inst: &RegressionInstance<F>,
) -> Result<F, ModelError> {
    match cfg.lambda {
        LambdaSpec::Fixed(l) => Ok(l),
        LambdaSpec::Auto => default_lambda(inst.n, inst.d, inst.sigma),
    }
}

/// Initial state: `v = 0`, `w = u = α·1`, λ resolved. The induced coefficient
/// vector is exactly zero because the squares cancel.
pub fn init_state<F: Float>(
    cfg: &TrainConfig<F>,
    inst: &RegressionInstance<F>,
) -> Result<ModelState<F>, ModelError> {
    cfg.validate()?;
    Ok(ModelState {
        v: Array1::zeros(inst.d),
        w: Array1::from_elem(inst.d, cfg.alpha),
        u: Array1::from_elem(inst.d, cfg.alpha),
        lambda: resolve_lambda(cfg, inst)?,
        step: 0,
    })
}

/// `β = v + λ(w⊙w) − λ(u⊙u)`, grouped as `v + λ(w⊙w − u⊙u)` so the
/// symmetric-initialization cancellation is exact.
pub fn effective_beta<F: Float>(st: &ModelState<F>) -> Array1<F> {
    assert!(
        st.v.len() == st.w.len() && st.v.len() == st.u.len(),
        "parameter vectors must share one dimension"
    );
    let lambda = st.lambda;
    let mut beta = Array1::zeros(st.v.len());
    for (((b, &v), &w), &u) in beta
        .iter_mut()
        .zip(st.v.iter())
        .zip(st.w.iter())
        .zip(st.u.iter())
    {
        *b = v + lambda * (w * w - u * u);
    }
    beta
}

/// Residual `r = Xβ − y` and loss `L = ‖r‖²/(2n)`.
pub fn residual_and_loss<F: Float>(
    st: &ModelState<F>,
    inst: &RegressionInstance<F>,
) -> (Array1<F>, F) {
    assert_eq!(st.v.len(), inst.d, "state dimension mismatch");
    let beta = effective_beta(st);
    let mut r = linalg::mat_vec(inst.x.view(), beta.view());
    r -= &inst.y;
    let loss = linalg::dot(r.view(), r.view()) / (F::cast(2.0) * F::of_usize(inst.n));
    (r, loss)
}

/// Gradients at a state, with `g = Xᵀ(Xβ − y)/n` formed in O(nd); the d×d
/// Gram matrix is never materialized.
pub fn gradients<F: Float>(st: &ModelState<F>, inst: &RegressionInstance<F>) -> Gradients<F> {
    let (r, _) = residual_and_loss(st, inst);
    let mut g = linalg::mat_t_vec(inst.x.view(), r.view());
    let n_f = F::of_usize(inst.n);
    g.mapv_inplace(|x| x / n_f);
    let two_lambda = F::cast(2.0) * st.lambda;
    let g_w = ndarray::Zip::from(&g)
        .and(&st.w)
        .map_collect(|&gk, &wk| gk * two_lambda * wk);
    let g_u = ndarray::Zip::from(&g)
        .and(&st.u)
        .map_collect(|&gk, &uk| -(gk * two_lambda * uk));
    Gradients {
        w: g_w,
        u: g_u,
        v: g,
    }
}

/// One simultaneous gradient-descent step: all three gradients are evaluated
/// at the incoming state before any parameter moves.
pub fn gd_step<F: Float>(
    st: &ModelState<F>,
    inst: &RegressionInstance<F>,
    cfg: &TrainConfig<F>,
) -> Result<ModelState<F>, ModelError> {
    let (r, _) = residual_and_loss(st, inst);
    let mut next = st.clone();
    let mut g = Array1::zeros(inst.d);
    let mut sink = StepStats::new();
    apply_step(
        &mut next,
        inst,
        r.view(),
        cfg.eta,
        UpdateMode::Full,
        &mut g,
        &mut sink,
    )?;
    Ok(next)
}

/// Scratch accumulators for the per-step invariants.
struct StepStats<F: Float> {
    wu_min: F,
    wu_max: F,
    identity_err: F,
}

impl<F: Float> StepStats<F> {
    fn new() -> Self {
        StepStats {
            wu_min: F::infinity(),
            wu_max: F::neg_infinity(),
            identity_err: F::zero(),
        }
    }
}

/// In-place update from a precomputed residual. `g_buf` is caller-owned
/// scratch so the training loop does not reallocate every step.
fn apply_step<F: Float>(
    st: &mut ModelState<F>,
    inst: &RegressionInstance<F>,
    r: ndarray::ArrayView1<F>,
    eta: F,
    mode: UpdateMode,
    g_buf: &mut Array1<F>,
    stats: &mut StepStats<F>,
) -> Result<(), ModelError> {
    linalg::mat_t_vec_into(inst.x.view(), r, g_buf);
    let n_f = F::of_usize(inst.n);
    let two_eta_lambda = F::cast(2.0) * eta * st.lambda;
    let mut finite = true;
    let g = g_buf.as_slice().expect("gradient buffer is contiguous");
    let v = st.v.as_slice_mut().expect("contiguous");
    let w = st.w.as_slice_mut().expect("contiguous");
    let u = st.u.as_slice_mut().expect("contiguous");
    for k in 0..g.len() {
        let gk = g[k] / n_f;
        let f = two_eta_lambda * gk;
        let wu_before = w[k] * u[k];
        let w_new = w[k] * (F::one() - f);
        let u_new = u[k] * (F::one() + f);
        let v_new = match mode {
            UpdateMode::Full => v[k] - eta * gk,
            UpdateMode::SecondOrderOnly => v[k],
        };
        let wu = w_new * u_new;
        stats.wu_min = stats.wu_min.min(wu);
        stats.wu_max = stats.wu_max.max(wu);
        let ideal = (F::one() - f * f) * wu_before;
        let scale = wu_before.abs().max(F::min_positive_value());
        stats.identity_err = stats.identity_err.max((wu - ideal).abs() / scale);
        finite &= w_new.is_finite() && u_new.is_finite() && v_new.is_finite();
        w[k] = w_new;
        u[k] = u_new;
        v[k] = v_new;
    }
    if !finite {
        return Err(ModelError::Diverged { step: st.step });
    }
    st.step += 1;
    Ok(())
}

/// `‖(d/n)v_S + λ w⊙²_{S+} − λ u⊙²_{S−} − β*‖_∞`. Off-support coordinates
/// contribute exactly zero, so the maximum runs over the support only.
pub fn signal_error_inf<F: Float>(st: &ModelState<F>, inst: &RegressionInstance<F>) -> F {
    let d_over_n = F::of_usize(inst.d) / F::of_usize(inst.n);
    let mut err = F::zero();
    for k in inst.support() {
        let target = inst.beta_star[k];
        let mut e = d_over_n * st.v[k] - target;
        if target > F::zero() {
            e += st.lambda * st.w[k] * st.w[k];
        } else if target < F::zero() {
            e -= st.lambda * st.u[k] * st.u[k];
        }
        err = err.max(e.abs());
    }
    err
}

/// Trains until the loss reaches ε or `max_iters`, recording a trace at
/// `t = 0`, every `record_every` steps, and at the final step.
pub fn train<F: Float>(
    inst: &RegressionInstance<F>,
    cfg: &TrainConfig<F>,
) -> Result<TrainOutcome<F>, ModelError> {
    train_with(inst, cfg, UpdateMode::Full, None)
}

/// Per-record callback used by the training loop's hook argument.
pub type RecordHook<'a, F> = &'a mut dyn FnMut(&TraceRecord<F>);

/// Training loop with an explicit update mode and an optional per-record
/// callback. Decomposition diagnostics are filled for full-model runs; with
/// `v` pinned the decomposition is meaningless and those fields stay zero.
pub fn train_with<F: Float>(
    inst: &RegressionInstance<F>,
    cfg: &TrainConfig<F>,
    mode: UpdateMode,
    mut hook: Option<RecordHook<'_, F>>,
) -> Result<TrainOutcome<F>, ModelError> {
    let mut state = init_state(cfg, inst)?;
    let n_f = F::of_usize(inst.n);
    let two_n = F::cast(2.0) * n_f;
    let xt_xi = linalg::mat_t_vec(inst.x.view(), inst.xi.view());
    let mut trace: Vec<TraceRecord<F>> = Vec::new();
    let mut stats = StepStats::new();
    let mut max_resid_increase = F::neg_infinity();
    let mut prev_resid: Option<F> = None;

    let mut beta = Array1::zeros(inst.d);
    let mut r = Array1::zeros(inst.n);
    let mut g_buf = Array1::zeros(inst.d);

    let stop = loop {
        let t = state.step;
        for (((b, &v), &w), &u) in beta
            .iter_mut()
            .zip(state.v.iter())
            .zip(state.w.iter())
            .zip(state.u.iter())
        {
            *b = v + state.lambda * (w * w - u * u);
        }
        linalg::mat_vec_into(inst.x.view(), beta.view(), &mut r);
        r -= &inst.y;
        let sum_sq = linalg::dot(r.view(), r.view());
        let resid_norm = sum_sq.sqrt();
        let loss = sum_sq / two_n;
        if let Some(prev) = prev_resid {
            max_resid_increase = max_resid_increase.max(resid_norm - prev);
        }
        prev_resid = Some(resid_norm);

        let stop = if loss <= cfg.epsilon {
            Some(StopReason::LossReached)
        } else if t >= cfg.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };

        if t == 0 || t % cfg.record_every == 0 || stop.is_some() {
            let rec = build_record(&state, inst, &beta, &xt_xi, cfg, mode, resid_norm, loss);
            if let Some(h) = hook.as_mut() {
                h(&rec);
            }
            trace.push(rec);
        }
        if let Some(reason) = stop {
            break reason;
        }
        if apply_step(
            &mut state,
            inst,
            r.view(),
            cfg.eta,
            mode,
            &mut g_buf,
            &mut stats,
        )
        .is_err()
        {
            break StopReason::Diverged;
        }
    };

    Ok(TrainOutcome {
        state,
        trace,
        stop,
        diagnostics: RunDiagnostics {
            max_resid_increase,
            wu_min: stats.wu_min,
            wu_max: stats.wu_max,
            product_identity_err: stats.identity_err,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn build_record<F: Float>(
    state: &ModelState<F>,
    inst: &RegressionInstance<F>,
    beta: &Array1<F>,
    xt_xi: &Array1<F>,
    cfg: &TrainConfig<F>,
    mode: UpdateMode,
    resid_norm: F,
    loss: F,
) -> TraceRecord<F> {
    let t = state.step;
    let mut diff = beta.clone();
    diff -= &inst.beta_star;
    let test_loss_l2 = linalg::l2_norm(diff.view());
    let v_norm = linalg::l2_norm(state.v.view());
    let v_s_norm = inst
        .support()
        .map(|k| state.v[k] * state.v[k])
        .fold(F::zero(), |a, b| a + b)
        .sqrt();
    let lambda = state.lambda;
    let second_order_norm = state
        .w
        .iter()
        .zip(state.u.iter())
        .map(|(&w, &u)| {
            let s = lambda * (w * w - u * u);
            s * s
        })
        .fold(F::zero(), |a, b| a + b)
        .sqrt();
    let w_off_inf = off_support_inf(&state.w, inst.support_pos());
    let u_off_inf = off_support_inf(&state.u, inst.support_neg());
    let (a_t, b_t, gamma_inf, zeta_inf) = match mode {
        UpdateMode::Full => {
            let (a_t, b_t) = decomposition::ideal_coefficients(t, cfg.eta, inst.n, inst.d);
            let (gamma_inf, zeta_inf) =
                decomposition::decomposition_residuals_with(state, inst, xt_xi, a_t, b_t);
            (a_t, b_t, gamma_inf, zeta_inf)
        }
        UpdateMode::SecondOrderOnly => (F::zero(), F::zero(), F::zero(), F::zero()),
    };
    TraceRecord {
        t,
        train_loss: loss,
        resid_norm,
        test_loss_l2,
        signal_error_inf: signal_error_inf(state, inst),
        v_norm,
        v_s_norm,
        second_order_norm,
        w_off_inf,
        u_off_inf,
        a_t,
        b_t,
        gamma_inf,
        zeta_inf,
    }
}

fn off_support_inf<F: Float>(v: &Array1<F>, support: &[usize]) -> F {
    let mut inside = vec![false; v.len()];
    for &k in support {
        inside[k] = true;
    }
    v.iter()
        .zip(inside)
        .filter(|(_, inside)| !inside)
        .fold(F::zero(), |m, (&x, _)| m.max(x.abs()))
}

/// First recorded step at which the signal error falls to
/// `c · (B_ξ + σ√(n/d))`: the empirical stage-1/stage-2 boundary.
pub fn detect_stage1_end<F: Float>(
    trace: &[TraceRecord<F>],
    inst: &RegressionInstance<F>,
    report: &AssumptionReport<F>,
    c: F,
) -> Option<u64> {
    let threshold =
        c * (report.b_xi + inst.sigma * (F::of_usize(inst.n) / F::of_usize(inst.d)).sqrt());
    trace
        .iter()
        .find(|rec| rec.signal_error_inf <= threshold)
        .map(|rec| rec.t)
}
