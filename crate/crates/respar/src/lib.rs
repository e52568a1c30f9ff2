//! Gradient-descent training of the reparametrized sparse-regression model
//! `beta = v + lambda*(w⊙w - u⊙u)` on synthetic Gaussian data, with
//! instrumentation of the two-stage training dynamics (signal recovery by the
//! second-order term, then noise memorization by the linear term) and a set of
//! interpolating baselines to compare against: the minimum-ℓ₂-norm
//! interpolator, a Lasso-then-min-ℓ₂ hybrid, and second-order-only gradient
//! descent.
//!
//! The crate is organized around five modules:
//!
//! - [`instance`]: synthetic problem generation, regularity diagnostics and
//!   restricted-isometry constant estimation;
//! - [`model`]: the reparametrized model, loss/gradients, and the training
//!   loop with per-step diagnostics;
//! - [`decomposition`]: the ideal noise-fitting coefficients `a_t`, `b_t` and
//!   the measured remainder norms of the `v` decomposition;
//! - [`baselines`]: comparison interpolators;
//! - [`harness`]: experiment orchestration and CSV emission, also exposed
//!   through the `respar` CLI.
//!
//! All numeric code is generic over the scalar type via [`Float`]; concrete
//! `f64` aliases for the main data types live at the crate root. Experiments
//! and the CLI run in `f64`.

use std::fmt;
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{FromPrimitive, NumAssignOps, ToPrimitive};

pub mod baselines;
pub mod decomposition;
pub mod harness;
pub mod instance;
pub mod linalg;
pub mod model;
pub mod rng;

/// Scalar type the numeric core is generic over: `f32` or `f64`.
pub trait Float:
    num_traits::Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + Sum
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`. Panics only for values a float cannot
    /// represent at all, which cannot happen for finite literals.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in target float")
    }

    /// Exact for any count below 2^53, which covers every dimension and step
    /// count this crate handles.
    fn of_usize(n: usize) -> Self {
        Self::cast(n as f64)
    }
}

impl Float for f32 {}
impl Float for f64 {}

pub type Instance64 = instance::RegressionInstance<f64>;
pub type AssumptionReport64 = instance::AssumptionReport<f64>;
pub type ModelState64 = model::ModelState<f64>;
pub type TrainConfig64 = model::TrainConfig<f64>;
pub type TraceRecord64 = model::TraceRecord<f64>;
pub type BaselineResult64 = baselines::BaselineResult<f64>;
