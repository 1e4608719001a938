//! First-order bi-level programming toolkit.
//!
//! The crate solves problems of the form
//!
//! ```text
//! min_{x in X} F(x, y)   s.t.   y in argmin_y f(x, y)   (+ g(x, y) when a prox is supplied)
//! ```
//!
//! by unrolling an inner iteration for `y` (plain lower-level descent or the
//! aggregated upper/lower descent step), differentiating the unrolled map in
//! reverse mode and running projected gradient descent on `x`.
//!
//! Everything is generic over the floating point type through [`Scalar`];
//! the `*64` aliases at the crate root fix it to `f64`, which is what the
//! test suites and the CLI use.

// `!(a > b)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hypergrad;
pub mod inner;
pub mod linalg;
pub mod outer;
pub mod problem;
pub mod zoo;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use error::{BilevelError, Result};
pub use hypergrad::{fd_hypergrad, reverse_unroll, truncated_reverse, HypergradResult};
pub use inner::{
    alpha_at, bda_step, beta_of, ll_step, prox_bda_step, run_inner, soft_threshold, AlphaRule,
    InnerTape, Schedule, Scheme,
};
pub use outer::{
    dist_to_solution_set, metrics, solve, MetricTable, RunTrace, SolveConfig, Truncation,
};
pub use problem::{
    project_box, verify_first_order, verify_hvp, BilevelProblem, BoxSet, CheckReport, FaultyOracle,
    NonsmoothTerm, OracleName, ProblemConstants, Reference, ReferencePoint, ScaledUlGradY,
    WithNonsmooth, ZeroNonsmooth,
};

/// Floating point type the solvers are generic over (`f32`, `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + serde::Serialize
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values at all, which no supported type does.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type BoxSet64 = BoxSet<f64>;
pub type ProblemConstants64 = ProblemConstants<f64>;
pub type Schedule64 = Schedule<f64>;
pub type AlphaRule64 = AlphaRule<f64>;
pub type InnerTape64 = InnerTape<f64>;
pub type HypergradResult64 = HypergradResult<f64>;
pub type SolveConfig64 = SolveConfig<f64>;
pub type RunTrace64 = RunTrace<f64>;
pub type Dataset64 = zoo::Dataset<f64>;
pub type DenseMatrix64 = linalg::DenseMatrix<f64>;
pub type DynProblem64 = dyn BilevelProblem<f64>;

pub type BoxSet32 = BoxSet<f32>;
pub type Schedule32 = Schedule<f32>;
pub type InnerTape32 = InnerTape<f32>;
