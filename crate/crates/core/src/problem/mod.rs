//! Problem abstraction consumed by every solver.
//!
//! A [`BilevelProblem`] bundles the upper-level objective `F`, the smooth
//! lower-level objective `f`, their partial gradients and the mixed/second
//! order Hessian-vector products needed to differentiate an unrolled inner
//! loop. An optional [`NonsmoothTerm`] `g` turns the lower level into
//! `h = f + g`. Oracles must be pure: the solvers call them from several
//! threads and rely on bitwise-repeatable outputs.

mod faults;
mod verify;

use serde::Serialize;

pub use faults::{FaultyOracle, ScaledUlGradY, WithNonsmooth, ZeroNonsmooth};
pub use verify::{verify_first_order, verify_hvp, CheckEntry, CheckReport, OracleName};

use crate::linalg::ensure_len;
use crate::{BilevelError, Result, Scalar};

/// Axis-aligned box `{x : lower <= x <= upper}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSet<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoxSet<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(BilevelError::Input(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(BilevelError::Parameter(format!(
                    "box bound {i} is not finite"
                )));
            }
            if lo > hi {
                return Err(BilevelError::Parameter(format!(
                    "box bound {i}: lower {lo} exceeds upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^n`
    pub fn cube(n: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }
}

/// Euclidean projection onto the box (coordinate-wise clamp).
pub fn project_box<T: Scalar>(x: &[T], bounds: &BoxSet<T>) -> Result<Vec<T>> {
    ensure_len(x, bounds.dim(), "project_box")?;
    Ok(x.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&v, (&lo, &hi))| v.max(lo).min(hi))
        .collect())
}

/// Smoothness and convexity constants; any of them may be unknown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ProblemConstants<T> {
    /// Smoothness of `F(x, .)`.
    pub ul_smoothness: Option<T>,
    /// Strong convexity of `F(x, .)`.
    pub ul_strong_convexity: Option<T>,
    /// Smoothness of `f(x, .)`.
    pub ll_smoothness: Option<T>,
    /// Lipschitz constant of `F(x, .)`.
    pub ul_lipschitz: Option<T>,
}

impl<T: Scalar> ProblemConstants<T> {
    pub fn unknown() -> Self {
        Self {
            ul_smoothness: None,
            ul_strong_convexity: None,
            ll_smoothness: None,
            ul_lipschitz: None,
        }
    }

    pub fn new(
        ul_smoothness: Option<T>,
        ul_strong_convexity: Option<T>,
        ll_smoothness: Option<T>,
        ul_lipschitz: Option<T>,
    ) -> Result<Self> {
        for (name, v) in [
            ("L_F", ul_smoothness),
            ("sigma", ul_strong_convexity),
            ("L_f", ll_smoothness),
            ("L_0", ul_lipschitz),
        ] {
            if let Some(v) = v {
                if !(v >= T::zero()) || !v.is_finite() {
                    return Err(BilevelError::Parameter(format!(
                        "{name} = {v} must be finite and >= 0"
                    )));
                }
            }
        }
        if let (Some(l), Some(s)) = (ul_smoothness, ul_strong_convexity) {
            if s > l {
                return Err(BilevelError::Parameter(format!(
                    "strong convexity {s} exceeds smoothness {l}"
                )));
            }
        }
        Ok(Self {
            ul_smoothness,
            ul_strong_convexity,
            ll_smoothness,
            ul_lipschitz,
        })
    }
}

/// Known optimum of the bi-level problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferencePoint<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub ul_value: T,
}

/// Nonsmooth lower-level part `g(x, .)` accessed through its prox map.
///
/// The prox is assumed not to depend on `x` through anything the
/// hypergradient needs to differentiate (true for `mu * |y|_1`).
pub trait NonsmoothTerm<T: Scalar>: Send + Sync {
    fn value(&self, x: &[T], y: &[T]) -> T;

    /// `prox_{t g(x, .)}(z)`
    fn prox(&self, x: &[T], z: &[T], t: T) -> Vec<T>;

    /// Diagonal of an almost-everywhere Jacobian of the prox with respect to `z`.
    fn prox_jacobian_diag(&self, x: &[T], z: &[T], t: T) -> Vec<T>;
}

/// Reference data used only for metrics and test oracles; solvers never read it.
pub trait Reference<T: Scalar>: Send + Sync {
    fn solution(&self) -> Option<ReferencePoint<T>> {
        None
    }

    /// Lower-level value the `|f - f*|` metric compares against at `x`.
    fn ll_reference_value(&self, _x: &[T]) -> Option<T> {
        None
    }

    /// `min_y f(x, y)`
    fn ll_optimal_value(&self, _x: &[T]) -> Option<T> {
        None
    }

    /// Euclidean projection of `y` onto the lower-level solution set at `x`.
    fn project_onto_ll_solutions(&self, _x: &[T], _y: &[T]) -> Option<Vec<T>> {
        None
    }

    /// The lower-level solution minimizing `F(x, .)` (optimistic selection).
    fn optimistic_solution(&self, _x: &[T]) -> Option<Vec<T>> {
        None
    }
}

/// Oracle bundle for `min_x F(x, y) s.t. y in argmin f(x, .) (+ g)`.
///
/// Mixed products follow `ul_hvp_xy(x, y, v) = d/dx <grad_y F(x, y), v>`,
/// an `n`-vector; the `yy` products are `m`-vectors.
pub trait BilevelProblem<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn ul_dim(&self) -> usize;
    fn ll_dim(&self) -> usize;
    fn bounds(&self) -> &BoxSet<T>;
    fn constants(&self) -> &ProblemConstants<T>;

    fn ul_value(&self, x: &[T], y: &[T]) -> T;
    fn ll_value(&self, x: &[T], y: &[T]) -> T;
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T>;
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T>;
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T>;
    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T>;
    fn ul_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T>;
    fn ul_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T>;
    fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T>;
    fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T>;

    fn nonsmooth(&self) -> Option<&dyn NonsmoothTerm<T>> {
        None
    }

    fn reference(&self) -> Option<&dyn Reference<T>> {
        None
    }

    /// `f + g` when a nonsmooth part is present, `f` otherwise.
    fn ll_total_value(&self, x: &[T], y: &[T]) -> T {
        let f = self.ll_value(x, y);
        match self.nonsmooth() {
            Some(g) => f + g.value(x, y),
            None => f,
        }
    }
}

impl<T: Scalar, P: BilevelProblem<T> + ?Sized> BilevelProblem<T> for &P {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn ul_dim(&self) -> usize {
        (**self).ul_dim()
    }
    fn ll_dim(&self) -> usize {
        (**self).ll_dim()
    }
    fn bounds(&self) -> &BoxSet<T> {
        (**self).bounds()
    }
    fn constants(&self) -> &ProblemConstants<T> {
        (**self).constants()
    }
    fn ul_value(&self, x: &[T], y: &[T]) -> T {
        (**self).ul_value(x, y)
    }
    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        (**self).ll_value(x, y)
    }
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        (**self).ul_grad_y(x, y)
    }
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        (**self).ul_grad_x(x, y)
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        (**self).ll_grad_y(x, y)
    }
    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        (**self).ll_grad_x(x, y)
    }
    fn ul_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        (**self).ul_hvp_yy(x, y, v)
    }
    fn ul_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        (**self).ul_hvp_xy(x, y, v)
    }
    fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        (**self).ll_hvp_yy(x, y, v)
    }
    fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        (**self).ll_hvp_xy(x, y, v)
    }
    fn nonsmooth(&self) -> Option<&dyn NonsmoothTerm<T>> {
        (**self).nonsmooth()
    }
    fn reference(&self) -> Option<&dyn Reference<T>> {
        (**self).reference()
    }
}
