//! Wrappers that alter one oracle of an existing problem; used to exercise
//! the verification gates, adjoint linearity and the prox degeneration.

use super::{BilevelProblem, BoxSet, NonsmoothTerm, OracleName, ProblemConstants, Reference};
use crate::Scalar;

/// Adds `delta` to the first coordinate of one oracle's output.
pub struct FaultyOracle<P> {
    pub inner: P,
    pub oracle: OracleName,
    pub delta: f64,
}

impl<P> FaultyOracle<P> {
    pub fn new(inner: P, oracle: OracleName, delta: f64) -> Self {
        Self {
            inner,
            oracle,
            delta,
        }
    }

    fn bump<T: Scalar>(&self, which: OracleName, mut v: Vec<T>) -> Vec<T> {
        if which == self.oracle {
            if let Some(first) = v.first_mut() {
                *first = *first + T::lit(self.delta);
            }
        }
        v
    }
}

/// Multiplies `grad_y F` by a constant, leaving every other oracle intact.
pub struct ScaledUlGradY<P> {
    pub inner: P,
    pub factor: f64,
}

/// `g = 0`: the prox is the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNonsmooth;

impl<T: Scalar> NonsmoothTerm<T> for ZeroNonsmooth {
    fn value(&self, _x: &[T], _y: &[T]) -> T {
        T::zero()
    }
    fn prox(&self, _x: &[T], z: &[T], _t: T) -> Vec<T> {
        z.to_vec()
    }
    fn prox_jacobian_diag(&self, _x: &[T], z: &[T], _t: T) -> Vec<T> {
        vec![T::one(); z.len()]
    }
}

/// Replaces (or adds) the nonsmooth lower-level part of a problem.
pub struct WithNonsmooth<P, G> {
    pub inner: P,
    pub term: G,
}

impl<P, G> WithNonsmooth<P, G> {
    pub fn new(inner: P, term: G) -> Self {
        Self { inner, term }
    }
}

macro_rules! delegate_smooth {
    () => {
        fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
            self.inner.ul_grad_x(x, y)
        }
        fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
            self.inner.ll_grad_y(x, y)
        }
        fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
            self.inner.ll_grad_x(x, y)
        }
        fn ul_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
            self.inner.ul_hvp_yy(x, y, v)
        }
        fn ul_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
            self.inner.ul_hvp_xy(x, y, v)
        }
        fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
            self.inner.ll_hvp_yy(x, y, v)
        }
        fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
            self.inner.ll_hvp_xy(x, y, v)
        }
    };
}

macro_rules! delegate_common {
    () => {
        fn name(&self) -> &str {
            self.inner.name()
        }
        fn ul_dim(&self) -> usize {
            self.inner.ul_dim()
        }
        fn ll_dim(&self) -> usize {
            self.inner.ll_dim()
        }
        fn bounds(&self) -> &BoxSet<T> {
            self.inner.bounds()
        }
        fn constants(&self) -> &ProblemConstants<T> {
            self.inner.constants()
        }
        fn ul_value(&self, x: &[T], y: &[T]) -> T {
            self.inner.ul_value(x, y)
        }
        fn ll_value(&self, x: &[T], y: &[T]) -> T {
            self.inner.ll_value(x, y)
        }
        fn nonsmooth(&self) -> Option<&dyn NonsmoothTerm<T>> {
            self.inner.nonsmooth()
        }
        fn reference(&self) -> Option<&dyn Reference<T>> {
            self.inner.reference()
        }
    };
}

impl<T: Scalar, P: BilevelProblem<T>> BilevelProblem<T> for FaultyOracle<P> {
    delegate_common!();

    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.bump(OracleName::UlGradY, self.inner.ul_grad_y(x, y))
    }
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.bump(OracleName::UlGradX, self.inner.ul_grad_x(x, y))
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.bump(OracleName::LlGradY, self.inner.ll_grad_y(x, y))
    }
    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.bump(OracleName::LlGradX, self.inner.ll_grad_x(x, y))
    }
    fn ul_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.bump(OracleName::UlHvpYy, self.inner.ul_hvp_yy(x, y, v))
    }
    fn ul_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.bump(OracleName::UlHvpXy, self.inner.ul_hvp_xy(x, y, v))
    }
    fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.bump(OracleName::LlHvpYy, self.inner.ll_hvp_yy(x, y, v))
    }
    fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.bump(OracleName::LlHvpXy, self.inner.ll_hvp_xy(x, y, v))
    }
}

impl<T: Scalar, P: BilevelProblem<T>> BilevelProblem<T> for ScaledUlGradY<P> {
    delegate_common!();

    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        let s = T::lit(self.factor);
        self.inner
            .ul_grad_y(x, y)
            .into_iter()
            .map(|v| v * s)
            .collect()
    }
    delegate_smooth!();
}

impl<T: Scalar, P: BilevelProblem<T>, G: NonsmoothTerm<T>> BilevelProblem<T>
    for WithNonsmooth<P, G>
{
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn ul_dim(&self) -> usize {
        self.inner.ul_dim()
    }
    fn ll_dim(&self) -> usize {
        self.inner.ll_dim()
    }
    fn bounds(&self) -> &BoxSet<T> {
        self.inner.bounds()
    }
    fn constants(&self) -> &ProblemConstants<T> {
        self.inner.constants()
    }
    fn ul_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.ul_value(x, y)
    }
    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        self.inner.ll_value(x, y)
    }
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.inner.ul_grad_y(x, y)
    }
    delegate_smooth!();

    fn nonsmooth(&self) -> Option<&dyn NonsmoothTerm<T>> {
        Some(&self.term)
    }
}
