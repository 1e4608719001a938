//! Lasso lower level:
//!
//! ```text
//! F(x, y) = |y - center|^2 / 2 + rho |x|^2 / 2
//! f(x, y) = |Dy - (Mx + t0)|^2 / 2,   g(y) = mu |y|_1
//! ```

use crate::inner::soft_threshold;
use crate::linalg::{symmetric_eigen_range, DenseMatrix};
use crate::problem::{BilevelProblem, BoxSet, NonsmoothTerm, ProblemConstants};
use crate::zoo::quadratic::{QuadraticProblem, QuadraticSpec};
use crate::{BilevelError, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSpec<T> {
    /// `p x m`
    pub design: DenseMatrix<T>,
    /// `p x n`; the lower-level target is `target_map * x + target_offset`.
    pub target_map: DenseMatrix<T>,
    pub target_offset: Vec<T>,
    pub mu: T,
    pub ul_center: Vec<T>,
    pub x_weight: T,
    pub bounds: BoxSet<T>,
}

impl<T: Scalar> LassoSpec<T> {
    /// `D = [1]`, `t(x) = x`; the lower-level minimizer is `soft_threshold(x, mu)`.
    pub fn one_dimensional(mu: T) -> Self {
        Self {
            design: DenseMatrix::identity(1),
            target_map: DenseMatrix::identity(1),
            target_offset: vec![T::zero()],
            mu,
            ul_center: vec![T::lit(0.5)],
            x_weight: T::one(),
            bounds: BoxSet::cube(1, T::lit(-5.0), T::lit(5.0)).expect("static box"),
        }
    }

    /// The smooth quadratic instance obtained by dropping `g`.
    pub fn as_quadratic(&self) -> QuadraticSpec<T> {
        let m = self.design.cols();
        let n = self.target_map.cols();
        QuadraticSpec {
            a: self.design.clone(),
            b: self.target_map.clone(),
            c: self.target_offset.clone(),
            q: DenseMatrix::identity(m),
            lin: self.ul_center.iter().map(|&v| -v).collect(),
            cross: DenseMatrix::zeros(n, m),
            x_weight: self.x_weight,
            bounds: self.bounds.clone(),
        }
    }
}

/// `g(y) = mu |y|_1`, prox is soft-thresholding at `t * mu`.
#[derive(Debug, Clone, Copy)]
pub struct L1Prox<T> {
    pub mu: T,
}

impl<T: Scalar> NonsmoothTerm<T> for L1Prox<T> {
    fn value(&self, _x: &[T], y: &[T]) -> T {
        self.mu * y.iter().map(|v| v.abs()).sum::<T>()
    }

    fn prox(&self, _x: &[T], z: &[T], t: T) -> Vec<T> {
        soft_threshold(z, t * self.mu)
    }

    /// Indicator of `|z_i| > t mu`; points on the kink get 0.
    fn prox_jacobian_diag(&self, _x: &[T], z: &[T], t: T) -> Vec<T> {
        let thr = t * self.mu;
        z.iter()
            .map(|v| if v.abs() > thr { T::one() } else { T::zero() })
            .collect()
    }
}

/// Smooth part delegated to a quadratic instance, plus the l1 term.
pub struct LassoProblem<T> {
    smooth: QuadraticProblem<T>,
    prox: L1Prox<T>,
    constants: ProblemConstants<T>,
}

pub fn lasso_ll_problem<T: Scalar>(spec: LassoSpec<T>) -> Result<LassoProblem<T>> {
    if !(spec.mu > T::zero()) {
        return Err(BilevelError::Parameter(format!(
            "mu = {} must be > 0",
            spec.mu
        )));
    }
    if spec.ul_center.len() != spec.design.cols() {
        return Err(BilevelError::Input(
            "upper-level center must have length m".into(),
        ));
    }
    let smooth = quadratic_for_lasso(&spec)?;
    let dtd = {
        let d = spec.design.to_nalgebra();
        d.transpose() * d
    };
    let (_, l_ll) = symmetric_eigen_range(&dtd);
    let constants = ProblemConstants::new(Some(T::one()), Some(T::one()), T::from_f64(l_ll), None)?;
    Ok(LassoProblem {
        smooth,
        prox: L1Prox { mu: spec.mu },
        constants,
    })
}

fn quadratic_for_lasso<T: Scalar>(spec: &LassoSpec<T>) -> Result<QuadraticProblem<T>> {
    Ok(spec.as_quadratic().build()?.with_name("lasso"))
}

impl<T: Scalar> LassoProblem<T> {
    pub fn mu(&self) -> T {
        self.prox.mu
    }
}

impl<T: Scalar> BilevelProblem<T> for LassoProblem<T> {
    fn name(&self) -> &str {
        "lasso"
    }
    fn ul_dim(&self) -> usize {
        self.smooth.ul_dim()
    }
    fn ll_dim(&self) -> usize {
        self.smooth.ll_dim()
    }
    fn bounds(&self) -> &BoxSet<T> {
        self.smooth.bounds()
    }
    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }
    fn ul_value(&self, x: &[T], y: &[T]) -> T {
        self.smooth.ul_value(x, y)
    }
    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        self.smooth.ll_value(x, y)
    }
    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.smooth.ul_grad_y(x, y)
    }
    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.smooth.ul_grad_x(x, y)
    }
    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.smooth.ll_grad_y(x, y)
    }
    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.smooth.ll_grad_x(x, y)
    }
    fn ul_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.smooth.ul_hvp_yy(x, y, v)
    }
    fn ul_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.smooth.ul_hvp_xy(x, y, v)
    }
    fn ll_hvp_yy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.smooth.ll_hvp_yy(x, y, v)
    }
    fn ll_hvp_xy(&self, x: &[T], y: &[T], v: &[T]) -> Vec<T> {
        self.smooth.ll_hvp_xy(x, y, v)
    }
    fn nonsmooth(&self) -> Option<&dyn NonsmoothTerm<T>> {
        Some(&self.prox)
    }
}
