//! Quadratic bi-level instances
//!
//! ```text
//! F(x, y) = y'Qy/2 + q'y + x'Cy + rho |x|^2 / 2
//! f(x, y) = |Ay - Bx - c|^2 / 2
//! ```
//!
//! `S(x)` is the affine set of least-squares solutions of `Ay = Bx + c`; it
//! is a singleton exactly when `A` has full column rank. The reference
//! oracle solves the equality-constrained QP `min F(x, .) over S(x)` by a
//! null-space method on the SVD of `A`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{symmetric_eigen_range, DenseMatrix};
use crate::problem::{BilevelProblem, BoxSet, ProblemConstants, Reference};
use crate::{BilevelError, Result, Scalar};

/// Relative singular value cutoff used to detect rank deficiency of `A`.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticSpec<T> {
    /// `p x m`
    pub a: DenseMatrix<T>,
    /// `p x n`
    pub b: DenseMatrix<T>,
    /// length `p`
    pub c: Vec<T>,
    /// symmetric positive definite, `m x m`
    pub q: DenseMatrix<T>,
    /// length `m`
    pub lin: Vec<T>,
    /// `n x m`
    pub cross: DenseMatrix<T>,
    pub x_weight: T,
    pub bounds: BoxSet<T>,
}

impl<T: Scalar> QuadraticSpec<T> {
    /// `f = |y|^2 / 2`, `F = |y|^2 / 2 + x^2 / 2` with a single upper-level coordinate.
    pub fn isotropic_ll(m: usize) -> Self {
        Self {
            a: DenseMatrix::identity(m),
            b: DenseMatrix::zeros(m, 1),
            c: vec![T::zero(); m],
            q: DenseMatrix::identity(m),
            lin: vec![T::zero(); m],
            cross: DenseMatrix::zeros(1, m),
            x_weight: T::one(),
            bounds: BoxSet::cube(1, T::lit(-10.0), T::lit(10.0)).expect("static box"),
        }
    }

    pub fn build(self) -> Result<QuadraticProblem<T>> {
        quadratic_family(self)
    }

    pub fn ul_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn ll_dim(&self) -> usize {
        self.a.cols()
    }
}

/// Three instances with `n = 2`, `m = 3`: full-rank `A`, rank 2 and rank 1.
pub fn standard_quadratics() -> Vec<QuadraticSpec<f64>> {
    let q = DenseMatrix::from_f64_rows(&[&[2.0, 0.3, 0.0], &[0.3, 1.5, 0.2], &[0.0, 0.2, 1.0]])
        .unwrap();
    let cross = DenseMatrix::from_f64_rows(&[&[0.5, -0.2, 0.1], &[0.0, 0.4, -0.3]]).unwrap();
    let bounds = BoxSet::cube(2, -3.0, 3.0).unwrap();
    let base = |a: &[&[f64]], b: &[&[f64]], c: Vec<f64>| QuadraticSpec {
        a: DenseMatrix::from_f64_rows(a).unwrap(),
        b: DenseMatrix::from_f64_rows(b).unwrap(),
        c,
        q: q.clone(),
        lin: vec![0.3, -0.5, 0.2],
        cross: cross.clone(),
        x_weight: 0.5,
        bounds: bounds.clone(),
    };
    vec![
        base(
            &[&[2.0, 0.5, 0.0], &[0.0, 1.0, 0.3], &[0.2, 0.0, 1.5]],
            &[&[1.0, 0.0], &[0.5, -1.0], &[0.0, 0.7]],
            vec![0.1, -0.2, 0.4],
        ),
        base(
            &[&[1.0, 1.0, 0.0], &[0.0, 1.0, -1.0], &[1.0, 2.0, -1.0]],
            &[&[1.0, 0.2], &[0.0, 1.0], &[0.3, -0.4]],
            vec![0.5, 0.0, -0.3],
        ),
        base(
            &[&[1.0, -1.0, 2.0], &[0.5, -0.5, 1.0]],
            &[&[0.8, 0.0], &[0.0, 0.6]],
            vec![0.2, 0.1],
        ),
    ]
}

pub struct QuadraticProblem<T> {
    spec: QuadraticSpec<T>,
    constants: ProblemConstants<T>,
    name: String,
    reference: QuadraticReference,
}

/// Dense `f64` factorization backing the reference oracles.
struct QuadraticReference {
    b: DMatrix<f64>,
    c: DVector<f64>,
    q: DMatrix<f64>,
    lin: DVector<f64>,
    cross: DMatrix<f64>,
    pinv: DMatrix<f64>,
    /// Orthonormal basis of `null(A)`, `m x r` (possibly `r = 0`).
    null: DMatrix<f64>,
    rank: usize,
}

pub fn quadratic_family<T: Scalar>(spec: QuadraticSpec<T>) -> Result<QuadraticProblem<T>> {
    let (p, m, n) = (spec.a.rows(), spec.a.cols(), spec.b.cols());
    if spec.b.rows() != p || spec.c.len() != p {
        return Err(BilevelError::Input(
            "A, B and c must share their row count".into(),
        ));
    }
    if spec.q.rows() != m || spec.q.cols() != m || spec.lin.len() != m {
        return Err(BilevelError::Input(
            "Q and q must match the lower-level dimension".into(),
        ));
    }
    if spec.cross.rows() != n || spec.cross.cols() != m {
        return Err(BilevelError::Input("cross term must be n x m".into()));
    }
    if spec.bounds.dim() != n {
        return Err(BilevelError::Input("box dimension must equal n".into()));
    }
    if !spec.q.is_symmetric(T::lit(1e-12)) {
        return Err(BilevelError::Parameter("Q must be symmetric".into()));
    }
    if !(spec.x_weight >= T::zero()) {
        return Err(BilevelError::Parameter("x weight must be >= 0".into()));
    }

    let a = spec.a.to_nalgebra();
    let q = spec.q.to_nalgebra();
    let (sigma, l_ul) = symmetric_eigen_range(&q);
    if !(sigma > 0.0) {
        return Err(BilevelError::Parameter(format!(
            "upper-level Hessian must be positive definite (min eigenvalue {sigma})"
        )));
    }
    let ata = a.transpose() * &a;
    let (_, l_ll) = symmetric_eigen_range(&ata);

    // Eigenvectors of A'A with (numerically) zero eigenvalue span null(A).
    let eig = ata.clone().symmetric_eigen();
    let cutoff = RANK_TOL * l_ll.max(1.0);
    let null_cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &ev)| ev <= cutoff)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    let rank = m - null_cols.len();
    let null = if null_cols.is_empty() {
        DMatrix::<f64>::zeros(m, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    let pinv = a
        .clone()
        .pseudo_inverse(cutoff.sqrt())
        .map_err(|e| BilevelError::Parameter(format!("pseudo-inverse failed: {e}")))?;

    let to_t = |v: f64| T::from_f64(v);
    let constants = ProblemConstants::new(to_t(l_ul), to_t(sigma), to_t(l_ll), None)?;
    let name = if rank == m {
        "quadratic-singleton".to_string()
    } else {
        format!("quadratic-rank{rank}")
    };
    let reference = QuadraticReference {
        b: spec.b.to_nalgebra(),
        c: DVector::from_iterator(p, spec.c.iter().map(|v| v.to_f64_lossy())),
        lin: DVector::from_iterator(m, spec.lin.iter().map(|v| v.to_f64_lossy())),
        cross: spec.cross.to_nalgebra(),
        q,
        pinv,
        null,
        rank,
    };
    Ok(QuadraticProblem {
        spec,
        constants,
        name,
        reference,
    })
}

impl<T: Scalar> QuadraticProblem<T> {
    pub fn spec(&self) -> &QuadraticSpec<T> {
        &self.spec
    }

    pub fn rank(&self) -> usize {
        self.reference.rank
    }

    pub fn is_singleton(&self) -> bool {
        self.reference.rank == self.spec.ll_dim()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `Ay - Bx - c`
    fn residual(&self, x: &[T], y: &[T]) -> Vec<T> {
        let ay = self.spec.a.matvec(y);
        let bx = self.spec.b.matvec(x);
        ay.iter()
            .zip(&bx)
            .zip(&self.spec.c)
            .map(|((&u, &v), &w)| u - v - w)
            .collect()
    }

    /// Any point of `S(x)`: the minimum-norm least-squares solution.
    pub fn particular_solution(&self, x: &[T]) -> Vec<T> {
        let r = &self.reference;
        let rhs = &r.b * to_dv(x) + &r.c;
        from_dv(&(&r.pinv * rhs))
    }

    /// Orthonormal basis of `null(A)` as columns, in `f64`.
    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.reference.null
    }
}

fn to_dv<T: Scalar>(v: &[T]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|x| x.to_f64_lossy()))
}

fn from_dv<T: Scalar>(v: &DVector<f64>) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

impl<T: Scalar> BilevelProblem<T> for QuadraticProblem<T> {
    fn name(&self) -> &str {
        &self.name
    }
    fn ul_dim(&self) -> usize {
        self.spec.ul_dim()
    }
    fn ll_dim(&self) -> usize {
        self.spec.ll_dim()
    }
    fn bounds(&self) -> &BoxSet<T> {
        &self.spec.bounds
    }
    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn ul_value(&self, x: &[T], y: &[T]) -> T {
        let s = &self.spec;
        let half = T::lit(0.5);
        let qy = s.q.matvec(y);
        let cy = s.cross.matvec(y);
        let quad: T = y.iter().zip(&qy).map(|(&a, &b)| a * b).sum();
        let lin: T = y.iter().zip(&s.lin).map(|(&a, &b)| a * b).sum();
        let cross: T = x.iter().zip(&cy).map(|(&a, &b)| a * b).sum();
        let xx: T = x.iter().map(|&v| v * v).sum();
        half * quad + lin + cross + half * s.x_weight * xx
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        let r = self.residual(x, y);
        T::lit(0.5) * r.iter().map(|&v| v * v).sum::<T>()
    }

    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        let s = &self.spec;
        let qy = s.q.matvec(y);
        let ctx = s.cross.tmatvec(x);
        qy.iter()
            .zip(&s.lin)
            .zip(&ctx)
            .map(|((&a, &b), &c)| a + b + c)
            .collect()
    }

    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        let s = &self.spec;
        s.cross
            .matvec(y)
            .iter()
            .zip(x)
            .map(|(&cy, &xi)| cy + s.x_weight * xi)
            .collect()
    }

    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.spec.a.tmatvec(&self.residual(x, y))
    }

    fn ll_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        self.spec
            .b
            .tmatvec(&self.residual(x, y))
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    fn ul_hvp_yy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        self.spec.q.matvec(v)
    }

    fn ul_hvp_xy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        self.spec.cross.matvec(v)
    }

    fn ll_hvp_yy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        self.spec.a.tmatvec(&self.spec.a.matvec(v))
    }

    fn ll_hvp_xy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        self.spec
            .b
            .tmatvec(&self.spec.a.matvec(v))
            .into_iter()
            .map(|w| -w)
            .collect()
    }

    fn reference(&self) -> Option<&dyn Reference<T>> {
        Some(self)
    }
}

impl<T: Scalar> Reference<T> for QuadraticProblem<T> {
    fn ll_reference_value(&self, x: &[T]) -> Option<T> {
        self.ll_optimal_value(x)
    }

    fn ll_optimal_value(&self, x: &[T]) -> Option<T> {
        let y = self.particular_solution(x);
        Some(self.ll_value(x, &y))
    }

    fn project_onto_ll_solutions(&self, x: &[T], y: &[T]) -> Option<Vec<T>> {
        let r = &self.reference;
        let yp = to_dv(&self.particular_solution(x));
        let d = to_dv(y) - &yp;
        let proj = &yp + &r.null * (r.null.transpose() * d);
        Some(from_dv(&proj))
    }

    fn optimistic_solution(&self, x: &[T]) -> Option<Vec<T>> {
        let r = &self.reference;
        let yp = to_dv(&self.particular_solution(x));
        if r.null.ncols() == 0 {
            return Some(from_dv(&yp));
        }
        // min_z F(x, yp + N z):  (N'QN) z = -N'(Q yp + q + C'x)
        let xv = to_dv(x);
        let grad_at_yp = &r.q * &yp + &r.lin + r.cross.transpose() * xv;
        let reduced = r.null.transpose() * &r.q * &r.null;
        let rhs = -(r.null.transpose() * grad_at_yp);
        let z = reduced.cholesky()?.solve(&rhs);
        Some(from_dv(&(yp + &r.null * z)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;
    use crate::problem::{verify_first_order, verify_hvp};

    #[test]
    fn identity_a_gives_singleton() {
        let spec = QuadraticSpec::<f64>::isotropic_ll(2);
        let p = spec.build().unwrap();
        assert!(p.is_singleton());
        let x = [0.7];
        let r = p.reference().unwrap();
        assert_eq!(r.optimistic_solution(&x).unwrap(), vec![0.0, 0.0]);
        let y = [1.0, -2.0];
        let proj = r.project_onto_ll_solutions(&x, &y).unwrap();
        assert!(dist(&proj, &[0.0, 0.0]) < 1e-14);
    }

    #[test]
    fn rank_one_solution_set_is_a_line() {
        // S(x) = {(x, t)}, like the counter-example.
        let spec = QuadraticSpec {
            a: DenseMatrix::from_f64_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap(),
            b: DenseMatrix::from_f64_rows(&[&[1.0], &[0.0]]).unwrap(),
            c: vec![0.0, 0.0],
            ..QuadraticSpec::isotropic_ll(2)
        };
        let p: QuadraticProblem<f64> = spec.build().unwrap();
        assert_eq!(p.rank(), 1);
        let r = p.reference().unwrap();
        for &x in &[-2.0, 0.0, 1.5] {
            let proj = r.project_onto_ll_solutions(&[x], &[4.0, -3.0]).unwrap();
            assert!(dist(&proj, &[x, -3.0]) < 1e-12);
            assert!(r.ll_optimal_value(&[x]).unwrap().abs() < 1e-20);
        }
    }

    #[test]
    fn attainable_least_squares_has_zero_optimal_value() {
        for spec in standard_quadratics() {
            let p = spec.build().unwrap();
            let r = p.reference().unwrap();
            // with the rank-deficient instances Bx + c may leave range(A)
            let x = [0.3, -0.8];
            let fstar = r.ll_optimal_value(&x).unwrap();
            let y_opt = r.optimistic_solution(&x).unwrap();
            assert!((p.ll_value(&x, &y_opt) - fstar).abs() < 1e-10);
            if p.is_singleton() {
                assert!(fstar < 1e-20);
            }
        }
    }

    #[test]
    fn standard_instance_ranks() {
        let ranks: Vec<usize> = standard_quadratics()
            .into_iter()
            .map(|s| s.build().unwrap().rank())
            .collect();
        assert_eq!(ranks, vec![3, 2, 1]);
    }

    #[test]
    fn non_pd_upper_level_rejected() {
        let spec = QuadraticSpec {
            q: DenseMatrix::diagonal(&[1.0, 0.0]),
            ..QuadraticSpec::isotropic_ll(2)
        };
        assert!(matches!(spec.build(), Err(BilevelError::Parameter(_))));
    }

    #[test]
    fn oracles_pass_fd_checks() {
        for spec in standard_quadratics() {
            let p = spec.build().unwrap();
            let x = [0.4, -1.1];
            let y = [0.2, 0.9, -0.5];
            assert!(verify_first_order(&p, &x, &y, 1e-5).unwrap().passes(1e-7));
            assert!(verify_hvp(&p, &x, &y, &[1.0, -0.5, 0.25], 1e-5)
                .unwrap()
                .passes(1e-7));
        }
    }

    #[test]
    fn optimistic_solution_matches_line_search() {
        // brute force along the null direction of the rank-2 instance
        let p = standard_quadratics().remove(1).build().unwrap();
        let x = [0.6, -0.4];
        let yp = p.particular_solution(&x);
        let n: Vec<f64> = p.null_basis().column(0).iter().cloned().collect();
        let mut best = (f64::INFINITY, 0.0);
        let mut t = -10.0;
        while t <= 10.0 {
            let y: Vec<f64> = yp.iter().zip(&n).map(|(a, b)| a + t * b).collect();
            let v = p.ul_value(&x, &y);
            if v < best.0 {
                best = (v, t);
            }
            t += 1e-4;
        }
        let y_grid: Vec<f64> = yp.iter().zip(&n).map(|(a, b)| a + best.1 * b).collect();
        let y_qp = p.reference().unwrap().optimistic_solution(&x).unwrap();
        assert!(dist(&y_grid, &y_qp) <= 1e-4, "{y_grid:?} vs {y_qp:?}");
    }
}
