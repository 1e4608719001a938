//! The two-dimensional counter-example whose lower level has the non-singleton
//! solution set `S(x) = {(x, c) : c in R}`:
//!
//! ```text
//! F(x, y) = (x - y_2)^2 / 2 + (y_1 - 1)^2 / 2,   f(x, y) = y_1^2 / 2 - x y_1,   x in [-100, 100]
//! ```
//!
//! Its bi-level optimum is `x* = 1, y* = (1, 1)`, while unrolled lower-level
//! descent from `y_0 = (0, 0)` never leaves `y_2 = 0` and stalls below `x = 1/2`.

use crate::problem::{BilevelProblem, BoxSet, ProblemConstants, Reference, ReferencePoint};
use crate::{BilevelError, Result, Scalar};

pub struct CounterExample<T> {
    bounds: BoxSet<T>,
    constants: ProblemConstants<T>,
}

pub fn counter_example() -> CounterExample<f64> {
    counter_example_with()
}

pub fn counter_example_with<T: Scalar>() -> CounterExample<T> {
    let one = Some(T::one());
    CounterExample {
        bounds: BoxSet::cube(1, T::lit(-100.0), T::lit(100.0)).expect("static box"),
        constants: ProblemConstants::new(one, one, one, None).expect("static constants"),
    }
}

impl<T: Scalar> BilevelProblem<T> for CounterExample<T> {
    fn name(&self) -> &str {
        "counterexample"
    }
    fn ul_dim(&self) -> usize {
        1
    }
    fn ll_dim(&self) -> usize {
        2
    }
    fn bounds(&self) -> &BoxSet<T> {
        &self.bounds
    }
    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn ul_value(&self, x: &[T], y: &[T]) -> T {
        let half = T::lit(0.5);
        let a = x[0] - y[1];
        let b = y[0] - T::one();
        half * a * a + half * b * b
    }

    fn ll_value(&self, x: &[T], y: &[T]) -> T {
        T::lit(0.5) * y[0] * y[0] - x[0] * y[0]
    }

    fn ul_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        vec![y[0] - T::one(), y[1] - x[0]]
    }

    fn ul_grad_x(&self, x: &[T], y: &[T]) -> Vec<T> {
        vec![x[0] - y[1]]
    }

    fn ll_grad_y(&self, x: &[T], y: &[T]) -> Vec<T> {
        vec![y[0] - x[0], T::zero()]
    }

    fn ll_grad_x(&self, _x: &[T], y: &[T]) -> Vec<T> {
        vec![-y[0]]
    }

    fn ul_hvp_yy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        v.to_vec()
    }

    fn ul_hvp_xy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        vec![-v[1]]
    }

    fn ll_hvp_yy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        vec![v[0], T::zero()]
    }

    fn ll_hvp_xy(&self, _x: &[T], _y: &[T], v: &[T]) -> Vec<T> {
        vec![-v[0]]
    }

    fn reference(&self) -> Option<&dyn Reference<T>> {
        Some(self)
    }
}

impl<T: Scalar> Reference<T> for CounterExample<T> {
    fn solution(&self) -> Option<ReferencePoint<T>> {
        Some(ReferencePoint {
            x: vec![T::one()],
            y: vec![T::one(), T::one()],
            ul_value: T::zero(),
        })
    }

    /// `f(x, y*)` with `y* = (1, 1)`.
    fn ll_reference_value(&self, x: &[T]) -> Option<T> {
        Some(self.ll_value(x, &[T::one(), T::one()]))
    }

    fn ll_optimal_value(&self, x: &[T]) -> Option<T> {
        Some(-T::lit(0.5) * x[0] * x[0])
    }

    fn project_onto_ll_solutions(&self, x: &[T], y: &[T]) -> Option<Vec<T>> {
        Some(vec![x[0], y[1]])
    }

    fn optimistic_solution(&self, x: &[T]) -> Option<Vec<T>> {
        Some(vec![x[0], x[0]])
    }
}

/// Minimizer of `phi_K` for unrolled lower-level descent from `y_0 = (0, 0)`:
/// `r / (1 + r^2)` with `r = 1 - prod_{k<K} (1 - s_l^k)`.
pub fn rhg_minimizer_closed_form<T: Scalar>(steps: &[T], k: usize) -> Result<T> {
    if steps.len() < k {
        return Err(BilevelError::Input(format!(
            "{k} steps requested but only {} step sizes given",
            steps.len()
        )));
    }
    let mut prod = T::one();
    for (i, &s) in steps[..k].iter().enumerate() {
        if !(s > T::zero() && s < T::one()) {
            return Err(BilevelError::Parameter(format!(
                "step {i} = {s} must lie in (0, 1)"
            )));
        }
        prod = prod * (T::one() - s);
    }
    let r = T::one() - prod;
    Ok(r / (T::one() + r * r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{verify_first_order, verify_hvp};

    #[test]
    fn values_at_optimum() {
        let p = counter_example();
        assert_eq!(p.ul_value(&[1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(p.ll_value(&[1.0], &[1.0, 1.0]), -0.5);
    }

    #[test]
    fn ll_gradient_matches_hand_derivative() {
        let p = counter_example();
        assert_eq!(p.ll_grad_y(&[1.0], &[0.0, 0.0]), vec![-1.0, 0.0]);
        let r = verify_first_order(&p, &[1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(r.passes(1e-8), "{r:?}");
    }

    #[test]
    fn hvps_match_hand_derivative() {
        let p = counter_example();
        let v = [0.7, -1.3];
        assert_eq!(p.ll_hvp_yy(&[0.4], &[2.0, 1.0], &v), vec![0.7, 0.0]);
        assert_eq!(p.ll_hvp_xy(&[0.4], &[2.0, 1.0], &v), vec![-0.7]);
        assert!(verify_hvp(&p, &[0.4], &[2.0, 1.0], &v, 1e-5)
            .unwrap()
            .passes(1e-8));
    }

    #[test]
    fn constants_from_hessians() {
        let c = *counter_example().constants();
        assert_eq!(
            (c.ul_smoothness, c.ul_strong_convexity, c.ll_smoothness),
            (Some(1.0), Some(1.0), Some(1.0))
        );
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(rhg_minimizer_closed_form::<f64>(&[], 0).unwrap(), 0.0);
        assert!((rhg_minimizer_closed_form::<f64>(&[0.5], 1).unwrap() - 0.4).abs() < 1e-15);
        let steps = vec![0.2; 2000];
        let mut prev = 0.0f64;
        for k in 0..2000 {
            let v = rhg_minimizer_closed_form(&steps, k).unwrap();
            assert!(v <= 0.5 && v >= prev);
            prev = v;
        }
        assert!((prev - 0.5).abs() < 1e-12);
        assert!(rhg_minimizer_closed_form(&[1.0], 1).is_err());
        assert!(rhg_minimizer_closed_form(&[0.5], 2).is_err());
    }

    #[test]
    fn solution_set_projection() {
        let p = counter_example();
        let r = p.reference().unwrap();
        assert_eq!(
            r.project_onto_ll_solutions(&[2.0], &[5.0, -1.0]),
            Some(vec![2.0, -1.0])
        );
    }
}
