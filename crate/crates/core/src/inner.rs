//! Inner update maps and their schedules.
//!
//! Three schemes produce the sequence `y_0, .., y_K` for a frozen `x`:
//!
//! * [`Scheme::LlOnly`]: `y - s_l grad_y f` (classic unrolled descent),
//! * [`Scheme::Bda`]: `y - (a_k s_u grad_y F + (1 - a_k) s_l grad_y f)`,
//! * [`Scheme::ProxBda`]: the aggregated step with the lower-level direction
//!   replaced by the proximal-gradient residual `y - prox(y - s_l grad_y f)`.
//!
//! Step `k` (producing `y_k` from `y_{k-1}`) uses the weight `a_k`, `k >= 1`.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::linalg::{ensure_finite, ensure_len};
use crate::problem::BilevelProblem;
use crate::{BilevelError, Result, Scalar};

/// Upper bound applied to reciprocal weights so that `a_k < 1`.
pub const RECIPROCAL_CAP: f64 = 1.0 - 1e-6;

/// Schedules reject `beta` at or above `1 - BETA_GUARD`.
pub const BETA_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Scheme {
    LlOnly,
    Bda,
    ProxBda,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::LlOnly => "ll_only",
            Scheme::Bda => "bda",
            Scheme::ProxBda => "prox_bda",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = BilevelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ll_only" | "rhg" => Ok(Scheme::LlOnly),
            "bda" => Ok(Scheme::Bda),
            "prox_bda" => Ok(Scheme::ProxBda),
            other => Err(BilevelError::Input(format!("unknown scheme '{other}'"))),
        }
    }
}

/// How the aggregation weight `a_k` evolves with the inner step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlphaRule<T> {
    /// `a_k = min{2 gamma / (k (1 - beta)), 1 - eps}`
    Theoretical { gamma: T, eps: T, beta: T },
    /// `a_k = min{c / k, 1 - 1e-6}`
    Reciprocal { c: T },
    /// `a_k = a`; `a = 0` reduces the aggregated step to plain lower-level descent.
    Constant { a: T },
}

impl<T: Scalar> AlphaRule<T> {
    fn validate(&self) -> Result<()> {
        match *self {
            AlphaRule::Theoretical { gamma, eps, beta } => {
                if !(gamma > T::zero() && gamma <= T::one()) {
                    return Err(BilevelError::Parameter(format!(
                        "gamma = {gamma} must lie in (0, 1]"
                    )));
                }
                if !(eps > T::zero() && eps < T::one()) {
                    return Err(BilevelError::Parameter(format!(
                        "eps = {eps} must lie in (0, 1)"
                    )));
                }
                if !(beta >= T::zero() && beta < T::one() - T::lit(BETA_GUARD)) {
                    return Err(BilevelError::Parameter(format!(
                        "beta = {beta} must lie in [0, 1 - {BETA_GUARD})"
                    )));
                }
            }
            AlphaRule::Reciprocal { c } => {
                if !(c > T::zero()) || !c.is_finite() {
                    return Err(BilevelError::Parameter(format!(
                        "reciprocal constant {c} must be > 0"
                    )));
                }
            }
            AlphaRule::Constant { a } => {
                if !(a >= T::zero() && a <= T::one()) {
                    return Err(BilevelError::Parameter(format!(
                        "constant alpha {a} must lie in [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `beta = sqrt(1 - 2 s_u sigma L_F / (sigma + L_F))`
pub fn beta_of<T: Scalar>(s_u: T, sigma: T, l_f: T) -> Result<T> {
    if !(sigma > T::zero()) || !(l_f >= sigma) {
        return Err(BilevelError::Parameter(format!(
            "need 0 < sigma <= L_F, got sigma = {sigma}, L_F = {l_f}"
        )));
    }
    let two = T::lit(2.0);
    if !(s_u > T::zero() && s_u <= two / (l_f + sigma) * (T::one() + T::epsilon())) {
        return Err(BilevelError::Parameter(format!(
            "s_u = {s_u} must lie in (0, 2/(L_F + sigma)]"
        )));
    }
    let radicand = T::one() - two * s_u * sigma * l_f / (sigma + l_f);
    if radicand < T::lit(-1e-12) {
        return Err(BilevelError::Parameter(format!(
            "beta radicand {radicand} is negative"
        )));
    }
    let beta = radicand.max(T::zero()).sqrt();
    if beta >= T::one() {
        return Err(BilevelError::Parameter(format!(
            "beta = {beta} is not below 1"
        )));
    }
    Ok(beta)
}

/// Aggregation weight for inner step `k >= 1`.
pub fn alpha_at<T: Scalar>(k: usize, rule: &AlphaRule<T>) -> Result<T> {
    if k == 0 {
        return Err(BilevelError::Input("alpha index starts at k = 1".into()));
    }
    let kk = T::from_usize(k).ok_or_else(|| BilevelError::Input(format!("k = {k} overflows")))?;
    match *rule {
        AlphaRule::Theoretical { gamma, eps, beta } => {
            if !(beta < T::one()) {
                return Err(BilevelError::Parameter(format!(
                    "beta = {beta} must be below 1"
                )));
            }
            let two = T::lit(2.0);
            Ok((two * gamma / (kk * (T::one() - beta))).min(T::one() - eps))
        }
        AlphaRule::Reciprocal { c } => Ok((c / kk).min(T::lit(RECIPROCAL_CAP))),
        AlphaRule::Constant { a } => Ok(a),
    }
}

/// Step sizes, aggregation rule and unroll length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule<T> {
    pub s_u: T,
    pub s_l: T,
    pub alpha: AlphaRule<T>,
    pub k: usize,
}

impl<T: Scalar> Schedule<T> {
    pub fn new(s_u: T, s_l: T, alpha: AlphaRule<T>, k: usize) -> Result<Self> {
        if !(s_u > T::zero()) || !s_u.is_finite() {
            return Err(BilevelError::Parameter(format!("s_u = {s_u} must be > 0")));
        }
        if !(s_l > T::zero()) || !s_l.is_finite() {
            return Err(BilevelError::Parameter(format!("s_l = {s_l} must be > 0")));
        }
        alpha.validate()?;
        Ok(Self { s_u, s_l, alpha, k })
    }

    /// Theoretical schedule with `beta` derived from the upper-level constants.
    pub fn theoretical(
        s_u: T,
        s_l: T,
        gamma: T,
        eps: T,
        sigma: T,
        ul_smoothness: T,
        k: usize,
    ) -> Result<Self> {
        let beta = beta_of(s_u, sigma, ul_smoothness)?;
        Self::new(s_u, s_l, AlphaRule::Theoretical { gamma, eps, beta }, k)
    }

    /// Largest admissible steps `s_l = 1/L_f`, `s_u = 2/(L_F + sigma)` from
    /// known constants, with the theoretical aggregation rule.
    pub fn from_constants(
        constants: &crate::ProblemConstants<T>,
        gamma: T,
        eps: T,
        k: usize,
    ) -> Result<Self> {
        let (Some(l_ul), Some(sigma), Some(l_ll)) = (
            constants.ul_smoothness,
            constants.ul_strong_convexity,
            constants.ll_smoothness,
        ) else {
            return Err(BilevelError::Configuration(
                "L_F, sigma and L_f must be known; pass s_u, s_l and beta explicitly instead"
                    .into(),
            ));
        };
        if !(l_ll > T::zero()) {
            return Err(BilevelError::Parameter("L_f must be > 0".into()));
        }
        let s_u = T::lit(2.0) / (l_ul + sigma);
        let s_l = T::one() / l_ll;
        Self::theoretical(s_u, s_l, gamma, eps, sigma, l_ul, k)
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn alpha(&self, k: usize) -> Result<T> {
        alpha_at(k, &self.alpha)
    }

    /// Weight actually used by `scheme` at step `k` (zero for lower-level-only descent).
    pub fn alpha_for(&self, scheme: Scheme, k: usize) -> Result<T> {
        match scheme {
            Scheme::LlOnly => Ok(T::zero()),
            Scheme::Bda | Scheme::ProxBda => self.alpha(k),
        }
    }
}

/// Recorded inner trajectory for one frozen `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerTape<T> {
    pub x: Vec<T>,
    /// `y_0 .. y_K`
    pub iterates: Vec<Vec<T>>,
    /// `a_1 .. a_K` (all zero for [`Scheme::LlOnly`]).
    pub alphas: Vec<T>,
    pub scheme: Scheme,
    pub schedule: Schedule<T>,
}

impl<T: Scalar> InnerTape<T> {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn last(&self) -> &[T] {
        self.iterates.last().expect("tape holds y_0")
    }

    /// Re-applies the recorded steps from `y_0`; `Ok(true)` when every iterate
    /// is reproduced bitwise.
    pub fn replays<P: BilevelProblem<T> + ?Sized>(&self, problem: &P) -> Result<bool> {
        let mut y = self.iterates[0].clone();
        for (k, &a) in self.alphas.iter().enumerate() {
            y = step(problem, self.scheme, &self.x, &y, &self.schedule, a)?;
            if y != self.iterates[k + 1] {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn check_step_sizes<T: Scalar>(s_u: T, s_l: T, alpha: T) -> Result<()> {
    if !(s_u > T::zero()) || !(s_l > T::zero()) {
        return Err(BilevelError::Parameter(format!(
            "step sizes must be > 0 (s_u = {s_u}, s_l = {s_l})"
        )));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(BilevelError::Parameter(format!(
            "alpha = {alpha} must lie in [0, 1]"
        )));
    }
    Ok(())
}

/// `y - s_l grad_y f(x, y)`
pub fn ll_step<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    s_l: T,
) -> Result<Vec<T>> {
    if !(s_l > T::zero()) {
        return Err(BilevelError::Parameter(format!("s_l = {s_l} must be > 0")));
    }
    let gf = problem.ll_grad_y(x, y);
    ensure_len(&gf, y.len(), "grad_y f")?;
    ensure_finite(&gf, "grad_y f")?;
    Ok(y.iter().zip(&gf).map(|(&yi, &gi)| yi - s_l * gi).collect())
}

/// `y - (a s_u grad_y F(x, y) + (1 - a) s_l grad_y f(x, y))`
pub fn bda_step<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    s_u: T,
    s_l: T,
    alpha: T,
) -> Result<Vec<T>> {
    check_step_sizes(s_u, s_l, alpha)?;
    let g_ul = problem.ul_grad_y(x, y);
    let g_ll = problem.ll_grad_y(x, y);
    ensure_len(&g_ul, y.len(), "grad_y F")?;
    ensure_len(&g_ll, y.len(), "grad_y f")?;
    ensure_finite(&g_ul, "grad_y F")?;
    ensure_finite(&g_ll, "grad_y f")?;
    let w_ul = alpha * s_u;
    let w_ll = (T::one() - alpha) * s_l;
    Ok(y.iter()
        .zip(g_ul.iter().zip(&g_ll))
        .map(|(&yi, (&gu, &gl))| yi - (w_ul * gu + w_ll * gl))
        .collect())
}

/// Per-coordinate `sign(z) max(|z| - t, 0)`.
pub fn soft_threshold<T: Scalar>(z: &[T], t: T) -> Vec<T> {
    z.iter()
        .map(|&v| {
            let shrunk = (v.abs() - t).max(T::zero());
            if shrunk == T::zero() {
                T::zero()
            } else {
                v.signum() * shrunk
            }
        })
        .collect()
}

/// Pre-prox point `y - s_l grad_y f(x, y)` of the proximal step.
pub(crate) fn prox_input<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    s_l: T,
) -> Result<Vec<T>> {
    ll_step(problem, x, y, s_l)
}

/// Aggregated step with the proximal lower-level residual
/// `d_h = y - prox_{s_l g}(y - s_l grad_y f)`:
/// `y - (a s_u grad_y F + (1 - a) d_h)`.
pub fn prox_bda_step<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    s_u: T,
    s_l: T,
    alpha: T,
) -> Result<Vec<T>> {
    check_step_sizes(s_u, s_l, alpha)?;
    let g = problem.nonsmooth().ok_or_else(|| {
        BilevelError::Configuration(format!("{} declares no prox map", problem.name()))
    })?;
    let z = prox_input(problem, x, y, s_l)?;
    let p = g.prox(x, &z, s_l);
    ensure_len(&p, y.len(), "prox_g")?;
    ensure_finite(&p, "prox_g")?;
    let g_ul = problem.ul_grad_y(x, y);
    ensure_len(&g_ul, y.len(), "grad_y F")?;
    ensure_finite(&g_ul, "grad_y F")?;
    let w_ul = alpha * s_u;
    let w_ll = T::one() - alpha;
    Ok(y.iter()
        .zip(g_ul.iter().zip(&p))
        .map(|(&yi, (&gu, &pi))| yi - (w_ul * gu + w_ll * (yi - pi)))
        .collect())
}

pub(crate) fn step<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    scheme: Scheme,
    x: &[T],
    y: &[T],
    schedule: &Schedule<T>,
    alpha: T,
) -> Result<Vec<T>> {
    match scheme {
        Scheme::LlOnly => ll_step(problem, x, y, schedule.s_l),
        Scheme::Bda => bda_step(problem, x, y, schedule.s_u, schedule.s_l, alpha),
        Scheme::ProxBda => prox_bda_step(problem, x, y, schedule.s_u, schedule.s_l, alpha),
    }
}

/// Unrolls `schedule.k` steps of `scheme` from `y0` at fixed `x`.
pub fn run_inner<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y0: &[T],
    schedule: &Schedule<T>,
    scheme: Scheme,
) -> Result<InnerTape<T>> {
    ensure_len(x, problem.ul_dim(), "x")?;
    ensure_len(y0, problem.ll_dim(), "y_0")?;
    if scheme == Scheme::ProxBda && problem.nonsmooth().is_none() {
        return Err(BilevelError::Configuration(format!(
            "{} declares no prox map",
            problem.name()
        )));
    }
    let mut iterates = Vec::with_capacity(schedule.k + 1);
    let mut alphas = Vec::with_capacity(schedule.k);
    iterates.push(y0.to_vec());
    for k in 1..=schedule.k {
        let a = schedule.alpha_for(scheme, k)?;
        let next = step(problem, scheme, x, &iterates[k - 1], schedule, a)?;
        iterates.push(next);
        alphas.push(a);
    }
    Ok(InnerTape {
        x: x.to_vec(),
        iterates,
        alphas,
        scheme,
        schedule: *schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{counter_example, QuadraticSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn beta_examples() {
        assert_eq!(beta_of(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(beta_of(0.5, 1.0, 3.0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn beta_decreases_in_step_and_tends_to_one() {
        let small = beta_of(1e-8, 1.0, 3.0).unwrap();
        assert!(small < 1.0 && small > 1.0 - 1e-8);
        let mut prev = 1.0;
        for s in [0.01, 0.1, 0.2, 0.3, 0.4, 0.5] {
            let b = beta_of(s, 1.0, 3.0).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn beta_rejects_bad_parameters() {
        assert!(beta_of(0.6, 1.0, 3.0).is_err());
        assert!(beta_of(0.1, 3.0, 1.0).is_err());
        assert!(beta_of(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        let rule = AlphaRule::Theoretical {
            gamma: 0.5,
            eps: 0.1,
            beta: 0.0,
        };
        assert_abs_diff_eq!(alpha_at(1, &rule).unwrap(), 0.9);
        assert_abs_diff_eq!(alpha_at(10, &rule).unwrap(), 0.1, epsilon = 1e-15);
        assert_eq!(
            alpha_at(2, &AlphaRule::Reciprocal { c: 0.5 }).unwrap(),
            0.25
        );
        assert_eq!(
            alpha_at(1, &AlphaRule::Reciprocal { c: 5.0 }).unwrap(),
            RECIPROCAL_CAP
        );
        assert_eq!(alpha_at(7, &AlphaRule::Constant { a: 0.0 }).unwrap(), 0.0);
        assert!(alpha_at(0, &AlphaRule::Constant { a: 0.3 }).is_err());
        assert!(alpha_at(
            3,
            &AlphaRule::Theoretical {
                gamma: 0.5,
                eps: 0.1,
                beta: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn theoretical_alpha_is_non_increasing_and_bounded() {
        let rule = AlphaRule::Theoretical {
            gamma: 1.0,
            eps: 0.05,
            beta: 0.7,
        };
        let mut prev = f64::INFINITY;
        for k in 1..500 {
            let a = alpha_at(k, &rule).unwrap();
            assert!(a > 0.0 && a <= 0.95 && a <= prev);
            prev = a;
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0.0, 0.1, AlphaRule::Constant { a: 0.5 }, 3).is_err());
        assert!(Schedule::new(0.1, 0.1, AlphaRule::Constant { a: 1.5 }, 3).is_err());
        let near_one = AlphaRule::Theoretical {
            gamma: 0.5,
            eps: 0.1,
            beta: 1.0 - 1e-10,
        };
        assert!(Schedule::new(0.1, 0.1, near_one, 3).is_err());
        assert!(
            Schedule::<f64>::from_constants(&crate::ProblemConstants::unknown(), 0.5, 0.1, 3)
                .is_err()
        );
    }

    #[test]
    fn ll_step_examples() {
        let p = counter_example();
        assert_eq!(
            ll_step(&p, &[1.0], &[0.0, 0.0], 0.5).unwrap(),
            vec![0.5, 0.0]
        );
        // stationary point of f is a fixed point
        assert_eq!(
            ll_step(&p, &[0.7], &[0.7, -3.0], 0.5).unwrap(),
            vec![0.7, -3.0]
        );
        let iso = QuadraticSpec::isotropic_ll(2).build().unwrap();
        assert_eq!(
            ll_step(&iso, &[0.0], &[2.0, 2.0], 0.25).unwrap(),
            vec![1.5, 1.5]
        );
    }

    #[test]
    fn bda_step_examples() {
        let p = counter_example();
        let y = bda_step(&p, &[0.0], &[2.0, 2.0], 0.7, 0.2, 0.5).unwrap();
        assert_abs_diff_eq!(y[0], 1.45, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], 1.3, epsilon = 1e-14);
        let x = [0.3];
        let y0 = [1.2, -0.4];
        assert_eq!(
            bda_step(&p, &x, &y0, 0.7, 0.2, 0.0).unwrap(),
            ll_step(&p, &x, &y0, 0.2).unwrap()
        );
        let pure_ul = bda_step(&p, &x, &y0, 0.7, 0.2, 1.0).unwrap();
        let g = p.ul_grad_y(&x, &y0);
        assert_eq!(pure_ul, vec![y0[0] - 0.7 * g[0], y0[1] - 0.7 * g[1]]);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&[1.5], 1.0), vec![0.5]);
        assert_eq!(soft_threshold(&[-0.3], 1.0), vec![0.0]);
        assert_eq!(soft_threshold(&[0.0], 3.0), vec![0.0]);
        assert_eq!(soft_threshold(&[-2.5], 1.0), vec![-1.5]);
    }

    #[test]
    fn prox_step_requires_prox() {
        let p = counter_example();
        let err = prox_bda_step(&p, &[0.0], &[0.0, 0.0], 0.7, 0.2, 0.5).unwrap_err();
        assert!(matches!(err, BilevelError::Configuration(_)));
        let sched = Schedule::new(0.7, 0.2, AlphaRule::Constant { a: 0.0 }, 2).unwrap();
        assert!(run_inner(&p, &[0.0], &[0.0, 0.0], &sched, Scheme::ProxBda).is_err());
    }

    #[test]
    fn run_inner_base_cases() {
        let p = counter_example();
        let sched = Schedule::new(0.7, 0.2, AlphaRule::Reciprocal { c: 0.5 }, 0).unwrap();
        let tape = run_inner(&p, &[0.4], &[2.0, 2.0], &sched, Scheme::Bda).unwrap();
        assert_eq!(tape.iterates, vec![vec![2.0, 2.0]]);
        assert!(tape.alphas.is_empty());

        let tape = run_inner(&p, &[0.4], &[2.0, 2.0], &sched.with_k(1), Scheme::Bda).unwrap();
        let a1 = sched.alpha(1).unwrap();
        assert_eq!(
            tape.iterates[1],
            bda_step(&p, &[0.4], &[2.0, 2.0], 0.7, 0.2, a1).unwrap()
        );
        assert!(tape.replays(&p).unwrap());
    }

    #[test]
    fn ll_only_matches_counter_example_closed_form() {
        let p = counter_example();
        for &s_l in &[0.2, 0.5, 0.9] {
            let sched = Schedule::new(1.0, s_l, AlphaRule::Constant { a: 0.0 }, 100).unwrap();
            let x = 3.7;
            let tape = run_inner(&p, &[x], &[0.0, 0.0], &sched, Scheme::LlOnly).unwrap();
            for (k, y) in tape.iterates.iter().enumerate() {
                let expected = (1.0 - (1.0 - s_l).powi(k as i32)) * x;
                assert!(
                    (y[0] - expected).abs() <= 1e-12,
                    "k={k} {} vs {expected}",
                    y[0]
                );
                assert_eq!(y[1], 0.0);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let p = crate::zoo::counter_example_with::<f32>();
        let sched = Schedule::<f32>::new(0.7, 0.2, AlphaRule::Reciprocal { c: 0.5 }, 16).unwrap();
        let tape = run_inner(&p, &[1.0f32], &[2.0, 2.0], &sched, Scheme::Bda).unwrap();
        assert_eq!(tape.iterates.len(), 17);
        assert!(tape.replays(&p).unwrap());
    }
}
