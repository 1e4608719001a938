//! Reverse-mode differentiation of `phi_K(x) = F(x, y_K(x))` through a
//! recorded inner tape.
//!
//! With `T_k` the step producing `y_k` from `y_{k-1}`, the adjoint recursion is
//!
//! ```text
//! lambda_K = grad_y F(x, y_K),  g = grad_x F(x, y_K)
//! for k = K..1:  g += (dT_k/dx)^T lambda_k;  lambda_{k-1} = (dT_k/dy)^T lambda_k
//! ```
//!
//! Only Hessian-vector oracles are needed; nothing is materialized.

use serde::Serialize;

use crate::inner::{prox_input, run_inner, InnerTape, Schedule, Scheme};
use crate::linalg::{ensure_finite, ensure_len, norm};
use crate::problem::BilevelProblem;
use crate::{BilevelError, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypergradResult<T> {
    /// `d phi_K / dx`
    pub grad: Vec<T>,
    /// `F(x, y_K)`
    pub phi_k: T,
    /// Number of inner steps differentiated through.
    pub truncation: usize,
    /// `|lambda|` after each reverse step, latest step first.
    pub adjoint_norms: Vec<T>,
}

/// Full reverse pass over every recorded step.
pub fn reverse_unroll<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    tape: &InnerTape<T>,
    problem: &P,
) -> Result<HypergradResult<T>> {
    truncated_reverse(tape, problem, tape.k())
}

/// Reverse pass over the last `tau` steps only; earlier iterates are treated
/// as constants in `x`.
pub fn truncated_reverse<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    tape: &InnerTape<T>,
    problem: &P,
    tau: usize,
) -> Result<HypergradResult<T>> {
    let k_total = tape.k();
    if tau > k_total {
        return Err(BilevelError::Input(format!(
            "truncation {tau} exceeds the {k_total} recorded steps"
        )));
    }
    check_tape(tape, problem)?;
    let x = &tape.x;
    let y_last = tape.last();

    let phi_k = problem.ul_value(x, y_last);
    if !phi_k.is_finite() {
        return Err(BilevelError::Evaluation("F(x, y_K) is not finite".into()));
    }
    let mut grad = problem.ul_grad_x(x, y_last);
    ensure_len(&grad, problem.ul_dim(), "grad_x F")?;
    let mut lambda = problem.ul_grad_y(x, y_last);
    ensure_len(&lambda, problem.ll_dim(), "grad_y F")?;
    ensure_finite(&grad, "grad_x F")?;
    ensure_finite(&lambda, "grad_y F")?;

    let mut adjoint_norms = Vec::with_capacity(tau);
    for k in (k_total - tau..k_total).rev() {
        let y_k = &tape.iterates[k];
        let alpha = tape.alphas[k];
        let (dx, dy) = step_vjp(problem, tape.scheme, &tape.schedule, x, y_k, alpha, &lambda)?;
        for (g, d) in grad.iter_mut().zip(&dx) {
            *g = *g + *d;
        }
        lambda = dy;
        adjoint_norms.push(norm(&lambda));
    }
    ensure_finite(&grad, "hypergradient")?;
    Ok(HypergradResult {
        grad,
        phi_k,
        truncation: tau,
        adjoint_norms,
    })
}

fn check_tape<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    tape: &InnerTape<T>,
    problem: &P,
) -> Result<()> {
    if tape.x.len() != problem.ul_dim() {
        return Err(BilevelError::Input(format!(
            "tape x has {} entries, problem expects {}",
            tape.x.len(),
            problem.ul_dim()
        )));
    }
    if tape.iterates.len() != tape.alphas.len() + 1 {
        return Err(BilevelError::Input("tape must hold K + 1 iterates".into()));
    }
    if tape.iterates.iter().any(|y| y.len() != problem.ll_dim()) {
        return Err(BilevelError::Input(format!(
            "tape iterates do not match lower-level dimension {}",
            problem.ll_dim()
        )));
    }
    if tape.scheme == Scheme::ProxBda && problem.nonsmooth().is_none() {
        return Err(BilevelError::Configuration(format!(
            "prox tape replayed against {}, which declares no prox map",
            problem.name()
        )));
    }
    Ok(())
}

/// `((dT/dx)^T lambda, (dT/dy)^T lambda)` for one recorded step at `y_k`.
fn step_vjp<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    scheme: Scheme,
    schedule: &Schedule<T>,
    x: &[T],
    y_k: &[T],
    alpha: T,
    lambda: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let w_ul = alpha * schedule.s_u;
    let n = problem.ul_dim();
    let m = problem.ll_dim();

    // Upper-level contribution is identical for the smooth and prox schemes.
    let (ul_dy, ul_dx) = if w_ul != T::zero() {
        let hy = problem.ul_hvp_yy(x, y_k, lambda);
        let hx = problem.ul_hvp_xy(x, y_k, lambda);
        ensure_len(&hy, m, "hvp_yy_F")?;
        ensure_len(&hx, n, "hvp_xy_F")?;
        (Some(hy), Some(hx))
    } else {
        (None, None)
    };

    let (dx, dy) = match scheme {
        Scheme::LlOnly | Scheme::Bda => {
            let w_ll = (T::one() - alpha) * schedule.s_l;
            let hy = problem.ll_hvp_yy(x, y_k, lambda);
            let hx = problem.ll_hvp_xy(x, y_k, lambda);
            ensure_len(&hy, m, "hvp_yy_f")?;
            ensure_len(&hx, n, "hvp_xy_f")?;
            let dy: Vec<T> = (0..m)
                .map(|i| {
                    let ul = ul_dy.as_ref().map_or(T::zero(), |h| w_ul * h[i]);
                    lambda[i] - (ul + w_ll * hy[i])
                })
                .collect();
            let dx: Vec<T> = (0..n)
                .map(|j| {
                    let ul = ul_dx.as_ref().map_or(T::zero(), |h| w_ul * h[j]);
                    -(ul + w_ll * hx[j])
                })
                .collect();
            (dx, dy)
        }
        Scheme::ProxBda => {
            // T(y) = a y - a s_u grad F + (1 - a) prox(y - s_l grad f)
            let g = problem.nonsmooth().ok_or_else(|| {
                BilevelError::Configuration(format!("{} declares no prox map", problem.name()))
            })?;
            let s_l = schedule.s_l;
            let w_ll = T::one() - alpha;
            let z = prox_input(problem, x, y_k, s_l)?;
            let diag = g.prox_jacobian_diag(x, &z, s_l);
            ensure_len(&diag, m, "prox jacobian")?;
            let u: Vec<T> = lambda.iter().zip(&diag).map(|(&l, &d)| l * d).collect();
            let hy = problem.ll_hvp_yy(x, y_k, &u);
            let hx = problem.ll_hvp_xy(x, y_k, &u);
            ensure_len(&hy, m, "hvp_yy_f")?;
            ensure_len(&hx, n, "hvp_xy_f")?;
            let dy: Vec<T> = (0..m)
                .map(|i| {
                    let ul = ul_dy.as_ref().map_or(T::zero(), |h| w_ul * h[i]);
                    alpha * lambda[i] - ul + w_ll * (u[i] - s_l * hy[i])
                })
                .collect();
            let dx: Vec<T> = (0..n)
                .map(|j| {
                    let ul = ul_dx.as_ref().map_or(T::zero(), |h| w_ul * h[j]);
                    -(ul + w_ll * s_l * hx[j])
                })
                .collect();
            (dx, dy)
        }
    };
    ensure_finite(&dy, "adjoint")?;
    ensure_finite(&dx, "hypergradient contribution")?;
    Ok((dx, dy))
}

/// Central finite differences of `x -> F(x, y_K(x))`, one fresh unroll per
/// perturbed point (`2n` unrolls in total).
pub fn fd_hypergrad<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y0: &[T],
    schedule: &Schedule<T>,
    scheme: Scheme,
    h: T,
) -> Result<Vec<T>> {
    if !(h > T::zero()) {
        return Err(BilevelError::Parameter(format!(
            "finite-difference step {h} must be > 0"
        )));
    }
    ensure_len(x, problem.ul_dim(), "x")?;
    let phi = |xp: &[T]| -> Result<T> {
        let tape = run_inner(problem, xp, y0, schedule, scheme)?;
        let v = problem.ul_value(xp, tape.last());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(BilevelError::Evaluation(
                "phi_K is not finite at a perturbed point".into(),
            ))
        }
    };
    let mut xp = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let plus = phi(&xp)?;
            xp[i] = x[i] - h;
            let minus = phi(&xp)?;
            xp[i] = x[i];
            Ok((plus - minus) / two_h)
        })
        .collect()
}
