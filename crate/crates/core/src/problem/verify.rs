//! Finite-difference gates for user-supplied derivative oracles.

use std::fmt;

use serde::Serialize;

use super::BilevelProblem;
use crate::linalg::{dot, ensure_len};
use crate::{BilevelError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OracleName {
    UlGradY,
    UlGradX,
    LlGradY,
    LlGradX,
    UlHvpYy,
    UlHvpXy,
    LlHvpYy,
    LlHvpXy,
}

impl OracleName {
    pub const FIRST_ORDER: [OracleName; 4] = [
        OracleName::UlGradY,
        OracleName::UlGradX,
        OracleName::LlGradY,
        OracleName::LlGradX,
    ];

    pub const SECOND_ORDER: [OracleName; 4] = [
        OracleName::UlHvpYy,
        OracleName::UlHvpXy,
        OracleName::LlHvpYy,
        OracleName::LlHvpXy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OracleName::UlGradY => "grad_y_F",
            OracleName::UlGradX => "grad_x_F",
            OracleName::LlGradY => "grad_y_f",
            OracleName::LlGradX => "grad_x_f",
            OracleName::UlHvpYy => "hvp_yy_F",
            OracleName::UlHvpXy => "hvp_xy_F",
            OracleName::LlHvpYy => "hvp_yy_f",
            OracleName::LlHvpXy => "hvp_xy_f",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::FIRST_ORDER
            .into_iter()
            .chain(Self::SECOND_ORDER)
            .find(|o| o.as_str() == s)
    }
}

impl fmt::Display for OracleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry<T> {
    pub oracle: OracleName,
    /// `max_i |analytic_i - fd_i| / max(1, |fd_i|)`
    pub max_rel_deviation: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport<T> {
    pub step: T,
    pub entries: Vec<CheckEntry<T>>,
}

impl<T: Scalar> CheckReport<T> {
    pub fn deviation(&self, oracle: OracleName) -> Option<T> {
        self.entries
            .iter()
            .find(|e| e.oracle == oracle)
            .map(|e| e.max_rel_deviation)
    }

    /// Oracles whose deviation exceeds `tol`.
    pub fn failures(&self, tol: T) -> Vec<OracleName> {
        self.entries
            .iter()
            .filter(|e| !(e.max_rel_deviation <= tol))
            .map(|e| e.oracle)
            .collect()
    }

    pub fn passes(&self, tol: T) -> bool {
        self.failures(tol).is_empty()
    }

    pub fn merge(mut self, other: CheckReport<T>) -> Self {
        self.entries.extend(other.entries);
        self
    }
}

fn rel_deviation<T: Scalar>(analytic: &[T], fd: &[T]) -> T {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| (a - b).abs() / b.abs().max(T::one()))
        .fold(T::zero(), |m, d| if d > m || d.is_nan() { d } else { m })
}

fn finite_value<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(BilevelError::Evaluation(format!(
            "{what} is not finite near the check point"
        )))
    }
}

fn central_diff<T: Scalar>(
    base: &[T],
    h: T,
    what: &str,
    mut eval: impl FnMut(&[T]) -> T,
) -> Result<Vec<T>> {
    let two_h = h + h;
    let mut p = base.to_vec();
    (0..base.len())
        .map(|i| {
            p[i] = base[i] + h;
            let plus = finite_value(eval(&p), what)?;
            p[i] = base[i] - h;
            let minus = finite_value(eval(&p), what)?;
            p[i] = base[i];
            Ok((plus - minus) / two_h)
        })
        .collect()
}

fn check_inputs<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    h: T,
) -> Result<()> {
    if !(h > T::zero()) {
        return Err(BilevelError::Parameter(format!(
            "finite-difference step {h} must be > 0"
        )));
    }
    ensure_len(x, problem.ul_dim(), "x")?;
    ensure_len(y, problem.ll_dim(), "y")?;
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(BilevelError::Input("check point is not finite".into()));
    }
    Ok(())
}

/// Compares the four gradient oracles against central differences of `F` and `f`.
pub fn verify_first_order<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    h: T,
) -> Result<CheckReport<T>> {
    check_inputs(problem, x, y, h)?;
    let fd_ul_y = central_diff(y, h, "F", |yy| problem.ul_value(x, yy))?;
    let fd_ul_x = central_diff(x, h, "F", |xx| problem.ul_value(xx, y))?;
    let fd_ll_y = central_diff(y, h, "f", |yy| problem.ll_value(x, yy))?;
    let fd_ll_x = central_diff(x, h, "f", |xx| problem.ll_value(xx, y))?;

    let entries = [
        (OracleName::UlGradY, problem.ul_grad_y(x, y), fd_ul_y),
        (OracleName::UlGradX, problem.ul_grad_x(x, y), fd_ul_x),
        (OracleName::LlGradY, problem.ll_grad_y(x, y), fd_ll_y),
        (OracleName::LlGradX, problem.ll_grad_x(x, y), fd_ll_x),
    ]
    .into_iter()
    .map(|(oracle, analytic, fd)| entry(oracle, &analytic, &fd))
    .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport { step: h, entries })
}

/// Compares the four Hessian-vector oracles against central differences of
/// the corresponding gradient oracles along `v` (for `yy`) or along the
/// coordinate axes of `x` (for `xy`).
pub fn verify_hvp<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
    v: &[T],
    h: T,
) -> Result<CheckReport<T>> {
    check_inputs(problem, x, y, h)?;
    ensure_len(v, problem.ll_dim(), "v")?;

    let along_v = |grad: &dyn Fn(&[T]) -> Vec<T>| -> Result<Vec<T>> {
        let plus: Vec<T> = y.iter().zip(v).map(|(&a, &b)| a + h * b).collect();
        let minus: Vec<T> = y.iter().zip(v).map(|(&a, &b)| a - h * b).collect();
        let gp = grad(&plus);
        let gm = grad(&minus);
        let two_h = h + h;
        let out: Vec<T> = gp.iter().zip(&gm).map(|(&p, &m)| (p - m) / two_h).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(BilevelError::Evaluation(
                "gradient is not finite near the check point".into(),
            ))
        }
    };

    let fd_ul_yy = along_v(&|yy| problem.ul_grad_y(x, yy))?;
    let fd_ll_yy = along_v(&|yy| problem.ll_grad_y(x, yy))?;
    let fd_ul_xy = central_diff(x, h, "grad_y F", |xx| dot(&problem.ul_grad_y(xx, y), v))?;
    let fd_ll_xy = central_diff(x, h, "grad_y f", |xx| dot(&problem.ll_grad_y(xx, y), v))?;

    let entries = [
        (OracleName::UlHvpYy, problem.ul_hvp_yy(x, y, v), fd_ul_yy),
        (OracleName::UlHvpXy, problem.ul_hvp_xy(x, y, v), fd_ul_xy),
        (OracleName::LlHvpYy, problem.ll_hvp_yy(x, y, v), fd_ll_yy),
        (OracleName::LlHvpXy, problem.ll_hvp_xy(x, y, v), fd_ll_xy),
    ]
    .into_iter()
    .map(|(oracle, analytic, fd)| entry(oracle, &analytic, &fd))
    .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport { step: h, entries })
}

fn entry<T: Scalar>(oracle: OracleName, analytic: &[T], fd: &[T]) -> Result<CheckEntry<T>> {
    if analytic.len() != fd.len() {
        return Err(BilevelError::Input(format!(
            "{oracle} returned {} entries, expected {}",
            analytic.len(),
            fd.len()
        )));
    }
    Ok(CheckEntry {
        oracle,
        max_rel_deviation: rel_deviation(analytic, fd),
    })
}
