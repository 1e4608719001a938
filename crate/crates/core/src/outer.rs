//! Projected hypergradient descent on `x` and the run traces it produces.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::hypergrad::{reverse_unroll, truncated_reverse};
use crate::inner::{run_inner, Schedule, Scheme};
use crate::linalg::{dist, ensure_len, norm};
use crate::problem::{project_box, BilevelProblem};
use crate::{BilevelError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Truncation {
    Full,
    /// Differentiate through the last `tau` inner steps only.
    Last(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveConfig<T> {
    pub scheme: Scheme,
    pub schedule: Schedule<T>,
    pub y0: Vec<T>,
    pub x0: Vec<T>,
    /// Outer step size.
    pub step: T,
    /// Outer iteration budget.
    pub iterations: usize,
    pub truncation: Truncation,
    /// Start each unroll from the previous outer iteration's `y_K`.
    pub warm_start: bool,
    /// Stop once `|x_{t+1} - x_t| <= stop_tol`; zero runs the full budget.
    pub stop_tol: T,
    pub seed: u64,
    /// Record wall-clock milliseconds per row; off keeps traces byte-reproducible.
    pub record_timing: bool,
}

impl<T: Scalar> SolveConfig<T> {
    pub fn new(scheme: Scheme, schedule: Schedule<T>, x0: Vec<T>, y0: Vec<T>) -> Self {
        Self {
            scheme,
            schedule,
            y0,
            x0,
            step: T::lit(0.1),
            iterations: 100,
            truncation: Truncation::Full,
            warm_start: false,
            stop_tol: T::zero(),
            seed: 0,
            record_timing: false,
        }
    }

    pub fn with_step(mut self, step: T) -> Self {
        self.step = step;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn validate<P: BilevelProblem<T> + ?Sized>(&self, problem: &P) -> Result<()> {
        ensure_len(&self.x0, problem.ul_dim(), "x0")?;
        ensure_len(&self.y0, problem.ll_dim(), "y0")?;
        if !(self.step > T::zero()) || !self.step.is_finite() {
            return Err(BilevelError::Parameter(format!(
                "outer step {} must be > 0",
                self.step
            )));
        }
        if self.iterations == 0 {
            return Err(BilevelError::Parameter(
                "outer iteration budget must be >= 1".into(),
            ));
        }
        if let Truncation::Last(tau) = self.truncation {
            if tau > self.schedule.k {
                return Err(BilevelError::Parameter(format!(
                    "truncation {tau} exceeds K = {}",
                    self.schedule.k
                )));
            }
        }
        if !(self.stop_tol >= T::zero()) {
            return Err(BilevelError::Parameter(
                "stop tolerance must be >= 0".into(),
            ));
        }
        if self.scheme == Scheme::ProxBda && problem.nonsmooth().is_none() {
            return Err(BilevelError::Configuration(format!(
                "{} declares no prox map",
                problem.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow<T> {
    pub t: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
    /// `F(x_t, y_K(x_t))`
    pub phi_k: T,
    /// `f(x_t, y_K(x_t))` (plus `g` when present)
    pub f: T,
    pub grad_norm: T,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable<T> {
    pub headers: [String; 4],
    pub rows: Vec<[T; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace<T> {
    pub problem: String,
    pub config: SolveConfig<T>,
    pub rows: Vec<TraceRow<T>>,
    /// The iterate after the last projected step.
    pub final_x: Vec<T>,
    pub metrics: Option<MetricTable<T>>,
}

/// Runs `config.iterations` outer steps `x <- P_X(x - s_x dphi_K/dx)`.
pub fn solve<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    config: &SolveConfig<T>,
) -> Result<RunTrace<T>> {
    config.validate(problem)?;
    let bounds = problem.bounds();
    let mut x = project_box(&config.x0, bounds)?;
    let mut y_start = config.y0.clone();
    let mut rows = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let at = |e: BilevelError| BilevelError::AtIteration {
            t,
            source: Box::new(e),
        };
        let clock = Instant::now();
        let tape = run_inner(problem, &x, &y_start, &config.schedule, config.scheme).map_err(at)?;
        let hg = match config.truncation {
            Truncation::Full => reverse_unroll(&tape, problem),
            Truncation::Last(tau) => truncated_reverse(&tape, problem, tau),
        }
        .map_err(at)?;
        let y_k = tape.last().to_vec();
        let f = problem.ll_total_value(&x, &y_k);
        if !f.is_finite() {
            return Err(at(BilevelError::Evaluation(
                "lower-level value is not finite".into(),
            )));
        }
        let stepped: Vec<T> = x
            .iter()
            .zip(&hg.grad)
            .map(|(&xi, &gi)| xi - config.step * gi)
            .collect();
        let next = project_box(&stepped, bounds).map_err(at)?;
        let moved = dist(&next, &x);
        rows.push(TraceRow {
            t,
            x: x.clone(),
            y: y_k.clone(),
            phi_k: hg.phi_k,
            f,
            grad_norm: norm(&hg.grad),
            ms: if config.record_timing {
                clock.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        x = next;
        if config.warm_start {
            y_start = y_k;
        }
        if config.stop_tol > T::zero() && moved <= config.stop_tol {
            break;
        }
    }
    Ok(RunTrace {
        problem: problem.name().to_string(),
        config: config.clone(),
        rows,
        final_x: x,
        metrics: None,
    })
}

/// `|F - F*|`, `|f - f*|`, `|x - x*|^2 / |x*|^2` and `|y - y*|^2 / |y*|^2`
/// per row. A zero reference norm switches that column to the absolute
/// squared error and renames it with an `_abs` suffix.
pub fn metrics<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    trace: &RunTrace<T>,
    problem: &P,
) -> Result<MetricTable<T>> {
    let reference = problem.reference().ok_or_else(|| {
        BilevelError::Configuration(format!("{} has no reference", problem.name()))
    })?;
    let sol = reference.solution().ok_or_else(|| {
        BilevelError::Configuration(format!("{} has no reference solution", problem.name()))
    })?;
    let x_scale = norm(&sol.x);
    let y_scale = norm(&sol.y);
    let sq = |v: T| v * v;
    let headers = [
        "F_err".to_string(),
        "f_err".to_string(),
        if x_scale > T::zero() {
            "x_err_rel"
        } else {
            "x_err_abs"
        }
        .to_string(),
        if y_scale > T::zero() {
            "y_err_rel"
        } else {
            "y_err_abs"
        }
        .to_string(),
    ];
    let rows = trace
        .rows
        .iter()
        .map(|row| {
            let f_ref = reference
                .ll_reference_value(&row.x)
                .ok_or_else(|| BilevelError::Configuration("reference f* unavailable".into()))?;
            let x_err = sq(dist(&row.x, &sol.x));
            let y_err = sq(dist(&row.y, &sol.y));
            Ok([
                (row.phi_k - sol.ul_value).abs(),
                (row.f - f_ref).abs(),
                if x_scale > T::zero() {
                    x_err / sq(x_scale)
                } else {
                    x_err
                },
                if y_scale > T::zero() {
                    y_err / sq(y_scale)
                } else {
                    y_err
                },
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricTable { headers, rows })
}

/// Euclidean distance from `y` to the lower-level solution set at `x`.
pub fn dist_to_solution_set<T: Scalar, P: BilevelProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: &[T],
) -> Result<T> {
    ensure_len(x, problem.ul_dim(), "x")?;
    ensure_len(y, problem.ll_dim(), "y")?;
    let proj = problem
        .reference()
        .and_then(|r| r.project_onto_ll_solutions(x, y))
        .ok_or_else(|| {
            BilevelError::Configuration(format!("{} has no solution-set projector", problem.name()))
        })?;
    Ok(dist(y, &proj))
}

impl<T: Scalar> RunTrace<T> {
    pub fn attach_metrics<P: BilevelProblem<T> + ?Sized>(&mut self, problem: &P) -> Result<()> {
        self.metrics = Some(metrics(self, problem)?);
        Ok(())
    }

    pub fn last_row(&self) -> Option<&TraceRow<T>> {
        self.rows.last()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.config.x0.len();
        let mut h = vec!["t".to_string()];
        h.extend((0..n).map(|i| format!("x_{i}")));
        h.extend(["phiK", "f", "gnorm", "ms"].map(String::from));
        if let Some(m) = &self.metrics {
            h.extend(m.headers.iter().cloned());
        }
        h
    }

    /// Columns `t, x_0 .. x_{n-1}, phiK, f, gnorm, ms` followed by metric columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![row.t.to_string()];
            rec.extend(row.x.iter().map(|v| v.to_string()));
            rec.push(row.phi_k.to_string());
            rec.push(row.f.to_string());
            rec.push(row.grad_norm.to_string());
            rec.push(row.ms.to_string());
            if let Some(m) = &self.metrics {
                rec.extend(m.rows[i].iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| BilevelError::Io(e.to_string()))
    }

    /// The same rows as the CSV (plus `y_K`) together with the full config.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
