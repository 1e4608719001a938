//! Flat TOML experiment configuration.
//!
//! Every key is optional except `problem`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use bilevel_core::{AlphaRule, BilevelProblem, Schedule, Scheme, SolveConfig, Truncation};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    CounterExample,
    Quadratic,
    HypercleanSynth,
    Lasso1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaKind {
    Theoretical,
    Reciprocal,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    /// `singleton`, `rank2` or `rank1` (quadratic only).
    #[serde(default = "default_instance")]
    pub instance: String,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,

    #[serde(default = "default_k")]
    pub k: usize,
    /// Derived from the problem constants when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_l: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: AlphaKind,
    /// Numerator of the reciprocal rule `c / k`.
    #[serde(default = "default_alpha_c")]
    pub alpha_c: f64,
    /// Value of the constant rule.
    #[serde(default = "default_alpha_a")]
    pub alpha_a: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,

    /// Zeros of the right length when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Reverse-pass depth; absent means the full unroll.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default)]
    pub stop_tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,

    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_corruption")]
    pub corruption: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,

    #[serde(default = "default_check_points")]
    pub check_points: usize,
    #[serde(default = "default_check_k")]
    pub check_k: Vec<usize>,
    /// Oracle to corrupt during `checkgrad` (e.g. `grad_y_f`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<String>,
    #[serde(default = "default_fault_delta")]
    pub fault_delta: f64,
}

fn default_instance() -> String {
    "rank2".into()
}
fn default_schemes() -> Vec<String> {
    vec!["ll_only".into(), "bda".into()]
}
fn default_k() -> usize {
    16
}
fn default_alpha() -> AlphaKind {
    AlphaKind::Reciprocal
}
fn default_alpha_c() -> f64 {
    0.5
}
fn default_alpha_a() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    0.1
}
fn default_step() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    100
}
fn default_n_per_class() -> usize {
    100
}
fn default_dim() -> usize {
    5
}
fn default_classes() -> usize {
    2
}
fn default_corruption() -> f64 {
    0.3
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_mu() -> f64 {
    1.0
}
fn default_check_points() -> usize {
    5
}
fn default_check_k() -> Vec<usize> {
    vec![1, 5, 20]
}
fn default_fault_delta() -> f64 {
    1e-2
}

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn for_problem(problem: ProblemKind) -> Self {
        toml::from_str(&format!("problem = \"{}\"", problem.as_str())).expect("defaults parse")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn parsed_schemes(&self) -> Result<Vec<Scheme>, CliError> {
        self.schemes
            .iter()
            .map(|s| {
                s.parse::<Scheme>()
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }

    fn check(&self) -> Result<(), CliError> {
        if self.schemes.is_empty() {
            return Err(CliError::Config(
                "`schemes` must list at least one scheme".into(),
            ));
        }
        self.parsed_schemes()?;
        if !matches!(self.instance.as_str(), "singleton" | "rank2" | "rank1") {
            return Err(CliError::Config(format!(
                "unknown quadratic instance `{}` (singleton, rank2, rank1)",
                self.instance
            )));
        }
        if self.check_k.is_empty() || self.check_points == 0 {
            return Err(CliError::Config(
                "`check_k` and `check_points` must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn schedule<P: BilevelProblem<f64> + ?Sized>(
        &self,
        problem: &P,
    ) -> Result<Schedule<f64>, CliError> {
        let c = problem.constants();
        let missing = || {
            CliError::Config(format!(
                "{} has unknown smoothness constants; set `s_u` and `s_l`",
                problem.name()
            ))
        };
        let s_u = match self.s_u {
            Some(v) => v,
            None => match (c.ul_smoothness, c.ul_strong_convexity) {
                (Some(l), Some(s)) => 2.0 / (l + s),
                _ => return Err(missing()),
            },
        };
        let s_l = match self.s_l {
            Some(v) => v,
            None => 1.0 / c.ll_smoothness.ok_or_else(missing)?,
        };
        let sched = match self.alpha {
            AlphaKind::Theoretical => {
                let (Some(l), Some(s)) = (c.ul_smoothness, c.ul_strong_convexity) else {
                    return Err(CliError::Config(format!(
                        "the theoretical rule needs L_F and sigma, unknown for {}",
                        problem.name()
                    )));
                };
                Schedule::theoretical(s_u, s_l, self.gamma, self.eps, s, l, self.k)?
            }
            AlphaKind::Reciprocal => {
                Schedule::new(s_u, s_l, AlphaRule::Reciprocal { c: self.alpha_c }, self.k)?
            }
            AlphaKind::Constant => {
                Schedule::new(s_u, s_l, AlphaRule::Constant { a: self.alpha_a }, self.k)?
            }
        };
        Ok(sched)
    }

    pub fn solve_config<P: BilevelProblem<f64> + ?Sized>(
        &self,
        problem: &P,
        scheme: Scheme,
    ) -> Result<SolveConfig<f64>, CliError> {
        let x0 = self
            .x0
            .clone()
            .unwrap_or_else(|| vec![0.0; problem.ul_dim()]);
        let y0 = self
            .y0
            .clone()
            .unwrap_or_else(|| vec![0.0; problem.ll_dim()]);
        let mut cfg = SolveConfig::new(scheme, self.schedule(problem)?, x0, y0)
            .with_step(self.step)
            .with_iterations(self.iterations)
            .with_truncation(self.truncation.map_or(Truncation::Full, Truncation::Last));
        cfg.warm_start = self.warm_start;
        cfg.stop_tol = self.stop_tol;
        cfg.seed = self.seed;
        cfg.validate(problem)?;
        Ok(cfg)
    }
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::CounterExample => "counter-example",
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::HypercleanSynth => "hyperclean-synth",
            ProblemKind::Lasso1d => "lasso-1d",
        }
    }
}
