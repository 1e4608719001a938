use std::path::PathBuf;

use bilevel_core::linalg::{dist, norm};
use bilevel_core::zoo::{counter_example, hyper_cleaning_problem, synth_blobs};
use bilevel_core::{
    fd_hypergrad, reverse_unroll, run_inner, solve, verify_first_order, verify_hvp, AlphaRule,
    BilevelProblem, CheckReport, DynProblem64, FaultyOracle, OracleName, RunTrace, Schedule,
    Scheme, SolveConfig, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::output::OutputSet;
use crate::problems::build_problem;
use crate::{CliError, ExperimentConfig, Runtime};

pub const REPRODUCTIONS: [&str; 4] = [
    "counterexample-init",
    "counterexample-K",
    "alpha-ablation",
    "hyperclean-synth",
];

const CHECK_TOL: f64 = 1e-4;

/// Final state of each solve, in job order, plus the files written.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub final_x: Vec<f64>,
    pub phi_k: f64,
    pub f: f64,
    pub grad_norm: f64,
}

struct Job<'a> {
    label: String,
    problem: &'a DynProblem64,
    config: SolveConfig<f64>,
}

fn execute(jobs: &[Job<'_>], rt: &Runtime) -> Result<Vec<RunTrace<f64>>, CliError> {
    let pool = rt.pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut trace = solve(job.problem, &job.config)?;
                let has_reference = job.problem.reference().and_then(|r| r.solution()).is_some();
                if has_reference {
                    trace.attach_metrics(job.problem)?;
                }
                Ok(trace)
            })
            .collect::<Result<Vec<_>, CliError>>()
    })
}

fn summarize(jobs: &[Job<'_>], traces: &[RunTrace<f64>]) -> Vec<SummaryRow> {
    jobs.iter()
        .zip(traces)
        .map(|(job, t)| {
            let last = t.last_row().expect("at least one outer iteration");
            SummaryRow {
                label: job.label.clone(),
                final_x: t.final_x.clone(),
                phi_k: last.phi_k,
                f: last.f,
                grad_norm: last.grad_norm,
            }
        })
        .collect()
}

fn write_traces(
    out: &mut OutputSet,
    jobs: &[Job<'_>],
    traces: &[RunTrace<f64>],
    experiment: &serde_json::Value,
) -> Result<(), CliError> {
    for (job, trace) in jobs.iter().zip(traces) {
        out.write(
            &format!("{}.csv", job.label),
            trace.to_csv_string()?.as_bytes(),
        )?;
        let doc = json!({ "experiment": experiment, "trace": trace.to_json()? });
        let text =
            serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        out.write(&format!("{}.json", job.label), text.as_bytes())?;
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<28} {:>14} {:>14} {:>14} {:>12}",
        "run", "x_0", "phiK", "f", "gnorm"
    );
    for r in rows {
        let x0 = r.final_x.first().copied().unwrap_or(f64::NAN);
        println!(
            "{:<28} {:>14.6} {:>14.6e} {:>14.6e} {:>12.3e}",
            r.label, x0, r.phi_k, r.f, r.grad_norm
        );
    }
}

/// Writes everything or nothing: on any error the files already written are removed.
fn commit<F>(out_dir: PathBuf, write: F) -> Result<Vec<PathBuf>, CliError>
where
    F: FnOnce(&mut OutputSet) -> Result<(), CliError>,
{
    let mut out = OutputSet::new(out_dir);
    match write(&mut out) {
        Ok(()) => Ok(out.written().to_vec()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

/// `run --config`: one solve per listed scheme, one CSV and one JSON trace each.
pub fn run(config: &ExperimentConfig, rt: &Runtime) -> Result<RunSummary, CliError> {
    let mut cfg = config.clone();
    if let Some(seed) = rt.seed {
        cfg.seed = seed;
    }
    let problem = build_problem(&cfg)?;
    let jobs = cfg
        .parsed_schemes()?
        .into_iter()
        .map(|scheme| {
            Ok(Job {
                label: format!("{}_{}", problem.name(), scheme),
                problem: problem.as_ref(),
                config: cfg.solve_config(problem.as_ref(), scheme)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let traces = execute(&jobs, rt)?;
    let experiment = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let files = commit(rt.resolve_out(Some(&cfg)), |out| {
        write_traces(out, &jobs, &traces, &experiment)
    })?;
    let rows = summarize(&jobs, &traces);
    print_summary(&rows);
    Ok(RunSummary { rows, files })
}

fn counter_config(
    scheme: Scheme,
    alpha: AlphaRule<f64>,
    k: usize,
    x0: f64,
    y0: [f64; 2],
    iterations: usize,
) -> Result<SolveConfig<f64>, CliError> {
    let sched = Schedule::new(0.7, 0.2, alpha, k)?;
    Ok(SolveConfig::new(scheme, sched, vec![x0], y0.to_vec())
        .with_step(0.1)
        .with_iterations(iterations))
}

/// `reproduce <name>`: the canned desk-scale experiments.
pub fn reproduce(name: &str, rt: &Runtime) -> Result<RunSummary, CliError> {
    let reciprocal = AlphaRule::Reciprocal { c: 0.5 };
    let schemes = [Scheme::LlOnly, Scheme::Bda];
    let ce = counter_example();
    let ce: &DynProblem64 = &ce;
    let out_dir = rt.resolve_out(None);

    match name {
        "counterexample-init" | "counterexample-K" | "alpha-ablation" => {
            let mut jobs = Vec::new();
            if name == "counterexample-init" {
                for x0 in [0.0, 2.0] {
                    for y0 in [[0.0, 0.0], [2.0, 2.0]] {
                        for scheme in schemes {
                            jobs.push(Job {
                                label: format!("init_x{x0}_y{}{}_{scheme}", y0[0], y0[1]),
                                problem: ce,
                                config: counter_config(scheme, reciprocal, 16, x0, y0, 2000)?,
                            });
                        }
                    }
                }
            } else if name == "counterexample-K" {
                for k in [8usize, 16, 64] {
                    for scheme in schemes {
                        jobs.push(Job {
                            label: format!("K{k}_{scheme}"),
                            problem: ce,
                            config: counter_config(scheme, reciprocal, k, 0.0, [2.0, 2.0], 500)?,
                        });
                    }
                }
            } else {
                let rules = [
                    ("alpha_0", AlphaRule::Constant { a: 0.0 }),
                    ("alpha_0.5", AlphaRule::Constant { a: 0.5 }),
                    ("alpha_adaptive", AlphaRule::Reciprocal { c: 0.9 }),
                ];
                for (label, rule) in rules {
                    jobs.push(Job {
                        label: label.into(),
                        problem: ce,
                        config: counter_config(Scheme::Bda, rule, 64, 0.0, [2.0, 2.0], 500)?,
                    });
                }
            }
            let traces = execute(&jobs, rt)?;
            let experiment = json!({ "reproduce": name });
            let files = commit(out_dir, |out| {
                write_traces(out, &jobs, &traces, &experiment)
            })?;
            let rows = summarize(&jobs, &traces);
            print_summary(&rows);
            Ok(RunSummary { rows, files })
        }
        "hyperclean-synth" => reproduce_hyperclean(rt, out_dir),
        other => Err(CliError::Config(format!(
            "unknown reproduction `{other}` (expected one of {})",
            REPRODUCTIONS.join(", ")
        ))),
    }
}

fn reproduce_hyperclean(rt: &Runtime, out_dir: PathBuf) -> Result<RunSummary, CliError> {
    let seed = rt.seed.unwrap_or(7);
    let data = synth_blobs::<f64>(100, 5, 2, 0.3, seed)?;
    let hc = hyper_cleaning_problem(&data, 1e-4)?;
    let c = *hc.constants();
    let missing = || CliError::Config("hyper-cleaning constants unavailable".into());
    let sched = Schedule::new(
        1.0 / c.ul_smoothness.ok_or_else(missing)?,
        1.0 / c.ll_smoothness.ok_or_else(missing)?,
        AlphaRule::Reciprocal { c: 0.5 },
        100,
    )?;
    let n = hc.train_len();
    let m = hc.ll_dim();
    let y0 = vec![0.0; m];
    let problem: &DynProblem64 = &hc;
    let jobs: Vec<Job<'_>> = [
        ("hyperclean_full", Truncation::Full),
        ("hyperclean_tau25", Truncation::Last(25)),
    ]
    .into_iter()
    .map(|(label, truncation)| {
        let mut config = SolveConfig::new(Scheme::Bda, sched, vec![0.0; n], y0.clone())
            .with_step(100.0)
            .with_iterations(200)
            .with_truncation(truncation);
        config.seed = seed;
        Job {
            label: label.into(),
            problem,
            config,
        }
    })
    .collect();
    let traces = execute(&jobs, rt)?;

    let baseline = run_inner(&hc, &vec![0.0; n], &y0, &sched, Scheme::LlOnly)?;
    let baseline_acc = hc.val_accuracy(baseline.last());
    let mut stats = String::from(
        "run,corrupted_mean_weight,clean_mean_weight,gap,val_accuracy,baseline_val_accuracy\n",
    );
    for (job, trace) in jobs.iter().zip(&traces) {
        let w = hc.weights(&trace.final_x);
        let mean = |bad: bool| {
            let sel: Vec<f64> = w
                .iter()
                .zip(hc.train_corrupted())
                .filter(|(_, &b)| b == bad)
                .map(|(v, _)| *v)
                .collect();
            sel.iter().sum::<f64>() / sel.len().max(1) as f64
        };
        let (bad, good) = (mean(true), mean(false));
        let tape = run_inner(&hc, &trace.final_x, &y0, &sched, Scheme::Bda)?;
        let acc = hc.val_accuracy(tape.last());
        stats.push_str(&format!(
            "{},{bad},{good},{},{acc},{baseline_acc}\n",
            job.label,
            good - bad
        ));
    }
    let experiment = json!({ "reproduce": "hyperclean-synth", "seed": seed });
    let files = commit(out_dir, |out| {
        write_traces(out, &jobs, &traces, &experiment)?;
        out.write("hyperclean_weights.csv", stats.as_bytes())?;
        Ok(())
    })?;
    let rows = summarize(&jobs, &traces);
    print_summary(&rows);
    print!("{stats}");
    Ok(RunSummary { rows, files })
}

/// One line of the `checkgrad` table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Oracle and hypergradient checks at `config.check_points` seeded random
/// points for every scheme in `config.schemes` and depth in `config.check_k`.
pub fn checkgrad_problem<P: BilevelProblem<f64> + ?Sized>(
    problem: &P,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<CheckRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = problem.bounds();
    let mut points = Vec::with_capacity(config.check_points);
    for _ in 0..config.check_points {
        let x: Vec<f64> = (0..problem.ul_dim())
            .map(|i| {
                let (lo, hi) = (b.lower()[i].max(-3.0), b.upper()[i].min(3.0));
                if lo < hi {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            })
            .collect();
        let y: Vec<f64> = (0..problem.ll_dim())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let v: Vec<f64> = (0..problem.ll_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        points.push((x, y, v));
    }

    let mut report: Option<CheckReport<f64>> = None;
    for (x, y, v) in &points {
        let h = 1e-5 * (1.0 + norm(x).hypot(norm(y)));
        let r = verify_first_order(problem, x, y, h)?.merge(verify_hvp(problem, x, y, v, h)?);
        report = Some(match report {
            None => r,
            Some(acc) => {
                let mut merged = acc;
                for e in r.entries {
                    if let Some(slot) = merged.entries.iter_mut().find(|s| s.oracle == e.oracle) {
                        slot.max_rel_deviation = slot.max_rel_deviation.max(e.max_rel_deviation);
                    }
                }
                merged
            }
        });
    }
    let mut rows: Vec<CheckRow> = report
        .map(|r| r.entries)
        .unwrap_or_default()
        .into_iter()
        .map(|e| CheckRow {
            check: e.oracle.as_str().to_string(),
            max_deviation: e.max_rel_deviation,
            pass: e.max_rel_deviation <= CHECK_TOL,
        })
        .collect();

    let base = config.schedule(problem)?;
    for scheme in config.parsed_schemes()? {
        if scheme == Scheme::ProxBda && problem.nonsmooth().is_none() {
            continue;
        }
        for &k in &config.check_k {
            let sched = base.with_k(k);
            let mut worst: f64 = 0.0;
            for (x, y0, _) in &points {
                let tape = run_inner(problem, x, y0, &sched, scheme)?;
                let rev = reverse_unroll(&tape, problem)?;
                let fd = fd_hypergrad(problem, x, y0, &sched, scheme, 1e-5 * (1.0 + norm(x)))?;
                let scale = norm(&fd);
                let err = dist(&rev.grad, &fd);
                worst = worst.max(if scale > 1e-12 { err / scale } else { err });
            }
            rows.push(CheckRow {
                check: format!("hypergrad {scheme} K={k}"),
                max_deviation: worst,
                pass: worst <= CHECK_TOL,
            });
        }
    }
    Ok(rows)
}

/// `checkgrad --config`: prints the table; fails with every failing check named.
pub fn checkgrad(config: &ExperimentConfig, rt: &Runtime) -> Result<Vec<CheckRow>, CliError> {
    let seed = rt.seed.unwrap_or(config.seed);
    let mut cfg = config.clone();
    cfg.seed = seed;
    let problem = build_problem(&cfg)?;
    let rows = match &cfg.inject_fault {
        Some(name) => {
            let oracle = OracleName::parse(name).ok_or_else(|| {
                CliError::Config(format!("unknown oracle `{name}` in inject_fault"))
            })?;
            let faulty = FaultyOracle::new(problem.as_ref(), oracle, cfg.fault_delta);
            checkgrad_problem(&faulty, &cfg, seed)?
        }
        None => checkgrad_problem(problem.as_ref(), &cfg, seed)?,
    };
    println!("{:<24} {:>14} {:>6}", "check", "max rel dev", "status");
    for r in &rows {
        println!(
            "{:<24} {:>14.3e} {:>6}",
            r.check,
            r.max_deviation,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check.clone())
        .collect();
    if failing.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::CheckFailed(failing))
    }
}
