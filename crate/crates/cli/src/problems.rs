use bilevel_core::zoo::{
    counter_example, hyper_cleaning_problem, lasso_ll_problem, standard_quadratics, synth_blobs,
    LassoSpec,
};
use bilevel_core::DynProblem64;

use crate::{CliError, ExperimentConfig, ProblemKind};

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Box<DynProblem64>, CliError> {
    Ok(match cfg.problem {
        ProblemKind::CounterExample => Box::new(counter_example()),
        ProblemKind::Quadratic => {
            let idx = match cfg.instance.as_str() {
                "singleton" => 0,
                "rank2" => 1,
                "rank1" => 2,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown quadratic instance `{other}`"
                    )))
                }
            };
            Box::new(standard_quadratics().swap_remove(idx).build()?)
        }
        ProblemKind::HypercleanSynth => {
            let data = synth_blobs::<f64>(
                cfg.n_per_class,
                cfg.dim,
                cfg.classes,
                cfg.corruption,
                cfg.seed,
            )?;
            Box::new(hyper_cleaning_problem(&data, cfg.lambda)?)
        }
        ProblemKind::Lasso1d => Box::new(lasso_ll_problem(LassoSpec::one_dimensional(cfg.mu))?),
    })
}
