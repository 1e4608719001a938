//! Canonical problem instances with analytic oracles.

mod counter_example;
mod data;
mod hyperclean;
mod lasso;
mod quadratic;

pub use counter_example::{
    counter_example, counter_example_with, rhg_minimizer_closed_form, CounterExample,
};
pub use data::{load_idx, synth_blobs, Dataset, Split};
pub use hyperclean::{hyper_cleaning_problem, HyperCleaning, HYPERCLEAN_BOX};
pub use lasso::{lasso_ll_problem, L1Prox, LassoProblem, LassoSpec};
pub use quadratic::{quadratic_family, standard_quadratics, QuadraticProblem, QuadraticSpec};
