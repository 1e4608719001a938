use bilevel_core::zoo::{counter_example, standard_quadratics};
use bilevel_core::{
    dist_to_solution_set, run_inner, solve, AlphaRule, BilevelProblem, Schedule, Scheme,
    SolveConfig,
};
use proptest::prelude::*;

fn worst_ll_distance<P: BilevelProblem<f64>>(
    p: &P,
    grid: &[Vec<f64>],
    y0: &[f64],
    k: usize,
) -> f64 {
    let sched = Schedule::from_constants(p.constants(), 1.0, 0.1, k).unwrap();
    grid.iter()
        .map(|x| {
            let tape = run_inner(p, x, y0, &sched, Scheme::Bda).unwrap();
            dist_to_solution_set(p, x, tape.last()).unwrap()
        })
        .fold(0.0, f64::max)
}

fn assert_shrinking(worst: &[f64], name: &str) {
    for pair in worst.windows(2) {
        assert!(pair[1] <= 1.5 * pair[0], "{name}: {worst:?}");
    }
}

#[test]
fn lower_level_distance_does_not_grow_with_depth() {
    let ks = [8usize, 16, 64];
    let ce = counter_example();
    let grid: Vec<Vec<f64>> = (0..21).map(|i| vec![-5.0 + 0.5 * i as f64]).collect();
    let worst: Vec<f64> = ks
        .iter()
        .map(|&k| worst_ll_distance(&ce, &grid, &[2.0, 2.0], k))
        .collect();
    assert_shrinking(&worst, "counter-example");

    for spec in standard_quadratics() {
        let p = spec.build().unwrap();
        let grid: Vec<Vec<f64>> = (0..21)
            .map(|i| {
                let t = -3.0 + 0.3 * i as f64;
                vec![t, 0.5 * t]
            })
            .collect();
        let worst: Vec<f64> = ks
            .iter()
            .map(|&k| worst_ll_distance(&p, &grid, &[0.5, -0.5, 1.0], k))
            .collect();
        assert_shrinking(&worst, p.name());
    }
}

#[test]
fn aggregation_beats_lower_level_descent_for_every_depth() {
    let p = counter_example();
    for k in [8usize, 16, 64] {
        let sched = Schedule::new(0.7, 0.2, AlphaRule::Reciprocal { c: 0.5 }, k).unwrap();
        let err = |scheme| {
            let cfg =
                SolveConfig::new(scheme, sched, vec![0.0], vec![2.0, 2.0]).with_iterations(500);
            (solve(&p, &cfg).unwrap().final_x[0] - 1.0).abs()
        };
        assert!(err(Scheme::Bda) < err(Scheme::LlOnly), "K = {k}");
    }
}

#[test]
fn traces_are_reproducible_bytewise() {
    let p = counter_example();
    let sched = Schedule::new(0.7, 0.2, AlphaRule::Reciprocal { c: 0.5 }, 16).unwrap();
    let cfg = SolveConfig::new(Scheme::Bda, sched, vec![2.0], vec![0.0; 2]).with_iterations(50);
    let run = || {
        let mut t = solve(&p, &cfg).unwrap();
        t.attach_metrics(&p).unwrap();
        (t.to_csv_string().unwrap(), t.to_json().unwrap().to_string())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn iterates_stay_feasible(x0 in -100.0f64..100.0, step in 0.01f64..50.0, k in 1usize..10) {
        let p = counter_example();
        let sched = Schedule::new(0.7, 0.2, AlphaRule::Reciprocal { c: 0.5 }, k).unwrap();
        let cfg = SolveConfig::new(Scheme::Bda, sched, vec![x0], vec![0.0, 0.0])
            .with_step(step)
            .with_iterations(20);
        let trace = solve(&p, &cfg).unwrap();
        for row in &trace.rows {
            prop_assert!(p.bounds().contains(&row.x));
        }
        prop_assert!(p.bounds().contains(&trace.final_x));
    }
}
