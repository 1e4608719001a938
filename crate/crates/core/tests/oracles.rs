use bilevel_core::linalg::norm;
use bilevel_core::zoo::{
    counter_example, hyper_cleaning_problem, lasso_ll_problem, standard_quadratics, synth_blobs,
    LassoSpec,
};
use bilevel_core::{
    run_inner, verify_first_order, verify_hvp, AlphaRule, BilevelProblem, FaultyOracle, OracleName,
    Schedule, Scheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point<P: BilevelProblem<f64>>(
    p: &P,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let b = p.bounds();
    let x = (0..p.ul_dim())
        .map(|i| rng.random_range(b.lower()[i].max(-3.0)..b.upper()[i].min(3.0)))
        .collect();
    let y = (0..p.ll_dim())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let v = (0..p.ll_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (x, y, v)
}

fn gate<P: BilevelProblem<f64>>(p: &P, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let (x, y, v) = random_point(p, &mut rng);
        let h = 1e-5 * (1.0 + norm(&x).hypot(norm(&y)));
        let report = verify_first_order(p, &x, &y, h)
            .unwrap()
            .merge(verify_hvp(p, &x, &y, &v, h).unwrap());
        assert!(
            report.passes(1e-4),
            "{} fails at x={x:?}: {:?}",
            p.name(),
            report.failures(1e-4)
        );
    }
}

#[test]
fn every_zoo_problem_passes_the_gates() {
    gate(&counter_example(), 1);
    for (i, spec) in standard_quadratics().into_iter().enumerate() {
        gate(&spec.build().unwrap(), 10 + i as u64);
    }
    let data = synth_blobs::<f64>(6, 4, 3, 0.3, 2).unwrap();
    gate(&hyper_cleaning_problem(&data, 1e-4).unwrap(), 20);
    gate(
        &lasso_ll_problem(LassoSpec::one_dimensional(0.5)).unwrap(),
        30,
    );
}

#[test]
fn oracles_are_pure() {
    let data = synth_blobs::<f64>(6, 4, 2, 0.3, 2).unwrap();
    let p = hyper_cleaning_problem(&data, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y, v) = random_point(&p, &mut rng);
    let bits = |a: Vec<f64>| a.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(p.ll_grad_y(&x, &y)), bits(p.ll_grad_y(&x, &y)));
    assert_eq!(bits(p.ul_hvp_xy(&x, &y, &v)), bits(p.ul_hvp_xy(&x, &y, &v)));
    assert_eq!(p.ul_value(&x, &y).to_bits(), p.ul_value(&x, &y).to_bits());
}

#[test]
fn each_injected_fault_is_named() {
    let (x, y, v) = (vec![0.3], vec![0.7, -1.2], vec![0.4, 0.9]);
    for oracle in OracleName::FIRST_ORDER
        .into_iter()
        .chain(OracleName::SECOND_ORDER)
    {
        let p = FaultyOracle::new(counter_example(), oracle, 1e-2);
        let report = verify_first_order(&p, &x, &y, 1e-5)
            .unwrap()
            .merge(verify_hvp(&p, &x, &y, &v, 1e-5).unwrap());
        assert_eq!(report.failures(1e-4), vec![oracle]);
    }
}

#[test]
fn constant_zero_weight_reduces_to_lower_level_descent() {
    let check = |p: &dyn BilevelProblem<f64>, x: &[f64], y0: &[f64], s_l: f64| {
        for k in [1usize, 7, 40] {
            let zero = Schedule::new(0.3, s_l, AlphaRule::Constant { a: 0.0 }, k).unwrap();
            let a = run_inner(p, x, y0, &zero, Scheme::Bda).unwrap();
            let b = run_inner(p, x, y0, &zero, Scheme::LlOnly).unwrap();
            for (u, w) in a.iterates.iter().zip(&b.iterates) {
                assert!(
                    u.iter().zip(w).all(|(s, t)| s.to_bits() == t.to_bits()),
                    "{}",
                    p.name()
                );
            }
        }
    };
    check(&counter_example(), &[0.8], &[2.0, 2.0], 0.2);
    for spec in standard_quadratics() {
        let q = spec.build().unwrap();
        let s_l = 1.0 / q.constants().ll_smoothness.unwrap();
        check(&q, &[0.4, -0.9], &[1.0, 0.0, -1.0], s_l);
    }
    let data = synth_blobs::<f64>(6, 4, 2, 0.3, 2).unwrap();
    let hc = hyper_cleaning_problem(&data, 1e-4).unwrap();
    let s_l = 1.0 / hc.constants().ll_smoothness.unwrap();
    check(&hc, &vec![0.1; hc.ul_dim()], &vec![0.0; hc.ll_dim()], s_l);
}

#[test]
fn lasso_matches_quadratic_as_mu_vanishes() {
    let spec = LassoSpec::<f64>::one_dimensional(1e-10);
    let q = spec.as_quadratic().build().unwrap();
    let lasso = lasso_ll_problem(spec).unwrap();
    let sched = Schedule::new(0.5, 1.0, AlphaRule::Reciprocal { c: 0.5 }, 30).unwrap();
    for x in [-2.0, 0.3, 1.7] {
        let a = run_inner(&lasso, &[x], &[0.4], &sched, Scheme::ProxBda).unwrap();
        let b = run_inner(&q, &[x], &[0.4], &sched, Scheme::Bda).unwrap();
        for (u, w) in a.iterates.iter().zip(&b.iterates) {
            assert!((u[0] - w[0]).abs() <= 1e-6);
        }
    }
}
