use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bilevel_core::zoo::counter_example;
use bilevel_core::{FaultyOracle, OracleName};
use bilevel_kit::{checkgrad_problem, ExperimentConfig, ProblemKind};

fn kit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel-kit"))
        .args(args)
        .env("BILEVEL_KIT_OUT", out)
        .output()
        .expect("binary runs")
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

const COUNTER: &str = r#"
problem = "counter-example"
schemes = ["ll_only", "bda"]
k = 16
s_u = 0.7
s_l = 0.2
alpha = "reciprocal"
alpha_c = 0.5
y0 = [2.0, 2.0]
iterations = 60
"#;

#[test]
fn run_writes_one_trace_pair_per_scheme_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ce.toml");
    fs::write(&cfg, COUNTER).unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");

    let r1 = kit(&["run", "--config", cfg.to_str().unwrap()], &out1);
    assert_eq!(
        r1.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r1.stderr)
    );
    let stdout = String::from_utf8_lossy(&r1.stdout);
    assert!(stdout.contains("counterexample_ll_only") && stdout.contains("counterexample_bda"));
    assert_eq!(
        files_in(&out1),
        [
            "counterexample_bda.csv",
            "counterexample_bda.json",
            "counterexample_ll_only.csv",
            "counterexample_ll_only.json"
        ]
    );

    let r2 = kit(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            "1",
            "--out",
            out2.to_str().unwrap(),
        ],
        &out1,
    );
    assert_eq!(r2.status.code(), Some(0));
    for name in ["counterexample_bda.csv", "counterexample_ll_only.csv"] {
        assert_eq!(
            fs::read(out1.join(name)).unwrap(),
            fs::read(out2.join(name)).unwrap()
        );
    }
    let csv = fs::read_to_string(out1.join("counterexample_bda.csv")).unwrap();
    assert!(csv.starts_with("t,x_0,phiK,f,gnorm,ms,F_err,f_err,x_err_rel,y_err_rel\n"));
    assert_eq!(csv.lines().count(), 61);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out1.join("counterexample_bda.json")).unwrap())
            .unwrap();
    assert_eq!(json["experiment"]["k"], 16);
    assert_eq!(json["trace"]["rows"].as_array().unwrap().len(), 60);
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (i, text) in [
        "problem = \"counter-example\"\nunknown_key = 3\n",
        "problem = \"counter-example\"\nk = \"many\"\n",
        "this is not toml",
        "problem = \"counter-example\"\ny0 = [1.0]\n",
    ]
    .iter()
    .enumerate()
    {
        let cfg = dir.path().join(format!("bad{i}.toml"));
        fs::write(&cfg, text).unwrap();
        let r = kit(&["run", "--config", cfg.to_str().unwrap()], &out);
        assert_eq!(
            r.status.code(),
            Some(2),
            "case {i}: {}",
            String::from_utf8_lossy(&r.stderr)
        );
        assert!(files_in(&out).is_empty(), "case {i}");
    }
    let r = kit(
        &[
            "run",
            "--config",
            dir.path().join("missing.toml").to_str().unwrap(),
        ],
        &out,
    );
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diverge.toml");
    // a lower-level step far beyond 2 / L_f makes the unroll overflow
    fs::write(
        &cfg,
        "problem = \"counter-example\"\nschemes = [\"ll_only\", \"bda\"]\nk = 2000\ns_u = 0.5\ns_l = 50.0\nalpha = \"constant\"\nalpha_a = 0.0\nx0 = [3.0]\niterations = 3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = kit(&["run", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(
        r.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert!(files_in(&out).is_empty());
}

#[test]
fn reproduce_counterexample_k_emits_six_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = kit(&["reproduce", "counterexample-K"], &out);
    assert_eq!(r.status.code(), Some(0));
    let csvs: Vec<String> = files_in(&out)
        .into_iter()
        .filter(|f| f.ends_with(".csv"))
        .collect();
    assert_eq!(csvs.len(), 6, "{csvs:?}");
}

#[test]
fn reproduce_alpha_ablation_emits_three_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = kit(&["reproduce", "alpha-ablation"], &out);
    assert_eq!(r.status.code(), Some(0));
    let csvs: Vec<String> = files_in(&out)
        .into_iter()
        .filter(|f| f.ends_with(".csv"))
        .collect();
    assert_eq!(csvs, ["alpha_0.5.csv", "alpha_0.csv", "alpha_adaptive.csv"]);
}

#[test]
fn unknown_reproduction_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let r = kit(&["reproduce", "figure-9"], dir.path());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn checkgrad_passes_on_counter_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ce.toml");
    fs::write(&cfg, "problem = \"counter-example\"\n").unwrap();
    let r = kit(
        &["checkgrad", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stdout)
    );
    let stdout = String::from_utf8_lossy(&r.stdout);
    for k in [1, 5, 20] {
        assert!(stdout.contains(&format!("hypergrad bda K={k}")));
    }
}

#[test]
fn checkgrad_names_the_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ce.toml");
    fs::write(
        &cfg,
        "problem = \"counter-example\"\ninject_fault = \"hvp_xy_f\"\n",
    )
    .unwrap();
    let r = kit(
        &["checkgrad", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("hvp_xy_f"));
}

#[test]
fn checkgrad_library_flags_only_the_faulty_oracle() {
    let cfg = ExperimentConfig::for_problem(ProblemKind::CounterExample);
    let faulty = FaultyOracle::new(counter_example(), OracleName::LlGradX, 1e-2);
    let rows = checkgrad_problem(&faulty, &cfg, 0).unwrap();
    let failing: Vec<&str> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.check.as_str())
        .collect();
    assert!(failing.contains(&"grad_x_f"));
    assert!(!failing
        .iter()
        .any(|c| c.starts_with("hvp") || c.starts_with("grad_y")));
}
