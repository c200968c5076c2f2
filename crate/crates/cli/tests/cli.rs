//! End-to-end runs of the `ope` binary over its file formats.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ope")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("OPE_OUT_DIR")
        .output()
        .expect("spawn ope")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn toy_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_ok(&run_in(d, &["generate", "--kind", "toy", "--seed", "42", "--out-prefix", "toy"]));
    for suffix in ["mdp", "pi", "b", "forward", "backward", "two-step"] {
        assert!(d.join(format!("toy.{suffix}.json")).exists(), "missing {suffix}");
    }

    let solve_out = assert_ok(&run_in(
        d,
        &["solve", "--mdp", "toy.mdp.json", "--pi", "toy.pi.json", "--b", "toy.b.json", "--out", "solve.json"],
    ));
    assert!(solve_out.contains("j_pi"));
    let solve: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("solve.json")).unwrap()).unwrap();
    for key in ["j_pi", "q", "v", "rho", "p_inf", "d_pi", "w", "backward"] {
        assert!(solve.get(key).is_some(), "solve file missing {key}");
    }

    let fwd_out = assert_ok(&run_in(
        d,
        &[
            "abstract", "--mdp", "toy.mdp.json", "--pi", "toy.pi.json", "--b", "toy.b.json",
            "--mode", "forward", "--out", "fwd.json", "--audit", "fwd.audit.json",
        ],
    ));
    assert!(fwd_out.contains("8 states -> 4 blocks"), "got: {fwd_out}");

    let ts_out = assert_ok(&run_in(
        d,
        &[
            "abstract", "--mdp", "toy.mdp.json", "--pi", "toy.pi.json", "--b", "toy.b.json",
            "--mode", "two-step", "--out", "ts.json", "--audit", "ts.audit.json",
        ],
    ));
    assert!(ts_out.contains("8 states -> 2 blocks"), "got: {ts_out}");
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("ts.audit.json")).unwrap()).unwrap();
    assert!(audit.get("forward").is_some() && audit.get("backward").is_some());
    assert_eq!(audit["final_blocks"], 2);

    assert_ok(&run_in(
        d,
        &[
            "simulate", "--mdp", "toy.mdp.json", "--b", "toy.b.json", "--n", "150",
            "--horizon", "25", "--seed", "7", "--out", "data.ndjson",
        ],
    ));

    let est_out = assert_ok(&run_in(
        d,
        &[
            "estimate", "--data", "data.ndjson", "--pi", "toy.pi.json", "--mdp", "toy.mdp.json",
            "--method", "fqe", "--partition", "ts.json", "--out", "est.json",
        ],
    ));
    assert!(est_out.contains("oracle"));
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("est.json")).unwrap()).unwrap();
    assert_eq!(est["method"], "fqe");
    assert_eq!(est["abstraction"], "8->2");
    let err = est["oracle_error"].as_f64().unwrap();
    assert!(err.abs() < 0.5, "estimate unexpectedly far from oracle: {err}");
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(d, &["generate", "--kind", "random", "--seed", "5", "--out-prefix", "m"]));
    for (seed, name) in [("3", "a.ndjson"), ("3", "b.ndjson"), ("4", "c.ndjson")] {
        assert_ok(&run_in(
            d,
            &[
                "simulate", "--mdp", "m.mdp.json", "--b", "m.b.json", "--n", "40",
                "--horizon", "10", "--seed", seed, "--out", name,
            ],
        ));
    }
    let a = std::fs::read(d.join("a.ndjson")).unwrap();
    let b = std::fs::read(d.join("b.ndjson")).unwrap();
    let c = std::fs::read(d.join("c.ndjson")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical datasets");
    assert_ne!(a, c, "different seeds must differ");
}

#[test]
fn lift_kinds_write_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for kind in ["lift-forward", "lift-backward"] {
        let prefix = kind.replace('-', "_");
        assert_ok(&run_in(
            d,
            &[
                "generate", "--kind", kind, "--seed", "9", "--out-prefix", &prefix,
                "--n-states", "3", "--n-noise", "2",
            ],
        ));
        let part: Vec<usize> = serde_json::from_str(
            &std::fs::read_to_string(d.join(format!("{prefix}.partition.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(part.len(), 6, "3 base states x 2 noise copies");
        assert_eq!(part.iter().max(), Some(&2));
    }
}

#[test]
fn estimate_requires_a_gamma_source() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&run_in(d, &["generate", "--kind", "toy", "--seed", "1", "--out-prefix", "t"]));
    assert_ok(&run_in(
        d,
        &[
            "simulate", "--mdp", "t.mdp.json", "--b", "t.b.json", "--n", "5", "--horizon", "5",
            "--seed", "1", "--out", "d.ndjson",
        ],
    ));
    let out = run_in(
        d,
        &["estimate", "--data", "d.ndjson", "--pi", "t.pi.json", "--method", "sis", "--out", "e.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gamma"));
    // the explicit flag works without a model
    assert_ok(&run_in(
        d,
        &[
            "estimate", "--data", "d.ndjson", "--pi", "t.pi.json", "--method", "sis",
            "--gamma", "0.9", "--out", "e.json",
        ],
    ));
}

#[test]
fn verify_passes_and_rejects_zero_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run_in(d, &["verify", "--cases", "2", "--seed", "6", "--tol", "1e-8"]);
    let text = assert_ok(&out);
    assert!(text.contains("all checks passed"), "got: {text}");
    assert!(text.contains("two-step.value") && text.contains("adversarial.gate"));
    let bad = run_in(d, &["verify", "--cases", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn experiment_writes_versioned_deterministic_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = serde_json::json!({
        "generator": { "kind": "random", "n_states": 4, "n_actions": 2 },
        "epsilons": [0.2],
        "dataset_sizes": [25],
        "horizon": 10,
        "methods": ["fqe", "sis"],
        "abstractions": ["none"],
        "replications": 2,
        "base_seed": 3,
        "tolerance": 1e-9,
        "output": "res.csv"
    });
    std::fs::write(d.join("cfg.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();

    assert_ok(&run_in(d, &["experiment", "--config", "cfg.json", "--jobs", "2"]));
    let first = std::fs::read_to_string(d.join("res.csv")).unwrap();
    let summary = std::fs::read_to_string(d.join("res.summary.csv")).unwrap();
    assert!(first.starts_with("# ope-results v1\n"));
    assert!(summary.starts_with("# ope-summary v1\n"));
    assert_eq!(first.lines().count(), 2 + 4, "schema, header, 2 reps x 2 methods");

    // a rerun with a different job count reproduces the bytes
    assert_ok(&run_in(d, &["experiment", "--config", "cfg.json", "--jobs", "1", "--out", "res2.csv"]));
    let second = std::fs::read_to_string(d.join("res2.csv")).unwrap();
    assert_eq!(first, second);

    // the directory override applies to relative outputs
    let sub = d.join("moved");
    let out = Command::new(bin())
        .args(["experiment", "--config", "cfg.json", "--out", "res3.csv"])
        .current_dir(d)
        .env("OPE_OUT_DIR", &sub)
        .output()
        .expect("spawn ope");
    assert_ok(&out);
    assert!(sub.join("res3.csv").exists());
    assert_eq!(std::fs::read_to_string(sub.join("res3.csv")).unwrap(), first);
}
