use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rosa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rosa")).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn gen(dir: &Path, name: &str, n: &str, seed: &str, gamma: &str) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let out = rosa(&["gen-maze", "--n", n, "--seed", seed, "--gamma", gamma, "--out", &path]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_maze_sizes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let small = gen(dir.path(), "a.json", "2", "1", "0.99");
    assert_eq!(json(Path::new(&small))["n_states"], 7);
    let again = gen(dir.path(), "b.json", "2", "1", "0.99");
    assert_eq!(std::fs::read(&small).unwrap(), std::fs::read(&again).unwrap());
    let large = gen(dir.path(), "c.json", "5", "7", "0.9999");
    assert_eq!(json(Path::new(&large))["n_states"], 49);
}

#[test]
fn verbose_gen_maze_draws_the_maze() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let out = rosa(&["gen-maze", "--n", "3", "--out", path.to_str().unwrap(), "--verbose"]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains('G') && stderr.contains('#'));
    assert!(stderr.contains("17 states"));
}

#[test]
fn solve_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen(dir.path(), "m.json", "2", "1", "0.99");
    for method in ["rosa", "bcp", "dpo"] {
        let report = dir.path().join(format!("{method}.json"));
        let out = rosa(&["solve", "--method", method, "--model", &model, "--out", report.to_str().unwrap()]);
        assert!(out.status.success());
        let v = json(&report);
        for key in [
            "method", "reward", "policy", "eta", "status", "kkt_residual",
            "constraint_residual", "iterations", "time_s", "certificate",
        ] {
            assert!(v.get(key).is_some(), "{method} report lacks {key}");
        }
        assert_eq!(v["method"], method);
        assert_eq!(v["status"], "converged");
    }
}

#[test]
fn solver_failure_is_data_not_an_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen(dir.path(), "m.json", "4", "2", "0.9999");
    let out = rosa(&["solve", "--model", &model, "--max-iters", "2"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "max_iters");
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen(dir.path(), "m.json", "2", "1", "0.99");
    let missing = rosa(&["solve", "--model", dir.path().join("none.json").to_str().unwrap()]);
    assert!(!missing.status.success());

    let policy = dir.path().join("p.json");
    std::fs::write(&policy, r#"{"pi": [[0.25, 0.25, 0.25, 0.25], [0.5, 0.5, 0.5, 0.0]]}"#).unwrap();
    let out = rosa(&["eval", "--model", &model, "--policy", policy.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("row 1"));

    std::fs::write(&policy, r#"{"pi": [[0.5, 0.5]]}"#).unwrap();
    let out = rosa(&["eval", "--model", &model, "--policy", policy.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("dimension mismatch"));
}

#[test]
fn eval_of_solved_policy() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen(dir.path(), "m.json", "3", "2", "0.99");
    let report = dir.path().join("r.json");
    let policy = dir.path().join("p.json");
    let out = rosa(&[
        "solve", "--model", &model, "--out", report.to_str().unwrap(),
        "--policy-out", policy.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = rosa(&["eval", "--model", &model, "--policy", policy.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let reward: f64 = text.lines().next().unwrap().trim_start_matches("reward ").parse().unwrap();
    let expected = json(&report)["reward"].as_f64().unwrap();
    assert!((reward - expected).abs() < 1e-6);
    assert!(text.contains("all positive"));
}

#[test]
fn dump_header_matches_lists() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen(dir.path(), "m.json", "3", "0", "0.99");
    let dump = dir.path().join("c.json");
    let out = rosa(&["dump-constraints", "--model", &model, "--out", dump.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json(&dump);
    let m = json(Path::new(&model));
    let (s, o) = (m["n_states"].as_u64().unwrap(), m["n_obs"].as_u64().unwrap());
    assert_eq!(v["counts"]["linear"], s);
    assert_eq!(v["counts"]["quadratic"], (s - o) * 3);
    assert_eq!(v["counts"]["linear"].as_u64().unwrap() as usize, v["linear"].as_array().unwrap().len());
    assert_eq!(v["counts"]["quadratic"].as_u64().unwrap() as usize, v["quadratic"].as_array().unwrap().len());
}

#[test]
fn bench_single_cell_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let summary = dir.path().join("summary.csv");
    let out = rosa(&[
        "bench", "--methods", "rosa", "--n-range", "2", "--reps", "1",
        "--csv", csv.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "method,n,states,gamma,seed,reward,time_s,status,iters");
    assert!(lines[1].starts_with("rosa,2,7,0.9999,0,"));
    let summary = std::fs::read_to_string(&summary).unwrap();
    assert!(summary.lines().next().unwrap().contains("reward_q0.16"));
}

#[test]
fn bench_rejects_bad_flags() {
    assert!(!rosa(&["bench", "--n-range", "5..2"]).status.success());
    assert!(!rosa(&["bench", "--gammas", "1.5"]).status.success());
    assert!(!rosa(&["bench", "--methods", "ppo"]).status.success());
}
