use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fracrank(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fracrank"));
    cmd.args(args).env_remove("FRACRANK_OUT");
    if let Some(p) = out_env {
        cmd.env("FRACRANK_OUT", p);
    }
    cmd.output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn report(dir: &Path, scenario: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join(scenario).join("report.json")).unwrap()).unwrap()
}

#[test]
fn chirp_at_101_reports_the_gauss_sum_coefficient() {
    let dir = scratch("chirp");
    let cfg = dir.join("chirp.toml");
    std::fs::write(&cfg, "scenario = \"singlescale-chirp\"\nmoduli = [101]\n").unwrap();
    let out = fracrank(&["run", "singlescale-chirp", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.join("singlescale-chirp/chirp.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[2] - 0.0995037190).abs() < 1e-9, "{row:?}");
    let r = report(&dir, "singlescale-chirp");
    assert!(r["artifacts"].as_array().unwrap().iter().any(|a| a == "chirp.csv"));
}

#[test]
fn vectree_423_seed_1_passes_every_counting_assertion() {
    let dir = scratch("vectree");
    let out = fracrank(&["run", "vectree-(4,2,3)", "--seed", "1", "--out", dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = report(&dir, "vectree-counting");
    assert_eq!(r["params"], serde_json::json!([4, 2, 3]));
    assert!(r["assertions"].as_array().unwrap().iter().all(|a| a["pass"] == true));
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    assert_eq!(fracrank(&["run", "no-such-scenario"], None).status.code(), Some(2));
    assert_eq!(fracrank(&["frobnicate"], None).status.code(), Some(2));
    let dir = scratch("errors");
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "scenario = \"pipeline\"\nexponent = [4.0, 4.0, 4.0, 4.0]\n").unwrap();
    let out = fracrank(&["validate-config", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`exponent`"));
    std::fs::write(&bad, "scenario = \"pipeline\"\nexponents = [3.0, 3.0, 3.0, 3.0]\n").unwrap();
    assert_eq!(fracrank(&["run", "pipeline", "--config", bad.to_str().unwrap()], None).status.code(), Some(2));
    let good = dir.join("good.json");
    std::fs::write(&good, "{\"scenario\": \"pipeline\", \"exponents\": [4.0, 4.0, 4.0, 4.0]}").unwrap();
    assert_eq!(fracrank(&["validate-config", good.to_str().unwrap()], None).status.code(), Some(0));
}

#[test]
fn assertion_failure_exits_with_1() {
    // A descending ladder breaks the monotonicity assertion.
    let dir = scratch("fail");
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "moduli = [211, 101]\n").unwrap();
    let out = fracrank(&["run", "singlescale-chirp", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL ratio-increasing"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = scratch("env");
    let out = fracrank(&["run", "singlescale-degenerate"], Some(&dir));
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("singlescale-degenerate/report.json").exists());
    assert!(dir.join("singlescale-degenerate/timings.json").exists());
}

#[test]
fn list_scenarios_names_every_suite() {
    let out = String::from_utf8(fracrank(&["list-scenarios"], None).stdout).unwrap();
    for id in ["subspace-genericity", "grid-axioms", "tile-axioms", "tree-selection", "vectree-counting", "singlescale-chirp", "pipeline"] {
        assert!(out.contains(id), "{id}");
    }
}
