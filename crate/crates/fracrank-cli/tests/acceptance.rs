//! One test per acceptance criterion; each runs the corresponding scenario with its
//! default configuration and checks the pinned tolerances below.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fracrank::vectree::katz_tao_count;
use fracrank_cli::{run_scenario, ExperimentConfig, RunReport, SCENARIOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GENERICITY_SECONDS: f64 = 60.0;
const GENERICITY_MIN_PASS: usize = 95;
const MIN_SYSTEMS: usize = 20;
const H_CAP: u64 = 10_000;
const STABILITY: f64 = 0.20;
const FROZEN_C: f64 = 0.06339990989771309;
const FROZEN_TOLERANCE: f64 = 0.10;
const TRIANGLE_FLOOR: f64 = 0.5;
const COEFFICIENT_TOL: f64 = 1e-10;
const FORM_TOL: f64 = 1e-8;

fn run(name: &str) -> RunReport {
    run_scenario(name, &ExperimentConfig::default()).unwrap_or_else(|e| panic!("{name}: {e}")).report
}

fn require(report: &RunReport, ids: &[&str], criterion: u32) {
    for id in ids {
        let a = report.get(id).unwrap_or_else(|| panic!("{}: assertion {id} missing", report.scenario));
        assert_eq!(a.criterion, Some(criterion), "{id} maps to the wrong criterion");
        assert!(a.pass, "{}: {id} failed: {}", report.scenario, a.detail);
    }
}

fn summary_f64(report: &RunReport, key: &str) -> f64 {
    report.summary[key].as_f64().unwrap_or_else(|| panic!("summary.{key} missing"))
}

#[test]
fn criterion_01_genericity_of_random_subspaces() {
    let start = Instant::now();
    let r = run("subspace-genericity");
    let secs = start.elapsed().as_secs_f64();
    require(&r, &["minor-coverage", "generic-fraction"], 1);
    assert_eq!(r.summary["instances"], 100);
    assert_eq!(r.summary["minors_per_instance"], 56);
    assert!(r.summary["passed"].as_u64().unwrap() >= GENERICITY_MIN_PASS as u64);
    assert!(secs < GENERICITY_SECONDS, "took {secs:.1} s");
}

/// Independent count of chains x_1..x_d with f_i(x_i) = f_i(x_{i+1}).
fn brute_chains(x_len: usize, maps: &[Vec<usize>]) -> u64 {
    let d = maps.len() + 1;
    (0..x_len.pow(d as u32))
        .filter(|code| {
            let xs: Vec<usize> = (0..d).map(|j| code / x_len.pow(j as u32) % x_len).collect();
            (0..d - 1).all(|i| maps[i][xs[i]] == maps[i][xs[i + 1]])
        })
        .count() as u64
}

#[test]
fn criterion_02_katz_tao_exact_counts() {
    let r = run("vectree-counting");
    require(&r, &["katz-tao"], 2);
    assert_eq!(r.summary["katz_tao_instances"], 600);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for d in 2..=4usize {
        for _ in 0..200 {
            let x_len = rng.gen_range(1..=7usize);
            let codomain: Vec<usize> = (0..d - 1).map(|_| rng.gen_range(1..=x_len)).collect();
            let maps: Vec<Vec<usize>> = codomain.iter().map(|&a| (0..x_len).map(|_| rng.gen_range(0..a)).collect()).collect();
            let count = brute_chains(x_len, &maps);
            let kt = katz_tao_count(x_len, &maps, &codomain);
            assert_eq!(kt.count, count.to_string());
            // count · Π|A_i| ≥ |X|^d, i.e. count ≥ ⌈|X|^d / Π|A_i|⌉.
            let prod: u64 = codomain.iter().map(|&a| a as u64).product();
            assert!(count * prod >= (x_len as u64).pow(d as u32), "d = {d}, |X| = {x_len}");
            assert!(kt.holds);
        }
    }
}

#[test]
fn criterion_03_pointwise_counting_and_injectivity() {
    let tiles = run("tile-axioms");
    require(&tiles, &["rank-axioms", "r7"], 3);
    let r = run("vectree-counting");
    require(&r, &["validated-systems", "counting-stage1", "counting-stage2", "h-injective"], 3);
    assert!(r.summary["systems"].as_u64().unwrap() >= MIN_SYSTEMS as u64);
    assert!(r.get("h-injective").unwrap().detail.contains(&format!("cap {H_CAP}")));
}

#[test]
fn criterion_04_single_scale_exponents() {
    let r = run("singlescale-level-sets");
    require(&r, &["exponents", "crude-bound", "improved-bound", "symmetric-bound", "constant-stable"], 4);
    let cs: Vec<f64> = r.summary["constants"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    assert!(cs.len() >= 2);
    assert!(cs.iter().all(|c| (c / mean - 1.0).abs() <= STABILITY), "{cs:?}");
    assert!(r.summary["moduli"].as_array().unwrap().iter().all(|m| m.as_u64().unwrap() <= 16));
}

#[test]
fn criterion_05_true_complexity_constant() {
    let r = run("singlescale-true-complexity");
    require(&r, &["exponent", "frozen-constant"], 5);
    assert_eq!(summary_f64(&r, "exponent"), 0.25);
    let c = summary_f64(&r, "worst_constant");
    assert!((c / FROZEN_C - 1.0).abs() <= FROZEN_TOLERANCE, "C = {c}");
}

#[test]
fn criterion_06_chirp_falsification_channel() {
    let out = run_scenario("singlescale-chirp", &ExperimentConfig::default()).unwrap();
    require(&out.report, &["triangle-sum", "flat-coefficients", "ratio-increasing"], 6);
    let (_, csv) = out.tables.tables.iter().find(|(n, _)| n == "chirp.csv").unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), vec![101, 211, 401]);
    for r in &rows {
        assert!(r[1] >= TRIANGLE_FLOOR);
        assert!((r[2] - r[0].powf(-0.5)).abs() <= COEFFICIENT_TOL);
    }
    assert!(rows.windows(2).all(|w| w[1][6] > w[0][6]));
}

#[test]
fn criterion_07_degenerate_example_against_generic_run() {
    let r = run("singlescale-degenerate");
    require(&r, &["form-is-one", "small-coefficients", "generic-contrast"], 7);
    assert_eq!(r.summary["moduli"], serde_json::json!([101]));
    let (deg, gen) = (summary_f64(&r, "degenerate_ratio"), summary_f64(&r, "generic_worst_constant"));
    assert!(gen < deg, "generic {gen} vs degenerate {deg}");
    let form = r.summary["form_abs"][0].as_f64().unwrap();
    assert!((form - 1.0).abs() <= FORM_TOL, "|form| = {form}");
    for c in r.summary["max_coefficients"][0].as_array().unwrap() {
        assert!(c.as_f64().unwrap() <= 101f64.powf(-0.5) + COEFFICIENT_TOL);
    }
}

#[test]
fn criterion_08_tree_machinery() {
    let r = run("tree-selection");
    require(&r, &["remainder-halved", "strong-disjointness", "size-oracle"], 8);
    assert_eq!(r.summary["instances"], 100);
    assert!(summary_f64(&r, "worst_ratio") < 0.5);
}

#[test]
fn criterion_09_grid_machinery() {
    let r = run("grid-axioms");
    require(&r, &["centralize-g1-g4", "whitney-i-iv"], 9);
    assert_eq!(r.summary["centralized"], 100);
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("determinism");
    let _ = std::fs::remove_dir_all(&base);
    for (id, _) in SCENARIOS {
        let mut runs = Vec::new();
        for tag in ["a", "b"] {
            let out = base.join(tag);
            let status = Command::new(env!("CARGO_BIN_EXE_fracrank"))
                .args(["run", id, "--seed", "0", "--out"])
                .arg(&out)
                .env_remove("FRACRANK_OUT")
                .output()
                .unwrap();
            assert_eq!(status.status.code(), Some(0), "{id}: {}", String::from_utf8_lossy(&status.stdout));
            runs.push(read_outputs(&out.join(id)));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{id} differs between reruns");
    }
}
