use std::collections::BTreeMap;
use std::time::Instant;

use fracrank::grids::{
    centralize, is_central_grid, random_sparse_cubes, verify_whitney_axioms, whitney_cover, Box as QBox, GridConstants,
};
use fracrank::linalg::{rat, rat_to_string, ratio};
use fracrank::singlescale::{
    chirp_counterexample, degenerate_example, level_set_experiment, true_complexity_experiment, true_complexity_exponent,
    FormSpec,
};
use fracrank::subspace::{coordinate_subsets, genericity_report, random_generic, rank_params, SubspaceBasis};
use fracrank::tiles::{
    degenerate_r7_system, generate_synthetic, synthetic_constants, verify_r7, verify_rank_axioms, SyntheticSpec, Tile,
    TileSystem,
};
use fracrank::trees::{
    size, size_by_subsets, size_decomposition, size_halving_selection, strong_disjointness_check, volume, IndexData, Tree,
};
use fracrank::vectree::{counting_bounds_stage1, counting_bounds_stage2, katz_tao_count, Reshuffle};
use fracrank::wavepackets::MotherBump;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{config_error, ConfigError, ExperimentConfig};
use crate::pipeline::{pipeline_experiment, pipeline_grid, random_packet_field};
use crate::report::{RunReport, Tables};

/// Worst |form| / Π‖F̂_i‖_∞^{1/4} for the default (4,2,3) calibration: form seed 0,
/// N ∈ {8, 12, 16}, 100 ±1 trials from field seed 0.
pub const TRUE_COMPLEXITY_C: f64 = 0.06339990989771309;
pub const TRUE_COMPLEXITY_TOLERANCE: f64 = 0.10;
/// The same quantity for the generic (3,2,2) contrast run: form seed 0, N ∈ {5, 7, 11}, 20 trials.
pub const GENERIC_CONTRAST_C: f64 = 0.16605500572837803;
pub const LEVEL_SET_STABILITY: f64 = 0.20;
pub const CHIRP_TRIANGLE_FLOOR: f64 = 0.5;
pub const COEFFICIENT_TOLERANCE: f64 = 1e-10;
pub const DEGENERATE_FORM_TOLERANCE: f64 = 1e-8;
pub const GENERICITY_PASS_FRACTION: f64 = 0.95;
pub const H_TUPLE_CAP: u64 = 10_000;

pub const SCENARIOS: &[(&str, &str)] = [
    ("subspace-genericity", "graph-over-coordinates minors and two-scheme solvability of random subspaces"),
    ("grid-axioms", "centralization (G1)-(G4) and Whitney (i)-(iv)"),
    ("tile-axioms", "rank axioms (r1)-(r7) on synthetic tile systems"),
    ("tree-selection", "size-halving selection, strong disjointness and the subset size oracle"),
    ("vectree-counting", "Katz-Tao counts and the stage 1 and stage 2 pointwise counting bounds"),
    ("singlescale-level-sets", "exhaustive level-set counts against the crude, improved and symmetric bounds"),
    ("singlescale-true-complexity", "form against the product of sup Fourier coefficients"),
    ("singlescale-chirp", "quadratic chirp: large triangle sum with flat coefficients"),
    ("singlescale-degenerate", "degenerate planar form against a generic contrast run"),
    ("pipeline", "exceptional set, decompositions, reshuffling and the model density"),
]
.as_slice();

pub struct Outcome {
    pub report: RunReport,
    pub tables: Tables,
    pub phases: Vec<(String, f64)>,
}

struct Clock {
    last: Instant,
    phases: Vec<(String, f64)>,
}

impl Clock {
    fn new() -> Clock {
        Clock { last: Instant::now(), phases: Vec::new() }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push((name.to_string(), (now - self.last).as_secs_f64() * 1e3));
        self.last = now;
    }
}

/// Canonical scenario id and any (n,d,k) carried in the name, e.g. `vectree-(4,2,3)`.
pub fn resolve(name: &str) -> Option<(&'static str, Option<(usize, usize, usize)>)> {
    if let Some((id, _)) = SCENARIOS.iter().find(|(id, _)| *id == name) {
        return Some((id, None));
    }
    let inner = name.strip_prefix("vectree-(")?.strip_suffix(')')?;
    let v: Vec<usize> = inner.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
    match v[..] {
        [n, d, k] => Some(("vectree-counting", Some((n, d, k)))),
        _ => None,
    }
}

pub fn run_scenario(name: &str, cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let (id, params) = resolve(name).ok_or_else(|| config_error("scenario", format!("unknown scenario `{name}`")))?;
    if let Some(s) = &cfg.scenario {
        if resolve(s).map(|r| r.0) != Some(id) {
            return Err(config_error("scenario", format!("config names `{s}` but `{name}` was requested")));
        }
    }
    cfg.validate()?;
    let mut cfg = cfg.clone();
    if let Some((n, d, k)) = params {
        cfg.n = Some(n);
        cfg.d = Some(d);
        cfg.k = Some(k);
    }
    match id {
        "subspace-genericity" => genericity(&cfg),
        "grid-axioms" => grid_axioms(&cfg),
        "tile-axioms" => tile_axioms(&cfg),
        "tree-selection" => tree_selection(&cfg),
        "vectree-counting" => vectree_counting(&cfg),
        "singlescale-level-sets" => level_sets(&cfg),
        "singlescale-true-complexity" => true_complexity(&cfg),
        "singlescale-chirp" => chirp(&cfg),
        "singlescale-degenerate" => degenerate(&cfg),
        "pipeline" => pipeline(&cfg),
        _ => unreachable!("every listed scenario is dispatched"),
    }
}

fn csv_err(e: csv::Error) -> ConfigError {
    config_error("output", e.to_string())
}

fn in_scope(n: usize, d: usize, k: usize) -> Result<(), ConfigError> {
    if n < 2 || k == 0 || 2 * k >= n * d {
        return Err(config_error("k", format!("(n,d,k) = ({n},{d},{k}) needs n ≥ 2 and 0 < k < nd/2")));
    }
    Ok(())
}

fn require_params(cfg: &ExperimentConfig, want: (usize, usize, usize), field_scope: &str) -> Result<(), ConfigError> {
    let got = cfg.params(want);
    if got != want {
        return Err(config_error("n", format!("{field_scope} is built for (n,d,k) = {want:?}, got {got:?}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct GenericityRow {
    seed: u64,
    minors_checked: usize,
    minors_failed: usize,
    schemes_checked: usize,
    schemes_failed: usize,
    pass: bool,
}

fn genericity(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    let (n, d, k) = cfg.params((4, 2, 3));
    in_scope(n, d, k)?;
    let seeds = cfg.seed_list(100);
    let rows: Vec<GenericityRow> = seeds
        .iter()
        .map(|&s| {
            let r = genericity_report(&random_generic(n, d, k, s), s);
            GenericityRow {
                seed: s,
                minors_checked: r.minors_checked,
                minors_failed: r.minors_failed.len(),
                schemes_checked: r.schemes_checked,
                schemes_failed: r.schemes_failed.len(),
                pass: r.pass,
            }
        })
        .collect();
    clock.lap("genericity");
    let mut report = RunReport::new("subspace-genericity", seeds[0], (n, d, k));
    let expected = coordinate_subsets(n * d, k).len();
    let all_minors = rows.iter().all(|r| r.minors_checked == expected);
    report.check("minor-coverage", Some(1), all_minors, None, format!("{expected} coordinate minors per subspace"));
    let passed = rows.iter().filter(|r| r.pass).count();
    let need = (GENERICITY_PASS_FRACTION * rows.len() as f64).ceil() as usize;
    report.check(
        "generic-fraction",
        Some(1),
        passed >= need,
        Some(passed as f64 - need as f64),
        format!("{passed} of {} subspaces pass all minors and two-schemes (need {need})", rows.len()),
    );
    report.summary = json!({
        "instances": rows.len(),
        "passed": passed,
        "minors_per_instance": expected,
        "schemes_per_instance": rows.first().map(|r| r.schemes_checked),
    });
    let mut tables = Tables::default();
    tables.add("genericity", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

#[derive(Serialize)]
struct CentralRow {
    seed: u64,
    cubes: usize,
    pass: bool,
    failed: String,
}

fn grid_axioms(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    let consts = GridConstants::new(cfg.constants.unwrap_or([2, 4, 8, 32, 1024])).map_err(|e| config_error("constants", e.to_string()))?;
    let wconsts = GridConstants::new(cfg.whitney_constants.unwrap_or([2, 3, 5, 7, 16]))
        .map_err(|e| config_error("whitney_constants", e.to_string()))?;
    let seeds = cfg.seed_list(100);
    let d = cfg.d.unwrap_or(2);
    let mut rows = Vec::new();
    for &s in &seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let cubes = random_sparse_cubes(d, 12, &consts, &mut rng);
        let (pass, failed) = match centralize(&cubes, &consts) {
            Ok(g) => {
                let rep = is_central_grid(&g, consts.c2);
                let failed: Vec<String> = rep.results.iter().filter(|r| !r.pass).map(|r| r.axiom.clone()).collect();
                (rep.pass(), failed.join(" "))
            }
            Err(e) => (false, e.to_string()),
        };
        rows.push(CentralRow { seed: s, cubes: cubes.len(), pass, failed });
    }
    clock.lap("centralize");
    let mut report = RunReport::new("grid-axioms", seeds[0], cfg.params((2, 1, 0)));
    let ok = rows.iter().filter(|r| r.pass).count();
    report.check(
        "centralize-g1-g4",
        Some(9),
        ok == rows.len(),
        Some(ok as f64 - rows.len() as f64),
        format!("{ok} of {} centralized families are central grids", rows.len()),
    );

    // Whitney covers around the origin and around a line in R^2.
    let subspaces = [
        ("origin", SubspaceBasis::new(2, 1, vec![]).expect("zero subspace")),
        ("antidiagonal", SubspaceBasis::new(2, 1, vec![vec![rat(1), rat(-1)]]).expect("line")),
    ];
    let region = QBox::from_ints(&[-8, -8], &[8, 8]);
    let mut whitney = Vec::new();
    let mut all = true;
    for (label, s) in &subspaces {
        let (cells, rep) = match whitney_cover(s, &region, &wconsts, (-1, 0), 1 << 20) {
            Ok(cover) => {
                let boxes: Vec<QBox> = cover.iter().map(|c| c.to_box(wconsts.c4)).collect();
                (boxes.len(), Some(verify_whitney_axioms(&boxes, s, &wconsts)))
            }
            Err(_) => (0, None),
        };
        let pass = cells > 0 && rep.as_ref().is_some_and(|r| r.pass());
        all &= pass;
        let failed: Vec<String> =
            rep.map(|r| r.results.into_iter().filter(|x| !x.pass).map(|x| x.axiom).collect()).unwrap_or_else(|| vec!["cover".into()]);
        whitney.push(json!({ "subspace": label, "cells": cells, "pass": pass, "failed": failed }));
    }
    clock.lap("whitney");
    report.check("whitney-i-iv", Some(9), all, None, format!("{} Whitney covers checked", whitney.len()));
    report.summary = json!({
        "constants": consts.as_array(),
        "whitney_constants": wconsts.as_array(),
        "centralized": rows.len(),
        "whitney": whitney,
    });
    let mut tables = Tables::default();
    tables.add("centralize", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

fn synthetic_spec(cfg: &ExperimentConfig, default: SyntheticSpec, seed: u64) -> SyntheticSpec {
    SyntheticSpec { seed, ..cfg.synthetic.clone().unwrap_or(default) }
}

fn basis_423() -> SubspaceBasis {
    random_generic(4, 2, 3, 11)
}

fn system(spec: &SyntheticSpec) -> Result<TileSystem, ConfigError> {
    generate_synthetic(spec, &basis_423(), &synthetic_constants()).map_err(|e| config_error("synthetic", e.to_string()))
}

#[derive(Serialize)]
struct TileRow {
    seed: u64,
    multi_tiles: usize,
    r1_r6: bool,
    failed: String,
    r7: bool,
    r7_checked: usize,
    r7_worst_ratio: f64,
}

fn tile_axioms(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    require_params(cfg, (4, 2, 3), "tile-axioms")?;
    let mut clock = Clock::new();
    let seeds = cfg.seed_list(20);
    let mut rows = Vec::new();
    for &s in &seeds {
        let sys = system(&synthetic_spec(cfg, SyntheticSpec::default(), s))?;
        let rep = verify_rank_axioms(&sys);
        let failed: Vec<String> = rep.results.iter().filter(|r| !r.pass).map(|r| r.axiom.clone()).collect();
        let r7 = verify_r7(&sys, &[0, 1, 2], cfg.cap.unwrap_or(H_TUPLE_CAP) as usize, s).map_err(|e| config_error("synthetic", e.to_string()))?;
        rows.push(TileRow {
            seed: s,
            multi_tiles: sys.tiles.len(),
            r1_r6: rep.pass(),
            failed: failed.join(" "),
            r7: r7.pass,
            r7_checked: r7.checked,
            r7_worst_ratio: r7.worst_ratio,
        });
    }
    clock.lap("synthetic");
    let bad = verify_r7(&degenerate_r7_system(100), &[0, 1, 2], 10_000, 0).map_err(|e| config_error("synthetic", e.to_string()))?;
    clock.lap("negative-control");
    let mut report = RunReport::new("tile-axioms", seeds[0], (4, 2, 3));
    let ok = rows.iter().filter(|r| r.r1_r6).count();
    report.check("rank-axioms", Some(3), ok == rows.len(), Some(ok as f64 - rows.len() as f64), format!("(r1)-(r6) hold on {ok} of {} systems", rows.len()));
    let ok7 = rows.iter().filter(|r| r.r7).count();
    report.check("r7", Some(3), ok7 == rows.len(), Some(ok7 as f64 - rows.len() as f64), format!("(r7) holds on {ok7} of {} systems", rows.len()));
    report.check(
        "r7-negative-control",
        Some(3),
        !bad.pass && bad.exhaustive,
        Some(bad.worst_ratio - bad.bound),
        format!("degenerate system violates (r7): worst ratio {:.3} against bound {:.3}", bad.worst_ratio, bad.bound),
    );
    report.summary = json!({ "systems": rows.len(), "multi_tiles": rows.iter().map(|r| r.multi_tiles).sum::<usize>() });
    let mut tables = Tables::default();
    tables.add("tile_axioms", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

/// Dyadic energies so that every size comparison is exact.
fn dyadic_energies(sys: &TileSystem, i: usize, rng: &mut impl Rng) -> BTreeMap<Tile, f64> {
    let scale = volume(&sys.tiles[0].r).min(1.0);
    sys.tiles_of(i).into_iter().map(|t| (t, rng.gen_range(1..64) as f64 / 64.0 * scale)).collect()
}

#[derive(Serialize)]
struct SelectionRow {
    instance: usize,
    system_seed: u64,
    index: usize,
    tiles: usize,
    size_before: f64,
    size_after: f64,
    halved: bool,
    disjoint: bool,
    oracle_checked: bool,
    oracle_gap: f64,
}

fn tree_selection(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    require_params(cfg, (4, 2, 3), "tree-selection")?;
    let mut clock = Clock::new();
    let base = cfg.seed.unwrap_or(0);
    let instances = cfg.instances.unwrap_or(100);
    let mut systems = BTreeMap::new();
    let mut rows = Vec::new();
    for inst in 0..instances {
        let sys_seed = base + (inst % 5) as u64;
        if !systems.contains_key(&sys_seed) {
            systems.insert(sys_seed, system(&synthetic_spec(cfg, SyntheticSpec::default(), sys_seed))?);
        }
        let sys = &systems[&sys_seed];
        let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_mul(1000) + inst as u64);
        let i = inst % sys.n;
        let energy = dyadic_energies(sys, i, &mut rng);
        let ctx = IndexData::new(sys, i, energy.clone());
        let mut p = sys.tiles_of(i);
        if inst % 2 == 1 {
            // Small nested families for the exhaustive oracle.
            let root = p[rng.gen_range(0..p.len())].r.ancestor(0);
            p.retain(|t| root.contains(&t.r) || rng.gen_bool(0.1));
            p.truncate(rng.gen_range(4..=12));
        }
        let sel = size_halving_selection(&ctx, &p);
        let disjoint = sel.stages.iter().all(|st| strong_disjointness_check(&st.selected, &ctx).is_ok());
        let (oracle_checked, oracle_gap) = if p.len() <= 12 {
            let gap = (size(&ctx, &p).size - size_by_subsets(sys, &energy, &p)).abs();
            let rem_gap = if sel.remainder.len() <= 12 {
                (size(&ctx, &sel.remainder).size - size_by_subsets(sys, &energy, &sel.remainder)).abs()
            } else {
                0.0
            };
            (true, gap.max(rem_gap))
        } else {
            (false, 0.0)
        };
        rows.push(SelectionRow {
            instance: inst,
            system_seed: sys_seed,
            index: i,
            tiles: p.len(),
            size_before: sel.size_before,
            size_after: sel.size_after,
            halved: sel.halved(),
            disjoint,
            oracle_checked,
            oracle_gap,
        });
    }
    clock.lap("selection");
    // Strong disjointness of the level forests of full decompositions.
    let mut decomposition_forests = 0;
    let mut decomposition_disjoint = true;
    for (&s, sys) in &systems {
        let mut rng = ChaCha8Rng::seed_from_u64(s + 7);
        for i in 0..sys.n {
            let ctx = IndexData::new(sys, i, dyadic_energies(sys, i, &mut rng));
            for lv in size_decomposition(&ctx, &sys.tiles_of(i)).levels {
                let lac: Vec<Tree> = lv.trees.iter().filter(|t| t.is_lacunary(&ctx)).cloned().collect();
                decomposition_forests += 1;
                decomposition_disjoint &= strong_disjointness_check(&lac, &ctx).is_ok();
            }
        }
    }
    clock.lap("decomposition");
    let mut report = RunReport::new("tree-selection", base, (4, 2, 3));
    let halved = rows.iter().filter(|r| r.halved).count();
    let worst = rows.iter().filter(|r| r.size_before > 0.0).map(|r| r.size_after / r.size_before).fold(0.0, f64::max);
    report.check(
        "remainder-halved",
        Some(8),
        halved == rows.len(),
        Some(0.5 - worst),
        format!("{halved} of {} selections leave size < half; worst ratio {worst:.6}", rows.len()),
    );
    let disjoint = rows.iter().all(|r| r.disjoint) && decomposition_disjoint;
    report.check(
        "strong-disjointness",
        Some(8),
        disjoint,
        None,
        format!("every stage forest of {} selections and {decomposition_forests} level forests", rows.len()),
    );
    let checked = rows.iter().filter(|r| r.oracle_checked).count();
    let gap = rows.iter().map(|r| r.oracle_gap).fold(0.0, f64::max);
    report.check(
        "size-oracle",
        Some(8),
        checked > 0 && gap == 0.0,
        Some(-gap),
        format!("{checked} instances with |P| ≤ 12 match exhaustive subset enumeration; largest gap {gap:e}"),
    );
    report.summary = json!({ "instances": rows.len(), "oracle_instances": checked, "worst_ratio": worst });
    let mut tables = Tables::default();
    tables.add("selection", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

#[derive(Serialize)]
struct KatzTaoRow {
    d: usize,
    instance: usize,
    x_len: usize,
    count: String,
    bound: String,
    holds: bool,
}

#[derive(Serialize)]
struct CountingRow {
    seed: u64,
    multi_tiles: usize,
    stage: u32,
    families: usize,
    checks: usize,
    max_count: u64,
    largest_domain: u64,
    scheme_violations: usize,
    delta_violations: usize,
    aggregate_violations: usize,
    noninjective: usize,
    incomplete: usize,
    pass: bool,
}

fn vectree_counting(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    require_params(cfg, (4, 2, 3), "vectree-counting")?;
    let mut clock = Clock::new();
    let base = cfg.seed.unwrap_or(0);
    let cap = cfg.cap.unwrap_or(H_TUPLE_CAP);

    let mut kt_rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    for d in 2..=4usize {
        for inst in 0..200 {
            let x_len = rng.gen_range(1..=8usize);
            let codomain: Vec<usize> = (0..d - 1).map(|_| rng.gen_range(1..=x_len)).collect();
            let maps: Vec<Vec<usize>> = codomain.iter().map(|&a| (0..x_len).map(|_| rng.gen_range(0..a)).collect()).collect();
            let kt = katz_tao_count(x_len, &maps, &codomain);
            kt_rows.push(KatzTaoRow { d, instance: inst, x_len, count: kt.count, bound: kt.a_product, holds: kt.holds });
        }
    }
    clock.lap("katz-tao");

    let dense = SyntheticSpec { anchors: 12, width: 1, cubes_per_tuple: 8, ..SyntheticSpec::default() };
    let seeds = cfg.seed_list(20);
    let mut rows = Vec::new();
    let mut validated = 0;
    let mut first_failure = None;
    for &s in &seeds {
        let sys = system(&synthetic_spec(cfg, dense.clone(), s))?;
        if verify_rank_axioms(&sys).pass() {
            validated += 1;
        }
        let mut erng = ChaCha8Rng::seed_from_u64(s + 100);
        let energy: Vec<BTreeMap<Tile, f64>> = (0..sys.n).map(|i| dyadic_energies(&sys, i, &mut erng)).collect();
        let forests: Vec<Vec<Tree>> = (0..sys.n)
            .map(|i| {
                let ctx = IndexData::new(&sys, i, energy[i].clone());
                size_decomposition(&ctx, &sys.tiles_of(i)).levels.into_iter().flat_map(|l| l.trees).collect()
            })
            .collect();
        let run = Reshuffle::run(&sys, &sys.tiles, &forests, &energy);
        let s1 = counting_bounds_stage1(&sys, &run.levels, &forests, &run.stage1, cap).map_err(|e| config_error("synthetic", e.to_string()))?;
        let s2 = counting_bounds_stage2(&sys, &run.stage2, cap).map_err(|e| config_error("synthetic", e.to_string()))?;
        for (stage, r) in [(1, s1), (2, s2)] {
            if first_failure.is_none() {
                first_failure = r.first_failure.clone();
            }
            rows.push(CountingRow {
                seed: s,
                multi_tiles: sys.tiles.len(),
                stage,
                families: r.families,
                checks: r.checks,
                max_count: r.max_count,
                largest_domain: r.largest_domain,
                scheme_violations: r.scheme_violations,
                delta_violations: r.delta_violations,
                aggregate_violations: r.aggregate_violations + r.katz_tao_violations + r.projection_errors + r.m_share_collisions,
                noninjective: r.noninjective,
                incomplete: r.incomplete,
                pass: r.pass(),
            });
        }
    }
    clock.lap("counting");

    let mut report = RunReport::new("vectree-counting", base, (4, 2, 3));
    let kt_ok = kt_rows.iter().filter(|r| r.holds).count();
    report.check(
        "katz-tao",
        Some(2),
        kt_ok == kt_rows.len(),
        Some(kt_ok as f64 - kt_rows.len() as f64),
        format!("{kt_ok} of {} instances (200 per d = 2, 3, 4) reach the exact lower bound", kt_rows.len()),
    );
    report.check(
        "validated-systems",
        Some(3),
        validated == seeds.len() && seeds.len() >= 20,
        Some(validated as f64 - 20.0),
        format!("{validated} of {} synthetic systems pass (r1)-(r6); at least 20 required", seeds.len()),
    );
    for stage in [1u32, 2] {
        let st: Vec<&CountingRow> = rows.iter().filter(|r| r.stage == stage).collect();
        let viol: usize = st.iter().map(|r| r.scheme_violations + r.delta_violations + r.aggregate_violations).sum();
        let checks: usize = st.iter().map(|r| r.checks).sum();
        let max = st.iter().map(|r| r.max_count).max().unwrap_or(0);
        report.check(
            &format!("counting-stage{stage}"),
            Some(3),
            viol == 0,
            Some(-(viol as f64)),
            format!("N(x)² ≤ Π N_j(x) at every cell: {checks} checks, {viol} violations, max count {max}"),
        );
    }
    let nonin: usize = rows.iter().map(|r| r.noninjective).sum();
    let incomplete: usize = rows.iter().map(|r| r.incomplete).sum();
    let largest = rows.iter().map(|r| r.largest_domain).max().unwrap_or(0);
    report.check(
        "h-injective",
        Some(3),
        nonin == 0 && incomplete == 0,
        Some(-((nonin + incomplete) as f64)),
        format!("H injective on every enumerated domain (largest {largest}, cap {cap}); {nonin} non-injective, {incomplete} over the cap"),
    );
    report.summary = json!({
        "katz_tao_instances": kt_rows.len(),
        "systems": seeds.len(),
        "first_failure": first_failure,
        "delta": rank_params(4, 2, 3).delta,
    });
    let mut tables = Tables::default();
    tables.add("katz_tao", &kt_rows).map_err(csv_err)?;
    tables.add("counting", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

fn form_spec(cfg: &ExperimentConfig, params: (usize, usize, usize), moduli: &[usize]) -> Result<FormSpec, ConfigError> {
    let (n, d, k) = params;
    in_scope(n, d, k)?;
    FormSpec::generic(n, d, k, cfg.form_seed.unwrap_or(0), moduli).map_err(|e| config_error("form_seed", e.to_string()))
}

#[derive(Serialize)]
struct LevelSetRow {
    seed: u64,
    band_choices: usize,
    crude: bool,
    improved: bool,
    symmetric: bool,
    constant: f64,
}

fn level_sets(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    require_params(cfg, (4, 2, 3), "singlescale-level-sets")?;
    let mut clock = Clock::new();
    let moduli = cfg.moduli.clone().unwrap_or_else(|| vec![8, 11, 13, 16]);
    if let Some(&m) = moduli.iter().find(|&&m| m > 16) {
        return Err(config_error("moduli", format!("{m} exceeds the exhaustive limit 16")));
    }
    let spec = form_spec(cfg, (4, 2, 3), &moduli)?;
    let trials = cfg.trials.unwrap_or(8);
    let seeds = cfg.seed_list(5);
    let rows: Vec<LevelSetRow> = seeds
        .iter()
        .map(|&s| {
            let e = level_set_experiment(&spec, &moduli, trials, s);
            LevelSetRow {
                seed: s,
                band_choices: e.band_choices,
                crude: e.all_crude_ok,
                improved: e.all_improved_ok,
                symmetric: e.all_symmetric_ok,
                constant: e.constant,
            }
        })
        .collect();
    clock.lap("level-sets");
    let rp = rank_params(4, 2, 3);
    // Improved: exponent 1/2 on each of 2m − 1 indices; symmetric: (k/d)/n on all n.
    let improved_exp = ratio(1, 2);
    let improved_indices = 2 * rp.m - 1;
    let symmetric_exp = rp.rank.clone() / rat(4);
    let mut report = RunReport::new("singlescale-level-sets", seeds[0], (4, 2, 3));
    report.check(
        "exponents",
        Some(4),
        improved_indices == 3 && improved_exp == ratio(1, 2) && symmetric_exp == ratio(3, 8),
        None,
        format!(
            "improved exponent {} over {improved_indices} indices, symmetric exponent {} over 4",
            rat_to_string(&improved_exp),
            rat_to_string(&symmetric_exp)
        ),
    );
    let all = |f: fn(&LevelSetRow) -> bool| rows.iter().all(f);
    report.check("crude-bound", Some(4), all(|r| r.crude), None, "|F| ≤ Π_{i∈A}|F_i| for every m-subset A, exact");
    report.check("improved-bound", Some(4), all(|r| r.improved), None, "|F|² ≤ Π_{i∈B}|F_i| for every 3-subset B, exact");
    report.check("symmetric-bound", Some(4), all(|r| r.symmetric), None, "|F|^8 ≤ Π_i |F_i|^3, exact");
    let cs: Vec<f64> = rows.iter().map(|r| r.constant).collect();
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let spread = cs.iter().map(|c| (c / mean - 1.0).abs()).fold(0.0, f64::max);
    report.check(
        "constant-stable",
        Some(4),
        mean > 0.0 && spread <= LEVEL_SET_STABILITY,
        Some(LEVEL_SET_STABILITY - spread),
        format!("constant within {:.1}% of the seed mean {mean:.4} (tolerance 20%)", spread * 100.0),
    );
    report.summary = json!({ "moduli": moduli, "trials": trials, "constants": cs, "mean_constant": mean });
    let mut tables = Tables::default();
    tables.add("level_sets", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

fn true_complexity(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    let params = cfg.params((4, 2, 3));
    let moduli = cfg.moduli.clone().unwrap_or_else(|| vec![8, 12, 16]);
    let trials = cfg.trials.unwrap_or(100);
    let seed = cfg.seed.unwrap_or(0);
    let spec = form_spec(cfg, params, &moduli)?;
    let rep = true_complexity_experiment(&spec, &moduli, trials, seed);
    clock.lap("trials");
    let calibrated = params == (4, 2, 3) && moduli == [8, 12, 16] && trials == 100 && seed == 0 && cfg.form_seed.unwrap_or(0) == 0;
    let mut report = RunReport::new("singlescale-true-complexity", seed, params);
    let expected = if params == (4, 2, 3) { Some(0.25) } else { None };
    report.check(
        "exponent",
        Some(5),
        expected.map_or(true, |e| (rep.exponent - e).abs() < 1e-15),
        None,
        format!("per-factor exponent 1 − 2(k/d)/n = {}", rep.exponent),
    );
    let c = rep.worst_constant;
    if calibrated {
        let drift = (c / TRUE_COMPLEXITY_C - 1.0).abs();
        report.check(
            "frozen-constant",
            Some(5),
            drift <= TRUE_COMPLEXITY_TOLERANCE,
            Some(TRUE_COMPLEXITY_TOLERANCE - drift),
            format!("worst C = {c:.6} against frozen {TRUE_COMPLEXITY_C} (±10%)"),
        );
    } else {
        report.check("bounded-constant", Some(5), c.is_finite(), None, format!("worst C = {c:.6} (uncalibrated configuration, logged only)"));
    }
    report.summary = json!({ "moduli": moduli, "trials": trials, "exponent": rep.exponent, "worst_constant": c, "calibrated": calibrated });
    let mut tables = Tables::default();
    tables.add("true_complexity", &rep.rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

#[derive(Serialize)]
struct ChirpRow {
    n_mod: usize,
    triangle_sum: f64,
    max_coefficient: f64,
    target: f64,
    flatness_error: f64,
    form_abs: f64,
    ratio_eps_0_1: f64,
}

fn chirp(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    let moduli = cfg.moduli.clone().unwrap_or_else(|| vec![101, 211, 401]);
    cfg.require_odd_primes(&moduli)?;
    let mut rows = Vec::new();
    for &nm in &moduli {
        let r = chirp_counterexample(nm).map_err(|e| config_error("moduli", e.to_string()))?;
        rows.push(ChirpRow {
            n_mod: nm,
            triangle_sum: r.triangle_sum,
            max_coefficient: r.max_coefficient,
            target: (nm as f64).powf(-0.5),
            flatness_error: r.flatness_error,
            form_abs: r.form_abs,
            ratio_eps_0_1: r.ratio_eps_0_1,
        });
    }
    clock.lap("chirp");
    let mut report = RunReport::new("singlescale-chirp", cfg.seed.unwrap_or(0), (4, 1, 2));
    let tri = rows.iter().map(|r| r.triangle_sum).fold(f64::INFINITY, f64::min);
    report.check(
        "triangle-sum",
        Some(6),
        tri >= CHIRP_TRIANGLE_FLOOR,
        Some(tri - CHIRP_TRIANGLE_FLOOR),
        format!("smallest triangle sum {tri:.4} ≥ {CHIRP_TRIANGLE_FLOOR}"),
    );
    let err = rows.iter().map(|r| (r.max_coefficient - r.target).abs().max(r.flatness_error)).fold(0.0, f64::max);
    report.check(
        "flat-coefficients",
        Some(6),
        err <= COEFFICIENT_TOLERANCE,
        Some(COEFFICIENT_TOLERANCE - err),
        format!(
            "every |F̂(ξ)| = N^(-1/2) within {err:.2e}; coefficients {}",
            rows.iter().map(|r| format!("{:.10}", r.max_coefficient)).collect::<Vec<_>>().join(", ")
        ),
    );
    let increasing = rows.windows(2).all(|w| w[1].ratio_eps_0_1 > w[0].ratio_eps_0_1);
    let gap = rows.windows(2).map(|w| w[1].ratio_eps_0_1 - w[0].ratio_eps_0_1).fold(f64::INFINITY, f64::min);
    report.check(
        "ratio-increasing",
        Some(6),
        increasing,
        gap.is_finite().then_some(gap),
        format!(
            "sum / coefficient^0.1 along the ladder: {}",
            rows.iter().map(|r| format!("{:.4}", r.ratio_eps_0_1)).collect::<Vec<_>>().join(", ")
        ),
    );
    report.summary = json!({ "moduli": moduli, "convention": "F̂(ξ) = N^{-d} Σ_x F(x) e(−x·ξ/N)" });
    let mut tables = Tables::default();
    tables.add("chirp", &rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

fn degenerate(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    let moduli = cfg.moduli.clone().unwrap_or_else(|| vec![101]);
    cfg.require_odd_primes(&moduli)?;
    let mut report = RunReport::new("singlescale-degenerate", cfg.seed.unwrap_or(0), (3, 2, 2));
    let mut rows = Vec::new();
    for &nm in &moduli {
        rows.push(degenerate_example(nm).map_err(|e| config_error("moduli", e.to_string()))?);
    }
    clock.lap("degenerate");
    let form_err = rows.iter().map(|r| ((r.form_re.powi(2) + r.form_im.powi(2)).sqrt() - 1.0).abs()).fold(0.0, f64::max);
    report.check(
        "form-is-one",
        Some(7),
        form_err <= DEGENERATE_FORM_TOLERANCE,
        Some(DEGENERATE_FORM_TOLERANCE - form_err),
        format!("|form| = 1 within {form_err:.2e}"),
    );
    let excess = rows
        .iter()
        .flat_map(|r| r.max_coefficients.iter().map(move |m| m - (r.n_mod as f64).powf(-0.5)))
        .fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "small-coefficients",
        Some(7),
        excess <= COEFFICIENT_TOLERANCE,
        Some(COEFFICIENT_TOLERANCE - excess),
        format!("‖F̂_i‖_∞ ≤ N^(-1/2) + 1e-10 (largest excess {excess:.2e})"),
    );
    // Contrast: a generic (3,2,2) form under the same test.
    let cmod = [5usize, 7, 11];
    let spec = FormSpec::generic(3, 2, 2, cfg.form_seed.unwrap_or(0), &cmod).map_err(|e| config_error("form_seed", e.to_string()))?;
    let generic = true_complexity_experiment(&spec, &cmod, 20, cfg.seed.unwrap_or(0));
    clock.lap("contrast");
    let degenerate_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let drift = (generic.worst_constant / GENERIC_CONTRAST_C - 1.0).abs();
    report.check(
        "generic-contrast",
        Some(7),
        drift <= TRUE_COMPLEXITY_TOLERANCE && generic.worst_constant < degenerate_ratio,
        Some(TRUE_COMPLEXITY_TOLERANCE - drift),
        format!(
            "generic (3,2,2) worst C = {:.6} (frozen {GENERIC_CONTRAST_C}, ±10%) against the degenerate ratio {degenerate_ratio:.4}",
            generic.worst_constant
        ),
    );
    report.summary = json!({
        "moduli": moduli,
        "exponent": true_complexity_exponent(&FormSpec::degenerate_planar()),
        "form_abs": rows.iter().map(|r| r.form_re.hypot(r.form_im)).collect::<Vec<_>>(),
        "max_coefficients": rows.iter().map(|r| r.max_coefficients.clone()).collect::<Vec<_>>(),
        "degenerate_ratio": degenerate_ratio,
        "generic_worst_constant": generic.worst_constant,
    });
    let mut tables = Tables::default();
    tables.add("degenerate", &rows.iter().map(|r| (r.n_mod, r.form_re, r.form_im, r.ratio)).collect::<Vec<_>>()).map_err(csv_err)?;
    tables.add("generic_contrast", &generic.rows).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}

fn pipeline(cfg: &ExperimentConfig) -> Result<Outcome, ConfigError> {
    let mut clock = Clock::new();
    require_params(cfg, (4, 2, 3), "pipeline")?;
    let p = cfg.exponents.clone().unwrap_or_else(|| vec![4.0; 4]);
    crate::config::check_exponents(&p, Some(4))?;
    let seed = cfg.seed.unwrap_or(0);
    let spec = synthetic_spec(cfg, SyntheticSpec { scales: 2, anchors: 12, cubes_per_tuple: 6, ..SyntheticSpec::default() }, seed);
    let sys = system(&spec)?;
    let grid = pipeline_grid(&sys, spec.width as f64, cfg.resolution).map_err(|e| config_error("resolution", e.to_string()))?;
    let bump = MotherBump::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields = (0..4)
        .map(|i| random_packet_field(&sys, i, &grid, &bump, p[i], &mut rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_error("resolution", e.to_string()))?;
    clock.lap("fields");
    let r = pipeline_experiment(&sys, &fields, &p, &bump, cfg.cap.unwrap_or(H_TUPLE_CAP)).map_err(|e| config_error("resolution", e.to_string()))?;
    clock.lap("pipeline");
    let mut report = RunReport::new("pipeline", seed, (4, 2, 3));
    let norm_err = r.lp_norms.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    report.check("normalized", None, norm_err <= 1e-9, Some(1e-9 - norm_err), format!("‖F_i‖_p = 1 within {norm_err:.2e}"));
    report.check(
        "counting",
        None,
        r.counting.pass(),
        None,
        format!("{} counting checks over {} level-vector groups, max count {}", r.counting.checks, r.groups.len(), r.counting.max_count),
    );
    report.check(
        "tree-estimates",
        None,
        r.tree_estimate_failures == 0,
        Some(1.0 - r.worst_tree_ratio),
        format!("{} retained vector trees obey the single-tree estimate; worst lhs/rhs {:.4}", r.tree_estimates, r.worst_tree_ratio),
    );
    let integral_err = (r.lambda_integral - r.lambda_model).abs() / r.lambda_model.max(1e-300);
    report.check(
        "lambda-integral",
        None,
        integral_err <= 1e-9,
        Some(1e-9 - integral_err),
        format!("∫Λ = {:.6e} equals the model form over retained multi-tiles", r.lambda_integral),
    );
    report.check(
        "level-set-logged",
        None,
        r.level_constant.is_finite(),
        None,
        format!("|{{Λ ≥ 1}}| = {:.6e} against |E| = {:.6e}; C = {:.6e}", r.lambda_level_measure, r.exceptional_measure, r.level_constant),
    );
    report.summary = serde_json::to_value(&r).expect("serializable");
    let mut tables = Tables::default();
    tables.add("levels", &r.levels).map_err(csv_err)?;
    tables.add("groups", &r.groups).map_err(csv_err)?;
    Ok(Outcome { report, tables, phases: clock.phases })
}
