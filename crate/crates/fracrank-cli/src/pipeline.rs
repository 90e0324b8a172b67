use std::collections::{BTreeMap, BTreeSet};

use fracrank::singlescale::fft_nd;
use fracrank::tiles::{MultiTile, Tile, TileSystem};
use fracrank::trees::{level_norms, size_decomposition, IndexData, LevelNorms, Tree};
use fracrank::vectree::{vector_tree_estimate, CountingReport, Reshuffle, VectreeError};
use fracrank::wavepackets::{
    coefficient_table, maximal_m2, model_form_value, packet_tile, synthesize_packet, CoefficientTable, GridSpec, MotherBump,
    SampledField, WaveError,
};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

#[derive(Debug)]
pub enum PipelineError {
    Resolution(String),
    Wave(WaveError),
    Vectree(VectreeError),
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Resolution(s) => write!(f, "resolution insufficient: {s}"),
            PipelineError::Wave(e) => write!(f, "{e}"),
            PipelineError::Vectree(e) => write!(f, "{e}"),
        }
    }
}

impl From<WaveError> for PipelineError {
    fn from(e: WaveError) -> Self {
        PipelineError::Wave(e)
    }
}

impl From<VectreeError> for PipelineError {
    fn from(e: VectreeError) -> Self {
        PipelineError::Vectree(e)
    }
}

/// Largest lattice the pipeline will sample on.
pub const MAX_LATTICE_POINTS: usize = 1 << 22;

/// The lattice for a system, at a requested number of points per axis if given.
pub fn pipeline_grid(sys: &TileSystem, width: f64, resolution: Option<usize>) -> Result<GridSpec, PipelineError> {
    let auto = GridSpec::for_system(sys, width);
    let points = resolution.unwrap_or(auto.n).checked_pow(auto.d as u32).unwrap_or(usize::MAX);
    if points > MAX_LATTICE_POINTS {
        return Err(PipelineError::Resolution(format!("{points} lattice points exceed the limit {MAX_LATTICE_POINTS}")));
    }
    match resolution {
        None => Ok(auto),
        Some(n) if n >= auto.n => Ok(GridSpec { n, ..auto }),
        Some(n) => Err(PipelineError::Resolution(format!("{n} points per axis, the tiles need at least {}", auto.n))),
    }
}

/// Σ_t a_t φ_t over the tiles of one index, random complex a_t, normalized in L^p.
pub fn random_packet_field(
    sys: &TileSystem,
    index: usize,
    grid: &GridSpec,
    bump: &MotherBump,
    p: f64,
    rng: &mut impl Rng,
) -> Result<SampledField, PipelineError> {
    let mut data = vec![Complex64::default(); grid.len()];
    for t in sys.tiles_of(index) {
        let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for (j, v) in synthesize_packet(&packet_tile(sys, &t), grid, bump)?.support {
            data[j] += a * v;
        }
    }
    fft_nd(&mut data, grid.n, grid.d, false);
    let f = SampledField { grid: grid.clone(), values: data };
    let norm = f.lp_norm(p);
    if norm == 0.0 {
        return Ok(f);
    }
    Ok(f.scaled(Complex64::new(1.0 / norm, 0.0)))
}

/// Flat lattice indices of the points of R_s.
fn cube_points(sys: &TileSystem, mt: &MultiTile, grid: &GridSpec) -> Result<Vec<usize>, PipelineError> {
    let pt = packet_tile(sys, &sys.tile(mt, 0));
    let mut ranges = Vec::with_capacity(grid.d);
    for a in 0..grid.d {
        let lo = ((pt.corner[a] - grid.origin[a]) / grid.h).round() as i64;
        let hi = ((pt.corner[a] + pt.side - grid.origin[a]) / grid.h).round() as i64;
        if lo < 0 || hi > grid.n as i64 {
            return Err(PipelineError::Resolution(format!("cube at {:?} leaves the lattice of length {}", pt.corner, grid.length())));
        }
        ranges.push((lo as usize, hi as usize));
    }
    let mut out = vec![0usize];
    for &(lo, hi) in &ranges {
        out = out.iter().flat_map(|&j| (lo..hi).map(move |x| j * grid.n + x)).collect();
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelRow {
    pub index: usize,
    pub p: f64,
    pub k: i32,
    pub size: f64,
    pub trees: usize,
    pub q: f64,
    pub lq: f64,
    pub bmo: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl LevelRow {
    fn new(index: usize, p: f64, n: LevelNorms) -> LevelRow {
        LevelRow { index, p, k: n.k, size: n.size, trees: n.trees, q: n.q, lq: n.lq, bmo: n.bmo, rhs: n.rhs, ratio: n.ratio }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupRow {
    pub levels: String,
    pub multi_tiles: usize,
    pub stage1_families: usize,
    pub stage2_families: usize,
    pub retained: usize,
    pub discarded: usize,
    pub counting_checks: usize,
    pub max_count: u64,
    pub counting_pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineResult {
    pub lattice_points: usize,
    pub h: f64,
    pub lp_norms: Vec<f64>,
    pub exceptional_measure: f64,
    pub tiles_total: usize,
    pub tiles_outside: usize,
    pub null_tiles: usize,
    pub retained: usize,
    pub discarded: usize,
    pub lambda_integral: f64,
    pub lambda_model: f64,
    pub lambda_max: f64,
    pub lambda_level_measure: f64,
    /// |{Λ ≥ 1}| / max(|E|, 1).
    pub level_constant: f64,
    pub tree_estimates: usize,
    pub tree_estimate_failures: usize,
    pub worst_tree_ratio: f64,
    #[serde(skip)]
    pub counting: CountingReport,
    #[serde(skip)]
    pub levels: Vec<LevelRow>,
    #[serde(skip)]
    pub groups: Vec<GroupRow>,
    #[serde(skip)]
    pub lambda: Vec<f64>,
}

/// Exceptional set, restriction to E^c, per-index size decompositions, both reshuffling
/// stages per level vector, the 2^{l_i} ≤ 2^{4k_i} cut, and Λ on the lattice.
pub fn pipeline_experiment(
    sys: &TileSystem,
    fields: &[SampledField],
    p: &[f64],
    bump: &MotherBump,
    cap: u64,
) -> Result<PipelineResult, PipelineError> {
    let grid = fields[0].grid.clone();
    let cell = grid.h.powi(grid.d as i32);
    let lp_norms: Vec<f64> = fields.iter().zip(p).map(|(f, &pi)| f.lp_norm(pi)).collect();
    let m2: Vec<_> = fields.iter().map(maximal_m2).collect();
    let exceptional: Vec<bool> = (0..grid.len()).map(|j| m2.iter().any(|m| m.values[j] >= 1.0)).collect();
    let exceptional_measure = exceptional.iter().filter(|&&e| e).count() as f64 * cell;

    let mut points: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut outside = Vec::new();
    for (id, mt) in sys.tiles.iter().enumerate() {
        let pts = cube_points(sys, mt, &grid)?;
        if pts.iter().any(|&j| !exceptional[j]) {
            outside.push(mt.clone());
        }
        points.insert(id, pts);
    }
    let id_of: BTreeMap<&MultiTile, usize> = sys.tiles.iter().enumerate().map(|(i, m)| (m, i)).collect();

    let spectra: Vec<_> = fields.iter().map(|f| f.spectrum()).collect();
    let table = coefficient_table(sys, &spectra, bump)?;
    let energy: Vec<BTreeMap<Tile, f64>> =
        (0..sys.n).map(|i| table.per_index[i].iter().map(|(t, c)| (t.clone(), c * c)).collect()).collect();

    // Per-index decompositions of the tiles still in play.
    let mut level_of: Vec<BTreeMap<Tile, i32>> = Vec::new();
    let mut forests: Vec<BTreeMap<i32, Vec<Tree>>> = Vec::new();
    let mut levels = Vec::new();
    let mut null_tiles = 0;
    for i in 0..sys.n {
        let tiles: Vec<Tile> = outside.iter().map(|mt| sys.tile(mt, i)).collect::<BTreeSet<_>>().into_iter().collect();
        let ctx = IndexData::from_table(sys, i, &table);
        let dec = size_decomposition(&ctx, &tiles);
        null_tiles += dec.null_tiles.len();
        let mut lv = BTreeMap::new();
        let mut fs = BTreeMap::new();
        for l in &dec.levels {
            for t in l.tiles() {
                lv.insert(t, l.k);
            }
            fs.insert(l.k, l.trees.clone());
        }
        let q = p[i] / 2.0;
        levels.extend(level_norms(&dec, &m2[i], lp_norms[i], p[i], q).into_iter().map(|norms| LevelRow::new(i, p[i], norms)));
        level_of.push(lv);
        forests.push(fs);
    }

    // S(k⃗): multi-tiles grouped by the level of each of their tiles.
    let mut groups: BTreeMap<Vec<i32>, Vec<MultiTile>> = BTreeMap::new();
    for mt in &outside {
        let ks: Option<Vec<i32>> = (0..sys.n).map(|i| level_of[i].get(&sys.tile(mt, i)).copied()).collect();
        if let Some(ks) = ks {
            groups.entry(ks).or_default().push(mt.clone());
        }
    }

    let mut counting = CountingReport::default();
    let mut retained: Vec<usize> = Vec::new();
    let mut discarded = 0;
    let mut group_rows = Vec::new();
    let (mut tree_estimates, mut tree_estimate_failures, mut worst_tree_ratio) = (0, 0, 0.0f64);
    let keep = |l: &[u32], ks: &[i32]| l.iter().zip(ks).all(|(&l, &k)| (l as i64) <= 4 * k as i64);
    for (ks, members) in &groups {
        let fs: Vec<Vec<Tree>> = (0..sys.n).map(|i| forests[i].get(&ks[i]).cloned().unwrap_or_default()).collect();
        let run = Reshuffle::run(sys, members, &fs, &energy);
        let rep = run.verify(sys, &fs, cap)?;
        let mut row = GroupRow {
            levels: format!("{ks:?}"),
            multi_tiles: members.len(),
            stage1_families: run.stage1.proper().len(),
            stage2_families: run.stage2.families.len(),
            retained: 0,
            discarded: 0,
            counting_checks: rep.checks,
            max_count: rep.max_count,
            counting_pass: rep.pass(),
        };
        for (l, trees) in run.stage1.proper() {
            for vt in trees {
                if keep(&l, ks) {
                    let est = vector_tree_estimate(sys, vt, &table);
                    tree_estimates += 1;
                    tree_estimate_failures += usize::from(!est.pass);
                    if est.rhs > 0.0 {
                        worst_tree_ratio = worst_tree_ratio.max(est.lhs / est.rhs);
                    }
                    row.retained += vt.tiles.len();
                    retained.extend(vt.tiles.iter().map(|m| id_of[m]));
                } else {
                    row.discarded += vt.tiles.len();
                }
            }
        }
        for ((l, _, _), fam) in &run.stage2.families {
            if keep(l, ks) {
                row.retained += fam.len();
                retained.extend(fam.iter().map(|m| id_of[m]));
            } else {
                row.discarded += fam.len();
            }
        }
        discarded += row.discarded;
        counting.merge(rep);
        group_rows.push(row);
    }
    retained.sort_unstable();
    retained.dedup();

    let lambda = accumulate_lambda(sys, &retained, &table, &points, grid.len());
    let lambda_integral = lambda.iter().sum::<f64>() * cell;
    let lambda_model = model_form_value(sys, &retained, &table);
    let lambda_level_measure = lambda.iter().filter(|&&v| v >= 1.0).count() as f64 * cell;
    Ok(PipelineResult {
        lattice_points: grid.len(),
        h: grid.h,
        lp_norms,
        exceptional_measure,
        tiles_total: sys.tiles.len(),
        tiles_outside: outside.len(),
        null_tiles,
        retained: retained.len(),
        discarded,
        lambda_integral,
        lambda_model,
        lambda_max: lambda.iter().copied().fold(0.0, f64::max),
        lambda_level_measure,
        level_constant: lambda_level_measure / exceptional_measure.max(1.0),
        tree_estimates,
        tree_estimate_failures,
        worst_tree_ratio,
        counting,
        levels,
        groups: group_rows,
        lambda,
    })
}

/// Λ(x) = Σ_s |R_s|^{−n/2} Π_i |⟨F_i, φ_{s_i}⟩| 1_{R_s}(x).
fn accumulate_lambda(
    sys: &TileSystem,
    ids: &[usize],
    table: &CoefficientTable,
    points: &BTreeMap<usize, Vec<usize>>,
    len: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &id in ids {
        let mt = &sys.tiles[id];
        let side = packet_tile(sys, &sys.tile(mt, 0)).side;
        let w = side.powi(sys.d as i32).powf(-(sys.n as f64) / 2.0) * (0..sys.n).map(|i| table.get(&sys.tile(mt, i))).product::<f64>();
        for &j in &points[&id] {
            out[j] += w;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fracrank::subspace::random_generic;
    use fracrank::tiles::{generate_synthetic, synthetic_constants, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_system() -> TileSystem {
        let basis = random_generic(4, 2, 3, 11);
        let spec = SyntheticSpec { scales: 2, anchors: 3, seed: 1, ..SyntheticSpec::default() };
        generate_synthetic(&spec, &basis, &synthetic_constants()).unwrap()
    }

    #[test]
    fn fields_everywhere_exceptional_exclude_all_tiles() {
        let sys = small_system();
        let grid = pipeline_grid(&sys, 2.0, None).unwrap();
        let ones: Vec<SampledField> =
            (0..4).map(|_| SampledField::from_fn(grid.clone(), |_| Complex64::new(1.0, 0.0))).collect();
        let r = pipeline_experiment(&sys, &ones, &[4.0; 4], &MotherBump::default(), 10_000).unwrap();
        assert_eq!(r.exceptional_measure, grid.length().powi(2));
        assert_eq!((r.tiles_outside, r.retained), (0, 0));
        assert!(r.lambda.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lambda_integrates_to_the_model_form_and_trees_obey_the_estimate() {
        let sys = small_system();
        let grid = pipeline_grid(&sys, 2.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bump = MotherBump::default();
        let fields: Vec<SampledField> =
            (0..4).map(|i| random_packet_field(&sys, i, &grid, &bump, 4.0, &mut rng).unwrap()).collect();
        for f in &fields {
            assert!((f.lp_norm(4.0) - 1.0).abs() < 1e-9);
        }
        let r = pipeline_experiment(&sys, &fields, &[4.0; 4], &bump, 10_000).unwrap();
        assert!(r.counting.pass(), "{:?}", r.counting.first_failure);
        assert!(r.retained > 0);
        assert!((r.lambda_integral - r.lambda_model).abs() <= 1e-9 * r.lambda_model.max(1e-300));
        assert_eq!(r.tree_estimate_failures, 0);
        assert!(!r.levels.is_empty());
    }

    #[test]
    fn single_vector_tree_density_matches_its_estimate() {
        let basis = random_generic(4, 2, 3, 11);
        let mut found = 0;
        for seed in 0..6 {
            let spec = SyntheticSpec { anchors: 12, width: 1, cubes_per_tuple: 8, seed, ..SyntheticSpec::default() };
            let sys = generate_synthetic(&spec, &basis, &synthetic_constants()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = CoefficientTable {
                per_index: (0..sys.n).map(|i| sys.tiles_of(i).into_iter().map(|t| (t, rng.gen_range(0.0..1.0))).collect()).collect(),
            };
            let energy: Vec<BTreeMap<Tile, f64>> =
                table.per_index.iter().map(|m| m.iter().map(|(t, c)| (t.clone(), c * c)).collect()).collect();
            let forests: Vec<Vec<Tree>> = (0..sys.n)
                .map(|i| {
                    let ctx = IndexData::from_table(&sys, i, &table);
                    size_decomposition(&ctx, &sys.tiles_of(i)).levels.into_iter().flat_map(|l| l.trees).collect()
                })
                .collect();
            let run = Reshuffle::run(&sys, &sys.tiles, &forests, &energy);
            // Cell-exact quadrature only needs h to divide every side.
            let fine = GridSpec::for_system(&sys, 1.0);
            let h = fine.h * 8.0;
            let grid = GridSpec::new(2, (1.0 / h).round() as usize, h, vec![0.0, 0.0]).unwrap();
            let cell = grid.h.powi(2);
            let id_of: BTreeMap<&MultiTile, usize> = sys.tiles.iter().enumerate().map(|(i, m)| (m, i)).collect();
            for vt in run.stage1.proper().values().flatten() {
                let ids: Vec<usize> = vt.tiles.iter().map(|m| id_of[m]).collect();
                let points: BTreeMap<usize, Vec<usize>> = ids.iter().map(|&i| (i, cube_points(&sys, &sys.tiles[i], &grid).unwrap())).collect();
                let lambda = accumulate_lambda(&sys, &ids, &table, &points, grid.len());
                let est = vector_tree_estimate(&sys, vt, &table);
                let integral = lambda.iter().sum::<f64>() * cell;
                assert!((integral - est.lhs).abs() <= 1e-9 * est.lhs.max(1e-300), "{integral} vs {}", est.lhs);
                assert!(est.pass && integral <= est.rhs * (1.0 + 1e-12));
                found += 1;
            }
        }
        assert!(found > 0, "no proper vector tree among the dense systems");
    }

    #[test]
    fn too_coarse_resolution_is_rejected() {
        let sys = small_system();
        let auto = pipeline_grid(&sys, 2.0, None).unwrap();
        assert!(matches!(pipeline_grid(&sys, 2.0, Some(auto.n / 2)), Err(PipelineError::Resolution(_))));
        assert_eq!(pipeline_grid(&sys, 2.0, Some(auto.n * 2)).unwrap().n, auto.n * 2);
    }
}
