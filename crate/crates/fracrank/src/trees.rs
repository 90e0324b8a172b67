//! Trees of tiles of one index, the lacunary size, the size-halving selection with its
//! (±,l) stages and saturation trees, the size decomposition, and counting functions.
//!
//! Energies |⟨F_i, φ_s⟩|² are supplied per tile. Tree tops ξ_T are points of the rank
//! lattice of the index: rank r stands for every ξ in [axes[r], axes[r+1]), which is
//! exactly the information any membership test can see.
//!
//! A lacunary tree is a (+,l) tree when (ξ_T)_l ≥ hi_l(ω_s) for all its tiles and a
//! (−,l) tree when (ξ_T)_l < lo_l(ω_s). Since ξ_T lies outside the box ω_s, every
//! lacunary tree splits into at most 2d ≤ 2^d such subtrees with the same top.

use crate::grids::{q_to_f64, DyadicCube, Q};
use crate::tiles::{RankBox, Ranks, Tile, TileSystem};
use crate::wavepackets::{CoefficientTable, RealField};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Energies of the tiles of one index together with its rank tables.
#[derive(Clone, Debug)]
pub struct IndexData<'a> {
    pub index: usize,
    pub d: usize,
    pub ranks: &'a Ranks,
    pub energy: BTreeMap<Tile, f64>,
}

impl<'a> IndexData<'a> {
    pub fn new(sys: &'a TileSystem, index: usize, energy: BTreeMap<Tile, f64>) -> IndexData<'a> {
        IndexData { index, d: sys.d, ranks: &sys.ranks[index], energy }
    }

    /// Energies |⟨F_i, φ⟩|² from a coefficient table.
    pub fn from_table(sys: &'a TileSystem, index: usize, table: &CoefficientTable) -> IndexData<'a> {
        let energy = table.per_index[index].iter().map(|(t, c)| (t.clone(), c * c)).collect();
        IndexData::new(sys, index, energy)
    }

    pub fn e(&self, t: &Tile) -> f64 {
        self.energy.get(t).copied().unwrap_or(0.0)
    }

    fn omega(&self, t: &Tile) -> &RankBox {
        &self.ranks.omega[t.comp]
    }

    fn tilde(&self, t: &Tile) -> &RankBox {
        &self.ranks.tilde[t.comp]
    }

    pub fn xi_value(&self, xi: &[u32]) -> Vec<Q> {
        xi.iter().enumerate().map(|(a, &r)| self.ranks.axes[a][r as usize]).collect()
    }
}

/// |R| as a volume.
pub fn volume(r: &DyadicCube) -> f64 {
    q_to_f64(&r.side()).powi(r.index.len() as i32)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Top {
    pub r: DyadicCube,
    pub xi: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeKind {
    Lacunary,
    Overlapping,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub index: usize,
    pub top: Top,
    pub tiles: Vec<Tile>,
}

fn in_box(b: &RankBox, p: &[u32]) -> bool {
    b.contains_point(p)
}

impl Tree {
    /// R_s ⊆ R_T and ξ_T ∈ ω̃_s for every tile.
    pub fn is_valid(&self, ctx: &IndexData) -> bool {
        self.tiles.iter().all(|t| t.index == self.index && self.top.r.contains(&t.r) && in_box(ctx.tilde(t), &self.top.xi))
    }

    /// A tree with at most one tile counts as both lacunary and overlapping.
    pub fn is_lacunary(&self, ctx: &IndexData) -> bool {
        self.tiles.len() <= 1 || self.tiles.iter().all(|t| !in_box(ctx.omega(t), &self.top.xi))
    }

    pub fn is_overlapping(&self, ctx: &IndexData) -> bool {
        self.tiles.len() <= 1 || self.tiles.iter().all(|t| in_box(ctx.omega(t), &self.top.xi))
    }

    pub fn kind(&self, ctx: &IndexData) -> TreeKind {
        let inside = self.tiles.iter().filter(|t| in_box(ctx.omega(t), &self.top.xi)).count();
        if inside == 0 {
            TreeKind::Lacunary
        } else if inside == self.tiles.len() {
            TreeKind::Overlapping
        } else {
            TreeKind::Mixed
        }
    }

    pub fn energy(&self, ctx: &IndexData) -> f64 {
        self.tiles.iter().map(|t| ctx.e(t)).sum()
    }

    /// |R_T|^{−1} Σ |⟨F, φ_s⟩|².
    pub fn density(&self, ctx: &IndexData) -> f64 {
        self.energy(ctx) / volume(&self.top.r)
    }
}

/// Partition by the test ξ_T ∈ ω_s; both parts keep the top.
pub fn split_overlapping_lacunary(t: &Tree, ctx: &IndexData) -> (Tree, Tree) {
    let (ov, lac): (Vec<Tile>, Vec<Tile>) = t.tiles.iter().cloned().partition(|s| in_box(ctx.omega(s), &t.top.xi));
    (Tree { index: t.index, top: t.top.clone(), tiles: ov }, Tree { index: t.index, top: t.top.clone(), tiles: lac })
}

/// Weighted region A \ B in rank coordinates (B absent for plain boxes).
#[derive(Clone, Debug)]
struct Region {
    a: RankBox,
    b: Option<RankBox>,
    w: f64,
}

/// Greatest total weight at one point, and the first point attaining it.
fn max_point(regions: &[Region], d: usize) -> (f64, Vec<u32>) {
    fn rec(regions: &[Region], d: usize, axis: usize, alive: &[(usize, bool)], point: &mut Vec<u32>, best: &mut (f64, Vec<u32>)) {
        let bound: f64 = alive.iter().map(|&(i, _)| regions[i].w).sum();
        if bound <= best.0 {
            return;
        }
        let mut cands: Vec<u32> = Vec::new();
        for &(i, out) in alive {
            let r = &regions[i];
            cands.extend([r.a.lo[axis], r.a.hi[axis]]);
            if let (Some(b), false) = (&r.b, out) {
                cands.extend([b.lo[axis], b.hi[axis]]);
            }
        }
        cands.sort_unstable();
        cands.dedup();
        for &c in &cands {
            let next: Vec<(usize, bool)> = alive
                .iter()
                .filter(|&&(i, _)| regions[i].a.lo[axis] <= c && c < regions[i].a.hi[axis])
                .map(|&(i, out)| {
                    let outside = out || regions[i].b.as_ref().is_none_or(|b| !(b.lo[axis] <= c && c < b.hi[axis]));
                    (i, outside)
                })
                .collect();
            point.push(c);
            if axis + 1 == d {
                let v: f64 = next.iter().filter(|&&(i, out)| out || regions[i].b.is_none()).map(|&(i, _)| regions[i].w).sum();
                if v > best.0 {
                    *best = (v, point.clone());
                }
            } else {
                rec(regions, d, axis + 1, &next, point, best);
            }
            point.pop();
        }
    }
    let alive: Vec<(usize, bool)> = (0..regions.len()).map(|i| (i, false)).collect();
    let mut best = (0.0, vec![0; d]);
    rec(regions, d, 0, &alive, &mut Vec::new(), &mut best);
    best
}

/// First point, in lexicographic order over the axes `order` (the first axis scanned
/// descending when `desc`), whose total weight over plain boxes reaches `thr`.
fn first_point(regions: &[Region], order: &[usize], desc: bool, thr: f64) -> Option<(Vec<u32>, f64)> {
    fn rec(regions: &[Region], order: &[usize], desc: bool, thr: f64, pos: usize, alive: &[usize], point: &mut Vec<u32>) -> Option<(Vec<u32>, f64)> {
        let bound: f64 = alive.iter().map(|&i| regions[i].w).sum();
        if bound < thr || alive.is_empty() {
            return None;
        }
        let axis = order[pos];
        let mut cands: Vec<u32> = if desc && pos == 0 {
            // Right ends of the pieces, so the largest coordinate of each piece comes first.
            alive.iter().flat_map(|&i| [regions[i].a.lo[axis], regions[i].a.hi[axis]]).filter(|&c| c > 0).map(|c| c - 1).collect()
        } else {
            alive.iter().flat_map(|&i| [regions[i].a.lo[axis], regions[i].a.hi[axis]]).collect()
        };
        cands.sort_unstable();
        cands.dedup();
        if desc && pos == 0 {
            cands.reverse();
        }
        for &c in &cands {
            let next: Vec<usize> = alive.iter().copied().filter(|&i| regions[i].a.lo[axis] <= c && c < regions[i].a.hi[axis]).collect();
            point[axis] = c;
            if pos + 1 == order.len() {
                let v: f64 = next.iter().map(|&i| regions[i].w).sum();
                if !next.is_empty() && v >= thr {
                    return Some((point.clone(), v));
                }
            } else if let Some(hit) = rec(regions, order, desc, thr, pos + 1, &next, point) {
                return Some(hit);
            }
        }
        None
    }
    let alive: Vec<usize> = (0..regions.len()).collect();
    let mut point = vec![0; order.len()];
    rec(regions, order, desc, thr, 0, &alive, &mut point)
}

/// Dyadic cubes that can serve as tree tops for `cubes`: the cubes themselves and every
/// ancestor where two branches meet, each with the ids of the cubes it contains.
pub fn candidate_top_cubes(cubes: &[DyadicCube]) -> Vec<(DyadicCube, Vec<usize>)> {
    if cubes.is_empty() {
        return Vec::new();
    }
    let lo = cubes.iter().map(|c| c.level).min().expect("nonempty");
    let hi = cubes.iter().map(|c| c.level).max().expect("nonempty");
    let own: BTreeSet<&DyadicCube> = cubes.iter().collect();
    let mut out = Vec::new();
    let mut current: BTreeMap<DyadicCube, Vec<usize>> = BTreeMap::new();
    let mut level = lo;
    loop {
        let mut next: BTreeMap<DyadicCube, (Vec<usize>, usize)> = BTreeMap::new();
        for (c, ids) in &current {
            let e = next.entry(c.parent()).or_default();
            e.0.extend(ids);
            e.1 += 1;
        }
        for (i, c) in cubes.iter().enumerate() {
            if c.level == level {
                next.entry(c.clone()).or_default().0.push(i);
            }
        }
        current = BTreeMap::new();
        for (c, (mut ids, branches)) in next {
            ids.sort_unstable();
            ids.dedup();
            if own.contains(&c) || branches >= 2 {
                out.push((c.clone(), ids.clone()));
            }
            current.insert(c, ids);
        }
        if (level >= hi && current.len() == 1) || level > hi + 62 {
            break;
        }
        level += 1;
    }
    out
}

fn lacunary_region(ctx: &IndexData, t: &Tile) -> Region {
    Region { a: ctx.tilde(t).clone(), b: Some(ctx.omega(t).clone()), w: ctx.e(t) }
}

/// The (sign, l) region of a tile: ω̃ cut by (ξ)_l ≥ hi_l(ω) or (ξ)_l < lo_l(ω).
fn signed_region(ctx: &IndexData, t: &Tile, plus: bool, l: usize) -> Option<Region> {
    let mut a = ctx.tilde(t).clone();
    let w = ctx.omega(t);
    if plus {
        a.lo[l] = a.lo[l].max(w.hi[l]);
    } else {
        a.hi[l] = a.hi[l].min(w.lo[l]);
    }
    (a.lo[l] < a.hi[l]).then(|| Region { a, b: None, w: ctx.e(t) })
}

fn signed_member(ctx: &IndexData, t: &Tile, top: &Top, plus: bool, l: usize) -> bool {
    if !top.r.contains(&t.r) || !in_box(ctx.tilde(t), &top.xi) {
        return false;
    }
    let w = ctx.omega(t);
    if plus {
        top.xi[l] >= w.hi[l]
    } else {
        top.xi[l] < w.lo[l]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub size: f64,
    /// A top attaining the supremum (absent when the size is 0).
    pub top: Option<Top>,
}

/// size_i(P): the largest (|R_T|^{−1} Σ_{s∈T} |⟨F,φ_s⟩|²)^{1/2} over lacunary trees T ⊆ P.
pub fn size(ctx: &IndexData, p: &[Tile]) -> SizeResult {
    let cubes: Vec<DyadicCube> = p.iter().map(|t| t.r.clone()).collect();
    let mut cands: Vec<(f64, DyadicCube, Vec<usize>)> = candidate_top_cubes(&cubes)
        .into_iter()
        .map(|(c, ids)| (ids.iter().map(|&i| ctx.e(&p[i])).sum::<f64>() / volume(&c), c, ids))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut best = 0.0f64;
    let mut top = None;
    for (bound, c, ids) in cands {
        if bound <= best {
            break;
        }
        let regions: Vec<Region> = ids.iter().map(|&i| lacunary_region(ctx, &p[i])).collect();
        let (v, xi) = max_point(&regions, ctx.d);
        let dens = v / volume(&c);
        if dens > best {
            best = dens;
            top = Some(Top { r: c, xi });
        }
    }
    SizeResult { size: best.sqrt(), top }
}

/// Lacunary trees T ⊆ P by brute force over subsets, using exact boxes; for checking `size`.
pub fn size_by_subsets(sys: &TileSystem, energy: &BTreeMap<Tile, f64>, p: &[Tile]) -> f64 {
    assert!(p.len() <= 16, "subset oracle is exponential");
    let mut best = 0.0f64;
    for mask in 1u32..(1 << p.len()) {
        let sub: Vec<&Tile> = (0..p.len()).filter(|&j| mask >> j & 1 == 1).map(|j| &p[j]).collect();
        // Smallest dyadic cube holding every R_s.
        let mut r = sub[0].r.clone();
        let mut ok = true;
        while !sub.iter().all(|t| r.contains(&t.r)) {
            r = r.parent();
            if r.level > 80 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let comps: Vec<_> = sub.iter().map(|t| sys.component(t)).collect();
        let d = sys.d;
        let lo: Vec<Q> = (0..d).map(|a| comps.iter().map(|c| c.tilde.lo[a]).max().expect("nonempty")).collect();
        let hi: Vec<Q> = (0..d).map(|a| comps.iter().map(|c| c.tilde.hi[a]).min().expect("nonempty")).collect();
        if (0..d).any(|a| lo[a] >= hi[a]) {
            continue;
        }
        // Pieces of the intersection start at its lower corner or at an upper face of some ω.
        let axis_points: Vec<Vec<Q>> = (0..d)
            .map(|a| {
                let mut v: Vec<Q> = vec![lo[a]];
                v.extend(comps.iter().flat_map(|c| [c.omega.hi[a], c.omega.lo[a]]).filter(|x| lo[a] <= *x && *x < hi[a]));
                v.sort();
                v.dedup();
                v
            })
            .collect();
        let mut idx = vec![0usize; d];
        let mut found = false;
        'scan: loop {
            let pt: Vec<Q> = (0..d).map(|a| axis_points[a][idx[a]]).collect();
            if comps.iter().all(|c| !c.omega.contains_point(&pt)) {
                found = true;
                break 'scan;
            }
            let mut a = 0;
            loop {
                if a == d {
                    break 'scan;
                }
                idx[a] += 1;
                if idx[a] < axis_points[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
        if found {
            let e: f64 = sub.iter().map(|t| energy.get(*t).copied().unwrap_or(0.0)).sum();
            best = best.max(e / volume(&r));
        }
    }
    best.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// +1 or −1.
    pub sign: i8,
    pub axis: usize,
    /// Selected (±,l) trees.
    pub selected: Vec<Tree>,
    /// Their saturation trees.
    pub saturated: Vec<Tree>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub size_before: f64,
    pub size_after: f64,
    pub threshold: f64,
    pub stages: Vec<Stage>,
    pub remainder: Vec<Tile>,
}

impl Selection {
    pub fn forest(&self) -> Vec<Tree> {
        self.stages.iter().flat_map(|s| s.selected.iter().chain(&s.saturated).cloned()).collect()
    }

    pub fn halved(&self) -> bool {
        self.size_before == 0.0 || self.size_after < self.size_before / 2.0
    }
}

/// One pass of the size-halving selection. Stage order (+,1), (−,1), …, (+,d), (−,d);
/// within a stage the qualifying (±,l) tree with extremal (ξ_T)_l is taken, ties going
/// to the smaller top.
pub fn size_halving_selection(ctx: &IndexData, p: &[Tile]) -> Selection {
    let d = ctx.d;
    let before = size(ctx, p).size;
    let threshold = before * before / (4.0 * (1u64 << d) as f64);
    let mut remaining: BTreeSet<Tile> = p.iter().cloned().collect();
    let mut stages = Vec::new();
    if before == 0.0 {
        return Selection { size_before: 0.0, size_after: 0.0, threshold, stages, remainder: p.to_vec() };
    }
    for l in 0..d {
        for plus in [true, false] {
            let mut stage = Stage { sign: if plus { 1 } else { -1 }, axis: l, selected: Vec::new(), saturated: Vec::new() };
            let order: Vec<usize> = std::iter::once(l).chain((0..d).filter(|&a| a != l)).collect();
            loop {
                let rem: Vec<Tile> = remaining.iter().cloned().collect();
                let cubes: Vec<DyadicCube> = rem.iter().map(|t| t.r.clone()).collect();
                let mut best: Option<(u32, Top)> = None;
                for (c, ids) in candidate_top_cubes(&cubes) {
                    let need = threshold * volume(&c);
                    let regions: Vec<Region> = ids.iter().filter_map(|&i| signed_region(ctx, &rem[i], plus, l)).collect();
                    if let Some((xi, _)) = first_point(&regions, &order, !plus, need) {
                        let key = xi[l];
                        let better = match &best {
                            None => true,
                            Some((bk, bt)) => {
                                let ext = if plus { key < *bk } else { key > *bk };
                                ext || (key == *bk && (&c, &xi) < (&bt.r, &bt.xi))
                            }
                        };
                        if better {
                            best = Some((key, Top { r: c, xi }));
                        }
                    }
                }
                let Some((_, top)) = best else { break };
                let tiles: Vec<Tile> = rem.iter().filter(|t| signed_member(ctx, t, &top, plus, l)).cloned().collect();
                for t in &tiles {
                    remaining.remove(t);
                }
                let sat: Vec<Tile> = remaining
                    .iter()
                    .filter(|t| top.r.contains(&t.r) && in_box(ctx.tilde(t), &top.xi))
                    .cloned()
                    .collect();
                for t in &sat {
                    remaining.remove(t);
                }
                stage.selected.push(Tree { index: ctx.index, top: top.clone(), tiles });
                if !sat.is_empty() {
                    stage.saturated.push(Tree { index: ctx.index, top, tiles: sat });
                }
            }
            stages.push(stage);
        }
    }
    let remainder: Vec<Tile> = remaining.into_iter().collect();
    let after = size(ctx, &remainder).size;
    Selection { size_before: before, size_after: after, threshold, stages, remainder }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisjointnessWitness {
    pub tree: usize,
    pub other: usize,
    pub tile: Tile,
    pub other_tile: Tile,
}

/// For T ≠ T′, s ∈ T, s′ ∈ T′ with ω_s ⊊ ω_{s′}: R_{s′} ∩ R_T = ∅.
pub fn strong_disjointness_check(forest: &[Tree], ctx: &IndexData) -> Result<(), DisjointnessWitness> {
    for (a, t) in forest.iter().enumerate() {
        for (b, u) in forest.iter().enumerate() {
            if a == b {
                continue;
            }
            for s in &t.tiles {
                for sp in &u.tiles {
                    let (w, wp) = (ctx.omega(s), ctx.omega(sp));
                    let strict = wp.contains_box(w) && w != wp;
                    let meets = t.top.r.contains(&sp.r) || sp.r.contains(&t.top.r);
                    if strict && meets {
                        return Err(DisjointnessWitness { tree: a, other: b, tile: s.clone(), other_tile: sp.clone() });
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// 2^{−k} ≤ size at the start of the level.
    pub k: i32,
    pub size: f64,
    pub trees: Vec<Tree>,
}

impl Level {
    pub fn tiles(&self) -> Vec<Tile> {
        self.trees.iter().flat_map(|t| t.tiles.iter().cloned()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub levels: Vec<Level>,
    /// Tiles with zero energy everywhere; no level ever selects them.
    pub null_tiles: Vec<Tile>,
}

pub fn dyadic_level(size: f64) -> i32 {
    // Smallest k with 2^{−k} ≤ size.
    let mut k = (-size.log2()).ceil() as i32;
    while 2f64.powi(-k) > size {
        k += 1;
    }
    while 2f64.powi(-(k - 1)) <= size {
        k -= 1;
    }
    k
}

/// Iterated size halving: level k holds the trees selected while 2^{−k} ≤ size < 2^{−k+1}.
pub fn size_decomposition(ctx: &IndexData, p: &[Tile]) -> Decomposition {
    let mut rest: Vec<Tile> = p.to_vec();
    let mut levels: Vec<Level> = Vec::new();
    loop {
        let s = size(ctx, &rest).size;
        if s == 0.0 || rest.is_empty() {
            break;
        }
        let sel = size_halving_selection(ctx, &rest);
        let k = dyadic_level(s);
        let trees = sel.forest();
        match levels.last_mut() {
            Some(last) if last.k == k => last.trees.extend(trees),
            _ => levels.push(Level { k, size: s, trees }),
        }
        rest = sel.remainder;
    }
    Decomposition { levels, null_tiles: rest }
}

/// Counting function N_F(x) = Σ_T 1_{R_T}(x) for a multiset of tops.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingFunction {
    /// Distinct tops with multiplicity.
    pub tops: BTreeMap<DyadicCube, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingStats {
    pub trees: usize,
    pub max: u64,
    pub total_volume: f64,
    pub lq: Vec<(f64, f64)>,
    pub bmo: f64,
}

impl CountingFunction {
    pub fn from_tops<'a>(tops: impl IntoIterator<Item = &'a DyadicCube>) -> CountingFunction {
        let mut m = BTreeMap::new();
        for t in tops {
            *m.entry(t.clone()).or_insert(0) += 1;
        }
        CountingFunction { tops: m }
    }

    pub fn from_forest(forest: &[Tree]) -> CountingFunction {
        CountingFunction::from_tops(forest.iter().map(|t| &t.top.r))
    }

    pub fn at(&self, x: &[f64]) -> u64 {
        self.tops
            .iter()
            .filter(|(c, _)| {
                let s = q_to_f64(&c.side());
                (0..x.len()).all(|a| {
                    let lo = c.index[a] as f64 * s;
                    lo <= x[a] && x[a] < lo + s
                })
            })
            .map(|(_, m)| m)
            .sum()
    }

    /// Value on the atom of each top: the part of R not covered by smaller tops.
    fn atoms(&self, within: Option<&DyadicCube>) -> Vec<(u64, f64)> {
        let tops: Vec<(&DyadicCube, u64)> =
            self.tops.iter().filter(|(c, _)| within.is_none_or(|w| w.contains(c) && *c != w)).map(|(c, &m)| (c, m)).collect();
        let mut out = Vec::with_capacity(tops.len());
        for (i, &(c, _)) in tops.iter().enumerate() {
            let value: u64 = tops.iter().filter(|(o, _)| o.contains(c)).map(|&(_, m)| m).sum();
            // Maximal tops strictly inside c.
            let inner: Vec<&DyadicCube> = tops
                .iter()
                .enumerate()
                .filter(|&(j, (o, _))| j != i && c.contains(o) && !tops.iter().any(|(p, _)| p != o && *p != c && p.contains(o) && c.contains(p)))
                .map(|(_, (o, _))| *o)
                .collect();
            let vol = volume(c) - inner.iter().map(|o| volume(o)).sum::<f64>();
            out.push((value, vol));
        }
        out
    }

    pub fn max(&self) -> u64 {
        self.atoms(None).iter().map(|a| a.0).max().unwrap_or(0)
    }

    pub fn lq_norm(&self, q: f64) -> f64 {
        self.atoms(None).iter().map(|&(v, vol)| (v as f64).powf(q) * vol).sum::<f64>().powf(1.0 / q)
    }

    /// Mean oscillation of N over one dyadic cube J.
    pub fn oscillation(&self, j: &DyadicCube) -> f64 {
        let base: u64 = self.tops.iter().filter(|(c, _)| c.contains(j)).map(|(_, m)| m).sum();
        let inner = self.atoms(Some(j));
        let vj = volume(j);
        let covered: f64 = {
            let inside: Vec<&DyadicCube> = self.tops.keys().filter(|c| j.contains(c) && *c != j).collect();
            inside.iter().filter(|c| !inside.iter().any(|p| p != *c && p.contains(c))).map(|c| volume(c)).sum()
        };
        let mut pieces: Vec<(f64, f64)> = inner.iter().map(|&(v, vol)| ((base + v) as f64, vol)).collect();
        pieces.push((base as f64, vj - covered));
        let avg: f64 = pieces.iter().map(|(v, w)| v * w).sum::<f64>() / vj;
        pieces.iter().map(|(v, w)| (v - avg).abs() * w).sum::<f64>() / vj
    }

    /// Largest mean oscillation over dyadic cubes; only cubes strictly containing a top
    /// can see N vary.
    pub fn dyadic_bmo(&self) -> f64 {
        let hi = self.tops.keys().map(|c| c.level).max().unwrap_or(0);
        let mut cands: BTreeSet<DyadicCube> = BTreeSet::new();
        for c in self.tops.keys() {
            let mut a = c.parent();
            while a.level <= hi + 1 {
                cands.insert(a.clone());
                a = a.parent();
            }
        }
        cands.iter().map(|j| self.oscillation(j)).fold(0.0, f64::max)
    }

    pub fn stats(&self, qs: &[f64]) -> CountingStats {
        CountingStats {
            trees: self.tops.values().sum::<u64>() as usize,
            max: self.max(),
            total_volume: self.tops.iter().map(|(c, &m)| m as f64 * volume(c)).sum(),
            lq: qs.iter().map(|&q| (q, self.lq_norm(q))).collect(),
            bmo: self.dyadic_bmo(),
        }
    }
}

/// Smallest sample of M₂F over lattice points inside R.
pub fn inf_over_cube(m2: &RealField, r: &DyadicCube) -> f64 {
    let s = q_to_f64(&r.side());
    let g = &m2.grid;
    let lo: Vec<f64> = r.index.iter().map(|&i| i as f64 * s).collect();
    let mut best = f64::INFINITY;
    for (j, v) in m2.values.iter().enumerate() {
        let x = g.point(j);
        if (0..g.d).all(|a| lo[a] <= x[a] && x[a] < lo[a] + s) {
            best = best.min(*v);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelNorms {
    pub k: i32,
    pub size: f64,
    pub trees: usize,
    pub q: f64,
    pub lq: f64,
    pub bmo: f64,
    /// 2^{2k}[sup_T inf_{R_T} M₂F]²[2^{kp}‖F‖_p^p]^{1/q}.
    pub rhs: f64,
    pub ratio: f64,
}

/// Per-level counting norms against the size-decomposition bound, for logging.
pub fn level_norms(dec: &Decomposition, m2: &RealField, f_p_norm: f64, p: f64, q: f64) -> Vec<LevelNorms> {
    dec.levels
        .iter()
        .map(|lv| {
            let n = CountingFunction::from_forest(&lv.trees);
            let sup_inf = lv.trees.iter().map(|t| inf_over_cube(m2, &t.top.r)).fold(0.0, f64::max);
            let k = lv.k as f64;
            let rhs = 2f64.powf(2.0 * k) * sup_inf * sup_inf * (2f64.powf(k * p) * f_p_norm.powf(p)).powf(1.0 / q);
            let lq = n.lq_norm(q);
            LevelNorms { k: lv.k, size: lv.size, trees: lv.trees.len(), q, lq, bmo: n.dyadic_bmo(), rhs, ratio: lq / rhs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiles::{generate_synthetic, synthetic_constants, SyntheticSpec};
    use crate::subspace::random_generic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(seed: u64) -> TileSystem {
        let s = random_generic(4, 2, 3, 11);
        generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() }, &s, &synthetic_constants()).unwrap()
    }

    /// Dyadic energies so that sums and comparisons are exact.
    fn energies(sys: &TileSystem, i: usize, seed: u64) -> BTreeMap<Tile, f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sys.tiles_of(i).into_iter().map(|t| (t, rng.gen_range(1..64) as f64 / 64.0 * volume(&sys.tiles[0].r).min(1.0))).collect()
    }

    fn cube(level: i32, index: &[i64]) -> DyadicCube {
        DyadicCube { base: 2, level, index: index.to_vec() }
    }

    #[test]
    fn split_partitions_the_tree() {
        let sys = system(0);
        let ctx = IndexData::new(&sys, 0, energies(&sys, 0, 1));
        let tiles = sys.tiles_of(0);
        let top_tile = tiles.iter().max_by_key(|t| t.r.level).unwrap().clone();
        let xi = ctx.ranks.center[top_tile.comp].clone();
        let members: Vec<Tile> = tiles.iter().filter(|t| top_tile.r.contains(&t.r) && in_box(ctx.tilde(t), &xi)).cloned().collect();
        let tree = Tree { index: 0, top: Top { r: top_tile.r.clone(), xi }, tiles: members.clone() };
        assert!(tree.is_valid(&ctx));
        let (ov, lac) = split_overlapping_lacunary(&tree, &ctx);
        assert_eq!(ov.tiles.len() + lac.tiles.len(), members.len());
        assert!(ov.tiles.iter().all(|t| !lac.tiles.contains(t)));
        assert!(ov.is_overlapping(&ctx) && lac.is_lacunary(&ctx));
        let (ov2, lac2) = split_overlapping_lacunary(&ov, &ctx);
        assert_eq!(ov2.tiles, ov.tiles);
        assert!(lac2.tiles.is_empty());
        let single = Tree { tiles: vec![top_tile.clone()], ..tree.clone() };
        assert!(single.is_lacunary(&ctx) && single.is_overlapping(&ctx));
    }

    #[test]
    fn size_of_empty_and_single_tiles() {
        let sys = system(1);
        let tiles = sys.tiles_of(1);
        let t = tiles[0].clone();
        let ctx = IndexData::new(&sys, 1, [(t.clone(), 1.0)].into_iter().collect());
        assert_eq!(size(&ctx, &[]).size, 0.0);
        let s = size(&ctx, &[t.clone()]).size;
        assert!((s - volume(&t.r).powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn size_matches_subset_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..12 {
            let sys = system(trial % 3);
            let i = trial as usize % 4;
            let energy = energies(&sys, i, trial);
            let ctx = IndexData::new(&sys, i, energy.clone());
            let mut all = sys.tiles_of(i);
            // Bias towards nested families: keep the tiles of one or two anchors' top cubes.
            let root = all[rng.gen_range(0..all.len())].r.ancestor(0);
            all.retain(|t| root.contains(&t.r) || rng.gen_bool(0.1));
            all.truncate(11);
            let fast = size(&ctx, &all).size;
            let slow = size_by_subsets(&sys, &energy, &all);
            assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn halving_selection_halves_and_is_strongly_disjoint() {
        for seed in 0..4 {
            let sys = system(seed);
            for i in 0..sys.n {
                let ctx = IndexData::new(&sys, i, energies(&sys, i, seed * 10 + i as u64));
                let p = sys.tiles_of(i);
                let sel = size_halving_selection(&ctx, &p);
                assert!(sel.halved(), "seed {seed} index {i}: {} → {}", sel.size_before, sel.size_after);
                for st in &sel.stages {
                    assert!(strong_disjointness_check(&st.selected, &ctx).is_ok());
                    assert!(st.selected.iter().all(|t| t.is_lacunary(&ctx) && t.is_valid(&ctx)));
                    assert!(st.saturated.iter().all(|t| t.is_valid(&ctx)));
                }
                let used: usize = sel.forest().iter().map(|t| t.tiles.len()).sum();
                assert_eq!(used + sel.remainder.len(), p.len());
            }
        }
    }

    #[test]
    fn single_heavy_tile_is_selected_alone() {
        let sys = system(2);
        let p = sys.tiles_of(0);
        let heavy = p[p.len() / 2].clone();
        let energy: BTreeMap<Tile, f64> = p.iter().map(|t| (t.clone(), if *t == heavy { 1.0 } else { 0.0 })).collect();
        let ctx = IndexData::new(&sys, 0, energy);
        let sel = size_halving_selection(&ctx, &p);
        let chosen: Vec<&Tree> = sel.stages.iter().flat_map(|s| &s.selected).collect();
        assert_eq!(chosen.len(), 1);
        assert!(chosen[0].tiles.contains(&heavy));
        assert_eq!(sel.size_after, 0.0);
        let none = IndexData::new(&sys, 0, BTreeMap::new());
        let idle = size_halving_selection(&none, &p);
        assert!(idle.forest().is_empty());
        assert_eq!(idle.remainder.len(), p.len());
    }

    #[test]
    fn strong_disjointness_violation_is_reported() {
        let sys = system(0);
        let ctx = IndexData::new(&sys, 0, BTreeMap::new());
        let tiles = sys.tiles_of(0);
        // A fine-frequency tile s and a coarse one s′ with ω_s ⊊ ω_{s′} and R_{s′} ⊆ R_s.
        let (s, sp) = tiles
            .iter()
            .flat_map(|a| tiles.iter().map(move |b| (a, b)))
            .find(|(a, b)| {
                let (w, wp) = (ctx.omega(a), ctx.omega(b));
                wp.contains_box(w) && w != wp && a.r.contains(&b.r)
            })
            .expect("planted systems nest");
        let t = Tree { index: 0, top: Top { r: s.r.clone(), xi: ctx.ranks.center[s.comp].clone() }, tiles: vec![s.clone()] };
        let u = Tree { index: 0, top: Top { r: sp.r.clone(), xi: ctx.ranks.center[sp.comp].clone() }, tiles: vec![sp.clone()] };
        let w = strong_disjointness_check(&[t.clone(), u], &ctx).unwrap_err();
        assert_eq!((w.tree, w.other), (0, 1));
        assert!(strong_disjointness_check(&[t], &ctx).is_ok());
    }

    #[test]
    fn decomposition_partitions_with_level_bounds() {
        for seed in 0..3 {
            let sys = system(seed);
            let ctx = IndexData::new(&sys, 2, energies(&sys, 2, 40 + seed));
            let p = sys.tiles_of(2);
            let dec = size_decomposition(&ctx, &p);
            let mut all: Vec<Tile> = dec.levels.iter().flat_map(|l| l.tiles()).collect();
            all.extend(dec.null_tiles.iter().cloned());
            let n = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n, "levels overlap");
            assert_eq!(all, p);
            for lv in &dec.levels {
                let s = size(&ctx, &lv.tiles()).size;
                assert!(s <= 2f64.powi(-lv.k + 1), "level {}: {s}", lv.k);
            }
            assert!(dec.levels.windows(2).all(|w| w[0].k < w[1].k));
        }
        let sys = system(0);
        let ctx = IndexData::new(&sys, 0, BTreeMap::new());
        assert!(size_decomposition(&ctx, &[]).levels.is_empty());
    }

    #[test]
    fn counting_function_examples() {
        let q = cube(1, &[0, 0]);
        let one = CountingFunction::from_tops([&q]);
        assert_eq!(one.max(), 1);
        assert!((one.lq_norm(3.0) - 4f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(one.dyadic_bmo() <= 1.0);
        let inner = cube(-1, &[1, 1]);
        let two = CountingFunction::from_tops([&q, &inner]);
        assert_eq!(two.max(), 2);
        assert_eq!(two.at(&[0.6, 0.6]), 2);
        assert_eq!(two.at(&[1.6, 0.6]), 1);
    }

    #[test]
    fn counting_norms_match_rasterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tops: Vec<DyadicCube> = (0..rng.gen_range(1..12))
                .map(|_| {
                    let level = rng.gen_range(-3..=0);
                    let per = 4i64 << (-level);
                    cube(level, &[rng.gen_range(0..per), rng.gen_range(0..per)])
                })
                .collect();
            let n = CountingFunction::from_tops(&tops);
            // Cells of side 1/8 over [0, 4)^2.
            let mut sum2 = 0.0;
            let mut mx = 0;
            for a in 0..32 {
                for b in 0..32 {
                    let v = n.at(&[(a as f64 + 0.5) / 8.0, (b as f64 + 0.5) / 8.0]);
                    sum2 += (v * v) as f64 / 64.0;
                    mx = mx.max(v);
                }
            }
            assert!((n.lq_norm(2.0) - sum2.sqrt()).abs() < 1e-9);
            assert_eq!(n.max(), mx);
        }
    }
}
