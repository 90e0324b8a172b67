//! Vector trees: Fefferman levels, the two selection stages, the Katz–Tao count,
//! the injectivity of H and the pointwise counting bounds.

use crate::grids::DyadicCube;
use crate::linalg::{ratio, rat, Rat};
use crate::tiles::{MultiTile, RankBox, Ranks, Tile, TileSystem};
use crate::trees::{dyadic_level, size, volume, CountingFunction, IndexData, Top, Tree};
use crate::wavepackets::CoefficientTable;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VectreeError {
    #[error("k/d = {k}/{d} is not below n/2 = {n}/2")]
    OutOfScope { n: usize, d: usize, k: usize },
    #[error("counting exponent {0} is not below 1/2")]
    DeltaTooLarge(String),
    #[error("standard projection of index {index} is not unique")]
    ProjectionNotUnique { index: usize },
}

/// Counting exponent δ < 1/2 with N ≤ C·(Π_{j≤n} N_j)^δ.
pub fn delta_exponent(n: usize, d: usize, k: usize) -> Result<Rat, VectreeError> {
    if 2 * k >= n * d {
        return Err(VectreeError::OutOfScope { n, d, k });
    }
    let delta = delta_value(n, d, k);
    if delta.clone() * rat(2) >= Rat::one() {
        return Err(VectreeError::DeltaTooLarge(crate::linalg::rat_to_string(&delta)));
    }
    Ok(delta)
}

fn delta_value(n: usize, d: usize, k: usize) -> Rat {
    let m = k.div_ceil(d);
    if 2 * m < n {
        ratio(m as i64, n as i64)
    } else if d <= 2 {
        ratio(k as i64, 2 * n as i64)
    } else {
        chain_delta(n, d, m)
    }
}

/// Exponents e_j of the chain bound N^slots ≤ Π N_j^{slots·e_j} for labels in the
/// canonical order (0-based).
fn chain_exponents(n: usize, d: usize, m: usize) -> Vec<Rat> {
    let mut e = vec![Rat::zero(); n];
    if n % 2 == 0 {
        e[0] = ratio(d as i64 - 1, d as i64);
        for x in e.iter_mut().take(m).skip(1) {
            *x = Rat::one();
        }
    } else {
        let slots = if d % 2 == 1 { d } else { d + 1 };
        let links = slots - 1;
        e[0] = ratio(links.div_ceil(2) as i64, slots as i64);
        e[1] = ratio((links / 2) as i64, slots as i64);
        for x in e.iter_mut().take(m).skip(2) {
            *x = Rat::one();
        }
        e[m] = ratio(slots.div_ceil(2) as i64, slots as i64);
    }
    e
}

/// The chain bound holds for every relabeling of the indices, so averaging it over all
/// of them gives N ≤ C·(Π N_j)^{Σe/n}.
fn chain_delta(n: usize, d: usize, m: usize) -> Rat {
    let total: Rat = chain_exponents(n, d, m).into_iter().sum();
    total / rat(n as i64)
}

/// Which order organizes a family: ≲ (through ω̃) in the first stage, ≤ (through ω) in the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    Lesssim,
    Le,
}

fn boxes(ranks: &Ranks, order: Order) -> &[RankBox] {
    match order {
        Order::Lesssim => &ranks.tilde,
        Order::Le => &ranks.omega,
    }
}

fn related(ranks: &Ranks, order: Order, a: &Tile, b: &Tile) -> bool {
    let bx = boxes(ranks, order);
    b.r.contains(&a.r) && bx[a.comp].contains_box(&bx[b.comp])
}

/// s is below some other element that is not below s (ties between mutually related
/// elements go to the smaller one).
fn dominated<T: Ord>(s: &T, others: &[T], rel: impl Fn(&T, &T) -> bool) -> bool {
    others.iter().any(|t| t != s && rel(s, t) && (!rel(t, s) || t < s))
}

/// One index after a Fefferman pass: tiles split by the number of enclosing tree tops,
/// and each level organized into trees under its maximal tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct LeveledIndex {
    pub index: usize,
    pub order: Order,
    pub trees: Vec<Tree>,
    pub tree_level: Vec<u32>,
    pub level_of: BTreeMap<Tile, u32>,
    pub tree_of: BTreeMap<Tile, usize>,
    /// Tiles lying below two or more maximal tiles of their level.
    pub ambiguous: Vec<Tile>,
}

impl LeveledIndex {
    pub fn levels(&self) -> BTreeSet<u32> {
        self.tree_level.iter().copied().collect()
    }

    pub fn trees_at(&self, l: u32) -> impl Iterator<Item = (usize, &Tree)> {
        self.trees.iter().enumerate().filter(move |(j, _)| self.tree_level[*j] == l)
    }

    pub fn counting_at(&self, l: u32) -> CountingFunction {
        CountingFunction::from_tops(self.trees_at(l).map(|(_, t)| &t.top.r))
    }

    /// Number of trees at level l whose top contains the cell.
    pub fn count_at(&self, l: u32, cell: &DyadicCube) -> u64 {
        self.trees_at(l).filter(|(_, t)| t.top.r.contains(cell)).count() as u64
    }
}

/// Fefferman levels: P(l) holds the tiles s with 2^l ≤ #{T : ξ_T ∈ ω̃_s (ω_s for ≤), R_s ⊆ R_T} < 2^{l+1}.
/// A tile outside every tree is put in level 0.
pub fn fefferman_levels(ranks: &Ranks, index: usize, p: &[Tile], tops: &[Top], order: Order) -> LeveledIndex {
    let bx = boxes(ranks, order);
    let mut by_level: BTreeMap<u32, Vec<Tile>> = BTreeMap::new();
    let mut level_of = BTreeMap::new();
    let distinct: BTreeSet<&Tile> = p.iter().collect();
    for s in distinct {
        let count = tops.iter().filter(|t| t.r.contains(&s.r) && bx[s.comp].contains_point(&t.xi)).count() as u64;
        let l = if count == 0 { 0 } else { 63 - count.leading_zeros() };
        by_level.entry(l).or_default().push(s.clone());
        level_of.insert(s.clone(), l);
    }
    let mut out = LeveledIndex { index, order, trees: Vec::new(), tree_level: Vec::new(), level_of, tree_of: BTreeMap::new(), ambiguous: Vec::new() };
    let rel = |a: &Tile, b: &Tile| related(ranks, order, a, b);
    for (l, tiles) in by_level {
        let maximal: Vec<Tile> = tiles.iter().filter(|s| !dominated(*s, &tiles, rel)).cloned().collect();
        let first = out.trees.len();
        for m in &maximal {
            out.trees.push(Tree { index, top: Top { r: m.r.clone(), xi: ranks.center[m.comp].clone() }, tiles: Vec::new() });
            out.tree_level.push(l);
        }
        for s in &tiles {
            let above: Vec<usize> = (0..maximal.len()).filter(|&j| rel(s, &maximal[j])).collect();
            if above.len() != 1 {
                out.ambiguous.push(s.clone());
            }
            let j = first + above.first().copied().unwrap_or(0);
            out.trees[j].tiles.push(s.clone());
            out.tree_of.insert(s.clone(), j);
        }
    }
    out
}

/// s ≲ s′ in every index.
pub fn multi_lesssim(sys: &TileSystem, a: &MultiTile, b: &MultiTile) -> bool {
    b.r.contains(&a.r)
        && (0..sys.n).all(|i| {
            let (ca, cb) = (sys.tuples[a.tuple].comps[i], sys.tuples[b.tuple].comps[i]);
            sys.ranks[i].tilde[ca].contains_box(&sys.ranks[i].tilde[cb])
        })
}

/// A vector tree with a top multi-tile; its i-th top frequency is c(ω_{s_i}).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorTree {
    pub top: MultiTile,
    pub tiles: Vec<MultiTile>,
}

impl VectorTree {
    /// Contains a multi-tile at a scale other than the top's.
    pub fn is_proper(&self) -> bool {
        self.tiles.iter().any(|t| t.r.level != self.top.r.level)
    }

    pub fn xi(&self, sys: &TileSystem, i: usize) -> Vec<u32> {
        sys.ranks[i].center[sys.tuples[self.top.tuple].comps[i]].clone()
    }

    pub fn projection(&self, sys: &TileSystem, i: usize) -> Vec<Tile> {
        let set: BTreeSet<Tile> = self.tiles.iter().map(|t| sys.tile(t, i)).collect();
        set.into_iter().collect()
    }

    /// Per index: the projection is an i-tree with the induced top.
    pub fn is_valid(&self, sys: &TileSystem) -> bool {
        (0..sys.n).all(|i| {
            let xi = self.xi(sys, i);
            self.projection(sys, i).iter().all(|s| self.top.r.contains(&s.r) && sys.ranks[i].tilde[s.comp].contains_point(&xi))
        })
    }

    /// Indices where every tile other than the top's own component avoids ω at ξ.
    pub fn lacunary_indices(&self, sys: &TileSystem) -> Vec<bool> {
        (0..sys.n)
            .map(|i| {
                let xi = self.xi(sys, i);
                let top = sys.tile(&self.top, i);
                self.projection(sys, i).iter().filter(|s| **s != top).all(|s| !sys.ranks[i].omega[s.comp].contains_point(&xi))
            })
            .collect()
    }

    /// Fewest indices at which a non-top multi-tile is lacunary relative to the top.
    pub fn min_lacunary_per_tile(&self, sys: &TileSystem) -> Option<usize> {
        self.tiles
            .iter()
            .filter(|t| **t != self.top)
            .map(|t| {
                (0..sys.n)
                    .filter(|&i| {
                        let xi = self.xi(sys, i);
                        !sys.ranks[i].omega[sys.tuples[t.tuple].comps[i]].contains_point(&xi)
                    })
                    .count()
            })
            .min()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1 {
    /// F(l⃗) for every level vector that occurs.
    pub families: BTreeMap<Vec<u32>, Vec<VectorTree>>,
}

impl Stage1 {
    /// F**(l⃗): the vector trees with at least two scales.
    pub fn proper(&self) -> BTreeMap<Vec<u32>, Vec<&VectorTree>> {
        self.families
            .iter()
            .map(|(l, f)| (l.clone(), f.iter().filter(|t| t.is_proper()).collect::<Vec<_>>()))
            .filter(|(_, f)| !f.is_empty())
            .collect()
    }

    /// P̄(l⃗): tops of the one-scale vector trees.
    pub fn singletons(&self) -> BTreeMap<Vec<u32>, Vec<MultiTile>> {
        self.families
            .iter()
            .map(|(l, f)| (l.clone(), f.iter().filter(|t| !t.is_proper()).flat_map(|t| t.tiles.iter().cloned()).collect::<Vec<_>>()))
            .filter(|(_, s)| !s.is_empty())
            .collect()
    }

    pub fn level_vector(levels: &[LeveledIndex], sys: &TileSystem, mt: &MultiTile) -> Vec<u32> {
        levels.iter().map(|lv| lv.level_of.get(&sys.tile(mt, lv.index)).copied().unwrap_or(0)).collect()
    }
}

/// First-stage selection: per level vector, repeatedly take a ≲-maximal multi-tile s and
/// the vector tree of everything still present below it.
pub fn stage1_select(sys: &TileSystem, levels: &[LeveledIndex], p: &[MultiTile]) -> Stage1 {
    let mut groups: BTreeMap<Vec<u32>, BTreeSet<MultiTile>> = BTreeMap::new();
    for mt in p {
        groups.entry(Stage1::level_vector(levels, sys, mt)).or_default().insert(mt.clone());
    }
    let mut families = BTreeMap::new();
    for (l, mut rest) in groups {
        let mut fam = Vec::new();
        while !rest.is_empty() {
            let all: Vec<MultiTile> = rest.iter().cloned().collect();
            let top = all.iter().find(|s| !dominated(*s, &all, |a, b| multi_lesssim(sys, a, b))).expect("finite orders have maximal elements").clone();
            let tiles: Vec<MultiTile> = all.into_iter().filter(|t| multi_lesssim(sys, t, &top)).collect();
            for t in &tiles {
                rest.remove(t);
            }
            fam.push(VectorTree { top, tiles });
        }
        families.insert(l, fam);
    }
    Stage1 { families }
}

/// The tree of F_i(l_i) holding every i-component of the vector tree.
pub fn standard_projection(sys: &TileSystem, level: &LeveledIndex, vt: &VectorTree) -> Result<usize, VectreeError> {
    let ids: BTreeSet<Option<&usize>> = vt.tiles.iter().map(|t| level.tree_of.get(&sys.tile(t, level.index))).collect();
    match ids.into_iter().collect::<Vec<_>>().as_slice() {
        [Some(j)] => Ok(**j),
        _ => Err(VectreeError::ProjectionNotUnique { index: level.index }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatzTao {
    pub count: String,
    /// |X|^d and Π|A_i| as decimal strings.
    pub x_power: String,
    pub a_product: String,
    pub holds: bool,
}

/// Exact number of chains (x_1..x_d) with g_i(x_i) = g_i(x_{i+1}), and the check
/// count·Π|A_i| ≥ |X|^d. `maps[i][x]` is g_i(x) ∈ [0, codomain[i]).
pub fn katz_tao_count(x_len: usize, maps: &[Vec<usize>], codomain: &[usize]) -> KatzTao {
    let mut ways: Vec<BigUint> = vec![BigUint::one(); x_len];
    for g in maps {
        let mut bucket: HashMap<usize, BigUint> = HashMap::new();
        for (x, w) in ways.iter().enumerate() {
            *bucket.entry(g[x]).or_insert_with(BigUint::zero) += w;
        }
        ways = (0..x_len).map(|y| bucket[&g[y]].clone()).collect();
    }
    let count: BigUint = ways.into_iter().sum();
    let x_power = BigUint::from(x_len).pow(maps.len() as u32 + 1);
    let a_product: BigUint = codomain.iter().map(|&a| BigUint::from(a)).product();
    let holds = &count * &a_product >= x_power;
    KatzTao { count: count.to_string(), x_power: x_power.to_string(), a_product: a_product.to_string(), holds }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeCase {
    D2TwoScheme,
    NEvenChain,
    NOddDOdd,
    NOddDEven,
    D1Simple,
}

/// Layout of H: tuple slots chained through `links` (a label per consecutive pair) and
/// mapped to the standard projections `entries` (slot, label). Labels name indices after
/// the relabeling chosen at each point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeH {
    pub case: SchemeCase,
    pub slots: usize,
    pub links: Vec<usize>,
    pub entries: Vec<(usize, usize)>,
    pub m: usize,
    pub k: usize,
}

impl SchemeH {
    pub fn for_params(n: usize, d: usize, k: usize) -> Result<SchemeH, VectreeError> {
        if 2 * k >= n * d {
            return Err(VectreeError::OutOfScope { n, d, k });
        }
        let m = k.div_ceil(d);
        let s = |case, slots, links, entries| SchemeH { case, slots, links, entries, m, k };
        Ok(if 2 * m < n {
            s(SchemeCase::D1Simple, 1, vec![], (0..m).map(|j| (0, j)).collect())
        } else if d == 2 {
            let mut e: Vec<(usize, usize)> = (1..m).map(|j| (0, j)).collect();
            e.extend((m..k).map(|j| (1, j)));
            s(SchemeCase::D2TwoScheme, 2, vec![0], e)
        } else if n % 2 == 0 {
            s(SchemeCase::NEvenChain, d, vec![0; d - 1], (0..d).flat_map(|t| (1..m).map(move |j| (t, j))).collect())
        } else {
            let slots = if d % 2 == 1 { d } else { d + 1 };
            let links = (0..slots - 1).map(|t| t % 2).collect();
            let mut e: Vec<(usize, usize)> = (0..slots).flat_map(|t| (2..m).map(move |j| (t, j))).collect();
            e.extend((0..slots).step_by(2).map(|t| (t, m)));
            let case = if d % 2 == 1 { SchemeCase::NOddDOdd } else { SchemeCase::NOddDEven };
            s(case, slots, links, e)
        })
    }

    pub fn labels(&self) -> usize {
        match self.case {
            SchemeCase::D1Simple => self.m,
            SchemeCase::D2TwoScheme => self.k,
            SchemeCase::NEvenChain => self.m,
            SchemeCase::NOddDOdd | SchemeCase::NOddDEven => self.m + 1,
        }
    }

    /// Label → index, chosen from the counts so that the scheme bound implies the δ bound:
    /// the smallest counts are used, and the chained label carries the largest of them.
    pub fn labeling(&self, counts: &[u64]) -> Vec<usize> {
        let mut sorted: Vec<usize> = (0..counts.len()).collect();
        sorted.sort_by_key(|&j| (counts[j], j));
        let t = self.labels();
        let mut head: Vec<usize> = sorted[..t].to_vec();
        match self.case {
            SchemeCase::D1Simple | SchemeCase::D2TwoScheme => head,
            SchemeCase::NEvenChain => {
                let big = head.pop().expect("m ≥ 1");
                head.insert(0, big);
                head
            }
            SchemeCase::NOddDOdd | SchemeCase::NOddDEven => {
                let big = head.pop().expect("m ≥ 1");
                head.insert(1, big);
                head
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCheck {
    pub domain: u64,
    pub injective: bool,
    /// Two distinct tuples with the same value.
    pub witness: Option<(Vec<usize>, Vec<usize>)>,
    pub complete: bool,
}

/// Materializes H on the chained tuples over X and tests injectivity by enumeration.
/// `proj[label][x]` is the standard projection of element x for that label.
pub fn build_and_check_h(x_len: usize, proj: &[Vec<usize>], scheme: &SchemeH, cap: u64) -> HCheck {
    let mut seen: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    let mut out = HCheck { domain: 0, injective: true, witness: None, complete: true };
    let mut tuple = Vec::with_capacity(scheme.slots);
    fn rec(x_len: usize, proj: &[Vec<usize>], sc: &SchemeH, cap: u64, tuple: &mut Vec<usize>, seen: &mut HashMap<Vec<usize>, Vec<usize>>, out: &mut HCheck) {
        if out.domain >= cap {
            out.complete = false;
            return;
        }
        if tuple.len() == sc.slots {
            out.domain += 1;
            let value: Vec<usize> = sc.entries.iter().map(|&(slot, label)| proj[label][tuple[slot]]).collect();
            if let Some(prev) = seen.get(&value) {
                if out.witness.is_none() {
                    out.witness = Some((prev.clone(), tuple.clone()));
                }
                out.injective = false;
            } else {
                seen.insert(value, tuple.clone());
            }
            return;
        }
        for x in 0..x_len {
            if let Some(&prev) = tuple.last() {
                let g = &proj[sc.links[tuple.len() - 1]];
                if g[x] != g[prev] {
                    continue;
                }
            }
            tuple.push(x);
            rec(x_len, proj, sc, cap, tuple, seen, out);
            tuple.pop();
        }
    }
    rec(x_len, proj, scheme, cap, &mut tuple, &mut seen, &mut out);
    out
}

/// One interior cell per atom of a family of dyadic cubes: every cube of the family either
/// contains the cell or misses it, so all counting functions built from these cubes are
/// constant on it.
pub fn atom_cells(cubes: &[DyadicCube]) -> Vec<DyadicCube> {
    fn free(q: &DyadicCube, inside: &[&DyadicCube]) -> Option<DyadicCube> {
        if inside.is_empty() {
            return Some(q.clone());
        }
        for ch in q.children() {
            if inside.iter().any(|c| **c == ch) {
                continue;
            }
            let sub: Vec<&DyadicCube> = inside.iter().copied().filter(|c| ch.contains(c)).collect();
            if let Some(x) = free(&ch, &sub) {
                return Some(x);
            }
        }
        None
    }
    let set: BTreeSet<&DyadicCube> = cubes.iter().collect();
    set.iter()
        .filter_map(|q| {
            let inside: Vec<&DyadicCube> = set.iter().copied().filter(|c| q.contains(c) && c != q).collect();
            free(q, &inside)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountingReport {
    pub families: usize,
    pub cells: usize,
    /// (family, cell) pairs with at least one member.
    pub checks: usize,
    pub max_count: u64,
    pub largest_domain: u64,
    pub scheme_violations: usize,
    pub delta_violations: usize,
    pub aggregate_violations: usize,
    pub katz_tao_violations: usize,
    pub noninjective: usize,
    pub incomplete: usize,
    pub projection_errors: usize,
    /// Distinct members sharing m standard projections.
    pub m_share_collisions: usize,
    /// Largest N / (Π_j N_j)^δ over the aggregated checks.
    pub worst_aggregate_ratio: f64,
    pub first_failure: Option<String>,
}

impl CountingReport {
    pub fn pass(&self) -> bool {
        self.scheme_violations
            + self.delta_violations
            + self.aggregate_violations
            + self.katz_tao_violations
            + self.noninjective
            + self.projection_errors
            + self.m_share_collisions
            == 0
    }

    fn fail(&mut self, what: String) {
        if self.first_failure.is_none() {
            self.first_failure = Some(what);
        }
    }

    pub fn merge(&mut self, o: CountingReport) {
        self.families += o.families;
        self.cells = self.cells.max(o.cells);
        self.checks += o.checks;
        self.max_count = self.max_count.max(o.max_count);
        self.largest_domain = self.largest_domain.max(o.largest_domain);
        self.scheme_violations += o.scheme_violations;
        self.delta_violations += o.delta_violations;
        self.aggregate_violations += o.aggregate_violations;
        self.katz_tao_violations += o.katz_tao_violations;
        self.noninjective += o.noninjective;
        self.incomplete += o.incomplete;
        self.projection_errors += o.projection_errors;
        self.m_share_collisions += o.m_share_collisions;
        self.worst_aggregate_ratio = self.worst_aggregate_ratio.max(o.worst_aggregate_ratio);
        if self.first_failure.is_none() {
            self.first_failure = o.first_failure;
        }
    }
}

fn big_pow(x: u64, e: u32) -> BigUint {
    BigUint::from(x).pow(e)
}

fn delta_parts(delta: &Rat) -> (u32, u32) {
    let num = delta.numer().to_u32().expect("small exponent");
    let den = delta.denom().to_u32().expect("small exponent");
    (num, den)
}

/// Checks at one cell for one family with `x_len` members present. `proj[i][x]` is the
/// standard projection (tree id) of member x in index i; `counts[i]` is N_{F_i}(cell).
fn check_cell(report: &mut CountingReport, scheme: &SchemeH, delta: &Rat, proj: &[Vec<usize>], counts: &[u64], x_len: usize, cap: u64, label: &str) {
    report.checks += 1;
    let n_here = x_len as u64;
    report.max_count = report.max_count.max(n_here);
    let labeling = scheme.labeling(counts);
    let lp: Vec<Vec<usize>> = labeling.iter().map(|&i| proj[i].clone()).collect();
    let h = build_and_check_h(x_len, &lp, scheme, cap);
    report.largest_domain = report.largest_domain.max(h.domain);
    if !h.complete {
        report.incomplete += 1;
    } else if !h.injective {
        report.noninjective += 1;
        report.fail(format!("{label}: H not injective, tuples {:?}", h.witness));
    }
    let maps: Vec<Vec<usize>> = scheme.links.iter().map(|&l| lp[l].clone()).collect();
    let codomain: Vec<usize> = scheme.links.iter().map(|&l| counts[labeling[l]] as usize).collect();
    if !scheme.links.is_empty() && !katz_tao_count(x_len, &maps, &codomain).holds {
        report.katz_tao_violations += 1;
        report.fail(format!("{label}: Katz–Tao bound fails"));
    }
    let rhs: BigUint = scheme
        .links
        .iter()
        .map(|&l| counts[labeling[l]])
        .chain(scheme.entries.iter().map(|&(_, l)| counts[labeling[l]]))
        .map(BigUint::from)
        .product();
    if big_pow(n_here, scheme.slots as u32) > rhs {
        report.scheme_violations += 1;
        report.fail(format!("{label}: N^{} = {} exceeds {rhs}", scheme.slots, big_pow(n_here, scheme.slots as u32)));
    }
    let (num, den) = delta_parts(delta);
    let all: BigUint = counts.iter().map(|&c| BigUint::from(c)).product();
    if big_pow(n_here, den) > all.pow(num) {
        report.delta_violations += 1;
        report.fail(format!("{label}: N = {n_here} exceeds (Π N_j)^δ with counts {counts:?}"));
    }
    for a in 0..x_len {
        for b in a + 1..x_len {
            let shared = (0..proj.len()).filter(|&i| proj[i][a] == proj[i][b]).count();
            if shared >= scheme.m {
                report.m_share_collisions += 1;
                report.fail(format!("{label}: members {a} and {b} share {shared} standard projections"));
            }
        }
    }
}

fn aggregate_check(report: &mut CountingReport, delta: &Rat, total: u64, contributing: u64, counts: &[u64]) {
    let (num, den) = delta_parts(delta);
    let all: BigUint = counts.iter().map(|&c| BigUint::from(c)).product();
    if big_pow(total, den) > big_pow(contributing, den) * all.pow(num) {
        report.aggregate_violations += 1;
        report.fail(format!("aggregate: N = {total} with {contributing} level vectors and counts {counts:?}"));
    }
    let p: f64 = counts.iter().map(|&c| c as f64).product();
    if p > 0.0 {
        report.worst_aggregate_ratio = report.worst_aggregate_ratio.max(total as f64 / p.powf(num as f64 / den as f64));
    }
}

/// Exact pointwise verification of the first-stage counting bounds at the atom cells of
/// all tiles and tops involved. `forests[i]` is F_i, the trees the levels were built from.
pub fn counting_bounds_stage1(sys: &TileSystem, levels: &[LeveledIndex], forests: &[Vec<Tree>], stage: &Stage1, cap: u64) -> Result<CountingReport, VectreeError> {
    let scheme = SchemeH::for_params(sys.n, sys.d, sys.k)?;
    let delta = delta_exponent(sys.n, sys.d, sys.k)?;
    let mut cubes: Vec<DyadicCube> = sys.tiles.iter().map(|t| t.r.clone()).collect();
    cubes.extend(forests.iter().flatten().map(|t| t.top.r.clone()));
    cubes.extend(levels.iter().flat_map(|lv| lv.trees.iter().map(|t| t.top.r.clone())));
    let cells = atom_cells(&cubes);
    let proper = stage.proper();
    let mut report = CountingReport { families: proper.len(), cells: cells.len(), ..CountingReport::default() };
    let mut projections: BTreeMap<&Vec<u32>, Vec<Option<Vec<usize>>>> = BTreeMap::new();
    for (l, fam) in &proper {
        let mut v = Vec::new();
        for vt in fam {
            let p: Result<Vec<usize>, _> = levels.iter().map(|lv| standard_projection(sys, lv, vt)).collect();
            if p.is_err() {
                report.projection_errors += 1;
                report.fail(format!("projection not unique for top {:?}", vt.top));
            }
            v.push(p.ok());
        }
        projections.insert(l, v);
    }
    let full: Vec<CountingFunction> = forests.iter().map(|f| CountingFunction::from_forest(f)).collect();
    for cell in &cells {
        let mut total = 0u64;
        let mut contributing = 0u64;
        for (l, fam) in &proper {
            let members: Vec<usize> = (0..fam.len()).filter(|&j| fam[j].top.r.contains(cell) && projections[l][j].is_some()).collect();
            if members.is_empty() {
                continue;
            }
            total += members.len() as u64;
            contributing += 1;
            let counts: Vec<u64> = levels.iter().map(|lv| lv.count_at(l[lv.index], cell)).collect();
            let proj: Vec<Vec<usize>> = (0..sys.n).map(|i| members.iter().map(|&j| projections[l][j].as_ref().expect("filtered")[i]).collect()).collect();
            for (i, lv) in levels.iter().enumerate() {
                if proj[i].iter().any(|&t| !lv.trees[t].top.r.contains(cell)) {
                    report.projection_errors += 1;
                    report.fail(format!("projection top misses the cell in index {i}"));
                }
            }
            check_cell(&mut report, &scheme, &delta, &proj, &counts, members.len(), cap, &format!("stage 1, l = {l:?}"));
        }
        if total > 0 {
            let counts: Vec<u64> = full.iter().map(|f| f.tops.iter().filter(|(c, _)| c.contains(cell)).map(|(_, m)| m).sum()).collect();
            aggregate_check(&mut report, &delta, total, contributing, &counts);
        }
    }
    Ok(report)
}

/// Second-stage data for one index, one level vector and one size level r.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Index {
    pub index: usize,
    pub l: Vec<u32>,
    pub r: i32,
    /// F_i(r, l⃗): overlapping trees with ≤-incomparable top tiles.
    pub forest: Vec<Tree>,
    /// Its Fefferman pass in q with respect to ≤.
    pub leveled: LeveledIndex,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Stage2 {
    pub indices: BTreeMap<(Vec<u32>, usize, i32), Stage2Index>,
    /// F(r⃗, l⃗, q⃗) keyed by (l⃗, r⃗, q⃗); every member is a one-tile vector tree.
    pub families: BTreeMap<(Vec<u32>, Vec<i32>, Vec<u32>), Vec<MultiTile>>,
    /// Multi-tiles with a vanishing coefficient; they add nothing to the form.
    pub dropped: Vec<MultiTile>,
}

/// Greedy organization into overlapping trees under ≤-maximal tiles.
fn overlapping_trees(ranks: &Ranks, index: usize, tiles: &[Tile]) -> Vec<Tree> {
    let mut rest: BTreeSet<Tile> = tiles.iter().cloned().collect();
    let mut out = Vec::new();
    let rel = |a: &Tile, b: &Tile| related(ranks, Order::Le, a, b);
    while !rest.is_empty() {
        let all: Vec<Tile> = rest.iter().cloned().collect();
        let top = all.iter().find(|s| !dominated(*s, &all, rel)).expect("maximal element").clone();
        let members: Vec<Tile> = all.into_iter().filter(|s| rel(s, &top)).collect();
        for s in &members {
            rest.remove(s);
        }
        out.push(Tree { index, top: Top { r: top.r.clone(), xi: ranks.center[top.comp].clone() }, tiles: members });
    }
    out
}

/// Second stage: size levels r, overlapping trees, a Fefferman pass in q, and the
/// families F(r⃗, l⃗, q⃗). `energy[i]` holds |⟨F_i, φ_s⟩|².
pub fn stage2_reshuffle(sys: &TileSystem, singletons: &BTreeMap<Vec<u32>, Vec<MultiTile>>, energy: &[BTreeMap<Tile, f64>]) -> Stage2 {
    let mut out = Stage2::default();
    for (l, mts) in singletons {
        let mut r_of: Vec<BTreeMap<Tile, i32>> = vec![BTreeMap::new(); sys.n];
        for i in 0..sys.n {
            let tiles: BTreeSet<Tile> = mts.iter().map(|mt| sys.tile(mt, i)).collect();
            let mut by_r: BTreeMap<i32, Vec<Tile>> = BTreeMap::new();
            for s in tiles {
                let a = (energy[i].get(&s).copied().unwrap_or(0.0) / volume(&s.r)).sqrt();
                if a > 0.0 {
                    let r = dyadic_level(a);
                    r_of[i].insert(s.clone(), r);
                    by_r.entry(r).or_default().push(s);
                }
            }
            for (r, tiles) in by_r {
                let forest = overlapping_trees(&sys.ranks[i], i, &tiles);
                let tops: Vec<Top> = forest.iter().map(|t| t.top.clone()).collect();
                let leveled = fefferman_levels(&sys.ranks[i], i, &tiles, &tops, Order::Le);
                out.indices.insert((l.clone(), i, r), Stage2Index { index: i, l: l.clone(), r, forest, leveled });
            }
        }
        for mt in mts {
            let rs: Option<Vec<i32>> = (0..sys.n).map(|i| r_of[i].get(&sys.tile(mt, i)).copied()).collect();
            let Some(rs) = rs else {
                out.dropped.push(mt.clone());
                continue;
            };
            let qs: Vec<u32> = (0..sys.n).map(|i| out.indices[&(l.clone(), i, rs[i])].leveled.level_of[&sys.tile(mt, i)]).collect();
            out.families.entry((l.clone(), rs, qs)).or_default().push(mt.clone());
        }
    }
    out
}

/// Exact pointwise verification of the second-stage counting bounds.
pub fn counting_bounds_stage2(sys: &TileSystem, stage: &Stage2, cap: u64) -> Result<CountingReport, VectreeError> {
    let scheme = SchemeH::for_params(sys.n, sys.d, sys.k)?;
    let delta = delta_exponent(sys.n, sys.d, sys.k)?;
    let mut cubes: Vec<DyadicCube> = sys.tiles.iter().map(|t| t.r.clone()).collect();
    cubes.extend(stage.indices.values().flat_map(|s| s.forest.iter().chain(&s.leveled.trees).map(|t| t.top.r.clone())));
    let cells = atom_cells(&cubes);
    let mut report = CountingReport { families: stage.families.len(), cells: cells.len(), ..CountingReport::default() };
    for cell in &cells {
        // Aggregation over q⃗ for fixed (l⃗, r⃗).
        let mut per_lr: BTreeMap<(&Vec<u32>, &Vec<i32>), (u64, u64)> = BTreeMap::new();
        for ((l, r, q), members) in &stage.families {
            let here: Vec<&MultiTile> = members.iter().filter(|mt| mt.r.contains(cell)).collect();
            if here.is_empty() {
                continue;
            }
            let idx: Vec<&Stage2Index> = (0..sys.n).map(|i| &stage.indices[&(l.clone(), i, r[i])]).collect();
            let counts: Vec<u64> = (0..sys.n).map(|i| idx[i].leveled.count_at(q[i], cell)).collect();
            let proj: Vec<Vec<usize>> = (0..sys.n).map(|i| here.iter().map(|mt| idx[i].leveled.tree_of[&sys.tile(mt, i)]).collect()).collect();
            check_cell(&mut report, &scheme, &delta, &proj, &counts, here.len(), cap, &format!("stage 2, l = {l:?}, r = {r:?}, q = {q:?}"));
            let e = per_lr.entry((l, r)).or_default();
            e.0 += here.len() as u64;
            e.1 += 1;
        }
        for ((l, r), (total, contributing)) in per_lr {
            let counts: Vec<u64> = (0..sys.n)
                .map(|i| stage.indices[&(l.clone(), i, r[i])].forest.iter().filter(|t| t.top.r.contains(cell)).count() as u64)
                .collect();
            aggregate_check(&mut report, &delta, total, contributing, &counts);
        }
    }
    Ok(report)
}

/// Both stages of the vector-tree construction for one collection of multi-tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Reshuffle {
    pub levels: Vec<LeveledIndex>,
    pub stage1: Stage1,
    pub stage2: Stage2,
}

impl Reshuffle {
    pub fn run(sys: &TileSystem, p: &[MultiTile], forests: &[Vec<Tree>], energy: &[BTreeMap<Tile, f64>]) -> Reshuffle {
        let levels: Vec<LeveledIndex> = (0..sys.n)
            .map(|i| {
                let tiles: Vec<Tile> = p.iter().map(|mt| sys.tile(mt, i)).collect();
                let tops: Vec<Top> = forests[i].iter().map(|t| t.top.clone()).collect();
                fefferman_levels(&sys.ranks[i], i, &tiles, &tops, Order::Lesssim)
            })
            .collect();
        let stage1 = stage1_select(sys, &levels, p);
        let stage2 = stage2_reshuffle(sys, &stage1.singletons(), energy);
        Reshuffle { levels, stage1, stage2 }
    }

    pub fn verify(&self, sys: &TileSystem, forests: &[Vec<Tree>], cap: u64) -> Result<CountingReport, VectreeError> {
        let mut r = counting_bounds_stage1(sys, &self.levels, forests, &self.stage1, cap)?;
        r.merge(counting_bounds_stage2(sys, &self.stage2, cap)?);
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Σ_s |R_s|^{1−n/2} Π|⟨F_i, φ_{s_i}⟩| against |R_T| Π size_i(T_i).
pub fn vector_tree_estimate(sys: &TileSystem, vt: &VectorTree, table: &CoefficientTable) -> TreeEstimate {
    let n = sys.n as f64;
    let lhs: f64 = vt
        .tiles
        .iter()
        .map(|mt| volume(&mt.r).powf(1.0 - n / 2.0) * (0..sys.n).map(|i| table.get(&sys.tile(mt, i)).abs()).product::<f64>())
        .sum();
    let rhs = volume(&vt.top.r)
        * (0..sys.n)
            .map(|i| {
                let ctx = IndexData::from_table(sys, i, table);
                size(&ctx, &vt.projection(sys, i)).size
            })
            .product::<f64>();
    TreeEstimate { lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-12) + 1e-300 }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::random_generic;
    use crate::tiles::{generate_synthetic, synthetic_constants, SyntheticSpec};
    use crate::trees::size_decomposition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        sys: TileSystem,
        energy: Vec<BTreeMap<Tile, f64>>,
        forests: Vec<Vec<Tree>>,
    }

    fn fixture(seed: u64) -> Fixture {
        fixture_with(SyntheticSpec { seed, ..SyntheticSpec::default() })
    }

    fn fixture_with(spec: SyntheticSpec) -> Fixture {
        let seed = spec.seed;
        let basis = random_generic(4, 2, 3, 11);
        let sys = generate_synthetic(&spec, &basis, &synthetic_constants()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let energy: Vec<BTreeMap<Tile, f64>> =
            (0..sys.n).map(|i| sys.tiles_of(i).into_iter().map(|t| (t, rng.gen_range(1..64) as f64 / 64.0)).collect()).collect();
        let forests = (0..sys.n)
            .map(|i| {
                let ctx = IndexData::new(&sys, i, energy[i].clone());
                size_decomposition(&ctx, &sys.tiles_of(i)).levels.into_iter().flat_map(|l| l.trees).collect()
            })
            .collect();
        Fixture { sys, energy, forests }
    }

    fn brute_chains(x_len: usize, maps: &[Vec<usize>]) -> u64 {
        let d = maps.len() + 1;
        let mut count = 0;
        let total = x_len.pow(d as u32);
        for code in 0..total {
            let xs: Vec<usize> = (0..d).map(|j| code / x_len.pow(j as u32) % x_len).collect();
            if (0..d - 1).all(|i| maps[i][xs[i]] == maps[i][xs[i + 1]]) {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn katz_tao_examples() {
        let c = katz_tao_count(2, &[vec![0, 0]], &[1]);
        assert_eq!((c.count.as_str(), c.holds), ("4", true));
        let c = katz_tao_count(2, &[vec![0, 1]], &[2]);
        assert_eq!((c.count.as_str(), c.x_power.as_str(), c.holds), ("2", "4", true));
        assert_eq!(katz_tao_count(0, &[vec![]], &[1]).count, "0");
    }

    #[test]
    fn katz_tao_bound_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 2..=4usize {
            for _ in 0..200 {
                let x_len = rng.gen_range(1..7);
                let codomain: Vec<usize> = (0..d - 1).map(|_| rng.gen_range(1..5)).collect();
                let maps: Vec<Vec<usize>> = codomain.iter().map(|&a| (0..x_len).map(|_| rng.gen_range(0..a)).collect()).collect();
                let c = katz_tao_count(x_len, &maps, &codomain);
                assert_eq!(c.count, brute_chains(x_len, &maps).to_string());
                assert!(c.holds);
            }
        }
    }

    #[test]
    fn scheme_layouts() {
        let s = SchemeH::for_params(4, 2, 3).unwrap();
        assert_eq!((s.case, s.slots, s.links.clone(), s.entries.clone()), (SchemeCase::D2TwoScheme, 2, vec![0], vec![(0, 1), (1, 2)]));
        let s = SchemeH::for_params(4, 3, 5).unwrap();
        assert_eq!((s.case, s.slots, s.entries.len()), (SchemeCase::NEvenChain, 3, 3));
        let s = SchemeH::for_params(5, 3, 7).unwrap();
        assert_eq!((s.case, s.slots, s.links.clone()), (SchemeCase::NOddDOdd, 3, vec![0, 1]));
        // (m − 2)d + (d + 1)/2 entries.
        assert_eq!(s.entries.len(), 3 + 2);
        let s = SchemeH::for_params(5, 4, 9).unwrap();
        assert_eq!((s.case, s.slots, s.entries.len()), (SchemeCase::NOddDEven, 5, 5 + 3));
        let s = SchemeH::for_params(5, 1, 2).unwrap();
        assert_eq!((s.case, s.slots, s.entries.clone()), (SchemeCase::D1Simple, 1, vec![(0, 0), (0, 1)]));
        assert!(SchemeH::for_params(4, 1, 2).is_err());
        // The chained label carries the largest of the smallest counts.
        let s = SchemeH::for_params(4, 3, 5).unwrap();
        assert_eq!(s.labeling(&[5, 1, 3, 9]), vec![2, 1]);
        let s = SchemeH::for_params(5, 3, 7).unwrap();
        assert_eq!(s.labeling(&[4, 2, 8, 1, 6]), vec![3, 4, 1, 0]);
    }

    #[test]
    fn h_injectivity_small_cases() {
        let s = SchemeH::for_params(4, 2, 3).unwrap();
        let one = build_and_check_h(1, &[vec![0], vec![0], vec![0]], &s, 1000);
        assert!(one.injective && one.domain == 1);
        // Two members with equal projections everywhere collide.
        let two = build_and_check_h(2, &[vec![0, 0], vec![1, 1], vec![2, 2]], &s, 1000);
        assert!(!two.injective && two.witness.is_some());
        let sep = build_and_check_h(2, &[vec![0, 0], vec![1, 2], vec![3, 4]], &s, 1000);
        assert!(sep.injective && sep.domain == 4);
    }

    #[test]
    fn atom_cells_see_every_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let cubes: Vec<DyadicCube> = (0..rng.gen_range(1..10))
                .map(|_| {
                    let level = rng.gen_range(-3..=0);
                    let per = 4i64 << (-level);
                    DyadicCube { base: 2, level, index: vec![rng.gen_range(0..per), rng.gen_range(0..per)] }
                })
                .collect();
            let cells = atom_cells(&cubes);
            for c in &cells {
                assert!(cubes.iter().all(|q| q.contains(c) || !c.contains(q)));
            }
            // Every nonzero value of the counting function on fine cells appears at some atom cell.
            let n = CountingFunction::from_tops(&cubes);
            let at = |c: &DyadicCube| cubes.iter().filter(|q| q.contains(c)).count();
            let seen: BTreeSet<usize> = cells.iter().map(at).collect();
            for a in 0..32 {
                for b in 0..32 {
                    let v = n.at(&[(a as f64 + 0.5) / 8.0, (b as f64 + 0.5) / 8.0]) as usize;
                    assert!(v == 0 || seen.contains(&v));
                }
            }
        }
    }

    #[test]
    fn fefferman_levels_single_tree_and_uniqueness() {
        let f = fixture(0);
        let sys = &f.sys;
        let tiles = sys.tiles_of(1);
        let top = tiles.iter().max_by_key(|t| t.r.level).unwrap();
        let xi = sys.ranks[1].center[top.comp].clone();
        let inside: Vec<Tile> = tiles.iter().filter(|t| top.r.contains(&t.r) && sys.ranks[1].tilde[t.comp].contains_point(&xi)).cloned().collect();
        let lv = fefferman_levels(&sys.ranks[1], 1, &inside, &[Top { r: top.r.clone(), xi }], Order::Lesssim);
        assert!(lv.level_of.values().all(|&l| l == 0));
        for i in 0..sys.n {
            let tops: Vec<Top> = f.forests[i].iter().map(|t| t.top.clone()).collect();
            let lv = fefferman_levels(&sys.ranks[i], i, &sys.tiles_of(i), &tops, Order::Lesssim);
            assert!(lv.ambiguous.is_empty(), "index {i}: {:?}", lv.ambiguous);
            // Trees partition the tiles and sit under their tops.
            let total: usize = lv.trees.iter().map(|t| t.tiles.len()).sum();
            assert_eq!(total, sys.tiles_of(i).len());
            let full = CountingFunction::from_forest(&f.forests[i]);
            let mut cubes: Vec<DyadicCube> = lv.trees.iter().map(|t| t.top.r.clone()).collect();
            cubes.extend(f.forests[i].iter().map(|t| t.top.r.clone()));
            for l in lv.levels() {
                let part = lv.counting_at(l);
                for c in atom_cells(&cubes) {
                    let at = |n: &CountingFunction| n.tops.iter().filter(|(q, _)| q.contains(&c)).map(|(_, m)| m).sum::<u64>();
                    assert!(at(&part) <= at(&full), "index {i} level {l}");
                }
            }
        }
    }

    #[test]
    fn stage1_trivial_cases() {
        let f = fixture(1);
        let sys = &f.sys;
        let levels: Vec<LeveledIndex> = (0..sys.n).map(|i| fefferman_levels(&sys.ranks[i], i, &sys.tiles_of(i), &[], Order::Lesssim)).collect();
        let lowest = sys.tiles.iter().map(|t| t.r.level).min().unwrap();
        let flat: Vec<MultiTile> = sys.tiles.iter().filter(|t| t.r.level == lowest).cloned().collect();
        let st = stage1_select(sys, &levels, &flat);
        assert!(st.proper().is_empty());
        assert_eq!(st.singletons().values().map(Vec::len).sum::<usize>(), flat.len());
        let pair = sys
            .tiles
            .iter()
            .flat_map(|a| sys.tiles.iter().map(move |b| (a, b)))
            .find(|(a, b)| a.r.level < b.r.level && multi_lesssim(sys, a, b))
            .expect("planted scales nest");
        let st = stage1_select(sys, &levels, &[pair.0.clone(), pair.1.clone()]);
        let fam: Vec<&VectorTree> = st.families.values().flatten().collect();
        assert_eq!(fam.len(), 1);
        assert_eq!(fam[0].top, *pair.1);
        assert!(fam[0].is_proper() && fam[0].is_valid(sys));
    }

    #[test]
    fn full_reshuffle_passes_counting_checks() {
        for seed in 0..3 {
            let f = fixture(seed);
            let sys = &f.sys;
            let run = Reshuffle::run(sys, &sys.tiles, &f.forests, &f.energy);
            for lv in &run.levels {
                assert!(lv.ambiguous.is_empty());
            }
            for fam in run.stage1.families.values() {
                for vt in fam {
                    assert!(vt.is_valid(sys));
                    if vt.is_proper() {
                        assert!(vt.min_lacunary_per_tile(sys).unwrap() >= 2, "seed {seed}: {vt:?}");
                    }
                }
            }
            // Singletons form an antichain under ≲.
            for s in run.stage1.singletons().values() {
                for a in s {
                    for b in s {
                        assert!(a == b || !multi_lesssim(sys, a, b));
                    }
                }
            }
            let covered: usize = run.stage1.families.values().flatten().map(|t| t.tiles.len()).sum();
            assert_eq!(covered, sys.tiles.len());
            let report = run.verify(sys, &f.forests, 10_000).unwrap();
            assert!(report.pass(), "seed {seed}: {report:?}");
            assert!(report.checks > 0);
        }
    }

    #[test]
    fn dense_reshuffle_overlaps_and_passes() {
        // One spatial root and many cubes per tuple, so vector trees pile up at points.
        for seed in [3, 4] {
            let f = fixture_with(SyntheticSpec { seed, anchors: 12, width: 1, cubes_per_tuple: 8, ..SyntheticSpec::default() });
            let run = Reshuffle::run(&f.sys, &f.sys.tiles, &f.forests, &f.energy);
            let r = run.verify(&f.sys, &f.forests, 10_000).unwrap();
            assert!(r.pass(), "seed {seed}: {r:?}");
            assert!(r.max_count >= 2 && r.largest_domain >= 2, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn stage2_trivial_cases() {
        let f = fixture(2);
        let sys = &f.sys;
        assert!(stage2_reshuffle(sys, &BTreeMap::new(), &f.energy).families.is_empty());
        let one: BTreeMap<Vec<u32>, Vec<MultiTile>> = [(vec![0; 4], vec![sys.tiles[0].clone()])].into_iter().collect();
        let st = stage2_reshuffle(sys, &one, &f.energy);
        assert_eq!(st.families.len(), 1);
        assert_eq!(st.families.values().next().unwrap().len(), 1);
        assert!(counting_bounds_stage2(sys, &st, 1000).unwrap().pass());
    }

    #[test]
    fn vector_tree_estimate_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut trials = 0;
        for seed in 0..4 {
            let f = fixture(seed);
            let sys = &f.sys;
            let run = Reshuffle::run(sys, &sys.tiles, &f.forests, &f.energy);
            for vt in run.stage1.families.values().flatten() {
                let table = CoefficientTable {
                    per_index: (0..sys.n).map(|i| sys.tiles_of(i).into_iter().map(|t| (t, rng.gen_range(-1.0..1.0))).collect()).collect(),
                };
                let est = vector_tree_estimate(sys, vt, &table);
                assert!(est.pass, "{est:?}");
                if vt.tiles.len() == 1 {
                    assert!((est.lhs - est.rhs).abs() <= 1e-12 * est.rhs.max(1e-300));
                }
                trials += 1;
            }
        }
        assert!(trials >= 20);
        let empty = VectorTree { top: MultiTile { r: DyadicCube { base: 2, level: 0, index: vec![0, 0] }, tuple: 0 }, tiles: vec![] };
        let f = fixture(0);
        let table = CoefficientTable { per_index: vec![BTreeMap::new(); 4] };
        assert_eq!(vector_tree_estimate(&f.sys, &empty, &table).lhs, 0.0);
    }

    #[test]
    fn delta_for_the_basic_fractional_case() {
        assert_eq!(delta_exponent(4, 2, 3).unwrap(), ratio(3, 8));
    }

    #[test]
    fn delta_boundary_and_simple_cases() {
        assert!(matches!(delta_exponent(4, 1, 2), Err(VectreeError::OutOfScope { .. })));
        assert_eq!(delta_exponent(5, 1, 2).unwrap(), ratio(2, 5));
        assert_eq!(delta_exponent(7, 1, 3).unwrap(), ratio(3, 7));
    }

    #[test]
    fn chain_cases_stay_below_one_half() {
        for (n, d, k) in [(4, 3, 5), (4, 3, 4), (5, 3, 7), (5, 4, 9), (6, 3, 8)] {
            let delta = delta_exponent(n, d, k).unwrap();
            assert!(delta < ratio(1, 2), "({n},{d},{k}) gave {delta}");
            assert!(delta > Rat::zero());
        }
        // n even: ((d−1)/d + m − 1)/n.
        assert_eq!(delta_exponent(4, 3, 4).unwrap(), ratio(5, 12));
        // n odd, d odd: (m − 1/2 − 1/(2d))/n.
        assert_eq!(delta_exponent(5, 3, 7).unwrap(), ratio(7, 15));
        // n odd, d even: (m − 1/2 − 1/(2(d+1)))/n.
        assert_eq!(delta_exponent(5, 4, 9).unwrap(), ratio(12, 25));
    }
}
