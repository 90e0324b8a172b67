//! Frequency scaffolding: Whitney collections around Γ′, centralization into central
//! grids, and the derived collections O and Õ.
//!
//! `|R|` is the largest side length of a box. Boxes are half-open, so boxes that only
//! share a face do not intersect. Distances are Euclidean and compared in squared form.

use crate::linalg::{Matrix, Rat};
use crate::subspace::SubspaceBasis;
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Q = Ratio<i128>;

pub fn q(n: i128) -> Q {
    Q::from_integer(n)
}

pub fn q_to_string(x: &Q) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

pub fn q_from_str(s: &str) -> Option<Q> {
    match s.trim().split_once('/') {
        Some((a, b)) => {
            let (a, b): (i128, i128) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0).then(|| Q::new(a, b))
        }
        None => s.trim().parse().ok().map(Q::from_integer),
    }
}

pub fn q_to_rat(x: &Q) -> Rat {
    Rat::new(BigInt::from(*x.numer()), BigInt::from(*x.denom()))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid constants: {0}")]
    Config(String),
    #[error("centralization precondition fails for inputs {0} and {1}: {2}")]
    Precondition(usize, usize, String),
    #[error("centralization produced no central grid: {0}")]
    NotCentral(String),
    #[error("too many candidate cells ({0}); shrink the region or the level range")]
    TooManyCells(u128),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Box {
    pub lo: Vec<Q>,
    pub hi: Vec<Q>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    lo: Vec<String>,
    hi: Vec<String>,
}

impl Serialize for Box {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BoxRepr { lo: self.lo.iter().map(q_to_string).collect(), hi: self.hi.iter().map(q_to_string).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Box {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = BoxRepr::deserialize(d)?;
        let parse = |v: &[String]| -> Result<Vec<Q>, D::Error> {
            v.iter().map(|s| q_from_str(s).ok_or_else(|| serde::de::Error::custom(format!("bad rational {s:?}")))).collect()
        };
        let b = Box { lo: parse(&r.lo)?, hi: parse(&r.hi)? };
        if b.lo.len() != b.hi.len() || b.lo.iter().zip(&b.hi).any(|(a, c)| a >= c) {
            return Err(serde::de::Error::custom("empty or malformed box"));
        }
        Ok(b)
    }
}

impl Box {
    pub fn new(lo: Vec<Q>, hi: Vec<Q>) -> Self {
        assert!(lo.len() == hi.len() && lo.iter().zip(&hi).all(|(a, b)| a < b), "box must be nonempty");
        Box { lo, hi }
    }

    pub fn cube(corner: &[Q], side: Q) -> Self {
        Box::new(corner.to_vec(), corner.iter().map(|c| c + side).collect())
    }

    pub fn from_ints(lo: &[i128], hi: &[i128]) -> Self {
        Box::new(lo.iter().map(|&x| q(x)).collect(), hi.iter().map(|&x| q(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, a: usize) -> Q {
        self.hi[a] - self.lo[a]
    }

    /// |R|: the largest side.
    pub fn size(&self) -> Q {
        (0..self.dim()).map(|a| self.side(a)).max().expect("nonempty dimension")
    }

    pub fn center(&self) -> Vec<Q> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (a + b) / q(2)).collect()
    }

    /// Dilation by `c` about the center.
    pub fn scaled(&self, c: Q) -> Box {
        let center = self.center();
        let lo = (0..self.dim()).map(|a| center[a] - self.side(a) * c / q(2)).collect();
        let hi = (0..self.dim()).map(|a| center[a] + self.side(a) * c / q(2)).collect();
        Box { lo, hi }
    }

    pub fn contains_box(&self, other: &Box) -> bool {
        (0..self.dim()).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn contains_point(&self, p: &[Q]) -> bool {
        (0..self.dim()).all(|a| self.lo[a] <= p[a] && p[a] < self.hi[a])
    }

    pub fn intersects(&self, other: &Box) -> bool {
        (0..self.dim()).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }

    pub fn dist2(&self, other: &Box) -> Q {
        (0..self.dim())
            .map(|a| {
                let gap = (other.lo[a] - self.hi[a]).max(self.lo[a] - other.hi[a]).max(Q::zero());
                gap * gap
            })
            .sum()
    }

    pub fn diam2(&self) -> Q {
        (0..self.dim()).map(|a| self.side(a) * self.side(a)).sum()
    }

    /// Components of a product box split into blocks of length d.
    pub fn block(&self, i: usize, d: usize) -> Box {
        Box { lo: self.lo[i * d..(i + 1) * d].to_vec(), hi: self.hi[i * d..(i + 1) * d].to_vec() }
    }

    pub fn product(parts: &[Box]) -> Box {
        Box {
            lo: parts.iter().flat_map(|b| b.lo.iter().copied()).collect(),
            hi: parts.iter().flat_map(|b| b.hi.iter().copied()).collect(),
        }
    }
}

/// Dyadic-type cube: side base^level, corner = index · side.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub base: u32,
    pub level: i32,
    pub index: Vec<i64>,
}

pub fn pow_q(base: u32, level: i32) -> Q {
    let b = q(base as i128);
    if level >= 0 {
        (0..level).fold(q(1), |acc, _| acc * b)
    } else {
        (0..-level).fold(q(1), |acc, _| acc / b)
    }
}

impl DyadicCube {
    pub fn side(&self) -> Q {
        pow_q(self.base, self.level)
    }

    pub fn to_box(&self) -> Box {
        let s = self.side();
        let corner: Vec<Q> = self.index.iter().map(|&i| q(i as i128) * s).collect();
        Box::cube(&corner, s)
    }

    /// The dyadic (base 2) ancestor at `level` ≥ self.level.
    pub fn ancestor(&self, level: i32) -> DyadicCube {
        assert_eq!(self.base, 2);
        let shift = (level - self.level) as u32;
        DyadicCube { base: 2, level, index: self.index.iter().map(|&i| i.div_euclid(1 << shift)).collect() }
    }

    pub fn parent(&self) -> DyadicCube {
        self.ancestor(self.level + 1)
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level <= self.level && &other.ancestor(self.level) == self
    }

    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.index.len();
        (0..1usize << d)
            .map(|mask| DyadicCube {
                base: 2,
                level: self.level - 1,
                index: (0..d).map(|a| 2 * self.index[a] + ((mask >> (d - 1 - a)) & 1) as i64).collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConstants {
    pub c0: u64,
    pub c1: u64,
    pub c2: u64,
    pub c3: u64,
    pub c4: u64,
}

impl Default for GridConstants {
    fn default() -> Self {
        GridConstants { c0: 2, c1: 8, c2: 32, c3: 128, c4: 512 }
    }
}

impl GridConstants {
    pub fn new(c: [u64; 5]) -> Result<Self, GridError> {
        let g = GridConstants { c0: c[0], c1: c[1], c2: c[2], c3: c[3], c4: c[4] };
        g.validate()?;
        Ok(g)
    }

    pub fn as_array(&self) -> [u64; 5] {
        [self.c0, self.c1, self.c2, self.c3, self.c4]
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let c = self.as_array();
        if c[0] < 1 || c.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::Config(format!("constants must increase strictly, got {c:?}")));
        }
        if !self.c4.is_power_of_two() {
            return Err(GridError::Config(format!("C4 = {} is not a power of 2", self.c4)));
        }
        if self.c4 < 2 * self.c3 {
            return Err(GridError::Config(format!("C4 = {} is below 2·C3 = {}", self.c4, 2 * self.c3)));
        }
        Ok(())
    }

    /// The regime in which both Ō_i and 2C1·Ō_i can be centralized.
    pub fn validate_frequency_regime(&self) -> Result<(), GridError> {
        self.validate()?;
        if self.c3 + 2 * self.c1 >= self.c4 {
            return Err(GridError::Config(format!("C3 = {} ≥ C4 − 2C1 = {}", self.c3, self.c4 as i64 - 2 * self.c1 as i64)));
        }
        Ok(())
    }
}

/// An nd-cube ω̄ = ω̄_1 × … × ω̄_n of side C4^level.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FreqCube {
    pub level: i32,
    pub index: Vec<i64>,
}

impl FreqCube {
    pub fn to_cube(&self, c4: u64) -> DyadicCube {
        DyadicCube { base: c4 as u32, level: self.level, index: self.index.clone() }
    }

    pub fn to_box(&self, c4: u64) -> Box {
        self.to_cube(c4).to_box()
    }

    pub fn component(&self, i: usize, d: usize, c4: u64) -> Box {
        self.to_box(c4).block(i, d)
    }
}

fn solve_exact(a: &Matrix, b: &[Rat]) -> Option<Vec<Rat>> {
    a.inverse().map(|inv| inv.mul_vec(b))
}

/// Squared Euclidean distance from a box to the subspace, exact.
///
/// The minimum of |x − y|² over x in the box and y in Γ′ is attained on a face whose
/// relaxed problem has a unique minimizer, so it is enough to scan faces with a
/// nonsingular normal system and keep the feasible candidates.
pub fn box_subspace_dist2(b: &Box, s: &SubspaceBasis) -> Rat {
    let dim = b.dim();
    let basis: Vec<Vec<Rat>> = s.basis.clone();
    let k = basis.len();
    let lo: Vec<Rat> = b.lo.iter().map(q_to_rat).collect();
    let hi: Vec<Rat> = b.hi.iter().map(q_to_rat).collect();
    let mut best: Option<Rat> = None;
    let faces = 3usize.pow(dim as u32);
    let mut state = vec![0u8; dim];
    for f in 0..faces {
        let mut r = f;
        for st in state.iter_mut() {
            *st = (r % 3) as u8;
            r /= 3;
        }
        let free: Vec<usize> = (0..dim).filter(|&a| state[a] == 2).collect();
        let mut fixed = vec![Rat::zero(); dim];
        for a in 0..dim {
            fixed[a] = match state[a] {
                0 => lo[a].clone(),
                1 => hi[a].clone(),
                _ => Rat::zero(),
            };
        }
        // Variables z = (x_F, t); residual r = x − Σ t_j b_j.
        let nz = free.len() + k;
        let col = |c: usize| -> Vec<Rat> {
            if c < free.len() {
                (0..dim).map(|a| if a == free[c] { Rat::one() } else { Rat::zero() }).collect()
            } else {
                basis[c - free.len()].iter().map(|v| -v.clone()).collect()
            }
        };
        let cols: Vec<Vec<Rat>> = (0..nz).map(col).collect();
        let x = if nz == 0 {
            fixed.clone()
        } else {
            let mut ata = Matrix::zeros(nz, nz);
            let mut atb = vec![Rat::zero(); nz];
            for i in 0..nz {
                for j in 0..nz {
                    ata.set(i, j, crate::linalg::dot(&cols[i], &cols[j]));
                }
                atb[i] = -crate::linalg::dot(&cols[i], &fixed);
            }
            let Some(z) = solve_exact(&ata, &atb) else { continue };
            let feasible = free.iter().enumerate().all(|(c, &a)| z[c] >= lo[a] && z[c] <= hi[a]);
            if !feasible {
                continue;
            }
            let mut res = fixed.clone();
            for (c, v) in z.iter().enumerate() {
                for a in 0..dim {
                    res[a] += &cols[c][a] * v;
                }
            }
            res
        };
        let val = if nz == 0 { s.dist2(&x) } else { x.iter().map(|v| v * v).sum() };
        if best.as_ref().map_or(true, |bv| val < *bv) {
            best = Some(val);
        }
    }
    best.expect("vertices are always candidates")
}

fn c0_bounds(consts: &GridConstants) -> (Rat, Rat) {
    let c0 = Rat::from_integer(BigInt::from(consts.c0));
    let lower = c0.clone() / Rat::from_integer(BigInt::from(10));
    let upper = c0 * Rat::from_integer(BigInt::from(10));
    (lower.clone() * lower, upper.clone() * upper)
}

/// Whitney property (iii) for one cube, exact.
pub fn whitney_property(b: &Box, s: &SubspaceBasis, consts: &GridConstants) -> bool {
    let (lo2, hi2) = c0_bounds(consts);
    let diam2 = q_to_rat(&b.diam2());
    let dist2 = box_subspace_dist2(b, s);
    lo2 * diam2.clone() <= dist2 && dist2 <= hi2 * diam2
}

fn f64_dist_to_subspace(p: &[f64], s: &SubspaceBasis) -> f64 {
    // Orthonormalize the basis in floating point; the exact check follows.
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for v in &s.basis {
        let mut w: Vec<f64> = v.iter().map(crate::linalg::rat_to_f64).collect();
        for u in &ortho {
            let c: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
            for (wi, ui) in w.iter_mut().zip(u) {
                *wi -= c * ui;
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            ortho.push(w.iter().map(|a| a / norm).collect());
        }
    }
    let mut r = p.to_vec();
    for u in &ortho {
        let c: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum();
        for (ri, ui) in r.iter_mut().zip(u) {
            *ri -= c * ui;
        }
    }
    r.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Candidate cubes of side C4^l (l in `levels`, inclusive) inside `region` passing the
/// Whitney property, thinned greedily (coarse scales first, then lexicographic index)
/// so that equal-scale components are C4-separated and m components determine the rest.
pub fn whitney_cover(
    s: &SubspaceBasis,
    region: &Box,
    consts: &GridConstants,
    levels: (i32, i32),
    max_cells: u128,
) -> Result<Vec<FreqCube>, GridError> {
    consts.validate()?;
    let dim = s.n * s.d;
    if region.dim() != dim {
        return Err(GridError::Dimension(format!("region has dimension {}, expected {dim}", region.dim())));
    }
    let (lmin, lmax) = levels;
    let mut candidates: Vec<FreqCube> = Vec::new();
    let c0 = consts.c0 as f64;
    for level in (lmin..=lmax).rev() {
        let side = pow_q(consts.c4 as u32, level);
        let ranges: Vec<(i64, i64)> = (0..dim)
            .map(|a| {
                let lo = (region.lo[a] / side).ceil().to_integer() as i64;
                let hi = (region.hi[a] / side).floor().to_integer() as i64;
                (lo, hi)
            })
            .collect();
        let count: u128 = ranges.iter().map(|(a, b)| (b - a).max(0) as u128).product();
        if count > max_cells {
            return Err(GridError::TooManyCells(count));
        }
        if count == 0 {
            continue;
        }
        let sf = q_to_f64(&side);
        let diam = sf * (dim as f64).sqrt();
        let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        'cells: loop {
            let center: Vec<f64> = idx.iter().map(|&i| (i as f64 + 0.5) * sf).collect();
            let dc = f64_dist_to_subspace(&center, s);
            // dist(cube) ∈ [dc − diam/2, dc].
            let plausible = dc + 1e-9 * diam >= 0.1 * c0 * diam && dc - diam / 2.0 <= 10.0 * c0 * diam + 1e-9 * diam;
            if plausible {
                let cube = FreqCube { level, index: idx.clone() };
                if whitney_property(&cube.to_box(consts.c4), s, consts) {
                    candidates.push(cube);
                }
            }
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < ranges[a].1 {
                    continue 'cells;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
    }
    let m = s.k.div_ceil(s.d);
    let mut accepted: Vec<FreqCube> = Vec::new();
    for c in candidates {
        let ok = accepted.iter().all(|a| separated(a, &c, s.n, s.d, consts) && rank_ok(a, &c, s.n, s.d, m));
        if ok {
            accepted.push(c);
        }
    }
    Ok(accepted)
}

fn separated(a: &FreqCube, b: &FreqCube, n: usize, d: usize, consts: &GridConstants) -> bool {
    if a.level != b.level {
        return true;
    }
    let side = pow_q(consts.c4 as u32, a.level);
    let need = side * q(consts.c4 as i128);
    (0..n).all(|i| {
        let (ai, bi) = (&a.index[i * d..(i + 1) * d], &b.index[i * d..(i + 1) * d]);
        ai == bi || {
            let (x, y) = (a.component(i, d, consts.c4), b.component(i, d, consts.c4));
            x.dist2(&y) >= need * need
        }
    })
}

fn same_component(a: &FreqCube, b: &FreqCube, i: usize, d: usize) -> bool {
    a.level == b.level && a.index[i * d..(i + 1) * d] == b.index[i * d..(i + 1) * d]
}

/// (iv) for one pair: agreement on any m components forces agreement on all.
fn rank_ok(a: &FreqCube, b: &FreqCube, n: usize, d: usize, m: usize) -> bool {
    if m == 0 || a == b {
        return true;
    }
    let agree = (0..n).filter(|&i| same_component(a, b, i, d)).count();
    agree < m
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxiomResult {
    pub axiom: String,
    pub pass: bool,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub results: Vec<AxiomResult>,
}

impl AxiomReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, axiom: &str) -> Option<&AxiomResult> {
        self.results.iter().find(|r| r.axiom == axiom)
    }

    fn push(&mut self, axiom: &str, witness: Option<String>) {
        self.results.push(AxiomResult { axiom: axiom.into(), pass: witness.is_none(), witness });
    }
}

fn first_pair<T>(items: &[T], mut bad: impl FnMut(&T, &T) -> bool) -> Option<(usize, usize)> {
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if bad(&items[i], &items[j]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Checks (i)–(iv) on a collection of nd-cubes given as boxes.
pub fn verify_whitney_axioms(collection: &[Box], s: &SubspaceBasis, consts: &GridConstants) -> AxiomReport {
    let (n, d) = (s.n, s.d);
    let m = s.k.div_ceil(d);
    let c4 = q(consts.c4 as i128);
    let mut report = AxiomReport { results: Vec::new() };
    let scale_bad = collection.iter().position(|b| {
        let side = b.side(0);
        !(0..b.dim()).all(|a| b.side(a) == side) || !is_power_of(side, consts.c4)
    });
    report.push("(i)", scale_bad.map(|i| format!("cube {i} is not a cube of side C4^l")));
    let comps: Vec<Vec<Box>> = collection.iter().map(|b| (0..n).map(|i| b.block(i, d)).collect()).collect();
    let mut sep = None;
    'outer: for i in 0..n {
        for a in 0..collection.len() {
            for b in a + 1..collection.len() {
                let (x, y) = (&comps[a][i], &comps[b][i]);
                if x != y && x.size() == y.size() {
                    let need = c4 * x.size();
                    if x.dist2(y) < need * need {
                        sep = Some(format!("component {i} of cubes {a} and {b}"));
                        break 'outer;
                    }
                }
            }
        }
    }
    report.push("(ii)", sep);
    let whit = collection.iter().position(|b| !whitney_property(b, s, consts));
    report.push("(iii)", whit.map(|i| format!("cube {i}")));
    let rank = if m == 0 {
        None
    } else {
        first_pair(&comps, |x, y| {
            x != y && (0..n).filter(|&i| x[i] == y[i]).count() >= m
        })
        .map(|(a, b)| format!("cubes {a} and {b} share {m} components"))
    };
    report.push("(iv)", rank);
    report
}

fn is_power_of(x: Q, base: u64) -> bool {
    let b = q(base as i128);
    let mut y = x;
    if y <= Q::zero() {
        return false;
    }
    while y > q(1) {
        y /= b;
    }
    while y < q(1) {
        y *= b;
    }
    y == q(1)
}

/// The two hypotheses of the centralization lemma, with sizes compared by largest side:
/// distinct sizes differ by a factor ≥ C3 and equal sizes are C3·size apart.
pub fn check_centralization_precondition(cubes: &[Box], c3: u64) -> Result<(), GridError> {
    let c3q = q(c3 as i128);
    for i in 0..cubes.len() {
        for j in i + 1..cubes.len() {
            let (a, b) = (&cubes[i], &cubes[j]);
            let (sa, sb) = (a.size(), b.size());
            if sa == sb {
                let need = c3q * sa;
                if a.dist2(b) < need * need {
                    return Err(GridError::Precondition(i, j, "equal sizes closer than C3·size".into()));
                }
            } else {
                let (small, big) = if sa < sb { (sa, sb) } else { (sb, sa) };
                if c3q * small > big {
                    return Err(GridError::Precondition(i, j, "sizes differ by less than C3".into()));
                }
            }
        }
    }
    Ok(())
}

/// Picks the midpoint of the longest piece of [lo, hi] left free by the open intervals.
fn free_point(lo: Q, hi: Q, forbidden: &mut [(Q, Q)]) -> Option<Q> {
    forbidden.sort();
    let mut best: Option<(Q, Q)> = None;
    let mut cur = lo;
    let consider = |a: Q, b: Q, best: &mut Option<(Q, Q)>| {
        if a <= b && best.map_or(true, |(x, y)| b - a > y - x) {
            *best = Some((a, b));
        }
    };
    for &(u, v) in forbidden.iter() {
        if v <= cur || u >= hi {
            continue;
        }
        if u > cur {
            consider(cur, u.min(hi), &mut best);
        }
        cur = cur.max(v);
        if cur >= hi {
            break;
        }
    }
    if cur <= hi {
        consider(cur, hi, &mut best);
    }
    best.map(|(a, b)| (a + b) / q(2))
}

/// Enlarges each cube R̄ to a box R with R̄ ⊂ R ⊂ 2R̄ so that the family is a central grid.
///
/// Cubes are processed from small to large. For each face of a larger cube the position
/// is chosen inside its allowed window so that every smaller finished box either lies
/// C2-deep inside or entirely outside; same-size boxes are kept apart by the C3 hypothesis.
/// The result is verified before it is returned.
pub fn centralize(cubes: &[Box], consts: &GridConstants) -> Result<Vec<Box>, GridError> {
    consts.validate()?;
    check_centralization_precondition(cubes, consts.c3)?;
    let c2 = q(consts.c2 as i128);
    let mut order: Vec<usize> = (0..cubes.len()).collect();
    order.sort_by(|&a, &b| cubes[a].size().cmp(&cubes[b].size()).then(cubes[a].cmp(&cubes[b])));
    let mut out: Vec<Option<Box>> = vec![None; cubes.len()];
    let mut done: Vec<usize> = Vec::new();
    for &i in &order {
        let c = &cubes[i];
        let dim = c.dim();
        let outer = c.scaled(q(2));
        let mut lo = c.lo.clone();
        let mut hi = c.hi.clone();
        let smaller: Vec<&Box> = done
            .iter()
            .map(|&j| out[j].as_ref().expect("processed"))
            .filter(|b| b.size() < c.size() && b.intersects(&outer))
            .collect();
        for a in 0..dim {
            let half = c.side(a) / q(2);
            let mut lower_bad: Vec<(Q, Q)> = Vec::new();
            let mut upper_bad: Vec<(Q, Q)> = Vec::new();
            for b in &smaller {
                let deep = b.scaled(c2);
                lower_bad.push((deep.lo[a], b.hi[a]));
                upper_bad.push((b.lo[a], deep.hi[a]));
            }
            // Prefer positions strictly outside the forbidden intervals.
            lo[a] = free_point(c.lo[a] - half, c.lo[a], &mut lower_bad)
                .ok_or_else(|| GridError::NotCentral(format!("no admissible lower face for input {i}, axis {a}")))?;
            hi[a] = free_point(c.hi[a], c.hi[a] + half, &mut upper_bad)
                .ok_or_else(|| GridError::NotCentral(format!("no admissible upper face for input {i}, axis {a}")))?;
        }
        let r = Box { lo, hi };
        debug_assert!(r.contains_box(c) && outer.contains_box(&r));
        out[i] = Some(r);
        done.push(i);
    }
    let result: Vec<Box> = out.into_iter().map(|b| b.expect("all processed")).collect();
    let report = is_central_grid(&result, consts.c2);
    if !report.pass() {
        let w = report.results.iter().find(|r| !r.pass).and_then(|r| r.witness.clone()).unwrap_or_default();
        return Err(GridError::NotCentral(w));
    }
    Ok(result)
}

/// (G1) nested or disjoint.
pub fn check_g1(g: &[Box]) -> Option<(usize, usize)> {
    first_pair(g, |a, b| a.intersects(b) && !a.contains_box(b) && !b.contains_box(a))
}

/// (G1)–(G4) with margin constant C2.
pub fn is_central_grid(g: &[Box], c2: u64) -> AxiomReport {
    let c2q = q(c2 as i128);
    let mut report = AxiomReport { results: Vec::new() };
    report.push("(G1)", check_g1(g).map(|(i, j)| format!("boxes {i} and {j} overlap without nesting")));
    let g2 = first_pair(g, |a, b| {
        (a != b && a.contains_box(b) && !a.contains_box(&b.scaled(c2q)))
            || (a != b && b.contains_box(a) && !b.contains_box(&a.scaled(c2q)))
    });
    report.push("(G2)", g2.map(|(i, j)| format!("boxes {i} and {j} nest without a C2 margin")));
    let g3 = first_pair(g, |a, b| {
        let (x, y) = if a.size() <= b.size() { (a.size(), b.size()) } else { (b.size(), a.size()) };
        q(2) * x < y && c2q * x >= y
    });
    report.push("(G3)", g3.map(|(i, j)| format!("boxes {i} and {j} have sizes between 2 and C2 apart")));
    let g4 = first_pair(g, |a, b| {
        let (x, y) = if a.size() <= b.size() { (a.size(), b.size()) } else { (b.size(), a.size()) };
        if x < y && y <= q(2) * x {
            let need = c2q * y;
            a.dist2(b) < need * need
        } else {
            false
        }
    });
    report.push("(G4)", g4.map(|(i, j)| format!("boxes {i} and {j} are near in size and in space")));
    report
}

/// (G1) only: the plain grid property.
pub fn is_grid(g: &[Box]) -> bool {
    check_g1(g).is_none()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyCollections {
    pub n: usize,
    pub d: usize,
    /// Per index: the distinct components ω̄_i.
    pub bar: Vec<Vec<Box>>,
    pub omega: Vec<Vec<Box>>,
    pub tilde: Vec<Vec<Box>>,
    /// Per nd-cube: the index of its i-th component in bar[i].
    pub members: Vec<Vec<usize>>,
}

impl FrequencyCollections {
    /// Containments ω̄ ⊆ ω ⊆ 2ω̄ and 2C1ω̄ ⊆ ω̃ ⊆ 4C1ω̄ for every component.
    pub fn containments_hold(&self, c1: u64) -> bool {
        let c1q = q(c1 as i128);
        (0..self.n).all(|i| {
            self.bar[i].iter().enumerate().all(|(j, b)| {
                let (w, t) = (&self.omega[i][j], &self.tilde[i][j]);
                w.contains_box(b)
                    && b.scaled(q(2)).contains_box(w)
                    && t.contains_box(&b.scaled(q(2) * c1q))
                    && b.scaled(q(4) * c1q).contains_box(t)
            })
        })
    }
}

pub fn build_frequency_collections(
    cubes: &[Box],
    n: usize,
    d: usize,
    consts: &GridConstants,
) -> Result<FrequencyCollections, GridError> {
    consts.validate_frequency_regime()?;
    let mut bar: Vec<Vec<Box>> = vec![Vec::new(); n];
    let mut members = Vec::with_capacity(cubes.len());
    for c in cubes {
        if c.dim() != n * d {
            return Err(GridError::Dimension(format!("cube of dimension {} in an n·d = {} collection", c.dim(), n * d)));
        }
        let mut row = Vec::with_capacity(n);
        for (i, list) in bar.iter_mut().enumerate() {
            let comp = c.block(i, d);
            let pos = list.iter().position(|b| *b == comp).unwrap_or_else(|| {
                list.push(comp);
                list.len() - 1
            });
            row.push(pos);
        }
        members.push(row);
    }
    let scale = q(2 * consts.c1 as i128);
    let mut omega = Vec::with_capacity(n);
    let mut tilde = Vec::with_capacity(n);
    for list in &bar {
        omega.push(centralize(list, consts)?);
        let enlarged: Vec<Box> = list.iter().map(|b| b.scaled(scale)).collect();
        tilde.push(centralize(&enlarged, consts)?);
    }
    Ok(FrequencyCollections { n, d, bar, omega, tilde, members })
}

/// Sparse random cube families in [−2, 2]^d satisfying the centralization hypotheses:
/// sizes 2^{−j·g} with 2^g ≥ C3, equal sizes C3-separated.
pub fn random_sparse_cubes(d: usize, count: usize, consts: &GridConstants, rng: &mut impl rand::Rng) -> Vec<Box> {
    let gap = 64 - (consts.c3 - 1).leading_zeros();
    let mut out: Vec<Box> = Vec::new();
    let levels = 3;
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let j = rng.gen_range(0..levels) as u32;
        let side = pow_q(2, -((j * gap) as i32));
        let span = 2i128 << (j * gap);
        let corner: Vec<Q> = (0..d).map(|_| q(rng.gen_range(-span..span)) * side).collect();
        let b = Box::cube(&corner, side);
        let mut trial = out.clone();
        trial.push(b.clone());
        if check_centralization_precondition(&trial, consts.c3).is_ok() {
            out.push(b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn origin_2d() -> SubspaceBasis {
        SubspaceBasis::new(2, 1, vec![]).unwrap()
    }

    #[test]
    fn distance_to_a_line_and_to_the_origin() {
        let b = Box::from_ints(&[1, 2], &[2, 3]);
        assert_eq!(box_subspace_dist2(&b, &origin_2d()), rat(5));
        // Line through (1, −1); the box touching it gives 0.
        let line = SubspaceBasis::new(2, 1, vec![vec![rat(1), rat(-1)]]).unwrap();
        assert_eq!(box_subspace_dist2(&Box::from_ints(&[0, -1], &[1, 0]), &line), rat(0));
        // Box [2,3]×[2,3] and the antidiagonal: nearest corner (2,2), distance² = 8.
        assert_eq!(box_subspace_dist2(&Box::from_ints(&[2, 2], &[3, 3]), &line), rat(8));
    }

    #[test]
    fn whitney_around_the_origin_passes_all_axioms() {
        let consts = GridConstants::new([2, 3, 5, 7, 16]).unwrap();
        let s = origin_2d();
        let region = Box::from_ints(&[-8, -8], &[8, 8]);
        let cover = whitney_cover(&s, &region, &consts, (-1, 0), 1 << 20).unwrap();
        assert!(!cover.is_empty());
        let boxes: Vec<Box> = cover.iter().map(|c| c.to_box(consts.c4)).collect();
        let report = verify_whitney_axioms(&boxes, &s, &consts);
        assert!(report.pass(), "{report:?}");
        // Several scales appear.
        let levels: std::collections::BTreeSet<i32> = cover.iter().map(|c| c.level).collect();
        assert!(levels.len() >= 2);
    }

    #[test]
    fn far_region_gives_empty_cover() {
        let consts = GridConstants::new([2, 3, 5, 7, 16]).unwrap();
        let region = Box::from_ints(&[1000, 1000], &[1001, 1001]);
        assert!(whitney_cover(&origin_2d(), &region, &consts, (-1, 0), 1 << 20).unwrap().is_empty());
    }

    #[test]
    fn injected_close_pair_fails_separation() {
        let consts = GridConstants::default();
        let s = origin_2d();
        let a = Box::from_ints(&[100, 0], &[101, 1]);
        let b = Box::from_ints(&[103, 0], &[104, 1]);
        let r = verify_whitney_axioms(&[a.clone(), b], &s, &consts);
        assert!(!r.get("(ii)").unwrap().pass);
        let single = verify_whitney_axioms(&[a], &s, &consts);
        assert!(single.get("(i)").unwrap().pass && single.get("(ii)").unwrap().pass && single.get("(iv)").unwrap().pass);
    }

    #[test]
    fn central_grid_examples() {
        let unit = Box::from_ints(&[0, 0], &[1, 1]);
        assert!(is_central_grid(&[unit.clone()], 32).pass());
        let shifted = Box::new(vec![Q::new(1, 2), q(0)], vec![Q::new(3, 2), q(1)]);
        let r = is_central_grid(&[unit, shifted], 32);
        assert!(!r.get("(G1)").unwrap().pass);
    }

    #[test]
    fn centralize_sparse_families() {
        let consts = GridConstants::new([2, 4, 8, 32, 1024]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cubes = random_sparse_cubes(2, 12, &consts, &mut rng);
            let g = centralize(&cubes, &consts).unwrap();
            for (c, r) in cubes.iter().zip(&g) {
                assert!(r.contains_box(c) && c.scaled(q(2)).contains_box(r));
            }
            assert!(is_central_grid(&g, consts.c2).pass());
        }
    }

    #[test]
    fn nested_input_gets_margins() {
        let consts = GridConstants::new([2, 4, 8, 32, 1024]).unwrap();
        let big = Box::from_ints(&[0, 0], &[64, 64]);
        let small = Box::from_ints(&[1, 30], &[2, 31]);
        let g = centralize(&[big, small], &consts).unwrap();
        assert!(g[0].contains_box(&g[1].scaled(q(8))));
    }

    #[test]
    fn centralize_rejects_close_equal_cubes() {
        let consts = GridConstants::default();
        let a = Box::from_ints(&[0, 0], &[1, 1]);
        let b = Box::from_ints(&[3, 0], &[4, 1]);
        assert!(matches!(centralize(&[a, b], &consts), Err(GridError::Precondition(0, 1, _))));
    }

    #[test]
    fn constants_validation() {
        assert!(GridConstants::new([2, 8, 32, 128, 512]).is_ok());
        assert!(GridConstants::new([2, 8, 32, 128, 500]).is_err());
        assert!(GridConstants::new([2, 600, 700, 800, 1024]).is_err());
        let tight = GridConstants { c0: 2, c1: 100, c2: 200, c3: 300, c4: 512 };
        assert!(tight.validate().is_err() || tight.validate_frequency_regime().is_err());
        let g = GridConstants { c0: 2, c1: 200, c2: 210, c3: 220, c4: 512 };
        assert!(matches!(g.validate_frequency_regime(), Err(GridError::Config(_))));
    }

    #[test]
    fn frequency_collections_from_a_single_cube() {
        let consts = GridConstants::new([2, 4, 8, 32, 1024]).unwrap();
        let cube = Box::from_ints(&[0, 5], &[1, 6]);
        let fc = build_frequency_collections(&[cube], 2, 1, &consts).unwrap();
        assert_eq!(fc.omega[0].len(), 1);
        assert!(fc.containments_hold(consts.c1));
    }

    #[test]
    fn dyadic_ancestry() {
        let c = DyadicCube { base: 2, level: -2, index: vec![3, -1] };
        assert_eq!(c.parent(), DyadicCube { base: 2, level: -1, index: vec![1, -1] });
        assert!(c.ancestor(0).contains(&c));
        assert_eq!(c.children().len(), 4);
        assert!(c.children().iter().all(|ch| c.contains(ch)));
    }

    #[test]
    fn box_json_round_trip() {
        let b = Box::new(vec![Q::new(1, 3), q(0)], vec![q(1), Q::new(5, 2)]);
        let s = serde_json::to_string(&b).unwrap();
        let back: Box = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
    }
}
