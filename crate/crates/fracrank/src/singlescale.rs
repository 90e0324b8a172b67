//! Single-scale experiments on the torus Z_N^d: form evaluation on both sides of the
//! Fourier transform, level-set counting, true complexity and the two counterexamples.
//!
//! Fourier convention: F̂(ξ) = N^{-d} Σ_x F(x) e(−x·ξ/N), so F(x) = Σ_ξ F̂(ξ) e(x·ξ/N).

use crate::linalg::Matrix;
use crate::subspace::{self, SubspaceBasis, SubspaceError};
use num_bigint::BigUint;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SingleScaleError {
    #[error("N = {0} is not an odd prime")]
    NotOddPrime(usize),
    #[error("field shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error("no generic form found for (n,d,k) = ({0},{1},{2}) within the search budget")]
    NoGenericForm(usize, usize, usize),
}

pub fn e(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, std::f64::consts::TAU * theta)
}

/// Unnormalized FFT over every axis of a row-major n^d array.
pub fn fft_nd(data: &mut [Complex64], n: usize, d: usize, forward: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) };
    let mut line = vec![Complex64::default(); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + off + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[base + off + j * stride] = *l;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusField {
    pub n_mod: usize,
    pub d: usize,
    /// Row-major over Z_N^d, first coordinate most significant.
    pub values: Vec<Complex64>,
}

impl TorusField {
    pub fn new(n_mod: usize, d: usize, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), n_mod.pow(d as u32), "field length must be N^d");
        TorusField { n_mod, d, values }
    }

    pub fn from_fn(n_mod: usize, d: usize, f: impl Fn(&[usize]) -> Complex64) -> Self {
        let len = n_mod.pow(d as u32);
        let mut x = vec![0; d];
        let values = (0..len)
            .map(|idx| {
                unflatten(idx, n_mod, &mut x);
                f(&x)
            })
            .collect();
        TorusField { n_mod, d, values }
    }

    pub fn constant(n_mod: usize, d: usize, c: Complex64) -> Self {
        Self::new(n_mod, d, vec![c; n_mod.pow(d as u32)])
    }

    pub fn random_signs(n_mod: usize, d: usize, rng: &mut impl Rng) -> Self {
        let len = n_mod.pow(d as u32);
        let values = (0..len).map(|_| Complex64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0)).collect();
        Self::new(n_mod, d, values)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.n_mod, self.d, self.values.iter().map(|v| v.conj()).collect())
    }

    /// Averaged-convention transform, one FFT pass per axis.
    pub fn dft(&self) -> TorusField {
        let mut data = self.values.clone();
        fft_nd(&mut data, self.n_mod, self.d, true);
        let scale = 1.0 / (self.n_mod as f64).powi(self.d as i32);
        for v in &mut data {
            *v *= scale;
        }
        TorusField::new(self.n_mod, self.d, data)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// E_x |F(x)|².
    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.values.len() as f64
    }

    pub fn sum_square(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

fn unflatten(mut idx: usize, n: usize, out: &mut [usize]) {
    for a in (0..out.len()).rev() {
        out[a] = idx % n;
        idx /= n;
    }
}

fn flatten(x: &[usize], n: usize) -> usize {
    x.iter().fold(0, |acc, &v| acc * n + v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// forms[i] is a d × D integer matrix, D = d(n−1) − k.
    pub forms: Vec<Vec<Vec<i64>>>,
}

impl FormSpec {
    pub fn big_d(&self) -> usize {
        self.d * (self.n - 1) - self.k
    }

    pub fn subspace(&self) -> Result<SubspaceBasis, SubspaceError> {
        let mats: Vec<Matrix> = self.forms.iter().map(|f| Matrix::from_i64(f)).collect();
        subspace::build_from_forms(self.n, self.d, self.k, &mats)
    }

    /// Trilinear Hilbert pattern t ↦ (t, −t, 2t) on Z_N.
    pub fn trilinear_hilbert() -> Self {
        FormSpec { n: 4, d: 1, k: 2, forms: vec![vec![vec![1]], vec![vec![-1]], vec![vec![2]]] }
    }

    /// (x, y, t, s) ↦ F_1(x+t, y) F_2(x, y+s) F_3(x, y).
    pub fn degenerate_planar() -> Self {
        FormSpec {
            n: 3,
            d: 2,
            k: 2,
            forms: vec![vec![vec![1, 0], vec![0, 0]], vec![vec![0, 0], vec![0, 1]]],
        }
    }

    /// First seeded spec with entries in [−3, 3] whose subspace passes every minor and
    /// two-scheme check, and whose constraint module mod each N in `moduli` has N^k
    /// elements with all m-projections and all two-schemes injective.
    pub fn generic(n: usize, d: usize, k: usize, seed: u64, moduli: &[usize]) -> Result<Self, SingleScaleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let big_d = d * (n - 1) - k;
        for _ in 0..2000 {
            let forms: Vec<Vec<Vec<i64>>> = (0..n - 1)
                .map(|_| (0..d).map(|_| (0..big_d).map(|_| rng.gen_range(-3..=3)).collect()).collect())
                .collect();
            let spec = FormSpec { n, d, k, forms };
            let Ok(s) = spec.subspace() else { continue };
            if !subspace::genericity_report(&s, seed).pass {
                continue;
            }
            if moduli.iter().all(|&nm| ConstraintSet::new(&spec, nm).is_generic_mod()) {
                return Ok(spec);
            }
        }
        Err(SingleScaleError::NoGenericForm(n, d, k))
    }
}

/// Diagonalizes an integer matrix by unimodular row and column operations,
/// returning the diagonal and the accumulated column transform V (A·V = U⁻¹·diag).
fn diagonalize(a: &[Vec<i128>], cols: usize) -> (Vec<i128>, Vec<Vec<i128>>) {
    let rows = a.len();
    let mut m: Vec<Vec<i128>> = a.to_vec();
    let mut v: Vec<Vec<i128>> = (0..cols).map(|i| (0..cols).map(|j| i128::from(i == j)).collect()).collect();
    let mut diag = Vec::new();
    for t in 0..rows.min(cols) {
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in t..rows {
                for j in t..cols {
                    if m[i][j] != 0 && best.map_or(true, |(bi, bj)| m[i][j].abs() < m[bi][bj].abs()) {
                        best = Some((i, j));
                    }
                }
            }
            let Some((bi, bj)) = best else {
                return (diag, v);
            };
            m.swap(t, bi);
            for row in m.iter_mut() {
                row.swap(t, bj);
            }
            for row in v.iter_mut() {
                row.swap(t, bj);
            }
            let p = m[t][t];
            let mut clean = true;
            for i in t + 1..rows {
                let q = m[i][t].div_euclid(p);
                if q != 0 {
                    for j in t..cols {
                        m[i][j] -= q * m[t][j];
                    }
                }
                clean &= m[i][t] == 0;
            }
            for j in t + 1..cols {
                let q = m[t][j].div_euclid(p);
                if q != 0 {
                    for row in m.iter_mut() {
                        row[j] -= q * row[t];
                    }
                    for row in v.iter_mut() {
                        row[j] -= q * row[t];
                    }
                }
                clean &= m[t][j] == 0;
            }
            if clean {
                diag.push(p);
                break;
            }
        }
    }
    (diag, v)
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// All frequency tuples (ξ_1, …, ξ_n) ∈ (Z_N^d)^n on the constraint set of a form.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub n: usize,
    pub d: usize,
    pub n_mod: usize,
    pub k: usize,
    pub m: usize,
    /// tuples[t][i] = flattened index of ξ_i.
    pub tuples: Vec<Vec<usize>>,
}

impl ConstraintSet {
    pub fn new(spec: &FormSpec, n_mod: usize) -> Self {
        let (n, d) = (spec.n, spec.d);
        let big_d = spec.big_d();
        let cols = d * (n - 1);
        // Row t: Σ_i (l_i)_{·,t} · ξ_i ≡ 0.
        let a: Vec<Vec<i128>> = (0..big_d)
            .map(|t| {
                let mut row = vec![0i128; cols];
                for (i, f) in spec.forms.iter().enumerate() {
                    for c in 0..d {
                        row[i * d + c] = f[c][t] as i128;
                    }
                }
                row
            })
            .collect();
        let (diag, v) = diagonalize(&a, cols);
        let nm = n_mod as i128;
        // Allowed values per z-coordinate.
        let ranges: Vec<Vec<i128>> = (0..cols)
            .map(|j| match diag.get(j) {
                Some(&s) => {
                    let g = gcd(s, nm);
                    (0..g).map(|t| t * (nm / g)).collect()
                }
                None => (0..nm).collect(),
            })
            .collect();
        let mut tuples = Vec::new();
        let mut z = vec![0i128; cols];
        let mut y = vec![0usize; cols];
        let mut xi = vec![0usize; d];
        enumerate(&ranges, 0, &mut z, &mut |z| {
            for (r, yr) in y.iter_mut().enumerate() {
                let s: i128 = (0..cols).map(|c| v[r][c] * z[c]).sum();
                *yr = s.rem_euclid(nm) as usize;
            }
            let mut tuple = Vec::with_capacity(n);
            for i in 0..n - 1 {
                tuple.push(flatten(&y[i * d..(i + 1) * d], n_mod));
            }
            for c in 0..d {
                let s: usize = (0..n - 1).map(|i| y[i * d + c]).sum();
                xi[c] = (n_mod - s % n_mod) % n_mod;
            }
            tuple.push(flatten(&xi, n_mod));
            tuples.push(tuple);
        });
        tuples.sort();
        ConstraintSet { n, d, n_mod, k: spec.k, m: spec.k.div_ceil(d), tuples }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Every choice of m components determines the tuple.
    pub fn projections_injective(&self) -> bool {
        subspace::coordinate_subsets(self.n, self.m).iter().all(|a| {
            let mut seen = std::collections::HashSet::new();
            self.tuples.iter().all(|t| seen.insert(a.iter().map(|&i| t[i]).collect::<Vec<_>>()))
        })
    }

    /// Pairs (τ, τ′) with τ_{i1} = τ′_{i1} are determined by (τ_{i2..im}, τ′_{i(m+1)..}),
    /// for every ordered choice of 2m − 1 distinct indices.
    pub fn two_schemes_injective(&self) -> bool {
        let l = 2 * self.m - 1;
        if l > self.n || self.m < 2 {
            return true;
        }
        subspace::all_two_schemes(self.n, self.m, l).iter().all(|sp| {
            let idx = &sp.indices;
            let (g1, g2) = idx[1..].split_at(self.m - 1);
            // Linear map: kernel must be trivial. Pairs with g1-components of τ zero and
            // g2-components of τ′ zero, sharing the i1-component.
            let zero = 0usize;
            let left: Vec<&Vec<usize>> = self.tuples.iter().filter(|t| g1.iter().all(|&i| t[i] == zero)).collect();
            let right: Vec<&Vec<usize>> = self.tuples.iter().filter(|t| g2.iter().all(|&i| t[i] == zero)).collect();
            left.iter().all(|a| right.iter().all(|b| a[idx[0]] != b[idx[0]] || (a.iter().all(|&x| x == 0) && b.iter().all(|&x| x == 0))))
        })
    }

    pub fn is_generic_mod(&self) -> bool {
        self.tuples.len() == self.n_mod.pow(self.k as u32) && self.projections_injective() && self.two_schemes_injective()
    }
}

fn enumerate(ranges: &[Vec<i128>], j: usize, z: &mut Vec<i128>, f: &mut impl FnMut(&[i128])) {
    if j == ranges.len() {
        f(z);
        return;
    }
    for &val in &ranges[j] {
        z[j] = val;
        enumerate(ranges, j + 1, z, f);
    }
}

fn check_fields(spec: &FormSpec, fields: &[TorusField]) -> Result<usize, SingleScaleError> {
    if fields.len() != spec.n {
        return Err(SingleScaleError::Shape(format!("expected {} fields, got {}", spec.n, fields.len())));
    }
    let nm = fields[0].n_mod;
    if fields.iter().any(|f| f.n_mod != nm || f.d != spec.d) {
        return Err(SingleScaleError::Shape("fields must share N and d".into()));
    }
    Ok(nm)
}

/// E_{x, t} Π_{i<n} F_i(x + l_i(t)) · F_n(x).
pub fn eval_form_direct(spec: &FormSpec, fields: &[TorusField]) -> Result<Complex64, SingleScaleError> {
    let nm = check_fields(spec, fields)?;
    let (n, d, big_d) = (spec.n, spec.d, spec.big_d());
    let xs = nm.pow(d as u32);
    let ts = nm.pow(big_d as u32);
    let mut t = vec![0usize; big_d];
    let mut x = vec![0usize; d];
    let mut y = vec![0usize; d];
    // Shifts l_i(t) mod N, precomputed per t.
    let mut shifts = vec![0usize; ts * (n - 1) * d];
    for ti in 0..ts {
        unflatten(ti, nm, &mut t);
        for (i, f) in spec.forms.iter().enumerate() {
            for c in 0..d {
                let s: i64 = (0..big_d).map(|j| f[c][j] * t[j] as i64).sum();
                shifts[(ti * (n - 1) + i) * d + c] = s.rem_euclid(nm as i64) as usize;
            }
        }
    }
    let mut total = Complex64::default();
    for xi in 0..xs {
        unflatten(xi, nm, &mut x);
        let last = fields[n - 1].values[xi];
        if last == Complex64::default() {
            continue;
        }
        let mut acc = Complex64::default();
        for ti in 0..ts {
            let mut prod = Complex64::new(1.0, 0.0);
            for i in 0..n - 1 {
                for c in 0..d {
                    y[c] = (x[c] + shifts[(ti * (n - 1) + i) * d + c]) % nm;
                }
                prod *= fields[i].values[flatten(&y, nm)];
            }
            acc += prod;
        }
        total += acc * last;
    }
    Ok(total / (xs as f64 * ts as f64))
}

/// Σ over the constraint set of Π F̂_i(ξ_i).
pub fn eval_form_fourier(spec: &FormSpec, fields: &[TorusField]) -> Result<Complex64, SingleScaleError> {
    let nm = check_fields(spec, fields)?;
    let hats: Vec<TorusField> = fields.iter().map(|f| f.dft()).collect();
    let cs = ConstraintSet::new(spec, nm);
    Ok(cs
        .tuples
        .iter()
        .map(|t| t.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (i, &x)| acc * hats[i].values[x]))
        .sum())
}

/// Σ over the constraint set of Π |F̂_i(ξ_i)|.
pub fn triangle_sum(cs: &ConstraintSet, hats: &[TorusField]) -> f64 {
    cs.tuples
        .iter()
        .map(|t| t.iter().enumerate().map(|(i, &x)| hats[i].values[x].norm()).product::<f64>())
        .sum()
}

/// Frequencies grouped by dyadic band: band b holds ξ with 2^{−b} ≤ |F̂(ξ)| < 2^{−b+1}.
/// Coefficients below 2^{−⌈log₂ N^d⌉} are dropped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSets {
    pub floor_band: i32,
    /// bands[i] = list of (band, frequencies) in increasing band order.
    pub bands: Vec<Vec<(i32, Vec<usize>)>>,
}

pub fn level_sets(hats: &[TorusField]) -> LevelSets {
    let size = hats[0].values.len() as f64;
    let floor_band = size.log2().ceil() as i32;
    let bands = hats
        .iter()
        .map(|h| {
            let mut map: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
            for (x, v) in h.values.iter().enumerate() {
                let a = v.norm();
                if a <= 0.0 {
                    continue;
                }
                let b = (-a.log2()).floor() as i32 + 1;
                if b <= floor_band {
                    map.entry(b).or_default().push(x);
                }
            }
            map.into_iter().collect()
        })
        .collect();
    LevelSets { floor_band, bands }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountReport {
    pub count: u64,
    pub set_sizes: Vec<u64>,
    /// |F| ≤ Π_{i∈A} |F_i| for every m-subset A.
    pub crude_ok: bool,
    /// |F|² ≤ Π_{i∈B} |F_i| for every (2m−1)-subset B (two-scheme form; d = 2 only).
    pub improved_ok: Option<bool>,
    /// Worst |F| / Π_{i∈B}|F_i|^{1/2} over the subsets B.
    pub improved_ratio: Option<f64>,
    /// |F| / Π_i |F_i|^{(k/d)/n}.
    pub symmetric_ratio: f64,
    /// |F|^{2n} ≤ Π_i |F_i|^{2k/d}: the symmetrized bound with constant 1, exact.
    pub symmetric_ok: Option<bool>,
}

pub fn level_set_count_bound(spec: &FormSpec, cs: &ConstraintSet, sets: &[Vec<usize>]) -> CountReport {
    let size = cs.n_mod.pow(spec.d as u32);
    let member: Vec<Vec<bool>> = sets
        .iter()
        .map(|s| {
            let mut v = vec![false; size];
            for &x in s {
                v[x] = true;
            }
            v
        })
        .collect();
    let count = cs.tuples.iter().filter(|t| t.iter().enumerate().all(|(i, &x)| member[i][x])).count() as u64;
    let set_sizes: Vec<u64> = sets.iter().map(|s| s.len() as u64).collect();
    let m = cs.m;
    let crude_ok = subspace::coordinate_subsets(spec.n, m)
        .iter()
        .all(|a| count <= a.iter().map(|&i| set_sizes[i]).product::<u64>());
    let (improved_ok, improved_ratio, symmetric_ok) = if spec.d == 2 && 2 * m - 1 == spec.k && spec.k <= spec.n {
        let subsets = subspace::coordinate_subsets(spec.n, spec.k);
        let ok = subsets.iter().all(|b| {
            BigUint::from(count).pow(2) <= b.iter().map(|&i| BigUint::from(set_sizes[i])).product::<BigUint>()
        });
        let ratio = subsets
            .iter()
            .map(|b| count as f64 / b.iter().map(|&i| (set_sizes[i] as f64).sqrt()).product::<f64>())
            .fold(0.0, f64::max);
        // Averaging the k-subset bounds: |F|^{2·C(n,k)} ≤ Π_i |F_i|^{C(n−1,k−1)}.
        let total = subsets.len() as u32;
        let per = subsets.iter().filter(|b| b.contains(&0)).count() as u32;
        let lhs = BigUint::from(count).pow(2 * total);
        let rhs: BigUint = set_sizes.iter().map(|&s| BigUint::from(s).pow(per)).product();
        (Some(ok), Some(if count == 0 { 0.0 } else { ratio }), Some(lhs <= rhs))
    } else {
        (None, None, None)
    };
    let expo = spec.k as f64 / spec.d as f64 / spec.n as f64;
    let denom: f64 = set_sizes.iter().map(|&s| (s as f64).powf(expo)).product();
    let symmetric_ratio = if count == 0 { 0.0 } else { count as f64 / denom };
    CountReport { count, set_sizes, crude_ok, improved_ok, improved_ratio, symmetric_ratio, symmetric_ok }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelSetExperiment {
    pub seed: u64,
    pub moduli: Vec<usize>,
    pub trials: usize,
    pub band_choices: usize,
    pub all_crude_ok: bool,
    pub all_improved_ok: bool,
    pub all_symmetric_ok: bool,
    /// max |F| / Π|F_i|^{(k/d)/n} over all trials and band choices.
    pub constant: f64,
}

/// Random ±1 fields, every combination of each index's two most populated bands.
pub fn level_set_experiment(spec: &FormSpec, moduli: &[usize], trials: usize, seed: u64) -> LevelSetExperiment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LevelSetExperiment {
        seed,
        moduli: moduli.to_vec(),
        trials,
        band_choices: 0,
        all_crude_ok: true,
        all_improved_ok: true,
        all_symmetric_ok: true,
        constant: 0.0,
    };
    for &nm in moduli {
        let cs = ConstraintSet::new(spec, nm);
        for _ in 0..trials {
            let hats: Vec<TorusField> =
                (0..spec.n).map(|_| TorusField::random_signs(nm, spec.d, &mut rng).dft()).collect();
            let ls = level_sets(&hats);
            let options: Vec<Vec<&Vec<usize>>> = ls
                .bands
                .iter()
                .map(|b| {
                    let mut sorted: Vec<&Vec<usize>> = b.iter().map(|(_, s)| s).collect();
                    sorted.sort_by_key(|s| std::cmp::Reverse(s.len()));
                    sorted.truncate(2);
                    sorted
                })
                .collect();
            let mut choice = vec![0usize; spec.n];
            loop {
                let sets: Vec<Vec<usize>> = (0..spec.n).map(|i| options[i][choice[i]].clone()).collect();
                let r = level_set_count_bound(spec, &cs, &sets);
                out.band_choices += 1;
                out.all_crude_ok &= r.crude_ok;
                out.all_improved_ok &= r.improved_ok.unwrap_or(true);
                out.all_symmetric_ok &= r.symmetric_ok.unwrap_or(true);
                out.constant = out.constant.max(r.symmetric_ratio);
                let mut i = 0;
                while i < spec.n {
                    choice[i] += 1;
                    if choice[i] < options[i].len() {
                        break;
                    }
                    choice[i] = 0;
                    i += 1;
                }
                if i == spec.n {
                    break;
                }
            }
        }
    }
    out
}

/// 1 − 2(k/d)/n.
pub fn true_complexity_exponent(spec: &FormSpec) -> f64 {
    1.0 - 2.0 * (spec.k as f64 / spec.d as f64) / spec.n as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrueComplexityRow {
    pub n_mod: usize,
    pub trial: usize,
    pub form_abs: f64,
    pub coefficient_product: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrueComplexityReport {
    pub exponent: f64,
    pub rows: Vec<TrueComplexityRow>,
    pub worst_constant: f64,
}

/// |form| against Π‖F̂_i‖_∞^{1−2(k/d)/n} for random ±1 fields.
pub fn true_complexity_experiment(spec: &FormSpec, moduli: &[usize], trials: usize, seed: u64) -> TrueComplexityReport {
    let exponent = true_complexity_exponent(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &nm in moduli {
        let cs = ConstraintSet::new(spec, nm);
        for trial in 0..trials {
            let fields: Vec<TorusField> = (0..spec.n).map(|_| TorusField::random_signs(nm, spec.d, &mut rng)).collect();
            rows.push(complexity_row(spec, &cs, &fields, exponent, trial));
        }
    }
    let worst_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    TrueComplexityReport { exponent, rows, worst_constant }
}

fn complexity_row(spec: &FormSpec, cs: &ConstraintSet, fields: &[TorusField], exponent: f64, trial: usize) -> TrueComplexityRow {
    let hats: Vec<TorusField> = fields.iter().map(|f| f.dft()).collect();
    let form: Complex64 = cs
        .tuples
        .iter()
        .map(|t| t.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (i, &x)| acc * hats[i].values[x]))
        .sum();
    let coefficient_product: f64 = hats.iter().map(|h| h.sup_norm().powf(exponent)).product();
    let _ = spec;
    TrueComplexityRow {
        n_mod: cs.n_mod,
        trial,
        form_abs: form.norm(),
        coefficient_product,
        ratio: form.norm() / coefficient_product,
    }
}

pub fn is_odd_prime(n: usize) -> bool {
    n > 2 && n % 2 == 1 && (3..).step_by(2).take_while(|p| p * p <= n).all(|p| n % p != 0)
}

/// c(x) = e(x²/N) on Z_N^1.
pub fn chirp(n_mod: usize) -> TorusField {
    TorusField::from_fn(n_mod, 1, |x| e(((x[0] * x[0]) % n_mod) as f64 / n_mod as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChirpReport {
    pub n_mod: usize,
    pub triangle_sum: f64,
    pub max_coefficient: f64,
    /// max over all frequencies and fields of ||F̂(ξ)| − N^{−1/2}|.
    pub flatness_error: f64,
    pub form_abs: f64,
    /// triangle_sum / max_coefficient^{0.1}
    pub ratio_eps_0_1: f64,
}

pub fn chirp_counterexample(n_mod: usize) -> Result<ChirpReport, SingleScaleError> {
    if !is_odd_prime(n_mod) {
        return Err(SingleScaleError::NotOddPrime(n_mod));
    }
    let spec = FormSpec::trilinear_hilbert();
    let c = chirp(n_mod);
    let fields = vec![c.clone(), c.clone(), c.clone(), c.conj()];
    let hats: Vec<TorusField> = fields.iter().map(|f| f.dft()).collect();
    let target = (n_mod as f64).powf(-0.5);
    let flatness_error = hats
        .iter()
        .flat_map(|h| h.values.iter())
        .map(|v| (v.norm() - target).abs())
        .fold(0.0, f64::max);
    let max_coefficient = hats.iter().map(|h| h.sup_norm()).fold(0.0, f64::max);
    let cs = ConstraintSet::new(&spec, n_mod);
    let tri = triangle_sum(&cs, &hats);
    let form: Complex64 = cs
        .tuples
        .iter()
        .map(|t| t.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (i, &x)| acc * hats[i].values[x]))
        .sum();
    Ok(ChirpReport {
        n_mod,
        triangle_sum: tri,
        max_coefficient,
        flatness_error,
        form_abs: form.norm(),
        ratio_eps_0_1: tri / max_coefficient.powf(0.1),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegenerateReport {
    pub n_mod: usize,
    pub form_re: f64,
    pub form_im: f64,
    pub max_coefficients: Vec<f64>,
    /// |form| / Π‖F̂_i‖_∞^{1−2(k/d)/n}
    pub ratio: f64,
}

pub fn degenerate_fields(n_mod: usize) -> Vec<TorusField> {
    let c = chirp(n_mod);
    let cv = c.values.clone();
    let f1 = TorusField::from_fn(n_mod, 2, |x| cv[x[1]]);
    let f2 = TorusField::from_fn(n_mod, 2, |x| cv[x[0]]);
    let f3 = TorusField::from_fn(n_mod, 2, |x| (cv[x[0]] * cv[x[1]]).conj());
    vec![f1, f2, f3]
}

pub fn degenerate_example(n_mod: usize) -> Result<DegenerateReport, SingleScaleError> {
    if !is_odd_prime(n_mod) {
        return Err(SingleScaleError::NotOddPrime(n_mod));
    }
    let spec = FormSpec::degenerate_planar();
    let fields = degenerate_fields(n_mod);
    let form = eval_form_fourier(&spec, &fields)?;
    let max_coefficients: Vec<f64> = fields.iter().map(|f| f.dft().sup_norm()).collect();
    let expo = true_complexity_exponent(&spec);
    let denom: f64 = max_coefficients.iter().map(|m| m.powf(expo)).product();
    Ok(DegenerateReport { n_mod, form_re: form.re, form_im: form.im, max_coefficients, ratio: form.norm() / denom })
}
