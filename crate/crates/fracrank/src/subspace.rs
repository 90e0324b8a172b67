//! The singular subspace Γ′ ⊂ Γ ⊂ R^{nd}, its canonical parametrization and
//! the solvability schemes behind the counting arguments.
//!
//! Block indices are 0-based throughout (`i` here is `i+1` in the usual notation).

use crate::linalg::{self, rat, Matrix, Rat};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SubspaceError {
    #[error("basis has rank {rank}, expected {k}")]
    Dependent { rank: usize, k: usize },
    #[error("basis vector {0} does not lie in the hyperplane (blocks do not sum to zero)")]
    NotInGamma(usize),
    #[error("basis vector {index} has length {len}, expected {expected}")]
    BadLength { index: usize, len: usize, expected: usize },
    #[error("constraint subspace is {found}-dimensional, not k-dimensional (k = {k})")]
    NotKDimensional { found: usize, k: usize },
    #[error("bad forms: {0}")]
    BadForms(String),
    #[error("not parametrizable over leading coordinates")]
    NotParametrizable,
    #[error("malformed scheme: {0}")]
    BadScheme(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    #[serde(serialize_with = "linalg::ser_rat_vecs", deserialize_with = "linalg::de_rat_vecs")]
    pub basis: Vec<Vec<Rat>>,
}

impl SubspaceBasis {
    pub fn new(n: usize, d: usize, basis: Vec<Vec<Rat>>) -> Result<Self, SubspaceError> {
        let k = basis.len();
        let s = SubspaceBasis { n, d, k, basis };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SubspaceError> {
        let dim = self.n * self.d;
        if self.basis.len() != self.k {
            return Err(SubspaceError::Dependent { rank: self.basis.len(), k: self.k });
        }
        for (i, v) in self.basis.iter().enumerate() {
            if v.len() != dim {
                return Err(SubspaceError::BadLength { index: i, len: v.len(), expected: dim });
            }
            for c in 0..self.d {
                let s: Rat = (0..self.n).map(|b| v[b * self.d + c].clone()).sum();
                if !s.is_zero() {
                    return Err(SubspaceError::NotInGamma(i));
                }
            }
        }
        let r = self.matrix().rank();
        if r != self.k {
            return Err(SubspaceError::Dependent { rank: r, k: self.k });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    /// k × nd matrix whose rows are the basis vectors.
    pub fn matrix(&self) -> Matrix {
        let mut m = Matrix::from_rows(&self.basis);
        m.cols = self.dim();
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let b: SubspaceBasis = serde_json::from_str(s).map_err(|e| e.to_string())?;
        b.validate().map_err(|e| e.to_string())?;
        Ok(b)
    }

    /// Exact squared distance from a point of R^{nd} to Γ′.
    pub fn dist2(&self, p: &[Rat]) -> Rat {
        linalg::dist2_to_span(p, &self.basis)
    }

    pub fn contains(&self, p: &[Rat]) -> bool {
        self.dist2(p).is_zero()
    }
}

/// Γ′ annihilating Σ_{i<n} η^{(i)}·(x + l_i(t)) + η^{(n)}·x identically in (x, t).
/// Each form is a d × D matrix with D = d(n−1) − k.
pub fn build_from_forms(n: usize, d: usize, k: usize, forms: &[Matrix]) -> Result<SubspaceBasis, SubspaceError> {
    if forms.len() + 1 != n {
        return Err(SubspaceError::BadForms(format!("expected {} forms, got {}", n - 1, forms.len())));
    }
    let big_d = (d * (n - 1)).checked_sub(k).filter(|&x| x > 0).ok_or_else(|| {
        SubspaceError::BadForms("domain dimension d(n-1)-k must be positive".into())
    })?;
    for (i, f) in forms.iter().enumerate() {
        if f.rows != d || f.cols != big_d {
            return Err(SubspaceError::BadForms(format!(
                "form {i} is {}x{}, expected {d}x{big_d}",
                f.rows, f.cols
            )));
        }
    }
    let dim = n * d;
    let mut c = Matrix::zeros(d + big_d, dim);
    for comp in 0..d {
        for b in 0..n {
            c.set(comp, b * d + comp, Rat::one());
        }
    }
    for (i, f) in forms.iter().enumerate() {
        for t in 0..big_d {
            for comp in 0..d {
                c.set(d + t, i * d + comp, f.get(comp, t).clone());
            }
        }
    }
    let ns = c.nullspace();
    if ns.len() != k {
        return Err(SubspaceError::NotKDimensional { found: ns.len(), k });
    }
    SubspaceBasis::new(n, d, linalg::span_basis(&ns, dim))
}

/// True iff the k × k minor of the basis on `coords` is invertible.
pub fn is_graph_over(s: &SubspaceBasis, coords: &[usize]) -> bool {
    assert_eq!(coords.len(), s.k, "coordinate subset must have size k");
    if s.k == 0 {
        return true;
    }
    !s.matrix().select_cols(coords).determinant().is_zero()
}

/// All k-subsets of {0..nd} in lexicographic order.
pub fn coordinate_subsets(dim: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, dim: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..dim {
            if dim - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, dim, k, cur, out);
            cur.pop();
        }
    }
    rec(0, dim, k, &mut cur, &mut out);
    out
}

/// Maps G_1..G_n, each d × k, with (G_1ξ, …, G_nξ) ranging over Γ′.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parametrization {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub blocks: Vec<Matrix>,
}

impl Parametrization {
    /// nd × k stacked matrix.
    pub fn stacked(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n * self.d, self.k);
        for (b, g) in self.blocks.iter().enumerate() {
            for r in 0..self.d {
                for c in 0..self.k {
                    m.set(b * self.d + r, c, g.get(r, c).clone());
                }
            }
        }
        m
    }

    pub fn apply(&self, xi: &[Rat]) -> Vec<Rat> {
        self.stacked().mul_vec(xi)
    }

    pub fn image_basis(&self) -> Vec<Vec<Rat>> {
        self.stacked().transpose().to_rows()
    }
}

/// The parametrization reading ξ off the first k coordinates of R^{nd}.
pub fn canonical_parametrization(s: &SubspaceBasis) -> Result<Parametrization, SubspaceError> {
    let (n, d, k) = (s.n, s.d, s.k);
    let b = s.matrix();
    let lead: Vec<usize> = (0..k).collect();
    let inv = if k == 0 {
        Matrix::zeros(0, 0)
    } else {
        b.select_cols(&lead).inverse().ok_or(SubspaceError::NotParametrizable)?
    };
    // Rows of inv·B are a basis whose leading k×k block is the identity.
    let normalized = inv.mul(&b);
    let p = normalized.transpose();
    let blocks = (0..n)
        .map(|blk| {
            let mut g = Matrix::zeros(d, k);
            for r in 0..d {
                for c in 0..k {
                    g.set(r, c, p.get(blk * d + r, c).clone());
                }
            }
            g
        })
        .collect();
    Ok(Parametrization { n, d, k, blocks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    TwoScheme,
    ChainSchemeNEven,
    ChainSchemeNOddDOdd,
    ChainSchemeNOddDEven,
    SimpleSchemeD1,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    /// G_block(ξ^{(a)}) − G_block(ξ^{(b)}) = v
    Difference { block: usize, a: usize, b: usize },
    /// G_block(ξ^{(var)}) = v
    Pin { block: usize, var: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub indices: Vec<usize>,
    pub unknowns: usize,
    pub equations: Vec<Equation>,
}

fn distinct(xs: &[usize]) -> bool {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.windows(2).all(|w| w[0] != w[1])
}

impl SchemeSpec {
    /// Indices (i_1, …, i_L): a difference in i_1, i_2..i_m pinned on ξ^{(1)},
    /// the rest pinned on ξ^{(2)}.
    pub fn two_scheme(m: usize, indices: &[usize]) -> Result<Self, SubspaceError> {
        if indices.len() < m || m == 0 {
            return Err(SubspaceError::BadScheme("two-scheme needs at least m indices".into()));
        }
        let (first, rest) = (indices[0], &indices[1..]);
        let (g1, g2) = rest.split_at(m - 1);
        if rest.contains(&first) || !distinct(g1) || !distinct(g2) {
            return Err(SubspaceError::BadScheme(format!("index collision in {indices:?}")));
        }
        let mut equations = vec![Equation::Difference { block: first, a: 0, b: 1 }];
        equations.extend(g1.iter().map(|&b| Equation::Pin { block: b, var: 0 }));
        equations.extend(g2.iter().map(|&b| Equation::Pin { block: b, var: 1 }));
        Ok(SchemeSpec { kind: SchemeKind::TwoScheme, indices: indices.to_vec(), unknowns: 2, equations })
    }

    /// n even: labels (i_1, …, i_m); chain of differences in i_1 over d unknowns,
    /// i_2..i_m pinned on every unknown.
    pub fn chain_even(d: usize, labels: &[usize]) -> Result<Self, SubspaceError> {
        if labels.is_empty() || !distinct(labels) {
            return Err(SubspaceError::BadScheme(format!("index collision in {labels:?}")));
        }
        let mut equations = Vec::new();
        for j in 0..d.saturating_sub(1) {
            equations.push(Equation::Difference { block: labels[0], a: j, b: j + 1 });
        }
        for &b in &labels[1..] {
            for j in 0..d {
                equations.push(Equation::Pin { block: b, var: j });
            }
        }
        Ok(SchemeSpec { kind: SchemeKind::ChainSchemeNEven, indices: labels.to_vec(), unknowns: d, equations })
    }

    /// n odd: labels (i_1, …, i_{m+1}). Differences alternate between i_1 and i_2
    /// along the chain; i_3..i_m pinned everywhere; i_{m+1} pinned on odd slots.
    /// The chain has d slots for d odd and d+1 slots for d even.
    pub fn chain_odd(d: usize, labels: &[usize]) -> Result<Self, SubspaceError> {
        if labels.len() < 3 || !distinct(labels) {
            return Err(SubspaceError::BadScheme(format!("need ≥ 3 distinct labels, got {labels:?}")));
        }
        let slots = if d % 2 == 1 { d } else { d + 1 };
        let kind = if d % 2 == 1 { SchemeKind::ChainSchemeNOddDOdd } else { SchemeKind::ChainSchemeNOddDEven };
        let m = labels.len() - 1;
        let mut equations = Vec::new();
        for j in 0..slots - 1 {
            let block = if j % 2 == 0 { labels[0] } else { labels[1] };
            equations.push(Equation::Difference { block, a: j, b: j + 1 });
        }
        for &b in &labels[2..m] {
            for j in 0..slots {
                equations.push(Equation::Pin { block: b, var: j });
            }
        }
        for j in (0..slots).step_by(2) {
            equations.push(Equation::Pin { block: labels[m], var: j });
        }
        Ok(SchemeSpec { kind, indices: labels.to_vec(), unknowns: slots, equations })
    }

    /// One unknown, the m listed blocks pinned.
    pub fn simple(labels: &[usize]) -> Result<Self, SubspaceError> {
        if !distinct(labels) {
            return Err(SubspaceError::BadScheme(format!("index collision in {labels:?}")));
        }
        let equations = labels.iter().map(|&b| Equation::Pin { block: b, var: 0 }).collect();
        Ok(SchemeSpec { kind: SchemeKind::SimpleSchemeD1, indices: labels.to_vec(), unknowns: 1, equations })
    }

    pub fn scalar_rows(&self, d: usize) -> usize {
        self.equations.len() * d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Unique,
    AtMostOne,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeCheck {
    pub verdict: Verdict,
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SchemeCheck {
    pub fn deficit(&self) -> usize {
        self.cols - self.rank
    }
}

/// Scalar matrix of the scheme: rows per equation, columns per unknown coordinate.
pub fn scheme_matrix(p: &Parametrization, spec: &SchemeSpec) -> Result<Matrix, SubspaceError> {
    let (d, k) = (p.d, p.k);
    let mut m = Matrix::zeros(spec.scalar_rows(d), spec.unknowns * k);
    for (e, eq) in spec.equations.iter().enumerate() {
        let (block, plus, minus) = match *eq {
            Equation::Difference { block, a, b } => (block, a, Some(b)),
            Equation::Pin { block, var } => (block, var, None),
        };
        if block >= p.n || plus >= spec.unknowns || minus.is_some_and(|b| b >= spec.unknowns) {
            return Err(SubspaceError::BadScheme(format!("equation {e} out of range")));
        }
        let g = &p.blocks[block];
        for r in 0..d {
            for c in 0..k {
                m.set(e * d + r, plus * k + c, g.get(r, c).clone());
                if let Some(b) = minus {
                    m.set(e * d + r, b * k + c, -g.get(r, c).clone());
                }
            }
        }
    }
    Ok(m)
}

/// Two-schemes and simple schemes are judged on their own matrix. The chain layouts pin
/// the same blocks in many slots, so a common shift of every slot by a vector of
/// ∩ ker G_pinned always solves the homogeneous chain; injectivity of H instead starts
/// from one slot known to agree. Chain schemes are therefore judged with each slot
/// anchored in turn, and `rank` reports the unanchored matrix.
pub fn check_scheme(p: &Parametrization, spec: &SchemeSpec) -> Result<SchemeCheck, SubspaceError> {
    let m = scheme_matrix(p, spec)?;
    let rank = m.rank();
    let full = match spec.kind {
        SchemeKind::TwoScheme | SchemeKind::SimpleSchemeD1 => rank == m.cols,
        _ => (0..spec.unknowns).all(|slot| {
            let k = p.k;
            let mut anchor = Matrix::zeros(k, m.cols);
            for c in 0..k {
                anchor.set(c, slot * k + c, Rat::one());
            }
            m.stack(&anchor).rank() == m.cols
        }),
    };
    let verdict = if full {
        if m.rows == m.cols && rank == m.cols {
            Verdict::Unique
        } else {
            Verdict::AtMostOne
        }
    } else {
        Verdict::Degenerate
    };
    Ok(SchemeCheck { verdict, rank, rows: m.rows, cols: m.cols })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankCase {
    /// m = 0
    Classical,
    /// m < n/2: the simple scheme applies.
    Simple,
    /// m ≥ n/2 > k/d: the genuinely new regime.
    Critical,
    /// k/d ≥ n/2.
    OutOfScope,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankParameters {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub m: usize,
    #[serde(serialize_with = "linalg::ser_rat", deserialize_with = "linalg::de_rat")]
    pub rank: Rat,
    pub integer_rank: bool,
    pub case: RankCase,
    pub delta: Option<String>,
}

pub fn rank_params(n: usize, d: usize, k: usize) -> RankParameters {
    let m = k.div_ceil(d);
    let rank = linalg::ratio(k as i64, d as i64);
    let integer_rank = k % d == 0;
    let case = if 2 * k >= n * d {
        RankCase::OutOfScope
    } else if m == 0 {
        RankCase::Classical
    } else if 2 * m < n {
        RankCase::Simple
    } else {
        RankCase::Critical
    };
    let delta = crate::vectree::delta_exponent(n, d, k).ok().map(|r| linalg::rat_to_string(&r));
    RankParameters { n, d, k, m, rank, integer_rank, case, delta }
}

pub fn rank_parameters(s: &SubspaceBasis) -> RankParameters {
    rank_params(s.n, s.d, s.k)
}

/// Seeded basis: integer entries in [−9, 9], projected onto Γ, redrawn until independent.
pub fn random_generic(n: usize, d: usize, k: usize, seed: u64) -> SubspaceBasis {
    assert!(k <= d * (n - 1), "k must be at most d(n-1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = n * d;
    loop {
        let basis: Vec<Vec<Rat>> = (0..k)
            .map(|_| {
                let raw: Vec<i64> = (0..dim).map(|_| rng.gen_range(-9..=9)).collect();
                let mut v: Vec<Rat> = raw.iter().map(|&x| rat(x)).collect();
                for c in 0..d {
                    let mean = (0..n).map(|b| v[b * d + c].clone()).sum::<Rat>() / rat(n as i64);
                    for b in 0..n {
                        v[b * d + c] -= &mean;
                    }
                }
                v
            })
            .collect();
        if let Ok(s) = SubspaceBasis::new(n, d, basis) {
            return s;
        }
    }
}

/// Every two-scheme on ordered triples of distinct blocks (i_1; i_2..; ..i_k) with
/// all k indices distinct. Only meaningful for d = 2, k = 2m − 1 ≤ n.
pub fn all_two_schemes(n: usize, m: usize, k: usize) -> Vec<SchemeSpec> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, len: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for b in 0..n {
            if !cur.contains(&b) {
                cur.push(b);
                rec(n, len, cur, out);
                cur.pop();
            }
        }
    }
    let mut tuples = Vec::new();
    rec(n, k, &mut cur, &mut tuples);
    for t in tuples {
        out.push(SchemeSpec::two_scheme(m, &t).expect("distinct indices"));
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenericityReport {
    pub seed: u64,
    pub minors_checked: usize,
    pub minors_failed: Vec<Vec<usize>>,
    pub schemes_checked: usize,
    pub schemes_failed: Vec<Vec<usize>>,
    pub pass: bool,
}

/// All k-coordinate minors and all two-schemes for one basis.
pub fn genericity_report(s: &SubspaceBasis, seed: u64) -> GenericityReport {
    let subsets = coordinate_subsets(s.dim(), s.k);
    let minors_failed: Vec<Vec<usize>> = subsets.iter().filter(|c| !is_graph_over(s, c)).cloned().collect();
    let m = s.k.div_ceil(s.d);
    let (schemes_checked, schemes_failed) = match canonical_parametrization(s) {
        Ok(p) if m >= 1 && s.k <= s.n => {
            let schemes = all_two_schemes(s.n, m, s.k);
            let failed: Vec<Vec<usize>> = schemes
                .iter()
                .filter(|sp| check_scheme(&p, sp).map(|c| c.verdict) != Ok(Verdict::Unique))
                .map(|sp| sp.indices.clone())
                .collect();
            (schemes.len(), failed)
        }
        Ok(_) => (0, Vec::new()),
        Err(_) => (0, vec![vec![]]),
    };
    let pass = minors_failed.is_empty() && schemes_failed.is_empty();
    GenericityReport { seed, minors_checked: subsets.len(), minors_failed, schemes_checked, schemes_failed, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ratio;

    fn tht_forms() -> Vec<Matrix> {
        vec![Matrix::from_i64(&[vec![1]]), Matrix::from_i64(&[vec![-1]]), Matrix::from_i64(&[vec![2]])]
    }

    #[test]
    fn trilinear_hilbert_forms_give_the_expected_plane() {
        let s = build_from_forms(4, 1, 2, &tht_forms()).unwrap();
        assert_eq!(s.k, 2);
        // (n1, n2, n3, n4) with n1 − n2 + 2n3 = 0 and Σ = 0, e.g. (1, 1, 0, −2) and (−2, 0, 1, 1).
        assert!(s.contains(&[rat(1), rat(1), rat(0), rat(-2)]));
        assert!(s.contains(&[rat(-2), rat(0), rat(1), rat(1)]));
        assert!(!s.contains(&[rat(1), rat(-1), rat(0), rat(0)]));
    }

    #[test]
    fn degenerate_two_dimensional_forms() {
        let f1 = Matrix::from_i64(&[vec![1], vec![0]]);
        let f2 = Matrix::from_i64(&[vec![0], vec![1]]);
        let s = build_from_forms(3, 2, 3, &[f1, f2]).unwrap();
        assert_eq!(s.k, 3);
        // η^(1) = (0, a), η^(2) = (b, 0) is forced; check one element.
        assert!(s.contains(&[rat(0), rat(1), rat(2), rat(0), rat(-2), rat(-1)]));
    }

    #[test]
    fn classical_forms_versus_zero_forms() {
        let coord = vec![Matrix::from_i64(&[vec![1, 0]]), Matrix::from_i64(&[vec![0, 1]])];
        let s = build_from_forms(3, 1, 0, &coord).unwrap();
        assert_eq!(s.k, 0);
        let zero = vec![Matrix::from_i64(&[vec![0, 0]]), Matrix::from_i64(&[vec![0, 0]])];
        assert_eq!(
            build_from_forms(3, 1, 0, &zero),
            Err(SubspaceError::NotKDimensional { found: 2, k: 0 })
        );
    }

    #[test]
    fn graph_over_detects_zero_minor() {
        // Γ′ spanned by (1, −1, 0): its first coordinate alone works, the third does not.
        let s = SubspaceBasis::new(3, 1, vec![vec![rat(1), rat(-1), rat(0)]]).unwrap();
        assert!(is_graph_over(&s, &[0]));
        assert!(!is_graph_over(&s, &[2]));
        let z = SubspaceBasis::new(3, 1, vec![]).unwrap();
        assert!(is_graph_over(&z, &[]));
    }

    #[test]
    fn tht_parametrization_reads_leading_coordinates() {
        let s = build_from_forms(4, 1, 2, &tht_forms()).unwrap();
        let p = canonical_parametrization(&s).unwrap();
        assert_eq!(p.blocks[0], Matrix::from_rows(&[vec![rat(1), rat(0)]]));
        assert_eq!(p.blocks[1], Matrix::from_rows(&[vec![rat(0), rat(1)]]));
        // n3 = (n2 − n1)/2, n4 = −n1 − n2 − n3.
        assert_eq!(p.blocks[2], Matrix::from_rows(&[vec![ratio(-1, 2), ratio(1, 2)]]));
        assert_eq!(p.blocks[3], Matrix::from_rows(&[vec![ratio(-1, 2), ratio(-3, 2)]]));
    }

    #[test]
    fn antidiagonal_parametrization() {
        let basis = vec![
            vec![rat(1), rat(0), rat(-1), rat(0), rat(0), rat(0)],
            vec![rat(0), rat(1), rat(0), rat(-1), rat(0), rat(0)],
        ];
        let s = SubspaceBasis::new(3, 2, basis).unwrap();
        let p = canonical_parametrization(&s).unwrap();
        assert_eq!(p.blocks[0], Matrix::identity(2));
        let mut neg = Matrix::identity(2);
        for i in 0..2 {
            neg.set(i, i, rat(-1));
        }
        assert_eq!(p.blocks[1], neg);
        assert!(p.blocks[2].is_zero());
    }

    #[test]
    fn random_generic_is_generic_and_deterministic() {
        let a = random_generic(4, 2, 3, 1);
        let b = random_generic(4, 2, 3, 1);
        assert_eq!(a, b);
        let subsets = coordinate_subsets(8, 3);
        assert_eq!(subsets.len(), 56);
        assert!(subsets.iter().all(|c| is_graph_over(&a, c)));
        let p = canonical_parametrization(&a).unwrap();
        assert!(linalg::same_span(&p.image_basis(), &a.basis, 8));
    }

    #[test]
    fn two_scheme_is_square_and_unique_for_generic_subspace() {
        let s = random_generic(4, 2, 3, 1);
        let p = canonical_parametrization(&s).unwrap();
        let spec = SchemeSpec::two_scheme(2, &[0, 1, 2]).unwrap();
        let c = check_scheme(&p, &spec).unwrap();
        assert_eq!((c.rows, c.cols), (6, 6));
        assert_eq!(c.verdict, Verdict::Unique);
    }

    #[test]
    fn zero_block_makes_scheme_degenerate() {
        let s = random_generic(4, 2, 3, 1);
        let mut p = canonical_parametrization(&s).unwrap();
        p.blocks[1] = Matrix::zeros(2, 3);
        let spec = SchemeSpec::two_scheme(2, &[0, 1, 2]).unwrap();
        let c = check_scheme(&p, &spec).unwrap();
        assert_eq!(c.verdict, Verdict::Degenerate);
        assert!(c.deficit() > 0);
    }

    #[test]
    fn chain_scheme_overdetermined() {
        // n = 4, d = 3, k = 4: m = 2, (dm − 1)d = 15 scalar rows ≥ dk = 12.
        let s = random_generic(4, 3, 4, 3);
        let p = canonical_parametrization(&s).unwrap();
        let spec = SchemeSpec::chain_even(3, &[0, 1]).unwrap();
        assert_eq!(spec.equations.len(), 5);
        let c = check_scheme(&p, &spec).unwrap();
        assert_eq!((c.rows, c.cols), (15, 12));
        assert_eq!(c.verdict, Verdict::AtMostOne);
        // The unanchored chain keeps the common shift along ker G_2.
        assert_eq!(c.deficit(), 1);
    }

    #[test]
    fn chain_odd_equation_counts() {
        // d odd: (d−1) + d(m−2) + (d+1)/2 vector equations.
        let sp = SchemeSpec::chain_odd(3, &[0, 1, 2, 3]).unwrap();
        assert_eq!(sp.unknowns, 3);
        assert_eq!(sp.equations.len(), 2 + 3 + 2);
        // d even: d + (d+1)(m−2) + (d+2)/2.
        let sp = SchemeSpec::chain_odd(2, &[0, 1, 2, 3]).unwrap();
        assert_eq!(sp.unknowns, 3);
        assert_eq!(sp.equations.len(), 2 + 3 + 2);
    }

    #[test]
    fn malformed_schemes_are_rejected() {
        assert!(SchemeSpec::two_scheme(2, &[0, 0, 1]).is_err());
        assert!(SchemeSpec::two_scheme(3, &[0, 1, 1, 2]).is_err());
        assert!(SchemeSpec::simple(&[1, 1]).is_err());
    }

    #[test]
    fn rank_parameter_cases() {
        let p = rank_params(4, 2, 3);
        assert_eq!((p.m, p.case, p.integer_rank), (2, RankCase::Critical, false));
        assert_eq!(p.rank, ratio(3, 2));
        assert_eq!(rank_params(4, 1, 2).case, RankCase::OutOfScope);
        let c = rank_params(3, 5, 0);
        assert_eq!((c.m, c.case), (0, RankCase::Classical));
        let s = random_generic(3, 2, 3, 7);
        assert_eq!(rank_parameters(&s).case, RankCase::OutOfScope);
    }

    #[test]
    fn json_round_trip() {
        let s = random_generic(4, 2, 3, 5);
        let j = s.to_json();
        assert!(j.contains('/'));
        assert_eq!(SubspaceBasis::from_json(&j).unwrap(), s);
    }
}
