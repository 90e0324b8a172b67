//! Wave packets on a periodic sampling lattice, their coefficients, the maximal
//! function M₂ and the model sums Λ_P.
//!
//! A field lives on N^d points x_j = origin + j·h of a torus of side L = N·h. Packets are
//! built in frequency: the mother bump has Fourier transform supported in [−1/2, 1/2]^d,
//! so a packet over R × ω̄ only has Fourier coefficients at lattice frequencies inside ω̄.
//! Frequencies are taken modulo 1/h. The modulation is e^{2πi c(ω̄)·x}.

use crate::grids::q_to_f64;
use crate::singlescale::fft_nd;
use crate::tiles::{Tile, TileSystem};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WaveError {
    #[error("grid spacing {h} does not resolve side {side} (need h ≤ side/8)")]
    GridTooCoarse { h: f64, side: f64 },
    #[error("torus side {length} is below 4× the packet side {side}")]
    RegionTooSmall { length: f64, side: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("bad field data: {0}")]
    BadData(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    /// Points per axis, a power of 2.
    pub n: usize,
    pub h: f64,
    pub origin: Vec<f64>,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, h: f64, origin: Vec<f64>) -> Result<GridSpec, WaveError> {
        if !n.is_power_of_two() || h <= 0.0 || origin.len() != d {
            return Err(WaveError::GridMismatch(format!("n = {n}, h = {h}, origin of length {}", origin.len())));
        }
        Ok(GridSpec { d, n, h, origin })
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        let mut r = flat;
        for a in (0..self.d).rev() {
            out[a] = self.origin[a] + (r % self.n) as f64 * self.h;
            r /= self.n;
        }
        out
    }

    /// Lattice covering [0, width)^d and resolving every tile of the system.
    pub fn for_system(sys: &TileSystem, width: f64) -> GridSpec {
        let sides: Vec<f64> = sys.tiles.iter().map(|t| q_to_f64(&t.r.side())).collect();
        let smallest = sides.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
        let largest = sides.iter().copied().fold(0.0, f64::max).max(smallest);
        let h = smallest / 8.0;
        let mut length = h;
        while length < width.max(4.0 * largest) {
            length *= 2.0;
        }
        GridSpec { d: sys.d, n: (length / h).round() as usize, h, origin: vec![0.0; sys.d] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledField {
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct FieldBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    #[serde(rename = "box")]
    bbox: FieldBox,
    h: f64,
}

impl SampledField {
    pub fn zeros(grid: GridSpec) -> SampledField {
        let len = grid.len();
        SampledField { grid, values: vec![Complex64::default(); len] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> SampledField {
        let values = (0..grid.len()).map(|j| f(&grid.point(j))).collect();
        SampledField { grid, values }
    }

    /// Σ |F|² h^d.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.h.powi(self.grid.d as i32)
    }

    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    pub fn inner(&self, other: &SampledField) -> Result<Complex64, WaveError> {
        if self.grid != other.grid {
            return Err(WaveError::GridMismatch("fields on different lattices".into()));
        }
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.grid.h.powi(self.grid.d as i32))
    }

    pub fn scaled(&self, c: Complex64) -> SampledField {
        SampledField { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    /// L^p norm by quadrature; p = ∞ gives the sup.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        }
        (self.values.iter().map(|v| v.norm().powf(p)).sum::<f64>() * self.grid.h.powi(self.grid.d as i32)).powf(1.0 / p)
    }

    /// F̂_κ = N^{−d} Σ_j F_j e^{−2πi κ·j/N}.
    pub fn spectrum(&self) -> Spectrum {
        let mut data = self.values.clone();
        fft_nd(&mut data, self.grid.n, self.grid.d, true);
        let scale = 1.0 / self.grid.len() as f64;
        for v in &mut data {
            *v *= scale;
        }
        Spectrum { grid: self.grid.clone(), coeffs: data }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im\n");
        for (j, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{j},{:e},{:e}\n", v.re, v.im));
        }
        out
    }

    pub fn from_csv(grid: GridSpec, text: &str) -> Result<SampledField, WaveError> {
        let mut f = SampledField::zeros(grid);
        let mut seen = 0;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (|| Some((parts.first()?.parse::<usize>().ok()?, parts.get(1)?.parse().ok()?, parts.get(2)?.parse().ok()?)))();
            let (j, re, im): (usize, f64, f64) = parsed.ok_or_else(|| WaveError::BadData(format!("line {line:?}")))?;
            if j >= f.values.len() {
                return Err(WaveError::BadData(format!("index {j} out of range")));
            }
            f.values[j] = Complex64::new(re, im);
            seen += 1;
        }
        if seen != f.values.len() {
            return Err(WaveError::BadData(format!("{seen} of {} samples present", f.values.len())));
        }
        Ok(f)
    }

    pub fn metadata_json(&self) -> String {
        let g = &self.grid;
        let meta = FieldMeta {
            bbox: FieldBox { lo: g.origin.clone(), hi: g.origin.iter().map(|o| o + g.length()).collect() },
            h: g.h,
        };
        serde_json::to_string(&meta).expect("serializable")
    }

    pub fn grid_from_metadata(json: &str) -> Result<GridSpec, WaveError> {
        let meta: FieldMeta = serde_json::from_str(json).map_err(|e| WaveError::BadData(e.to_string()))?;
        let d = meta.bbox.lo.len();
        let n = ((meta.bbox.hi.first().copied().unwrap_or(0.0) - meta.bbox.lo.first().copied().unwrap_or(0.0)) / meta.h).round();
        GridSpec::new(d, n as usize, meta.h, meta.bbox.lo)
    }
}

/// Fourier coefficients of a sampled field, indexed like the field.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub grid: GridSpec,
    pub coeffs: Vec<Complex64>,
}

/// Tensor mother bump: each factor is a flat-top C^∞ taper supported in [−1/2, 1/2],
/// rising over a band of relative width `taper` at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotherBump {
    pub taper: f64,
}

impl Default for MotherBump {
    fn default() -> Self {
        MotherBump { taper: 0.03 }
    }
}

fn smooth_step(s: f64) -> f64 {
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        f(s) / (f(s) + f(1.0 - s))
    }
}

impl MotherBump {
    pub fn profile(&self, t: f64) -> f64 {
        let dist = 0.5 - t.abs();
        if dist <= 0.0 {
            0.0
        } else {
            smooth_step(dist / self.taper)
        }
    }
}

/// Spatial cube and frequency center of a packet, in floating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketTile {
    pub corner: Vec<f64>,
    pub side: f64,
    pub freq_center: Vec<f64>,
}

impl PacketTile {
    pub fn center(&self) -> Vec<f64> {
        self.corner.iter().map(|c| c + self.side / 2.0).collect()
    }
}

pub fn packet_tile(sys: &TileSystem, t: &Tile) -> PacketTile {
    let side = q_to_f64(&t.r.side());
    PacketTile {
        corner: t.r.index.iter().map(|&i| i as f64 * side).collect(),
        side,
        freq_center: sys.component(t).bar.center().iter().map(q_to_f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WavePacket {
    pub tile: PacketTile,
    pub grid: GridSpec,
    /// Nonzero Fourier coefficients (flat index, value).
    pub support: Vec<(usize, Complex64)>,
}

impl WavePacket {
    pub fn sample(&self) -> SampledField {
        let mut data = vec![Complex64::default(); self.grid.len()];
        for &(j, v) in &self.support {
            data[j] += v;
        }
        fft_nd(&mut data, self.grid.n, self.grid.d, false);
        SampledField { grid: self.grid.clone(), values: data }
    }
}

pub fn synthesize_packet(tile: &PacketTile, grid: &GridSpec, bump: &MotherBump) -> Result<WavePacket, WaveError> {
    let (d, n, l) = (grid.d, grid.n, grid.length());
    if tile.corner.len() != d || tile.freq_center.len() != d {
        return Err(WaveError::GridMismatch(format!("tile of dimension {} on a {d}-dimensional lattice", tile.corner.len())));
    }
    if grid.h > tile.side / 8.0 + 1e-15 {
        return Err(WaveError::GridTooCoarse { h: grid.h, side: tile.side });
    }
    if l < 4.0 * tile.side - 1e-12 {
        return Err(WaveError::RegionTooSmall { length: l, side: tile.side });
    }
    let center = tile.center();
    // Per axis: lattice frequencies inside ω̄ with their weights.
    let axes: Vec<Vec<(usize, Complex64)>> = (0..d)
        .map(|a| {
            let c = tile.freq_center[a];
            let lo = (l * (c - 0.5 / tile.side)).floor() as i64;
            let hi = (l * (c + 0.5 / tile.side)).ceil() as i64;
            (lo..=hi)
                .filter_map(|kappa| {
                    let offset = kappa as f64 / l - c;
                    let b = bump.profile(tile.side * offset);
                    (b > 0.0).then(|| {
                        let phase = -2.0 * PI * offset * center[a] + 2.0 * PI * (kappa as f64 / l) * grid.origin[a];
                        (kappa.rem_euclid(n as i64) as usize, Complex64::from_polar(b, phase))
                    })
                })
                .collect()
        })
        .collect();
    let mut support: Vec<(usize, Complex64)> = vec![(0, Complex64::new(1.0, 0.0))];
    for ax in &axes {
        let mut next = Vec::with_capacity(support.len() * ax.len());
        for &(j, v) in &support {
            for &(k, w) in ax {
                next.push((j * n + k, v * w));
            }
        }
        support = next;
    }
    let total: f64 = support.iter().map(|(_, v)| v.norm_sqr()).sum::<f64>() * l.powi(d as i32);
    if total <= 0.0 {
        return Err(WaveError::GridTooCoarse { h: grid.h, side: tile.side });
    }
    let s = 1.0 / total.sqrt();
    for (_, v) in &mut support {
        *v *= s;
    }
    support.sort_by_key(|(j, _)| *j);
    Ok(WavePacket { tile: tile.clone(), grid: grid.clone(), support })
}

/// ⟨F, φ⟩ = L^d Σ_κ F̂_κ · conj(φ̂_κ).
pub fn coefficient(f: &Spectrum, p: &WavePacket) -> Result<Complex64, WaveError> {
    if f.grid != p.grid {
        return Err(WaveError::GridMismatch("packet and field use different lattices".into()));
    }
    let s: Complex64 = p.support.iter().map(|&(j, v)| f.coeffs[j] * v.conj()).sum();
    Ok(s * f.grid.length().powi(f.grid.d as i32))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// M₂F(x) = sup (|Q|^{−1} ∫_Q |F|²)^{1/2} over cubes Q ∋ x from the dyadic grid and
/// its translates by one and two thirds of the side.
pub fn maximal_m2(f: &SampledField) -> RealField {
    let (n, d) = (f.grid.n, f.grid.d);
    let energy: Vec<f64> = f.values.iter().map(|v| v.norm_sqr()).collect();
    let mut best = vec![0.0f64; energy.len()];
    let mut side = 1usize;
    while side <= n {
        let per = n / side;
        let mut offsets: Vec<usize> = (0..3).map(|t| (t * side) / 3).collect();
        offsets.dedup();
        for &o in &offsets {
            let cube_of = |flat: usize| -> usize {
                let mut r = flat;
                let mut id = 0;
                let mut mult = 1;
                for _ in 0..d {
                    let j = r % n;
                    r /= n;
                    id += (((j + n - o) % n) / side) * mult;
                    mult *= per;
                }
                id
            };
            let mut sums = vec![0.0f64; per.pow(d as u32)];
            for (j, e) in energy.iter().enumerate() {
                sums[cube_of(j)] += e;
            }
            let vol = side.pow(d as u32) as f64;
            for (j, b) in best.iter_mut().enumerate() {
                let avg = sums[cube_of(j)] / vol;
                if avg > *b {
                    *b = avg;
                }
            }
        }
        side *= 2;
    }
    RealField { grid: f.grid.clone(), values: best.into_iter().map(f64::sqrt).collect() }
}

/// |⟨F_i, φ_{s_i}⟩| for every distinct tile of every index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoefficientTable {
    pub per_index: Vec<BTreeMap<Tile, f64>>,
}

impl CoefficientTable {
    pub fn get(&self, t: &Tile) -> f64 {
        self.per_index[t.index].get(t).copied().unwrap_or(0.0)
    }
}

pub fn coefficient_table(sys: &TileSystem, fields: &[Spectrum], bump: &MotherBump) -> Result<CoefficientTable, WaveError> {
    if fields.len() != sys.n {
        return Err(WaveError::GridMismatch(format!("{} fields for n = {}", fields.len(), sys.n)));
    }
    let mut per_index = Vec::with_capacity(sys.n);
    for (i, f) in fields.iter().enumerate() {
        let mut map = BTreeMap::new();
        for t in sys.tiles_of(i) {
            let p = synthesize_packet(&packet_tile(sys, &t), &f.grid, bump)?;
            map.insert(t, coefficient(f, &p)?.norm());
        }
        per_index.push(map);
    }
    Ok(CoefficientTable { per_index })
}

fn volume(sys: &TileSystem, mt: usize) -> f64 {
    q_to_f64(&sys.tiles[mt].r.side()).powi(sys.d as i32)
}

/// Σ_{s∈P} |R_s|^{1−n/2} Π_i |⟨F_i, φ_{s_i}⟩|, over multi-tile ids `subset`.
pub fn model_form_value(sys: &TileSystem, subset: &[usize], table: &CoefficientTable) -> f64 {
    subset
        .iter()
        .map(|&s| {
            let prod: f64 = (0..sys.n).map(|i| table.get(&sys.tile(&sys.tiles[s], i))).product();
            volume(sys, s).powf(1.0 - sys.n as f64 / 2.0) * prod
        })
        .sum()
}

/// Λ_P(x) = Σ_{s∈P} |R_s|^{−n/2} Π_i |⟨F_i, φ_{s_i}⟩| 1_{R_s}(x) at the given points.
pub fn model_density(sys: &TileSystem, subset: &[usize], table: &CoefficientTable, points: &[Vec<f64>]) -> Vec<f64> {
    let terms: Vec<(PacketTile, f64)> = subset
        .iter()
        .map(|&s| {
            let mt = &sys.tiles[s];
            let prod: f64 = (0..sys.n).map(|i| table.get(&sys.tile(mt, i))).product();
            (packet_tile(sys, &sys.tile(mt, 0)), volume(sys, s).powf(-(sys.n as f64) / 2.0) * prod)
        })
        .collect();
    points
        .iter()
        .map(|x| {
            terms
                .iter()
                .filter(|(p, _)| (0..x.len()).all(|a| p.corner[a] <= x[a] && x[a] < p.corner[a] + p.side))
                .map(|(_, w)| w)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(d: usize, n: usize, h: f64) -> GridSpec {
        GridSpec::new(d, n, h, vec![0.0; d]).unwrap()
    }

    fn tile(corner: &[f64], side: f64, freq: &[f64]) -> PacketTile {
        PacketTile { corner: corner.to_vec(), side, freq_center: freq.to_vec() }
    }

    fn random_field(g: &GridSpec, seed: u64) -> SampledField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..g.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        SampledField { grid: g.clone(), values }
    }

    #[test]
    fn centered_packet_is_real_even_and_normalized() {
        let g = grid(2, 64, 1.0 / 8.0);
        let p = synthesize_packet(&tile(&[0.0, 0.0], 1.0, &[0.0, 0.0]), &g, &MotherBump::default()).unwrap();
        let f = p.sample();
        assert!((f.norm() - 1.0).abs() < 1e-9);
        assert!(f.values.iter().all(|v| v.im.abs() < 1e-12));
        // Even about the center (1/2, 1/2), i.e. lattice index 4.
        let at = |a: usize, b: usize| f.values[(a % 64) * 64 + (b % 64)].re;
        for (a, b) in [(1, 2), (7, 3), (20, 9)] {
            assert!((at(4 + a, 4 + b) - at(64 + 4 - a, 64 + 4 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn packets_are_translation_covariant() {
        let g = grid(1, 256, 1.0 / 16.0);
        let bump = MotherBump::default();
        let a = synthesize_packet(&tile(&[1.0], 2.0, &[0.75]), &g, &bump).unwrap().sample();
        let b = synthesize_packet(&tile(&[3.0], 2.0, &[0.75]), &g, &bump).unwrap().sample();
        // Shift by 2 = 32 lattice steps; the absolute modulation contributes e^{2πi·0.75·2}.
        let phase = Complex64::from_polar(1.0, 2.0 * PI * 0.75 * 2.0);
        for j in 0..256 {
            assert!((b.values[(j + 32) % 256] - phase * a.values[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_norm_across_random_tiles() {
        let g = grid(2, 128, 1.0 / 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let side = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
            let corner: Vec<f64> = (0..2).map(|_| rng.gen_range(0..8) as f64 * side).collect();
            let freq: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = synthesize_packet(&tile(&corner, side, &freq), &g, &MotherBump::default()).unwrap();
            assert!((p.sample().norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn coefficients_are_linear_and_normalized() {
        let g = grid(2, 64, 1.0 / 8.0);
        let bump = MotherBump::default();
        let p = synthesize_packet(&tile(&[1.0, 2.0], 1.0, &[0.3, -1.2]), &g, &bump).unwrap();
        let self_coef = coefficient(&p.sample().spectrum(), &p).unwrap();
        assert!((self_coef - Complex64::new(1.0, 0.0)).norm() < 1e-6);
        let (f, h) = (random_field(&g, 1), random_field(&g, 2));
        let (a, b) = (Complex64::new(0.5, -2.0), Complex64::new(-1.5, 0.25));
        let mix = SampledField { grid: g.clone(), values: f.values.iter().zip(&h.values).map(|(x, y)| a * x + b * y).collect() };
        let lhs = coefficient(&mix.spectrum(), &p).unwrap();
        let rhs = a * coefficient(&f.spectrum(), &p).unwrap() + b * coefficient(&h.spectrum(), &p).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
        // Quadrature in space agrees with the spectral formula.
        let direct = f.inner(&p.sample()).unwrap();
        assert!((direct - coefficient(&f.spectrum(), &p).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn disjoint_frequency_boxes_do_not_leak() {
        let g = grid(2, 64, 1.0 / 8.0);
        let bump = MotherBump::default();
        let p = synthesize_packet(&tile(&[1.0, 1.0], 1.0, &[0.5, 0.5]), &g, &bump).unwrap();
        let far = synthesize_packet(&tile(&[1.0, 1.0], 1.0, &[1.5, 0.5]), &g, &bump).unwrap();
        assert!(coefficient(&far.sample().spectrum(), &p).unwrap().norm() <= 1e-3);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = grid(1, 64, 0.25);
        let err = synthesize_packet(&tile(&[0.0], 1.0, &[0.0]), &g, &MotherBump::default()).unwrap_err();
        assert!(matches!(err, WaveError::GridTooCoarse { .. }));
    }

    #[test]
    fn bessel_at_one_scale() {
        let g = grid(2, 64, 1.0 / 8.0);
        let bump = MotherBump::default();
        for seed in 0..3 {
            let f = random_field(&g, seed);
            let spec = f.spectrum();
            let mut total = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    for fr in [[0.5, 0.5], [1.5, 0.5], [-0.5, 2.5]] {
                        let p = synthesize_packet(&tile(&[a as f64, b as f64], 1.0, &fr), &g, &bump).unwrap();
                        total += coefficient(&spec, &p).unwrap().norm_sqr();
                    }
                }
            }
            assert!(total <= 1.05 * f.energy(), "{total} vs {}", f.energy());
        }
    }

    #[test]
    fn maximal_function_examples() {
        let g = grid(2, 16, 0.25);
        let one = SampledField::from_fn(g.clone(), |_| Complex64::new(1.0, 0.0));
        assert!(maximal_m2(&one).values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let f = random_field(&g, 9);
        let m = maximal_m2(&f);
        assert!(f.values.iter().zip(&m.values).all(|(v, mv)| *mv >= v.norm() - 1e-12));
        // Indicator of one cell: the smallest cube holding the cell and x has s cells per side,
        // so M₂ = s^{−1} in d = 2; the far corner still sees the whole torus.
        let mut ind = SampledField::zeros(g.clone());
        ind.values[0] = Complex64::new(1.0, 0.0);
        let m = maximal_m2(&ind);
        assert!((m.values[0] - 1.0).abs() < 1e-12);
        assert!((m.values[1] - 0.5).abs() < 1e-12);
        assert!(m.values.iter().all(|&v| v >= 1.0 / 16.0 - 1e-12));
    }

    #[test]
    fn csv_and_metadata_round_trip() {
        let g = grid(1, 8, 0.5);
        let f = random_field(&g, 4);
        let g2 = SampledField::grid_from_metadata(&f.metadata_json()).unwrap();
        assert_eq!(g2, g);
        let back = SampledField::from_csv(g2, &f.to_csv()).unwrap();
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| (a - b).norm() < 1e-12));
    }
}
