//! Exact combinatorics and single-scale Fourier experiments for multilinear
//! forms whose singular subspace has fractional rank k/d.

pub mod grids;
pub mod linalg;
pub mod singlescale;
pub mod subspace;
pub mod tiles;
pub mod trees;
pub mod wavepackets;
pub mod vectree;
