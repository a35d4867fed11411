//! Mutually unbiased bases for prime dimensions and d = 4.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::numkernel::{c, ComplexMatrix, C64};
use crate::qudit::{density_from_pure, DensityMatrix, PureState};

/// A complete set of `d + 1` mutually unbiased bases.
#[derive(Debug, Clone, PartialEq)]
pub struct MubSet {
    dim: usize,
    bases: Vec<Vec<PureState>>,
}

impl MubSet {
    /// Wraps an explicit list of bases. Only the shape is checked here; use
    /// [`unbiasedness_check`] and [`orthonormality_deviation`] for the rest.
    pub fn from_bases(dim: usize, bases: Vec<Vec<PureState>>) -> Result<Self> {
        if bases.len() != dim + 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bases", dim + 1),
                got: format!("{} bases", bases.len()),
            });
        }
        for basis in &bases {
            if basis.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dim} vectors per basis"),
                    got: format!("{} vectors", basis.len()),
                });
            }
            if let Some(v) = basis.iter().find(|v| v.dim() != dim) {
                return Err(Error::DimensionMismatch(dim, v.dim()));
            }
        }
        Ok(Self { dim, bases })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bases(&self) -> &[Vec<PureState>] {
        &self.bases
    }

    pub fn basis(&self, b: usize) -> &[PureState] {
        &self.bases[b]
    }

    /// Number of projectors, `d (d + 1)`.
    pub fn projector_count(&self) -> usize {
        self.dim * (self.dim + 1)
    }
}

pub fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n.is_multiple_of(k) {
            return false;
        }
        k += 1;
    }
    true
}

/// Whether [`build_mubs`] supports `d`.
pub fn is_supported(d: usize) -> bool {
    d == 4 || is_prime(d)
}

/// Builds `d + 1` mutually unbiased bases. Basis 0 is always the
/// computational basis.
pub fn build_mubs(d: usize) -> Result<MubSet> {
    let raw: Vec<Vec<Vec<C64>>> = match d {
        2 => qubit_bases(),
        4 => gf4_bases(),
        _ if is_prime(d) => odd_prime_bases(d),
        _ => return Err(Error::UnsupportedDimension(d)),
    };
    let bases = raw
        .into_iter()
        .map(|basis| {
            basis
                .into_iter()
                .map(|v| PureState::new(v).map(PureState::with_canonical_phase))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MubSet::from_bases(d, bases)
}

fn computational(d: usize) -> Vec<Vec<C64>> {
    (0..d)
        .map(|k| PureState::basis(d, k).amplitudes().to_vec())
        .collect()
}

fn qubit_bases() -> Vec<Vec<Vec<C64>>> {
    let h = FRAC_1_SQRT_2;
    vec![
        computational(2),
        vec![vec![c(h, 0.0), c(h, 0.0)], vec![c(h, 0.0), c(-h, 0.0)]],
        vec![vec![c(h, 0.0), c(0.0, h)], vec![c(h, 0.0), c(0.0, -h)]],
    ]
}

fn odd_prime_bases(d: usize) -> Vec<Vec<Vec<C64>>> {
    let norm = 1.0 / (d as f64).sqrt();
    let mut out = vec![computational(d)];
    for b in 1..=d {
        let basis = (0..d)
            .map(|m| {
                (0..d)
                    .map(|j| {
                        // exponent reduced mod d in integers keeps the phases exact
                        let k = (b % d * j % d * j + m * j) % d;
                        C64::from_polar(norm, 2.0 * PI * k as f64 / d as f64)
                    })
                    .collect()
            })
            .collect();
        out.push(basis);
    }
    out
}

// Five MUBs in C^4 from the GF(4) construction. Rows are vectors, entries in
// units of 1/2, encoded as 0 -> 1, 1 -> i, 2 -> -1, 3 -> -i.
const GF4_TABLE: [[[u8; 4]; 4]; 4] = [
    [[0, 0, 0, 0], [0, 0, 2, 2], [0, 2, 2, 0], [0, 2, 0, 2]],
    [[0, 2, 3, 3], [0, 2, 1, 1], [0, 0, 1, 3], [0, 0, 3, 1]],
    [[0, 3, 3, 2], [0, 3, 1, 0], [0, 1, 1, 2], [0, 1, 3, 0]],
    [[0, 3, 2, 3], [0, 3, 0, 1], [0, 1, 0, 3], [0, 1, 2, 1]],
];

fn gf4_bases() -> Vec<Vec<Vec<C64>>> {
    let unit = [c(0.5, 0.0), c(0.0, 0.5), c(-0.5, 0.0), c(0.0, -0.5)];
    let mut out = vec![computational(4)];
    for basis in GF4_TABLE.iter() {
        out.push(
            basis
                .iter()
                .map(|row| row.iter().map(|&e| unit[e as usize]).collect())
                .collect(),
        );
    }
    out
}

/// Largest `| |<e_i^a|e_j^b>|^2 - 1/d |` over all pairs of distinct bases.
pub fn unbiasedness_check(s: &MubSet) -> f64 {
    let target = 1.0 / s.dim as f64;
    let mut worst = 0.0f64;
    for a in 0..s.bases.len() {
        for b in a + 1..s.bases.len() {
            for u in &s.bases[a] {
                for v in &s.bases[b] {
                    worst = worst.max((u.inner(v).norm_sqr() - target).abs());
                }
            }
        }
    }
    worst
}

/// Largest `| <e_i^b|e_j^b> - delta_ij |` within any single basis.
pub fn orthonormality_deviation(s: &MubSet) -> f64 {
    let mut worst = 0.0f64;
    for basis in &s.bases {
        for (i, u) in basis.iter().enumerate() {
            for (j, v) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((u.inner(v) - c(want, 0.0)).norm());
            }
        }
    }
    worst
}

/// All `d (d + 1)` rank-one projectors, basis-major then outcome.
pub fn mub_projectors(s: &MubSet) -> Vec<DensityMatrix> {
    s.bases
        .iter()
        .flat_map(|basis| basis.iter().map(density_from_pure))
        .collect()
}

/// Largest entry of `sum_k P_k^b - I` over all bases.
pub fn completeness_deviation(s: &MubSet) -> f64 {
    let id = ComplexMatrix::identity(s.dim);
    s.bases
        .iter()
        .map(|basis| {
            let sum = basis
                .iter()
                .fold(ComplexMatrix::zeros(s.dim, s.dim), |acc, v| {
                    &acc + density_from_pure(v).matrix()
                });
            (&sum - &id).max_abs()
        })
        .fold(0.0, f64::max)
}
