//! Random fixtures shared by unit tests.

use rand::Rng;

use crate::channels::KrausChannel;
use crate::numkernel::{c, hermitian_eig, ComplexMatrix};
use crate::qudit::{DensityMatrix, PureState};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

pub fn random_density(d: usize, rng: &mut impl Rng) -> DensityMatrix {
    let g = random_matrix(d, d, rng);
    let m = &g * &g.adjoint();
    let t = m.trace().re;
    DensityMatrix::new(m.scale_real(1.0 / t)).unwrap()
}

pub fn random_pure(d: usize, rng: &mut impl Rng) -> PureState {
    PureState::normalized(random_matrix(d, 1, rng).into_data()).unwrap()
}

pub fn random_unitary(d: usize, rng: &mut impl Rng) -> ComplexMatrix {
    hermitian_eig(&random_matrix(d, d, rng).hermitian_part())
        .unwrap()
        .vectors
}

/// Random channel from a random isometry split into `k` blocks.
pub fn random_channel(d: usize, k: usize, rng: &mut impl Rng) -> KrausChannel {
    let v = random_matrix(k * d, d, rng);
    let g = &v.adjoint() * &v;
    let inv_sqrt = hermitian_eig(&g)
        .unwrap()
        .reconstruct_with(|l| 1.0 / l.sqrt());
    let w = &v * &inv_sqrt;
    let ops = (0..k)
        .map(|b| ComplexMatrix::from_fn(d, d, |i, j| w[(b * d + i, j)]))
        .collect();
    KrausChannel::new(d, ops).unwrap()
}
