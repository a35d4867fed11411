//! Qudit states and figures of merit.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::numkernel::{c, hermitian_eig, psd_sqrt, ComplexMatrix, C64};

const NORM_TOL: f64 = 1e-12;
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-10;
pub const DENSITY_TRACE_TOL: f64 = 1e-10;
pub const DENSITY_EIG_TOL: f64 = 1e-9;

// Rounding leaves eigenvalues near 1e-17 in the null space of
// sqrt(a) b sqrt(a); their square roots would otherwise add ~1e-8.
const FIDELITY_EIG_FLOOR: f64 = 1e-14;

/// Normalized pure state over the slit basis `{|0>, ..., |d-1>}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n2: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if amplitudes.is_empty() || (n2 - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(n2));
        }
        Ok(Self { amplitudes })
    }

    /// Rescales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(amplitudes: Vec<C64>) -> Result<Self> {
        let n = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if amplitudes.is_empty() || n == 0.0 || !n.is_finite() {
            return Err(Error::NotNormalized(n * n));
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|z| z / n).collect(),
        })
    }

    /// Computational basis state `|k>`.
    pub fn basis(dim: usize, k: usize) -> Self {
        assert!(k < dim, "basis index {k} out of range for d = {dim}");
        let mut a = vec![c(0.0, 0.0); dim];
        a[k] = c(1.0, 0.0);
        Self { amplitudes: a }
    }

    /// `(1/sqrt(d)) sum_l |l>`
    pub fn uniform(dim: usize) -> Self {
        Self::with_phases(&vec![0.0; dim])
    }

    /// `(1/sqrt(d)) sum_l e^{i phi_l} |l>`
    pub fn with_phases(phases: &[f64]) -> Self {
        let amp = 1.0 / (phases.len() as f64).sqrt();
        Self {
            amplitudes: phases.iter().map(|&p| C64::from_polar(amp, p)).collect(),
        }
    }

    /// Amplitudes `c_l = beta_l e^{i phi_l}`, normalized.
    pub fn from_polar(moduli: &[f64], phases: &[f64]) -> Result<Self> {
        if moduli.len() != phases.len() {
            return Err(Error::DimensionMismatch(moduli.len(), phases.len()));
        }
        Self::normalized(
            moduli
                .iter()
                .zip(phases)
                .map(|(&b, &p)| C64::from_polar(b, p))
                .collect(),
        )
    }

    /// `(|j> + phase |k>) / sqrt(2)`
    pub fn two_slit(dim: usize, j: usize, k: usize, phase: C64) -> Self {
        let mut a = vec![c(0.0, 0.0); dim];
        a[j] = c(FRAC_1_SQRT_2, 0.0);
        a[k] = phase * FRAC_1_SQRT_2;
        Self::new(a).expect("two-slit superposition is normalized")
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// `<self|other>`
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Multiplies by a global phase so the first non-zero amplitude is real
    /// positive.
    pub fn with_canonical_phase(mut self) -> Self {
        if let Some(z) = self.amplitudes.iter().find(|z| z.norm() > 1e-12) {
            let ph = z.conj() / z.norm();
            for a in &mut self.amplitudes {
                *a *= ph;
            }
        }
        self
    }
}

/// Hermitian, unit-trace, positive semi-definite `d x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-10) and eigenvalues
    /// `>= -1e-9`. Near-miss tomographic estimates go through
    /// `tomography::make_physical` instead.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() == 0 {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        let dev = matrix.hermitian_deviation();
        if dev > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!(
                "Hermitian deviation {dev:e}"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > DENSITY_TRACE_TOL || tr.im.abs() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let min = hermitian_eig(&matrix)?
            .values
            .last()
            .copied()
            .unwrap_or(0.0);
        if min < -DENSITY_EIG_TOL {
            return Err(Error::InvalidDensity(format!("eigenvalue {min:e}")));
        }
        Ok(Self {
            matrix: matrix.hermitian_part(),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eig(&self.matrix)
            .expect("density matrix is Hermitian")
            .values
    }
}

impl From<&PureState> for DensityMatrix {
    fn from(psi: &PureState) -> Self {
        density_from_pure(psi)
    }
}

/// `|psi><psi|`
pub fn density_from_pure(psi: &PureState) -> DensityMatrix {
    DensityMatrix {
        matrix: ComplexMatrix::outer(psi.amplitudes(), psi.amplitudes()),
    }
}

/// Uhlmann fidelity `Tr sqrt( sqrt(a) b sqrt(a) )`, clamped to `[0, 1]`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let sa = psd_sqrt(a.matrix())?;
    let inner = (&(&sa * b.matrix()) * &sa).hermitian_part();
    let f: f64 = hermitian_eig(&inner)?
        .values
        .iter()
        .map(|&l| {
            if l > FIDELITY_EIG_FLOOR {
                l.sqrt()
            } else {
                0.0
            }
        })
        .sum();
    Ok(f.clamp(0.0, 1.0))
}

/// `Tr rho^2`
pub fn purity(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    // Tr(rho rho) = sum_ij rho_ij rho_ji = sum_ij |rho_ij|^2 for Hermitian rho
    m.data().iter().map(|z| z.norm_sqr()).sum()
}

/// `<phi|rho|phi>`, clamped to `[0, 1]`.
pub fn projection_probability(rho: &DensityMatrix, phi: &PureState) -> Result<f64> {
    if rho.dim() != phi.dim() {
        return Err(Error::DimensionMismatch(rho.dim(), phi.dim()));
    }
    let v = rho.matrix().matvec(phi.amplitudes())?;
    let p: C64 = phi
        .amplitudes()
        .iter()
        .zip(&v)
        .map(|(a, b)| a.conj() * b)
        .sum();
    Ok(p.re.clamp(0.0, 1.0))
}

/// `(1/2) ||a - b||_1` for Hermitian arguments.
pub fn trace_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let diff = a.try_sub(b)?.hermitian_part();
    Ok(0.5
        * hermitian_eig(&diff)?
            .values
            .iter()
            .map(|l| l.abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_density, random_pure, random_unitary};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_from_pure_examples() {
        let r = density_from_pure(&PureState::basis(2, 0));
        assert!(
            r.matrix()
                .distance(&ComplexMatrix::from_real_diagonal(&[1.0, 0.0]))
                < 1e-15
        );

        let plus = PureState::uniform(2);
        let r = density_from_pure(&plus);
        assert!(r
            .matrix()
            .data()
            .iter()
            .all(|z| (z - c(0.5, 0.0)).norm() < 1e-15));

        let r = density_from_pure(&PureState::uniform(5));
        assert!(r
            .matrix()
            .data()
            .iter()
            .all(|z| (z - c(0.2, 0.0)).norm() < 1e-15));
        assert!((purity(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density(3, &mut rng);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);

        let z0 = density_from_pure(&PureState::basis(2, 0));
        let z1 = density_from_pure(&PureState::basis(2, 1));
        assert!(fidelity(&z0, &z1).unwrap().abs() < 1e-12);

        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((fidelity(&z0, &mixed).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);

        assert!(matches!(
            fidelity(&z0, &DensityMatrix::maximally_mixed(3)),
            Err(Error::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn purity_examples() {
        assert!((purity(&density_from_pure(&PureState::uniform(4))) - 1.0).abs() < 1e-14);
        assert!((purity(&DensityMatrix::maximally_mixed(4)) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let z0 = density_from_pure(&PureState::basis(3, 0));
        assert!(
            (projection_probability(&z0, &PureState::basis(3, 0)).unwrap() - 1.0).abs() < 1e-14
        );
        assert!(
            projection_probability(&z0, &PureState::basis(3, 1))
                .unwrap()
                .abs()
                < 1e-14
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_pure(3, &mut rng);
        let p = projection_probability(&DensityMatrix::maximally_mixed(3), &phi).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn density_validation_rejects_unphysical() {
        let m = ComplexMatrix::from_real_diagonal(&[1.1, -0.1]);
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::InvalidDensity(_))
        ));
        let m = ComplexMatrix::from_real_diagonal(&[0.6, 0.6]);
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::InvalidDensity(_))
        ));
        let mut m = ComplexMatrix::from_real_diagonal(&[0.5, 0.5]);
        m[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(
            DensityMatrix::new(m),
            Err(Error::InvalidDensity(_))
        ));
    }

    #[test]
    fn pure_state_validation() {
        assert!(matches!(
            PureState::new(vec![c(1.0, 0.0), c(1.0, 0.0)]),
            Err(Error::NotNormalized(_))
        ));
        let s = PureState::from_polar(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((s.inner(&s).re - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn pure_fidelity_reduction(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let psi = random_pure(d, &mut rng);
            let rho = random_density(d, &mut rng);
            let f = fidelity(&density_from_pure(&psi), &rho).unwrap();
            let p = projection_probability(&rho, &psi).unwrap();
            prop_assert!((f * f - p).abs() < 1e-8);
        }

        #[test]
        fn fidelity_symmetric(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_density(d, &mut rng);
            let b = random_density(d, &mut rng);
            prop_assert!((fidelity(&a, &b).unwrap() - fidelity(&b, &a).unwrap()).abs() < 1e-8);
        }

        #[test]
        fn purity_unitary_invariant_and_bounded(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(d, &mut rng);
            let u = random_unitary(d, &mut rng);
            let rotated = DensityMatrix::new(u.sandwich(rho.matrix()).unwrap().hermitian_part()).unwrap();
            let p = purity(&rho);
            prop_assert!((p - purity(&rotated)).abs() < 1e-10);
            prop_assert!(p >= 1.0 / d as f64 - 1e-9 && p <= 1.0 + 1e-9);
        }

        #[test]
        fn projections_sum_to_one_over_a_basis(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(d, &mut rng);
            let u = random_unitary(d, &mut rng);
            let total: f64 = (0..d)
                .map(|k| projection_probability(&rho, &PureState::normalized(u.column(k)).unwrap()).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
