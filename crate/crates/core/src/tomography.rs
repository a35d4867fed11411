//! Standard quantum process tomography: preparation set, simulated MUB
//! measurements, linear-inversion state tomography, chi reconstruction and
//! transfer-matrix based state recovery.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::channels::{all_pairs, ChiMatrix, KrausChannel};
use crate::error::{Error, Result};
use crate::mub::MubSet;
use crate::numkernel::{
    c, hermitian_eig, pseudo_inverse_with_rank, singular_values, unvec_row_major, vec_row_major,
    ComplexMatrix, C64,
};
use crate::qudit::{density_from_pure, fidelity, projection_probability, DensityMatrix, PureState};

/// Largest acceptable condition number of the preparation set.
pub const MAX_PREP_CONDITION: f64 = 1e6;
/// Largest acceptable residual of the matrix-unit expansion.
pub const EXPANSION_RESIDUAL_TOL: f64 = 1e-6;
/// Default relative cutoff for the transfer-matrix pseudo-inverse.
pub const DEFAULT_RECOVERY_RCOND: f64 = 1e-3;
/// Hermiticity tolerance accepted by [`make_physical`].
pub const REPAIR_HERMITIAN_TOL: f64 = 1e-8;

/// `d^2` input states spanning the operator space, with analytic
/// coefficients expressing every matrix unit `|k><l|` in terms of them.
#[derive(Clone, Debug)]
pub struct PreparationBasis {
    dim: usize,
    states: Vec<PureState>,
    densities: Vec<DensityMatrix>,
    expansion: ComplexMatrix,
}

/// Ordering: `|n>` for `n < d`, then `(|j> + |k>)/sqrt2` and then
/// `(|j> + i|k>)/sqrt2`, pairs `j < k` in lexicographic order.
pub fn preparation_basis(d: usize) -> Result<PreparationBasis> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "preparation basis needs d >= 2, got {d}"
        )));
    }
    let pairs: Vec<(usize, usize)> = all_pairs(d).collect();
    let np = pairs.len();
    let mut states: Vec<PureState> = (0..d).map(|n| PureState::basis(d, n)).collect();
    for &(j, k) in &pairs {
        states.push(PureState::two_slit(d, j, k, c(1.0, 0.0)));
    }
    for &(j, k) in &pairs {
        states.push(PureState::two_slit(d, j, k, c(0.0, 1.0)));
    }

    let n = d * d;
    let mut expansion = ComplexMatrix::zeros(n, n);
    for k in 0..d {
        expansion[(k * d + k, k)] = c(1.0, 0.0);
    }
    for (q, &(j, k)) in pairs.iter().enumerate() {
        let plus = d + q;
        let imag = d + np + q;
        // |j><k| = P+ + i Pi - (1+i)/2 (Pj + Pk)
        let jk = j * d + k;
        expansion[(jk, plus)] = c(1.0, 0.0);
        expansion[(jk, imag)] = c(0.0, 1.0);
        expansion[(jk, j)] = c(-0.5, -0.5);
        expansion[(jk, k)] = c(-0.5, -0.5);
        // |k><j| = P+ - i Pi - (1-i)/2 (Pj + Pk)
        let kj = k * d + j;
        expansion[(kj, plus)] = c(1.0, 0.0);
        expansion[(kj, imag)] = c(0.0, -1.0);
        expansion[(kj, j)] = c(-0.5, 0.5);
        expansion[(kj, k)] = c(-0.5, 0.5);
    }
    let densities = states.iter().map(density_from_pure).collect();
    let basis = PreparationBasis {
        dim: d,
        states,
        densities,
        expansion,
    };
    let cond = basis.condition_number();
    if !(cond < MAX_PREP_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    Ok(basis)
}

impl PreparationBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[PureState] {
        &self.states
    }

    pub fn densities(&self) -> &[DensityMatrix] {
        &self.densities
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Row `k d + l` holds the coefficients of `|k><l|` over the prepared
    /// density matrices.
    pub fn expansion(&self) -> &ComplexMatrix {
        &self.expansion
    }

    /// `d^2 x d^2` matrix whose columns are the vectorized prepared states.
    pub fn state_matrix(&self) -> ComplexMatrix {
        let n = self.dim * self.dim;
        let cols: Vec<Vec<C64>> = self
            .densities
            .iter()
            .map(|r| vec_row_major(r.matrix()))
            .collect();
        ComplexMatrix::from_fn(n, n, |i, j| cols[j][i])
    }

    pub fn condition_number(&self) -> f64 {
        let s = singular_values(&self.state_matrix());
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            _ => f64::INFINITY,
        }
    }

    /// Largest entry of `sum_j expansion[(kl), j] rho_j - |k><l|` over all
    /// matrix units.
    pub fn expansion_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for k in 0..d {
            for l in 0..d {
                let mut acc = self.combine(k * d + l, |j| self.densities[j].matrix());
                acc[(k, l)] -= c(1.0, 0.0);
                worst = worst.max(acc.max_abs());
            }
        }
        worst
    }

    /// `sum_j expansion[(row, j)] * m_j`
    fn combine<'a>(&self, row: usize, m: impl Fn(usize) -> &'a ComplexMatrix) -> ComplexMatrix {
        let d = self.dim;
        let mut acc = ComplexMatrix::zeros(d, d);
        for j in 0..self.expansion.cols() {
            let w = self.expansion[(row, j)];
            if w != c(0.0, 0.0) {
                acc = &acc + &m(j).scale(w);
            }
        }
        acc
    }
}

/// Shot budget for simulated measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    /// Exact Born probabilities.
    Exact,
    /// Multinomial counts per (preparation, basis) with this many shots.
    Sampled(u64),
}

impl Shots {
    pub fn count(self) -> Option<u64> {
        match self {
            Shots::Exact => None,
            Shots::Sampled(n) => Some(n),
        }
    }
}

/// One projector outcome for one prepared state.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub dim: usize,
    pub prep: usize,
    pub basis: usize,
    pub outcome: usize,
    pub probability: f64,
    pub shots: Shots,
}

/// Stream index for the RNG of one (preparation, basis) cell.
fn cell_stream(prep: usize, basis: usize, n_bases: usize) -> u64 {
    (prep * n_bases + basis) as u64
}

/// Measures every channel output in every MUB. Outputs of trace-decreasing
/// channels are post-selected (renormalized) first. Sampled mode draws one
/// multinomial per (preparation, basis) from an independent ChaCha stream,
/// so results do not depend on scheduling.
pub fn simulate_measurements(
    ch: &KrausChannel,
    prep: &PreparationBasis,
    mubs: &MubSet,
    shots: Shots,
    seed: u64,
) -> Result<Vec<MeasurementRecord>> {
    let d = ch.dim();
    if prep.dim() != d {
        return Err(Error::DimensionMismatch(d, prep.dim()));
    }
    if mubs.dim() != d {
        return Err(Error::DimensionMismatch(d, mubs.dim()));
    }
    if shots == Shots::Sampled(0) {
        return Err(Error::InvalidParameter("shots must be >= 1".into()));
    }
    let n_bases = mubs.bases().len();
    let per_prep: Vec<Vec<MeasurementRecord>> = prep
        .densities()
        .par_iter()
        .enumerate()
        .map(|(j, rho)| {
            let out = ch.apply(rho)?.state;
            let mut recs = Vec::with_capacity(n_bases * d);
            for (b, basis) in mubs.bases().iter().enumerate() {
                let exact = basis
                    .iter()
                    .map(|v| projection_probability(&out, v))
                    .collect::<Result<Vec<f64>>>()?;
                let probs = match shots {
                    Shots::Exact => exact,
                    Shots::Sampled(n) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(cell_stream(j, b, n_bases));
                        multinomial(n, &exact, &mut rng)
                            .into_iter()
                            .map(|k| k as f64 / n as f64)
                            .collect()
                    }
                };
                for (k, p) in probs.into_iter().enumerate() {
                    recs.push(MeasurementRecord {
                        dim: d,
                        prep: j,
                        basis: b,
                        outcome: k,
                        probability: p,
                        shots,
                    });
                }
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    Ok(per_prep.into_iter().flatten().collect())
}

/// Multinomial draw as a chain of conditional binomials.
fn multinomial(n: u64, probs: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    let total: f64 = probs.iter().sum();
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (k, &p) in probs.iter().enumerate() {
        let p = p / total;
        if k + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = if left == 0 || q == 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("q in [0, 1]").sample(rng)
        };
        out.push(draw);
        left -= draw;
        mass -= p;
    }
    out
}

/// Orders the records of one preparation by (basis, outcome), rejecting
/// gaps, duplicates and foreign entries.
fn projector_probabilities(records: &[&MeasurementRecord], mubs: &MubSet) -> Result<Vec<f64>> {
    let d = mubs.dim();
    let n = mubs.projector_count();
    let mut probs: Vec<Option<f64>> = vec![None; n];
    let prep = records.first().map(|r| r.prep);
    for r in records {
        if r.dim != d {
            return Err(Error::DimensionMismatch(d, r.dim));
        }
        if Some(r.prep) != prep {
            return Err(Error::IncompleteRecords(format!(
                "mixed preparations {} and {}",
                prep.unwrap_or(0),
                r.prep
            )));
        }
        if r.basis > d || r.outcome >= d {
            return Err(Error::IncompleteRecords(format!(
                "projector (basis {}, outcome {}) does not exist for d = {d}",
                r.basis, r.outcome
            )));
        }
        if !(0.0..=1.0).contains(&r.probability) {
            return Err(Error::BadProbability(r.probability));
        }
        let slot = &mut probs[r.basis * d + r.outcome];
        if slot.is_some() {
            return Err(Error::IncompleteRecords(format!(
                "duplicate projector (basis {}, outcome {})",
                r.basis, r.outcome
            )));
        }
        *slot = Some(r.probability);
    }
    let missing = probs.iter().filter(|p| p.is_none()).count();
    if missing > 0 {
        return Err(Error::IncompleteRecords(format!(
            "{missing} of {n} projectors missing"
        )));
    }
    Ok(probs.into_iter().map(|p| p.unwrap_or(0.0)).collect())
}

/// `sum_{b,k} p_{b,k} |e_k^b><e_k^b| - I` without positivity repair.
pub fn qst_raw(records: &[MeasurementRecord], mubs: &MubSet) -> Result<ComplexMatrix> {
    let refs: Vec<&MeasurementRecord> = records.iter().collect();
    qst_raw_refs(&refs, mubs)
}

fn qst_raw_refs(records: &[&MeasurementRecord], mubs: &MubSet) -> Result<ComplexMatrix> {
    let d = mubs.dim();
    let probs = projector_probabilities(records, mubs)?;
    let mut acc = ComplexMatrix::identity(d).scale_real(-1.0);
    for (v, p) in mubs.bases().iter().flatten().zip(probs) {
        if p != 0.0 {
            acc = &acc + &density_from_pure(v).matrix().scale_real(p);
        }
    }
    Ok(acc.hermitian_part())
}

/// Linear-inversion state tomography from a complete set of MUB records for
/// one preparation, followed by [`make_physical`].
pub fn qst_linear_inversion(records: &[MeasurementRecord], mubs: &MubSet) -> Result<DensityMatrix> {
    make_physical(&qst_raw(records, mubs)?)
}

/// Closest unit-trace PSD matrix in the eigenbasis of the input: negative
/// eigenvalues are zeroed one at a time from the bottom and their weight
/// spread evenly over the rest. The input is renormalized to unit trace
/// first.
pub fn make_physical(m: &ComplexMatrix) -> Result<DensityMatrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let dev = m.hermitian_deviation();
    if dev > REPAIR_HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let h = m.hermitian_part();
    let t = h.trace().re;
    if !(t > 1e-12) {
        return Err(Error::ZeroTrace(t));
    }
    let eig = hermitian_eig(&h.scale_real(1.0 / t))?;
    let vectors = eig.vectors;
    let mut lam = eig.values;
    if lam.last().is_some_and(|&l| l < 0.0) {
        let mut kept = lam.len();
        let mut deficit = 0.0;
        while kept > 0 && lam[kept - 1] + deficit / (kept as f64) < 0.0 {
            deficit += lam[kept - 1];
            lam[kept - 1] = 0.0;
            kept -= 1;
        }
        for l in &mut lam[..kept] {
            *l += deficit / kept as f64;
        }
    }
    let n = h.rows();
    let out = ComplexMatrix::from_fn(n, n, |i, j| {
        let mut acc = c(0.0, 0.0);
        for (k, &l) in lam.iter().enumerate() {
            if l != 0.0 {
                acc += vectors[(i, k)] * vectors[(j, k)].conj() * l;
            }
        }
        acc
    });
    DensityMatrix::new(out.hermitian_part())
}

/// Reconstructed process matrix with fit diagnostics.
#[derive(Clone, Debug)]
pub struct SqptResult {
    pub chi: ChiMatrix,
    /// Frobenius norm of the anti-Hermitian part removed from chi.
    pub antihermitian_residual: f64,
    /// Residual of the matrix-unit expansion of the preparation set.
    pub expansion_residual: f64,
}

/// Reconstructs chi from one output state per prepared input.
pub fn sqpt(outputs: &[DensityMatrix], prep: &PreparationBasis) -> Result<ChiMatrix> {
    sqpt_with_diagnostics(outputs, prep).map(|r| r.chi)
}

/// Combines the outputs into `E(|k><l|)` through the preparation expansion
/// and fills `chi[(i d + k), (j d + l)] = <i| E(|k><l|) |j>`.
pub fn sqpt_with_diagnostics(
    outputs: &[DensityMatrix],
    prep: &PreparationBasis,
) -> Result<SqptResult> {
    let d = prep.dim();
    let n = d * d;
    if outputs.len() != n {
        return Err(Error::MissingOutputs {
            expected: n,
            got: outputs.len(),
        });
    }
    if let Some(o) = outputs.iter().find(|o| o.dim() != d) {
        return Err(Error::DimensionMismatch(d, o.dim()));
    }
    let expansion_residual = prep.expansion_residual();
    if expansion_residual > EXPANSION_RESIDUAL_TOL {
        return Err(Error::IllConditioned(expansion_residual));
    }
    let mut chi = ComplexMatrix::zeros(n, n);
    for k in 0..d {
        for l in 0..d {
            let e_kl = prep.combine(k * d + l, |j| outputs[j].matrix());
            for i in 0..d {
                for j in 0..d {
                    chi[(i * d + k, j * d + l)] = e_kl[(i, j)];
                }
            }
        }
    }
    let antihermitian_residual = (&chi - &chi.adjoint()).frobenius_norm() / 2.0;
    Ok(SqptResult {
        chi: ChiMatrix::from_reconstruction(d, chi)?,
        antihermitian_residual,
        expansion_residual,
    })
}

/// QST on every preparation's records, in preparation order.
pub fn reconstruct_outputs(
    records: &[MeasurementRecord],
    prep: &PreparationBasis,
    mubs: &MubSet,
) -> Result<Vec<DensityMatrix>> {
    let n = prep.len();
    let mut by_prep: Vec<Vec<&MeasurementRecord>> = vec![Vec::new(); n];
    for r in records {
        if r.prep >= n {
            return Err(Error::IncompleteRecords(format!(
                "preparation index {} out of range (have {n})",
                r.prep
            )));
        }
        by_prep[r.prep].push(r);
    }
    by_prep
        .par_iter()
        .enumerate()
        .map(|(j, recs)| {
            if recs.is_empty() {
                return Err(Error::IncompleteRecords(format!(
                    "no records for preparation {j}"
                )));
            }
            make_physical(&qst_raw_refs(recs, mubs)?)
        })
        .collect()
}

/// Full simulated pipeline.
#[derive(Clone, Debug)]
pub struct QptRun {
    pub records: Vec<MeasurementRecord>,
    pub outputs: Vec<DensityMatrix>,
    pub result: SqptResult,
}

pub fn run_qpt(
    ch: &KrausChannel,
    prep: &PreparationBasis,
    mubs: &MubSet,
    shots: Shots,
    seed: u64,
) -> Result<QptRun> {
    let records = simulate_measurements(ch, prep, mubs, shots, seed)?;
    let outputs = reconstruct_outputs(&records, prep, mubs)?;
    let result = sqpt_with_diagnostics(&outputs, prep)?;
    Ok(QptRun {
        records,
        outputs,
        result,
    })
}

/// Superoperator on row-major vectorized matrices,
/// `vec(E(rho)) = T vec(rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    dim: usize,
    matrix: ComplexMatrix,
}

/// The index reshuffle `T[(i d + j), (k d + l)] = chi[(i d + k), (j d + l)]`.
/// The reshuffle is its own inverse.
fn reshuffle(m: &ComplexMatrix, d: usize) -> ComplexMatrix {
    let n = d * d;
    ComplexMatrix::from_fn(n, n, |r, s| {
        let (i, j) = (r / d, r % d);
        let (k, l) = (s / d, s % d);
        m[(i * d + k, j * d + l)]
    })
}

pub fn transfer_from_chi(chi: &ChiMatrix) -> TransferMatrix {
    TransferMatrix {
        dim: chi.dim(),
        matrix: reshuffle(chi.matrix(), chi.dim()),
    }
}

impl TransferMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Back to the process matrix (same reshuffle).
    pub fn to_chi(&self) -> Result<ChiMatrix> {
        ChiMatrix::from_reconstruction(self.dim, reshuffle(&self.matrix, self.dim))
    }

    /// `(Xi_k)_{ij} = chi[k, i d + j]`, which is the `(k / d, k % d)` block
    /// of `T` in a `d x d` tiling.
    pub fn xi_block(&self, k: usize) -> ComplexMatrix {
        let d = self.dim;
        let (u, v) = (k / d, k % d);
        ComplexMatrix::from_fn(d, d, |i, j| self.matrix[(u * d + i, v * d + j)])
    }

    pub fn apply(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        let d = self.dim;
        if m.rows() != d || m.cols() != d {
            return Err(Error::DimensionMismatch(d, m.rows()));
        }
        unvec_row_major(&self.matrix.matvec(&vec_row_major(m))?, d, d)
    }

    /// `max_{kl} | sum_i T[(i d + i), (k d + l)] - delta_kl |`
    pub fn trace_preservation_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for k in 0..d {
            for l in 0..d {
                let s: C64 = (0..d).map(|i| self.matrix[(i * d + i, k * d + l)]).sum();
                let want = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((s - c(want, 0.0)).norm());
            }
        }
        worst
    }
}

/// Options for [`recover_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryOptions {
    /// Singular values below `rcond * s_max` are discarded.
    pub rcond: f64,
    /// Refuse to recover when the transfer matrix is rank deficient.
    pub strict: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            rcond: DEFAULT_RECOVERY_RCOND,
            strict: false,
        }
    }
}

/// Recovered input state plus the rank information of the inversion.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub state: DensityMatrix,
    pub effective_rank: usize,
    pub full_rank: usize,
}

impl Recovery {
    pub fn is_rank_deficient(&self) -> bool {
        self.effective_rank < self.full_rank
    }
}

/// `make_physical(unvec(pinv(T) vec(rho_out)))`. The pseudo-inverse output is
/// rescaled to unit trace, which also undoes uniform post-selection loss.
pub fn recover(chi: &ChiMatrix, rho_out: &DensityMatrix, rcond: f64) -> Result<DensityMatrix> {
    recover_with(
        chi,
        rho_out,
        &RecoveryOptions {
            rcond,
            strict: false,
        },
    )
    .map(|r| r.state)
}

pub fn recover_with(
    chi: &ChiMatrix,
    rho_out: &DensityMatrix,
    opts: &RecoveryOptions,
) -> Result<Recovery> {
    let d = chi.dim();
    if rho_out.dim() != d {
        return Err(Error::DimensionMismatch(d, rho_out.dim()));
    }
    if !(opts.rcond > 0.0 && opts.rcond < 1.0) {
        return Err(Error::OutOfRange {
            what: "rcond must lie in (0, 1)",
            value: opts.rcond,
        });
    }
    let t = transfer_from_chi(chi);
    let (pinv, rank) = pseudo_inverse_with_rank(t.matrix(), opts.rcond);
    let full = d * d;
    if opts.strict && rank < full {
        return Err(Error::SingularBeyondRecovery { rank, full });
    }
    let v = pinv.matvec(&vec_row_major(rho_out.matrix()))?;
    let raw = unvec_row_major(&v, d, d)?.hermitian_part();
    Ok(Recovery {
        state: make_physical(&raw)?,
        effective_rank: rank,
        full_rank: full,
    })
}

/// Normalized Choi state `chi / tr chi`, with negative eigenvalues from
/// noisy reconstructions clipped.
fn choi_state(chi: &ChiMatrix) -> Result<DensityMatrix> {
    let eig = hermitian_eig(chi.matrix())?;
    let total: f64 = eig.values.iter().map(|l| l.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroTrace(total));
    }
    let m = eig.reconstruct_with(|l| l.max(0.0) / total);
    DensityMatrix::new(m.hermitian_part())
}

/// Squared fidelity between the normalized Choi states of two processes.
pub fn process_fidelity(a: &ChiMatrix, b: &ChiMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let f = fidelity(&choi_state(a)?, &choi_state(b)?)?;
    Ok((f * f).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{
        chi_from_kraus, depolarizing_channel, shift_channel, ShiftKind, ShiftWeights,
    };
    use crate::mub::build_mubs;
    use crate::numkernel::pseudo_inverse;
    use crate::qudit::{purity, trace_distance};
    use crate::testutil::{random_channel, random_density, random_unitary};
    use proptest::prelude::*;
    use rand::Rng;

    fn exact_chi(ch: &KrausChannel) -> ChiMatrix {
        let d = ch.dim();
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        run_qpt(ch, &prep, &mubs, Shots::Exact, 0)
            .unwrap()
            .result
            .chi
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn qubit_preparation_states() {
        let p = preparation_basis(2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let want = [
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(h, 0.0), c(h, 0.0)],
            vec![c(h, 0.0), c(0.0, h)],
        ];
        for (s, w) in p.states().iter().zip(&want) {
            for (a, b) in s.amplitudes().iter().zip(w) {
                assert!((a - b).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn qubit_off_diagonal_expansion() {
        let p = preparation_basis(2).unwrap();
        let r = |j: usize| p.densities()[j].matrix().clone();
        let direct = &(&r(2) + &r(3).scale(c(0.0, 1.0))) - &(&r(0) + &r(1)).scale(c(0.5, 0.5));
        let mut unit = ComplexMatrix::zeros(2, 2);
        unit[(0, 1)] = c(1.0, 0.0);
        assert!(direct.distance(&unit) < 1e-15);
        let row: Vec<C64> = (0..4).map(|j| p.expansion()[(1, j)]).collect();
        assert_eq!(
            row,
            vec![c(-0.5, -0.5), c(-0.5, -0.5), c(1.0, 0.0), c(0.0, 1.0)]
        );
    }

    #[test]
    fn expansion_is_exact_and_well_conditioned() {
        for d in 2..=6 {
            let p = preparation_basis(d).unwrap();
            assert_eq!(p.len(), d * d);
            assert!(p.expansion_residual() < 1e-15, "d={d}");
            let cond = p.condition_number();
            assert!(
                cond.is_finite() && cond < MAX_PREP_CONDITION,
                "d={d}: {cond}"
            );
            // expansion is the inverse of the state matrix, transposed
            let prod = &p.state_matrix() * &p.expansion().transpose();
            assert!(prod.distance(&ComplexMatrix::identity(d * d)) < 1e-12);
        }
        let p5 = preparation_basis(5).unwrap();
        assert_eq!(
            crate::numkernel::effective_rank(&p5.state_matrix(), 1e-12),
            25
        );
    }

    #[test]
    fn identity_measurements() {
        let d = 3;
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        let recs = simulate_measurements(&KrausChannel::identity(d), &prep, &mubs, Shots::Exact, 1)
            .unwrap();
        assert_eq!(recs.len(), d * d * d * (d + 1));
        let first: Vec<f64> = recs[..d].iter().map(|r| r.probability).collect();
        assert_eq!(first, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn probabilities_sum_to_one_per_cell() {
        let d = 4;
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        let ch = random_channel(d, 3, &mut rng(4));
        for shots in [Shots::Exact, Shots::Sampled(1000)] {
            let recs = simulate_measurements(&ch, &prep, &mubs, shots, 9).unwrap();
            for cell in recs.chunks(d) {
                let s: f64 = cell.iter().map(|r| r.probability).sum();
                match shots {
                    Shots::Exact => assert!((s - 1.0).abs() < 1e-9),
                    Shots::Sampled(n) => {
                        let counts: u64 = cell
                            .iter()
                            .map(|r| (r.probability * n as f64).round() as u64)
                            .sum();
                        assert_eq!(counts, n);
                        assert!((s - 1.0).abs() < 1e-12);
                    }
                }
                assert!(cell.iter().all(|r| (0.0..=1.0).contains(&r.probability)));
            }
        }
    }

    #[test]
    fn full_depolarization_gives_uniform_outcomes() {
        // d = 2 reaches the maximally mixed state at p = 3/4
        let d = 2;
        let ch = depolarizing_channel(d, 0.75).unwrap();
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        let recs = simulate_measurements(&ch, &prep, &mubs, Shots::Exact, 0).unwrap();
        assert!(recs.iter().all(|r| (r.probability - 0.5).abs() < 1e-12));
    }

    #[test]
    fn depolarizing_outcomes_match_direct_sum() {
        let d = 5;
        let ch = depolarizing_channel(d, 1.0).unwrap();
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        let recs = simulate_measurements(&ch, &prep, &mubs, Shots::Exact, 0).unwrap();
        for r in recs.iter().step_by(7) {
            let out = ch.apply(&prep.densities()[r.prep]).unwrap().state;
            let v = &mubs.basis(r.basis)[r.outcome];
            let p = projection_probability(&out, v).unwrap();
            assert!((p - r.probability).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let d = 3;
        let ch = random_channel(d, 2, &mut rng(5));
        let prep = preparation_basis(d).unwrap();
        let mubs = build_mubs(d).unwrap();
        let a = simulate_measurements(&ch, &prep, &mubs, Shots::Sampled(500), 7).unwrap();
        let b = simulate_measurements(&ch, &prep, &mubs, Shots::Sampled(500), 7).unwrap();
        let c_ = simulate_measurements(&ch, &prep, &mubs, Shots::Sampled(500), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c_);
    }

    #[test]
    fn multinomial_conserves_counts() {
        let mut r = rng(1);
        for _ in 0..50 {
            let counts = multinomial(1000, &[0.2, 0.0, 0.5, 0.3], &mut r);
            assert_eq!(counts.iter().sum::<u64>(), 1000);
            assert_eq!(counts[1], 0);
        }
        assert_eq!(multinomial(10, &[0.0, 1.0, 0.0], &mut r), vec![0, 10, 0]);
    }

    #[test]
    fn qst_uniform_probabilities() {
        let d = 4;
        let mubs = build_mubs(d).unwrap();
        let recs: Vec<MeasurementRecord> = (0..d * (d + 1))
            .map(|i| MeasurementRecord {
                dim: d,
                prep: 0,
                basis: i / d,
                outcome: i % d,
                probability: 1.0 / d as f64,
                shots: Shots::Exact,
            })
            .collect();
        let rho = qst_linear_inversion(&recs, &mubs).unwrap();
        assert!(
            rho.matrix()
                .distance(DensityMatrix::maximally_mixed(d).matrix())
                < 1e-15
        );

        let err = qst_linear_inversion(&recs[1..], &mubs).unwrap_err();
        assert!(matches!(err, Error::IncompleteRecords(_)));
        let mut dup = recs.clone();
        dup[1] = dup[0].clone();
        assert!(matches!(
            qst_linear_inversion(&dup, &mubs),
            Err(Error::IncompleteRecords(_))
        ));
    }

    #[test]
    fn qst_sampled_high_shots() {
        let d = 4;
        let mubs = build_mubs(d).unwrap();
        let prep = preparation_basis(d).unwrap();
        let mut r = rng(11);
        let u = random_unitary(d, &mut r);
        let ch = KrausChannel::new(d, vec![u]).unwrap();
        let recs = simulate_measurements(&ch, &prep, &mubs, Shots::Sampled(1_000_000), 3).unwrap();
        let outs = reconstruct_outputs(&recs, &prep, &mubs).unwrap();
        for (j, est) in outs.iter().enumerate() {
            let truth = ch.apply(&prep.densities()[j]).unwrap().state;
            assert!(fidelity(est, &truth).unwrap() >= 0.999);
        }
    }

    #[test]
    fn make_physical_examples() {
        let rho = DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[1.1, -0.1])).unwrap_err();
        assert!(matches!(rho, Error::InvalidDensity(_)));
        let fixed = make_physical(&ComplexMatrix::from_real_diagonal(&[1.1, -0.1])).unwrap();
        assert!(
            fixed
                .matrix()
                .distance(&ComplexMatrix::from_real_diagonal(&[1.0, 0.0]))
                < 1e-15
        );

        let good = random_density(4, &mut rng(2));
        let same = make_physical(good.matrix()).unwrap();
        assert!(same.matrix().distance(good.matrix()) < 1e-12);

        let mut bad = ComplexMatrix::identity(2);
        bad[(0, 1)] = c(0.0, 1e-3);
        assert!(matches!(
            make_physical(&bad),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn make_physical_qubit_matches_bloch_projection() {
        // for d = 2 the closest state is the Bloch vector pulled to the sphere
        let mut r = rng(21);
        for _ in 0..50 {
            let v: [f64; 3] = [
                r.random::<f64>() - 0.5,
                r.random::<f64>() - 0.5,
                r.random::<f64>() - 0.5,
            ];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let scale = 1.0 + 2.0 * r.random::<f64>();
            let bloch = |x: f64, y: f64, z: f64| {
                ComplexMatrix::new(
                    2,
                    2,
                    vec![
                        c(0.5 + z / 2.0, 0.0),
                        c(x / 2.0, -y / 2.0),
                        c(x / 2.0, y / 2.0),
                        c(0.5 - z / 2.0, 0.0),
                    ],
                )
                .unwrap()
            };
            let s = scale / len;
            let raw = bloch(v[0] * s, v[1] * s, v[2] * s);
            let fixed = make_physical(&raw).unwrap();
            let want = if scale > 1.0 {
                bloch(v[0] / len, v[1] / len, v[2] / len)
            } else {
                raw.clone()
            };
            assert!(fixed.matrix().distance(&want) < 1e-12);
        }
    }

    #[test]
    fn make_physical_beats_clip_and_renormalize() {
        let mut r = rng(22);
        for d in 3..=5 {
            for _ in 0..20 {
                let rho = random_density(d, &mut r);
                let noise = crate::testutil::random_matrix(d, d, &mut r)
                    .hermitian_part()
                    .scale_real(0.4);
                let mut raw = rho.matrix() + &noise;
                let t = raw.trace().re;
                raw = raw.scale_real(1.0 / t);
                let fixed = make_physical(&raw).unwrap();
                assert!(fixed.eigenvalues().iter().all(|&l| l >= -1e-12));
                let eig = hermitian_eig(&raw).unwrap();
                let pos: f64 = eig.values.iter().map(|l| l.max(0.0)).sum();
                let clipped = eig.reconstruct_with(|l| l.max(0.0) / pos);
                assert!(fixed.matrix().distance(&raw) <= clipped.distance(&raw) + 1e-12);
            }
        }
    }

    #[test]
    fn identity_chi() {
        let chi = exact_chi(&KrausChannel::identity(2));
        let mut want = ComplexMatrix::zeros(4, 4);
        for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            want[(i, j)] = c(1.0, 0.0);
        }
        assert!(chi.matrix().distance(&want) < 1e-12);
        let t = transfer_from_chi(&chi);
        assert!(t.matrix().distance(&ComplexMatrix::identity(4)) < 1e-12);
    }

    #[test]
    fn bit_flip_pipeline() {
        for p in [0.0, 0.3, 1.0] {
            let ch =
                shift_channel(2, ShiftKind::Amplitude, &ShiftWeights::uniform_error(2, p)).unwrap();
            let chi = exact_chi(&ch);
            let mut want = ComplexMatrix::zeros(4, 4);
            for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
                want[(i, j)] = c(1.0 - p, 0.0);
            }
            for &(i, j) in &[(1, 1), (1, 2), (2, 1), (2, 2)] {
                want[(i, j)] = c(p, 0.0);
            }
            assert!(chi.matrix().distance(&want) < 1e-10);
            if p == 1.0 {
                let t = transfer_from_chi(&chi);
                let perm = [3, 2, 1, 0];
                for (r, &s) in perm.iter().enumerate() {
                    for col in 0..4 {
                        let want = if col == s { 1.0 } else { 0.0 };
                        assert!((t.matrix()[(r, col)] - c(want, 0.0)).norm() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn builtin_channels_round_trip() {
        for d in 2..=5 {
            let mut channels = vec![
                shift_channel(d, ShiftKind::Amplitude, &ShiftWeights::uniform(d)).unwrap(),
                shift_channel(d, ShiftKind::Amplitude, &ShiftWeights::uniform_from_zero(d))
                    .unwrap(),
                shift_channel(d, ShiftKind::Phase, &ShiftWeights::uniform(d)).unwrap(),
                shift_channel(d, ShiftKind::AmplitudePhase, &ShiftWeights::uniform(d)).unwrap(),
            ];
            for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
                channels.push(depolarizing_channel(d, p).unwrap());
            }
            for ch in &channels {
                let truth = chi_from_kraus(ch);
                let chi = exact_chi(ch);
                assert!(chi.matrix().distance(truth.matrix()) < 1e-9, "d={d}");
                assert!(process_fidelity(&chi, &truth).unwrap() >= 1.0 - 1e-9);
                assert!(transfer_from_chi(&chi).trace_preservation_defect() < 1e-8);
            }
        }
    }

    #[test]
    fn least_squares_oracle_agrees() {
        // brute force: solve for all d^4 entries of chi from
        // E(rho)_{a a'} = sum chi[(a d + b), (a' d + b')] rho_{b b'}
        for d in [2, 3] {
            let ch = random_channel(d, 2, &mut rng(d as u64));
            let prep = preparation_basis(d).unwrap();
            let outs: Vec<DensityMatrix> = prep
                .densities()
                .iter()
                .map(|r| ch.apply(r).unwrap().state)
                .collect();
            let n = d * d;
            let nn = n * n;
            let mut a = ComplexMatrix::zeros(nn, nn);
            let mut rhs = Vec::with_capacity(nn);
            for (j, rho) in prep.densities().iter().enumerate() {
                let rho = rho.matrix();
                for x in 0..d {
                    for xp in 0..d {
                        let row = j * n + x * d + xp;
                        rhs.push(outs[j].matrix()[(x, xp)]);
                        for b in 0..d {
                            for bp in 0..d {
                                a[(row, (x * d + b) * n + xp * d + bp)] = rho[(b, bp)];
                            }
                        }
                    }
                }
            }
            let sol = pseudo_inverse(&a, 1e-12).matvec(&rhs).unwrap();
            let brute = ComplexMatrix::new(n, n, sol).unwrap();
            let fast = sqpt(&outs, &prep).unwrap();
            assert!(fast.matrix().distance(&brute) < 1e-8);
            assert!(fast.matrix().distance(chi_from_kraus(&ch).matrix()) < 1e-9);
        }
    }

    #[test]
    fn sqpt_rejects_missing_outputs() {
        let prep = preparation_basis(3).unwrap();
        let outs = vec![DensityMatrix::maximally_mixed(3); 8];
        assert_eq!(
            sqpt(&outs, &prep).unwrap_err(),
            Error::MissingOutputs {
                expected: 9,
                got: 8
            }
        );
    }

    #[test]
    fn xi_blocks_follow_flat_index() {
        let d = 3;
        let chi = chi_from_kraus(&random_channel(d, 2, &mut rng(8)));
        let t = transfer_from_chi(&chi);
        for k in 0..d * d {
            let xi = t.xi_block(k);
            for i in 0..d {
                for j in 0..d {
                    assert_eq!(xi[(i, j)], chi.matrix()[(k, i * d + j)]);
                }
            }
        }
    }

    #[test]
    fn recover_examples() {
        let d = 4;
        let mut r = rng(30);
        let rho = random_density(d, &mut r);
        let id = chi_from_kraus(&KrausChannel::identity(d));
        let back = recover(&id, &rho, DEFAULT_RECOVERY_RCOND).unwrap();
        assert!(back.matrix().distance(rho.matrix()) < 1e-12);

        let phases: Vec<C64> = (0..d)
            .map(|_| C64::from_polar(1.0, 6.0 * r.random::<f64>()))
            .collect();
        let diag =
            ComplexMatrix::from_fn(d, d, |i, j| if i == j { phases[i] } else { c(0.0, 0.0) });
        let ch = KrausChannel::new(d, vec![diag]).unwrap();
        let out = ch.apply(&rho).unwrap().state;
        let back = recover(&chi_from_kraus(&ch), &out, DEFAULT_RECOVERY_RCOND).unwrap();
        assert!(back.matrix().distance(rho.matrix()) < 1e-9);
    }

    #[test]
    fn strict_recovery_refuses_singular() {
        let d = 2;
        let full = depolarizing_channel(d, 0.75).unwrap();
        let chi = chi_from_kraus(&full);
        let rho = DensityMatrix::maximally_mixed(d);
        let opts = RecoveryOptions {
            rcond: 1e-3,
            strict: true,
        };
        assert_eq!(
            recover_with(&chi, &rho, &opts).unwrap_err(),
            Error::SingularBeyondRecovery { rank: 1, full: 4 }
        );
        let lax = recover_with(&chi, &rho, &RecoveryOptions::default()).unwrap();
        assert!(lax.is_rank_deficient());
        assert!(lax.state.matrix().distance(rho.matrix()) < 1e-12);
    }

    #[test]
    fn process_fidelity_examples() {
        let id = chi_from_kraus(&KrausChannel::identity(2));
        let dep = chi_from_kraus(&depolarizing_channel(2, 0.75).unwrap());
        assert!((process_fidelity(&id, &id).unwrap() - 1.0).abs() < 1e-12);
        assert!((process_fidelity(&id, &dep).unwrap() - 0.25).abs() < 1e-12);
        let other = chi_from_kraus(&KrausChannel::identity(3));
        assert!(matches!(
            process_fidelity(&id, &other),
            Err(Error::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn depolarizing_purity_curve_matches_direct_sum() {
        let d = 5;
        let psi = density_from_pure(&PureState::uniform(d));
        for step in 0..=10 {
            let p = step as f64 / 10.0;
            let ch = depolarizing_channel(d, p).unwrap();
            let chi = exact_chi(&ch);
            let via_chi = chi.apply(&psi).unwrap().state;
            let direct = ch.apply(&psi).unwrap().state;
            assert!((purity(&via_chi) - purity(&direct)).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn qst_exact_round_trip(seed in any::<u64>(), pick in 0usize..3) {
            let d = [2, 4, 5][pick];
            let mubs = build_mubs(d).unwrap();
            let rho = random_density(d, &mut rng(seed));
            let recs: Vec<MeasurementRecord> = mubs
                .bases()
                .iter()
                .enumerate()
                .flat_map(|(b, basis)| {
                    let rho = &rho;
                    basis.iter().enumerate().map(move |(k, v)| MeasurementRecord {
                        dim: d,
                        prep: 0,
                        basis: b,
                        outcome: k,
                        probability: projection_probability(rho, v).unwrap(),
                        shots: Shots::Exact,
                    })
                })
                .collect();
            let raw = qst_raw(&recs, &mubs).unwrap();
            prop_assert!(trace_distance(&raw, rho.matrix()).unwrap() < 1e-10);
        }

        #[test]
        fn reshuffle_is_involution(seed in any::<u64>(), d in 2usize..5) {
            let chi = chi_from_kraus(&random_channel(d, 3, &mut rng(seed)));
            let back = transfer_from_chi(&chi).to_chi().unwrap();
            prop_assert!(back.matrix().distance(chi.matrix()) < 1e-15);
        }

        #[test]
        fn transfer_matches_kraus_action(seed in any::<u64>(), d in 2usize..5) {
            let mut r = rng(seed);
            let ch = random_channel(d, 2, &mut r);
            let t = transfer_from_chi(&chi_from_kraus(&ch));
            prop_assert!(t.trace_preservation_defect() < 1e-8);
            for _ in 0..20 {
                let rho = random_density(d, &mut r);
                let a = t.apply(rho.matrix()).unwrap();
                let b = ch.apply_unnormalized(rho.matrix()).unwrap();
                prop_assert!(a.distance(&b) < 1e-10);
            }
        }

        #[test]
        fn exact_pipeline_predicts_outputs(seed in any::<u64>(), d in 2usize..5) {
            let mut r = rng(seed);
            let ch = random_channel(d, 2, &mut r);
            let chi = exact_chi(&ch);
            for _ in 0..20 {
                let rho = random_density(d, &mut r);
                let a = chi.apply(&rho).unwrap().state;
                let b = ch.apply(&rho).unwrap().state;
                prop_assert!(a.matrix().distance(b.matrix()) < 1e-8);
            }
        }

        #[test]
        fn make_physical_always_valid(seed in any::<u64>(), d in 2usize..6, amp in 0.0f64..2.0) {
            let mut r = rng(seed);
            let rho = random_density(d, &mut r);
            let noise = crate::testutil::random_matrix(d, d, &mut r).hermitian_part().scale_real(amp);
            let raw = rho.matrix() + &noise;
            prop_assume!(raw.trace().re > 0.05);
            let fixed = make_physical(&raw);
            prop_assert!(fixed.is_ok());
        }

        #[test]
        fn unitary_recovery_exact(seed in any::<u64>(), d in 2usize..6) {
            let mut r = rng(seed);
            let u = random_unitary(d, &mut r);
            let ch = KrausChannel::new(d, vec![u]).unwrap();
            let rho = random_density(d, &mut r);
            let out = ch.apply(&rho).unwrap().state;
            let back = recover(&chi_from_kraus(&ch), &out, DEFAULT_RECOVERY_RCOND).unwrap();
            prop_assert!(fidelity(&back, &rho).unwrap() >= 1.0 - 1e-8);
        }
    }
}
