//! Kraus channels, the embedded-Pauli shift-error families, the qudit
//! depolarizing channel, and conversion to and from the process matrix in
//! the matrix-unit basis `A_{a*d+b} = |a><b|`.

use crate::error::{Error, Result};
use crate::numkernel::{c, hermitian_eig, ComplexMatrix, C64};
use crate::qudit::DensityMatrix;

/// Slack allowed on `sum E^H E <= 1` and on trace preservation.
pub const COMPLETENESS_TOL: f64 = 1e-9;
pub const CHI_HERMITIAN_TOL: f64 = 1e-9;
pub const CHI_PSD_TOL: f64 = 1e-8;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const MIN_OUTPUT_TRACE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> [[C64; 2]; 2] {
        let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
        match self {
            Pauli::X => [[z, o], [o, z]],
            Pauli::Y => [[z, -i], [i, z]],
            Pauli::Z => [[o, z], [z, -o]],
        }
    }
}

/// `G^H X G` where `G` is the `2 x d` selector with `G[0][nu] = G[1][alpha] = 1`.
///
/// The result is zero outside the `{nu, alpha}` rows and columns.
pub fn embed_pauli(d: usize, nu: usize, alpha: usize, x: Pauli) -> Result<ComplexMatrix> {
    if alpha <= nu || alpha >= d {
        return Err(Error::BadIndices { nu, alpha, dim: d });
    }
    let p = x.matrix();
    let idx = [nu, alpha];
    let mut m = ComplexMatrix::zeros(d, d);
    for (r, &i) in idx.iter().enumerate() {
        for (s, &j) in idx.iter().enumerate() {
            m[(i, j)] = p[r][s];
        }
    }
    Ok(m)
}

/// Embedded Pauli on `{nu, alpha}` completed by the identity on the other
/// levels, so the operator is unitary.
pub fn embed_pauli_unitary(d: usize, nu: usize, alpha: usize, x: Pauli) -> Result<ComplexMatrix> {
    let mut m = embed_pauli(d, nu, alpha, x)?;
    for k in (0..d).filter(|&k| k != nu && k != alpha) {
        m[(k, k)] = c(1.0, 0.0);
    }
    Ok(m)
}

/// Shift-error family, labelled by the Pauli that acts inside each pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShiftKind {
    /// amplitude shift, sigma_x
    Amplitude,
    /// phase shift, sigma_z
    Phase,
    /// amplitude-phase shift, sigma_y
    AmplitudePhase,
}

impl ShiftKind {
    pub fn pauli(self) -> Pauli {
        match self {
            ShiftKind::Amplitude => Pauli::X,
            ShiftKind::Phase => Pauli::Z,
            ShiftKind::AmplitudePhase => Pauli::Y,
        }
    }
}

/// Probabilities for the identity branch and for each `(nu, alpha)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftWeights {
    pub identity: f64,
    pub pairs: Vec<((usize, usize), f64)>,
}

impl ShiftWeights {
    /// Identity plus every pair `nu < alpha`, all with equal weight
    /// `1 / (1 + d(d-1)/2)`.
    pub fn uniform(d: usize) -> Self {
        let pairs: Vec<_> = all_pairs(d).collect();
        let w = 1.0 / (1 + pairs.len()) as f64;
        Self {
            identity: w,
            pairs: pairs.into_iter().map(|p| (p, w)).collect(),
        }
    }

    /// Identity plus the pairs `(0, alpha)`, each with weight `1/d`.
    pub fn uniform_from_zero(d: usize) -> Self {
        let w = 1.0 / d as f64;
        Self {
            identity: w,
            pairs: (1..d).map(|a| ((0, a), w)).collect(),
        }
    }

    /// Identity weight `1 - p`, the remaining `p` spread evenly over all pairs.
    pub fn uniform_error(d: usize, p: f64) -> Self {
        let pairs: Vec<_> = all_pairs(d).collect();
        let w = p / pairs.len() as f64;
        Self {
            identity: 1.0 - p,
            pairs: pairs.into_iter().map(|pr| (pr, w)).collect(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let mut total = self.identity;
        if !(self.identity >= 0.0) {
            return Err(Error::BadWeights(format!(
                "identity weight {} is negative",
                self.identity
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &((nu, alpha), w) in &self.pairs {
            if alpha <= nu || alpha >= d {
                return Err(Error::BadIndices { nu, alpha, dim: d });
            }
            if !(w >= 0.0) {
                return Err(Error::BadWeights(format!(
                    "weight {w} for pair ({nu},{alpha}) is negative"
                )));
            }
            if !seen.insert((nu, alpha)) {
                return Err(Error::BadWeights(format!(
                    "pair ({nu},{alpha}) listed twice"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::BadWeights(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

pub fn all_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |nu| (nu + 1..d).map(move |alpha| (nu, alpha)))
}

/// Operator-sum channel `E(rho) = sum_k E_k rho E_k^H`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    dim: usize,
    operators: Vec<ComplexMatrix>,
    weights: Option<Vec<f64>>,
    completeness_max_eigenvalue: f64,
    trace_preserving: bool,
}

impl KrausChannel {
    /// Accepts any operator list with `sum E^H E <= 1` (largest eigenvalue at
    /// most `1 + 1e-9`). Trace preservation is detected and recorded.
    pub fn new(dim: usize, operators: Vec<ComplexMatrix>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "channel dimension must be >= 1".into(),
            ));
        }
        for op in &operators {
            if op.rows() != dim || op.cols() != dim {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dim}x{dim}"),
                    got: format!("{}x{}", op.rows(), op.cols()),
                });
            }
        }
        let completeness = completeness_of(dim, &operators);
        let eig = hermitian_eig(&completeness.hermitian_part())?;
        let top = eig.values.first().copied().unwrap_or(0.0);
        if top > 1.0 + COMPLETENESS_TOL {
            return Err(Error::NotSubNormalized(top));
        }
        let trace_preserving = completeness
            .try_sub(&ComplexMatrix::identity(dim))?
            .max_abs()
            <= COMPLETENESS_TOL;
        Ok(Self {
            dim,
            operators,
            weights: None,
            completeness_max_eigenvalue: top,
            trace_preserving,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), self.operators.len());
        self.weights = Some(weights);
        self
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, vec![ComplexMatrix::identity(dim)])
            .expect("identity channel is valid")
            .with_weights(vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preserving
    }

    pub fn completeness_max_eigenvalue(&self) -> f64 {
        self.completeness_max_eigenvalue
    }

    /// `sum_k E_k^H E_k`
    pub fn completeness(&self) -> ComplexMatrix {
        completeness_of(self.dim, &self.operators)
    }

    /// Linear action on an arbitrary `d x d` matrix, no renormalization.
    pub fn apply_unnormalized(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        if m.rows() != self.dim || m.cols() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, m.rows()));
        }
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for op in &self.operators {
            out = &out + &op.sandwich(m)?;
        }
        Ok(out)
    }

    /// Applies the channel and renormalizes the result to unit trace; the
    /// trace before renormalization is kept in the output.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<ChannelOutput> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, rho.dim()));
        }
        let raw = self.apply_unnormalized(rho.matrix())?.hermitian_part();
        ChannelOutput::from_unnormalized(raw)
    }
}

fn completeness_of(dim: usize, ops: &[ComplexMatrix]) -> ComplexMatrix {
    ops.iter().fold(ComplexMatrix::zeros(dim, dim), |acc, e| {
        &acc + &(&e.adjoint() * e)
    })
}

/// A channel output after post-selection.
#[derive(Clone, Debug)]
pub struct ChannelOutput {
    pub state: DensityMatrix,
    /// Trace of `E(rho)` before renormalization.
    pub transmitted_trace: f64,
}

impl ChannelOutput {
    pub fn renormalized(&self) -> bool {
        (self.transmitted_trace - 1.0).abs() > COMPLETENESS_TOL
    }

    pub(crate) fn from_unnormalized(raw: ComplexMatrix) -> Result<Self> {
        let t = raw.trace().re;
        if !(t >= MIN_OUTPUT_TRACE) {
            return Err(Error::ZeroTrace(t));
        }
        let state = DensityMatrix::new(raw.scale_real(1.0 / t))?;
        Ok(Self {
            state,
            transmitted_trace: t,
        })
    }
}

/// AS / PS / APS channel: `sqrt(p0) I` plus `sqrt(p_{nu alpha}) U_{nu alpha}`
/// with `U` the unitary embedded Pauli of the given kind.
pub fn shift_channel(d: usize, kind: ShiftKind, weights: &ShiftWeights) -> Result<KrausChannel> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "shift channel needs d >= 2, got {d}"
        )));
    }
    weights.validate(d)?;
    let mut ops = vec![ComplexMatrix::identity(d).scale_real(weights.identity.sqrt())];
    let mut w = vec![weights.identity];
    for &((nu, alpha), p) in &weights.pairs {
        ops.push(embed_pauli_unitary(d, nu, alpha, kind.pauli())?.scale_real(p.sqrt()));
        w.push(p);
    }
    Ok(KrausChannel::new(d, ops)?.with_weights(w))
}

/// `(1-p) rho + p/(3(d-1)) sum_r sum_{nu<alpha} E_r rho E_r^H` with `E_r` the
/// embedded Paulis; `1 + 3 d(d-1)/2` operators, trace preserving.
pub fn depolarizing_channel(d: usize, p: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::BadProbability(p));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "depolarizing channel needs d >= 2, got {d}"
        )));
    }
    let branch = p / (3.0 * (d - 1) as f64);
    let mut ops = vec![ComplexMatrix::identity(d).scale_real((1.0 - p).sqrt())];
    let mut w = vec![1.0 - p];
    for x in Pauli::ALL {
        for (nu, alpha) in all_pairs(d) {
            ops.push(embed_pauli(d, nu, alpha, x)?.scale_real(branch.sqrt()));
            w.push(branch);
        }
    }
    Ok(KrausChannel::new(d, ops)?.with_weights(w))
}

/// Process matrix in the matrix-unit basis, `E(rho) = sum_mn chi_mn A_m rho A_n^H`.
///
/// With this basis `chi` coincides with the Choi matrix
/// `sum_{kl} E(|k><l|)` arranged as `chi[(i d + k), (j d + l)] = <i|E(|k><l|)|j>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiMatrix {
    dim: usize,
    matrix: ComplexMatrix,
}

impl ChiMatrix {
    /// Validated constructor: `d^2 x d^2`, Hermitian within 1e-9, eigenvalues
    /// `>= -1e-8`.
    pub fn new(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        let chi = Self::from_reconstruction(dim, matrix.clone())?;
        let dev = matrix.hermitian_deviation();
        if dev > CHI_HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let min = chi.min_eigenvalue();
        if min < -CHI_PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(chi)
    }

    /// Shape-checked and Hermitized, without the positivity check. Used for
    /// tomographic estimates from sampled data.
    pub fn from_reconstruction(dim: usize, matrix: ComplexMatrix) -> Result<Self> {
        let n = dim * dim;
        if matrix.rows() != n || matrix.cols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        Ok(Self {
            dim,
            matrix: matrix.hermitian_part(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eig(&self.matrix)
            .map(|e| e.values.last().copied().unwrap_or(0.0))
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn is_completely_positive(&self) -> bool {
        self.min_eigenvalue() >= -CHI_PSD_TOL
    }

    /// `E(m)_{ij} = sum_{kl} chi[(i d + k), (j d + l)] m_{kl}`
    pub fn apply_unnormalized(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        let d = self.dim;
        if m.rows() != d || m.cols() != d {
            return Err(Error::DimensionMismatch(d, m.rows()));
        }
        Ok(ComplexMatrix::from_fn(d, d, |i, j| {
            let mut s = c(0.0, 0.0);
            for k in 0..d {
                for l in 0..d {
                    s += self.matrix[(i * d + k, j * d + l)] * m[(k, l)];
                }
            }
            s
        }))
    }

    /// Applies the process and renormalizes; requires a completely positive
    /// `chi` for the result to be a valid state.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<ChannelOutput> {
        let raw = self.apply_unnormalized(rho.matrix())?.hermitian_part();
        ChannelOutput::from_unnormalized(raw)
    }
}

/// Expands each Kraus operator in matrix units, `E_k = sum_m e_{k,m} A_m`
/// (so `e_{k, a d + b} = (E_k)_{ab}`), and sums `e_{k,m} conj(e_{k,n})`.
pub fn chi_from_kraus(ch: &KrausChannel) -> ChiMatrix {
    let d = ch.dim();
    let n = d * d;
    let mut chi = ComplexMatrix::zeros(n, n);
    for op in ch.operators() {
        let e = op.data();
        for m in 0..n {
            if e[m] == c(0.0, 0.0) {
                continue;
            }
            for k in 0..n {
                chi[(m, k)] += e[m] * e[k].conj();
            }
        }
    }
    ChiMatrix {
        dim: d,
        matrix: chi.hermitian_part(),
    }
}

/// Canonical Kraus form from the eigendecomposition of `chi`; eigenvalues in
/// `[-1e-8, 0)` are dropped.
pub fn kraus_from_chi(chi: &ChiMatrix) -> Result<KrausChannel> {
    let d = chi.dim();
    let eig = hermitian_eig(chi.matrix())?;
    if let Some(&min) = eig.values.last() {
        if min < -CHI_PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
    }
    let top = eig.values.first().copied().unwrap_or(0.0);
    let mut ops = Vec::new();
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam <= top * 1e-14 || lam <= 0.0 {
            continue;
        }
        let v = eig.vectors.column(k);
        let op = ComplexMatrix::new(d, d, v)?.scale_real(lam.sqrt());
        ops.push(op);
    }
    KrausChannel::new(d, ops)
}
