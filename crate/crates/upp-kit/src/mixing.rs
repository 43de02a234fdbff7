//! Polynomials of `H = P ⊗ I_d` and the simulated network that applies them.
//!
//! Every communication-based apply goes through [`Network`], which hands
//! each node only the vectors its neighbors sent in the current round and
//! counts rounds. [`HPoly::apply_dense`] evaluates the same polynomial with
//! explicit matrices and is the reference for the network path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UppError};
use crate::stacked::Stacked;
use crate::topology::{MixingMatrix, SpectralData, DEFAULT_SPECTRAL_TOL};

/// `Σ_{t=1}^{τ} a_t H^t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    pub coeffs: Vec<f64>,
}

impl PolynomialSpec {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(UppError::ConditionViolation("polynomial degree must be >= 1".into()));
        }
        Ok(PolynomialSpec { coeffs })
    }

    /// The plain `H`.
    pub fn identity() -> Self {
        PolynomialSpec { coeffs: vec![1.0] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    pub fn scalar(&self, lambda: f64) -> f64 {
        let mut pow = 1.0;
        let mut acc = 0.0;
        for a in &self.coeffs {
            pow *= lambda;
            acc += a * pow;
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChebyshevMode {
    /// `c2 = 1/((1+γ)λ₁)`, half the standard scaling. The argument of
    /// `T_τ` then ranges over `[γ/(1−γ), 1/(1−γ)]` rather than `[−1, 1]`.
    HalfStep,
    /// `c2 = 2/((1+γ)λ₁)`, mapping `[λ_{N−1}, λ₁]` onto `[−1, 1]`.
    #[default]
    Standard,
}

/// `I − T_τ(c1 (I − c2 H)) / T_τ(c1)`, evaluated by the three-term
/// recurrence. When `γ = λ_{N−1}/λ₁` is 1 the constant `c1` blows up and
/// the oracle degrades to `c2 H` (one round).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSpec {
    pub tau: usize,
    pub c1: f64,
    pub c2: f64,
    pub mode: ChebyshevMode,
    pub degenerate: bool,
}

impl ChebyshevSpec {
    pub fn new(tau: usize, spec: &SpectralData, mode: ChebyshevMode) -> Result<Self> {
        if tau == 0 {
            return Err(UppError::ConditionViolation("Chebyshev depth must be >= 1".into()));
        }
        let g = spec.gamma_inv;
        if !(g > 0.0) {
            return Err(UppError::InfeasibleSpectrum("gamma_inv must be positive".into()));
        }
        let num = match mode {
            ChebyshevMode::HalfStep => 1.0,
            ChebyshevMode::Standard => 2.0,
        };
        let c2 = num / ((1.0 + g) * spec.lambda_1);
        let degenerate = g >= 1.0 - 1e-12;
        let c1 = if degenerate { f64::INFINITY } else { (1.0 + g) / (1.0 - g) };
        Ok(ChebyshevSpec { tau, c1, c2, mode, degenerate })
    }

    pub fn rounds(&self) -> usize {
        if self.degenerate {
            1
        } else {
            self.tau
        }
    }

    /// Image of one eigenvalue of `P`, replaying the oracle's recurrence.
    pub fn scalar(&self, lambda: f64) -> f64 {
        if self.degenerate {
            return self.c2 * lambda;
        }
        let a = 1.0 - self.c2 * lambda;
        let (mut b_prev, mut b) = (1.0, self.c1);
        let (mut y_prev, mut y) = (1.0, self.c1 * a);
        for _ in 1..self.tau {
            let b_next = 2.0 * self.c1 * b - b_prev;
            let y_next = 2.0 * self.c1 * a * y - y_prev;
            b_prev = b;
            b = b_next;
            y_prev = y;
            y = y_next;
        }
        1.0 - y / b
    }
}

/// A linear operator that is a polynomial in `H`. `D`, `D̃` and the
/// polynomial kind of `G` are all expressed with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HPoly {
    Zero,
    Monomial(PolynomialSpec),
    Chebyshev(ChebyshevSpec),
    Scaled { factor: f64, inner: Box<HPoly> },
    /// `c0 I + inner`.
    Shifted { c0: f64, inner: Box<HPoly> },
    /// `outer(inner(·))`.
    Compose { outer: Box<HPoly>, inner: Box<HPoly> },
    /// Newton form `Σ_k c_k Π_{j<k} (H − λ_j I)`, the interpolant of a
    /// spectral function through the eigenvalues `λ_j`.
    Newton { nodes: Vec<f64>, coeffs: Vec<f64> },
}

impl HPoly {
    pub fn h() -> Self {
        HPoly::Monomial(PolynomialSpec::identity())
    }

    pub fn scaled(self, factor: f64) -> Self {
        HPoly::Scaled { factor, inner: Box::new(self) }
    }

    pub fn shifted(self, c0: f64) -> Self {
        HPoly::Shifted { c0, inner: Box::new(self) }
    }

    pub fn then(self, outer: HPoly) -> Self {
        HPoly::Compose { outer: Box::new(outer), inner: Box::new(self) }
    }

    /// The polynomial of `H` that agrees with `f` on every distinct value in
    /// `eigs` (values closer than `1e-9` relative are merged).
    pub fn interpolate(eigs: &[f64], f: impl Fn(f64) -> f64) -> Self {
        let mut nodes: Vec<f64> = eigs.to_vec();
        nodes.sort_by(f64::total_cmp);
        let scale = nodes.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * scale);
        let mut coeffs: Vec<f64> = nodes.iter().map(|&l| f(l)).collect();
        for j in 1..nodes.len() {
            for i in (j..nodes.len()).rev() {
                coeffs[i] = (coeffs[i] - coeffs[i - 1]) / (nodes[i] - nodes[i - j]);
            }
        }
        HPoly::Newton { nodes, coeffs }
    }

    /// Communication rounds consumed by one apply.
    pub fn rounds(&self) -> usize {
        match self {
            HPoly::Zero => 0,
            HPoly::Newton { coeffs, .. } => coeffs.len().saturating_sub(1),
            HPoly::Monomial(s) => s.degree(),
            HPoly::Chebyshev(c) => c.rounds(),
            HPoly::Scaled { inner, .. } | HPoly::Shifted { inner, .. } => inner.rounds(),
            HPoly::Compose { outer, inner } => outer.rounds() + inner.rounds(),
        }
    }

    pub fn scalar(&self, lambda: f64) -> f64 {
        match self {
            HPoly::Zero => 0.0,
            HPoly::Monomial(s) => s.scalar(lambda),
            HPoly::Chebyshev(c) => c.scalar(lambda),
            HPoly::Scaled { factor, inner } => factor * inner.scalar(lambda),
            HPoly::Shifted { c0, inner } => c0 + inner.scalar(lambda),
            HPoly::Compose { outer, inner } => compose_scalar(outer, inner, lambda),
            HPoly::Newton { nodes, coeffs } => {
                let mut acc = 0.0;
                for k in (0..coeffs.len()).rev() {
                    acc = coeffs[k] + (lambda - nodes[k]) * acc;
                }
                acc
            }
        }
    }

    /// Splits off outer scale factors: `self = c · base`.
    pub fn split_scale(&self) -> (f64, &HPoly) {
        match self {
            HPoly::Scaled { factor, inner } => {
                let (c, base) = inner.split_scale();
                (factor * c, base)
            }
            other => (1.0, other),
        }
    }

    /// `Some(c)` when `self = c · other` structurally.
    pub fn ratio_to(&self, other: &HPoly) -> Option<f64> {
        let (a, base_a) = self.split_scale();
        let (b, base_b) = other.split_scale();
        (base_a == base_b && b != 0.0 && !matches!(base_a, HPoly::Zero)).then(|| a / b)
    }

    /// Explicit `N × N` matrix of the polynomial in `P`.
    pub fn matrix(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let n = p.nrows();
        match self {
            HPoly::Zero => DMatrix::zeros(n, n),
            HPoly::Monomial(s) => {
                let mut pow = DMatrix::identity(n, n);
                let mut acc = DMatrix::zeros(n, n);
                for a in &s.coeffs {
                    pow = &pow * p;
                    acc += &pow * *a;
                }
                acc
            }
            HPoly::Chebyshev(c) => {
                if c.degenerate {
                    return p * c.c2;
                }
                let id = DMatrix::<f64>::identity(n, n);
                let a = &id - p * c.c2;
                let (mut b_prev, mut b) = (1.0, c.c1);
                let mut m_prev = id.clone();
                let mut m = &a * c.c1;
                for _ in 1..c.tau {
                    let b_next = 2.0 * c.c1 * b - b_prev;
                    let m_next = (&a * &m) * (2.0 * c.c1) - &m_prev;
                    b_prev = b;
                    b = b_next;
                    m_prev = m;
                    m = m_next;
                }
                id - m / b
            }
            HPoly::Scaled { factor, inner } => inner.matrix(p) * *factor,
            HPoly::Shifted { c0, inner } => inner.matrix(p) + DMatrix::identity(n, n) * *c0,
            HPoly::Compose { outer, inner } => outer.matrix(p) * inner.matrix(p),
            HPoly::Newton { nodes, coeffs } => {
                let id = DMatrix::<f64>::identity(n, n);
                let mut acc = DMatrix::zeros(n, n);
                for k in (0..coeffs.len()).rev() {
                    acc = &id * coeffs[k] + (p - &id * nodes[k]) * acc;
                }
                acc
            }
        }
    }

    /// Dense reference apply on a stacked vector; no rounds.
    pub fn apply_dense(&self, p: &DMatrix<f64>, x: &Stacked) -> Result<Stacked> {
        if x.nrows() != p.nrows() {
            return Err(UppError::DimensionMismatch { expected: p.nrows(), got: x.nrows() });
        }
        Ok(self.matrix(p) * x)
    }

    /// Apply through the network; each round is one neighbor exchange.
    pub fn apply_net(&self, x: &[DVector<f64>], net: &mut Network<'_>) -> Result<Vec<DVector<f64>>> {
        net.check_dims(x)?;
        match self {
            HPoly::Zero => Ok(x.iter().map(|v| DVector::zeros(v.len())).collect()),
            HPoly::Monomial(s) => macc(x, net, s),
            HPoly::Chebyshev(c) => cacc(x, net, c),
            HPoly::Scaled { factor, inner } => {
                let mut out = inner.apply_net(x, net)?;
                out.iter_mut().for_each(|v| *v *= *factor);
                Ok(out)
            }
            HPoly::Shifted { c0, inner } => {
                let mut out = inner.apply_net(x, net)?;
                for (o, xi) in out.iter_mut().zip(x) {
                    o.axpy(*c0, xi, 1.0);
                }
                Ok(out)
            }
            HPoly::Compose { outer, inner } => {
                let mid = inner.apply_net(x, net)?;
                outer.apply_net(&mid, net)
            }
            HPoly::Newton { nodes, coeffs } => {
                let last = coeffs.len() - 1;
                let mut acc: Vec<DVector<f64>> = x.iter().map(|v| v * coeffs[last]).collect();
                for k in (0..last).rev() {
                    let mixed = net.mix(&acc)?;
                    acc = mixed
                        .into_iter()
                        .zip(acc.iter().zip(x))
                        .map(|(m, (a, xi))| m - a * nodes[k] + xi * coeffs[k])
                        .collect();
                }
                Ok(acc)
            }
        }
    }
}

fn compose_scalar(outer: &HPoly, inner: &HPoly, lambda: f64) -> f64 {
    // Polynomials in the same H commute, so the eigenvalue of the
    // composition is the product of the factors' eigenvalues.
    outer.scalar(lambda) * inner.scalar(lambda)
}

/// Synchronous network simulator over the sparsity of a mixing matrix.
pub struct Network<'a> {
    mixing: &'a MixingMatrix,
    rounds: u64,
}

/// What node `node` received in one round.
pub struct Mailbox<'m> {
    node: usize,
    messages: Vec<(usize, &'m DVector<f64>)>,
}

impl<'m> Mailbox<'m> {
    pub fn node(&self) -> usize {
        self.node
    }

    pub fn from(&self, peer: usize) -> Result<&'m DVector<f64>> {
        self.messages
            .iter()
            .find(|(j, _)| *j == peer)
            .map(|(_, v)| *v)
            .ok_or(UppError::NodeNonlocalAccess { node: self.node, peer })
    }

    pub fn senders(&self) -> impl Iterator<Item = usize> + '_ {
        self.messages.iter().map(|(j, _)| *j)
    }
}

impl<'a> Network<'a> {
    pub fn new(mixing: &'a MixingMatrix) -> Self {
        Network { mixing, rounds: 0 }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn n(&self) -> usize {
        self.mixing.n()
    }

    pub fn mixing(&self) -> &MixingMatrix {
        self.mixing
    }

    fn check_dims(&self, x: &[DVector<f64>]) -> Result<()> {
        if x.len() != self.n() {
            return Err(UppError::DimensionMismatch { expected: self.n(), got: x.len() });
        }
        if let Some(d) = x.first().map(|v| v.len()) {
            if let Some(bad) = x.iter().find(|v| v.len() != d) {
                return Err(UppError::DimensionMismatch { expected: d, got: bad.len() });
            }
        }
        Ok(())
    }

    /// One round: every node sends its vector to all neighbors. Returns
    /// each node's mailbox.
    pub fn exchange<'m>(&mut self, outgoing: &'m [DVector<f64>]) -> Vec<Mailbox<'m>> {
        self.rounds += 1;
        self.mixing
            .neighbors()
            .iter()
            .enumerate()
            .map(|(i, nb)| Mailbox {
                node: i,
                messages: nb.iter().map(|&j| (j, &outgoing[j])).collect(),
            })
            .collect()
    }

    /// One round of `x_i ← Σ_{j ∈ N_i ∪ {i}} p_ij x_j`.
    pub fn mix(&mut self, x: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.check_dims(x)?;
        let mixing = self.mixing;
        let p = mixing.p();
        let boxes = self.exchange(x);
        boxes
            .iter()
            .map(|mb| {
                let i = mb.node();
                let mut out = &x[i] * p[(i, i)];
                for j in mb.senders() {
                    out.axpy(p[(i, j)], mb.from(j)?, 1.0);
                }
                Ok(out)
            })
            .collect()
    }
}

/// Monomial oracle: `τ` mixing rounds then `Σ a_t x^t`.
pub fn macc(x: &[DVector<f64>], net: &mut Network<'_>, spec: &PolynomialSpec) -> Result<Vec<DVector<f64>>> {
    net.check_dims(x)?;
    let mut cur = x.to_vec();
    let mut acc: Vec<DVector<f64>> = x.iter().map(|v| DVector::zeros(v.len())).collect();
    for a in &spec.coeffs {
        cur = net.mix(&cur)?;
        for (s, c) in acc.iter_mut().zip(&cur) {
            s.axpy(*a, c, 1.0);
        }
    }
    Ok(acc)
}

/// Chebyshev oracle.
pub fn cacc(y: &[DVector<f64>], net: &mut Network<'_>, spec: &ChebyshevSpec) -> Result<Vec<DVector<f64>>> {
    net.check_dims(y)?;
    // (I − c2 H) v, one round.
    let step = |v: &[DVector<f64>], net: &mut Network<'_>| -> Result<Vec<DVector<f64>>> {
        let hv = net.mix(v)?;
        Ok(v.iter().zip(hv).map(|(vi, hi)| vi - hi * spec.c2).collect())
    };
    if spec.degenerate {
        let hv = net.mix(y)?;
        return Ok(hv.into_iter().map(|h| h * spec.c2).collect());
    }
    let c1 = spec.c1;
    let (mut b_prev, mut b) = (1.0, c1);
    let mut y_prev = y.to_vec();
    let mut y_cur: Vec<DVector<f64>> = step(y, net)?.into_iter().map(|v| v * c1).collect();
    for _ in 1..spec.tau {
        let b_next = 2.0 * c1 * b - b_prev;
        let ay = step(&y_cur, net)?;
        let y_next: Vec<DVector<f64>> = ay.iter().zip(&y_prev).map(|(a, p)| a * (2.0 * c1) - p).collect();
        b_prev = b;
        b = b_next;
        y_prev = std::mem::replace(&mut y_cur, y_next);
    }
    Ok(y.iter().zip(&y_cur).map(|(y0, yt)| y0 - yt / b).collect())
}

/// Explicit-matrix evaluation of the same polynomial.
pub fn dense_poly_apply(p: &MixingMatrix, spec: &HPoly, x: &Stacked) -> Result<Stacked> {
    spec.apply_dense(p.p(), x)
}

/// Eigenvalues of `P_τ(P)` through the scalar Chebyshev map.
pub fn chebyshev_eigenvalues(p: &MixingMatrix, tau: usize, mode: ChebyshevMode) -> Result<(ChebyshevSpec, Vec<f64>)> {
    let spec = crate::topology::spectral_data(p, DEFAULT_SPECTRAL_TOL)?;
    let cheb = ChebyshevSpec::new(tau, &spec, mode)?;
    let eigs = p.spectrum().values.iter().map(|&l| cheb.scalar(l)).collect();
    Ok((cheb, eigs))
}

/// Spectral data of `P_τ(H)` itself (not normalized).
pub fn chebyshev_raw_spectrum(p: &MixingMatrix, tau: usize, mode: ChebyshevMode) -> Result<SpectralData> {
    let (_, eigs) = chebyshev_eigenvalues(p, tau, mode)?;
    SpectralData::from_eigenvalues(&eigs, DEFAULT_SPECTRAL_TOL)
}

/// Spectral data of `L = P_τ(H) / λ₁^{P_τ(H)}`; `λ₁ = 1` and `kappa` is κ_L.
pub fn chebyshev_effective_spectrum(p: &MixingMatrix, tau: usize, mode: ChebyshevMode) -> Result<SpectralData> {
    let raw = chebyshev_raw_spectrum(p, tau, mode)?;
    Ok(SpectralData {
        lambda_1: 1.0,
        lambda_nm1: raw.lambda_nm1 / raw.lambda_1,
        kappa: raw.kappa,
        gamma_inv: raw.gamma_inv,
    })
}

/// The normalized Chebyshev operator `L` as an [`HPoly`].
pub fn normalized_chebyshev(p: &MixingMatrix, tau: usize, mode: ChebyshevMode) -> Result<HPoly> {
    let (cheb, eigs) = chebyshev_eigenvalues(p, tau, mode)?;
    let top = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(HPoly::Chebyshev(cheb).scaled(1.0 / top))
}

/// Spectral data of any polynomial of `H` on the given `P`.
pub fn poly_spectrum(p: &MixingMatrix, poly: &HPoly) -> Result<SpectralData> {
    let eigs: Vec<f64> = p.spectrum().values.iter().map(|&l| poly.scalar(l)).collect();
    SpectralData::from_eigenvalues(&eigs, DEFAULT_SPECTRAL_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacked;
    use crate::topology::{build_mixing_matrix, build_topology, spectral_data, MixingScheme, TopologyKind};
    use proptest::prelude::*;

    fn ring(n: usize) -> MixingMatrix {
        build_mixing_matrix(&build_topology(&TopologyKind::Ring, n, 0).unwrap(), MixingScheme::MetropolisLaplacian, false).unwrap()
    }

    fn cheb_t(k: usize, t: f64) -> f64 {
        if t.abs() <= 1.0 {
            (k as f64 * t.acos()).cos()
        } else {
            let s = if t < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            s * (k as f64 * t.abs().acosh()).cosh()
        }
    }

    fn net_apply(poly: &HPoly, p: &MixingMatrix, x: &Stacked) -> (Stacked, u64) {
        let mut net = Network::new(p);
        let out = poly.apply_net(&stacked::to_nodes(x), &mut net).unwrap();
        (stacked::from_nodes(&out), net.rounds())
    }

    #[test]
    fn chebyshev_scalar_matches_closed_form() {
        let p = ring(20);
        let sd = spectral_data(&p, DEFAULT_SPECTRAL_TOL).unwrap();
        for mode in [ChebyshevMode::Standard, ChebyshevMode::HalfStep] {
            for tau in 1..8 {
                let c = ChebyshevSpec::new(tau, &sd, mode).unwrap();
                for &l in p.spectrum().values.iter() {
                    let want = 1.0 - cheb_t(tau, c.c1 * (1.0 - c.c2 * l)) / cheb_t(tau, c.c1);
                    assert!((c.scalar(l) - want).abs() < 1e-12, "tau {tau} λ {l}");
                }
            }
        }
    }

    #[test]
    fn standard_mode_maps_the_spectrum_onto_the_reference_interval() {
        let sd = SpectralData::from_eigenvalues(&[0.0, 0.5, 2.0], 1e-9).unwrap();
        let c = ChebyshevSpec::new(3, &sd, ChebyshevMode::Standard).unwrap();
        assert!((c.c1 * (1.0 - c.c2 * 0.5) - 1.0).abs() < 1e-12);
        assert!((c.c1 * (1.0 - c.c2 * 2.0) + 1.0).abs() < 1e-12);
        let half = ChebyshevSpec::new(3, &sd, ChebyshevMode::HalfStep).unwrap();
        assert!((c.c2 - 2.0 * half.c2).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_depth_zero_is_rejected() {
        let sd = SpectralData::from_eigenvalues(&[0.0, 1.0, 2.0], 1e-9).unwrap();
        assert!(ChebyshevSpec::new(0, &sd, ChebyshevMode::Standard).is_err());
        assert!(PolynomialSpec::new(vec![]).is_err());
    }

    #[test]
    fn degenerate_spectrum_uses_one_round() {
        let g = build_topology(&TopologyKind::Complete, 5, 0).unwrap();
        let p = build_mixing_matrix(&g, MixingScheme::UniformLaplacian, false).unwrap();
        let sd = spectral_data(&p, DEFAULT_SPECTRAL_TOL).unwrap();
        let c = ChebyshevSpec::new(4, &sd, ChebyshevMode::Standard).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.rounds(), 1);
        let x = Stacked::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        let (got, rounds) = net_apply(&HPoly::Chebyshev(c.clone()), &p, &x);
        assert_eq!(rounds, 1);
        // c2 = 2/(2·5): the projection onto the disagreement subspace.
        assert!((got - stacked::project_disagreement(&x)).amax() < 1e-12);
    }

    #[test]
    fn newton_interpolant_reproduces_the_function_on_the_spectrum() {
        let p = ring(9);
        let eigs: Vec<f64> = p.spectrum().values.iter().copied().collect();
        let f = |l: f64| (1.0 + l).ln() + l * l;
        let poly = HPoly::interpolate(&eigs, f);
        // A ring has pairwise repeated eigenvalues, so 5 distinct nodes.
        assert_eq!(poly.rounds(), 4);
        for &l in &eigs {
            assert!((poly.scalar(l) - f(l)).abs() < 1e-11);
        }
        let dense = poly.matrix(p.p());
        let want = p.spectrum().matrix_function(f);
        assert!((dense - want).amax() < 1e-10);
    }

    #[test]
    fn ratio_to_sees_through_scalings() {
        let a = HPoly::h().scaled(3.0).scaled(2.0);
        assert_eq!(a.ratio_to(&HPoly::h().scaled(1.5)), Some(4.0));
        assert_eq!(HPoly::h().shifted(1.0).ratio_to(&HPoly::h()), None);
        assert_eq!(HPoly::Zero.ratio_to(&HPoly::Zero), None);
    }

    #[test]
    fn mailbox_refuses_non_neighbors() {
        let p = ring(6);
        let mut net = Network::new(&p);
        let x: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_element(1, i as f64)).collect();
        let boxes = net.exchange(&x);
        assert_eq!(boxes[0].senders().collect::<Vec<_>>(), vec![1, 5]);
        assert_eq!(boxes[0].from(1).unwrap()[0], 1.0);
        assert!(matches!(boxes[0].from(3), Err(UppError::NodeNonlocalAccess { node: 0, peer: 3 })));
        assert_eq!(net.rounds(), 1);
    }

    #[test]
    fn network_checks_dimensions() {
        let p = ring(4);
        let mut net = Network::new(&p);
        let short: Vec<DVector<f64>> = (0..3).map(|_| DVector::zeros(2)).collect();
        assert!(net.mix(&short).is_err());
        let ragged = vec![DVector::zeros(2), DVector::zeros(2), DVector::zeros(3), DVector::zeros(2)];
        assert!(macc(&ragged, &mut net, &PolynomialSpec::identity()).is_err());
    }

    fn poly_strategy(tau_max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 1..=tau_max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monomial_net_matches_powers(n in 3usize..12, d in 1usize..4, coeffs in poly_strategy(5), seed in 0u64..100) {
            let p = ring(n);
            let x = Stacked::from_fn(n, d, |i, j| ((i * 31 + j * 17 + seed as usize) % 13) as f64 - 6.0);
            let mut want = Stacked::zeros(n, d);
            let mut pow = x.clone();
            for a in &coeffs {
                pow = p.p() * pow;
                want += &pow * *a;
            }
            let poly = HPoly::Monomial(PolynomialSpec::new(coeffs.clone()).unwrap());
            let (got, rounds) = net_apply(&poly, &p, &x);
            prop_assert!((&got - &want).norm() <= 1e-12 * want.norm().max(1.0));
            prop_assert_eq!(rounds as usize, coeffs.len());
        }

        #[test]
        fn composite_polys_net_dense_and_scalar_agree(
            n in 3usize..10,
            tau in 1usize..6,
            factor in -3.0f64..3.0,
            shift in -2.0f64..2.0,
            coeffs in poly_strategy(3),
        ) {
            let p = ring(n);
            let sd = spectral_data(&p, DEFAULT_SPECTRAL_TOL).unwrap();
            let cheb = HPoly::Chebyshev(ChebyshevSpec::new(tau, &sd, ChebyshevMode::Standard).unwrap());
            let mono = HPoly::Monomial(PolynomialSpec::new(coeffs).unwrap());
            let poly = cheb.scaled(factor).shifted(shift).then(mono);
            let x = Stacked::from_fn(n, 2, |i, j| (i as f64 + 1.0).sin() + j as f64);
            let dense = poly.apply_dense(p.p(), &x).unwrap();
            let (net, rounds) = net_apply(&poly, &p, &x);
            prop_assert!((&net - &dense).norm() <= 1e-11 * dense.norm().max(1.0));
            prop_assert_eq!(rounds as usize, poly.rounds());
            let spec = p.spectrum();
            let via_eigs = spec.matrix_function(|l| poly.scalar(l)) * &x;
            prop_assert!((&via_eigs - &dense).norm() <= 1e-10 * dense.norm().max(1.0));
        }

        #[test]
        fn chebyshev_condition_number_bound(kind in 0usize..3, n in 4usize..40, seed in 0u64..50) {
            let kind = match kind {
                0 => TopologyKind::Ring,
                1 => TopologyKind::Path,
                _ => TopologyKind::RandomGeometric { radius: 0.5 },
            };
            let p = build_mixing_matrix(&build_topology(&kind, n, seed).unwrap(), MixingScheme::MetropolisLaplacian, false).unwrap();
            let sd = spectral_data(&p, DEFAULT_SPECTRAL_TOL).unwrap();
            let eff = chebyshev_effective_spectrum(&p, sd.chebyshev_depth(), ChebyshevMode::Standard).unwrap();
            let e = 0.5f64.exp();
            let bound = ((e + 1.0 / e) / (e - 1.0 / e)).powi(2);
            prop_assert!(eff.kappa <= bound, "kappa_L {} > {}", eff.kappa, bound);
            prop_assert!((eff.lambda_1 - 1.0).abs() < 1e-15);
            // The polynomial is PSD with the same null space.
            let (_, eigs) = chebyshev_eigenvalues(&p, sd.chebyshev_depth(), ChebyshevMode::Standard).unwrap();
            prop_assert!(eigs.iter().filter(|v| v.abs() < 1e-12).count() == 1);
            prop_assert!(eigs.iter().all(|v| *v > -1e-12));
        }
    }
}
