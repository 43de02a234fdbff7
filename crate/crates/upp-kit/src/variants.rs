//! [`UppConfig`] builders for the named realizations and for the existing
//! algorithms that are special cases of the iteration.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{BlockRule, GOperator, InitRule, UppConfig};
use crate::error::{Result, UppError};
use crate::mixing::{normalized_chebyshev, ChebyshevMode, ChebyshevSpec, HPoly, PolynomialSpec};
use crate::stacked::Stacked;
use crate::topology::{spectral_data, MixingMatrix, DEFAULT_SPECTRAL_TOL};
use crate::tuning::{UppMcParams, UppScParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantName {
    #[serde(rename = "UPP_MC")]
    UppMc,
    #[serde(rename = "UPP_MC_CA")]
    UppMcCa,
    #[serde(rename = "UPP_SC")]
    UppSc,
    #[serde(rename = "UPP_SC_OPT")]
    UppScOpt,
    #[serde(rename = "UPP_SC_SO")]
    UppScSo,
}

impl VariantName {
    pub const ALL: [VariantName; 5] =
        [VariantName::UppMc, VariantName::UppMcCa, VariantName::UppSc, VariantName::UppScOpt, VariantName::UppScSo];

    pub fn is_multi_loop(self) -> bool {
        matches!(self, VariantName::UppMc | VariantName::UppMcCa)
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantName::UppMc => "UPP_MC",
            VariantName::UppMcCa => "UPP_MC_CA",
            VariantName::UppSc => "UPP_SC",
            VariantName::UppScOpt => "UPP_SC_OPT",
            VariantName::UppScSo => "UPP_SC_SO",
        })
    }
}

impl FromStr for VariantName {
    type Err = UppError;
    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| UppError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecializationName {
    #[serde(rename = "EXTRA")]
    Extra,
    #[serde(rename = "DIGing")]
    DiGing,
    #[serde(rename = "L_ADMM")]
    LAdmm,
    #[serde(rename = "ProxGPDA")]
    ProxGpda,
    #[serde(rename = "SUDA")]
    Suda,
    #[serde(rename = "ID_FBBS")]
    IdFbbs,
    #[serde(rename = "DQM")]
    Dqm,
    #[serde(rename = "SoPro")]
    SoPro,
}

impl SpecializationName {
    pub const ALL: [SpecializationName; 8] = [
        SpecializationName::Extra,
        SpecializationName::DiGing,
        SpecializationName::LAdmm,
        SpecializationName::ProxGpda,
        SpecializationName::Suda,
        SpecializationName::IdFbbs,
        SpecializationName::Dqm,
        SpecializationName::SoPro,
    ];
}

impl fmt::Display for SpecializationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecializationName::Extra => "EXTRA",
            SpecializationName::DiGing => "DIGing",
            SpecializationName::LAdmm => "L_ADMM",
            SpecializationName::ProxGpda => "ProxGPDA",
            SpecializationName::Suda => "SUDA",
            SpecializationName::IdFbbs => "ID_FBBS",
            SpecializationName::Dqm => "DQM",
            SpecializationName::SoPro => "SoPro",
        })
    }
}

impl FromStr for SpecializationName {
    type Err = UppError;
    fn from_str(s: &str) -> Result<Self> {
        SpecializationName::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| UppError::Config(format!("unknown specialization {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Tuned {
    Mc(UppMcParams),
    Sc(UppScParams),
}

/// Structural choices that are not tuned parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantOptions {
    /// Chebyshev depth; `⌈√κ⌉` when absent.
    pub tau: Option<usize>,
    pub mode: ChebyshevMode,
    /// Seed for the random `x⁰` of the multi-loop variants.
    pub seed: u64,
    /// The polynomial `P_τ(H)` inside `G` for UPP_MC. Defaults to `H`.
    pub mc_gpoly: Option<HPoly>,
}

impl Default for VariantOptions {
    fn default() -> Self {
        VariantOptions { tau: None, mode: ChebyshevMode::Standard, seed: 0, mc_gpoly: None }
    }
}

fn depth(p: &MixingMatrix, opts: &VariantOptions) -> Result<usize> {
    match opts.tau {
        Some(t) => Ok(t),
        None => Ok(spectral_data(p, DEFAULT_SPECTRAL_TOL)?.chebyshev_depth()),
    }
}

/// The plain Chebyshev polynomial `P_τ(H)` (not normalized).
pub fn chebyshev_poly(p: &MixingMatrix, tau: usize, mode: ChebyshevMode) -> Result<HPoly> {
    let spec = spectral_data(p, DEFAULT_SPECTRAL_TOL)?;
    Ok(HPoly::Chebyshev(ChebyshevSpec::new(tau, &spec, mode)?))
}

/// `ζ I − η P_τ(H)`. With `η = 0` the result is scalar unless `keep_poly`,
/// in which case the oracle still runs and its rounds are still spent.
fn mc_g(params: &UppMcParams, gpoly: HPoly, p: &MixingMatrix, keep_poly: bool) -> Result<GOperator> {
    if params.eta == 0.0 && !keep_poly {
        return Ok(GOperator::Scalar { mu: params.zeta });
    }
    let top = p.spectrum().values.iter().map(|&l| gpoly.scalar(l)).fold(f64::NEG_INFINITY, f64::max);
    if params.eta >= params.zeta / top {
        return Err(UppError::AssumptionViolation(format!(
            "eta = {} >= zeta / lambda_1 = {}",
            params.eta,
            params.zeta / top
        )));
    }
    Ok(GOperator::zeta_eta(params.zeta, params.eta, gpoly))
}

pub fn make_variant(name: VariantName, tuned: &Tuned, p: &MixingMatrix, opts: &VariantOptions) -> Result<UppConfig> {
    let cfg = match (name, tuned) {
        (VariantName::UppMc, Tuned::Mc(t)) => {
            let gpoly = opts.mc_gpoly.clone().unwrap_or_else(HPoly::h);
            let g_op = mc_g(t, gpoly, p, false)?;
            let dtilde = match &g_op {
                GOperator::Scalar { mu } => HPoly::h().scaled(t.dtilde_coeff * mu),
                GOperator::Polynomial { op } => HPoly::h().then(op.clone()).scaled(t.dtilde_coeff),
                _ => unreachable!(),
            };
            UppConfig {
                rho: t.rho,
                theta: t.theta,
                d_spec: HPoly::h(),
                dtilde_spec: dtilde,
                g_op,
                init: InitRule::Mc { seed: opts.seed },
                variant_name: name.to_string(),
            }
        }
        (VariantName::UppMcCa, Tuned::Mc(t)) => {
            let tau = depth(p, opts)?;
            let g_op = mc_g(t, chebyshev_poly(p, tau, opts.mode)?, p, true)?;
            UppConfig {
                rho: t.rho,
                theta: t.theta,
                d_spec: HPoly::h(),
                dtilde_spec: HPoly::h(),
                g_op,
                init: InitRule::Mc { seed: opts.seed },
                variant_name: name.to_string(),
            }
        }
        (VariantName::UppSc, Tuned::Sc(t)) => UppConfig {
            rho: t.rho,
            theta: 1.0,
            d_spec: HPoly::h(),
            dtilde_spec: HPoly::h(),
            g_op: GOperator::Scalar { mu: t.mu.unwrap_or(1.0 / t.lambda_1_b) },
            init: InitRule::Sc,
            variant_name: name.to_string(),
        },
        (VariantName::UppScOpt, Tuned::Sc(t)) => {
            let tau = t.tau.map_or_else(|| depth(p, opts), Ok)?;
            let l = normalized_chebyshev(p, tau, opts.mode)?;
            UppConfig {
                rho: t.rho,
                theta: 1.0,
                d_spec: l.clone(),
                dtilde_spec: l,
                g_op: GOperator::Scalar { mu: t.mu.unwrap_or(1.0 / t.lambda_1_b) },
                init: InitRule::Sc,
                variant_name: name.to_string(),
            }
        }
        (VariantName::UppScSo, Tuned::Sc(t)) => {
            let tau = t.tau.map_or_else(|| depth(p, opts), Ok)?;
            let l = normalized_chebyshev(p, tau, opts.mode)?;
            UppConfig {
                rho: t.rho,
                theta: 1.0,
                d_spec: l.clone(),
                dtilde_spec: l,
                g_op: GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree: 2.0 * t.rho, constant: 0.0 } },
                init: InitRule::Sc,
                variant_name: name.to_string(),
            }
        }
        (n, _) => return Err(UppError::WrongVariant(format!("{n} needs the other parameter family"))),
    };
    cfg.validate(p)?;
    Ok(cfg)
}

/// Source matrices of SUDA, each a polynomial of `H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SudaMatrices {
    pub a: HPoly,
    pub b2: HPoly,
    pub c: HPoly,
}

impl Default for SudaMatrices {
    /// `A = I − H`, `B² = H`, `C = I`.
    fn default() -> Self {
        SudaMatrices {
            a: HPoly::h().scaled(-1.0).shifted(1.0),
            b2: HPoly::h(),
            c: HPoly::Zero.shifted(1.0),
        }
    }
}

/// Scalars and source matrices of a specialization. Unset fields take the
/// defaults documented on [`make_specialization`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantParams {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    /// `W = I − ω H`.
    pub omega: Option<f64>,
    /// `W̃ = I − ω̃ H` (EXTRA).
    pub omega_tilde: Option<f64>,
    /// Smoothness bound used by the default step rules.
    pub m_bar: Option<f64>,
    pub suda: Option<SudaMatrices>,
    pub x0: Option<Stacked>,
    pub q0: Option<Stacked>,
    pub seed: u64,
    pub dim: usize,
}

impl VariantParams {
    fn m_bar(&self) -> Result<f64> {
        self.m_bar
            .filter(|m| *m > 0.0)
            .ok_or_else(|| UppError::ConditionViolation("default step rules need a positive M_bar".into()))
    }

    fn x0(&self, n: usize) -> Result<Stacked> {
        if let Some(x) = &self.x0 {
            if x.nrows() != n {
                return Err(UppError::DimensionMismatch { expected: n, got: x.nrows() });
            }
            return Ok(x.clone());
        }
        if self.dim == 0 {
            return Err(UppError::Config("dim must be set when x0 is not given".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(Stacked::from_fn(n, self.dim, |_, _| StandardNormal.sample(&mut rng)))
    }

    fn q0(&self, x0: &Stacked) -> Stacked {
        self.q0.clone().unwrap_or_else(|| Stacked::zeros(x0.nrows(), x0.ncols()))
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(UppError::ConditionViolation(format!("{name} = {v} must be positive")))
    }
}

/// `s` with `s P` equal to the unweighted graph Laplacian: every edge
/// weight of `P` must be the same.
pub fn laplacian_scale(p: &MixingMatrix) -> Result<f64> {
    let m = p.p();
    let mut w: Option<f64> = None;
    for (i, nb) in p.neighbors().iter().enumerate() {
        for &j in nb {
            let v = -m[(i, j)];
            match w {
                None => w = Some(v),
                Some(w0) if (v - w0).abs() > 1e-12 * w0.abs() => {
                    return Err(UppError::ConditionViolation(
                        "edge weights differ, P is not a multiple of the unweighted Laplacian".into(),
                    ))
                }
                _ => {}
            }
        }
    }
    match w {
        Some(w) if w > 0.0 => Ok(1.0 / w),
        _ => Err(UppError::ConditionViolation("graph has no edges".into())),
    }
}

fn commute_check(p: &MixingMatrix, mats: &[&HPoly]) -> Result<()> {
    let dense: Vec<DMatrix<f64>> = mats.iter().map(|m| m.matrix(p.p())).collect();
    for i in 0..dense.len() {
        for j in i + 1..dense.len() {
            let c = &dense[i] * &dense[j] - &dense[j] * &dense[i];
            if c.amax() > 1e-10 {
                return Err(UppError::ConditionViolation(format!("source matrices {i} and {j} do not commute")));
            }
        }
    }
    Ok(())
}

/// Largest eigenvalue of `P`.
fn lambda_1(p: &MixingMatrix) -> f64 {
    p.spectrum().values.max()
}

/// Maps a specialization onto the UPP iteration.
///
/// Defaults: `ω = 1/λ₁(P)`, `ω̃ = ω/2` (EXTRA), `ω = 1/(2λ₁)` (ID-FBBS,
/// DIGing), `α = 1/(2M̄)` for the EXTRA family, `c = M̄` (DQM), `δ = M̄`
/// and `ρ = M̄` (SoPro), L-ADMM with `α = M̄`, `γ = 2(M̄ + αλ₁)`,
/// `β = √(αγ)/2`, Prox-GPDA with `β` solving `2β d_max (M̄ + β λ₁(A^T A)) = ½`.
pub fn make_specialization(name: SpecializationName, params: &VariantParams, p: &MixingMatrix) -> Result<UppConfig> {
    let n = p.n();
    let l1 = lambda_1(p);
    let label = name.to_string();
    let cfg = match name {
        SpecializationName::Extra => {
            let omega = positive("omega", params.omega.unwrap_or(1.0 / l1))?;
            let omega_t = positive("omega_tilde", params.omega_tilde.unwrap_or(omega / 2.0))?;
            if !(omega_t < omega) {
                return Err(UppError::ConditionViolation("EXTRA needs W~ >= W with Null(W~ - W) = span(1)".into()));
            }
            let alpha = positive("alpha", match params.alpha {
                Some(a) => a,
                None => 0.5 / params.m_bar()?,
            })?;
            let x0 = params.x0(n)?;
            let q0 = HPoly::h().scaled((omega - omega_t) / alpha).apply_dense(p.p(), &x0)?;
            UppConfig {
                rho: 1.0 / alpha,
                theta: 1.0,
                d_spec: HPoly::h().scaled(omega_t),
                dtilde_spec: HPoly::h().scaled(omega - omega_t),
                g_op: GOperator::Scalar { mu: alpha },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
        SpecializationName::IdFbbs => {
            let omega = positive("omega", params.omega.unwrap_or(0.5 / l1))?;
            if !(omega * l1 < 1.0) {
                return Err(UppError::ConditionViolation("ID-FBBS needs W~ = I - omega H positive definite".into()));
            }
            let alpha = positive("alpha", match params.alpha {
                Some(a) => a,
                None => 0.5 / params.m_bar()?,
            })?;
            let x0 = params.x0(n)?;
            let q0 = params.q0(&x0);
            UppConfig {
                rho: 1.0 / alpha,
                theta: 1.0,
                d_spec: HPoly::h().scaled(omega),
                dtilde_spec: HPoly::h().scaled(omega),
                g_op: GOperator::Scalar { mu: alpha },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
        SpecializationName::DiGing => {
            let omega = positive("omega", params.omega.unwrap_or(0.5 / l1))?;
            if !(omega * l1 < 2.0) {
                return Err(UppError::ConditionViolation("DIGing needs ||W - J|| < 1".into()));
            }
            let alpha = positive("alpha", match params.alpha {
                Some(a) => a,
                None => 0.5 / params.m_bar()?,
            })?;
            let x0 = params.x0(n)?;
            // q⁰ = (1/α)(W² − W) x⁰ = (1/α)(ω² H² − ω H) x⁰.
            let q0 = HPoly::Monomial(PolynomialSpec { coeffs: vec![-omega / alpha, omega * omega / alpha] })
                .apply_dense(p.p(), &x0)?;
            UppConfig {
                rho: 1.0 / alpha,
                theta: 1.0,
                d_spec: HPoly::Monomial(PolynomialSpec { coeffs: vec![2.0 * omega, -omega * omega] }),
                dtilde_spec: HPoly::Monomial(PolynomialSpec { coeffs: vec![0.0, omega * omega] }),
                g_op: GOperator::Scalar { mu: alpha },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
        SpecializationName::LAdmm => {
            let alpha = positive("alpha", match params.alpha {
                Some(a) => a,
                None => params.m_bar()?,
            })?;
            let gamma = positive("gamma", match params.gamma {
                Some(g) => g,
                None => 2.0 * (params.m_bar()? + alpha * l1),
            })?;
            let beta = positive("beta", params.beta.unwrap_or((alpha * gamma).sqrt() / 2.0))?;
            let x0 = params.x0(n)?;
            UppConfig {
                rho: alpha,
                theta: beta,
                d_spec: HPoly::h(),
                dtilde_spec: HPoly::h().scaled(beta / (alpha * gamma)),
                g_op: GOperator::Scalar { mu: 1.0 / gamma },
                init: InitRule::Explicit { q0: Stacked::zeros(n, x0.ncols()), x0 },
                variant_name: label,
            }
        }
        SpecializationName::ProxGpda => {
            let s = laplacian_scale(p)?;
            let dmax = (0..n).map(|i| p.degree(i)).max().unwrap_or(0) as f64;
            let beta = positive("beta", match params.beta {
                Some(b) => b,
                None => {
                    let m = params.m_bar()?;
                    let a = 2.0 * dmax * s * l1;
                    let b = 2.0 * dmax * m;
                    (-b + (b * b + 2.0 * a).sqrt()) / (2.0 * a)
                }
            })?;
            let x0 = params.x0(n)?;
            let d = x0.ncols();
            // AᵀA + BᵀB with A the signed and B the unsigned incidence
            // matrix is 2·diag(|N_i|).
            let blocks = (0..n)
                .map(|i| DMatrix::identity(d, d) * (2.0 * beta * p.degree(i) as f64))
                .collect();
            UppConfig {
                rho: beta,
                theta: 1.0,
                d_spec: HPoly::h().scaled(s),
                dtilde_spec: HPoly::h().scaled(s),
                g_op: GOperator::BlockDiagonal { blocks },
                init: InitRule::Explicit { q0: Stacked::zeros(n, x0.ncols()), x0 },
                variant_name: label,
            }
        }
        SpecializationName::Suda => {
            let m = params.suda.clone().unwrap_or_default();
            commute_check(p, &[&m.a, &m.b2, &m.c])?;
            let alpha = positive("alpha", match params.alpha {
                Some(a) => a,
                None => 0.5 / params.m_bar()?,
            })?;
            let eigs: Vec<f64> = p.spectrum().values.iter().copied().collect();
            let pinv = |v: f64| if v.abs() <= 1e-12 { 0.0 } else { 1.0 / v };
            let (a, b2, c) = (&m.a, &m.b2, &m.c);
            let d_spec = HPoly::interpolate(&eigs, |l| pinv(a.scalar(l)) - c.scalar(l));
            let dtilde_spec = HPoly::interpolate(&eigs, |l| pinv(a.scalar(l)) * b2.scalar(l));
            let x0 = params.x0(n)?;
            let q0 = params.q0(&x0);
            UppConfig {
                rho: 1.0 / alpha,
                theta: 1.0,
                d_spec,
                dtilde_spec,
                g_op: GOperator::Polynomial { op: m.a.clone().scaled(alpha) },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
        SpecializationName::Dqm => {
            let s = laplacian_scale(p)?;
            let c = positive("c", match params.c {
                Some(c) => c,
                None => params.m_bar()?,
            })?;
            let x0 = params.x0(n)?;
            let q0 = params.q0(&x0);
            UppConfig {
                rho: c,
                theta: 1.0,
                d_spec: HPoly::h().scaled(s),
                dtilde_spec: HPoly::h().scaled(s),
                g_op: GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree: 2.0 * c, constant: 0.0 } },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
        SpecializationName::SoPro => {
            let delta = positive("delta", match params.delta {
                Some(d) => d,
                None => params.m_bar()?,
            })?;
            let rho = positive("rho", match params.rho {
                Some(r) => r,
                None => params.m_bar()?,
            })?;
            let x0 = params.x0(n)?;
            let q0 = params.q0(&x0);
            UppConfig {
                rho,
                theta: 1.0,
                d_spec: HPoly::h(),
                dtilde_spec: HPoly::h(),
                g_op: GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree: 0.0, constant: delta } },
                init: InitRule::Explicit { x0, q0 },
                variant_name: label,
            }
        }
    };
    cfg.validate(p)?;
    Ok(cfg)
}
