//! Theory-driven parameter selection and the constants of the convergence
//! bounds.
//!
//! Open inequalities are met with 1% slack: lower bounds are multiplied by
//! 1.01, caps by 0.99.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UppError};
use crate::problems::ProblemInstance;
use crate::stacked::{self, Stacked};
use crate::topology::SpectralData;

const UP: f64 = 1.01;
const DOWN: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum GShape {
    /// `η = 0`, so `G = ζ I` and `κ_G = 1`.
    Scalar,
    /// `η > 0` chosen so that `G` has condition number `kappa_g` on the
    /// disagreement subspace.
    Polynomial { kappa_g: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub eps_bar: f64,
    pub g_shape: GShape,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { eps_bar: 0.5, g_shape: GShape::Scalar }
    }
}

/// ε₁..ε₅, ξ₁, ξ₂ at one parameter point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDerived {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps5: f64,
    pub xi1: f64,
    pub xi2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UppMcParams {
    pub m_bar: f64,
    pub eps_bar: f64,
    pub theta: f64,
    pub rho: f64,
    pub lambda2_g: f64,
    pub lambda_n_g: f64,
    pub zeta: f64,
    pub eta: f64,
    pub eps_under: f64,
    /// `D̃ = dtilde_coeff · D G`, with `ε_ ≤ dtilde_coeff ≤ ε̄`.
    pub dtilde_coeff: f64,
    pub kappa_g: f64,
    pub lambda1_d: f64,
    pub kappa_d: f64,
    pub kappa_p: f64,
    pub lambda_nm1_p: f64,
    pub derived: McDerived,
}

#[allow(clippy::too_many_arguments)]
pub fn mc_derived(
    m_bar: f64,
    lambda1_d: f64,
    kappa_d: f64,
    kappa_g: f64,
    theta: f64,
    rho: f64,
    eps_bar: f64,
    lambda2_g: f64,
) -> McDerived {
    let e = eps_bar;
    let m2 = m_bar * m_bar;
    let r = rho * lambda1_d;
    let eps1 = r * (1.0 - e) / (kappa_d * kappa_g)
        - ((4.0 + 4.0 * theta + theta * theta) / (4.0 * kappa_g) + (0.5 + 1.0 / theta) * m2);
    let eps2 = r * r * (2.0 + 1.5 * e + 11.0 * e * e / 8.0)
        + (2.0 + 2.5 * e + 7.0 * e * e / 8.0 + e * r + 0.5 * r * r) * m2;
    let eps3 = theta / (4.0 * kappa_g);
    let eps4 = 0.5 + (3.5 + e) * theta * theta + 0.5 * r;
    let xi1 = m_bar / 2.0 + m2 / (theta * theta) * (1.5 / e + 7.0 / 8.0);
    let q = 0.25 + 1.0 / e;
    let xi2 = kappa_g * m2 / (theta * theta) * (q * q / theta + 0.5);
    let eps5 = xi1 + xi2 / lambda2_g;
    McDerived { eps1, eps2, eps3, eps4, eps5, xi1, xi2 }
}

/// Picks `(θ, ρ, λ₂^G, ζ, η, ε_)` for the multi-loop realization.
///
/// `spec_d` describes `D` on the disagreement subspace and `spec_gpoly`
/// the polynomial `P_τ(H)` inside `G = ζ I − η P_τ(H)`.
pub fn select_upp_mc(m_bar: f64, spec_d: &SpectralData, spec_gpoly: &SpectralData, opts: &McOptions) -> Result<UppMcParams> {
    let e = opts.eps_bar;
    if !(e > 0.0 && e < 1.0) {
        return Err(UppError::ConditionViolation(format!("eps_bar = {e} must lie in (0,1)")));
    }
    if !(m_bar > 0.0) {
        return Err(UppError::ConditionViolation("M_bar must be positive".into()));
    }
    let kappa_g = match opts.g_shape {
        GShape::Scalar => 1.0,
        GShape::Polynomial { kappa_g } => {
            if !(kappa_g >= 1.0) {
                return Err(UppError::ConditionViolation("kappa_G must be >= 1".into()));
            }
            if spec_gpoly.kappa <= 1.0 + 1e-12 && kappa_g > 1.0 {
                return Err(UppError::InfeasibleSpectrum(
                    "kappa_p = 1 leaves no room for a non-scalar G".into(),
                ));
            }
            kappa_g
        }
    };
    let (lambda1_d, kappa_d) = (spec_d.lambda_1, spec_d.kappa);
    let m2 = m_bar * m_bar;
    let q = 0.25 + 1.0 / e;
    let kappa_p = spec_gpoly.kappa;
    // ζ = r λ₂^G; ζ < 1/(4 ε₅) with ε₅ = ξ₁ + ξ₂/λ₂^G is linear in λ₂^G and
    // needs ξ₂ < 1/(4r).
    let r = match opts.g_shape {
        GShape::Polynomial { .. } if kappa_g > 1.0 && kappa_p > 1.0 + 1e-12 => (kappa_p - 1.0 / kappa_g) / (kappa_p - 1.0),
        _ => 1.0,
    };
    let mut theta = UP * f64::max(2.0 * m_bar * kappa_g.sqrt(), 2.0 * q * q);
    if r > 1.0 {
        // ξ₂ decreases in θ; grow θ until ξ₂ ≤ 1/(8r), then bisect.
        let xi2 = |t: f64| kappa_g * m2 / (t * t) * (q * q / t + 0.5);
        let goal = 0.125 / r;
        let (mut lo, mut hi) = (theta, theta);
        while xi2(hi) > goal {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if xi2(mid) > goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        theta = hi;
    }
    let rho_floor = ((4.0 + 4.0 * theta + theta * theta) / (4.0 * kappa_g) + (0.5 + 1.0 / theta) * m2)
        * kappa_d
        * kappa_g
        / (lambda1_d * (1.0 - e));
    let rho = UP * rho_floor;
    let pre = mc_derived(m_bar, lambda1_d, kappa_d, kappa_g, theta, rho, e, 1.0);
    let caps = [
        pre.eps1 / pre.eps2,
        pre.eps3 / pre.eps4,
        (0.25 / r - pre.xi2) / pre.xi1,
        1.0 / (e * theta * rho * lambda1_d),
    ];
    let cap = caps.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(cap > 0.0) {
        return Err(UppError::InfeasibleSpectrum(format!("lambda2_G caps {caps:?}")));
    }
    let lambda2_g = DOWN * cap;
    let derived = mc_derived(m_bar, lambda1_d, kappa_d, kappa_g, theta, rho, e, lambda2_g);
    let (zeta, eta) = match opts.g_shape {
        GShape::Scalar => (lambda2_g, 0.0),
        GShape::Polynomial { .. } if r == 1.0 => (lambda2_g, 0.0),
        GShape::Polynomial { .. } => {
            let zeta = r * lambda2_g;
            (zeta, (zeta - lambda2_g) / spec_gpoly.lambda_nm1)
        }
    };
    if !(zeta < 1.0 / (4.0 * derived.eps5)) {
        return Err(UppError::InfeasibleSpectrum(format!(
            "zeta = {zeta:.3e} exceeds 1/(4 eps5) = {:.3e}",
            1.0 / (4.0 * derived.eps5)
        )));
    }
    let inv_lo = 1.0 / e;
    let inv_hi = theta * lambda2_g / (4.0 * kappa_g) + 1.0 / e;
    let eps_under = 1.0 / (0.5 * (inv_lo + inv_hi));
    let params = UppMcParams {
        m_bar,
        eps_bar: e,
        theta,
        rho,
        lambda2_g,
        lambda_n_g: lambda2_g / kappa_g,
        zeta,
        eta,
        eps_under,
        dtilde_coeff: 0.5 * (eps_under + e),
        kappa_g,
        lambda1_d,
        kappa_d,
        kappa_p,
        lambda_nm1_p: spec_gpoly.lambda_nm1,
        derived,
    };
    let failed: Vec<_> = check_upp_mc(&params).into_iter().filter(|c| !c.ok).collect();
    if !failed.is_empty() {
        return Err(UppError::InfeasibleSpectrum(format!("failed checks: {failed:?}")));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

fn check(name: &str, ok: bool, detail: String) -> Check {
    Check { name: name.to_string(), ok, detail }
}

/// Every selection inequality for the multi-loop realization, evaluated at
/// the given point.
pub fn check_upp_mc(p: &UppMcParams) -> Vec<Check> {
    let e = p.eps_bar;
    let m2 = p.m_bar * p.m_bar;
    let q = 0.25 + 1.0 / e;
    let d = mc_derived(p.m_bar, p.lambda1_d, p.kappa_d, p.kappa_g, p.theta, p.rho, e, p.lambda2_g);
    let theta_lb = f64::max(2.0 * p.m_bar * p.kappa_g.sqrt(), 2.0 * q * q);
    let rho_lb = ((4.0 + 4.0 * p.theta + p.theta * p.theta) / (4.0 * p.kappa_g) + (0.5 + 1.0 / p.theta) * m2)
        * p.kappa_d
        * p.kappa_g
        / (p.lambda1_d * (1.0 - e));
    let caps = [
        d.eps1 / d.eps2,
        d.eps3 / d.eps4,
        (0.25 - d.xi2) / d.xi1,
        1.0 / (e * p.theta * p.rho * p.lambda1_d),
    ];
    let zeta_cap_a = 1.0 / (4.0 * d.eps5);
    let zeta_cap_b = if p.kappa_p > 1.0 { p.kappa_p * p.lambda2_g / (p.kappa_p - 1.0) } else { f64::INFINITY };
    let inv_under = 1.0 / p.eps_under;
    let inv_hi = p.theta * p.lambda2_g / (4.0 * p.kappa_g) + 1.0 / e;
    vec![
        check("eps_bar in (0,1)", e > 0.0 && e < 1.0, format!("{e}")),
        check("theta lower bound", p.theta > theta_lb, format!("{} > {theta_lb}", p.theta)),
        check("rho lower bound", p.rho > rho_lb, format!("{} > {rho_lb}", p.rho)),
        check("lambda2_G caps", p.lambda2_g > 0.0 && caps.iter().all(|c| p.lambda2_g < *c), format!("{} < {caps:?}", p.lambda2_g)),
        check(
            "zeta range",
            p.lambda2_g <= p.zeta * (1.0 + 1e-12) && p.zeta < zeta_cap_a && p.zeta < zeta_cap_b,
            format!("{} <= {} < min({zeta_cap_a}, {zeta_cap_b})", p.lambda2_g, p.zeta),
        ),
        check(
            "eps_under range",
            1.0 / e < inv_under && inv_under <= inv_hi && inv_hi < 0.25 + 1.0 / e,
            format!("{} < {inv_under} <= {inv_hi} < {}", 1.0 / e, 0.25 + 1.0 / e),
        ),
        check("dtilde between eps_under and eps_bar", p.eps_under <= p.dtilde_coeff && p.dtilde_coeff <= e, format!("{}", p.dtilde_coeff)),
        check("eps1 > 0", d.eps1 > 0.0, format!("{}", d.eps1)),
        check("xi2 < 1/4", d.xi2 < 0.25, format!("{}", d.xi2)),
        check("zeta(1/4 - eps5 zeta) > 0", p.zeta * (0.25 - d.eps5 * p.zeta) > 0.0, format!("{}", d.eps5)),
        check("eta >= 0", p.eta >= 0.0, format!("{}", p.eta)),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    /// `ρ = 9 κ_B λ_N^B / (c̃ λ_{N−1}^L)`, the stated lower bound.
    #[default]
    LowerBound,
    /// `ρ = (λ₁^B − λ_N^B) / λ₁^L`, the only value for which
    /// `B = (1/μ) I − ρ L` has the selected extreme eigenvalues.
    SpectrumConsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UppScParams {
    pub m_bar: f64,
    pub c_tilde: f64,
    pub d1: Option<f64>,
    pub d2: f64,
    pub d3: f64,
    pub d4: Option<f64>,
    pub lambda_n_b: f64,
    pub lambda_1_b: f64,
    pub rho: f64,
    pub mu: Option<f64>,
    pub tau: Option<usize>,
    pub kappa_b: f64,
    pub kappa_tilde: f64,
    pub kappa_l: f64,
    pub lambda_1_l: f64,
    pub lambda_nm1_l: f64,
    pub rho_rule: RhoRule,
    /// Smallest eigenvalue of `G⁻¹ − ρ L` for scalar `G`; the selection
    /// needs it positive.
    pub b_min_eig: f64,
}

impl UppScParams {
    pub fn b_positive_definite(&self) -> bool {
        self.b_min_eig > 0.0
    }

    /// The `d` used in the constants: `d₄` on the optimal path, `d₁` otherwise.
    pub fn d_lead(&self) -> f64 {
        self.d4.or(self.d1).unwrap_or(f64::NAN)
    }
}

/// Largest `λ` root of `d λ − d₂ − d₃/λ = 0`.
fn lambda_root(d: f64, d2: f64, d3: f64) -> f64 {
    (d2 + (d2 * d2 + 4.0 * d * d3).sqrt()) / (2.0 * d)
}

/// General single-loop selection for a fixed `κ_B`.
pub fn select_upp_sc(m_bar: f64, spec_l: &SpectralData, kappa_b: f64, rule: RhoRule) -> Result<UppScParams> {
    if !(kappa_b >= 1.0) {
        return Err(UppError::InfeasibleKappaB(format!("kappa_B = {kappa_b} must be >= 1")));
    }
    let xi5 = 4.0 * kappa_b * kappa_b / 3.0 + (2.0 * kappa_b - 1.0) / 2.0;
    let xi6 = 2.0 * kappa_b * kappa_b / 3.0;
    let c_ub = (-xi5 + (xi5 * xi5 + xi6).sqrt()) / (2.0 * xi6);
    let c = 0.5 * c_ub;
    let d1 = 0.25 - xi5 * c - xi6 * c * c;
    if !(d1 > 0.0) {
        return Err(UppError::InfeasibleKappaB(format!("d1 = {d1}")));
    }
    let d2 = (0.5 + 2.0 * c) * m_bar;
    let d3 = (2.0 + c) * c * m_bar * m_bar / 6.0;
    let lambda_n = lambda_root(d1, d2, d3);

    // c_B = 4 (λ₁^B)² enters d₁ through ξ₅, ξ₆. Refresh it from the current
    // λ_N^B estimate until the root stops moving.
    let d1_core = 0.25 - c * (2.0 * kappa_b - 1.0) / 2.0;
    let mut est = lambda_n;
    let mut converged = false;
    for _ in 0..50 {
        let c_b = 4.0 * (kappa_b * est).powi(2);
        let d1_ref = d1_core - c_b / (est * est) * (c / 3.0 + c * c / 6.0);
        let next = lambda_root(d1_ref, d2, d3);
        if !(next.is_finite() && d1_ref > 0.0) {
            break;
        }
        let moved = (next - est).abs();
        est = next;
        if moved <= 1e-12 * next {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(UppError::InfeasibleKappaB("c_B refresh did not contract".into()));
    }
    let lambda_n = est;
    let lambda_1 = kappa_b * lambda_n;
    let rho = match rule {
        RhoRule::LowerBound => 9.0 * kappa_b * lambda_n / (c * spec_l.lambda_nm1),
        RhoRule::SpectrumConsistent if kappa_b > 1.0 => (lambda_1 - lambda_n) / spec_l.lambda_1,
        RhoRule::SpectrumConsistent => {
            return Err(UppError::InfeasibleKappaB("the spectrum-consistent rho needs kappa_B > 1".into()))
        }
    };
    let params = UppScParams {
        m_bar,
        c_tilde: c,
        d1: Some(d1),
        d2,
        d3,
        d4: None,
        lambda_n_b: lambda_n,
        lambda_1_b: lambda_1,
        rho,
        mu: Some(1.0 / lambda_1),
        tau: None,
        kappa_b,
        kappa_tilde: lambda_1 / (rho * spec_l.lambda_nm1),
        kappa_l: spec_l.kappa,
        lambda_1_l: spec_l.lambda_1,
        lambda_nm1_l: spec_l.lambda_nm1,
        rho_rule: rule,
        b_min_eig: lambda_1 - rho * spec_l.lambda_1,
    };
    Ok(params)
}

/// Optimal-rate selection with scalar `G = μ I` and Chebyshev `L`.
/// `spec_l_eff` is the normalized Chebyshev spectrum, `kappa_raw` the
/// condition number of the raw mixing matrix (for `τ = ⌈√κ⌉`).
pub fn select_upp_sc_opt(m_bar: f64, spec_l_eff: &SpectralData, kappa_raw: f64, rule: RhoRule) -> Result<UppScParams> {
    if !(m_bar > 0.0) {
        return Err(UppError::ConditionViolation("M_bar must be positive".into()));
    }
    let c = 0.25;
    let d4 = 0.25 - c / 2.0;
    let d2 = (0.5 + 2.0 * c) * m_bar;
    let d3 = (2.0 + c) * c * m_bar * m_bar / 6.0;
    let lambda_n = lambda_root(d4, d2, d3);
    let kl = spec_l_eff.kappa;
    let a = 2.0 * kl - 1.0;
    let bound = 9.0 * lambda_n / c * (a + (a * a - 1.0).max(0.0).sqrt());
    let lambda_1 = UP * bound;
    let mu = 1.0 / lambda_1;
    let kappa_b = lambda_1 / lambda_n;
    let rho = match rule {
        RhoRule::LowerBound => 9.0 * kappa_b * lambda_n / (c * spec_l_eff.lambda_nm1),
        RhoRule::SpectrumConsistent => (lambda_1 - lambda_n) / spec_l_eff.lambda_1,
    };
    let tau = ((kappa_raw * (1.0 - 1e-12)).sqrt().ceil() as usize).max(1);
    Ok(UppScParams {
        m_bar,
        c_tilde: c,
        d1: None,
        d2,
        d3,
        d4: Some(d4),
        lambda_n_b: lambda_n,
        lambda_1_b: lambda_1,
        rho,
        mu: Some(mu),
        tau: Some(tau),
        kappa_b,
        kappa_tilde: lambda_1 / (rho * spec_l_eff.lambda_nm1),
        kappa_l: kl,
        lambda_1_l: spec_l_eff.lambda_1,
        lambda_nm1_l: spec_l_eff.lambda_nm1,
        rho_rule: rule,
        b_min_eig: lambda_1 - rho * spec_l_eff.lambda_1,
    })
}

/// Scalar forms of the single-loop selection inequalities.
pub fn check_upp_sc(p: &UppScParams) -> Vec<Check> {
    let c = p.c_tilde;
    let mut out = Vec::new();
    match (p.d1, p.d4) {
        (Some(d1), _) => {
            let kb = p.kappa_b;
            let xi5 = 4.0 * kb * kb / 3.0 + (2.0 * kb - 1.0) / 2.0;
            let xi6 = 2.0 * kb * kb / 3.0;
            let c_ub = (-xi5 + (xi5 * xi5 + xi6).sqrt()) / (2.0 * xi6);
            out.push(check("c~ in (0, upper)", c > 0.0 && c < c_ub, format!("{c} < {c_ub}")));
            out.push(check("d1 > 0", d1 > 0.0, format!("{d1}")));
            let root = lambda_root(d1, p.d2, p.d3);
            out.push(check("lambda_N^B lower bound", p.lambda_n_b >= root * (1.0 - 1e-12), format!("{} >= {root}", p.lambda_n_b)));
        }
        (None, Some(d4)) => {
            out.push(check("c~ in (0, 1/2)", c > 0.0 && c < 0.5, format!("{c}")));
            out.push(check("d4 > 0", d4 > 0.0, format!("{d4}")));
            let a = 2.0 * p.kappa_l - 1.0;
            let bound = 9.0 * p.lambda_n_b / c * (a + (a * a - 1.0).max(0.0).sqrt());
            out.push(check("lambda_1^B lower bound", p.lambda_1_b > bound, format!("{} > {bound}", p.lambda_1_b)));
        }
        _ => {}
    }
    let rho_lb = 9.0 * p.kappa_b * p.lambda_n_b / (c * p.lambda_nm1_l);
    out.push(check("rho lower bound", p.rho >= rho_lb * (1.0 - 1e-12), format!("{} >= {rho_lb}", p.rho)));
    out.push(check("1 >= c~ >= 9 kappa~", 1.0 >= c && c >= 9.0 * p.kappa_tilde * (1.0 - 1e-12), format!("kappa~ = {}", p.kappa_tilde)));
    out.push(check("B positive definite", p.b_positive_definite(), format!("min eig {}", p.b_min_eig)));
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub delta: Option<f64>,
    pub c1_tilde: Option<f64>,
    pub c2_tilde: Option<f64>,
    pub c1_hat: Option<f64>,
    pub c2_hat: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta3: Option<f64>,
    pub delta4: Option<f64>,
    pub xi3: Option<f64>,
    pub xi4: Option<f64>,
    pub v_hat0: Option<f64>,
}

pub fn xi3(eps_bar: f64) -> f64 {
    let a = 1.0 / eps_bar - 1.0;
    0.5 * (a + (a * a + 4.0).sqrt())
}

pub fn xi4(eps_bar: f64) -> f64 {
    let a = 1.0 - 1.0 / eps_bar;
    0.5 * (a + (a * a + 4.0).sqrt())
}

/// `V̂ = ‖x‖²_K + ‖s‖²_K + f(x̄) − f*` with `s = q + (1/θ) ∇f̃(1 ⊗ x̄)`.
pub fn v_hat(x: &Stacked, q: &Stacked, theta: f64, prob: &ProblemInstance) -> Result<f64> {
    let f_star = prob.f_star.ok_or(UppError::MissingFStar)?;
    let xbar = stacked::block_mean(x);
    let s = q + prob.grad_at_consensus(&xbar)? / theta;
    Ok(stacked::project_disagreement(x).norm_squared() + stacked::project_disagreement(&s).norm_squared() + prob.value(&xbar) - f_star)
}

/// `C₁`, `C₂`, `δ` and intermediates for the multi-loop selection, from the
/// initial primal-dual pair.
pub fn theory_constants_mc(p: &UppMcParams, prob: &ProblemInstance, x0: &Stacked, q0: &Stacked) -> Result<TheoryConstants> {
    let v0 = v_hat(x0, q0, p.theta, prob)?;
    let d = &p.derived;
    let l2 = p.lambda2_g;
    let x3 = xi3(p.eps_bar);
    let x4 = xi4(p.eps_bar);
    let delta1 = f64::max((1.0 + x3) / 2.0, 1.0);
    let delta2 = (1.0 - x4) / 2.0;
    let a = l2 * (d.eps1 - d.eps2 * l2);
    let b = l2 * (d.eps3 - d.eps4 * l2);
    let delta3 = a.min(b).min(p.zeta * (0.25 - d.eps5 * p.zeta)).min(p.zeta / 4.0);
    let mut out = TheoryConstants {
        c1: Some(delta1 * v0 / delta3),
        delta1: Some(delta1),
        delta2: Some(delta2),
        delta3: Some(delta3),
        xi3: Some(x3),
        xi4: Some(x4),
        v_hat0: Some(v0),
        ..Default::default()
    };
    if let Some(nu) = prob.pl_constant {
        let n = prob.n_nodes() as f64;
        let delta4 = a.min(b).min(nu * n * p.zeta / 2.0);
        out.delta4 = Some(delta4);
        out.delta = Some(delta4 / delta1);
        out.c2 = Some(delta1 * v0 / delta2);
    }
    Ok(out)
}

/// `C̃₁, C̃₂` (general selection) or `Ĉ₁, Ĉ₂` (optimal selection).
pub fn theory_constants_sc(p: &UppScParams, prob: &ProblemInstance, x0: &Stacked) -> Result<TheoryConstants> {
    let f_star = prob.f_star.ok_or(UppError::MissingFStar)?;
    let c = p.c_tilde;
    let n = prob.n_nodes();
    let g0 = prob.grad_stacked(&Stacked::zeros(n, prob.dim))?;
    let c1 = prob.value_stacked(x0) - f_star + (6.0 * c + 7.0) / (8.0 * p.m_bar) * g0.norm_squared();
    let d = p.d_lead();
    let k = c * (c + 2.0);
    let c2 = 4.0 * p.lambda_1_b + 4.0 / (3.0 * (1.0 - c)) * (1.0 + 18.0 * d / k) + 8.0 * (6.0 * d / k + 1.0);
    let mut out = TheoryConstants::default();
    if p.d4.is_some() {
        out.c1_hat = Some(c1);
        out.c2_hat = Some(c2);
    } else {
        out.c1_tilde = Some(c1);
        out.c2_tilde = Some(c2);
    }
    Ok(out)
}
