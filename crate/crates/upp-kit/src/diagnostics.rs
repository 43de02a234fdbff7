//! Per-iteration metrics and Lyapunov functions.
//!
//! `K` and `J` are applied as block means; nothing here forms an
//! `(N d) × (N d)` matrix except [`p_tilde`] for block-diagonal `G`.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::engine::{GOperator, GlobalState, UppConfig};
use crate::error::{Result, UppError};
use crate::problems::ProblemInstance;
use crate::stacked::{self, Stacked};
use crate::topology::{MixingMatrix, Spectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub iter: usize,
    pub rounds: u64,
    pub gap: f64,
    pub w_hat: f64,
    pub consensus_err: f64,
    pub v_lyap: Option<f64>,
    pub p_tilde: Option<f64>,
    pub f_err: Option<f64>,
}

/// `Σ_ij p_ij ⟨x_i, x_j⟩`.
pub fn h_quad(x: &Stacked, p: &MixingMatrix) -> f64 {
    (x.transpose() * p.p() * x).trace()
}

/// `‖∇f̃(x)‖² + xᵀ H x`.
pub fn optimality_gap(x: &Stacked, grads: &Stacked, p: &MixingMatrix) -> f64 {
    grads.norm_squared() + h_quad(x, p)
}

/// `‖x − Jx‖² + ‖J ∇f̃(x)‖²`.
pub fn w_hat(x: &Stacked, grads: &Stacked) -> f64 {
    let n = x.nrows() as f64;
    stacked::project_disagreement(x).norm_squared() + n * stacked::block_mean(grads).norm_squared()
}

pub fn consensus_error(x: &Stacked) -> f64 {
    stacked::project_disagreement(x).norm_squared()
}

/// `V = ½‖x‖²_K + (1/(2ε̄))‖s‖²_K + ⟨x, K s⟩ + f(x̄) − f*` with
/// `s = q + (1/θ) ∇f̃(1 ⊗ x̄)`.
pub fn lyapunov_v(x: &Stacked, q: &Stacked, theta: f64, eps_bar: f64, prob: &ProblemInstance) -> Result<f64> {
    let f_star = prob.f_star.ok_or(UppError::MissingFStar)?;
    let xbar = stacked::block_mean(x);
    let s = q + prob.grad_at_consensus(&xbar)? / theta;
    let kx = stacked::project_disagreement(x);
    let ks = stacked::project_disagreement(&s);
    Ok(0.5 * kx.norm_squared() + ks.norm_squared() / (2.0 * eps_bar) + stacked::inner(&kx, &ks) + prob.value(&xbar) - f_star)
}

/// `(1/N)‖Σ_i ∇f_i(x_i)‖² + ρ ‖x‖²_L`.
pub fn e_error(x: &Stacked, grads: &Stacked, rho: f64, l_quad: f64) -> f64 {
    let n = x.nrows() as f64;
    stacked::block_sum(grads).norm_squared() / n + rho * l_quad
}

/// Constants entering the single-loop auxiliary function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PTildeParams {
    pub c_tilde: f64,
    pub kappa_tilde: f64,
    pub m_bar: f64,
}

/// `AL(x, v) = f̃(x) + qᵀx + (ρ/2)‖x‖²_L` (`q = L^{1/2} v`).
pub fn augmented_lagrangian(x: &Stacked, q: &Stacked, l_quad: f64, rho: f64, prob: &ProblemInstance) -> f64 {
    prob.value_stacked(x) + stacked::inner(q, x) + 0.5 * rho * l_quad
}

/// `P̃^{k+1}` from `(x^{k+1}, q^{k+1})` and `x^k`, with `B = G⁻¹ − ρ L`.
/// `c_B = 0` when `G` is constant, `4 (λ₁^B)²` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn p_tilde(
    x_new: &Stacked,
    x_old: &Stacked,
    q_new: &Stacked,
    cfg: &UppConfig,
    tp: &PTildeParams,
    prob: &ProblemInstance,
    p: &MixingMatrix,
    spec: &Spectrum,
) -> Result<f64> {
    if cfg.theta != 1.0 || cfg.d_spec != cfg.dtilde_spec {
        return Err(UppError::WrongVariant(format!("{} is not a single-loop run", cfg.variant_name)));
    }
    let rho = cfg.rho;
    let l = &cfg.d_spec;
    let l_quad = spec.quad_form(x_new, |v| l.scalar(v));
    let al = augmented_lagrangian(x_new, q_new, l_quad, rho, prob);
    let dx = x_new - x_old;
    let (c, kt, m) = (tp.c_tilde, tp.kappa_tilde, tp.m_bar);
    let weighted = match &cfg.g_op {
        GOperator::Scalar { mu } => {
            let b = |v: f64| 1.0 / mu - rho * l.scalar(v);
            let k = 3.0 * kt * m * m;
            spec.quad_form(&dx, |v| k / b(v) + 0.5 * c * (b(v) + 3.0 * m + k / b(v) + rho * l.scalar(v)))
        }
        GOperator::BlockDiagonal { .. } | GOperator::BlockRule { .. } => {
            let d = x_new.ncols();
            let g = cfg.g_op.dense(x_new, prob, p)?;
            let ginv = Cholesky::new(g)
                .ok_or_else(|| UppError::AssumptionViolation("G not positive definite".into()))?
                .inverse();
            let ld = kron_identity(&l.matrix(p.p()), d);
            let b = &ginv - &ld * rho;
            let c_b = if matches!(cfg.g_op, GOperator::BlockRule { .. }) {
                4.0 * Spectrum::of(&b).values.max().powi(2)
            } else {
                0.0
            };
            let binv = b
                .clone()
                .try_inverse()
                .ok_or_else(|| UppError::AssumptionViolation("B is singular".into()))?;
            let k = 3.0 * kt * (c_b + m * m);
            let nd = b.nrows();
            let w = &binv * k + (&b + DMatrix::identity(nd, nd) * (3.0 * m) + &binv * k + &ld * rho) * (0.5 * c);
            let v = flatten(&dx);
            (v.transpose() * w * &v)[(0, 0)]
        }
        GOperator::Polynomial { .. } => {
            return Err(UppError::WrongVariant("polynomial G belongs to the multi-loop family".into()))
        }
    };
    Ok(al + 0.5 * c * rho * l_quad + weighted)
}

/// `M ⊗ I_d`.
pub fn kron_identity(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n * d, n * d, |r, c| if r % d == c % d { m[(r / d, c / d)] } else { 0.0 })
}

/// Node-major flattening, matching [`kron_identity`].
pub fn flatten(x: &Stacked) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(x.len(), x.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// What the recorder computes beyond the always-on metrics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RecorderOptions {
    /// `(θ, ε̄)` to record `V`.
    pub lyapunov: Option<(f64, f64)>,
    pub p_tilde: Option<PTildeParams>,
}

/// Turns engine states into records. Keeps the previous iterate for
/// [`p_tilde`].
pub struct Recorder<'a> {
    cfg: &'a UppConfig,
    prob: &'a ProblemInstance,
    p: &'a MixingMatrix,
    opts: RecorderOptions,
    spec: Spectrum,
    prev_x: Option<Stacked>,
    pub records: Vec<DiagnosticsRecord>,
    /// `e`-error per record, for single-loop runs.
    pub e_errors: Vec<f64>,
}

impl<'a> Recorder<'a> {
    pub fn new(cfg: &'a UppConfig, prob: &'a ProblemInstance, p: &'a MixingMatrix, opts: RecorderOptions) -> Self {
        Recorder { cfg, prob, p, opts, spec: p.spectrum(), prev_x: None, records: Vec::new(), e_errors: Vec::new() }
    }

    pub fn observe(&mut self, s: &GlobalState) -> Result<()> {
        let grads = self.prob.grad_stacked(&s.x)?;
        let f_err = match self.prob.f_star {
            Some(fs) => Some(self.prob.value(&stacked::block_mean(&s.x)) - fs),
            None => None,
        };
        let v_lyap = match self.opts.lyapunov {
            Some((theta, eps)) => Some(lyapunov_v(&s.x, &s.q, theta, eps, self.prob)?),
            None => None,
        };
        let p_tilde = match &self.opts.p_tilde {
            Some(tp) => {
                // The single-loop start x⁰ = −G⁰∇f̃(0) is one step from x⁻¹ = 0.
                let old = self.prev_x.clone().unwrap_or_else(|| Stacked::zeros(s.x.nrows(), s.x.ncols()));
                Some(p_tilde(&s.x, &old, &s.q, self.cfg, tp, self.prob, self.p, &self.spec)?)
            }
            None => None,
        };
        let l_quad = self.spec.quad_form(&s.x, |v| self.cfg.d_spec.scalar(v));
        self.e_errors.push(e_error(&s.x, &grads, self.cfg.rho, l_quad));
        let rec = DiagnosticsRecord {
            iter: s.iter,
            rounds: s.init_rounds + s.rounds_used,
            gap: optimality_gap(&s.x, &grads, self.p),
            w_hat: w_hat(&s.x, &grads),
            consensus_err: consensus_error(&s.x),
            v_lyap,
            p_tilde,
            f_err,
        };
        for (name, v) in [("gap", Some(rec.gap)), ("v_lyap", rec.v_lyap), ("p_tilde", rec.p_tilde)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(UppError::AssumptionViolation(format!("{name} is not finite at iteration {}", s.iter)));
                }
            }
        }
        self.records.push(rec);
        self.prev_x = Some(s.x.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{self, EngineMode, InitRule};
    use crate::mixing::HPoly;
    use crate::problems::make_pl_quadratic_instance;
    use crate::topology::{build_mixing_matrix, build_topology, MixingScheme, TopologyKind};
    use proptest::prelude::*;

    fn ring(n: usize) -> MixingMatrix {
        build_mixing_matrix(&build_topology(&TopologyKind::Ring, n, 0).unwrap(), MixingScheme::MetropolisLaplacian, false).unwrap()
    }

    fn dense_k(n: usize, d: usize) -> DMatrix<f64> {
        kron_identity(&(DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)), d)
    }

    fn single_loop_cfg(g_op: GOperator, x0: Stacked) -> UppConfig {
        let q0 = Stacked::zeros(x0.nrows(), x0.ncols());
        UppConfig {
            rho: 0.8,
            theta: 1.0,
            d_spec: HPoly::h(),
            dtilde_spec: HPoly::h(),
            g_op,
            init: InitRule::Explicit { x0, q0 },
            variant_name: "single".into(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn metrics_match_dense_forms(n in 2usize..7, d in 1usize..4, vals in prop::collection::vec(-2.0f64..2.0, 30)) {
            let p = ring(n.max(3));
            let n = p.n();
            let x = Stacked::from_fn(n, d, |i, j| vals[(i * d + j) % 30]);
            let g = Stacked::from_fn(n, d, |i, j| vals[(i * 7 + j * 3 + 11) % 30]);
            let (vx, vg) = (flatten(&x), flatten(&g));
            let hq = (vx.transpose() * kron_identity(p.p(), d) * &vx)[(0, 0)];
            prop_assert!((h_quad(&x, &p) - hq).abs() < 1e-10);
            prop_assert!((optimality_gap(&x, &g, &p) - (vg.norm_squared() + hq)).abs() < 1e-10);
            let k = dense_k(n, d);
            let j = DMatrix::identity(n * d, n * d) - &k;
            let want_w = (&k * &vx).norm_squared() + (&j * &vg).norm_squared();
            prop_assert!((w_hat(&x, &g) - want_w).abs() < 1e-10);
            prop_assert!((consensus_error(&x) - (&k * &vx).norm_squared()).abs() < 1e-10);
            prop_assert_eq!(kron_identity(p.p(), d), p.p().kronecker(&DMatrix::identity(d, d)));
        }
    }

    #[test]
    fn lyapunov_matches_dense_form() {
        let prob = make_pl_quadratic_instance(4, 2, 5).unwrap();
        let x = Stacked::from_fn(4, 2, |i, j| (i as f64 * 0.9 + j as f64).cos());
        let q = stacked::project_disagreement(&Stacked::from_fn(4, 2, |i, j| (i * j) as f64 - 1.0));
        let (theta, eps) = (3.0, 0.4);
        let k = dense_k(4, 2);
        let xbar = stacked::block_mean(&x);
        let s = flatten(&q) + flatten(&prob.grad_at_consensus(&xbar).unwrap()) / theta;
        let vx = flatten(&x);
        let want = 0.5 * (vx.transpose() * &k * &vx)[(0, 0)]
            + (s.transpose() * &k * &s)[(0, 0)] / (2.0 * eps)
            + (vx.transpose() * &k * &s)[(0, 0)]
            + prob.value(&xbar)
            - prob.f_star.unwrap();
        assert!((lyapunov_v(&x, &q, theta, eps, &prob).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn e_error_formula() {
        let x = Stacked::from_fn(3, 2, |i, j| (i + j) as f64);
        let g = Stacked::from_fn(3, 2, |i, _| i as f64);
        // Σ_i ∇f_i = (3, 3); ‖·‖²/N = 6.
        assert!((e_error(&x, &g, 2.0, 1.5) - 9.0).abs() < 1e-14);
    }

    #[test]
    fn p_tilde_scalar_path_matches_dense_block_path() {
        let p = ring(5);
        let prob = make_pl_quadratic_instance(5, 2, 1).unwrap();
        let x_new = Stacked::from_fn(5, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let x_old = Stacked::from_fn(5, 2, |i, j| (i * j) as f64 * 0.1);
        let q = stacked::project_disagreement(&Stacked::from_fn(5, 2, |i, j| (i + 2 * j) as f64));
        let mu = 0.1;
        let tp = PTildeParams { c_tilde: 0.2, kappa_tilde: 0.01, m_bar: prob.smoothness };
        let spec = p.spectrum();
        let scalar = single_loop_cfg(GOperator::Scalar { mu }, x_new.clone());
        let blocks = single_loop_cfg(GOperator::BlockDiagonal { blocks: vec![DMatrix::identity(2, 2) * mu; 5] }, x_new.clone());
        let a = p_tilde(&x_new, &x_old, &q, &scalar, &tp, &prob, &p, &spec).unwrap();
        let b = p_tilde(&x_new, &x_old, &q, &blocks, &tp, &prob, &p, &spec).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn p_tilde_rejects_other_families() {
        let p = ring(4);
        let prob = make_pl_quadratic_instance(4, 1, 0).unwrap();
        let x = Stacked::zeros(4, 1);
        let tp = PTildeParams { c_tilde: 0.2, kappa_tilde: 0.01, m_bar: 1.0 };
        let mut cfg = single_loop_cfg(GOperator::Scalar { mu: 0.1 }, x.clone());
        cfg.theta = 2.0;
        assert!(matches!(p_tilde(&x, &x, &x, &cfg, &tp, &prob, &p, &p.spectrum()), Err(UppError::WrongVariant(_))));
        let cfg = single_loop_cfg(GOperator::zeta_eta(0.1, 0.01, HPoly::h()), x.clone());
        assert!(p_tilde(&x, &x, &x, &cfg, &tp, &prob, &p, &p.spectrum()).is_err());
    }

    #[test]
    fn recorder_tracks_every_state() {
        let p = ring(5);
        let prob = make_pl_quadratic_instance(5, 2, 2).unwrap();
        let x0 = Stacked::from_fn(5, 2, |i, j| (i + j) as f64 * 0.1);
        let cfg = single_loop_cfg(GOperator::Scalar { mu: 0.05 }, x0);
        let opts = RecorderOptions { lyapunov: Some((1.0, 0.5)), p_tilde: Some(PTildeParams { c_tilde: 0.2, kappa_tilde: 0.01, m_bar: prob.smoothness }) };
        let mut rec = Recorder::new(&cfg, &prob, &p, opts);
        let mut states = Vec::new();
        engine::run(&cfg, &prob, &p, 6, EngineMode::Distributed, |s| {
            states.push(s.clone());
            rec.observe(s)
        })
        .unwrap();
        assert_eq!(rec.records.len(), 7);
        assert_eq!(rec.e_errors.len(), 7);
        for (r, s) in rec.records.iter().zip(&states) {
            let g = prob.grad_stacked(&s.x).unwrap();
            assert_eq!(r.iter, s.iter);
            assert_eq!(r.rounds, s.init_rounds + s.rounds_used);
            assert_eq!(r.gap, optimality_gap(&s.x, &g, &p));
            assert!(r.v_lyap.is_some() && r.p_tilde.is_some());
            let fbar: f64 = prob.value(&stacked::block_mean(&s.x));
            assert_eq!(r.f_err, Some(fbar - prob.f_star.unwrap()));
        }
    }
}
