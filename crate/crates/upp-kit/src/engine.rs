//! The UPP iteration
//!
//! ```text
//! z    = ∇f̃(x) + θ q + ρ D x
//! x⁺   = x − G z
//! q⁺   = q + ρ D̃ x⁺
//! ```
//!
//! in two forms: [`upp_step_reference`] with dense matrices and
//! [`upp_step_distributed`] where every node only sees its own block and
//! what the [`Network`] delivers. When `D̃ = c D` the distributed form keeps
//! `y = D̃ x` and reuses `y / c` as the next `D x`, which is what makes the
//! single-loop variants cost `τ` rounds per iteration.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UppError};
use crate::mixing::{HPoly, Network};
use crate::problems::ProblemInstance;
use crate::stacked::{self, Stacked};
use crate::topology::MixingMatrix;

/// How a node builds its block `G_i^k` from local data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BlockRule {
    /// `G_i = ((per_degree·|N_i| + constant) I + ∇²f_i(x_i))⁻¹`.
    HessianShift { per_degree: f64, constant: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GOperator {
    /// A polynomial of `H` with a constant term, e.g. `ζ I − η P_τ(H)`.
    Polynomial { op: HPoly },
    BlockDiagonal { blocks: Vec<DMatrix<f64>> },
    /// Blocks recomputed every iteration.
    BlockRule { rule: BlockRule },
    Scalar { mu: f64 },
}

impl GOperator {
    /// `ζ I − η spec(H)`.
    pub fn zeta_eta(zeta: f64, eta: f64, spec: HPoly) -> Self {
        GOperator::Polynomial { op: spec.scaled(-eta).shifted(zeta) }
    }

    pub fn rounds(&self) -> usize {
        match self {
            GOperator::Polynomial { op } => op.rounds(),
            _ => 0,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, GOperator::Polynomial { .. })
    }

    /// The block `G_i^k` for node-local kinds.
    fn block(&self, i: usize, xi: &DVector<f64>, prob: &ProblemInstance, degree: usize) -> Result<Option<DMatrix<f64>>> {
        Ok(match self {
            GOperator::BlockDiagonal { blocks } => Some(blocks[i].clone()),
            GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree, constant } } => {
                let d = xi.len();
                let m = DMatrix::identity(d, d) * (per_degree * degree as f64 + constant) + prob.locals[i].hess(xi);
                let chol = Cholesky::new(m).ok_or_else(|| {
                    UppError::AssumptionViolation(format!("G block of node {i} is not positive definite"))
                })?;
                Some(chol.inverse())
            }
            _ => None,
        })
    }

    /// Applies `G_i` to `z_i` for scalar and block kinds.
    fn apply_local(&self, i: usize, xi: &DVector<f64>, zi: &DVector<f64>, prob: &ProblemInstance, degree: usize) -> Result<DVector<f64>> {
        match self {
            GOperator::Scalar { mu } => Ok(zi * *mu),
            GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree, constant } } => {
                let d = xi.len();
                let m = DMatrix::identity(d, d) * (per_degree * degree as f64 + constant) + prob.locals[i].hess(xi);
                let chol = Cholesky::new(m).ok_or_else(|| {
                    UppError::AssumptionViolation(format!("G block of node {i} is not positive definite"))
                })?;
                Ok(chol.solve(zi))
            }
            GOperator::BlockDiagonal { blocks } => Ok(&blocks[i] * zi),
            GOperator::Polynomial { .. } => unreachable!("polynomial G needs the network"),
        }
    }

    /// Explicit `G^k` as an `(N d) × (N d)` matrix at iterate `x`; used by
    /// diagnostics and tests.
    pub fn dense(&self, x: &Stacked, prob: &ProblemInstance, p: &MixingMatrix) -> Result<DMatrix<f64>> {
        let (n, d) = (x.nrows(), x.ncols());
        let mut g = DMatrix::zeros(n * d, n * d);
        match self {
            GOperator::Polynomial { op } => {
                let m = op.matrix(p.p());
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..d {
                            g[(i * d + k, j * d + k)] = m[(i, j)];
                        }
                    }
                }
            }
            GOperator::Scalar { mu } => g.fill_diagonal(*mu),
            _ => {
                for i in 0..n {
                    let b = self.block(i, &stacked::row(x, i), prob, p.degree(i))?.expect("block kind");
                    g.view_mut((i * d, i * d), (d, d)).copy_from(&b);
                }
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum InitRule {
    /// Random `x⁰` from the seed, `q⁰ = 0`.
    Mc { seed: u64 },
    /// `x⁰ = −G⁰ ∇f̃(0)`, `q⁰ = ρ D̃ x⁰`.
    Sc,
    Explicit { x0: Stacked, q0: Stacked },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UppConfig {
    pub rho: f64,
    pub theta: f64,
    pub d_spec: HPoly,
    pub dtilde_spec: HPoly,
    pub g_op: GOperator,
    pub init: InitRule,
    pub variant_name: String,
}

impl UppConfig {
    /// `c` with `D̃ = c D`, when the distributed engine can reuse `D̃ x⁺`.
    pub fn cache_ratio(&self) -> Option<f64> {
        self.dtilde_spec.ratio_to(&self.d_spec).filter(|c| *c != 0.0 && c.is_finite())
    }

    /// Rounds per iteration once the cache is warm.
    pub fn rounds_per_iteration(&self) -> usize {
        let d = if self.cache_ratio().is_some() { 0 } else { self.d_spec.rounds() };
        d + self.g_op.rounds() + self.dtilde_spec.rounds()
    }

    /// Rounds per iteration counting the decision and `z` broadcasts of the
    /// multi-loop algorithm as separate rounds.
    pub fn unmerged_rounds_per_iteration(&self) -> usize {
        if self.g_op.is_polynomial() {
            self.d_spec.rounds() + self.g_op.rounds() + self.dtilde_spec.rounds() + 2
        } else {
            self.rounds_per_iteration()
        }
    }

    /// Rounds spent by [`init_state`] in distributed mode.
    pub fn init_rounds(&self) -> u64 {
        let y = if self.cache_ratio().is_some() { self.dtilde_spec.rounds() } else { 0 };
        (match self.init {
            InitRule::Sc => self.g_op.rounds() + self.dtilde_spec.rounds(),
            _ => y,
        }) as u64
    }

    /// Checks `ρ, θ > 0`, `D`, `D̃` PSD with null space exactly the
    /// consensus subspace, and `G ≻ 0` where that is decidable up front.
    pub fn validate(&self, p: &MixingMatrix) -> Result<()> {
        if !(self.rho > 0.0) || !(self.theta > 0.0) {
            return Err(UppError::ConditionViolation(format!(
                "rho = {} and theta = {} must be positive",
                self.rho, self.theta
            )));
        }
        let eigs = p.spectrum().values;
        let lam1 = eigs.max().max(f64::MIN_POSITIVE);
        let single = p.n() == 1;
        for (name, poly) in [("D", &self.d_spec), ("D~", &self.dtilde_spec)] {
            if single {
                continue;
            }
            let vals: Vec<f64> = eigs.iter().map(|&l| poly.scalar(l)).collect();
            let top = vals.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for (&l, &v) in eigs.iter().zip(&vals) {
                let is_zero_eig = l.abs() <= 1e-9 * lam1;
                if is_zero_eig && v.abs() > 1e-10 * top.max(1.0) {
                    return Err(UppError::AssumptionViolation(format!("{name} does not annihilate consensus")));
                }
                if !is_zero_eig && v <= 1e-12 * top {
                    return Err(UppError::AssumptionViolation(format!(
                        "{name} must be positive off consensus (eigenvalue {v:.3e} at λ = {l:.3e})"
                    )));
                }
            }
        }
        match &self.g_op {
            GOperator::Polynomial { op } => {
                if let Some(v) = eigs.iter().map(|&l| op.scalar(l)).find(|v| *v <= 0.0) {
                    return Err(UppError::AssumptionViolation(format!("G not positive definite (eigenvalue {v:.3e})")));
                }
            }
            GOperator::Scalar { mu } if !(*mu > 0.0) => {
                return Err(UppError::AssumptionViolation(format!("scalar G = {mu} must be positive")));
            }
            GOperator::BlockDiagonal { blocks } => {
                if blocks.len() != p.n() {
                    return Err(UppError::DimensionMismatch { expected: p.n(), got: blocks.len() });
                }
                for (i, b) in blocks.iter().enumerate() {
                    if (b - b.transpose()).amax() > 1e-12 * b.amax().max(1.0) || Cholesky::new(b.clone()).is_none() {
                        return Err(UppError::AssumptionViolation(format!("G block {i} not symmetric positive definite")));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalState {
    pub x: Stacked,
    pub q: Stacked,
    /// `D̃ x` for the current `x`, when the config caches it.
    pub y: Option<Stacked>,
    pub iter: usize,
    /// Rounds spent by iterations, excluding initialization.
    pub rounds_used: u64,
    pub init_rounds: u64,
    /// Same count with the multi-loop broadcasts kept separate.
    pub unmerged_rounds: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    Reference,
    #[default]
    Distributed,
}

fn check_q0(q0: &Stacked) -> Result<()> {
    let s = stacked::block_sum(q0).norm();
    if s > 1e-10 * (1.0 + q0.norm()) {
        return Err(UppError::QNotInSPerp(s));
    }
    Ok(())
}

/// Initial state. Rounds spent computing `y⁰` go to `init_rounds`.
pub fn init_state(cfg: &UppConfig, prob: &ProblemInstance, p: &MixingMatrix, mode: EngineMode) -> Result<GlobalState> {
    let (n, d) = (prob.n_nodes(), prob.dim);
    if p.n() != n {
        return Err(UppError::DimensionMismatch { expected: n, got: p.n() });
    }
    cfg.validate(p)?;
    let mut net = Network::new(p);
    let apply = |poly: &HPoly, v: &Stacked, net: &mut Network<'_>| -> Result<Stacked> {
        match mode {
            EngineMode::Reference => poly.apply_dense(p.p(), v),
            EngineMode::Distributed => Ok(stacked::from_nodes(&poly.apply_net(&stacked::to_nodes(v), net)?)),
        }
    };
    let (x, q, y) = match &cfg.init {
        InitRule::Mc { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let x = Stacked::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            let y = match cfg.cache_ratio() {
                Some(_) => Some(apply(&cfg.dtilde_spec, &x, &mut net)?),
                None => None,
            };
            (x, Stacked::zeros(n, d), y)
        }
        InitRule::Sc => {
            let zero = Stacked::zeros(n, d);
            let g0 = prob.grad_stacked(&zero)?;
            let x = match &cfg.g_op {
                GOperator::Polynomial { op } => -apply(op, &g0, &mut net)?,
                g => {
                    let rows: Vec<DVector<f64>> = (0..n)
                        .map(|i| g.apply_local(i, &stacked::row(&zero, i), &stacked::row(&g0, i), prob, p.degree(i)).map(|v| -v))
                        .collect::<Result<_>>()?;
                    stacked::from_nodes(&rows)
                }
            };
            let y = apply(&cfg.dtilde_spec, &x, &mut net)?;
            let q = &y * cfg.rho;
            (x, q, cfg.cache_ratio().map(|_| y))
        }
        InitRule::Explicit { x0, q0 } => {
            if x0.nrows() != n || x0.ncols() != d || q0.shape() != x0.shape() {
                return Err(UppError::DimensionMismatch { expected: n * d, got: x0.len().min(q0.len()) });
            }
            check_q0(q0)?;
            let y = match cfg.cache_ratio() {
                Some(_) => Some(apply(&cfg.dtilde_spec, x0, &mut net)?),
                None => None,
            };
            (x0.clone(), q0.clone(), y)
        }
    };
    let init_rounds = match mode {
        EngineMode::Reference => cfg.init_rounds(),
        EngineMode::Distributed => net.rounds(),
    };
    Ok(GlobalState { x, q, y, iter: 0, rounds_used: 0, init_rounds, unmerged_rounds: 0 })
}

pub fn upp_step_reference(s: &GlobalState, cfg: &UppConfig, prob: &ProblemInstance, p: &MixingMatrix) -> Result<GlobalState> {
    let pm = p.p();
    let grad = prob.grad_stacked(&s.x)?;
    let dx = cfg.d_spec.apply_dense(pm, &s.x)?;
    let z = grad + &s.q * cfg.theta + dx * cfg.rho;
    let gz = match &cfg.g_op {
        GOperator::Polynomial { op } => op.apply_dense(pm, &z)?,
        g => {
            let rows: Vec<DVector<f64>> = (0..prob.n_nodes())
                .map(|i| g.apply_local(i, &stacked::row(&s.x, i), &stacked::row(&z, i), prob, p.degree(i)))
                .collect::<Result<_>>()?;
            stacked::from_nodes(&rows)
        }
    };
    let x = &s.x - gz;
    let y = cfg.dtilde_spec.apply_dense(pm, &x)?;
    let q = &s.q + &y * cfg.rho;
    Ok(GlobalState {
        x,
        q,
        y: cfg.cache_ratio().map(|_| y),
        iter: s.iter + 1,
        // No network here; charge what the distributed engine would spend.
        rounds_used: s.rounds_used + cfg.rounds_per_iteration() as u64,
        init_rounds: s.init_rounds,
        unmerged_rounds: s.unmerged_rounds + cfg.unmerged_rounds_per_iteration() as u64,
    })
}

pub fn upp_step_distributed(s: &GlobalState, cfg: &UppConfig, prob: &ProblemInstance, p: &MixingMatrix) -> Result<GlobalState> {
    let n = prob.n_nodes();
    let mut net = Network::new(p);
    // Node i owns x_i, q_i and (when cached) y_i.
    let x: Vec<DVector<f64>> = stacked::to_nodes(&s.x);
    let q: Vec<DVector<f64>> = stacked::to_nodes(&s.q);
    let dx: Vec<DVector<f64>> = match (cfg.cache_ratio(), &s.y) {
        (Some(c), Some(y)) => stacked::to_nodes(y).into_iter().map(|v| v / c).collect(),
        _ => cfg.d_spec.apply_net(&x, &mut net)?,
    };
    let z: Vec<DVector<f64>> = (0..n)
        .map(|i| Ok(prob.grad_node(i, &x[i])? + &q[i] * cfg.theta + &dx[i] * cfg.rho))
        .collect::<Result<_>>()?;
    let gz: Vec<DVector<f64>> = match &cfg.g_op {
        GOperator::Polynomial { op } => op.apply_net(&z, &mut net)?,
        g => (0..n)
            .map(|i| g.apply_local(i, &x[i], &z[i], prob, p.degree(i)))
            .collect::<Result<_>>()?,
    };
    let x_new: Vec<DVector<f64>> = x.iter().zip(&gz).map(|(xi, gi)| xi - gi).collect();
    let y_new = cfg.dtilde_spec.apply_net(&x_new, &mut net)?;
    let q_new: Vec<DVector<f64>> = q.iter().zip(&y_new).map(|(qi, yi)| qi + yi * cfg.rho).collect();
    let spent = net.rounds();
    let extra = if cfg.g_op.is_polynomial() {
        // Broadcasts of z and x⁺ counted separately, and D x recomputed.
        2 + if cfg.cache_ratio().is_some() { cfg.d_spec.rounds() as u64 } else { 0 }
    } else {
        0
    };
    Ok(GlobalState {
        x: stacked::from_nodes(&x_new),
        q: stacked::from_nodes(&q_new),
        y: cfg.cache_ratio().map(|_| stacked::from_nodes(&y_new)),
        iter: s.iter + 1,
        rounds_used: s.rounds_used + spent,
        init_rounds: s.init_rounds,
        unmerged_rounds: s.unmerged_rounds + spent + extra,
    })
}

pub fn step(s: &GlobalState, cfg: &UppConfig, prob: &ProblemInstance, p: &MixingMatrix, mode: EngineMode) -> Result<GlobalState> {
    match mode {
        EngineMode::Reference => upp_step_reference(s, cfg, prob, p),
        EngineMode::Distributed => upp_step_distributed(s, cfg, prob, p),
    }
}

/// Runs `iters` steps, calling `observe` on the initial state and after
/// every step. Returns the final state.
pub fn run(
    cfg: &UppConfig,
    prob: &ProblemInstance,
    p: &MixingMatrix,
    iters: usize,
    mode: EngineMode,
    mut observe: impl FnMut(&GlobalState) -> Result<()>,
) -> Result<GlobalState> {
    if iters == 0 {
        return Err(UppError::Config("iters must be at least 1".into()));
    }
    let mut s = init_state(cfg, prob, p, mode)?;
    observe(&s)?;
    for k in 0..iters {
        s = step(&s, cfg, prob, p, mode).map_err(|e| UppError::AtIteration { iter: k, source: Box::new(e) })?;
        observe(&s).map_err(|e| UppError::AtIteration { iter: k + 1, source: Box::new(e) })?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_logistic_instance, make_pl_quadratic_instance, LogisticSpec};
    use crate::topology::{build_mixing_matrix, build_topology, MixingScheme, TopologyKind};
    use proptest::prelude::*;

    fn ring(n: usize) -> MixingMatrix {
        build_mixing_matrix(&build_topology(&TopologyKind::Ring, n, 0).unwrap(), MixingScheme::MetropolisLaplacian, false).unwrap()
    }

    fn base_cfg(g_op: GOperator) -> UppConfig {
        UppConfig {
            rho: 0.7,
            theta: 1.3,
            d_spec: HPoly::h(),
            dtilde_spec: HPoly::h().scaled(0.5),
            g_op,
            init: InitRule::Mc { seed: 4 },
            variant_name: "test".into(),
        }
    }

    /// Row-major vectorization matching [`GOperator::dense`].
    fn vec_of(x: &Stacked) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.transpose().iter().cloned())
    }

    fn kron_i(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
        m.kronecker(&DMatrix::identity(d, d))
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        let p = ring(5);
        let mut cfg = base_cfg(GOperator::Scalar { mu: 0.1 });
        assert!(cfg.validate(&p).is_ok());
        cfg.rho = 0.0;
        assert!(matches!(cfg.validate(&p), Err(UppError::ConditionViolation(_))));
        cfg.rho = 1.0;
        cfg.theta = f64::NAN;
        assert!(cfg.validate(&p).is_err());
        cfg.theta = 1.0;
        cfg.d_spec = HPoly::h().shifted(0.1);
        assert!(matches!(cfg.validate(&p), Err(UppError::AssumptionViolation(_))));
        cfg.d_spec = HPoly::h().scaled(-1.0);
        assert!(cfg.validate(&p).is_err());
        cfg.d_spec = HPoly::h();
        cfg.g_op = GOperator::Scalar { mu: -1.0 };
        assert!(cfg.validate(&p).is_err());
        cfg.g_op = GOperator::zeta_eta(1.0, 1.0, HPoly::h());
        // 1 − λ_max < 0 on a Metropolis ring.
        assert!(p.spectrum().values.max() > 1.0);
        assert!(cfg.validate(&p).is_err());
        cfg.g_op = GOperator::BlockDiagonal { blocks: vec![DMatrix::identity(2, 2); 4] };
        assert!(matches!(cfg.validate(&p), Err(UppError::DimensionMismatch { .. })));
        let mut blocks = vec![DMatrix::identity(2, 2); 5];
        blocks[2][(0, 1)] = 0.5;
        cfg.g_op = GOperator::BlockDiagonal { blocks };
        assert!(cfg.validate(&p).is_err());
    }

    #[test]
    fn dual_start_must_sum_to_zero() {
        let p = ring(4);
        let prob = make_pl_quadratic_instance(4, 2, 0).unwrap();
        let mut cfg = base_cfg(GOperator::Scalar { mu: 0.05 });
        cfg.init = InitRule::Explicit { x0: Stacked::zeros(4, 2), q0: Stacked::from_element(4, 2, 1.0) };
        assert!(matches!(init_state(&cfg, &prob, &p, EngineMode::Reference), Err(UppError::QNotInSPerp(_))));
        cfg.init = InitRule::Explicit { x0: Stacked::zeros(4, 2), q0: stacked::project_disagreement(&Stacked::from_fn(4, 2, |i, j| (i + j) as f64)) };
        assert!(init_state(&cfg, &prob, &p, EngineMode::Reference).is_ok());
        cfg.init = InitRule::Explicit { x0: Stacked::zeros(3, 2), q0: Stacked::zeros(3, 2) };
        assert!(init_state(&cfg, &prob, &p, EngineMode::Reference).is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        let p = ring(4);
        let prob = make_pl_quadratic_instance(4, 2, 0).unwrap();
        let cfg = base_cfg(GOperator::Scalar { mu: 0.05 });
        assert!(run(&cfg, &prob, &p, 0, EngineMode::Distributed, |_| Ok(())).is_err());
    }

    #[test]
    fn one_step_matches_explicit_formula() {
        let p = ring(5);
        let d = 3;
        let prob = make_logistic_instance(&LogisticSpec { n: 5, d, m: 6, lambda: 0.2, mu: 1.0 }, 2).unwrap();
        let q0 = stacked::project_disagreement(&Stacked::from_fn(5, d, |i, j| ((i * 3 + j) % 4) as f64));
        let x0 = Stacked::from_fn(5, d, |i, j| (i as f64 * 0.7 - j as f64).sin());
        let l1 = p.spectrum().values.max();
        for g_op in [
            GOperator::zeta_eta(1.0 / l1, 0.5 / l1 / l1, HPoly::h()),
            GOperator::Scalar { mu: 0.2 },
            GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree: 1.0, constant: 0.5 } },
        ] {
            let mut cfg = base_cfg(g_op);
            cfg.init = InitRule::Explicit { x0: x0.clone(), q0: q0.clone() };
            let g = cfg.g_op.dense(&x0, &prob, &p).unwrap();
            let pd = kron_i(p.p(), d);
            let z = vec_of(&prob.grad_stacked(&x0).unwrap()) + vec_of(&q0) * cfg.theta + &pd * vec_of(&x0) * cfg.rho;
            let x1 = vec_of(&x0) - g * z;
            let q1 = vec_of(&q0) + &pd * &x1 * (0.5 * cfg.rho);
            for mode in [EngineMode::Reference, EngineMode::Distributed] {
                let s0 = init_state(&cfg, &prob, &p, mode).unwrap();
                let s1 = step(&s0, &cfg, &prob, &p, mode).unwrap();
                assert!((vec_of(&s1.x) - &x1).amax() < 1e-12, "{mode:?}");
                assert!((vec_of(&s1.q) - &q1).amax() < 1e-12, "{mode:?}");
                assert_eq!(s1.iter, 1);
            }
        }
    }

    #[test]
    fn sc_initialization() {
        let p = ring(6);
        let prob = make_pl_quadratic_instance(6, 2, 1).unwrap();
        let mut cfg = base_cfg(GOperator::Scalar { mu: 0.3 });
        cfg.init = InitRule::Sc;
        let s = init_state(&cfg, &prob, &p, EngineMode::Distributed).unwrap();
        let x0 = prob.grad_stacked(&Stacked::zeros(6, 2)).unwrap() * -0.3;
        assert!((&s.x - &x0).amax() < 1e-14);
        assert!((&s.q - p.p() * &x0 * 0.35).amax() < 1e-14);
        assert!(stacked::block_sum(&s.q).amax() < 1e-12);
        assert_eq!(s.init_rounds, 1);
        assert_eq!(cfg.init_rounds(), 1);
    }

    #[test]
    fn round_accounting() {
        let p = ring(6);
        let prob = make_pl_quadratic_instance(6, 2, 1).unwrap();
        let l1 = p.spectrum().values.max();
        let g3 = GOperator::zeta_eta(1.0 / l1, 0.1 / l1 / l1, HPoly::h().then(HPoly::h()));
        // D̃ = D/2: cached, so only G and D̃ mix.
        let cached = base_cfg(g3.clone());
        assert_eq!(cached.cache_ratio(), Some(0.5));
        assert_eq!(cached.rounds_per_iteration(), 3);
        assert_eq!(cached.unmerged_rounds_per_iteration(), 6);
        let mut uncached = base_cfg(g3);
        uncached.dtilde_spec = HPoly::h().then(HPoly::h());
        assert_eq!(uncached.cache_ratio(), None);
        assert_eq!(uncached.rounds_per_iteration(), 5);
        for cfg in [&cached, &uncached] {
            let mut last = None;
            run(cfg, &prob, &p, 7, EngineMode::Distributed, |s| {
                last = Some((s.rounds_used, s.unmerged_rounds, s.init_rounds));
                Ok(())
            })
            .unwrap();
            let (used, unmerged, init) = last.unwrap();
            assert_eq!(used, 7 * cfg.rounds_per_iteration() as u64);
            assert_eq!(unmerged, 7 * cfg.unmerged_rounds_per_iteration() as u64);
            assert_eq!(init, cfg.init_rounds());
        }
    }

    #[test]
    fn errors_carry_the_iteration() {
        let p = ring(4);
        let prob = make_pl_quadratic_instance(4, 2, 0).unwrap();
        let cfg = base_cfg(GOperator::Scalar { mu: 0.05 });
        let err = run(&cfg, &prob, &p, 5, EngineMode::Reference, |s| {
            if s.iter == 3 {
                Err(UppError::Config("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert!(matches!(err, UppError::AtIteration { iter: 3, .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reference_and_distributed_agree(
            n in 3usize..8,
            seed in 0u64..50,
            ratio in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0]),
            cached in any::<bool>(),
            kind in 0usize..3,
        ) {
            let p = ring(n);
            let prob = make_pl_quadratic_instance(n, 2, seed).unwrap();
            let l1 = p.spectrum().values.max();
            let m = prob.smoothness;
            let g_op = match kind {
                0 => GOperator::zeta_eta(0.5 / (m + l1), 0.2 / (m + l1) / l1, HPoly::h()),
                1 => GOperator::Scalar { mu: 0.2 / (m + l1) },
                _ => GOperator::BlockRule { rule: BlockRule::HessianShift { per_degree: 2.0, constant: 1.0 } },
            };
            let mut cfg = base_cfg(g_op);
            cfg.rho = 0.5;
            cfg.theta = 1.0;
            cfg.init = InitRule::Mc { seed };
            cfg.dtilde_spec = if cached { HPoly::h().scaled(ratio) } else { HPoly::h().then(HPoly::h()).scaled(ratio) };
            let mut a = init_state(&cfg, &prob, &p, EngineMode::Reference).unwrap();
            let mut b = init_state(&cfg, &prob, &p, EngineMode::Distributed).unwrap();
            prop_assert_eq!(a.init_rounds, b.init_rounds);
            for _ in 0..20 {
                a = step(&a, &cfg, &prob, &p, EngineMode::Reference).unwrap();
                b = step(&b, &cfg, &prob, &p, EngineMode::Distributed).unwrap();
                let scale = a.x.norm().max(1.0);
                prop_assert!((&a.x - &b.x).norm() <= 1e-10 * scale);
                prop_assert!((&a.q - &b.q).norm() <= 1e-10 * a.q.norm().max(1.0));
                prop_assert_eq!(a.rounds_used, b.rounds_used);
                prop_assert_eq!(a.unmerged_rounds, b.unmerged_rounds);
                // The dual stays in the disagreement subspace.
                prop_assert!(stacked::block_sum(&b.q).norm() <= 1e-9 * b.q.norm().max(1.0));
            }
        }
    }
}
