//! Directly coded versions of the specializations, written from each
//! algorithm's own update rule and sharing nothing with the engine beyond
//! gradient evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problems::ProblemInstance;
use crate::stacked::{self, Stacked};
use crate::topology::MixingMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectBaseline {
    Extra,
    Dqm,
    ProxGpda,
    IdFbbs,
    DiGing,
}

impl DirectBaseline {
    pub const ALL: [DirectBaseline; 5] =
        [DirectBaseline::Extra, DirectBaseline::Dqm, DirectBaseline::ProxGpda, DirectBaseline::IdFbbs, DirectBaseline::DiGing];

    pub fn name(self) -> &'static str {
        match self {
            DirectBaseline::Extra => "EXTRA_direct",
            DirectBaseline::Dqm => "DQM_direct",
            DirectBaseline::ProxGpda => "ProxGPDA_direct",
            DirectBaseline::IdFbbs => "IDFBBS_direct",
            DirectBaseline::DiGing => "DIGing_direct",
        }
    }
}

fn identity_minus(p: &MixingMatrix, omega: f64) -> DMatrix<f64> {
    let n = p.n();
    DMatrix::identity(n, n) - p.p() * omega
}

/// Two-step recursion shared by EXTRA and ID-FBBS:
/// `x^{k+2} = (I + W) x^{k+1} − W̃ x^k − α (∇f(x^{k+1}) − ∇f(x^k))`.
fn two_step(
    prob: &ProblemInstance,
    w: &DMatrix<f64>,
    wt: &DMatrix<f64>,
    alpha: f64,
    x0: &Stacked,
    x1: Stacked,
    iters: usize,
) -> Result<Vec<Stacked>> {
    let n = w.nrows();
    let i_plus_w = DMatrix::identity(n, n) + w;
    let mut traj = vec![x0.clone(), x1];
    let mut g_prev = prob.grad_stacked(x0)?;
    while traj.len() <= iters {
        let k = traj.len();
        let g = prob.grad_stacked(&traj[k - 1])?;
        let next = &i_plus_w * &traj[k - 1] - wt * &traj[k - 2] - (&g - &g_prev) * alpha;
        g_prev = g;
        traj.push(next);
    }
    traj.truncate(iters + 1);
    Ok(traj)
}

/// EXTRA with `W = I − ωP`, `W̃ = I − ω̃P`; `x¹ = W x⁰ − α ∇f(x⁰)`.
pub fn extra_direct(prob: &ProblemInstance, p: &MixingMatrix, omega: f64, omega_tilde: f64, alpha: f64, x0: &Stacked, iters: usize) -> Result<Vec<Stacked>> {
    let w = identity_minus(p, omega);
    let wt = identity_minus(p, omega_tilde);
    let x1 = &w * x0 - prob.grad_stacked(x0)? * alpha;
    two_step(prob, &w, &wt, alpha, x0, x1, iters)
}

/// ID-FBBS: `W̃ = I − ωP`, `W = 2W̃ − I`, `x¹ = W̃ x⁰ − α ∇f(x⁰) − α q⁰`.
pub fn idfbbs_direct(prob: &ProblemInstance, p: &MixingMatrix, omega: f64, alpha: f64, x0: &Stacked, q0: &Stacked, iters: usize) -> Result<Vec<Stacked>> {
    let n = p.n();
    let wt = identity_minus(p, omega);
    let w = &wt * 2.0 - DMatrix::identity(n, n);
    let x1 = &wt * x0 - prob.grad_stacked(x0)? * alpha - q0 * alpha;
    two_step(prob, &w, &wt, alpha, x0, x1, iters)
}

/// Gradient tracking: `x⁺ = W x − α y`, `y⁺ = W y + ∇f(x⁺) − ∇f(x)`,
/// `y⁰ = ∇f(x⁰)`, with `W = I − ωP`.
pub fn diging_direct(prob: &ProblemInstance, p: &MixingMatrix, omega: f64, alpha: f64, x0: &Stacked, iters: usize) -> Result<Vec<Stacked>> {
    let w = identity_minus(p, omega);
    let mut x = x0.clone();
    let mut g = prob.grad_stacked(&x)?;
    let mut y = g.clone();
    let mut traj = vec![x.clone()];
    for _ in 0..iters {
        let x_new = &w * &x - &y * alpha;
        let g_new = prob.grad_stacked(&x_new)?;
        y = &w * &y + &g_new - &g;
        x = x_new;
        g = g_new;
        traj.push(x.clone());
    }
    Ok(traj)
}

/// DQM, node by node:
/// `x_i⁺ = x_i − (2c|N_i| I + ∇²f_i(x_i))⁻¹ (c Σ_j (x_i − x_j) + ∇f_i(x_i) + q_i)`,
/// `q_i⁺ = q_i + c Σ_j (x_i⁺ − x_j⁺)`.
pub fn dqm_direct(prob: &ProblemInstance, neighbors: &[Vec<usize>], c: f64, x0: &Stacked, q0: &Stacked, iters: usize) -> Result<Vec<Stacked>> {
    let n = prob.n_nodes();
    let d = prob.dim;
    let mut x = stacked::to_nodes(x0);
    let mut q = stacked::to_nodes(q0);
    let diff_sum = |x: &[DVector<f64>], i: usize| -> DVector<f64> {
        neighbors[i].iter().fold(DVector::zeros(d), |acc, &j| acc + (&x[i] - &x[j]))
    };
    let mut traj = vec![x0.clone()];
    for _ in 0..iters {
        let mut x_new = Vec::with_capacity(n);
        for i in 0..n {
            let m = DMatrix::identity(d, d) * (2.0 * c * neighbors[i].len() as f64) + prob.locals[i].hess(&x[i]);
            let rhs = diff_sum(&x, i) * c + prob.grad_node(i, &x[i])? + &q[i];
            let step = m.lu().solve(&rhs).expect("DQM system is nonsingular");
            x_new.push(&x[i] - step);
        }
        for (i, qi) in q.iter_mut().enumerate() {
            *qi += diff_sum(&x_new, i) * c;
        }
        x = x_new;
        traj.push(stacked::from_nodes(&x));
    }
    Ok(traj)
}

/// Signed and unsigned incidence matrices, one row per edge.
pub fn incidence(neighbors: &[Vec<usize>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = neighbors.len();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| neighbors[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j))).collect();
    let mut a = DMatrix::zeros(edges.len(), n);
    let mut b = DMatrix::zeros(edges.len(), n);
    for (e, &(i, j)) in edges.iter().enumerate() {
        a[(e, i)] = 1.0;
        a[(e, j)] = -1.0;
        b[(e, i)] = 1.0;
        b[(e, j)] = 1.0;
    }
    (a, b)
}

/// Prox-GPDA with `A`, `B` the signed and unsigned incidence matrices:
/// `x⁺ = x − β(AᵀA + BᵀB)(∇f(x) + q + βAᵀA x)`, `q⁺ = q + βAᵀA x⁺`.
pub fn proxgpda_direct(prob: &ProblemInstance, neighbors: &[Vec<usize>], beta: f64, x0: &Stacked, iters: usize) -> Result<Vec<Stacked>> {
    let (a, b) = incidence(neighbors);
    let ata = a.transpose() * &a;
    let prox = &ata + b.transpose() * &b;
    let mut x = x0.clone();
    let mut q = Stacked::zeros(x0.nrows(), x0.ncols());
    let mut traj = vec![x.clone()];
    for _ in 0..iters {
        let z = prob.grad_stacked(&x)? + &q + &ata * &x * beta;
        x = &x - &prox * z * beta;
        q += &ata * &x * beta;
        traj.push(x.clone());
    }
    Ok(traj)
}
