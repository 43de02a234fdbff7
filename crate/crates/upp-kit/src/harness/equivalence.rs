//! Runs each direct baseline next to its UPP configuration.

use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineMode, InitRule};
use crate::error::Result;
use crate::harness::baselines::{self, DirectBaseline};
use crate::problems::{make_pl_quadratic_instance, ProblemInstance};
use crate::stacked::Stacked;
use crate::topology::{build_mixing_matrix, build_topology, MixingMatrix, MixingScheme, TopologyKind};
use crate::variants::{make_specialization, SpecializationName, VariantParams};

pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEntry {
    pub name: String,
    pub iters: usize,
    pub max_rel_dev: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub entries: Vec<EquivalenceEntry>,
    pub pass: bool,
}

/// `max_k ‖a_k − b_k‖ / max(1, ‖b_k‖)`.
pub fn max_relative_deviation(a: &[Stacked], b: &[Stacked]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm() / y.norm().max(1.0))
        .fold(0.0, f64::max)
}

fn upp_trajectory(name: SpecializationName, params: &VariantParams, prob: &ProblemInstance, p: &MixingMatrix, iters: usize) -> Result<(Vec<Stacked>, Stacked, Stacked)> {
    let cfg = make_specialization(name, params, p)?;
    let (x0, q0) = match &cfg.init {
        InitRule::Explicit { x0, q0 } => (x0.clone(), q0.clone()),
        _ => unreachable!("specializations start from explicit states"),
    };
    let mut traj = Vec::with_capacity(iters + 1);
    engine::run(&cfg, prob, p, iters, EngineMode::Distributed, |s| {
        traj.push(s.x.clone());
        Ok(())
    })?;
    Ok((traj, x0, q0))
}

/// One baseline on one instance.
pub fn compare(which: DirectBaseline, prob: &ProblemInstance, p: &MixingMatrix, iters: usize, seed: u64) -> Result<EquivalenceEntry> {
    let m_bar = prob.smoothness;
    let l1 = p.spectrum().values.max();
    let base = VariantParams { m_bar: Some(m_bar), seed, dim: prob.dim, ..Default::default() };
    let (upp, direct) = match which {
        DirectBaseline::Extra => {
            let params = VariantParams { omega: Some(1.0 / l1), omega_tilde: Some(0.5 / l1), alpha: Some(0.5 / m_bar), ..base };
            let (t, x0, _) = upp_trajectory(SpecializationName::Extra, &params, prob, p, iters)?;
            (t, baselines::extra_direct(prob, p, 1.0 / l1, 0.5 / l1, 0.5 / m_bar, &x0, iters)?)
        }
        DirectBaseline::IdFbbs => {
            let mut params = VariantParams { omega: Some(0.5 / l1), alpha: Some(0.5 / m_bar), ..base };
            // A nonzero q⁰ in S^⊥ exercises the dual start.
            let q0 = {
                let x = Stacked::from_fn(p.n(), prob.dim, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
                p.p() * x
            };
            params.q0 = Some(q0.clone());
            let (t, x0, _) = upp_trajectory(SpecializationName::IdFbbs, &params, prob, p, iters)?;
            (t, baselines::idfbbs_direct(prob, p, 0.5 / l1, 0.5 / m_bar, &x0, &q0, iters)?)
        }
        DirectBaseline::DiGing => {
            let params = VariantParams { omega: Some(0.5 / l1), alpha: Some(0.2 / m_bar), ..base };
            let (t, x0, _) = upp_trajectory(SpecializationName::DiGing, &params, prob, p, iters)?;
            (t, baselines::diging_direct(prob, p, 0.5 / l1, 0.2 / m_bar, &x0, iters)?)
        }
        DirectBaseline::Dqm => {
            let params = VariantParams { c: Some(m_bar), ..base };
            let (t, x0, q0) = upp_trajectory(SpecializationName::Dqm, &params, prob, p, iters)?;
            (t, baselines::dqm_direct(prob, p.neighbors(), m_bar, &x0, &q0, iters)?)
        }
        DirectBaseline::ProxGpda => {
            let params = base.clone();
            let cfg = make_specialization(SpecializationName::ProxGpda, &params, p)?;
            let beta = cfg.rho;
            let (t, x0, _) = upp_trajectory(SpecializationName::ProxGpda, &params, prob, p, iters)?;
            (t, baselines::proxgpda_direct(prob, p.neighbors(), beta, &x0, iters)?)
        }
    };
    let dev = max_relative_deviation(&upp, &direct);
    Ok(EquivalenceEntry { name: which.name().to_string(), iters, max_rel_dev: dev, pass: dev <= EQUIVALENCE_TOL })
}

/// Every baseline on a 5-node ring with a quadratic instance, using the
/// unweighted Laplacian so DQM and Prox-GPDA apply, over 100 iterations.
pub fn equivalence_suite() -> Result<EquivalenceReport> {
    let g = build_topology(&TopologyKind::Ring, 5, 0)?;
    let p = build_mixing_matrix(&g, MixingScheme::UniformLaplacian, false)?;
    let prob = make_pl_quadratic_instance(5, 3, 11)?;
    let entries = DirectBaseline::ALL
        .into_iter()
        .map(|b| compare(b, &prob, &p, 100, 5))
        .collect::<Result<Vec<_>>>()?;
    let pass = entries.iter().all(|e| e.pass);
    Ok(EquivalenceReport { entries, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = equivalence_suite().unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.entries.len(), DirectBaseline::ALL.len());
    }

    #[test]
    fn deviation_detects_mismatch() {
        let a = vec![Stacked::from_element(2, 2, 1.0)];
        let b = vec![Stacked::from_element(2, 2, 1.5)];
        assert!((max_relative_deviation(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(max_relative_deviation(&a, &[]), f64::INFINITY);
    }

    #[test]
    fn wrong_parameters_break_equivalence() {
        // The baseline with a different step must not match the engine.
        let g = build_topology(&TopologyKind::Ring, 5, 0).unwrap();
        let p = build_mixing_matrix(&g, MixingScheme::UniformLaplacian, false).unwrap();
        let prob = make_pl_quadratic_instance(5, 3, 11).unwrap();
        let l1 = p.spectrum().values.max();
        let params = VariantParams { omega: Some(0.5 / l1), alpha: Some(0.2 / prob.smoothness), m_bar: Some(prob.smoothness), seed: 5, dim: 3, ..Default::default() };
        let (t, x0, _) = upp_trajectory(SpecializationName::DiGing, &params, &prob, &p, 20).unwrap();
        let off = baselines::diging_direct(&prob, &p, 0.5 / l1, 0.19 / prob.smoothness, &x0, 20).unwrap();
        assert!(max_relative_deviation(&t, &off) > 1e-6);
    }
}
