//! Experiment specs, the run loop and trace files.

use std::io::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diagnostics::{DiagnosticsRecord, PTildeParams, Recorder, RecorderOptions};
use crate::engine::{self, EngineMode, UppConfig};
use crate::error::{Result, UppError};
use crate::harness::config::FlatConfig;
use crate::mixing::{chebyshev_effective_spectrum, chebyshev_raw_spectrum, ChebyshevMode};
use crate::problems::{attach_reference_optimum, make_logistic_instance, make_pl_quadratic_instance, LogisticSpec, ProblemInstance};
use crate::topology::{build_mixing_matrix, build_topology, spectral_data, MixingMatrix, MixingScheme, SpectralData, TopologyKind, DEFAULT_SPECTRAL_TOL};
use crate::tuning::{self, GShape, McOptions, RhoRule};
use crate::variants::{make_specialization, make_variant, SpecializationName, Tuned, VariantName, VariantOptions, VariantParams};

pub const TRACE_HEADER: &str = "# upp-kit trace v1";
pub const TRACE_COLUMNS: [&str; 8] = ["iter", "rounds", "gap", "w_hat", "consensus_err", "v_lyap", "p_tilde", "f_err"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    pub seed: u64,
    pub scheme: MixingScheme,
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Logistic { d: usize, m: usize, lambda: f64, mu: f64, seed: u64 },
    PlQuadratic { d: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    Auto,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AlgorithmName {
    Variant { name: VariantName },
    Specialization { name: SpecializationName },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    pub tuning: TuningMode,
    /// `κ_G` for the multi-loop selection; 1 keeps `G` scalar.
    pub kappa_g: f64,
    pub eps_bar: f64,
    pub kappa_b: f64,
    pub rho_rule: RhoRule,
    pub tau: Option<usize>,
    pub mode: ChebyshevMode,
    pub seed: u64,
    /// Manual overrides, by parameter name.
    pub overrides: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    pub iters: usize,
    pub engine: EngineMode,
    pub trace_path: Option<PathBuf>,
    pub meta_path: Option<PathBuf>,
}

const MC_OVERRIDES: [&str; 6] = ["rho", "theta", "zeta", "eta", "dtilde_coeff", "lambda2_g"];
const SC_OVERRIDES: [&str; 2] = ["rho", "mu"];
const SPEC_OVERRIDES: [&str; 8] = ["alpha", "beta", "gamma", "c", "rho", "delta", "omega", "omega_tilde"];

fn parse_enum<T: for<'de> Deserialize<'de>>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| UppError::Config(format!("{key} = {v:?} is not recognized")))
}

impl ExperimentSpec {
    /// Reads a flat config. `seed_override` replaces every seed (the CLI
    /// passes `UPP_SEED` here).
    pub fn from_config(cfg: &FlatConfig, seed_override: Option<u64>) -> Result<Self> {
        let seed = |key: &str| -> Result<u64> {
            Ok(match seed_override {
                Some(s) => {
                    let _ = cfg.raw(key);
                    s
                }
                None => cfg.get_or(key, 0)?,
            })
        };
        let n: usize = cfg.require("topology.n")?;
        let kind = match cfg.raw("topology.kind").unwrap_or("ring") {
            "ring" => TopologyKind::Ring,
            "path" => TopologyKind::Path,
            "complete" => TopologyKind::Complete,
            "grid" => TopologyKind::Grid { rows: cfg.require("topology.rows")?, cols: cfg.require("topology.cols")? },
            "random_geometric" => TopologyKind::RandomGeometric { radius: cfg.require("topology.radius")? },
            "random_regular" => TopologyKind::RandomRegular { degree: cfg.require("topology.degree")? },
            other => return Err(UppError::Config(format!("unknown topology.kind {other:?}"))),
        };
        let scheme = match cfg.raw("topology.scheme") {
            None => MixingScheme::MetropolisLaplacian,
            Some(v) => parse_enum("topology.scheme", v)?,
        };
        let topology = TopologySpec { kind, n, seed: seed("topology.seed")?, scheme, normalize: cfg.get_or("topology.normalize", false)? };

        let problem = match cfg.raw("problem.kind").unwrap_or("logistic") {
            "logistic" => {
                let def = LogisticSpec::default();
                ProblemSpec::Logistic {
                    d: cfg.get_or("problem.d", def.d)?,
                    m: cfg.get_or("problem.m", def.m)?,
                    lambda: cfg.get_or("problem.lambda", def.lambda)?,
                    mu: cfg.get_or("problem.mu", def.mu)?,
                    seed: seed("problem.seed")?,
                }
            }
            "pl_quadratic" => ProblemSpec::PlQuadratic { d: cfg.get_or("problem.d", 5)?, seed: seed("problem.seed")? },
            other => return Err(UppError::Config(format!("unknown problem.kind {other:?}"))),
        };

        let name_raw = cfg.raw("algorithm.name").ok_or_else(|| UppError::Config("missing algorithm.name".into()))?;
        let name = match name_raw.parse::<VariantName>() {
            Ok(v) => AlgorithmName::Variant { name: v },
            Err(_) => AlgorithmName::Specialization { name: name_raw.parse()? },
        };
        let tuning = match cfg.raw("algorithm.tuning") {
            None => TuningMode::Auto,
            Some(v) => parse_enum("algorithm.tuning", v)?,
        };
        let rho_rule = match cfg.raw("algorithm.rho_rule") {
            None => RhoRule::default(),
            Some(v) => parse_enum("algorithm.rho_rule", v)?,
        };
        let mode = match cfg.raw("algorithm.mode") {
            None => ChebyshevMode::default(),
            Some(v) => parse_enum("algorithm.mode", v)?,
        };
        let default_kappa_g = match name {
            AlgorithmName::Variant { name: VariantName::UppMcCa } => 2.0,
            _ => 1.0,
        };
        let allowed: &[&str] = match name {
            AlgorithmName::Variant { name } if name.is_multi_loop() => &MC_OVERRIDES,
            AlgorithmName::Variant { .. } => &SC_OVERRIDES,
            AlgorithmName::Specialization { .. } => &SPEC_OVERRIDES,
        };
        let mut overrides = Vec::new();
        for key in allowed {
            if let Some(v) = cfg.get::<f64>(&format!("algorithm.{key}"))? {
                overrides.push((key.to_string(), v));
            }
        }
        let mut algorithm = AlgorithmSpec {
            name,
            tuning,
            kappa_g: cfg.get_or("algorithm.kappa_g", default_kappa_g)?,
            eps_bar: cfg.get_or("algorithm.eps_bar", 0.5)?,
            kappa_b: cfg.get_or("algorithm.kappa_b", 1.0)?,
            rho_rule,
            tau: cfg.get("algorithm.tau")?,
            mode,
            seed: seed("algorithm.seed")?,
            overrides,
        };
        let stray = cfg.unread_with_prefix("algorithm.");
        if !stray.is_empty() {
            return Err(UppError::Config(format!("keys not valid for {}: {}", name_raw, stray.join(", "))));
        }
        if matches!(algorithm.name, AlgorithmName::Variant { .. }) && algorithm.tuning == TuningMode::Auto && !algorithm.overrides.is_empty() {
            return Err(UppError::Config("overrides need algorithm.tuning = manual".into()));
        }
        if matches!(algorithm.name, AlgorithmName::Specialization { .. }) {
            algorithm.tuning = TuningMode::Manual;
        }
        let spec = ExperimentSpec {
            topology,
            problem,
            algorithm,
            iters: cfg.get_or("run.iters", 100)?,
            engine: match cfg.raw("run.engine") {
                None => EngineMode::Distributed,
                Some(v) => parse_enum("run.engine", v)?,
            },
            trace_path: cfg.get::<String>("output.trace")?.map(PathBuf::from),
            meta_path: cfg.get::<String>("output.meta")?.map(PathBuf::from),
        };
        cfg.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(UppError::Config("run.iters must be at least 1".into()));
        }
        if self.topology.n == 0 {
            return Err(UppError::Config("topology.n must be positive".into()));
        }
        Ok(())
    }
}

/// Graph, mixing matrix and instance for a spec. The instance carries a
/// reference `f*`.
pub fn build_setup(spec: &ExperimentSpec) -> Result<(MixingMatrix, ProblemInstance)> {
    let t = &spec.topology;
    let g = build_topology(&t.kind, t.n, t.seed)?;
    let p = build_mixing_matrix(&g, t.scheme, t.normalize)?;
    let mut prob = match &spec.problem {
        ProblemSpec::Logistic { d, m, lambda, mu, seed } => {
            make_logistic_instance(&LogisticSpec { n: t.n, d: *d, m: *m, lambda: *lambda, mu: *mu }, *seed)?
        }
        ProblemSpec::PlQuadratic { d, seed } => make_pl_quadratic_instance(t.n, *d, *seed)?,
    };
    attach_reference_optimum(&mut prob, 1e-9, 20_000);
    Ok((p, prob))
}

/// Everything tuning produced, for the metadata.
#[derive(Clone, Debug, Serialize)]
pub struct Prepared {
    pub config: UppConfig,
    pub tuned: Option<Tuned>,
    pub spectral: SpectralData,
    pub recorder: RecorderOptions,
}

fn apply_override(target: &mut f64, key: &str, overrides: &[(String, f64)]) {
    if let Some((_, v)) = overrides.iter().find(|(k, _)| k == key) {
        *target = *v;
    }
}

fn override_opt(key: &str, overrides: &[(String, f64)]) -> Option<f64> {
    overrides.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

/// Tunes (or takes overrides) and builds the configuration.
pub fn prepare(spec: &ExperimentSpec, p: &MixingMatrix, prob: &ProblemInstance) -> Result<Prepared> {
    let a = &spec.algorithm;
    let spectral = spectral_data(p, DEFAULT_SPECTRAL_TOL)?;
    let tau = a.tau.unwrap_or_else(|| spectral.chebyshev_depth());
    let m_bar = prob.smoothness;
    let vopts = VariantOptions { tau: Some(tau), mode: a.mode, seed: a.seed, mc_gpoly: None };
    match &a.name {
        AlgorithmName::Variant { name } => {
            let tuned = if name.is_multi_loop() {
                let gpoly_spec = match name {
                    VariantName::UppMcCa => chebyshev_raw_spectrum(p, tau, a.mode)?,
                    _ => spectral,
                };
                let shape = if a.kappa_g > 1.0 { GShape::Polynomial { kappa_g: a.kappa_g } } else { GShape::Scalar };
                let mut t = tuning::select_upp_mc(m_bar, &spectral, &gpoly_spec, &McOptions { eps_bar: a.eps_bar, g_shape: shape })?;
                for key in MC_OVERRIDES {
                    let field = match key {
                        "rho" => &mut t.rho,
                        "theta" => &mut t.theta,
                        "zeta" => &mut t.zeta,
                        "eta" => &mut t.eta,
                        "dtilde_coeff" => &mut t.dtilde_coeff,
                        _ => &mut t.lambda2_g,
                    };
                    apply_override(field, key, &a.overrides);
                }
                Tuned::Mc(t)
            } else {
                let mut t = match name {
                    VariantName::UppSc => tuning::select_upp_sc(m_bar, &spectral, a.kappa_b, a.rho_rule)?,
                    _ => {
                        let eff = chebyshev_effective_spectrum(p, tau, a.mode)?;
                        tuning::select_upp_sc_opt(m_bar, &eff, spectral.kappa, a.rho_rule)?
                    }
                };
                t.tau = Some(tau);
                apply_override(&mut t.rho, "rho", &a.overrides);
                if let Some(mu) = override_opt("mu", &a.overrides) {
                    t.mu = Some(mu);
                }
                Tuned::Sc(t)
            };
            let config = make_variant(*name, &tuned, p, &vopts)?;
            let recorder = match &tuned {
                Tuned::Mc(t) => RecorderOptions { lyapunov: Some((t.theta, t.eps_bar)), p_tilde: None },
                Tuned::Sc(t) => RecorderOptions {
                    lyapunov: None,
                    p_tilde: Some(PTildeParams { c_tilde: t.c_tilde, kappa_tilde: t.kappa_tilde, m_bar }),
                },
            };
            Ok(Prepared { config, tuned: Some(tuned), spectral, recorder })
        }
        AlgorithmName::Specialization { name } => {
            let o = |k: &str| override_opt(k, &a.overrides);
            let params = VariantParams {
                alpha: o("alpha"),
                beta: o("beta"),
                gamma: o("gamma"),
                c: o("c"),
                rho: o("rho"),
                delta: o("delta"),
                omega: o("omega"),
                omega_tilde: o("omega_tilde"),
                m_bar: Some(m_bar),
                seed: a.seed,
                dim: prob.dim,
                ..Default::default()
            };
            let config = make_specialization(*name, &params, p)?;
            Ok(Prepared { config, tuned: None, spectral, recorder: RecorderOptions::default() })
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub csv: String,
    pub metadata: serde_json::Value,
}

/// Runs a spec end to end. Files are written when the spec names them.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let (p, prob) = build_setup(spec)?;
    let prep = prepare(spec, &p, &prob)?;
    let mut rec = Recorder::new(&prep.config, &prob, &p, prep.recorder.clone());
    let last = engine::run(&prep.config, &prob, &p, spec.iters, spec.engine, |s| rec.observe(s))?;
    let records = rec.records;
    let csv = trace_to_csv(&records)?;
    let metadata = json!({
        "format": TRACE_HEADER.trim_start_matches("# "),
        "spec": spec,
        "spectral": prep.spectral,
        "tuned": prep.tuned,
        "config": prep.config,
        "rounds": {
            "per_iteration": prep.config.rounds_per_iteration(),
            "per_iteration_unmerged": prep.config.unmerged_rounds_per_iteration(),
            "init": last.init_rounds,
            "total": last.init_rounds + last.rounds_used,
        },
        "problem": {
            "nodes": prob.n_nodes(),
            "dim": prob.dim,
            "m_bar": prob.smoothness,
            "f_star": prob.f_star,
            "f_star_is_global": prob.f_star_is_global,
            "pl_constant": prob.pl_constant,
        },
    });
    if let Some(path) = &spec.trace_path {
        std::fs::write(path, &csv)?;
    }
    if let Some(path) = &spec.meta_path {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &metadata)?;
        f.write_all(b"\n")?;
    }
    Ok(ExperimentOutput { records, csv, metadata })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn trace_to_csv(records: &[DiagnosticsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_COLUMNS)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.rounds.to_string(),
            r.gap.to_string(),
            r.w_hat.to_string(),
            r.consensus_err.to_string(),
            cell(r.v_lyap),
            cell(r.p_tilde),
            cell(r.f_err),
        ])?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| UppError::Parse(e.to_string()))?)
        .map_err(|e| UppError::Parse(e.to_string()))?;
    Ok(format!("{TRACE_HEADER}\n{body}"))
}

pub fn trace_from_csv(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let body = text
        .strip_prefix(TRACE_HEADER)
        .ok_or_else(|| UppError::Parse(format!("trace must start with {TRACE_HEADER:?}")))?
        .trim_start_matches(['\r', '\n']);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_COLUMNS {
        return Err(UppError::Parse(format!("unexpected columns {header:?}")));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| UppError::Parse(format!("bad number {s:?}"))) };
    let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    r.records()
        .map(|row| {
            let row = row?;
            Ok(DiagnosticsRecord {
                iter: row[0].parse().map_err(|_| UppError::Parse(format!("bad iter {:?}", &row[0])))?,
                rounds: row[1].parse().map_err(|_| UppError::Parse(format!("bad rounds {:?}", &row[1])))?,
                gap: num(&row[2])?,
                w_hat: num(&row[3])?,
                consensus_err: num(&row[4])?,
                v_lyap: opt(&row[5])?,
                p_tilde: opt(&row[6])?,
                f_err: opt(&row[7])?,
            })
        })
        .collect()
}

/// Gap against iterations and against rounds, as one long-format CSV with
/// columns `series,x,gap`.
pub fn plotdata(trace: &str) -> Result<String> {
    let recs = trace_from_csv(trace)?;
    let mut out = String::from("series,x,gap\n");
    for r in &recs {
        out.push_str(&format!("iterations,{},{}\n", r.iter, r.gap));
    }
    for r in &recs {
        out.push_str(&format!("rounds,{},{}\n", r.rounds, r.gap));
    }
    Ok(out)
}
