use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use upp_kit::harness::experiment::{build_setup, prepare, run_experiment};
use upp_kit::harness::{equivalence_suite, plotdata, ExperimentSpec, FlatConfig};
use upp_kit::mixing::chebyshev_effective_spectrum;
use upp_kit::topology::{spectral_data, DEFAULT_SPECTRAL_TOL};
use upp_kit::UppError;

#[derive(Parser)]
#[command(name = "upp", version, about = "Run and inspect distributed optimization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment spec; prints the trace unless output.trace is set.
    Run {
        spec: PathBuf,
        /// Override the iteration count.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Check every specialization against its directly coded baseline.
    Equiv,
    /// Print the tuned parameters for a spec as JSON.
    Tune { spec: PathBuf },
    /// Print spectral data of the spec's mixing matrix.
    Topo { spec: PathBuf },
    /// Turn a trace into gap-vs-iterations and gap-vs-rounds series.
    Plotdata { trace: PathBuf },
}

fn load_spec(path: &PathBuf) -> anyhow::Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = FlatConfig::parse(&text)?;
    let seed = match std::env::var("UPP_SEED") {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| UppError::Config(format!("UPP_SEED = {v:?} is not an integer")))?),
        Err(_) => None,
    };
    Ok(ExperimentSpec::from_config(&cfg, seed)?)
}

fn execute(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Run { spec, iters } => {
            let mut spec = load_spec(&spec)?;
            if let Some(n) = iters {
                spec.iters = n;
            }
            let out = run_experiment(&spec)?;
            if spec.trace_path.is_none() {
                print!("{}", out.csv);
            }
            if let Some(last) = out.records.last() {
                eprintln!("iter {} rounds {} gap {:.6e}", last.iter, last.rounds, last.gap);
            }
        }
        Cmd::Equiv => {
            let report = equivalence_suite()?;
            for e in &report.entries {
                println!("{:<16} {} max_rel_dev={:.3e} over {} iterations", e.name, if e.pass { "PASS" } else { "FAIL" }, e.max_rel_dev, e.iters);
            }
            if !report.pass {
                return Err(UppError::AssumptionViolation("equivalence suite failed".into()).into());
            }
        }
        Cmd::Tune { spec } => {
            let spec = load_spec(&spec)?;
            let (p, prob) = build_setup(&spec)?;
            let prep = prepare(&spec, &p, &prob)?;
            let out = serde_json::json!({ "tuned": prep.tuned, "config": prep.config, "spectral": prep.spectral });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Topo { spec } => {
            let spec = load_spec(&spec)?;
            let (p, _) = build_setup(&spec)?;
            let sd = spectral_data(&p, DEFAULT_SPECTRAL_TOL)?;
            let tau = spec.algorithm.tau.unwrap_or_else(|| sd.chebyshev_depth());
            let eff = chebyshev_effective_spectrum(&p, tau, spec.algorithm.mode)?;
            println!("topology      {} (n = {})", spec.topology.kind, spec.topology.n);
            println!("lambda_1      {:.6e}", sd.lambda_1);
            println!("lambda_(N-1)  {:.6e}", sd.lambda_nm1);
            println!("kappa         {:.6}", sd.kappa);
            println!("tau           {tau}");
            println!("kappa_L       {:.6}", eff.kappa);
        }
        Cmd::Plotdata { trace } => {
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            print!("{}", plotdata(&text)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invariant = e.chain().any(|c| c.downcast_ref::<UppError>().is_some_and(UppError::is_invariant_violation));
            ExitCode::from(if invariant { 2 } else { 1 })
        }
    }
}
