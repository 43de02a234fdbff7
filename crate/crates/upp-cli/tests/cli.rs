use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "topology.kind = ring
topology.n = 6
problem.kind = pl_quadratic
problem.d = 2
algorithm.name = UPP_MC
run.iters = 10
";

fn upp(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_upp"));
    cmd.args(args).env_remove("UPP_SEED");
    if let Some(s) = env_seed {
        cmd.env("UPP_SEED", s);
    }
    cmd.output().expect("spawn upp")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_prints_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.conf", SMALL);
    let out = upp(&["run", spec.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# upp-kit trace v1"));
    assert_eq!(lines.next(), Some("iter,rounds,gap,w_hat,consensus_err,v_lyap,p_tilde,f_err"));
    assert_eq!(lines.count(), 11);

    let out = upp(&["run", spec.to_str().unwrap(), "--iters", "3"], None);
    assert_eq!(stdout(&out).lines().count(), 2 + 4);
}

#[test]
fn run_writes_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let meta = dir.path().join("m.json");
    let text = format!("{SMALL}output.trace = {}\noutput.meta = {}\n", trace.display(), meta.display());
    let spec = write(dir.path(), "s.conf", &text);
    let out = upp(&["run", spec.to_str().unwrap()], None);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("# upp-kit trace v1"));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
    assert_eq!(m["problem"]["nodes"], 6);

    let pd = upp(&["plotdata", trace.to_str().unwrap()], None);
    assert!(pd.status.success());
    let pd = stdout(&pd);
    assert!(pd.starts_with("series,x,gap\n"));
    assert_eq!(pd.lines().filter(|l| l.starts_with("iterations,")).count(), 11);
    assert_eq!(pd.lines().filter(|l| l.starts_with("rounds,")).count(), 11);
}

#[test]
fn usage_and_input_errors_exit_1() {
    assert_eq!(upp(&[], None).status.code(), Some(1));
    assert_eq!(upp(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(upp(&["run", "/definitely/not/here.conf"], None).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.conf", &format!("{SMALL}mystery.key = 1\n"));
    let out = upp(&["run", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery.key"));
    let spec = write(dir.path(), "s.conf", SMALL);
    assert_eq!(upp(&["run", spec.to_str().unwrap()], Some("abc")).status.code(), Some(1));
}

#[test]
fn invariant_violations_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = "topology.kind = ring\ntopology.n = 6\nproblem.kind = pl_quadratic\nproblem.d = 2\n\
        algorithm.name = UPP_SC\nalgorithm.tuning = manual\nalgorithm.mu = -1\nrun.iters = 5\n";
    let spec = write(dir.path(), "neg.conf", text);
    let out = upp(&["run", spec.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("positive"));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.conf", SMALL);
    let s = spec.to_str().unwrap();
    let a = stdout(&upp(&["run", s], Some("5")));
    let b = stdout(&upp(&["run", s], Some("5")));
    let c = stdout(&upp(&["run", s], Some("6")));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn equiv_passes() {
    let out = upp(&["equiv"], None);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains(" PASS ")), "{text}");
}

#[test]
fn tune_and_topo() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.conf", SMALL);
    let out = upp(&["tune", spec.to_str().unwrap()], None);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["tuned"]["Mc"]["rho"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config"]["variant_name"], "UPP_MC");

    let out = upp(&["topo", spec.to_str().unwrap()], None);
    assert!(out.status.success());
    let text = stdout(&out);
    // Metropolis ring of 6: P is a third of the Laplacian, eigenvalues (2 − 2cos(πk/3))/3.
    let kappa: f64 = text.lines().find(|l| l.starts_with("kappa ")).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    let want = (1.0 - (std::f64::consts::PI).cos()) / (1.0 - (std::f64::consts::PI / 3.0).cos());
    assert!((kappa - want).abs() < 1e-5, "{kappa} vs {want}");
}
