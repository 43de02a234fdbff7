//! Local objectives `f_i`, benchmark instances and a centralized solver.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UppError};
use crate::stacked::{self, Stacked};

#[derive(Clone, Debug, PartialEq)]
pub enum LocalObjective {
    /// `(1/m) Σ_s log(1 + exp(−y_s z_sᵀx)) + Σ_t λμ x_t² / (1 + μ x_t²)`.
    LogisticNonconvex {
        z: DMatrix<f64>,
        y: DVector<f64>,
        lambda: f64,
        mu: f64,
    },
    /// `½ ‖A x − b‖²`.
    Quadratic { a: DMatrix<f64>, b: DVector<f64> },
}

/// `log(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        match self {
            LocalObjective::LogisticNonconvex { z, .. } => z.ncols(),
            LocalObjective::Quadratic { a, .. } => a.ncols(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LocalObjective::LogisticNonconvex { .. } => "logistic_nonconvex",
            LocalObjective::Quadratic { .. } => "quadratic",
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            LocalObjective::LogisticNonconvex { z, y, lambda, mu } => {
                let margins = z * x;
                let m = z.nrows() as f64;
                let loss: f64 = margins.iter().zip(y.iter()).map(|(t, yy)| softplus(-yy * t)).sum::<f64>() / m;
                let reg: f64 = x.iter().map(|t| lambda * mu * t * t / (1.0 + mu * t * t)).sum();
                loss + reg
            }
            LocalObjective::Quadratic { a, b } => 0.5 * (a * x - b).norm_squared(),
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LocalObjective::LogisticNonconvex { z, y, lambda, mu } => {
                let margins = z * x;
                let m = z.nrows() as f64;
                let w = DVector::from_iterator(
                    y.len(),
                    margins.iter().zip(y.iter()).map(|(t, yy)| -yy * sigmoid(-yy * t) / m),
                );
                let mut g = z.transpose() * w;
                for (gt, t) in g.iter_mut().zip(x.iter()) {
                    let s = 1.0 + mu * t * t;
                    *gt += 2.0 * lambda * mu * t / (s * s);
                }
                g
            }
            LocalObjective::Quadratic { a, b } => a.transpose() * (a * x - b),
        }
    }

    pub fn hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            LocalObjective::LogisticNonconvex { z, y, lambda, mu } => {
                let margins = z * x;
                let m = z.nrows() as f64;
                let mut weighted = z.clone();
                for (s, (t, yy)) in margins.iter().zip(y.iter()).enumerate() {
                    let sg = sigmoid(yy * t);
                    weighted.row_mut(s).scale_mut(sg * (1.0 - sg) / m);
                }
                let mut h = z.transpose() * weighted;
                for (k, t) in x.iter().enumerate() {
                    let s = 1.0 + mu * t * t;
                    h[(k, k)] += 2.0 * lambda * mu * (1.0 - 3.0 * mu * t * t) / (s * s * s);
                }
                h
            }
            LocalObjective::Quadratic { a, .. } => a.transpose() * a,
        }
    }

    /// Per-block smoothness bound.
    pub fn smoothness(&self) -> f64 {
        match self {
            LocalObjective::LogisticNonconvex { z, lambda, mu, .. } => {
                let m = z.nrows() as f64;
                lambda_max(&(z.transpose() * z)) / (4.0 * m) + 2.0 * lambda * mu
            }
            LocalObjective::Quadratic { a, .. } => lambda_max(&(a.transpose() * a)),
        }
    }
}

fn lambda_max(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.max()
}

fn lambda_min(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub locals: Vec<LocalObjective>,
    pub dim: usize,
    /// M̄ for the stacked `f̃`.
    pub smoothness: f64,
    pub f_star: Option<f64>,
    pub x_star: Option<DVector<f64>>,
    /// ν when the instance satisfies the P-Ł inequality.
    pub pl_constant: Option<f64>,
    /// False when `f_star` is only a stationary value.
    pub f_star_is_global: bool,
}

impl ProblemInstance {
    pub fn new(locals: Vec<LocalObjective>) -> Result<Self> {
        let dim = locals
            .first()
            .map(LocalObjective::dim)
            .ok_or_else(|| UppError::Config("instance needs at least one node".into()))?;
        if let Some(bad) = locals.iter().find(|l| l.dim() != dim) {
            return Err(UppError::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        let smoothness = locals.iter().map(LocalObjective::smoothness).fold(0.0, f64::max);
        Ok(ProblemInstance {
            locals,
            dim,
            smoothness,
            f_star: None,
            x_star: None,
            pl_constant: None,
            f_star_is_global: false,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.locals.len()
    }

    /// `∇f̃(x)`, row `i` is `∇f_i(x_i)`.
    pub fn grad_stacked(&self, x: &Stacked) -> Result<Stacked> {
        self.check(x)?;
        let mut g = Stacked::zeros(x.nrows(), x.ncols());
        for (i, f) in self.locals.iter().enumerate() {
            let gi = f.grad(&stacked::row(x, i));
            if gi.iter().any(|v| !v.is_finite()) {
                return Err(UppError::NonFiniteGradient { node: i });
            }
            stacked::set_row(&mut g, i, &gi);
        }
        Ok(g)
    }

    pub fn grad_node(&self, i: usize, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.locals[i].grad(xi);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(UppError::NonFiniteGradient { node: i });
        }
        Ok(g)
    }

    /// `f̃(x) = Σ f_i(x_i)`.
    pub fn value_stacked(&self, x: &Stacked) -> f64 {
        self.locals.iter().enumerate().map(|(i, f)| f.value(&stacked::row(x, i))).sum()
    }

    /// `f(v) = Σ f_i(v)`.
    pub fn value(&self, v: &DVector<f64>) -> f64 {
        self.locals.iter().map(|f| f.value(v)).sum()
    }

    pub fn grad_sum(&self, v: &DVector<f64>) -> DVector<f64> {
        self.locals.iter().fold(DVector::zeros(self.dim), |acc, f| acc + f.grad(v))
    }

    /// `∇f̃` evaluated at `1 ⊗ v`.
    pub fn grad_at_consensus(&self, v: &DVector<f64>) -> Result<Stacked> {
        self.grad_stacked(&stacked::consensus(self.n_nodes(), v))
    }

    fn check(&self, x: &Stacked) -> Result<()> {
        if x.nrows() != self.n_nodes() {
            return Err(UppError::DimensionMismatch { expected: self.n_nodes(), got: x.nrows() });
        }
        if x.ncols() != self.dim {
            return Err(UppError::DimensionMismatch { expected: self.dim, got: x.ncols() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        LogisticSpec { n: 50, d: 10, m: 200, lambda: 0.001, mu: 1.0 }
    }
}

/// Standard normal features and uniform ±1 labels. `f_star` is left empty;
/// use [`centralized_solve`] for a stationary reference.
pub fn make_logistic_instance(spec: &LogisticSpec, seed: u64) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locals = (0..spec.n)
        .map(|_| {
            let z = DMatrix::from_fn(spec.m, spec.d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(spec.m, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
            LocalObjective::LogisticNonconvex { z, y, lambda: spec.lambda, mu: spec.mu }
        })
        .collect();
    ProblemInstance::new(locals)
}

/// `f_i = ½‖A_i x − b_i‖²` with `Σ A_iᵀA_i ≻ 0`.
pub fn make_pl_quadratic_instance(n: usize, d: usize, seed: u64) -> Result<ProblemInstance> {
    let rows = (2 * d).div_ceil(n).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let locals: Vec<LocalObjective> = (0..n)
            .map(|_| LocalObjective::Quadratic {
                a: DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal)),
                b: DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal)),
            })
            .collect();
        let (m, rhs) = normal_equations(&locals, d);
        let nu = lambda_min(&m);
        if nu <= 1e-8 * lambda_max(&m) {
            continue;
        }
        let x_star = Cholesky::new(m)
            .ok_or_else(|| UppError::InfeasibleSpectrum("normal equations not PD".into()))?
            .solve(&rhs);
        let mut inst = ProblemInstance::new(locals)?;
        inst.f_star = Some(inst.value(&x_star));
        inst.x_star = Some(x_star);
        inst.pl_constant = Some(nu);
        inst.f_star_is_global = true;
        return Ok(inst);
    }
    Err(UppError::GenerationExhausted(100))
}

/// `(Σ A_iᵀA_i, Σ A_iᵀb_i)` over quadratic locals.
pub fn normal_equations(locals: &[LocalObjective], d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut m = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for l in locals {
        if let LocalObjective::Quadratic { a, b } = l {
            m += a.transpose() * a;
            rhs += a.transpose() * b;
        }
    }
    (m, rhs)
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub f_star: f64,
    pub x_star: DVector<f64>,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Gradient descent on `f = Σ f_i` with step `1/(N M̄)`, which is `1/M̄`
/// on the average objective. Returns the best point seen.
pub fn centralized_solve(inst: &ProblemInstance, tol: f64, max_iters: usize) -> SolveResult {
    let n = inst.n_nodes() as f64;
    let step = if inst.smoothness > 0.0 { 1.0 / (n * inst.smoothness) } else { 0.0 };
    let mut x = DVector::zeros(inst.dim);
    let mut best = (inst.value(&x), x.clone(), f64::INFINITY);
    for k in 0..=max_iters {
        let g = inst.grad_sum(&x);
        let gn = g.norm();
        let fx = inst.value(&x);
        if fx <= best.0 || gn < best.2 {
            best = (fx, x.clone(), gn);
        }
        if gn <= tol {
            return SolveResult { f_star: fx, x_star: x, grad_norm: gn, iters: k, converged: true };
        }
        if step == 0.0 {
            break;
        }
        x -= g * step;
    }
    SolveResult { f_star: best.0, x_star: best.1, grad_norm: best.2, iters: max_iters, converged: false }
}

/// Attaches a stationary reference from [`centralized_solve`] when the
/// instance has no known optimum.
pub fn attach_reference_optimum(inst: &mut ProblemInstance, tol: f64, max_iters: usize) -> SolveResult {
    let res = centralized_solve(inst, tol, max_iters);
    if inst.f_star.is_none() {
        inst.f_star = Some(res.f_star);
        inst.x_star = Some(res.x_star.clone());
        inst.f_star_is_global = false;
    }
    res
}

const TEXT_MAGIC: &str = "upp-instance v1";

/// Whitespace-separated text: a header, then each local's dimensions and
/// numbers in row-major order.
pub fn instance_to_text(inst: &ProblemInstance) -> String {
    let mut s = format!("{TEXT_MAGIC}\nnodes {} dim {}\n", inst.n_nodes(), inst.dim);
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
    s.push_str(&format!("f_star {} pl {}\n", opt(inst.f_star), opt(inst.pl_constant)));
    let push_nums = |s: &mut String, it: &mut dyn Iterator<Item = f64>| {
        let line: Vec<String> = it.map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    };
    for l in &inst.locals {
        match l {
            LocalObjective::LogisticNonconvex { z, y, lambda, mu } => {
                s.push_str(&format!("local logistic rows {} lambda {lambda:e} mu {mu:e}\n", z.nrows()));
                push_nums(&mut s, &mut z.transpose().iter().cloned());
                push_nums(&mut s, &mut y.iter().cloned());
            }
            LocalObjective::Quadratic { a, b } => {
                s.push_str(&format!("local quadratic rows {}\n", a.nrows()));
                push_nums(&mut s, &mut a.transpose().iter().cloned());
                push_nums(&mut s, &mut b.iter().cloned());
            }
        }
    }
    s
}

pub fn instance_from_text(text: &str) -> Result<ProblemInstance> {
    if text.lines().next().map(str::trim) != Some(TEXT_MAGIC) {
        return Err(UppError::Parse("missing instance header".into()));
    }
    let toks: Vec<&str> = text.lines().skip(1).flat_map(str::split_whitespace).collect();
    let mut pos = 0usize;
    let mut next = || -> Result<&str> {
        let t = toks.get(pos).copied().ok_or_else(|| UppError::Parse("unexpected end".into()));
        pos += 1;
        t
    };
    fn num<T: std::str::FromStr>(t: &str) -> Result<T> {
        t.parse::<T>().map_err(|_| UppError::Parse(format!("bad number `{t}`")))
    }
    fn keyword(t: &str, word: &str) -> Result<()> {
        if t == word {
            Ok(())
        } else {
            Err(UppError::Parse(format!("expected `{word}`, found `{t}`")))
        }
    }
    keyword(next()?, "nodes")?;
    let n: usize = num(next()?)?;
    keyword(next()?, "dim")?;
    let d: usize = num(next()?)?;
    keyword(next()?, "f_star")?;
    let f_star = match next()? {
        "none" => None,
        t => Some(num::<f64>(t)?),
    };
    keyword(next()?, "pl")?;
    let pl = match next()? {
        "none" => None,
        t => Some(num::<f64>(t)?),
    };
    let mut locals = Vec::with_capacity(n);
    for _ in 0..n {
        keyword(next()?, "local")?;
        let kind = next()?.to_string();
        keyword(next()?, "rows")?;
        let rows: usize = num(next()?)?;
        match kind.as_str() {
            "logistic" => {
                keyword(next()?, "lambda")?;
                let lambda: f64 = num(next()?)?;
                keyword(next()?, "mu")?;
                let mu: f64 = num(next()?)?;
                let zv: Vec<f64> = (0..rows * d).map(|_| next().and_then(num)).collect::<Result<_>>()?;
                let yv: Vec<f64> = (0..rows).map(|_| next().and_then(num)).collect::<Result<_>>()?;
                locals.push(LocalObjective::LogisticNonconvex {
                    z: DMatrix::from_row_slice(rows, d, &zv),
                    y: DVector::from_vec(yv),
                    lambda,
                    mu,
                });
            }
            "quadratic" => {
                let av: Vec<f64> = (0..rows * d).map(|_| next().and_then(num)).collect::<Result<_>>()?;
                let bv: Vec<f64> = (0..rows).map(|_| next().and_then(num)).collect::<Result<_>>()?;
                locals.push(LocalObjective::Quadratic {
                    a: DMatrix::from_row_slice(rows, d, &av),
                    b: DVector::from_vec(bv),
                });
            }
            other => return Err(UppError::Parse(format!("unknown local kind `{other}`"))),
        }
    }
    let mut inst = ProblemInstance::new(locals)?;
    inst.f_star = f_star;
    inst.pl_constant = pl;
    if let (true, Some(_)) = (pl.is_some(), f_star) {
        let (m, rhs) = normal_equations(&inst.locals, d);
        inst.x_star = Cholesky::new(m).map(|c| c.solve(&rhs));
        inst.f_star_is_global = true;
    }
    Ok(inst)
}
