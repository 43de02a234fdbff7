//! Graphs, Laplacian-type mixing matrices and their spectra.
//!
//! Mixing matrices follow the Laplacian sign convention: off-diagonal
//! entries are negative on edges, rows sum to zero and the matrix is PSD
//! with `Null(P) = span(1)`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UppError};

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Path,
    Grid { rows: usize, cols: usize },
    RandomGeometric { radius: f64 },
    RandomRegular { degree: usize },
    Complete,
    /// Read from an edge list.
    Custom,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ring => write!(f, "ring"),
            TopologyKind::Path => write!(f, "path"),
            TopologyKind::Grid { rows, cols } => write!(f, "grid({rows}x{cols})"),
            TopologyKind::RandomGeometric { radius } => write!(f, "random_geometric(r={radius})"),
            TopologyKind::RandomRegular { degree } => write!(f, "random_regular(degree={degree})"),
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    kind: TopologyKind,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs are normalized to `i < j`;
    /// duplicates collapse. Connectivity is checked.
    pub fn from_edges(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        kind: TopologyKind,
    ) -> Result<Self> {
        if n == 0 {
            return Err(UppError::InvalidTopology("graph needs at least one node".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(UppError::InvalidTopology(format!("self-loop at {a}")));
            }
            if a >= n || b >= n {
                return Err(UppError::InvalidTopology(format!("edge {a}-{b} out of range")));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let g = Graph { n, edges, kind };
        if !g.is_connected() {
            return Err(UppError::DisconnectedGraph);
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        for list in &mut nb {
            list.sort_unstable();
        }
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n, &self.edges)
    }

    /// Edge-list text: a `n <count>` header then one sorted `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for (a, b) in &self.edges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| UppError::Parse("empty edge list".into()))?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count
                .parse::<usize>()
                .map_err(|e| UppError::Parse(format!("node count: {e}")))?,
            _ => return Err(UppError::Parse(format!("bad header `{header}`"))),
        };
        let mut pairs = Vec::new();
        for line in lines {
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| UppError::Parse(format!("edge `{line}`: {e}")))?;
            match nums.as_slice() {
                [a, b] => pairs.push((*a, *b)),
                _ => return Err(UppError::Parse(format!("edge `{line}`"))),
            }
        }
        Graph::from_edges(n, pairs, TopologyKind::Custom)
    }
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    if n == 0 {
        return false;
    }
    let mut nb = vec![Vec::new(); n];
    for &(a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &nb[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

pub fn build_topology(kind: &TopologyKind, n: usize, seed: u64) -> Result<Graph> {
    if n < 2 && !matches!(kind, TopologyKind::Complete | TopologyKind::Path) {
        return Err(UppError::InvalidTopology(format!("{kind} needs n >= 2")));
    }
    match kind {
        TopologyKind::Ring => {
            let pairs: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            Graph::from_edges(n, pairs, kind.clone())
        }
        TopologyKind::Path => Graph::from_edges(n, (1..n).map(|i| (i - 1, i)), kind.clone()),
        TopologyKind::Complete => {
            let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            Graph::from_edges(n, pairs, kind.clone())
        }
        TopologyKind::Grid { rows, cols } => {
            if rows * cols != n {
                return Err(UppError::GridDimensionMismatch { rows: *rows, cols: *cols, n });
            }
            let mut pairs = Vec::new();
            for r in 0..*rows {
                for c in 0..*cols {
                    let i = r * cols + c;
                    if c + 1 < *cols {
                        pairs.push((i, i + 1));
                    }
                    if r + 1 < *rows {
                        pairs.push((i, i + cols));
                    }
                }
            }
            Graph::from_edges(n, pairs, kind.clone())
        }
        TopologyKind::RandomGeometric { radius } => random_geometric(n, *radius, seed),
        TopologyKind::RandomRegular { degree } => random_regular(n, *degree, seed),
        TopologyKind::Custom => Err(UppError::InvalidTopology(
            "custom graphs come from an edge list".into(),
        )),
    }
}

fn random_geometric(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if !(radius > 0.0) {
        return Err(UppError::InvalidTopology(format!("radius {radius} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                if (dx * dx + dy * dy).sqrt() < radius {
                    edges.insert((i, j));
                }
            }
        }
        if connected(n, &edges) {
            return Ok(Graph {
                n,
                edges,
                kind: TopologyKind::RandomGeometric { radius },
            });
        }
    }
    Err(UppError::GenerationExhausted(MAX_ATTEMPTS))
}

/// Stub pairing with rejection of loops and repeated edges; a pairing that
/// gets stuck is restarted from scratch.
fn random_regular(n: usize, degree: usize, seed: u64) -> Result<Graph> {
    if degree == 0 || degree >= n || (n * degree) % 2 == 1 {
        return Err(UppError::UnrealizableRegularDegree { n, degree });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, degree)).collect();
        let mut edges = BTreeSet::new();
        while !stubs.is_empty() {
            let mut placed = false;
            for _ in 0..64 {
                let a = rng.random_range(0..stubs.len());
                let b = rng.random_range(0..stubs.len());
                let (u, v) = (stubs[a], stubs[b]);
                if a != b && u != v && !edges.contains(&(u.min(v), u.max(v))) {
                    edges.insert((u.min(v), u.max(v)));
                    let (hi, lo) = (a.max(b), a.min(b));
                    stubs.swap_remove(hi);
                    stubs.swap_remove(lo);
                    placed = true;
                    break;
                }
            }
            if !placed {
                // Check exhaustively whether any legal pair is left.
                let legal = (0..stubs.len()).find_map(|a| {
                    (a + 1..stubs.len()).find(|&b| {
                        let (u, v) = (stubs[a], stubs[b]);
                        u != v && !edges.contains(&(u.min(v), u.max(v)))
                    })
                    .map(|b| (a, b))
                });
                match legal {
                    Some((a, b)) => {
                        let (u, v) = (stubs[a], stubs[b]);
                        edges.insert((u.min(v), u.max(v)));
                        stubs.swap_remove(b);
                        stubs.swap_remove(a);
                    }
                    None => continue 'attempt,
                }
            }
        }
        if connected(n, &edges) {
            return Ok(Graph {
                n,
                edges,
                kind: TopologyKind::RandomRegular { degree },
            });
        }
    }
    Err(UppError::GenerationExhausted(MAX_ATTEMPTS))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingScheme {
    MetropolisLaplacian,
    UniformLaplacian,
    Custom,
}

impl fmt::Display for MixingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixingScheme::MetropolisLaplacian => "metropolis_laplacian",
            MixingScheme::UniformLaplacian => "uniform_laplacian",
            MixingScheme::Custom => "custom",
        })
    }
}

/// Symmetric PSD `P` with `P 1 = 0`, nonzero exactly on edges and the
/// diagonal. `neighbors[i]` is the communication neighborhood of node `i`.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    p: DMatrix<f64>,
    scheme: MixingScheme,
    normalized: bool,
    neighbors: Vec<Vec<usize>>,
}

impl MixingMatrix {
    /// Wraps an arbitrary matrix, deriving neighborhoods from its sparsity
    /// and checking the invariants.
    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n {
            return Err(UppError::DimensionMismatch { expected: n, got: p.ncols() });
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && p[(i, j)] != 0.0).collect())
            .collect();
        let lam1 = SymmetricEigen::new(p.clone()).eigenvalues.max();
        let normalized = (lam1 - 1.0).abs() <= 1e-8;
        let m = MixingMatrix { p, scheme: MixingScheme::Custom, normalized, neighbors };
        m.validate()?;
        Ok(m)
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn scheme(&self) -> MixingScheme {
        self.scheme
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn scaled(&self, c: f64) -> MixingMatrix {
        MixingMatrix {
            p: &self.p * c,
            scheme: self.scheme,
            normalized: false,
            neighbors: self.neighbors.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let p = &self.p;
        for i in 0..n {
            for j in 0..n {
                if p[(i, j)] != p[(j, i)] {
                    return Err(UppError::AssumptionViolation(format!(
                        "P not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(p.clone()).eigenvalues;
        let lam1 = eig.max();
        let row_sums = p.column_sum();
        let worst = row_sums.amax();
        if worst > 1e-12 * lam1.max(1.0) {
            return Err(UppError::AssumptionViolation(format!(
                "rows of P do not sum to zero (max {worst:.3e})"
            )));
        }
        if eig.min() < -1e-10 * lam1 {
            return Err(UppError::AssumptionViolation(format!(
                "P not PSD (min eigenvalue {:.3e})",
                eig.min()
            )));
        }
        let zeros = eig.iter().filter(|&&l| l.abs() <= 1e-9 * lam1.max(f64::MIN_POSITIVE)).count();
        if n > 1 && zeros != 1 {
            return Err(UppError::DisconnectedGraph);
        }
        Ok(())
    }

    /// Ascending eigendecomposition.
    pub fn spectrum(&self) -> Spectrum {
        Spectrum::of(&self.p)
    }
}

pub fn build_mixing_matrix(g: &Graph, scheme: MixingScheme, normalize: bool) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(UppError::DisconnectedGraph);
    }
    let n = g.n_nodes();
    let deg = g.degrees();
    let mut p = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        let w = match scheme {
            MixingScheme::MetropolisLaplacian => 1.0 / (1.0 + deg[i].max(deg[j]) as f64),
            MixingScheme::UniformLaplacian => 1.0,
            MixingScheme::Custom => {
                return Err(UppError::InvalidTopology(
                    "custom scheme needs an explicit matrix".into(),
                ))
            }
        };
        p[(i, j)] = -w;
        p[(j, i)] = -w;
        p[(i, i)] += w;
        p[(j, j)] += w;
    }
    if normalize && n > 1 {
        let lam1 = SymmetricEigen::new(p.clone()).eigenvalues.max();
        p /= lam1;
    }
    let m = MixingMatrix {
        p,
        scheme,
        normalized: normalize && n > 1,
        neighbors: g.neighbors(),
    };
    m.validate()?;
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub lambda_1: f64,
    pub lambda_nm1: f64,
    pub kappa: f64,
    pub gamma_inv: f64,
}

impl SpectralData {
    /// Spectral data of a list of eigenvalues known to contain exactly one
    /// zero (up to `tol · λ₁`).
    pub fn from_eigenvalues(eigs: &[f64], tol: f64) -> Result<Self> {
        let lambda_1 = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lambda_1 > 0.0) {
            return Err(UppError::InfeasibleSpectrum("no positive eigenvalue".into()));
        }
        let cut = tol * lambda_1;
        let near_zero = eigs.iter().filter(|l| l.abs() <= cut).count();
        if near_zero > 1 {
            return Err(UppError::MoreThanOneNearZeroEigenvalue(near_zero));
        }
        let lambda_nm1 = eigs
            .iter()
            .cloned()
            .filter(|&l| l > cut)
            .fold(f64::INFINITY, f64::min);
        Ok(SpectralData {
            lambda_1,
            lambda_nm1,
            kappa: lambda_1 / lambda_nm1,
            gamma_inv: lambda_nm1 / lambda_1,
        })
    }

    /// `τ = ⌈√κ⌉`.
    pub fn chebyshev_depth(&self) -> usize {
        // Guard against κ landing a hair above a perfect square.
        let r = (self.kappa * (1.0 - 1e-12)).sqrt().ceil();
        (r as usize).max(1)
    }
}

pub fn spectral_data(m: &MixingMatrix, tol: f64) -> Result<SpectralData> {
    SpectralData::from_eigenvalues(m.spectrum().values.as_slice(), tol)
}

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-9;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(a: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(a.clone());
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Spectrum { values, vectors }
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn matrix_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, k| {
            self.vectors[(i, k)] * f(self.values[k])
        });
        scaled * self.vectors.transpose()
    }

    /// `xᵀ (f(P) ⊗ I_d) x` for a stacked `x`, using the eigenbasis of `P`.
    pub fn quad_form(&self, x: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> f64 {
        let coords = self.vectors.transpose() * x;
        (0..coords.nrows())
            .map(|k| f(self.values[k]) * coords.row(k).norm_squared())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uniform(kind: TopologyKind, n: usize) -> MixingMatrix {
        build_mixing_matrix(&build_topology(&kind, n, 0).unwrap(), MixingScheme::UniformLaplacian, false).unwrap()
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn ring_laplacian_spectrum_matches_closed_form() {
        let n = 12;
        let got = uniform(TopologyKind::Ring, n).spectrum().values;
        let want = sorted((0..n).map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()).collect());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn path_laplacian_spectrum_matches_closed_form() {
        let n = 9;
        let got = uniform(TopologyKind::Path, n).spectrum().values;
        let want = sorted((0..n).map(|k| 2.0 - 2.0 * (PI * k as f64 / n as f64).cos()).collect());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn complete_graph_has_flat_spectrum() {
        let sd = spectral_data(&uniform(TopologyKind::Complete, 7), DEFAULT_SPECTRAL_TOL).unwrap();
        assert!((sd.lambda_1 - 7.0).abs() < 1e-12);
        assert!((sd.kappa - 1.0).abs() < 1e-12);
        assert_eq!(sd.chebyshev_depth(), 1);
    }

    #[test]
    fn ring_50_condition_number() {
        // 4 / (2 − 2 cos(2π/50)).
        let want = 2.0 / (1.0 - (PI / 25.0).cos());
        let sd = spectral_data(&uniform(TopologyKind::Ring, 50), DEFAULT_SPECTRAL_TOL).unwrap();
        assert!((sd.kappa - want).abs() < 1e-9 * want);
        assert_eq!(sd.chebyshev_depth(), 16);
    }

    #[test]
    fn grid_degrees() {
        let g = build_topology(&TopologyKind::Grid { rows: 3, cols: 4 }, 12, 0).unwrap();
        let deg = g.degrees();
        assert_eq!(deg.iter().filter(|&&d| d == 2).count(), 4);
        assert_eq!(deg.iter().filter(|&&d| d == 3).count(), 6);
        assert_eq!(deg.iter().filter(|&&d| d == 4).count(), 2);
        assert_eq!(g.edges().len(), 3 * 3 + 2 * 4);
    }

    #[test]
    fn random_regular_is_regular_and_seeded() {
        let a = build_topology(&TopologyKind::RandomRegular { degree: 3 }, 20, 5).unwrap();
        assert!(a.degrees().iter().all(|&d| d == 3));
        let b = build_topology(&TopologyKind::RandomRegular { degree: 3 }, 20, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metropolis_weights() {
        let g = build_topology(&TopologyKind::Path, 3, 0).unwrap();
        let p = build_mixing_matrix(&g, MixingScheme::MetropolisLaplacian, false).unwrap();
        // Both edges touch the degree-2 middle node: weight 1/3.
        assert!((p.p()[(0, 1)] + 1.0 / 3.0).abs() < 1e-15);
        assert!((p.p()[(1, 1)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            build_topology(&TopologyKind::Grid { rows: 2, cols: 3 }, 7, 0),
            Err(UppError::GridDimensionMismatch { .. })
        ));
        assert!(matches!(
            build_topology(&TopologyKind::RandomRegular { degree: 3 }, 7, 0),
            Err(UppError::UnrealizableRegularDegree { .. })
        ));
        assert!(matches!(Graph::from_edges(4, [(0, 1), (2, 3)], TopologyKind::Custom), Err(UppError::DisconnectedGraph)));
        assert!(Graph::from_edges(3, [(0, 0)], TopologyKind::Custom).is_err());
        assert!(Graph::from_edges(3, [(0, 5)], TopologyKind::Custom).is_err());
        assert!(MixingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0])).is_err());
        assert!(MixingMatrix::from_matrix(DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn two_zero_eigenvalues_are_rejected() {
        assert!(matches!(
            SpectralData::from_eigenvalues(&[0.0, 1e-14, 1.0], 1e-9),
            Err(UppError::MoreThanOneNearZeroEigenvalue(2))
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = build_topology(&TopologyKind::RandomGeometric { radius: 0.5 }, 15, 2).unwrap();
        let back = Graph::from_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.n_nodes(), 15);
        assert!(Graph::from_edge_list("n x\n").is_err());
        assert!(Graph::from_edge_list("n 3\n0 1 2\n").is_err());
    }

    #[test]
    fn matrix_function_and_quad_form_agree_with_dense() {
        let p = uniform(TopologyKind::Ring, 6);
        let s = p.spectrum();
        let sq = s.matrix_function(|l| l * l);
        assert!((&sq - p.p() * p.p()).amax() < 1e-12);
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 - 2.5) * (j as f64 + 1.0));
        let want = (x.transpose() * p.p() * &x).trace();
        assert!((s.quad_form(&x, |l| l) - want).abs() < 1e-10);
    }

    fn kind_strategy() -> impl Strategy<Value = (TopologyKind, usize)> {
        prop_oneof![
            (3usize..30).prop_map(|n| (TopologyKind::Ring, n)),
            (2usize..30).prop_map(|n| (TopologyKind::Path, n)),
            (1usize..10).prop_map(|n| (TopologyKind::Complete, n + 1)),
            (2usize..6, 2usize..6).prop_map(|(r, c)| (TopologyKind::Grid { rows: r, cols: c }, r * c)),
            (6usize..25).prop_map(|n| (TopologyKind::RandomGeometric { radius: 0.7 }, n)),
            (3usize..12).prop_map(|h| (TopologyKind::RandomRegular { degree: 4 }, 2 * h)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mixing_matrix_invariants((kind, n) in kind_strategy(), seed in 0u64..1000, metropolis: bool, normalize: bool) {
            let g = build_topology(&kind, n, seed).unwrap();
            let scheme = if metropolis { MixingScheme::MetropolisLaplacian } else { MixingScheme::UniformLaplacian };
            let m = build_mixing_matrix(&g, scheme, normalize).unwrap();
            let p = m.p();
            prop_assert_eq!(p, &p.transpose());
            prop_assert!(p.column_sum().amax() < 1e-12);
            for i in 0..n {
                for j in 0..n {
                    let edge = g.edges().contains(&(i.min(j), i.max(j)));
                    prop_assert_eq!(i != j && !edge, i != j && p[(i, j)] == 0.0);
                }
            }
            let sd = spectral_data(&m, DEFAULT_SPECTRAL_TOL).unwrap();
            prop_assert!(sd.kappa >= 1.0 - 1e-12);
            prop_assert!((sd.gamma_inv * sd.kappa - 1.0).abs() < 1e-12);
            prop_assert!(m.spectrum().values.min() > -1e-10 * sd.lambda_1);
            if normalize {
                prop_assert!((sd.lambda_1 - 1.0).abs() < 1e-10);
            }
            let tau = sd.chebyshev_depth();
            prop_assert!(((tau - 1) as f64).powi(2) < sd.kappa * (1.0 + 1e-9) && sd.kappa <= (tau as f64).powi(2) * (1.0 + 1e-9));
        }
    }
}
