//! Stacked vectors `x = (x_1; ...; x_N)` stored as an `N × d` matrix whose
//! row `i` is node `i`'s block. With this layout `H x = (P ⊗ I_d) x` is the
//! plain product `P X`.

use nalgebra::{DMatrix, DVector};

pub type Stacked = DMatrix<f64>;

pub fn zeros(n: usize, d: usize) -> Stacked {
    DMatrix::zeros(n, d)
}

/// `1 ⊗ v`.
pub fn consensus(n: usize, v: &DVector<f64>) -> Stacked {
    DMatrix::from_fn(n, v.len(), |_, j| v[j])
}

pub fn row(x: &Stacked, i: usize) -> DVector<f64> {
    x.row(i).transpose()
}

pub fn set_row(x: &mut Stacked, i: usize, v: &DVector<f64>) {
    x.row_mut(i).copy_from(&v.transpose());
}

pub fn to_nodes(x: &Stacked) -> Vec<DVector<f64>> {
    (0..x.nrows()).map(|i| row(x, i)).collect()
}

pub fn from_nodes(v: &[DVector<f64>]) -> Stacked {
    let d = v.first().map_or(0, |r| r.len());
    DMatrix::from_fn(v.len(), d, |i, j| v[i][j])
}

/// Block average `x̄ = (1/N) Σ x_i`.
pub fn block_mean(x: &Stacked) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    x.row_sum().transpose() / n
}

pub fn block_sum(x: &Stacked) -> DVector<f64> {
    x.row_sum().transpose()
}

/// `J x = 1 ⊗ x̄`.
pub fn project_consensus(x: &Stacked) -> Stacked {
    consensus(x.nrows(), &block_mean(x))
}

/// `K x = x − J x`.
pub fn project_disagreement(x: &Stacked) -> Stacked {
    x - project_consensus(x)
}

pub fn inner(a: &Stacked, b: &Stacked) -> f64 {
    a.dot(b)
}

pub fn rel_diff(a: &Stacked, b: &Stacked) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
