//! Small dense helpers over nalgebra shared by the model modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::embeddings::column_means;

/// Eigen-decomposition of a symmetric matrix with eigenvalues in
/// non-increasing order. Eigenvector columns follow the same order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Thin SVD with singular values in non-increasing order.
/// Returns (U, s, V) with `m = U diag(s) Vᵀ`.
pub(crate) fn svd_desc(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(v_t.ncols(), k, |r, c| v_t[(order[c], r)]);
    (u_sorted, s, v_sorted)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Subtracts `mean` from every row.
pub(crate) fn center_rows(m: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        for (x, mu) in row.iter_mut().zip(mean) {
            *x -= mu;
        }
    }
    out
}

/// Column means and mean-centered copy of an N×d row matrix.
pub(crate) fn center_columns(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mean = column_means(m);
    let centered = center_rows(m, &mean);
    (mean, centered)
}

/// `aᵀ b / n` for centered row matrices.
pub(crate) fn cross_moment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.tr_mul(b) / a.nrows() as f64
}

/// Second moment `aᵀ a / n`, symmetrized.
pub(crate) fn second_moment(a: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&cross_moment(a, a))
}

/// Pearson correlation of two equally long samples; 0 when either is constant.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa.sqrt() * sbb.sqrt())
    }
}

/// Flips the sign of column `j`.
pub(crate) fn negate_column(m: &mut DMatrix<f64>, j: usize) {
    for x in m.column_mut(j).iter_mut() {
        *x = -*x;
    }
}

/// Index of the entry with largest magnitude (first on ties).
pub(crate) fn argmax_abs(v: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in v.enumerate() {
        if x.abs() > best_val {
            best_val = x.abs();
            best = i;
        }
    }
    best
}
