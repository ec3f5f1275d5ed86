//! Independent oracles and data builders shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xgvec::embeddings::{EmbeddingSet, Record};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Rows become records `u{r}` labeled by `spk(r)`.
pub fn set_from_rows(m: &DMatrix<f64>, spk: impl Fn(usize) -> String) -> EmbeddingSet {
    let recs = (0..m.nrows())
        .map(|r| Record::new(format!("u{r}"), spk(r), m.row(r).iter().copied().collect()))
        .collect();
    EmbeddingSet::new(m.ncols(), recs).unwrap()
}

pub fn unlabeled(m: &DMatrix<f64>) -> EmbeddingSet {
    set_from_rows(m, |_| String::new())
}

/// Paired views with a random linear coupling: `x = i·B + noise`.
pub fn coupled_views(seed: u64, n: usize, d_i: usize, d_x: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let i = gaussian(&mut r, n, d_i);
    let b = gaussian(&mut r, d_i, d_x);
    let noise = gaussian(&mut r, n, d_x) * 1.5;
    let x = &i * b + noise;
    (i, x)
}

/// Plain-loop 1/N cross-covariance of the columns of `a` and `b`.
pub fn naive_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ma: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).sum() / n as f64).collect();
    let mb: Vec<f64> = (0..b.ncols()).map(|j| b.column(j).sum() / n as f64).collect();
    DMatrix::from_fn(a.ncols(), b.ncols(), |p, q| {
        let mut s = 0.0;
        for r in 0..n {
            s += (a[(r, p)] - ma[p]) * (b[(r, q)] - mb[q]);
        }
        s / n as f64
    })
}

/// Eigenpairs of a general square matrix with real spectrum, eigenvalues
/// descending. Eigenvectors are unit null vectors of `M − λI`.
pub fn real_eigenpairs(m: &DMatrix<f64>) -> Vec<(f64, DVector<f64>)> {
    let d = m.nrows();
    let mut vals: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|c| c.re).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals.into_iter()
        .map(|lambda| {
            let shifted = m - DMatrix::identity(d, d) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.unwrap();
            let (idx, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let v = v_t.row(idx).transpose();
            (lambda, v.normalize())
        })
        .collect()
}

/// Brute-force CCA: `Σ_i⁻¹Σ_ix Σ_x⁻¹Σ_xi` and its x-side counterpart.
/// Returns the top `k` correlations with the matching i- and x-side
/// directions (unit norm, arbitrary sign).
pub fn cca_oracle(i: &DMatrix<f64>, x: &DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let sii = naive_cov(i, i);
    let sxx = naive_cov(x, x);
    let six = naive_cov(i, x);
    let sxi = six.transpose();
    let sii_inv = sii.try_inverse().unwrap();
    let sxx_inv = sxx.try_inverse().unwrap();
    let mi = &sii_inv * &six * &sxx_inv * &sxi;
    let mx = &sxx_inv * &sxi * &sii_inv * &six;
    let pi = real_eigenpairs(&mi);
    let px = real_eigenpairs(&mx);
    let rho = pi.iter().take(k).map(|(l, _)| l.max(0.0).sqrt()).collect();
    let di = pi.into_iter().take(k).map(|(_, v)| v).collect();
    let dx = px.into_iter().take(k).map(|(_, v)| v).collect();
    (rho, di, dx)
}

/// Largest entrywise gap between `a` and `±b` after unit normalization.
pub fn direction_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let an = a.normalize();
    let bn = b.normalize();
    (&an - &bn).amax().min((&an + &bn).amax())
}

/// Exhaustive sweep: one threshold per distinct score plus +∞, rates
/// counted directly for each threshold.
pub fn sweep_oracle(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut thr: Vec<f64> = tar.iter().chain(non).copied().collect();
    thr.sort_by(f64::total_cmp);
    thr.dedup();
    thr.push(f64::INFINITY);
    thr.iter()
        .map(|&t| {
            let miss = tar.iter().filter(|&&s| s < t).count();
            let fa = non.iter().filter(|&&s| s >= t).count();
            (miss as f64 / tar.len() as f64, fa as f64 / non.len() as f64)
        })
        .collect()
}

/// EER of the sweep: exact crossing if a point has `p_miss = p_fa`,
/// otherwise the intersection of the segment that brackets the sign change.
pub fn eer_oracle(tar: &[f64], non: &[f64]) -> f64 {
    let pts = sweep_oracle(tar, non);
    for j in 0..pts.len() {
        let (pm, pf) = pts[j];
        if pm == pf {
            return pm;
        }
        if pm > pf {
            let (pm0, pf0) = pts[j - 1];
            let alpha = (pf0 - pm0) / ((pm - pm0) - (pf - pf0));
            return pm0 + alpha * (pm - pm0);
        }
    }
    panic!("sweep never crossed");
}

pub fn min_dcf_oracle(tar: &[f64], non: &[f64], p: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p).min(c_fa * (1.0 - p));
    sweep_oracle(tar, non)
        .into_iter()
        .map(|(pm, pf)| (c_miss * p * pm + c_fa * (1.0 - p) * pf) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// Log-density of `N(0, cov)` at `v`.
pub fn gauss_logpdf(v: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = v.len() as f64;
    let chol = cov.clone().cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let sol = chol.solve(v);
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + v.dot(&sol))
}

/// Same-speaker vs different-speaker log-likelihood ratio of a single
/// (e, t) pair under `v = μ + F h + ε`, from the stacked joint Gaussian.
pub fn plda_llr_oracle(mu: &[f64], f: &DMatrix<f64>, sigma: &DMatrix<f64>, e: &[f64], t: &[f64]) -> f64 {
    let d = mu.len();
    let b = f * f.transpose();
    let tot = &b + sigma;
    let mut same = DMatrix::zeros(2 * d, 2 * d);
    let mut diff = DMatrix::zeros(2 * d, 2 * d);
    same.view_mut((0, 0), (d, d)).copy_from(&tot);
    same.view_mut((d, d), (d, d)).copy_from(&tot);
    same.view_mut((0, d), (d, d)).copy_from(&b);
    same.view_mut((d, 0), (d, d)).copy_from(&b);
    diff.view_mut((0, 0), (d, d)).copy_from(&tot);
    diff.view_mut((d, d), (d, d)).copy_from(&tot);
    let v = DVector::from_iterator(2 * d, e.iter().zip(mu).map(|(a, m)| a - m).chain(t.iter().zip(mu).map(|(a, m)| a - m)));
    gauss_logpdf(&v, &same) - gauss_logpdf(&v, &diff)
}

/// Between- and within-class scatter (1/N) of labeled rows.
pub fn scatter(rows: &DMatrix<f64>, labels: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = rows.ncols();
    let n = rows.nrows() as f64;
    let classes = labels.iter().max().unwrap() + 1;
    let global: DVector<f64> = rows.row_sum().transpose() / n;
    let mut sb = DMatrix::zeros(d, d);
    let mut sw = DMatrix::zeros(d, d);
    for c in 0..classes {
        let idx: Vec<usize> = (0..rows.nrows()).filter(|&r| labels[r] == c).collect();
        let mut mean = DVector::zeros(d);
        for &r in &idx {
            mean += rows.row(r).transpose();
        }
        mean /= idx.len() as f64;
        let dm = &mean - &global;
        sb += &dm * dm.transpose() * idx.len() as f64 / n;
        for &r in &idx {
            let dv = rows.row(r).transpose() - &mean;
            sw += &dv * dv.transpose() / n;
        }
    }
    (sb, sw)
}

/// Fisher ratio `wᵀ Sb w / wᵀ Sw w`.
pub fn fisher_ratio(w: &DVector<f64>, sb: &DMatrix<f64>, sw: &DMatrix<f64>) -> f64 {
    (w.transpose() * sb * w)[(0, 0)] / (w.transpose() * sw * w)[(0, 0)]
}
