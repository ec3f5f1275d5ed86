//! Canonical correlation analysis between paired i-vector and x-vector
//! views, and the resulting x_g-vector / i_d-vector transforms.
//!
//! Fitting whitens each view with the eigen-decomposition of its covariance,
//! then takes the SVD of the whitened cross-covariance. Column `j` of
//! `w_id` / `w_xg` is the j-th pair of canonical directions, normalized so
//! that projected training data has unit variance.

use nalgebra::DMatrix;

use crate::container::{ModelContainer, Section};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{
    argmax_abs, center_columns, center_rows, cross_moment, negate_column, pearson, second_moment,
    svd_desc, sym_eigen_desc,
};

pub const CREATED_BY: &str = concat!("xgvec ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaOptions {
    /// Diagonal loading, relative to the mean eigenvalue of each covariance.
    pub ridge: f64,
    /// Eigenvalues below `rank_tol * largest` are treated as null directions.
    pub rank_tol: f64,
    pub max_components: Option<usize>,
}

impl Default for CcaOptions {
    fn default() -> Self {
        CcaOptions {
            ridge: 1e-8,
            rank_tol: 1e-10,
            max_components: None,
        }
    }
}

impl CcaOptions {
    fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::BadParams(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::BadParams(format!(
                "rank_tol must lie in (0, 1), got {}",
                self.rank_tol
            )));
        }
        if self.max_components == Some(0) {
            return Err(Error::BadParams("max_components must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted transformation model.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    pub mu_i: Vec<f64>,
    pub mu_x: Vec<f64>,
    /// d_i × k
    pub w_id: DMatrix<f64>,
    /// d_x × k
    pub w_xg: DMatrix<f64>,
    /// Canonical correlations, non-increasing.
    pub rho: Vec<f64>,
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// x-vector → x_g-vector through `w_xg`.
    XToGenerative,
    /// i-vector → i_d-vector through `w_id`.
    IToDiscriminative,
}

impl CcaModel {
    pub fn d_i(&self) -> usize {
        self.mu_i.len()
    }

    pub fn d_x(&self) -> usize {
        self.mu_x.len()
    }

    pub fn k(&self) -> usize {
        self.rho.len()
    }

    fn view_params(&self, view: View) -> (&[f64], &DMatrix<f64>) {
        match view {
            View::XToGenerative => (&self.mu_x, &self.w_xg),
            View::IToDiscriminative => (&self.mu_i, &self.w_id),
        }
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new();
        let sections = [
            ("mu_i", Section::Vector(self.mu_i.clone())),
            ("mu_x", Section::Vector(self.mu_x.clone())),
            ("W_id", Section::Matrix(self.w_id.clone())),
            ("W_xg", Section::Matrix(self.w_xg.clone())),
            ("rho", Section::Vector(self.rho.clone())),
            ("ridge", Section::Scalar(self.ridge)),
            ("created_by", Section::Text(CREATED_BY.to_string())),
        ];
        for (name, s) in sections {
            c.insert(name, s).expect("section names are unique");
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let model = CcaModel {
            mu_i: c.vector("mu_i")?.to_vec(),
            mu_x: c.vector("mu_x")?.to_vec(),
            w_id: c.matrix("W_id")?.clone(),
            w_xg: c.matrix("W_xg")?.clone(),
            rho: c.vector("rho")?.to_vec(),
            ridge: c.scalar("ridge")?,
        };
        let k = model.k();
        if model.w_id.shape() != (model.d_i(), k) {
            return Err(Error::DimMismatch {
                expected: model.d_i() * k,
                found: model.w_id.len(),
            });
        }
        if model.w_xg.shape() != (model.d_x(), k) {
            return Err(Error::DimMismatch {
                expected: model.d_x() * k,
                found: model.w_xg.len(),
            });
        }
        Ok(model)
    }
}

/// Checks positional pairing of two views: same length and same utterance ids.
pub fn check_pairing(phi_i: &EmbeddingSet, phi_x: &EmbeddingSet) -> Result<()> {
    if phi_i.len() != phi_x.len() {
        return Err(Error::PairMismatch(format!(
            "i-view has {} records, x-view has {}",
            phi_i.len(),
            phi_x.len()
        )));
    }
    for (pos, (a, b)) in phi_i.records().iter().zip(phi_x.records()).enumerate() {
        if a.utt_id != b.utt_id {
            return Err(Error::PairMismatch(format!(
                "record {pos}: `{}` vs `{}`",
                a.utt_id, b.utt_id
            )));
        }
    }
    Ok(())
}

/// Whitening basis of one view: d × r with `Wᵀ (Σ + cI) W = I`.
fn whitener(sigma: &DMatrix<f64>, opts: &CcaOptions, view: &'static str) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let loading = opts.ridge * sigma.trace() / d as f64;
    let (vals, vecs) = sym_eigen_desc(sigma);
    let top = vals[0];
    if !(top > 0.0) {
        return Err(Error::DegenerateRank(view));
    }
    let rank = vals.iter().take_while(|&&v| v > opts.rank_tol * top).count();
    let mut w = vecs.columns(0, rank).into_owned();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= (vals[j] + loading).sqrt();
    }
    Ok(w)
}

/// Fits the CCA transformation model from positionally paired background views.
pub fn fit_cca(phi_i: &EmbeddingSet, phi_x: &EmbeddingSet, opts: &CcaOptions) -> Result<CcaModel> {
    opts.validate()?;
    check_pairing(phi_i, phi_x)?;
    let n = phi_i.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }

    let (mu_i, xi) = center_columns(&phi_i.to_matrix());
    let (mu_x, xx) = center_columns(&phi_x.to_matrix());
    let sigma_i = second_moment(&xi);
    let sigma_x = second_moment(&xx);
    let sigma_ix = cross_moment(&xi, &xx);

    let white_i = whitener(&sigma_i, opts, "i")?;
    let white_x = whitener(&sigma_x, opts, "x")?;
    let whitened_cross = white_i.transpose() * &sigma_ix * &white_x;
    let (u, _, v) = svd_desc(&whitened_cross);

    let mut k = u.ncols().min(v.ncols());
    if let Some(cap) = opts.max_components {
        k = k.min(cap);
    }
    let mut w_id = &white_i * u.columns(0, k);
    let mut w_xg = &white_x * v.columns(0, k);

    for j in 0..k {
        if w_xg[(argmax_abs(w_xg.column(j).iter().copied()), j)] < 0.0 {
            negate_column(&mut w_xg, j);
            negate_column(&mut w_id, j);
        }
    }

    // Correlations of the fitted variate pairs on the unregularized training
    // covariances; the ridge only steers the directions.
    let cov_uv = (w_id.transpose() * &sigma_ix * &w_xg).diagonal();
    let var_u = (w_id.transpose() * &sigma_i * &w_id).diagonal();
    let var_v = (w_xg.transpose() * &sigma_x * &w_xg).diagonal();
    let mut rho = Vec::with_capacity(k);
    for j in 0..k {
        let denom = (var_u[j] * var_v[j]).sqrt();
        let r = if denom > 0.0 { cov_uv[j] / denom } else { 0.0 };
        if r > 1.0 + 1e-6 {
            return Err(Error::Internal(format!("canonical correlation {r} exceeds 1")));
        }
        let r = r.clamp(0.0, 1.0);
        // Ties among singular values can reorder at rounding level.
        let r = rho.last().map_or(r, |&prev: &f64| r.min(prev));
        rho.push(r);
    }

    Ok(CcaModel {
        mu_i,
        mu_x,
        w_id,
        w_xg,
        rho,
        ridge: opts.ridge,
    })
}

/// Projects `vectors` through one side of the model: each output row is
/// `Wᵀ (v − μ)`. Ids are preserved.
pub fn transform(model: &CcaModel, vectors: &EmbeddingSet, view: View) -> Result<EmbeddingSet> {
    let (mu, w) = view_params_checked(model, vectors, view)?;
    let projected = center_rows(&vectors.to_matrix(), mu) * w;
    EmbeddingSet::from_rows_like(vectors, &projected)
}

fn view_params_checked<'a>(
    model: &'a CcaModel,
    vectors: &EmbeddingSet,
    view: View,
) -> Result<(&'a [f64], &'a DMatrix<f64>)> {
    let (mu, w) = model.view_params(view);
    if vectors.dim() != mu.len() {
        return Err(Error::DimMismatch {
            expected: mu.len(),
            found: vectors.dim(),
        });
    }
    Ok((mu, w))
}

/// Empirical correlation of every canonical variate pair on held-out pairs.
pub fn canonical_correlation_report(
    model: &CcaModel,
    phi_i: &EmbeddingSet,
    phi_x: &EmbeddingSet,
) -> Result<Vec<f64>> {
    check_pairing(phi_i, phi_x)?;
    if phi_i.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: phi_i.len(),
        });
    }
    let u = transform(model, phi_i, View::IToDiscriminative)?.to_matrix();
    let v = transform(model, phi_x, View::XToGenerative)?.to_matrix();
    Ok((0..model.k())
        .map(|j| {
            let a: Vec<f64> = u.column(j).iter().copied().collect();
            let b: Vec<f64> = v.column(j).iter().copied().collect();
            pearson(&a, &b)
        })
        .collect())
}
