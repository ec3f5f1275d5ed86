//! Verification back-end: LDA projection, length normalization and a
//! simplified PLDA (speaker subspace plus full-covariance residual) trained
//! by EM and scored with closed-form log-likelihood ratios.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::container::{ModelContainer, Section};
use crate::embeddings::{column_means, EmbeddingSet, Record};
use crate::error::{Error, Result};
use crate::linalg::{argmax_abs, center_rows, negate_column, second_moment, sym_eigen_desc, symmetrize};
use crate::trials::{ScoreSet, ScoredTrial, TrialSet};

/// Relative diagonal loading applied wherever a scatter matrix is factored.
const SCATTER_RIDGE: f64 = 1e-8;
const SIGMA_FLOOR: f64 = 1e-10;
const INIT_LOADING: f64 = 1e-6;
const LN_2PI: f64 = 1.8378770664093453;

/// Row indices grouped by speaker, in lexicographic speaker order.
fn speaker_groups(set: &EmbeddingSet) -> Result<Vec<Vec<usize>>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in set.records().iter().enumerate() {
        if r.spk_id.is_empty() {
            return Err(Error::MissingLabels);
        }
        groups.entry(r.spk_id.as_str()).or_default().push(i);
    }
    Ok(groups.into_values().collect())
}

fn group_mean(x: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(x.ncols());
    for &i in rows {
        m += x.row(i).transpose();
    }
    m / rows.len() as f64
}

// ---------------------------------------------------------------- LDA

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: Vec<f64>,
    /// d × r, unit-norm columns ordered by decreasing Fisher ratio.
    pub projection: DMatrix<f64>,
}

impl LdaModel {
    pub fn r(&self) -> usize {
        self.projection.ncols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Within- and between-speaker scatter (1/N normalized) and the global mean.
fn scatter_matrices(set: &EmbeddingSet, groups: &[Vec<usize>]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let x = set.to_matrix();
    let n = x.nrows() as f64;
    let mean = column_means(&x);
    let mu = DVector::from_column_slice(&mean);
    let mut within = x.clone();
    let mut between = DMatrix::zeros(x.ncols(), x.ncols());
    for rows in groups {
        let m = group_mean(&x, rows);
        for &i in rows {
            let mut row = within.row_mut(i);
            row -= m.transpose();
        }
        let d = &m - &mu;
        between += (&d * d.transpose()) * rows.len() as f64;
    }
    let sw = second_moment(&within);
    let sb = symmetrize(&(between / n));
    (mean, sw, sb)
}

/// Fisher LDA: top-`r` generalized eigenvectors of (between, within) scatter.
pub fn fit_lda(set: &EmbeddingSet, r: usize) -> Result<LdaModel> {
    let groups = speaker_groups(set)?;
    if r == 0 {
        return Err(Error::BadParams("LDA dimension must be positive".into()));
    }
    let max = set.dim().min(groups.len().saturating_sub(1));
    if r > max {
        return Err(Error::RankExceeded { requested: r, max });
    }
    let d = set.dim();
    let (mean, sw, sb) = scatter_matrices(set, &groups);
    let loading = SCATTER_RIDGE * sw.trace() / d as f64;
    if !(loading > 0.0) {
        return Err(Error::SingularScatter);
    }
    let sw_reg = &sw + DMatrix::identity(d, d) * loading;
    let chol = Cholesky::new(sw_reg).ok_or(Error::SingularScatter)?;
    let l = chol.l();
    // C = L⁻¹ Sb L⁻ᵀ shares its eigenvalues with Sw⁻¹ Sb.
    let y = l.solve_lower_triangular(&sb).ok_or(Error::SingularScatter)?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::SingularScatter)?;
    let (_, q) = sym_eigen_desc(&symmetrize(&c));
    let top = q.columns(0, r).into_owned();
    let mut projection = l
        .transpose()
        .solve_upper_triangular(&top)
        .ok_or(Error::SingularScatter)?;
    for j in 0..r {
        let norm = projection.column(j).norm();
        projection.column_mut(j).unscale_mut(norm);
        if projection[(argmax_abs(projection.column(j).iter().copied()), j)] < 0.0 {
            negate_column(&mut projection, j);
        }
    }
    Ok(LdaModel { mean, projection })
}

/// Rows become `projectionᵀ (v − mean)`.
pub fn project_lda(model: &LdaModel, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.dim() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            found: set.dim(),
        });
    }
    let out = center_rows(&set.to_matrix(), &model.mean) * &model.projection;
    EmbeddingSet::from_rows_like(set, &out)
}

/// Scales every vector to unit Euclidean norm.
pub fn length_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut records = Vec::with_capacity(set.len());
    for r in set.records() {
        let norm = r.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateVector(r.utt_id.clone()));
        }
        records.push(Record {
            utt_id: r.utt_id.clone(),
            spk_id: r.spk_id.clone(),
            vector: r.vector.iter().map(|v| v / norm).collect(),
        });
    }
    EmbeddingSet::new(set.dim(), records)
}

// ---------------------------------------------------------------- PLDA

/// `v = mu + F h + eps`, `h ~ N(0, I_q)`, `eps ~ N(0, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: Vec<f64>,
    /// D × q speaker-factor loadings.
    pub f: DMatrix<f64>,
    /// D × D residual covariance.
    pub sigma: DMatrix<f64>,
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.f.ncols()
    }

    /// Between-speaker covariance `F Fᵀ`.
    pub fn between(&self) -> DMatrix<f64> {
        &self.f * self.f.transpose()
    }

    pub fn total_covariance(&self) -> DMatrix<f64> {
        self.between() + &self.sigma
    }
}

/// Sufficient statistics for EM with `mu` fixed at the global mean.
struct PldaStats {
    n: usize,
    mu: Vec<f64>,
    /// Σ (v − mu)(v − mu)ᵀ
    scatter: DMatrix<f64>,
    /// (utterance count, Σ (v − mu)) per speaker
    speakers: Vec<(usize, DVector<f64>)>,
}

impl PldaStats {
    fn new(set: &EmbeddingSet) -> Result<Self> {
        let groups = speaker_groups(set)?;
        if groups.len() < 2 {
            return Err(Error::BadParams(format!(
                "PLDA needs at least 2 speakers, got {}",
                groups.len()
            )));
        }
        let x = set.to_matrix();
        let mu = column_means(&x);
        let xc = center_rows(&x, &mu);
        let scatter = symmetrize(&xc.tr_mul(&xc));
        let speakers = groups
            .iter()
            .map(|rows| {
                let mut f = DVector::zeros(x.ncols());
                for &i in rows {
                    f += xc.row(i).transpose();
                }
                (rows.len(), f)
            })
            .collect();
        Ok(PldaStats {
            n: x.nrows(),
            mu,
            scatter,
            speakers,
        })
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }
}

fn floor_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let sigma = symmetrize(sigma);
    let d = sigma.nrows();
    let floor = SIGMA_FLOOR * sigma.trace().max(0.0) / d as f64;
    let (vals, vecs) = sym_eigen_desc(&sigma);
    if vals.iter().all(|&v| v >= floor && v > 0.0) {
        return sigma;
    }
    let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE.sqrt() };
    let clamped = DVector::from_iterator(d, vals.iter().map(|&v| v.max(floor)));
    symmetrize(&(&vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose()))
}

fn log_det_chol(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// One EM pass: returns the log-likelihood of `model` and the updated model.
fn em_step(stats: &PldaStats, model: &PldaModel) -> Result<(f64, PldaModel)> {
    let d = stats.dim();
    let q = model.q();
    let n = stats.n as f64;
    let sigma_chol = Cholesky::new(model.sigma.clone())
        .ok_or_else(|| Error::Internal("PLDA residual covariance is not positive definite".into()))?;
    let sigma_inv_scatter = sigma_chol.solve(&stats.scatter);
    let mut ll = -0.5 * (n * d as f64 * LN_2PI + n * log_det_chol(&sigma_chol) + sigma_inv_scatter.trace());

    if q == 0 {
        let sigma = floor_covariance(&(&stats.scatter / n));
        return Ok((
            ll,
            PldaModel {
                mu: stats.mu.clone(),
                f: DMatrix::zeros(d, 0),
                sigma,
            },
        ));
    }

    let sigma_inv_f = sigma_chol.solve(&model.f);
    let a = symmetrize(&(model.f.transpose() * &sigma_inv_f));
    // posterior precision depends on the speaker only through its count
    let mut by_count: BTreeMap<usize, (DMatrix<f64>, f64)> = BTreeMap::new();
    for &(cnt, _) in &stats.speakers {
        if let std::collections::btree_map::Entry::Vacant(e) = by_count.entry(cnt) {
            let p = DMatrix::identity(q, q) + &a * cnt as f64;
            let chol = Cholesky::new(p)
                .ok_or_else(|| Error::Internal("PLDA posterior precision is not positive definite".into()))?;
            let logdet = log_det_chol(&chol);
            e.insert((chol.inverse(), logdet));
        }
    }

    let mut t = DMatrix::zeros(d, q);
    let mut r = DMatrix::zeros(q, q);
    for (cnt, f) in &stats.speakers {
        let (p_inv, logdet) = &by_count[cnt];
        let b = sigma_inv_f.tr_mul(f);
        let eh = p_inv * &b;
        ll += 0.5 * (b.dot(&eh) - logdet);
        t += f * eh.transpose();
        r += (p_inv + &eh * eh.transpose()) * *cnt as f64;
    }

    let r_chol = Cholesky::new(symmetrize(&r))
        .ok_or_else(|| Error::Internal("PLDA latent second moment is singular".into()))?;
    let f_new = r_chol.solve(&t.transpose()).transpose();
    let sigma_new = floor_covariance(&((&stats.scatter - &f_new * t.transpose()) / n));
    Ok((
        ll,
        PldaModel {
            mu: stats.mu.clone(),
            f: f_new,
            sigma: sigma_new,
        },
    ))
}

/// Deterministic starting point: loadings from the leading between-speaker
/// principal directions, residual from the within-speaker covariance.
pub fn init_plda(set: &EmbeddingSet, q: usize) -> Result<PldaModel> {
    if q > set.dim() {
        return Err(Error::QTooLarge { q, dim: set.dim() });
    }
    let groups = speaker_groups(set)?;
    if groups.len() < 2 {
        return Err(Error::BadParams(format!(
            "PLDA needs at least 2 speakers, got {}",
            groups.len()
        )));
    }
    let d = set.dim();
    let (mean, sw, sb) = scatter_matrices(set, &groups);
    let (vals, vecs) = sym_eigen_desc(&sb);
    let mut f = DMatrix::zeros(d, q);
    for j in 0..q {
        let scale = vals[j].max(0.0).sqrt();
        f.set_column(j, &(vecs.column(j) * scale));
    }
    let mut trace = sw.trace();
    if !(trace > 0.0) {
        trace = (sw.clone() + &sb).trace();
    }
    let sigma = floor_covariance(&(&sw + DMatrix::identity(d, d) * (INIT_LOADING * trace / d as f64)));
    Ok(PldaModel { mu: mean, f, sigma })
}

/// Runs `iters` EM iterations from `init`. Returns the model and the
/// training log-likelihood before each iteration and after the last one.
pub fn fit_plda_from(set: &EmbeddingSet, init: &PldaModel, iters: usize) -> Result<(PldaModel, Vec<f64>)> {
    if init.dim() != set.dim() {
        return Err(Error::DimMismatch {
            expected: set.dim(),
            found: init.dim(),
        });
    }
    let stats = PldaStats::new(set)?;
    let mut model = PldaModel {
        mu: stats.mu.clone(),
        f: init.f.clone(),
        sigma: floor_covariance(&init.sigma),
    };
    let mut trace = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let (ll, next) = em_step(&stats, &model)?;
        trace.push(ll);
        model = next;
    }
    trace.push(em_step(&stats, &model)?.0);
    Ok((model, trace))
}

pub fn fit_plda(set: &EmbeddingSet, q: usize, iters: usize) -> Result<PldaModel> {
    if iters == 0 {
        return Err(Error::BadParams("PLDA needs at least one EM iteration".into()));
    }
    let init = init_plda(set, q)?;
    Ok(fit_plda_from(set, &init, iters)?.0)
}

/// Log-likelihood of a labeled set under `model`, speakers independent.
pub fn plda_log_likelihood(model: &PldaModel, set: &EmbeddingSet) -> Result<f64> {
    if model.dim() != set.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            found: set.dim(),
        });
    }
    let groups = speaker_groups(set)?;
    let x = center_rows(&set.to_matrix(), &model.mu);
    let stats = PldaStats {
        n: x.nrows(),
        mu: model.mu.clone(),
        scatter: symmetrize(&x.tr_mul(&x)),
        speakers: groups
            .iter()
            .map(|rows| {
                let mut f = DVector::zeros(x.ncols());
                for &i in rows {
                    f += x.row(i).transpose();
                }
                (rows.len(), f)
            })
            .collect(),
    };
    Ok(em_step(&stats, model)?.0)
}

/// PLDA in the basis that whitens the residual and diagonalizes the
/// between-speaker covariance, where the trial LLR separates per dimension.
#[derive(Debug, Clone)]
pub struct PreparedPlda {
    mu: Vec<f64>,
    transform: DMatrix<f64>,
    /// per-dimension constant, squared-norm and cross-term coefficients
    offset: f64,
    quad: Vec<f64>,
    cross: Vec<f64>,
}

impl PreparedPlda {
    pub fn new(model: &PldaModel) -> Result<Self> {
        let d = model.dim();
        let (vals, vecs) = sym_eigen_desc(&model.sigma);
        if !(vals[d - 1] > 0.0) {
            return Err(Error::Internal("PLDA residual covariance is not positive definite".into()));
        }
        let mut whiten = vecs.transpose();
        for (i, mut row) in whiten.row_iter_mut().enumerate() {
            row /= vals[i].sqrt();
        }
        let (psi, transform) = if model.q() == 0 {
            (vec![0.0; d], whiten)
        } else {
            let wf = &whiten * &model.f;
            let (psi, rot) = sym_eigen_desc(&symmetrize(&(&wf * wf.transpose())));
            (psi.into_iter().map(|v| v.max(0.0)).collect(), rot.transpose() * whiten)
        };
        let mut offset = 0.0;
        let mut quad = Vec::with_capacity(d);
        let mut cross = Vec::with_capacity(d);
        for &p in &psi {
            offset += p.ln_1p() - 0.5 * (2.0 * p).ln_1p();
            quad.push(-0.5 * p * p / ((1.0 + p) * (1.0 + 2.0 * p)));
            cross.push(p / (1.0 + 2.0 * p));
        }
        Ok(PreparedPlda {
            mu: model.mu.clone(),
            transform,
            offset,
            quad,
            cross,
        })
    }

    pub fn project(&self, v: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(v.len(), v.iter().zip(&self.mu).map(|(a, m)| a - m));
        &self.transform * centered
    }

    /// Same-speaker vs different-speaker log-likelihood ratio for projected vectors.
    pub fn llr_projected(&self, e: &DVector<f64>, t: &DVector<f64>) -> f64 {
        let mut s = self.offset;
        for k in 0..e.len() {
            s += self.quad[k] * (e[k] * e[k] + t[k] * t[k]) + self.cross[k] * e[k] * t[k];
        }
        s
    }

    pub fn llr(&self, e: &[f64], t: &[f64]) -> f64 {
        self.llr_projected(&self.project(e), &self.project(t))
    }
}

/// Resolves an enrollment id: an utterance id, else the average of all
/// rows of that speaker.
fn enroll_vector(set: &EmbeddingSet, by_utt: &HashMap<&str, usize>, by_spk: &HashMap<&str, Vec<usize>>, id: &str) -> Option<Vec<f64>> {
    if let Some(&i) = by_utt.get(id) {
        return Some(set.records()[i].vector.clone());
    }
    let rows = by_spk.get(id)?;
    let mut avg = vec![0.0; set.dim()];
    for &i in rows {
        for (a, v) in avg.iter_mut().zip(&set.records()[i].vector) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= rows.len() as f64;
    }
    Some(avg)
}

/// Scores every trial with the PLDA log-likelihood ratio, in trial order.
pub fn score_trials(model: &PldaModel, enroll: &EmbeddingSet, test: &EmbeddingSet, trials: &TrialSet) -> Result<ScoreSet> {
    for s in [enroll, test] {
        if s.dim() != model.dim() {
            return Err(Error::DimMismatch {
                expected: model.dim(),
                found: s.dim(),
            });
        }
    }
    let prepared = PreparedPlda::new(model)?;

    let enroll_utt: HashMap<&str, usize> = enroll.records().iter().enumerate().map(|(i, r)| (r.utt_id.as_str(), i)).collect();
    let mut enroll_spk: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in enroll.records().iter().enumerate() {
        if !r.spk_id.is_empty() {
            enroll_spk.entry(r.spk_id.as_str()).or_default().push(i);
        }
    }
    let test_utt: HashMap<&str, usize> = test.records().iter().enumerate().map(|(i, r)| (r.utt_id.as_str(), i)).collect();

    let mut enroll_proj: HashMap<&str, DVector<f64>> = HashMap::new();
    let mut test_proj: HashMap<&str, DVector<f64>> = HashMap::new();
    for t in &trials.trials {
        if !enroll_proj.contains_key(t.enroll.as_str()) {
            let v = enroll_vector(enroll, &enroll_utt, &enroll_spk, &t.enroll)
                .ok_or_else(|| Error::UnknownId(t.enroll.clone()))?;
            enroll_proj.insert(t.enroll.as_str(), prepared.project(&v));
        }
        if !test_proj.contains_key(t.test.as_str()) {
            let &i = test_utt
                .get(t.test.as_str())
                .ok_or_else(|| Error::UnknownId(t.test.clone()))?;
            test_proj.insert(t.test.as_str(), prepared.project(&test.records()[i].vector));
        }
    }

    let entries = trials
        .trials
        .par_iter()
        .map(|t| ScoredTrial {
            trial: t.clone(),
            score: prepared.llr_projected(&enroll_proj[t.enroll.as_str()], &test_proj[t.test.as_str()]),
        })
        .collect();
    ScoreSet::new(entries)
}

// ---------------------------------------------------------------- chain

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendConfig {
    /// `None` skips LDA.
    pub lda_dim: Option<usize>,
    /// Clamped to the PLDA input dimension.
    pub plda_q: usize,
    pub plda_iters: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            lda_dim: Some(200),
            plda_q: 200,
            plda_iters: 10,
        }
    }
}

/// Trained preprocessing chain: (LDA) → length normalization → PLDA.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendModel {
    /// Name of the representation the chain was trained on (e.g. `xg`).
    pub input: String,
    pub lda: Option<LdaModel>,
    pub plda: PldaModel,
}

impl BackendModel {
    /// Trains the chain on a labeled background set. A `shared_lda` is used
    /// as is instead of fitting a new projection.
    pub fn train(set: &EmbeddingSet, input: &str, cfg: &BackendConfig, shared_lda: Option<LdaModel>) -> Result<Self> {
        let lda = match (shared_lda, cfg.lda_dim) {
            (Some(l), _) => Some(l),
            (None, Some(r)) => Some(fit_lda(set, r)?),
            (None, None) => None,
        };
        let projected = match &lda {
            Some(l) => project_lda(l, set)?,
            None => set.clone(),
        };
        let normalized = length_normalize(&projected)?;
        let q = cfg.plda_q.min(normalized.dim());
        let plda = fit_plda(&normalized, q, cfg.plda_iters)?;
        Ok(BackendModel {
            input: input.to_string(),
            lda,
            plda,
        })
    }

    pub fn preprocess(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        let projected = match &self.lda {
            Some(l) => project_lda(l, set)?,
            None => set.clone(),
        };
        length_normalize(&projected)
    }

    pub fn score(&self, enroll: &EmbeddingSet, test: &EmbeddingSet, trials: &TrialSet) -> Result<ScoreSet> {
        let e = self.preprocess(enroll)?;
        let t = self.preprocess(test)?;
        score_trials(&self.plda, &e, &t, trials)
    }

    /// Preprocessing order, e.g. `input=xg;lda=20;lnorm;plda=20`.
    pub fn chain(&self) -> String {
        let mut parts = vec![format!("input={}", self.input)];
        if let Some(l) = &self.lda {
            parts.push(format!("lda={}", l.r()));
        }
        parts.push("lnorm".into());
        parts.push(format!("plda={}", self.plda.q()));
        parts.join(";")
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new();
        let mut sections = vec![("chain", Section::Text(self.chain()))];
        if let Some(l) = &self.lda {
            sections.push(("lda_mean", Section::Vector(l.mean.clone())));
            sections.push(("lda_projection", Section::Matrix(l.projection.clone())));
        }
        sections.push(("plda_mu", Section::Vector(self.plda.mu.clone())));
        sections.push(("plda_F", Section::Matrix(self.plda.f.clone())));
        sections.push(("plda_Sigma", Section::Matrix(self.plda.sigma.clone())));
        for (name, s) in sections {
            c.insert(name, s).expect("section names are unique");
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let chain = c.text("chain")?;
        let mut input = None;
        let mut has_lda = false;
        for step in chain.split(';') {
            match step.split_once('=') {
                Some(("input", v)) => input = Some(v.to_string()),
                Some(("lda", _)) => has_lda = true,
                Some(("plda", _)) => {}
                None if step == "lnorm" => {}
                _ => {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("unknown chain step `{step}`"),
                    })
                }
            }
        }
        let lda = if has_lda {
            Some(LdaModel {
                mean: c.vector("lda_mean")?.to_vec(),
                projection: c.matrix("lda_projection")?.clone(),
            })
        } else {
            None
        };
        let plda = PldaModel {
            mu: c.vector("plda_mu")?.to_vec(),
            f: c.matrix("plda_F")?.clone(),
            sigma: c.matrix("plda_Sigma")?.clone(),
        };
        Ok(BackendModel {
            input: input.unwrap_or_default(),
            lda,
            plda,
        })
    }
}
