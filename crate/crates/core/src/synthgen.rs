//! Linear-Gaussian paired-embedding generator with closed-form population
//! covariances and canonical correlations.
//!
//! Per speaker `s` a latent `z_s ~ N(0, I_q)` is drawn; per utterance a
//! shared latent `u ~ N(0, I_q)`. The two views are
//!
//! ```text
//! i = L_i (a_i z_s + u) + σ_i ε_i
//! x = L_x (a_x z_s + u) + σ_x ε_x + ν η
//! ```
//!
//! with independent standard-normal `ε_i`, `ε_x`, `η`. Every draw comes from
//! its own ChaCha stream keyed by (draw kind, speaker, utterance), so output
//! is a pure function of the seed and adding utterances or speakers never
//! perturbs earlier draws.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embeddings::{EmbeddingSet, Record};
use crate::error::{Error, Result};
use crate::linalg::{svd_desc, sym_eigen_desc, symmetrize};
use crate::trials::{Label, Trial, TrialKey, TrialSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Draw {
    Speaker = 0,
    Utterance = 1,
    NoiseI = 2,
    NoiseX = 3,
    Nuisance = 4,
    LoadingI = 5,
    LoadingX = 6,
    Trials = 7,
}

const INDEX_BITS: u32 = 30;
const INDEX_LIMIT: usize = 1 << INDEX_BITS;

fn stream(seed: u64, kind: Draw, speaker: usize, utt: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"xgvecgen");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((kind as u64) << 60) | ((speaker as u64) << INDEX_BITS) | utt as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub q_shared: usize,
    pub d_i: usize,
    pub d_x: usize,
    /// d_i × q_shared
    pub loading_i: DMatrix<f64>,
    /// d_x × q_shared
    pub loading_x: DMatrix<f64>,
    pub speaker_strength_i: f64,
    pub speaker_strength_x: f64,
    pub noise_i: f64,
    pub noise_x: f64,
    /// Extra isotropic noise on the x-view only.
    pub nuisance_x: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale background configuration: 500 speakers × 20 utterances,
    /// 60/50-dimensional views sharing a 20-dimensional latent.
    pub fn desk_default(seed: u64) -> Self {
        let (d_i, d_x, q) = (60, 50, 20);
        let (loading_i, loading_x) = random_loadings(d_i, d_x, q, seed);
        SynthConfig {
            n_speakers: 500,
            utts_per_speaker: 20,
            q_shared: q,
            d_i,
            d_x,
            loading_i,
            loading_x,
            speaker_strength_i: 2.0,
            speaker_strength_x: 2.0,
            noise_i: 0.5,
            noise_x: 0.5,
            nuisance_x: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if self.n_speakers == 0 || self.utts_per_speaker == 0 {
            return bad("n_speakers and utts_per_speaker must be positive".into());
        }
        if self.n_speakers >= INDEX_LIMIT || self.utts_per_speaker >= INDEX_LIMIT {
            return bad(format!("speaker and utterance counts must be below {INDEX_LIMIT}"));
        }
        if self.d_i == 0 || self.d_x == 0 {
            return bad("view dimensions must be positive".into());
        }
        if self.q_shared > self.d_i.min(self.d_x) {
            return bad(format!(
                "q_shared {} exceeds min(d_i, d_x) = {}",
                self.q_shared,
                self.d_i.min(self.d_x)
            ));
        }
        if self.loading_i.shape() != (self.d_i, self.q_shared) {
            return bad(format!("loading_i must be {}×{}", self.d_i, self.q_shared));
        }
        if self.loading_x.shape() != (self.d_x, self.q_shared) {
            return bad(format!("loading_x must be {}×{}", self.d_x, self.q_shared));
        }
        if self.loading_i.iter().chain(self.loading_x.iter()).any(|v| !v.is_finite()) {
            return bad("loadings must be finite".into());
        }
        let scales = [
            ("speaker_strength_i", self.speaker_strength_i),
            ("speaker_strength_x", self.speaker_strength_x),
            ("noise_i", self.noise_i),
            ("noise_x", self.noise_x),
            ("nuisance_x", self.nuisance_x),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    /// Reads generator keys from a parsed `key=value` map, removing them.
    /// Missing keys keep the values of `base`; loadings are redrawn from
    /// `loading_seed` (default: the seed) when dimensions change or the key
    /// is given, unless explicit `loading_i` / `loading_x` rows are supplied.
    pub fn take_from_kv(map: &mut BTreeMap<String, String>, base: SynthConfig) -> Result<Self> {
        let mut cfg = base;
        take_parsed(map, "n_speakers", &mut cfg.n_speakers)?;
        take_parsed(map, "utts_per_speaker", &mut cfg.utts_per_speaker)?;
        let dims_before = (cfg.d_i, cfg.d_x, cfg.q_shared);
        take_parsed(map, "q_shared", &mut cfg.q_shared)?;
        take_parsed(map, "d_i", &mut cfg.d_i)?;
        take_parsed(map, "d_x", &mut cfg.d_x)?;
        take_parsed(map, "speaker_strength_i", &mut cfg.speaker_strength_i)?;
        take_parsed(map, "speaker_strength_x", &mut cfg.speaker_strength_x)?;
        take_parsed(map, "noise_i", &mut cfg.noise_i)?;
        take_parsed(map, "noise_x", &mut cfg.noise_x)?;
        take_parsed(map, "nuisance_x", &mut cfg.nuisance_x)?;
        take_parsed(map, "seed", &mut cfg.seed)?;
        let mut loading_seed = None;
        if let Some(v) = map.remove("loading_seed") {
            loading_seed = Some(parse_value::<u64>("loading_seed", &v)?);
        }
        if loading_seed.is_some() || dims_before != (cfg.d_i, cfg.d_x, cfg.q_shared) {
            let (li, lx) = random_loadings(cfg.d_i, cfg.d_x, cfg.q_shared, loading_seed.unwrap_or(cfg.seed));
            cfg.loading_i = li;
            cfg.loading_x = lx;
        }
        if let Some(v) = map.remove("loading_i") {
            cfg.loading_i = parse_matrix("loading_i", &v, cfg.d_i, cfg.q_shared)?;
        }
        if let Some(v) = map.remove("loading_x") {
            cfg.loading_x = parse_matrix("loading_x", &v, cfg.d_x, cfg.q_shared)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Gaussian loadings with entries of variance `1/q`, one stream per view.
pub fn random_loadings(d_i: usize, d_x: usize, q: usize, loading_seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let scale = 1.0 / (q.max(1) as f64).sqrt();
    let mut ri = stream(loading_seed, Draw::LoadingI, 0, 0);
    let mut rx = stream(loading_seed, Draw::LoadingX, 0, 0);
    let li = DMatrix::from_row_iterator(d_i, q, (0..d_i * q).map(|_| scale * ri.sample::<f64, _>(StandardNormal)));
    let lx = DMatrix::from_row_iterator(d_x, q, (0..d_x * q).map(|_| scale * rx.sample::<f64, _>(StandardNormal)));
    (li, lx)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate key `{}`", k.trim()),
            });
        }
    }
    Ok(map)
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::BadConfig(format!("cannot parse `{key}` value `{v}`")))
}

pub(crate) fn take_parsed<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = map.remove(key) {
        *slot = parse_value(key, &v)?;
    }
    Ok(())
}

fn parse_matrix(key: &str, v: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let vals = v
        .split(',')
        .map(|s| parse_value::<f64>(key, s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != rows * cols {
        return Err(Error::BadConfig(format!(
            "`{key}` needs {} row-major values, got {}",
            rows * cols,
            vals.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Two views over the same utterances, positionally paired.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddingSets {
    pub i_view: EmbeddingSet,
    pub x_view: EmbeddingSet,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:05}")
}

pub fn utterance_id(s: usize, u: usize) -> String {
    format!("spk{s:05}-utt{u:03}")
}

pub fn generate_paired(cfg: &SynthConfig) -> Result<PairedEmbeddingSets> {
    cfg.validate()?;
    let q = cfg.q_shared;
    let n = cfg.n_speakers * cfg.utts_per_speaker;
    let mut i_recs = Vec::with_capacity(n);
    let mut x_recs = Vec::with_capacity(n);
    for s in 0..cfg.n_speakers {
        let z = normals(&mut stream(cfg.seed, Draw::Speaker, s, 0), q);
        let spk = speaker_id(s);
        for u in 0..cfg.utts_per_speaker {
            let shared = normals(&mut stream(cfg.seed, Draw::Utterance, s, u), q);
            let eps_i = normals(&mut stream(cfg.seed, Draw::NoiseI, s, u), cfg.d_i);
            let eps_x = normals(&mut stream(cfg.seed, Draw::NoiseX, s, u), cfg.d_x);
            let eta = normals(&mut stream(cfg.seed, Draw::Nuisance, s, u), cfg.d_x);
            let lat_i = &z * cfg.speaker_strength_i + &shared;
            let lat_x = &z * cfg.speaker_strength_x + &shared;
            let vi = &cfg.loading_i * lat_i + eps_i * cfg.noise_i;
            let vx = &cfg.loading_x * lat_x + eps_x * cfg.noise_x + eta * cfg.nuisance_x;
            let utt = utterance_id(s, u);
            i_recs.push(Record::new(utt.clone(), spk.clone(), vi.iter().copied().collect()));
            x_recs.push(Record::new(utt, spk.clone(), vx.iter().copied().collect()));
        }
    }
    Ok(PairedEmbeddingSets {
        i_view: EmbeddingSet::new(cfg.d_i, i_recs)?,
        x_view: EmbeddingSet::new(cfg.d_x, x_recs)?,
    })
}

/// Population covariances `(Σ_i, Σ_x, Σ_ix)` of one utterance's views.
pub fn analytic_covariances(cfg: &SynthConfig) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let (ai, ax) = (cfg.speaker_strength_i, cfg.speaker_strength_x);
    let li = &cfg.loading_i;
    let lx = &cfg.loading_x;
    let sigma_i = li * li.transpose() * (ai * ai + 1.0) + DMatrix::identity(cfg.d_i, cfg.d_i) * cfg.noise_i.powi(2);
    let sigma_x = lx * lx.transpose() * (ax * ax + 1.0)
        + DMatrix::identity(cfg.d_x, cfg.d_x) * (cfg.noise_x.powi(2) + cfg.nuisance_x.powi(2));
    let sigma_ix = li * lx.transpose() * (ai * ax + 1.0);
    Ok((symmetrize(&sigma_i), symmetrize(&sigma_x), sigma_ix))
}

/// Population canonical correlations, `min(d_i, d_x)` values, non-increasing.
pub fn analytic_canonical_correlations(cfg: &SynthConfig) -> Result<Vec<f64>> {
    let (si, sx, six) = analytic_covariances(cfg)?;
    let k = cfg.d_i.min(cfg.d_x);
    let mut rho = match (Cholesky::new(si.clone()), Cholesky::new(sx.clone())) {
        (Some(ci), Some(cx)) => {
            // eigenvalues of L_i⁻¹ Σ_ix Σ_x⁻¹ Σ_xi L_i⁻ᵀ are ρ²
            let li = ci.l();
            let a = li.solve_lower_triangular(&six).expect("Cholesky factor is nonsingular");
            let m = &a * cx.solve(&a.transpose());
            let (vals, _) = sym_eigen_desc(&symmetrize(&m));
            vals.into_iter().take(k).map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>()
        }
        _ => {
            let wi = pseudo_whitener(&si);
            let wx = pseudo_whitener(&sx);
            let (_, s, _) = svd_desc(&(wi.transpose() * six * wx));
            s
        }
    };
    rho.resize(k, 0.0);
    for r in &mut rho {
        *r = r.clamp(0.0, 1.0);
    }
    Ok(rho)
}

fn pseudo_whitener(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(sigma);
    let top = vals[0].max(0.0);
    let rank = vals.iter().take_while(|&&v| top > 0.0 && v > 1e-12 * top).count();
    let mut w = vecs.columns(0, rank).into_owned();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= vals[j].sqrt();
    }
    w
}

/// Samples a keyed trial list. Each speaker's utterances are split in
/// order: the first half enrolls, the rest are tests. Target trials pair
/// enrollment and test utterances of one speaker, nontargets of two.
pub fn make_trials(sets: &PairedEmbeddingSets, n_target: usize, n_nontarget: usize, seed: u64) -> Result<TrialSet> {
    let recs = sets.i_view.records();
    let mut by_spk: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        if r.spk_id.is_empty() {
            return Err(Error::MissingLabels);
        }
        by_spk.entry(r.spk_id.as_str()).or_default().push(i);
    }
    let mut enroll = Vec::new();
    let mut test = Vec::new();
    for rows in by_spk.values() {
        let half = rows.len() / 2;
        enroll.extend_from_slice(&rows[..half]);
        test.extend_from_slice(&rows[half..]);
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for (ei, &e) in enroll.iter().enumerate() {
        for (ti, &t) in test.iter().enumerate() {
            if recs[e].spk_id == recs[t].spk_id {
                targets.push((ei, ti));
            } else {
                nontargets.push((ei, ti));
            }
        }
    }
    if n_target > targets.len() {
        return Err(Error::NotEnoughPairs {
            kind: "target",
            requested: n_target,
            available: targets.len(),
        });
    }
    if n_nontarget > nontargets.len() {
        return Err(Error::NotEnoughPairs {
            kind: "nontarget",
            requested: n_nontarget,
            available: nontargets.len(),
        });
    }
    let mut rng = stream(seed, Draw::Trials, 0, 0);
    let mut chosen: Vec<((usize, usize), Label)> = Vec::with_capacity(n_target + n_nontarget);
    for i in index::sample(&mut rng, targets.len(), n_target) {
        chosen.push((targets[i], Label::Target));
    }
    for i in index::sample(&mut rng, nontargets.len(), n_nontarget) {
        chosen.push((nontargets[i], Label::Nontarget));
    }
    chosen.sort_by_key(|(pair, _)| *pair);
    let entries: Vec<(Trial, Label)> = chosen
        .into_iter()
        .map(|((ei, ti), l)| (Trial::new(recs[enroll[ei]].utt_id.clone(), recs[test[ti]].utt_id.clone()), l))
        .collect();
    let key = TrialKey::new(entries)?;
    Ok(TrialSet::from_key(key))
}
