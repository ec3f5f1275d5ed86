//! Command-line driver. Every stage reads and writes files under one
//! output directory, so `pipeline` is literally the composition of the
//! individual subcommands.
//!
//! ```text
//! <out>/vectors/background_{i,x,xg,id}.csv  eval_{i,x,xg,id}.csv  trials.tsv  key.tsv
//! <out>/models/cca.xgf  backend_<rep>.xgf
//! <out>/scores/<rep>.tsv
//! <out>/reports/<rep>.txt  <rep>_det.csv  summary.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::{BackendConfig, BackendModel};
use crate::cca::{fit_cca, transform, CcaModel, CcaOptions, View};
use crate::container::{load_model_container, save_model_container};
use crate::embeddings::{load_embedding_set, save_embedding_set};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, DcfParams, EvalReport};
use crate::synthgen::{generate_paired, make_trials, parse_kv, take_parsed, PairedEmbeddingSets, SynthConfig};
use crate::trials::{read_text, write_text, ScoreSet, TrialKey, TrialSet};

const LOCK_NAME: &str = ".xgvec.lock";
const EVAL_PREFIX: &str = "eval-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Rep {
    I,
    X,
    Xg,
    Id,
}

impl Rep {
    pub const ALL: [Rep; 4] = [Rep::I, Rep::X, Rep::Xg, Rep::Id];

    pub fn name(self) -> &'static str {
        match self {
            Rep::I => "i",
            Rep::X => "x",
            Rep::Xg => "xg",
            Rep::Id => "id",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CcaView {
    Xg,
    Id,
}

#[derive(Parser, Debug)]
#[command(name = "xgvec", version, about = "CCA-transformed embedding back-end: synthesize, train, score, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Output directory holding vectors/, models/, scores/, reports/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct BackendFlags {
    /// LDA output dimension; 0 disables LDA.
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    plda_q: Option<usize>,
    #[arg(long)]
    plda_iters: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct DcfFlags {
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate paired background and evaluation sets plus a keyed trial list.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the CCA model on paired background vectors.
    TrainCca {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        background_i: Option<PathBuf>,
        #[arg(long)]
        background_x: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Apply the CCA model: x → x_g (`--view xg`) or i → i_d (`--view id`).
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        view: CcaView,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Transform a single file instead of the background/eval sets.
        #[arg(long, requires = "output")]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        output: Option<PathBuf>,
    },
    /// Train LDA, length normalization and PLDA for one representation.
    TrainBackend {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        view: Rep,
        #[command(flatten)]
        backend: BackendFlags,
        /// Reuse the LDA stored in another back-end container.
        #[arg(long)]
        shared_lda: Option<PathBuf>,
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score the trial list with a trained back-end.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        view: Rep,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        trials: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute EER, minDCF and the DET curve of a score file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        view: Option<Rep>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Also write the report text here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        dcf: DcfFlags,
    },
    /// Write the comparative summary of all scored representations.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        dcf: DcfFlags,
    },
    /// Run every stage for i, x, xg and id and write the summary.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backend: BackendFlags,
        #[command(flatten)]
        dcf: DcfFlags,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs one command line (without the program name) and returns the
/// process exit code: 0 success, 1 runtime error, 2 usage error.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("xgvec".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Usage: xgvec <COMMAND> [OPTIONS]; see `xgvec --help`");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

// ------------------------------------------------------------ settings

/// Resolved experiment settings: generator, evaluation protocol, back-end
/// chain and cost parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub eval_speakers: usize,
    pub eval_utts_per_speaker: usize,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub cca_ridge: f64,
    pub backend: BackendConfig,
    pub dcf: DcfParams,
}

impl PipelineConfig {
    /// Desk-scale defaults: 100 evaluation speakers × 10 utterances,
    /// 2500 target and 25000 nontarget trials, LDA and PLDA at 20 dims.
    pub fn desk_default(seed: u64) -> Self {
        PipelineConfig {
            synth: SynthConfig::desk_default(seed),
            eval_speakers: 100,
            eval_utts_per_speaker: 10,
            n_target: 2500,
            n_nontarget: 25000,
            cca_ridge: CcaOptions::default().ridge,
            backend: BackendConfig {
                lda_dim: Some(20),
                plda_q: 20,
                plda_iters: 10,
            },
            dcf: DcfParams::default(),
        }
    }

    /// Parses a settings file. `seed` overrides the file's `seed` key; the
    /// default loadings are drawn from the effective seed.
    pub fn from_kv_text(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut map = parse_kv(text)?;
        Self::from_map(&mut map, seed)
    }

    fn from_map(map: &mut BTreeMap<String, String>, seed: Option<u64>) -> Result<Self> {
        let mut file_seed = 0u64;
        take_parsed(map, "seed", &mut file_seed)?;
        let seed = seed.unwrap_or(file_seed);
        let mut cfg = PipelineConfig::desk_default(seed);
        cfg.synth = SynthConfig::take_from_kv(map, cfg.synth)?;
        take_parsed(map, "eval_speakers", &mut cfg.eval_speakers)?;
        take_parsed(map, "eval_utts_per_speaker", &mut cfg.eval_utts_per_speaker)?;
        take_parsed(map, "n_target", &mut cfg.n_target)?;
        take_parsed(map, "n_nontarget", &mut cfg.n_nontarget)?;
        take_parsed(map, "cca_ridge", &mut cfg.cca_ridge)?;
        let mut lda = cfg.backend.lda_dim.unwrap_or(0);
        take_parsed(map, "lda_dim", &mut lda)?;
        cfg.backend.lda_dim = (lda > 0).then_some(lda);
        take_parsed(map, "plda_q", &mut cfg.backend.plda_q)?;
        take_parsed(map, "plda_iters", &mut cfg.backend.plda_iters)?;
        take_parsed(map, "p_target", &mut cfg.dcf.p_target)?;
        take_parsed(map, "c_miss", &mut cfg.dcf.c_miss)?;
        take_parsed(map, "c_fa", &mut cfg.dcf.c_fa)?;
        if let Some(k) = map.keys().next() {
            return Err(Error::BadConfig(format!("unknown config key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.eval_speakers < 2 || self.eval_utts_per_speaker < 2 {
            return Err(Error::BadConfig(
                "evaluation needs at least 2 speakers with at least 2 utterances".into(),
            ));
        }
        if !(self.cca_ridge.is_finite() && self.cca_ridge >= 0.0) {
            return Err(Error::BadConfig(format!("cca_ridge must be nonnegative, got {}", self.cca_ridge)));
        }
        if self.backend.plda_iters == 0 {
            return Err(Error::BadConfig("plda_iters must be positive".into()));
        }
        self.dcf.validate()
    }

    /// Synthetic evaluation speakers: same loadings, independent seed.
    pub fn eval_synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.eval_speakers,
            utts_per_speaker: self.eval_utts_per_speaker,
            seed: derive_seed(self.synth.seed, 1),
            ..self.synth.clone()
        }
    }

    pub fn trial_seed(&self) -> u64 {
        derive_seed(self.synth.seed, 2)
    }

    fn apply_backend(&mut self, f: &BackendFlags) {
        if let Some(r) = f.lda_dim {
            self.backend.lda_dim = (r > 0).then_some(r);
        }
        if let Some(q) = f.plda_q {
            self.backend.plda_q = q;
        }
        if let Some(n) = f.plda_iters {
            self.backend.plda_iters = n;
        }
    }

    fn apply_dcf(&mut self, f: &DcfFlags) {
        if let Some(p) = f.p_target {
            self.dcf.p_target = p;
        }
        if let Some(c) = f.c_miss {
            self.dcf.c_miss = c;
        }
        if let Some(c) = f.c_fa {
            self.dcf.c_fa = c;
        }
    }
}

/// SplitMix64 finalizer applied to `seed + k·γ`.
fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn load_settings(common: &Common) -> Result<PipelineConfig> {
    let cfg = match &common.config {
        Some(p) => PipelineConfig::from_kv_text(&read_text(p)?, common.seed)?,
        None => PipelineConfig::desk_default(common.seed.unwrap_or(0)),
    };
    Ok(cfg)
}

// -------------------------------------------------------------- layout

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn vectors(&self, split: &str, rep: &str) -> PathBuf {
        self.root.join("vectors").join(format!("{split}_{rep}.csv"))
    }
    fn trials(&self) -> PathBuf {
        self.root.join("vectors").join("trials.tsv")
    }
    fn key(&self) -> PathBuf {
        self.root.join("vectors").join("key.tsv")
    }
    fn cca(&self) -> PathBuf {
        self.root.join("models").join("cca.xgf")
    }
    fn backend(&self, rep: Rep) -> PathBuf {
        self.root.join("models").join(format!("backend_{}.xgf", rep.name()))
    }
    fn scores(&self, rep: Rep) -> PathBuf {
        self.root.join("scores").join(format!("{}.tsv", rep.name()))
    }
    fn report(&self, rep: Rep) -> PathBuf {
        self.root.join("reports").join(format!("{}.txt", rep.name()))
    }
    fn det(&self, rep: Rep) -> PathBuf {
        self.root.join("reports").join(format!("{}_det.csv", rep.name()))
    }
    fn summary(&self) -> PathBuf {
        self.root.join("reports").join("summary.txt")
    }
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(LOCK_NAME);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::BadParams(format!(
                    "output directory {} is in use (remove {} if no other run is active)",
                    root.display(),
                    path.display()
                )),
                _ => Error::io(&path, e),
            })?;
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    write_text(path, text)
}

/// Opens the output directory if one was given. `needed` makes it mandatory.
fn open_out(common: &Common, needed: bool) -> CliResult<Option<(Layout, DirLock)>> {
    match &common.out {
        Some(root) => {
            let lock = DirLock::acquire(root)?;
            Ok(Some((Layout { root: root.clone() }, lock)))
        }
        None if needed => Err(Failure::Usage("--out is required for this command".into())),
        None => Ok(None),
    }
}

/// Explicit path, else the layout default, else a usage error.
fn pick(explicit: Option<PathBuf>, layout: Option<&Layout>, default: impl FnOnce(&Layout) -> PathBuf, flag: &str) -> CliResult<PathBuf> {
    match (explicit, layout) {
        (Some(p), _) => Ok(p),
        (None, Some(l)) => Ok(default(l)),
        (None, None) => Err(Failure::Usage(format!("either --{flag} or --out is required"))),
    }
}

// -------------------------------------------------------------- stages

fn stage_synth(l: &Layout, cfg: &PipelineConfig) -> Result<()> {
    let bg = generate_paired(&cfg.synth)?;
    let ev = generate_paired(&cfg.eval_synth())?;
    let ev = PairedEmbeddingSets {
        i_view: ev.i_view.with_id_prefix(EVAL_PREFIX),
        x_view: ev.x_view.with_id_prefix(EVAL_PREFIX),
    };
    let trials = make_trials(&ev, cfg.n_target, cfg.n_nontarget, cfg.trial_seed())?;
    for (split, sets) in [("background", &bg), ("eval", &ev)] {
        for (rep, set) in [("i", &sets.i_view), ("x", &sets.x_view)] {
            let p = l.vectors(split, rep);
            ensure_parent(&p)?;
            save_embedding_set(&p, set)?;
        }
    }
    write_file(&l.trials(), &trials.to_tsv())?;
    let key = trials.key.as_ref().expect("generated trials are keyed");
    write_file(&l.key(), &key.to_tsv())
}

fn stage_train_cca(bg_i: &Path, bg_x: &Path, model: &Path, ridge: f64) -> Result<CcaModel> {
    let phi_i = load_embedding_set(bg_i, None)?;
    let phi_x = load_embedding_set(bg_x, None)?;
    let opts = CcaOptions {
        ridge,
        ..CcaOptions::default()
    };
    let m = fit_cca(&phi_i, &phi_x, &opts)?;
    ensure_parent(model)?;
    save_model_container(model, &m.to_container())?;
    Ok(m)
}

fn cca_view(v: CcaView) -> (View, &'static str, &'static str) {
    match v {
        CcaView::Xg => (View::XToGenerative, "x", "xg"),
        CcaView::Id => (View::IToDiscriminative, "i", "id"),
    }
}

fn stage_transform(model: &CcaModel, view: View, input: &Path, output: &Path) -> Result<()> {
    let set = load_embedding_set(input, None)?;
    let out = transform(model, &set, view)?;
    ensure_parent(output)?;
    save_embedding_set(output, &out)
}

fn stage_transform_layout(l: &Layout, model: &CcaModel, v: CcaView) -> Result<()> {
    let (view, from, to) = cca_view(v);
    for split in ["background", "eval"] {
        stage_transform(model, view, &l.vectors(split, from), &l.vectors(split, to))?;
    }
    Ok(())
}

fn stage_train_backend(rep: Rep, background: &Path, model: &Path, cfg: &BackendConfig, shared: Option<&Path>) -> Result<()> {
    let set = load_embedding_set(background, None)?;
    let shared_lda = match shared {
        Some(p) => {
            let other = BackendModel::from_container(&load_model_container(p)?)?;
            let lda = other
                .lda
                .ok_or_else(|| Error::BadParams(format!("{} holds no LDA projection", p.display())))?;
            if lda.dim() != set.dim() {
                return Err(Error::DimMismatch {
                    expected: lda.dim(),
                    found: set.dim(),
                });
            }
            Some(lda)
        }
        None => None,
    };
    if let Some(r) = cfg.lda_dim.filter(|_| shared_lda.is_none()) {
        if r > set.dim() {
            return Err(Error::RankExceeded {
                requested: r,
                max: set.dim(),
            });
        }
    }
    let m = BackendModel::train(&set, rep.name(), cfg, shared_lda)?;
    ensure_parent(model)?;
    save_model_container(model, &m.to_container())
}

fn stage_score(model: &Path, enroll: &Path, test: &Path, trials: &Path, output: &Path) -> Result<()> {
    let m = BackendModel::from_container(&load_model_container(model)?)?;
    let e = load_embedding_set(enroll, None)?;
    let t = if test == enroll {
        e.clone()
    } else {
        load_embedding_set(test, None)?
    };
    let list = TrialSet::new(TrialSet::parse_tsv(&read_text(trials)?)?, None)?;
    let scores = m.score(&e, &t, &list)?;
    write_file(output, &scores.to_tsv())
}

fn evaluate_files(scores: &Path, key: &Path, dcf: &DcfParams) -> Result<EvalReport> {
    let s = ScoreSet::parse_tsv(&read_text(scores)?)?;
    let k = TrialKey::parse_tsv(&read_text(key)?)?;
    evaluate(&s, &k, dcf)
}

fn stage_evaluate(l: &Layout, rep: Rep, key: &Path, dcf: &DcfParams) -> Result<EvalReport> {
    let report = evaluate_files(&l.scores(rep), key, dcf)?;
    write_file(&l.report(rep), &report.to_text())?;
    write_file(&l.det(rep), &report.det_csv())?;
    Ok(report)
}

fn stage_summarize(l: &Layout, dcf: &DcfParams) -> Result<String> {
    let mut reports = Vec::new();
    for rep in Rep::ALL {
        if l.scores(rep).exists() {
            reports.push((rep.name().to_string(), evaluate_files(&l.scores(rep), &l.key(), dcf)?));
        }
    }
    let text = compare_report(&reports)?;
    write_file(&l.summary(), &text)?;
    Ok(text)
}

/// Comparative table of EER and minDCF per representation, followed by the
/// relative EER change of `xg` over `x` and of `id` over `i` when present.
pub fn compare_report(reports: &[(String, EvalReport)]) -> Result<String> {
    if reports.len() < 2 {
        return Err(Error::BadParams(format!(
            "a comparison needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let label = reports[0].1.dcf_params.label();
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}{:>10}{:>16}", "system", "EER(%)", format!("minDCF({label})"));
    for (name, r) in reports {
        let _ = writeln!(out, "{:<8}{:>10.2}{:>16.4}", name, 100.0 * r.eer, r.min_dcf);
    }
    let find = |n: &str| reports.iter().find(|(name, _)| name == n).map(|(_, r)| r.eer);
    for (base, new, caption) in [("x", "xg", "relative EER improvement"), ("i", "id", "relative EER change")] {
        if let (Some(b), Some(v)) = (find(base), find(new)) {
            let rel = if b > 0.0 {
                format!("{:.2}%", relative_improvement(b, v))
            } else {
                "n/a".to_string()
            };
            let _ = writeln!(out, "{caption}: {rel} ({new} over {base})");
        }
    }
    Ok(out)
}

/// `100·(base − new)/base`.
pub fn relative_improvement(base: f64, new: f64) -> f64 {
    100.0 * (base - new) / base
}

// ------------------------------------------------------------ dispatch

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { common } => {
            let cfg = load_settings(&common)?;
            let (l, _lock) = open_out(&common, true)?.expect("required");
            stage_synth(&l, &cfg)?;
        }
        Command::TrainCca {
            common,
            background_i,
            background_x,
            model,
            ridge,
        } => {
            let cfg = load_settings(&common)?;
            let out = open_out(&common, false)?;
            let l = out.as_ref().map(|o| &o.0);
            let bi = pick(background_i, l, |l| l.vectors("background", "i"), "background-i")?;
            let bx = pick(background_x, l, |l| l.vectors("background", "x"), "background-x")?;
            let mp = pick(model, l, Layout::cca, "model")?;
            let ridge = ridge.unwrap_or(cfg.cca_ridge);
            stage_train_cca(&bi, &bx, &mp, ridge)?;
        }
        Command::Transform {
            common,
            view,
            model,
            input,
            output,
        } => {
            let out = open_out(&common, false)?;
            let l = out.as_ref().map(|o| &o.0);
            let mp = pick(model, l, Layout::cca, "model")?;
            let m = CcaModel::from_container(&load_model_container(&mp)?)?;
            match (input, output, l) {
                (Some(i), Some(o), _) => stage_transform(&m, cca_view(view).0, &i, &o)?,
                (_, _, Some(l)) => stage_transform_layout(l, &m, view)?,
                _ => return Err(Failure::Usage("either --input/--output or --out is required".into())),
            }
        }
        Command::TrainBackend {
            common,
            view,
            backend,
            shared_lda,
            background,
            model,
        } => {
            let mut cfg = load_settings(&common)?;
            cfg.apply_backend(&backend);
            let out = open_out(&common, false)?;
            let l = out.as_ref().map(|o| &o.0);
            let bg = pick(background, l, |l| l.vectors("background", view.name()), "background")?;
            let mp = pick(model, l, |l| l.backend(view), "model")?;
            stage_train_backend(view, &bg, &mp, &cfg.backend, shared_lda.as_deref())?;
        }
        Command::Score {
            common,
            view,
            model,
            enroll,
            test,
            trials,
            output,
        } => {
            let out = open_out(&common, false)?;
            let l = out.as_ref().map(|o| &o.0);
            let mp = pick(model, l, |l| l.backend(view), "model")?;
            let ep = pick(enroll, l, |l| l.vectors("eval", view.name()), "enroll")?;
            let tp = pick(test, l, |l| l.vectors("eval", view.name()), "test")?;
            let trp = pick(trials, l, Layout::trials, "trials")?;
            let op = pick(output, l, |l| l.scores(view), "output")?;
            stage_score(&mp, &ep, &tp, &trp, &op)?;
        }
        Command::Evaluate {
            common,
            view,
            scores,
            key,
            report,
            dcf,
        } => {
            let mut cfg = load_settings(&common)?;
            cfg.apply_dcf(&dcf);
            cfg.dcf.validate()?;
            let out = open_out(&common, false)?;
            let l = out.as_ref().map(|o| &o.0);
            let r = match (scores, view, l) {
                (Some(sp), _, _) => {
                    let kp = pick(key, l, Layout::key, "key")?;
                    evaluate_files(&sp, &kp, &cfg.dcf)?
                }
                (None, Some(rep), Some(l)) => {
                    let kp = key.unwrap_or_else(|| l.key());
                    stage_evaluate(l, rep, &kp, &cfg.dcf)?
                }
                _ => return Err(Failure::Usage("either --scores or --view with --out is required".into())),
            };
            if let Some(p) = report {
                write_file(&p, &r.to_text())?;
            }
            print!("{}", r.to_text());
        }
        Command::Summarize { common, dcf } => {
            let mut cfg = load_settings(&common)?;
            cfg.apply_dcf(&dcf);
            cfg.dcf.validate()?;
            let (l, _lock) = open_out(&common, true)?.expect("required");
            print!("{}", stage_summarize(&l, &cfg.dcf)?);
        }
        Command::Pipeline {
            common,
            backend,
            dcf,
        } => {
            let mut cfg = load_settings(&common)?;
            cfg.apply_backend(&backend);
            cfg.apply_dcf(&dcf);
            cfg.validate()?;
            let (l, _lock) = open_out(&common, true)?.expect("required");
            print!("{}", run_pipeline(&l, &cfg)?);
        }
    }
    Ok(())
}

fn run_pipeline(l: &Layout, cfg: &PipelineConfig) -> Result<String> {
    stage_synth(l, cfg)?;
    let m = stage_train_cca(
        &l.vectors("background", "i"),
        &l.vectors("background", "x"),
        &l.cca(),
        cfg.cca_ridge,
    )?;
    stage_transform_layout(l, &m, CcaView::Xg)?;
    stage_transform_layout(l, &m, CcaView::Id)?;
    for rep in Rep::ALL {
        stage_train_backend(rep, &l.vectors("background", rep.name()), &l.backend(rep), &cfg.backend, None)?;
        stage_score(
            &l.backend(rep),
            &l.vectors("eval", rep.name()),
            &l.vectors("eval", rep.name()),
            &l.trials(),
            &l.scores(rep),
        )?;
        stage_evaluate(l, rep, &l.key(), &cfg.dcf)?;
    }
    stage_summarize(l, &cfg.dcf)
}
