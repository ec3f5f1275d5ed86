//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Run with `cargo test -p xgvec --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use xgvec::backend::{fit_plda, fit_plda_from, score_trials, PldaModel, PreparedPlda};
use xgvec::cca::{fit_cca, CcaModel, CcaOptions};
use xgvec::embeddings::{EmbeddingSet, Record};
use xgvec::metrics::{eer_from_scores, min_dcf_from_scores, DcfParams};
use xgvec::synthgen::{analytic_canonical_correlations, generate_paired, random_loadings, SynthConfig};
use xgvec::trials::{Trial, TrialSet};

/// Outcome of one criterion: pass flag and a one-line detail.
type Outcome = (bool, String);

fn fit(i: &DMatrix<f64>, x: &DMatrix<f64>) -> CcaModel {
    fit_cca(&unlabeled(i), &unlabeled(x), &CcaOptions::default()).unwrap()
}

fn c1_cca_oracle() -> Outcome {
    let start = Instant::now();
    let (mut rho_err, mut dir_err) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (i, x) = coupled_views(seed, 50, 5, 7);
        let m = fit(&i, &x);
        let (rho, di, dx) = cca_oracle(&i, &x, 5);
        if m.k() != 5 {
            return (false, format!("seed {seed}: k = {}", m.k()));
        }
        for j in 0..5 {
            rho_err = rho_err.max((m.rho[j] - rho[j]).abs());
            let wi: DVector<f64> = m.w_id.column(j).into_owned();
            let wx: DVector<f64> = m.w_xg.column(j).into_owned();
            dir_err = dir_err.max(direction_gap(&wi, &di[j])).max(direction_gap(&wx, &dx[j]));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = rho_err < 1e-8 && dir_err < 1e-6 && secs < 10.0;
    (ok, format!("max |Δrho| = {rho_err:.2e} (< 1e-8), max direction gap = {dir_err:.2e} (< 1e-6, up to sign), {secs:.2} s (< 10 s)"))
}

fn whitening_error(m: &CcaModel, i: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let k = m.k();
    let id = DMatrix::<f64>::identity(k, k);
    let wi = m.w_id.transpose() * naive_cov(i, i) * &m.w_id - &id;
    let wx = m.w_xg.transpose() * naive_cov(x, x) * &m.w_xg - &id;
    wi.amax().max(wx.amax())
}

fn c2_whitening() -> Outcome {
    let mut worst = 0.0f64;
    let mut models = 0;
    for seed in 0..100 {
        let (i, x) = coupled_views(seed, 50, 5, 7);
        worst = worst.max(whitening_error(&fit(&i, &x), &i, &x));
        models += 1;
    }
    for seed in 0..3 {
        let sets = generate_paired(&SynthConfig::desk_default(seed)).unwrap();
        let (i, x) = (sets.i_view.to_matrix(), sets.x_view.to_matrix());
        let m = fit_cca(&sets.i_view, &sets.x_view, &CcaOptions::default()).unwrap();
        worst = worst.max(whitening_error(&m, &i, &x));
        models += 1;
    }
    (worst < 1e-6, format!("max |WᵀΣW − I| = {worst:.2e} over {models} models, both views (< 1e-6)"))
}

fn c3_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for t in 0..20u64 {
        let (i, x) = coupled_views(500 + t, 80, 5, 7);
        let mut r = rng(900 + t);
        let a = gaussian(&mut r, 5, 5);
        let b = gaussian(&mut r, 7, 7);
        assert!(a.determinant().abs() > 1e-3 && b.determinant().abs() > 1e-3);
        let base = fit(&i, &x);
        let mapped = fit(&(&i * a), &(&x * b));
        assert_eq!(base.k(), mapped.k());
        for (p, q) in base.rho.iter().zip(&mapped.rho) {
            worst = worst.max((p - q).abs());
        }
    }
    (worst < 1e-6, format!("max |Δrho| under random invertible maps = {worst:.2e} over 20 trials (< 1e-6)"))
}

fn c4_degenerate() -> Outcome {
    let mut r = rng(4);
    let v = gaussian(&mut r, 200, 6);
    let same = fit(&v, &v);
    let same_err = same.rho.iter().map(|p| (p - 1.0).abs()).fold(0.0, f64::max);

    let n = 20000;
    let (i, x) = coupled_views(44, n, 5, 7);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let shuffled = DMatrix::from_fn(n, 7, |row, c| x[(perm[row], c)]);
    let null = fit(&i, &shuffled);
    let max_rho = null.rho[0];
    let heuristic = 3.0 / (n as f64).sqrt() * ((5 * 7) as f64).sqrt();
    let ok = same.k() == 6 && same_err <= 1e-8 && max_rho < 0.1;
    (
        ok,
        format!(
            "identical views: max |rho − 1| = {same_err:.2e} (≤ 1e-8); permuted pairing N={n}: max rho = {max_rho:.4} (< 0.1; heuristic bound {heuristic:.4})"
        ),
    )
}

fn c5_metrics() -> Outcome {
    let params = [
        DcfParams::SRE10,
        DcfParams::SRE08,
        DcfParams {
            p_target: 0.5,
            c_miss: 1.0,
            c_fa: 1.0,
        },
    ];
    let mut mismatches = 0;
    let mut r = rng(55);
    for _ in 0..100 {
        use rand::Rng;
        let nt = r.random_range(1..=100);
        let nn = r.random_range(1..=100);
        let grid = r.random_range(3..60) as f64;
        let tar: Vec<f64> = (0..nt).map(|_| ((r.random::<f64>() + 0.25) * grid).round() / grid).collect();
        let non: Vec<f64> = (0..nn).map(|_| (r.random::<f64>() * grid).round() / grid).collect();
        if eer_from_scores(&tar, &non).unwrap() != eer_oracle(&tar, &non) {
            mismatches += 1;
        }
        for p in &params {
            if min_dcf_from_scores(&tar, &non, p).unwrap() != min_dcf_oracle(&tar, &non, p.p_target, p.c_miss, p.c_fa) {
                mismatches += 1;
            }
        }
    }
    let eer_example = eer_from_scores(&[0.6, 0.2], &[0.4, 0.5]).unwrap();
    let half = DcfParams {
        p_target: 0.5,
        c_miss: 1.0,
        c_fa: 1.0,
    };
    let dcf_example = min_dcf_from_scores(&[0.9], &[0.8, 0.1], &half).unwrap();
    let dcf_oracle = min_dcf_oracle(&[0.9], &[0.8, 0.1], 0.5, 1.0, 1.0);
    let ok = mismatches == 0 && eer_example == 0.5 && dcf_example == 0.5;
    (
        ok,
        format!(
            "oracle mismatches over 100 sets = {mismatches}; EER example = {eer_example} (want 0.5); \
             minDCF example = {dcf_example} (want 0.5; exhaustive-sweep oracle gives {dcf_oracle})"
        ),
    )
}

fn c6_plda() -> Outcome {
    let mut llr_err = 0.0f64;
    let one = PldaModel {
        mu: vec![0.0],
        f: DMatrix::from_element(1, 1, 1.0),
        sigma: DMatrix::from_element(1, 1, 1.0),
    };
    let p1 = PreparedPlda::new(&one).unwrap();
    for (e, t) in [(1.0, 1.0), (0.3, -2.0), (-1.5, -1.0)] {
        llr_err = llr_err.max((p1.llr(&[e], &[t]) - plda_llr_oracle(&one.mu, &one.f, &one.sigma, &[e], &[t])).abs());
    }
    for seed in 0..20u64 {
        let mut r = rng(seed);
        let a = gaussian(&mut r, 2, 2);
        let two = PldaModel {
            mu: vec![0.5, -1.0],
            f: gaussian(&mut r, 2, 2),
            sigma: &a * a.transpose() + DMatrix::identity(2, 2) * 0.2,
        };
        let p2 = PreparedPlda::new(&two).unwrap();
        for _ in 0..5 {
            let e: Vec<f64> = gaussian(&mut r, 2, 1).iter().copied().collect();
            let t: Vec<f64> = gaussian(&mut r, 2, 1).iter().copied().collect();
            llr_err = llr_err.max((p2.llr(&e, &t) - plda_llr_oracle(&two.mu, &two.f, &two.sigma, &e, &t)).abs());
        }
    }

    let mut worst_drop = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng(100 + seed);
        let d = 4;
        let f_true = gaussian(&mut r, d, 2);
        let mut recs = Vec::new();
        for s in 0..25 {
            let h = gaussian(&mut r, 2, 1);
            for u in 0..4 {
                let v = &f_true * &h + gaussian(&mut r, d, 1) * 0.7;
                recs.push(Record::new(format!("s{s}u{u}"), format!("s{s}"), v.iter().copied().collect()));
            }
        }
        let set = EmbeddingSet::new(d, recs).unwrap();
        let b = gaussian(&mut r, d, d);
        let init = PldaModel {
            mu: vec![0.0; d],
            f: gaussian(&mut r, d, 2),
            sigma: &b * b.transpose() + DMatrix::identity(d, d),
        };
        let (_, trace) = fit_plda_from(&set, &init, 50).unwrap();
        for w in trace.windows(2) {
            worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(1.0));
        }
    }

    let mut r = rng(7);
    let rows = gaussian(&mut r, 40, 3);
    let set = set_from_rows(&rows, |i| format!("s{}", i % 8));
    let flat = fit_plda(&set, 0, 3).unwrap();
    let trials = TrialSet::new((0..20).map(|k| Trial::new(format!("u{k}"), format!("u{}", 39 - k))).collect(), None).unwrap();
    let zero = score_trials(&flat, &set, &set, &trials).unwrap().entries().iter().all(|s| s.score == 0.0);

    let ok = llr_err < 1e-10 && worst_drop <= 1e-9 && zero;
    (
        ok,
        format!("max |LLR − oracle| = {llr_err:.2e} (< 1e-10); worst EM log-likelihood drop = {worst_drop:.2e} (≤ 1e-9 rel); q=0 scores all zero: {zero}"),
    )
}

fn pipeline_tree(seed: u64, out: &Path) -> BTreeMap<String, Vec<u8>> {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_xgvec"))
        .args(["pipeline", "--seed", &seed.to_string(), "--out", out.to_str().unwrap()])
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "pipeline --seed {seed} failed");
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(out, out, &mut acc);
    acc
}

fn report_eer(tree: &BTreeMap<String, Vec<u8>>, rep: &str) -> f64 {
    let text = String::from_utf8(tree[&format!("reports/{rep}.txt")].clone()).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("eer="))
        .unwrap()
        .parse()
        .unwrap()
}

fn c7_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    assert!(SynthConfig::desk_default(0).nuisance_x > 0.0);
    let mut sums = [0.0f64; 4];
    let reps = ["i", "x", "xg", "id"];
    let seeds = 10;
    for seed in 0..seeds {
        let tree = pipeline_tree(seed, &dir.path().join(format!("seed{seed}")));
        for (s, rep) in sums.iter_mut().zip(reps) {
            *s += report_eer(&tree, rep);
        }
    }
    let [i, x, xg, id] = sums.map(|s| s / seeds as f64);
    let rel = (id - i).abs() / i;
    let elapsed = start.elapsed();
    let ok = xg < x && rel <= 0.2 && elapsed < Duration::from_secs(300);
    (
        ok,
        format!(
            "mean EER over {seeds} seeds: x = {:.3}%, xg = {:.3}% (xg < x), i = {:.3}%, id = {:.3}% (|id − i|/i = {:.1}% ≤ 20%), {:.1} s (< 300 s)",
            100.0 * x,
            100.0 * xg,
            100.0 * i,
            100.0 * id,
            100.0 * rel,
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline_tree(7, &dir.path().join("a"));
    let b = pipeline_tree(7, &dir.path().join("b"));
    let bytes: usize = a.values().map(Vec::len).sum();
    (a == b, format!("two `pipeline --seed 7` runs: {} files, {bytes} bytes, identical: {}", a.len(), a == b))
}

fn c9_generator() -> Outcome {
    let (d_i, d_x, q) = (6, 5, 5);
    let (li, lx) = random_loadings(d_i, d_x, q, 99);
    let cfg = SynthConfig {
        n_speakers: 2000,
        utts_per_speaker: 10,
        q_shared: q,
        d_i,
        d_x,
        loading_i: li,
        loading_x: lx,
        speaker_strength_i: 1.0,
        speaker_strength_x: 1.0,
        noise_i: 0.5,
        noise_x: 0.5,
        nuisance_x: 1.0,
        seed: 9,
    };
    let sets = generate_paired(&cfg).unwrap();
    let m = fit_cca(&sets.i_view, &sets.x_view, &CcaOptions::default()).unwrap();
    let truth = analytic_canonical_correlations(&cfg).unwrap();
    let worst = m.rho.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (
        worst < 0.02 && m.k() == truth.len(),
        format!("N = 20000 pairs, {} components: max |fitted − analytic| = {worst:.4} (< 0.02)", m.k()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("CCA oracle equivalence", c1_cca_oracle),
        ("whitening constraints", c2_whitening),
        ("CCA invariance", c3_invariance),
        ("degenerate anchors", c4_degenerate),
        ("metrics oracle equivalence", c5_metrics),
        ("PLDA correctness", c6_plda),
        ("synthetic end-to-end", c7_end_to_end),
        ("determinism", c8_determinism),
        ("generator consistency", c9_generator),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {} [PRIMARY] {name}: {} | {detail}", n + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
