//! Detection metrics over keyed trial scores: EER, normalized minimum DCF
//! and DET curve points.
//!
//! A trial is accepted iff `score >= threshold`. Thresholds sweep the sorted
//! distinct scores followed by `+inf`, giving one operating point more than
//! there are distinct scores. Along the sweep the false-alarm rate falls and
//! the miss rate rises.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trials::{Label, ScoreSet, TrialKey};

/// Cost-function parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    /// SRE'10 "new" DCF operating point.
    pub const SRE10: DcfParams = DcfParams {
        p_target: 0.001,
        c_miss: 1.0,
        c_fa: 1.0,
    };
    /// SRE'08 / older DCF operating point.
    pub const SRE08: DcfParams = DcfParams {
        p_target: 0.01,
        c_miss: 10.0,
        c_fa: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::BadParams(format!("p_target must lie in (0, 1), got {}", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_miss.is_finite() && self.c_fa > 0.0 && self.c_fa.is_finite()) {
            return Err(Error::BadParams("costs must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        if *self == Self::SRE10 {
            "sre10"
        } else if *self == Self::SRE08 {
            "sre08"
        } else {
            "custom"
        }
    }

    fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

impl Default for DcfParams {
    fn default() -> Self {
        Self::SRE10
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub p_fa: f64,
    pub p_miss: f64,
    pub probit_fa: f64,
    pub probit_miss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub dcf_params: DcfParams,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub det: Vec<DetPoint>,
}

impl EvalReport {
    /// Flat `key=value` report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eer={}", self.eer);
        let _ = writeln!(out, "min_dcf={}", self.min_dcf);
        let _ = writeln!(out, "dcf_label={}", self.dcf_params.label());
        let _ = writeln!(out, "p_target={}", self.dcf_params.p_target);
        let _ = writeln!(out, "c_miss={}", self.dcf_params.c_miss);
        let _ = writeln!(out, "c_fa={}", self.dcf_params.c_fa);
        let _ = writeln!(out, "n_target={}", self.n_target);
        let _ = writeln!(out, "n_nontarget={}", self.n_nontarget);
        let _ = writeln!(out, "det_points={}", self.det.len());
        out
    }

    pub fn det_csv(&self) -> String {
        let mut out = String::from("p_fa,p_miss,probit_fa,probit_miss\n");
        for p in &self.det {
            let _ = writeln!(out, "{},{},{},{}", p.p_fa, p.p_miss, p.probit_fa, p.probit_miss);
        }
        out
    }
}

/// Splits keyed scores into (target, nontarget) lists.
pub fn split_scores(scores: &ScoreSet, key: &TrialKey) -> Result<(Vec<f64>, Vec<f64>)> {
    let lookup: std::collections::HashMap<_, _> = scores
        .entries()
        .iter()
        .map(|e| (&e.trial, e.score))
        .collect();
    let mut tar = Vec::new();
    let mut non = Vec::new();
    for (trial, label) in key.entries() {
        let s = *lookup
            .get(trial)
            .ok_or_else(|| Error::UnscoredTrial(trial.enroll.clone(), trial.test.clone()))?;
        match label {
            Label::Target => tar.push(s),
            Label::Nontarget => non.push(s),
        }
    }
    Ok((tar, non))
}

fn check_classes(tar: &[f64], non: &[f64]) -> Result<()> {
    if tar.is_empty() {
        return Err(Error::EmptyClass("target"));
    }
    if non.is_empty() {
        return Err(Error::EmptyClass("nontarget"));
    }
    Ok(())
}

/// Operating points `(p_miss, p_fa)` over the threshold sweep.
pub fn operating_points(tar: &[f64], non: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_classes(tar, non)?;
    let mut t = tar.to_vec();
    let mut n = non.to_vec();
    t.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = t.iter().chain(&n).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (nt, nn) = (t.len(), n.len());
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    let (mut below_t, mut below_n) = (0usize, 0usize);
    for &thr in &thresholds {
        while below_t < nt && t[below_t] < thr {
            below_t += 1;
        }
        while below_n < nn && n[below_n] < thr {
            below_n += 1;
        }
        points.push((below_t as f64 / nt as f64, (nn - below_n) as f64 / nn as f64));
    }
    points.push((1.0, 0.0));
    Ok(points)
}

/// Crossing of miss and false-alarm rates, linearly interpolated between the
/// two adjacent operating points that bracket it.
pub(crate) fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    let mut prev = points[0];
    for &(pm, pf) in points {
        let gap = pm - pf;
        if gap == 0.0 {
            return pm;
        }
        if gap > 0.0 {
            let (pm0, pf0) = prev;
            let alpha = (pf0 - pm0) / ((pm - pm0) - (pf - pf0));
            return pm0 + alpha * (pm - pm0);
        }
        prev = (pm, pf);
    }
    unreachable!("sweep always ends at (p_miss, p_fa) = (1, 0)")
}

pub fn eer_from_scores(tar: &[f64], non: &[f64]) -> Result<f64> {
    Ok(eer_from_points(&operating_points(tar, non)?))
}

pub fn min_dcf_from_scores(tar: &[f64], non: &[f64], params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let points = operating_points(tar, non)?;
    let norm = params.normalizer();
    Ok(points
        .iter()
        .map(|&(pm, pf)| (params.c_miss * params.p_target * pm + params.c_fa * (1.0 - params.p_target) * pf) / norm)
        .fold(f64::INFINITY, f64::min))
}

pub fn eer(scores: &ScoreSet, key: &TrialKey) -> Result<f64> {
    let (tar, non) = split_scores(scores, key)?;
    eer_from_scores(&tar, &non)
}

pub fn min_dcf(scores: &ScoreSet, key: &TrialKey, params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let (tar, non) = split_scores(scores, key)?;
    min_dcf_from_scores(&tar, &non, params)
}

pub fn det_points_from_scores(tar: &[f64], non: &[f64]) -> Result<Vec<DetPoint>> {
    let points = operating_points(tar, non)?;
    let clamp = |p: f64, count: usize| {
        let lo = 1.0 / (2.0 * count as f64);
        p.clamp(lo, 1.0 - lo)
    };
    Ok(points
        .into_iter()
        .map(|(pm, pf)| DetPoint {
            p_fa: pf,
            p_miss: pm,
            probit_fa: probit(clamp(pf, non.len())),
            probit_miss: probit(clamp(pm, tar.len())),
        })
        .collect())
}

pub fn det_points(scores: &ScoreSet, key: &TrialKey) -> Result<Vec<DetPoint>> {
    let (tar, non) = split_scores(scores, key)?;
    det_points_from_scores(&tar, &non)
}

pub fn evaluate(scores: &ScoreSet, key: &TrialKey, params: &DcfParams) -> Result<EvalReport> {
    params.validate()?;
    let (tar, non) = split_scores(scores, key)?;
    Ok(EvalReport {
        eer: eer_from_scores(&tar, &non)?,
        min_dcf: min_dcf_from_scores(&tar, &non, params)?,
        dcf_params: *params,
        n_target: tar.len(),
        n_nontarget: non.len(),
        det: det_points_from_scores(&tar, &non)?,
    })
}

/// Inverse standard-normal CDF (Wichura's AS241, PPND16).
pub fn probit(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
