//! Trial lists, target/nontarget keys and score lists, with their
//! tab-separated file formats.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
}

impl Trial {
    pub fn new(enroll: impl Into<String>, test: impl Into<String>) -> Self {
        Trial {
            enroll: enroll.into(),
            test: test.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Target => "target",
            Label::Nontarget => "nontarget",
        }
    }
}

/// Ground truth for a collection of trials, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialKey {
    entries: Vec<(Trial, Label)>,
    index: HashMap<Trial, usize>,
}

impl TrialKey {
    pub fn new(entries: Vec<(Trial, Label)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (t, _)) in entries.iter().enumerate() {
            check_ids(t, i + 1)?;
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate keyed trial ({}, {})", t.enroll, t.test),
                });
            }
        }
        Ok(TrialKey { entries, index })
    }

    pub fn entries(&self) -> &[(Trial, Label)] {
        &self.entries
    }

    pub fn label(&self, trial: &Trial) -> Option<Label> {
        self.index.get(trial).map(|&i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|(_, l)| *l == label).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, l) in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", t.enroll, t.test, l.as_str());
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (line_no, fields) in tsv_lines(text) {
            let [e, t, l] = fields[..] else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let label = match l {
                "target" => Label::Target,
                "nontarget" => Label::Nontarget,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("bad label `{other}`"),
                    })
                }
            };
            entries.push((Trial::new(e, t), label));
        }
        TrialKey::new(entries)
    }
}

/// Ordered (enroll, test) pairs with an optional key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub key: Option<TrialKey>,
}

impl TrialSet {
    pub fn new(trials: Vec<Trial>, key: Option<TrialKey>) -> Result<Self> {
        for (i, t) in trials.iter().enumerate() {
            check_ids(t, i + 1)?;
        }
        if let Some(k) = &key {
            let listed: std::collections::HashSet<&Trial> = trials.iter().collect();
            if let Some((t, _)) = k.entries().iter().find(|(t, _)| !listed.contains(t)) {
                return Err(Error::UnknownId(format!("keyed trial ({}, {}) not in trial list", t.enroll, t.test)));
            }
        }
        Ok(TrialSet { trials, key })
    }

    /// Trial list taken from the key, in key order.
    pub fn from_key(key: TrialKey) -> Self {
        let trials = key.entries().iter().map(|(t, _)| t.clone()).collect();
        TrialSet {
            trials,
            key: Some(key),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let _ = writeln!(out, "{}\t{}", t.enroll, t.test);
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<Trial>> {
        let mut trials = Vec::new();
        for (line_no, fields) in tsv_lines(text) {
            let [e, t] = fields[..] else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            };
            let trial = Trial::new(e, t);
            check_ids(&trial, line_no)?;
            trials.push(trial);
        }
        Ok(trials)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Scores in trial order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoredTrial>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if !e.score.is_finite() {
                return Err(Error::NonFinite { line: i + 1 });
            }
        }
        Ok(ScoreSet { entries })
    }

    pub fn entries(&self) -> &[ScoredTrial] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scores as `(enroll, test, score)` lines with 17 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 48);
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{:.16e}", e.trial.enroll, e.trial.test, e.score);
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (line_no, fields) in tsv_lines(text) {
            let [e, t, s] = fields[..] else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let score: f64 = s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad score `{s}`"),
            })?;
            if !score.is_finite() {
                return Err(Error::NonFinite { line: line_no });
            }
            entries.push(ScoredTrial {
                trial: Trial::new(e, t),
                score,
            });
        }
        Ok(ScoreSet { entries })
    }
}

fn check_ids(t: &Trial, line: usize) -> Result<()> {
    if t.enroll.is_empty() || t.test.is_empty() {
        return Err(Error::Parse {
            line,
            msg: "empty trial id".into(),
        });
    }
    Ok(())
}

fn tsv_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.split('\n').enumerate().filter_map(|(i, raw)| {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
