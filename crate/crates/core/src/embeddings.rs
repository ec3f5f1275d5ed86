//! Labeled embedding sets, the CSV interchange format and centering statistics.
//!
//! Each record is `utt_id,spk_id,v0,...,v{dim-1}`. Floats are written with
//! the shortest decimal representation that round-trips, so a save/load
//! cycle reproduces every vector bit for bit.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub utt_id: String,
    /// Empty for unlabeled sets.
    pub spk_id: String,
    pub vector: Vec<f64>,
}

impl Record {
    pub fn new(utt_id: impl Into<String>, spk_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Record {
            utt_id: utt_id.into(),
            spk_id: spk_id.into(),
            vector,
        }
    }
}

/// An ordered collection of fixed-dimension vectors with utterance and
/// speaker identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<Record>,
}

impl EmbeddingSet {
    /// Validates dimensions, finiteness and utterance-id uniqueness.
    pub fn new(dim: usize, records: Vec<Record>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadParams("embedding dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.utt_id.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty utterance id".into(),
                });
            }
            if r.vector.len() != dim {
                return Err(Error::RaggedRow {
                    line: i + 1,
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { line: i + 1 });
            }
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::DuplicateUtt(r.utt_id.clone()));
            }
        }
        Ok(EmbeddingSet { dim, records })
    }

    /// Builds a set from an N×dim row matrix, taking ids from `template`.
    pub fn from_rows_like(template: &EmbeddingSet, rows: &DMatrix<f64>) -> Result<Self> {
        if rows.nrows() != template.len() {
            return Err(Error::DimMismatch {
                expected: template.len(),
                found: rows.nrows(),
            });
        }
        let records = template
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Record {
                utt_id: r.utt_id.clone(),
                spk_id: r.spk_id.clone(),
                vector: rows.row(i).iter().copied().collect(),
            })
            .collect();
        EmbeddingSet::new(rows.ncols(), records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    /// N×dim matrix, one row per record.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim, |i, j| self.records[i].vector[j])
    }

    /// True when every record carries a nonempty speaker id.
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| !r.spk_id.is_empty())
    }

    /// Returns a copy with `prefix` prepended to every utterance and speaker id.
    pub fn with_id_prefix(&self, prefix: &str) -> EmbeddingSet {
        let records = self
            .records
            .iter()
            .map(|r| Record {
                utt_id: format!("{prefix}{}", r.utt_id),
                spk_id: if r.spk_id.is_empty() {
                    String::new()
                } else {
                    format!("{prefix}{}", r.spk_id)
                },
                vector: r.vector.clone(),
            })
            .collect();
        EmbeddingSet {
            dim: self.dim,
            records,
        }
    }

    /// Keeps the records whose index satisfies `keep`, preserving order.
    pub fn filter_indices(&self, mut keep: impl FnMut(usize) -> bool) -> EmbeddingSet {
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, r)| r.clone())
            .collect();
        EmbeddingSet {
            dim: self.dim,
            records,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.dim * 20 + 16));
        for r in &self.records {
            out.push_str(&r.utt_id);
            out.push(',');
            out.push_str(&r.spk_id);
            for v in &r.vector {
                out.push(',');
                write_f64(&mut out, *v);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, expected_dim: Option<usize>) -> Result<Self> {
        let mut dim = expected_dim;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let utt = fields.next().unwrap_or("").trim();
            let spk = fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "missing speaker field".into(),
            })?;
            if utt.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty utterance id".into(),
                });
            }
            let mut vector = Vec::with_capacity(dim.unwrap_or(8));
            for f in fields {
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad float `{f}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { line: line_no });
                }
                vector.push(v);
            }
            match dim {
                None => {
                    if vector.is_empty() {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: "record has no vector entries".into(),
                        });
                    }
                    dim = Some(vector.len());
                }
                Some(d) if d != vector.len() => {
                    return Err(if records.is_empty() && expected_dim.is_some() {
                        Error::DimMismatch {
                            expected: d,
                            found: vector.len(),
                        }
                    } else {
                        Error::RaggedRow {
                            line: line_no,
                            expected: d,
                            found: vector.len(),
                        }
                    });
                }
                Some(_) => {}
            }
            if !seen.insert(utt.to_string()) {
                return Err(Error::DuplicateUtt(utt.to_string()));
            }
            records.push(Record::new(utt, spk.trim(), vector));
        }
        let dim = dim.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "empty embedding file and no expected dimension".into(),
        })?;
        EmbeddingSet::new(dim, records)
    }
}

/// Shortest round-trip decimal for a finite f64.
pub(crate) fn write_f64(out: &mut String, v: f64) {
    // Debug formatting of f64 is the shortest string that parses back exactly.
    let _ = write!(out, "{v:?}");
}

pub fn load_embedding_set(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSet::parse_csv(&text, expected_dim)
}

pub fn save_embedding_set(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_csv_string()).map_err(|e| Error::io(path, e))
}

/// Per-coordinate mean of a set, used to zero-center embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterStats {
    pub mean: Vec<f64>,
    pub n_source: usize,
}

impl CenterStats {
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let mean = compensated_mean(set.records().iter().map(|r| r.vector.as_slice()), set.dim());
        Ok(CenterStats {
            mean,
            n_source: set.len(),
        })
    }
}

/// Subtracts the mean of `set` (or the supplied `stats`) from every vector.
pub fn center_set(set: &EmbeddingSet, stats: Option<&CenterStats>) -> Result<(EmbeddingSet, CenterStats)> {
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != set.dim() {
                return Err(Error::DimMismatch {
                    expected: set.dim(),
                    found: s.mean.len(),
                });
            }
            s.clone()
        }
        None => CenterStats::from_set(set)?,
    };
    let records = set
        .records()
        .iter()
        .map(|r| Record {
            utt_id: r.utt_id.clone(),
            spk_id: r.spk_id.clone(),
            vector: r.vector.iter().zip(&stats.mean).map(|(v, m)| v - m).collect(),
        })
        .collect();
    Ok((
        EmbeddingSet {
            dim: set.dim(),
            records,
        },
        stats,
    ))
}

/// Neumaier-compensated per-coordinate mean.
pub(crate) fn compensated_mean<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut comp = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        n += 1;
        for ((s, c), &x) in sum.iter_mut().zip(comp.iter_mut()).zip(row) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }
    let n = n.max(1) as f64;
    sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect()
}

/// Column means of an N×d matrix with compensated summation.
pub(crate) fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    compensated_mean(rows.iter().map(|r| r.as_slice()), m.ncols())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_records() {
        let set = EmbeddingSet::parse_csv("u1,s1,1.0,2.0\nu2,s2,3.0,4.0", None).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dim(), 2);
        let spk: Vec<_> = set.records().iter().map(|r| r.spk_id.as_str()).collect();
        assert_eq!(spk, ["s1", "s2"]);
        assert_eq!(set.records()[1].vector, vec![3.0, 4.0]);
    }

    #[test]
    fn ragged_row_rejected() {
        let err = EmbeddingSet::parse_csv("u1,s1,1.0,2.0\nu2,s2,3.0", None).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { line: 2, expected: 2, found: 1 }));
    }

    #[test]
    fn non_finite_and_duplicates_rejected() {
        assert!(matches!(
            EmbeddingSet::parse_csv("u1,s1,NaN,2.0", None),
            Err(Error::NonFinite { line: 1 })
        ));
        assert!(matches!(
            EmbeddingSet::parse_csv("u1,s1,inf", None),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            EmbeddingSet::parse_csv("u1,s1,1\nu1,s2,2", None),
            Err(Error::DuplicateUtt(u)) if u == "u1"
        ));
    }

    #[test]
    fn expected_dim_enforced() {
        assert!(matches!(
            EmbeddingSet::parse_csv("u1,s1,1.0,2.0", Some(3)),
            Err(Error::DimMismatch { expected: 3, found: 2 })
        ));
        let empty = EmbeddingSet::parse_csv("", Some(4)).unwrap();
        assert!(empty.is_empty());
        assert!(EmbeddingSet::parse_csv("", None).is_err());
    }

    #[test]
    fn scientific_notation_and_empty_speaker() {
        let set = EmbeddingSet::parse_csv("t1,,1e-3,-2.5E2\n", None).unwrap();
        assert_eq!(set.records()[0].spk_id, "");
        assert_eq!(set.records()[0].vector, vec![1e-3, -250.0]);
        assert!(!set.is_labeled());
    }

    #[test]
    fn centering_examples() {
        let set = EmbeddingSet::parse_csv("a,s,1,1\nb,s,3,3", None).unwrap();
        let (centered, stats) = center_set(&set, None).unwrap();
        assert_eq!(stats.mean, vec![2.0, 2.0]);
        assert_eq!(stats.n_source, 2);
        assert_eq!(centered.records()[0].vector, vec![-1.0, -1.0]);
        assert_eq!(centered.records()[1].vector, vec![1.0, 1.0]);

        let (again, _) = center_set(&centered, None).unwrap();
        for (a, b) in again.records().iter().zip(centered.records()) {
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert!((x - y).abs() <= 1e-15);
            }
        }

        let single = EmbeddingSet::parse_csv("t,,5,5", None).unwrap();
        let supplied = CenterStats {
            mean: vec![2.0, 2.0],
            n_source: 10,
        };
        let (c, s) = center_set(&single, Some(&supplied)).unwrap();
        assert_eq!(c.records()[0].vector, vec![3.0, 3.0]);
        assert_eq!(s, supplied);

        let wrong = CenterStats {
            mean: vec![0.0; 3],
            n_source: 1,
        };
        assert!(matches!(
            center_set(&single, Some(&wrong)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn compensated_mean_survives_cancellation() {
        let rows: Vec<Vec<f64>> = vec![vec![1e16], vec![1.0], vec![-1e16], vec![1.0]];
        let m = compensated_mean(rows.iter().map(|r| r.as_slice()), 1);
        assert_eq!(m, vec![0.5]);
    }
}
