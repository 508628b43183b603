//! Externally produced per-subword logits.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"0","subwords":["[CLS]","tempat","##nya","[SEP]"],"scores":[[...],...],"tag_order":["O","B-ASPECT",...]}
//! ```
//!
//! `tag_order` names the score columns. It is either a permutation of all ten
//! tags or of the five BIO tags; five-column rows are widened with
//! `X-ASPECT ← I-ASPECT`, `X-SENTIMENT ← I-SENTIMENT`, `Y ← O`, `A = Z = 0`.
//! A line carrying a `"header"` key, blank lines and `#` comments are skipped.
//!
//! A segmentation sidecar maps each record to word spans, one object per line:
//! `{"id":"0","spans":[[1,2],[3,3]]}` with inclusive subword indices.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignedSentence;
use crate::crf::{EmissionMatrix, Row};
use crate::labelspace::{parse_tag, Tag, NUM_ORIGINAL, NUM_TAGS};

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("no logits record for sentence {0:?}")]
    MissingSentence(String),
    #[error("sentence {id:?}: subwords diverge at position {position} (expected {expected:?}, found {found:?})")]
    SubwordMismatch {
        id: String,
        position: usize,
        expected: Option<String>,
        found: Option<String>,
    },
    #[error("sentence {id:?}: bad segmentation spans: {reason}")]
    BadSpans { id: String, reason: String },
}

/// One line of a logits file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub id: String,
    pub subwords: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub tag_order: Vec<String>,
}

impl LogitsRecord {
    /// A canonical ten-column record.
    pub fn from_matrix(id: impl Into<String>, subwords: Vec<String>, matrix: &EmissionMatrix) -> Self {
        LogitsRecord {
            id: id.into(),
            subwords,
            scores: matrix.rows().iter().map(|r| r.to_vec()).collect(),
            tag_order: Tag::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        }
    }

    /// Validates the record and returns its scores in canonical tag order,
    /// widened to ten columns if needed.
    pub fn to_matrix(&self) -> Result<EmissionMatrix, String> {
        let columns: Vec<Tag> = self
            .tag_order
            .iter()
            .map(|s| parse_tag(s).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let distinct: HashSet<Tag> = columns.iter().copied().collect();
        if distinct.len() != columns.len() {
            return Err("tag_order repeats a tag".into());
        }
        let narrow = match columns.len() {
            NUM_TAGS => false,
            NUM_ORIGINAL if columns.iter().all(|t| t.is_original()) => true,
            n => return Err(format!("tag_order must list 10 tags or the 5 BIO tags, got {n}")),
        };
        if self.scores.len() != self.subwords.len() {
            return Err(format!(
                "{} subwords but {} score rows",
                self.subwords.len(),
                self.scores.len()
            ));
        }
        let mut rows = Vec::with_capacity(self.scores.len());
        for (t, raw) in self.scores.iter().enumerate() {
            if raw.len() != columns.len() {
                return Err(format!("row {t} has {} columns, expected {}", raw.len(), columns.len()));
            }
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(format!("row {t} has a non-finite score"));
            }
            let mut row = [0.0; NUM_TAGS];
            for (tag, &v) in columns.iter().zip(raw) {
                row[tag.index()] = v;
            }
            if narrow {
                row = widen(&row);
            }
            rows.push(row);
        }
        EmissionMatrix::new(rows).map_err(|e| e.to_string())
    }
}

/// Fills the auxiliary columns of a row whose BIO columns are set.
pub fn widen(row: &Row) -> Row {
    let mut out = *row;
    out[Tag::A.index()] = 0.0;
    out[Tag::Z.index()] = 0.0;
    out[Tag::XAspect.index()] = row[Tag::IAspect.index()];
    out[Tag::XSentiment.index()] = row[Tag::ISentiment.index()];
    out[Tag::Y.index()] = row[Tag::O.index()];
    out
}

fn parse_lines<T, R>(reader: R) -> Result<Vec<(usize, T)>, ExternalError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| ExternalError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if value.get("header").is_some() {
            continue;
        }
        let record = serde_json::from_value(value).map_err(|e| ExternalError::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Reads all records of a logits file.
pub fn read_records(reader: impl BufRead) -> Result<Vec<LogitsRecord>, ExternalError> {
    let mut seen = HashSet::new();
    let records: Vec<(usize, LogitsRecord)> = parse_lines(reader)?;
    for (_, r) in &records {
        if !seen.insert(r.id.clone()) {
            return Err(ExternalError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<LogitsRecord>, ExternalError> {
    read_records(BufReader::new(File::open(path)?))
}

pub fn write_records<'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a LogitsRecord>,
) -> Result<(), ExternalError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_records_file<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a LogitsRecord>,
) -> Result<(), ExternalError> {
    write_records(io::BufWriter::new(File::create(path)?), records)
}

fn first_divergence(expected: &[String], found: &[String]) -> Option<usize> {
    let common = expected.len().min(found.len());
    (0..common)
        .find(|&i| expected[i] != found[i])
        .or(if expected.len() == found.len() { None } else { Some(common) })
}

/// Matches records to sentences by id and checks subword agreement.
pub fn match_records<'a>(
    records: Vec<LogitsRecord>,
    corpus: impl IntoIterator<Item = (&'a str, &'a AlignedSentence)>,
) -> Result<HashMap<String, EmissionMatrix>, ExternalError> {
    let mut by_id: HashMap<String, (usize, LogitsRecord)> = HashMap::new();
    for (i, r) in records.into_iter().enumerate() {
        if by_id.contains_key(&r.id) {
            return Err(ExternalError::DuplicateId(r.id));
        }
        by_id.insert(r.id.clone(), (i + 1, r));
    }
    let mut out = HashMap::new();
    for (id, aligned) in corpus {
        let (ordinal, record) = by_id
            .remove(id)
            .ok_or_else(|| ExternalError::MissingSentence(id.to_string()))?;
        if let Some(position) = first_divergence(&aligned.subwords, &record.subwords) {
            return Err(ExternalError::SubwordMismatch {
                id: id.to_string(),
                position,
                expected: aligned.subwords.get(position).cloned(),
                found: record.subwords.get(position).cloned(),
            });
        }
        let matrix = record
            .to_matrix()
            .map_err(|reason| ExternalError::MalformedRecord { line: ordinal, reason })?;
        out.insert(id.to_string(), matrix);
    }
    Ok(out)
}

/// Loads a logits file and validates it against the aligned corpus.
pub fn load_external<'a>(
    path: impl AsRef<Path>,
    corpus: impl IntoIterator<Item = (&'a str, &'a AlignedSentence)>,
) -> Result<HashMap<String, EmissionMatrix>, ExternalError> {
    // Line numbers in errors refer to record ordinals once matched.
    match_records(read_records_file(path)?, corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub id: String,
    pub spans: Vec<(usize, usize)>,
}

pub fn read_sidecar(reader: impl BufRead) -> Result<HashMap<String, Vec<(usize, usize)>>, ExternalError> {
    let mut out = HashMap::new();
    for (_, r) in parse_lines::<SpanRecord, _>(reader)? {
        if out.insert(r.id.clone(), r.spans).is_some() {
            return Err(ExternalError::DuplicateId(r.id));
        }
    }
    Ok(out)
}

pub fn read_sidecar_file(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<(usize, usize)>>, ExternalError> {
    read_sidecar(BufReader::new(File::open(path)?))
}

/// Splits a marker-wrapped subword sequence into per-word pieces using spans
/// that must tile `1..len-1` in order.
pub fn pieces_from_spans(
    id: &str,
    subwords: &[String],
    spans: &[(usize, usize)],
) -> Result<Vec<Vec<String>>, ExternalError> {
    let bad = |reason: String| ExternalError::BadSpans { id: id.to_string(), reason };
    if subwords.len() < 3 {
        return Err(bad(format!("only {} subwords", subwords.len())));
    }
    let mut expected_start = 1;
    let mut pieces = Vec::with_capacity(spans.len());
    for &(s, e) in spans {
        if s != expected_start || e < s {
            return Err(bad(format!("span ({s},{e}) does not start at {expected_start}")));
        }
        if e >= subwords.len() - 1 {
            return Err(bad(format!("span ({s},{e}) runs into [SEP]")));
        }
        pieces.push(subwords[s..=e].to_vec());
        expected_start = e + 1;
    }
    if expected_start != subwords.len() - 1 {
        return Err(bad("spans do not cover every subword".into()));
    }
    Ok(pieces)
}
