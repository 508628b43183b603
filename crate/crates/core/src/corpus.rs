//! CoNLL-style corpus IO, seeded splitting and dataset statistics.
//!
//! One token per line as `token<TAB>label`, blank line between sentences.
//! A line starting with `#` and containing no tab is a comment; `# id = X`
//! names the next sentence (otherwise sentences are named by their ordinal).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::labelspace::{parse_tag, Tag, NUM_ORIGINAL};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed line {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: {reason}")]
    BadLabel { line: usize, reason: String },
    #[error("file contains no sentences")]
    EmptyFile,
    #[error("cannot take {requested} training sentences from {available}")]
    InsufficientData { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub words: Vec<String>,
    pub labels: Vec<Tag>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, words: Vec<String>, labels: Vec<Tag>) -> Self {
        Sentence {
            id: id.into(),
            words,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.words.len()).sum()
    }

    pub fn labels(&self) -> Vec<Vec<Tag>> {
        self.sentences.iter().map(|s| s.labels.clone()).collect()
    }
}

/// Whether the label column is required.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Required,
    /// Bare tokens are accepted and labelled `O`.
    Optional,
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_conll(BufReader::new(File::open(path)?), LabelColumn::Required)
}

pub fn read_conll_tokens(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_conll(BufReader::new(File::open(path)?), LabelColumn::Optional)
}

pub fn parse_conll(reader: impl BufRead, labels: LabelColumn) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut pending_id: Option<String> = None;

    let flush = |words: &mut Vec<String>, tags: &mut Vec<Tag>, id: &mut Option<String>, out: &mut Vec<Sentence>| {
        if !words.is_empty() {
            let id = id.take().unwrap_or_else(|| out.len().to_string());
            out.push(Sentence::new(id, std::mem::take(words), std::mem::take(tags)));
        }
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut tags, &mut pending_id, &mut sentences);
            continue;
        }
        if line.starts_with('#') && !line.contains('\t') {
            if let Some(rest) = line[1..].trim().strip_prefix("id") {
                if let Some(id) = rest.trim().strip_prefix('=') {
                    pending_id = Some(id.trim().to_string());
                }
            }
            continue;
        }
        let malformed = || CorpusError::MalformedLine {
            line: lineno,
            text: line.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let (word, tag) = match (fields.as_slice(), labels) {
            ([word, label], _) => {
                let tag = parse_tag(label).map_err(|e| CorpusError::BadLabel {
                    line: lineno,
                    reason: e.to_string(),
                })?;
                if tag.is_auxiliary() {
                    return Err(CorpusError::BadLabel {
                        line: lineno,
                        reason: format!("auxiliary label {tag} not allowed in a corpus"),
                    });
                }
                (*word, tag)
            }
            ([word], LabelColumn::Optional) => (*word, Tag::O),
            _ => return Err(malformed()),
        };
        if word.is_empty() {
            return Err(malformed());
        }
        words.push(word.to_string());
        tags.push(tag);
    }
    flush(&mut words, &mut tags, &mut pending_id, &mut sentences);
    if sentences.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Ok(Corpus::new(sentences))
}

pub fn write_conll(mut writer: impl Write, corpus: &Corpus) -> io::Result<()> {
    for (ordinal, s) in corpus.sentences.iter().enumerate() {
        if s.id != ordinal.to_string() {
            writeln!(writer, "# id = {}", s.id)?;
        }
        for (w, t) in s.words.iter().zip(&s.labels) {
            writeln!(writer, "{w}\t{t}")?;
        }
        writeln!(writer)?;
    }
    writer.flush()
}

pub fn write_conll_file(path: impl AsRef<Path>, corpus: &Corpus) -> io::Result<()> {
    write_conll(io::BufWriter::new(File::create(path)?), corpus)
}

/// Seeded shuffle, then the first `n_train` sentences train and the rest validate.
pub fn split_train_validation(corpus: &Corpus, n_train: usize, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if n_train == 0 || n_train >= corpus.len() {
        return Err(CorpusError::InsufficientData {
            requested: n_train,
            available: corpus.len(),
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| Corpus::new(idx.iter().map(|&i| corpus.sentences[i].clone()).collect());
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Word-level counts for one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitStats {
    pub name: String,
    pub sentences: usize,
    pub label_counts: [usize; NUM_ORIGINAL],
    pub tokens: usize,
    pub unique_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub splits: Vec<SplitStats>,
    /// Percentage of unique test tokens also seen in training.
    pub overlap_percent: Option<f64>,
}

fn vocabulary(corpus: &Corpus) -> BTreeSet<&str> {
    corpus
        .sentences
        .iter()
        .flat_map(|s| s.words.iter().map(String::as_str))
        .collect()
}

pub fn split_stats(name: &str, corpus: &Corpus) -> SplitStats {
    let mut label_counts = [0; NUM_ORIGINAL];
    for s in &corpus.sentences {
        for t in &s.labels {
            label_counts[t.index()] += 1;
        }
    }
    SplitStats {
        name: name.to_string(),
        sentences: corpus.len(),
        label_counts,
        tokens: corpus.token_count(),
        unique_tokens: vocabulary(corpus).len(),
    }
}

/// Percentage of `test`'s unique tokens present in `train`.
pub fn overlap_percent(train: &Corpus, test: &Corpus) -> f64 {
    let train_vocab = vocabulary(train);
    let test_vocab = vocabulary(test);
    if test_vocab.is_empty() {
        return 0.0;
    }
    let shared = test_vocab.iter().filter(|w| train_vocab.contains(*w)).count();
    100.0 * shared as f64 / test_vocab.len() as f64
}

/// Statistics over named splits. The overlap is reported when both a `train`
/// and a `test` split are present.
pub fn stats(splits: &[(&str, &Corpus)]) -> Stats {
    let find = |name: &str| splits.iter().find(|(n, _)| *n == name).map(|(_, c)| *c);
    Stats {
        splits: splits.iter().map(|(n, c)| split_stats(n, c)).collect(),
        overlap_percent: match (find("train"), find("test")) {
            (Some(train), Some(test)) => Some(overlap_percent(train, test)),
            _ => None,
        },
    }
}

impl Stats {
    /// Label-distribution table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "Label");
        for s in &self.splits {
            let _ = write!(out, " {:>10}", s.name);
        }
        out.push('\n');
        for tag in Tag::ORIGINAL_REPORT_ORDER {
            let _ = write!(out, "{:<12}", tag.report_name());
            for s in &self.splits {
                let _ = write!(out, " {:>10}", s.label_counts[tag.index()]);
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "Total");
        for s in &self.splits {
            let _ = write!(out, " {:>10}", s.tokens);
        }
        out.push('\n');
        let _ = write!(out, "{:<12}", "Sentences");
        for s in &self.splits {
            let _ = write!(out, " {:>10}", s.sentences);
        }
        out.push('\n');
        let _ = write!(out, "{:<12}", "Unique");
        for s in &self.splits {
            let _ = write!(out, " {:>10}", s.unique_tokens);
        }
        out.push('\n');
        if let Some(p) = self.overlap_percent {
            let _ = writeln!(out, "test vocabulary found in train: {p:.1}%");
        }
        out
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for s in &self.splits {
            for tag in Tag::ORIGINAL_REPORT_ORDER {
                let _ = writeln!(out, "stats.{}.{}={}", s.name, tag.report_name(), s.label_counts[tag.index()]);
            }
            let _ = writeln!(out, "stats.{}.total={}", s.name, s.tokens);
            let _ = writeln!(out, "stats.{}.sentences={}", s.name, s.sentences);
            let _ = writeln!(out, "stats.{}.unique_tokens={}", s.name, s.unique_tokens);
        }
        if let Some(p) = self.overlap_percent {
            let _ = writeln!(out, "stats.overlap_percent={p:.4}");
        }
        out
    }

    /// Per-split label counts keyed by report name.
    pub fn counts(&self, split: &str) -> Option<BTreeMap<&'static str, usize>> {
        let s = self.splits.iter().find(|s| s.name == split)?;
        Some(
            Tag::ORIGINAL
                .iter()
                .map(|t| (t.report_name(), s.label_counts[t.index()]))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        parse_conll(text.as_bytes(), LabelColumn::Required)
    }

    #[test]
    fn two_line_file() {
        let c = parse("kamar\tB-ASPECT\nbersih\tB-SENTIMENT\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.token_count(), 2);
        assert_eq!(c.sentences[0].labels, vec![Tag::BAspect, Tag::BSentiment]);
        assert_eq!(c.sentences[0].id, "0");
    }

    #[test]
    fn space_separated_line_is_malformed() {
        match parse("kamar B-ASPECT\n") {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("a\tO\nb\tO\tO\n"), Err(CorpusError::MalformedLine { line: 2, .. })));
        assert!(matches!(parse("\tO\n"), Err(CorpusError::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn bad_and_auxiliary_labels() {
        assert!(matches!(parse("a\tB-THING\n"), Err(CorpusError::BadLabel { line: 1, .. })));
        assert!(matches!(parse("a\tO\nb\tX-ASPECT\n"), Err(CorpusError::BadLabel { line: 2, .. })));
    }

    #[test]
    fn empty_file() {
        assert!(matches!(parse(""), Err(CorpusError::EmptyFile)));
        assert!(matches!(parse("\n\n# id = x\n"), Err(CorpusError::EmptyFile)));
    }

    #[test]
    fn blank_lines_and_ids() {
        let c = parse("# id = r7\na\tOTHER\n\n\n\nb\tO\r\nc\tI-ASPECT\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].id, "r7");
        assert_eq!(c.sentences[1].id, "1");
        assert_eq!(c.sentences[1].words, vec!["b", "c"]);
    }

    #[test]
    fn hash_token_is_not_a_comment() {
        let c = parse("#\tO\n").unwrap();
        assert_eq!(c.sentences[0].words, vec!["#"]);
    }

    #[test]
    fn optional_labels() {
        let c = parse_conll("kamar\nbersih\tB-SENTIMENT\n".as_bytes(), LabelColumn::Optional).unwrap();
        assert_eq!(c.sentences[0].labels, vec![Tag::O, Tag::BSentiment]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let c = parse("# id = q\na\tB-ASPECT\nb\tI-ASPECT\n\nc\tO\n").unwrap();
        let mut buf = Vec::new();
        write_conll(&mut buf, &c).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), c);
    }

    fn numbered(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| Sentence::new(i.to_string(), vec![format!("w{i}")], vec![Tag::O]))
                .collect(),
        )
    }

    #[test]
    fn split_is_seeded_disjoint_and_exhaustive() {
        let c = numbered(4000);
        let (train, val) = split_train_validation(&c, 3000, 7).unwrap();
        assert_eq!((train.len(), val.len()), (3000, 1000));
        let mut ids: Vec<_> = train.sentences.iter().chain(&val.sentences).map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4000);
        assert_eq!(split_train_validation(&c, 3000, 7).unwrap().0, train);
        assert_ne!(split_train_validation(&c, 3000, 8).unwrap().0, train);
        assert!(matches!(
            split_train_validation(&c, 4000, 7),
            Err(CorpusError::InsufficientData { .. })
        ));
    }

    #[test]
    fn stats_counts_and_overlap() {
        let train = parse("a\tB-ASPECT\nb\tO\n\na\tB-ASPECT\nc\tB-SENTIMENT\n").unwrap();
        let test = parse("a\tO\nc\tI-SENTIMENT\n").unwrap();
        let st = stats(&[("train", &train), ("test", &test)]);
        assert_eq!(st.splits[0].label_counts, [1, 2, 0, 1, 0]);
        assert_eq!(st.splits[0].label_counts.iter().sum::<usize>(), st.splits[0].tokens);
        assert_eq!(st.splits[0].unique_tokens, 3);
        assert_eq!(st.overlap_percent, Some(100.0));
        let test2 = parse("a\tO\nzz\tO\n").unwrap();
        assert_eq!(overlap_percent(&train, &test2), 50.0);
        assert!(st.to_kv().contains("stats.train.B-ASPECT=2"));
        assert!(st.to_kv().contains("stats.test.OTHER=1"));
        assert!(st.to_table().contains("OTHER"));
    }
}
