//! Word ↔ subword label alignment.
//!
//! The first piece of each word keeps the word's label; trailing pieces get
//! `X-ASPECT`, `X-SENTIMENT` or `Y` depending on the word's family, and the
//! sequence is wrapped in `[CLS]`/`[SEP]` labelled `A`/`Z`.

use thiserror::Error;

use crate::labelspace::Tag;
use crate::segment::Segmenter;

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Default cap on subwords per sentence, markers included.
pub const DEFAULT_MAX_SUBWORDS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("sentence has no words")]
    EmptySentence,
    #[error("{words} words but {labels} labels")]
    WordLabelMismatch { words: usize, labels: usize },
    #[error("auxiliary label {tag} at word {position}; only BIO tags are allowed on words")]
    AuxiliaryLabelInInput { position: usize, tag: Tag },
    #[error("segmenter produced no pieces for word {position}")]
    EmptySegmentation { position: usize },
    #[error("expected {expected} predicted labels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("sentence needs {len} subwords, cap is {cap}")]
    SentenceTooLong { len: usize, cap: usize },
}

/// Parallel word-level and subword-level views of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSentence {
    pub words: Vec<String>,
    pub word_labels: Vec<Tag>,
    pub subwords: Vec<String>,
    pub subword_labels: Vec<Tag>,
    /// Inclusive `(start, end)` subword indices of each word.
    pub spans: Vec<(usize, usize)>,
}

impl AlignedSentence {
    pub fn len(&self) -> usize {
        self.subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subwords.is_empty()
    }

    /// Word index owning each subword position; `None` for the markers.
    pub fn owners(&self) -> Vec<Option<usize>> {
        let mut owners = vec![None; self.subwords.len()];
        for (w, &(s, e)) in self.spans.iter().enumerate() {
            for o in &mut owners[s..=e] {
                *o = Some(w);
            }
        }
        owners
    }

    /// True at positions that start a word.
    pub fn word_starts(&self) -> Vec<bool> {
        let mut starts = vec![false; self.subwords.len()];
        for &(s, _) in &self.spans {
            starts[s] = true;
        }
        starts
    }
}

/// Projects word labels onto the subword sequence produced by `segmenter`.
pub fn project(
    words: &[String],
    word_labels: &[Tag],
    segmenter: &dyn Segmenter,
) -> Result<AlignedSentence, AlignError> {
    let pieces: Vec<Vec<String>> = words.iter().map(|w| segmenter.segment(w)).collect();
    project_pieces(words, word_labels, pieces)
}

/// Same as [`project`] with the segmentation supplied up front.
pub fn project_pieces(
    words: &[String],
    word_labels: &[Tag],
    pieces: Vec<Vec<String>>,
) -> Result<AlignedSentence, AlignError> {
    if words.is_empty() {
        return Err(AlignError::EmptySentence);
    }
    if words.len() != word_labels.len() || words.len() != pieces.len() {
        return Err(AlignError::WordLabelMismatch {
            words: words.len(),
            labels: word_labels.len(),
        });
    }
    if let Some((position, &tag)) = word_labels.iter().enumerate().find(|(_, t)| t.is_auxiliary()) {
        return Err(AlignError::AuxiliaryLabelInInput { position, tag });
    }

    let total: usize = pieces.iter().map(Vec::len).sum::<usize>() + 2;
    let mut subwords = Vec::with_capacity(total);
    let mut subword_labels = Vec::with_capacity(total);
    let mut spans = Vec::with_capacity(words.len());
    subwords.push(CLS.to_string());
    subword_labels.push(Tag::A);
    for (position, (word_pieces, &label)) in pieces.into_iter().zip(word_labels).enumerate() {
        if word_pieces.is_empty() {
            return Err(AlignError::EmptySegmentation { position });
        }
        let start = subwords.len();
        for (k, piece) in word_pieces.into_iter().enumerate() {
            subwords.push(piece);
            subword_labels.push(if k == 0 { label } else { label.trailing() });
        }
        spans.push((start, subwords.len() - 1));
    }
    subwords.push(SEP.to_string());
    subword_labels.push(Tag::Z);

    Ok(AlignedSentence {
        words: words.to_vec(),
        word_labels: word_labels.to_vec(),
        subwords,
        subword_labels,
        spans,
    })
}

/// Word-level labels recovered from subword predictions, with the number of
/// word-initial auxiliary predictions that had to be repaired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collapsed {
    pub labels: Vec<Tag>,
    pub repairs: usize,
}

/// Reads each word's label off its first subword.
///
/// Auxiliary tags predicted at a word-initial position are mapped back with
/// [`Tag::repaired`]; predictions on trailing pieces and markers are ignored.
pub fn collapse(aligned: &AlignedSentence, predicted: &[Tag]) -> Result<Collapsed, AlignError> {
    if predicted.len() != aligned.subwords.len() {
        return Err(AlignError::LengthMismatch {
            expected: aligned.subwords.len(),
            actual: predicted.len(),
        });
    }
    let mut repairs = 0;
    let labels = aligned
        .spans
        .iter()
        .map(|&(start, _)| {
            let tag = predicted[start];
            if tag.is_auxiliary() {
                repairs += 1;
            }
            tag.repaired()
        })
        .collect();
    Ok(Collapsed { labels, repairs })
}

/// Wraps a segmenter with the subword-length cap applied at ingestion.
pub struct Aligner<'a> {
    segmenter: &'a dyn Segmenter,
    max_subwords: usize,
}

impl<'a> Aligner<'a> {
    pub fn new(segmenter: &'a dyn Segmenter) -> Self {
        Aligner {
            segmenter,
            max_subwords: DEFAULT_MAX_SUBWORDS,
        }
    }

    pub fn with_cap(mut self, max_subwords: usize) -> Self {
        self.max_subwords = max_subwords;
        self
    }

    pub fn align(&self, words: &[String], labels: &[Tag]) -> Result<AlignedSentence, AlignError> {
        let aligned = project(words, labels, self.segmenter)?;
        check_cap(aligned, self.max_subwords)
    }

    pub fn align_pieces(
        &self,
        words: &[String],
        labels: &[Tag],
        pieces: Vec<Vec<String>>,
    ) -> Result<AlignedSentence, AlignError> {
        let aligned = project_pieces(words, labels, pieces)?;
        check_cap(aligned, self.max_subwords)
    }
}

fn check_cap(aligned: AlignedSentence, cap: usize) -> Result<AlignedSentence, AlignError> {
    if aligned.len() > cap {
        return Err(AlignError::SentenceTooLong {
            len: aligned.len(),
            cap,
        });
    }
    Ok(aligned)
}
