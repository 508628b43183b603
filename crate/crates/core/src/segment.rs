//! Word → subword segmenters.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

/// Continuation prefix for non-initial pieces.
pub const CONTINUATION: &str = "##";

/// Splits a single word into subword pieces.
pub trait Segmenter {
    fn segment(&self, word: &str) -> Vec<String>;
}

impl<F> Segmenter for F
where
    F: Fn(&str) -> Vec<String>,
{
    fn segment(&self, word: &str) -> Vec<String> {
        self(word)
    }
}

/// Every word is a single piece.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeWord;

impl Segmenter for WholeWord {
    fn segment(&self, word: &str) -> Vec<String> {
        vec![word.to_string()]
    }
}

/// Greedy longest-match-first segmentation against a fixed vocabulary.
///
/// Non-initial pieces are looked up with the `##` prefix. If the greedy walk
/// gets stuck anywhere in the word, the whole word falls back to one piece per
/// character.
#[derive(Debug, Clone, Default)]
pub struct WordPiece {
    vocab: HashSet<String>,
}

impl WordPiece {
    pub fn new<I, S>(vocab: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WordPiece {
            vocab: vocab.into_iter().map(Into::into).collect(),
        }
    }

    /// Reads a vocabulary file: one piece per line, UTF-8. Blank lines are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.is_empty()),
        ))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    fn greedy(&self, word: &str) -> Option<Vec<String>> {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let begin = chars[start].0;
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let stop = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = if start == 0 {
                    word[begin..stop].to_string()
                } else {
                    format!("{CONTINUATION}{}", &word[begin..stop])
                };
                if self.vocab.contains(&piece) {
                    found = Some((end, piece));
                    break;
                }
            }
            let (end, piece) = found?;
            pieces.push(piece);
            start = end;
        }
        Some(pieces)
    }
}

/// One piece per character, continuation-prefixed after the first.
pub fn char_split(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            }
        })
        .collect()
}

impl Segmenter for WordPiece {
    fn segment(&self, word: &str) -> Vec<String> {
        if word.is_empty() {
            return vec![String::new()];
        }
        self.greedy(word).unwrap_or_else(|| char_split(word))
    }
}
