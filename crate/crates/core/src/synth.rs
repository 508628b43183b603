//! Seeded generator of hotel-review-like sentences with gold aspect and
//! opinion spans, plus a matching subword vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sentence};
use crate::labelspace::Tag;

const ASPECTS: &[&str] = &[
    "kamar", "kasur", "ac", "wifi", "pelayanan", "staf", "lokasi", "sarapan", "resepsionis", "harga",
    "handuk", "parkiran", "lift", "shower", "bantal", "selimut", "toilet", "lobby",
];

/// Aspect stems that also appear with the `-nya` suffix.
const NYA_STEMS: &[&str] = &["kamar", "kasur", "tempat", "pelayanan", "lokasi", "sarapan", "harga", "staf"];

const ASPECT_PAIRS: &[(&str, &str)] = &[
    ("kamar", "mandi"),
    ("air", "panas"),
    ("kolam", "renang"),
    ("tempat", "tidur"),
    ("tv", "kabel"),
];

const SENTIMENTS: &[&str] = &[
    "bersih", "kotor", "nyaman", "bagus", "jelek", "ramah", "cepat", "lambat", "luas", "sempit", "enak",
    "murah", "mahal", "strategis", "wangi", "bau", "dingin", "berisik", "oke", "mantap", "rusak",
];

const INTENSIFIERS: &[&str] = &["banget", "sekali", "bgt", "skali"];

/// Words that open a two-word opinion; only used in ambiguous mode, where
/// they turn the following opinion word into an inside tag.
const MODIFIERS: &[&str] = &["kurang", "sangat", "tidak", "cukup", "agak"];

const FILLERS: &[&str] = &["juga", "sih", "ya", "lho", "memang"];

/// Opinion words that double as part of an aspect in ambiguous mode.
const AMBIGUOUS_SENTIMENTS: &[&str] = &["panas"];

/// Pieces for words that the vocabulary splits.
const SPLIT_WORDS: &[(&str, &[&str])] = &[
    ("utk", &["ut", "##k"]),
    ("resepsionis", &["resep", "##sionis"]),
    ("strategis", &["strate", "##gis"]),
    ("berisik", &["beris", "##ik"]),
    ("recommended", &["re", "##commend", "##ed"]),
    ("pokoknya", &["pokok", "##nya"]),
    ("menginap", &["meng", "##inap"]),
];

const OTHER_WORDS: &[&str] = &[
    "dan", "tapi", "yang", "di", "hotel", "ini", "utk", "overall", "pokoknya", "saya", "kami", "menginap",
    "disini", "karena", "recommended", "transit", ",", ".", "!",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// When false every token string carries a single label across the corpus.
    pub ambiguous: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 500,
            seed: 1,
            ambiguous: true,
        }
    }
}

struct Builder {
    words: Vec<String>,
    labels: Vec<Tag>,
}

impl Builder {
    fn push(&mut self, word: &str, tag: Tag) {
        self.words.push(word.to_string());
        self.labels.push(tag);
    }
}

fn aspect(rng: &mut ChaCha8Rng, b: &mut Builder) {
    match rng.gen_range(0..10) {
        0..=4 => b.push(ASPECTS.choose(rng).unwrap(), Tag::BAspect),
        5..=7 => {
            let stem = NYA_STEMS.choose(rng).unwrap();
            b.push(&format!("{stem}nya"), Tag::BAspect);
        }
        _ => {
            let (first, second) = ASPECT_PAIRS.choose(rng).unwrap();
            b.push(first, Tag::BAspect);
            b.push(second, Tag::IAspect);
        }
    }
}

fn sentiment(rng: &mut ChaCha8Rng, b: &mut Builder, ambiguous: bool) {
    let pool: Vec<&str> = if ambiguous {
        SENTIMENTS.iter().chain(AMBIGUOUS_SENTIMENTS).copied().collect()
    } else {
        SENTIMENTS.to_vec()
    };
    let word = pool.choose(rng).unwrap();
    match rng.gen_range(0..10) {
        0..=5 => b.push(word, Tag::BSentiment),
        6..=7 => {
            b.push(word, Tag::BSentiment);
            b.push(INTENSIFIERS.choose(rng).unwrap(), Tag::ISentiment);
        }
        _ if ambiguous => {
            b.push(MODIFIERS.choose(rng).unwrap(), Tag::BSentiment);
            b.push(word, Tag::ISentiment);
        }
        _ => b.push(word, Tag::BSentiment),
    }
}

fn filler(rng: &mut ChaCha8Rng, b: &mut Builder) {
    if rng.gen_bool(0.3) {
        b.push(FILLERS.choose(rng).unwrap(), Tag::O);
    }
}

fn sentence(rng: &mut ChaCha8Rng, ambiguous: bool) -> (Vec<String>, Vec<Tag>) {
    let mut b = Builder {
        words: Vec::new(),
        labels: Vec::new(),
    };
    let o = |b: &mut Builder, w: &str| b.push(w, Tag::O);
    match rng.gen_range(0..8) {
        0 => {
            aspect(rng, &mut b);
            filler(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
        }
        1 => {
            aspect(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, if rng.gen_bool(0.5) { "dan" } else { "tapi" });
            aspect(rng, &mut b);
            filler(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
        }
        2 => {
            for w in ["saya", "menginap", "di", "hotel", "ini", ","] {
                o(&mut b, w);
            }
            aspect(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
        }
        3 => {
            o(&mut b, "pokoknya");
            aspect(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, ".");
        }
        4 => {
            o(&mut b, "overall");
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, "utk");
            o(&mut b, "transit");
        }
        5 => {
            aspect(rng, &mut b);
            o(&mut b, "yang");
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, "karena");
            aspect(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
        }
        6 => {
            o(&mut b, "kami");
            o(&mut b, "disini");
            o(&mut b, ",");
            aspect(rng, &mut b);
            filler(rng, &mut b);
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, "!");
            o(&mut b, "recommended");
        }
        _ => {
            sentiment(rng, &mut b, ambiguous);
            o(&mut b, "di");
            aspect(rng, &mut b);
        }
    }
    (b.words, b.labels)
}

/// Generates `config.sentences` sentences named `{prefix}{ordinal}`.
pub fn generate(config: &SynthConfig, prefix: &str) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Corpus::new(
        (0..config.sentences)
            .map(|i| {
                let (words, labels) = sentence(&mut rng, config.ambiguous);
                Sentence::new(format!("{prefix}{i}"), words, labels)
            })
            .collect(),
    )
}

/// Train/validation/test corpora from independent seeded streams.
pub fn generate_splits(train: usize, validation: usize, test: usize, seed: u64, ambiguous: bool) -> [Corpus; 3] {
    let make = |n, offset: u64, prefix: &str| {
        generate(
            &SynthConfig {
                sentences: n,
                seed: seed.wrapping_mul(31).wrapping_add(offset),
                ambiguous,
            },
            prefix,
        )
    };
    [make(train, 0, "train-"), make(validation, 1, "val-"), make(test, 2, "test-")]
}

/// Subword vocabulary covering every synthetic word. `-nya` words and the
/// entries of the split table come out as several pieces.
pub fn vocabulary() -> Vec<String> {
    let mut vocab: Vec<String> = Vec::new();
    let split: Vec<&str> = SPLIT_WORDS.iter().map(|(w, _)| *w).collect();
    let whole = ASPECTS
        .iter()
        .chain(NYA_STEMS)
        .chain(ASPECT_PAIRS.iter().flat_map(|(a, b)| [a, b]))
        .chain(SENTIMENTS)
        .chain(AMBIGUOUS_SENTIMENTS)
        .chain(INTENSIFIERS)
        .chain(MODIFIERS)
        .chain(FILLERS)
        .chain(OTHER_WORDS)
        .filter(|w| !split.contains(w));
    vocab.extend(whole.map(|w| w.to_string()));
    for (_, pieces) in SPLIT_WORDS {
        vocab.extend(pieces.iter().map(|p| p.to_string()));
    }
    vocab.push("##nya".to_string());
    vocab.sort();
    vocab.dedup();
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{Segmenter, WordPiece};
    use std::collections::HashMap;

    #[test]
    fn seeded_and_nonempty() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, "s");
        assert_eq!(a, generate(&cfg, "s"));
        assert_eq!(a.len(), 500);
        assert!(a.sentences.iter().all(|s| !s.words.is_empty() && s.words.len() == s.labels.len()));
        let other = generate(&SynthConfig { seed: 2, ..cfg }, "s");
        assert_ne!(a, other);
    }

    #[test]
    fn labels_are_valid_bio() {
        let c = generate(&SynthConfig::default(), "");
        for s in &c.sentences {
            for (i, t) in s.labels.iter().enumerate() {
                if t.is_inside() {
                    let prev = s.labels[i - 1];
                    assert_eq!(prev.family(), t.family());
                }
            }
        }
    }

    #[test]
    fn deterministic_mode_has_one_label_per_token() {
        let c = generate(&SynthConfig { sentences: 2000, seed: 3, ambiguous: false }, "");
        let mut seen: HashMap<&str, Tag> = HashMap::new();
        for s in &c.sentences {
            for (w, t) in s.words.iter().zip(&s.labels) {
                assert_eq!(*seen.entry(w.as_str()).or_insert(*t), *t, "token {w}");
            }
        }
    }

    #[test]
    fn ambiguous_mode_is_ambiguous() {
        let c = generate(&SynthConfig { sentences: 2000, seed: 3, ambiguous: true }, "");
        let mut seen: HashMap<&str, Tag> = HashMap::new();
        let mut clash = false;
        for s in &c.sentences {
            for (w, t) in s.words.iter().zip(&s.labels) {
                clash |= *seen.entry(w.as_str()).or_insert(*t) != *t;
            }
        }
        assert!(clash);
    }

    #[test]
    fn vocabulary_segments_without_char_fallback() {
        let wp = WordPiece::new(vocabulary());
        assert_eq!(wp.segment("kamarnya"), vec!["kamar", "##nya"]);
        assert_eq!(wp.segment("utk"), vec!["ut", "##k"]);
        let c = generate(&SynthConfig::default(), "");
        for s in &c.sentences {
            for w in &s.words {
                let pieces = wp.segment(w);
                assert!(pieces.len() <= 3, "{w} -> {pieces:?}");
            }
        }
    }
}
