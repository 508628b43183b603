//! Emission scores from a hashed sparse-feature linear model.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::align::{AlignedSentence, CLS, SEP};
use crate::crf::{EmissionMatrix, Row};
use crate::labelspace::NUM_TAGS;
use crate::segment::CONTINUATION;

/// Smallest permitted hash space.
pub const MIN_HASH_DIM: u32 = 1 << 16;

/// Default hash space.
pub const DEFAULT_HASH_DIM: u32 = 1 << 18;

/// Seed mixed into every feature hash. Stored in model files.
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_a5be_c7ed_0001;

pub type FeatureId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmitError {
    #[error("hash dimension {0} must be a power of two and at least {MIN_HASH_DIM}")]
    BadHashDim(u32),
    #[error("feature id {id} outside hash space {dim}")]
    FeatureOutOfRange { id: FeatureId, dim: u32 },
    #[error("non-finite weight for feature {0}")]
    NonFiniteWeight(FeatureId),
}

/// 64-bit FNV-1a over the seed bytes followed by the input.
fn fnv1a(seed: u64, parts: &[&str]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for part in parts {
        for &b in part.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Feature template names. Each feature is `template` + value, hashed.
mod template {
    pub const SUBWORD: &str = "sw";
    pub const WORD: &str = "w";
    pub const PREFIX: [&str; 3] = ["p1", "p2", "p3"];
    pub const SUFFIX: [&str; 3] = ["s1", "s2", "s3"];
    pub const CONTINUATION: &str = "cont";
    pub const CLS: &str = "cls";
    pub const SEP: &str = "sep";
    pub const PREV: &str = "sw-1";
    pub const NEXT: &str = "sw+1";
    pub const FIRST: &str = "first";
    pub const BIAS: &str = "bias";
    /// Neighbouring words at offsets -2, -1, +1, +2.
    pub const WINDOW: [&str; 4] = ["w-2", "w-1", "w+1", "w+2"];
    pub const BIGRAM_LEFT: &str = "w-1|w";
    pub const BIGRAM_RIGHT: &str = "w|w+1";
}

/// Linear emission model over hashed features with one weight vector per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmitter {
    hash_dim: u32,
    hash_seed: u64,
    /// Only features that have been touched are stored; absent ids weigh zero.
    pub weights: BTreeMap<FeatureId, Row>,
}

impl Default for FeatureEmitter {
    fn default() -> Self {
        FeatureEmitter {
            hash_dim: DEFAULT_HASH_DIM,
            hash_seed: DEFAULT_HASH_SEED,
            weights: BTreeMap::new(),
        }
    }
}

impl FeatureEmitter {
    pub fn new(hash_dim: u32, hash_seed: u64) -> Result<Self, EmitError> {
        if hash_dim < MIN_HASH_DIM || !hash_dim.is_power_of_two() {
            return Err(EmitError::BadHashDim(hash_dim));
        }
        Ok(FeatureEmitter {
            hash_dim,
            hash_seed,
            weights: BTreeMap::new(),
        })
    }

    pub fn hash_dim(&self) -> u32 {
        self.hash_dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    /// Checks ranges and finiteness, e.g. after loading from disk.
    pub fn validate(&self) -> Result<(), EmitError> {
        for (&id, row) in &self.weights {
            if id >= self.hash_dim {
                return Err(EmitError::FeatureOutOfRange { id, dim: self.hash_dim });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmitError::NonFiniteWeight(id));
            }
        }
        Ok(())
    }

    fn id(&self, template: &str, value: &str) -> FeatureId {
        (fnv1a(self.hash_seed, &[template, value]) & (self.hash_dim as u64 - 1)) as FeatureId
    }

    /// Sorted, de-duplicated feature ids firing at `position`.
    pub fn featurize(&self, aligned: &AlignedSentence, position: usize) -> Vec<FeatureId> {
        let owners = aligned.owners();
        self.featurize_with(aligned, &owners, position)
    }

    fn featurize_with(
        &self,
        aligned: &AlignedSentence,
        owners: &[Option<usize>],
        position: usize,
    ) -> Vec<FeatureId> {
        let subwords = &aligned.subwords;
        let piece = subwords[position].as_str();
        let mut ids = Vec::with_capacity(16);
        ids.push(self.id(template::BIAS, ""));
        ids.push(self.id(template::SUBWORD, piece));
        if position == 0 && piece == CLS {
            ids.push(self.id(template::CLS, ""));
        }
        if position + 1 == subwords.len() && piece == SEP {
            ids.push(self.id(template::SEP, ""));
        }
        if piece.starts_with(CONTINUATION) {
            ids.push(self.id(template::CONTINUATION, ""));
        }
        let prev = if position == 0 { "<s>" } else { subwords[position - 1].as_str() };
        let next = subwords.get(position + 1).map_or("</s>", String::as_str);
        ids.push(self.id(template::PREV, prev));
        ids.push(self.id(template::NEXT, next));
        if let Some(w) = owners[position] {
            if aligned.spans[w].0 == position {
                ids.push(self.id(template::FIRST, ""));
            }
            let word = aligned.words[w].to_lowercase();
            ids.push(self.id(template::WORD, &word));
            let chars: Vec<char> = word.chars().collect();
            for n in 1..=3.min(chars.len()) {
                let prefix: String = chars[..n].iter().collect();
                let suffix: String = chars[chars.len() - n..].iter().collect();
                ids.push(self.id(template::PREFIX[n - 1], &prefix));
                ids.push(self.id(template::SUFFIX[n - 1], &suffix));
            }
            let n_words = aligned.words.len() as isize;
            let neighbour = |offset: isize| -> String {
                let j = w as isize + offset;
                if j < 0 {
                    "<s>".into()
                } else if j >= n_words {
                    "</s>".into()
                } else {
                    aligned.words[j as usize].to_lowercase()
                }
            };
            for (name, offset) in template::WINDOW.iter().zip([-2, -1, 1, 2]) {
                ids.push(self.id(name, &neighbour(offset)));
            }
            ids.push(self.id(template::BIGRAM_LEFT, &format!("{}|{word}", neighbour(-1))));
            ids.push(self.id(template::BIGRAM_RIGHT, &format!("{word}|{}", neighbour(1))));
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Feature ids for every position of the sentence.
    pub fn featurize_sentence(&self, aligned: &AlignedSentence) -> Vec<Vec<FeatureId>> {
        let owners = aligned.owners();
        (0..aligned.subwords.len())
            .map(|t| self.featurize_with(aligned, &owners, t))
            .collect()
    }

    /// Emission rows as sums of the weight vectors of the firing features.
    pub fn emit_features(&self, features: &[Vec<FeatureId>]) -> EmissionMatrix {
        let rows = features
            .iter()
            .map(|ids| {
                let mut row = [0.0; NUM_TAGS];
                for id in ids {
                    if let Some(w) = self.weights.get(id) {
                        for (r, v) in row.iter_mut().zip(w) {
                            *r += v;
                        }
                    }
                }
                row
            })
            .collect();
        EmissionMatrix::new(rows).expect("finite weights give finite emissions")
    }

    pub fn emit(&self, aligned: &AlignedSentence) -> EmissionMatrix {
        self.emit_features(&self.featurize_sentence(aligned))
    }

    /// Pushes emission-row gradients back onto feature weights.
    pub fn accumulate_gradient(
        features: &[Vec<FeatureId>],
        emission_grad: &[Row],
        into: &mut BTreeMap<FeatureId, Row>,
    ) {
        for (ids, g) in features.iter().zip(emission_grad) {
            for id in ids {
                let slot = into.entry(*id).or_insert([0.0; NUM_TAGS]);
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
    }
}
