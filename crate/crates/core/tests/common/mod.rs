//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use auxcrf::crf::{CrfParams, EmissionMatrix, PathMask, Row};
use auxcrf::labelspace::{Tag, NUM_TAGS};
use auxcrf::AlignedSentence;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Direct summation of start + emissions + transitions + end.
pub fn brute_score(p: &CrfParams, em: &[Row], path: &[usize]) -> f64 {
    let mut s = p.start[path[0]] + p.end[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += em[t][y];
    }
    for t in 1..path.len() {
        s += p.transitions[path[t - 1]][path[t]];
    }
    s
}

/// Every tag-index sequence of length `len`, in odometer order.
pub fn all_paths(len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = NUM_TAGS.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut path = vec![0; len];
        for slot in path.iter_mut().rev() {
            *slot = code % NUM_TAGS;
            code /= NUM_TAGS;
        }
        path
    })
}

pub fn to_tags(path: &[usize]) -> Vec<Tag> {
    path.iter().map(|&i| Tag::ALL[i]).collect()
}

/// log Σ exp(score) over all paths, or over the paths the mask allows.
pub fn brute_log_partition(p: &CrfParams, em: &[Row], mask: Option<&PathMask>) -> f64 {
    let scores: Vec<f64> = all_paths(em.len())
        .filter(|path| mask.is_none_or(|m| m.is_legal(&to_tags(path))))
        .map(|path| brute_score(p, em, &path))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Best path by enumeration. Scores within `tie_tol` of the best count as
/// tied; among those the path that is smallest when compared from the last
/// position backwards wins.
pub fn brute_argmax(p: &CrfParams, em: &[Row], mask: Option<&PathMask>, tie_tol: f64) -> Option<(Vec<usize>, f64)> {
    let scored: Vec<(Vec<usize>, f64)> = all_paths(em.len())
        .filter(|path| mask.is_none_or(|m| m.is_legal(&to_tags(path))))
        .map(|path| {
            let s = brute_score(p, em, &path);
            (path, s)
        })
        .collect();
    let best = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    scored
        .into_iter()
        .filter(|(_, s)| *s >= best - tie_tol)
        .min_by(|(a, _), (b, _)| a.iter().rev().cmp(b.iter().rev()))
}

pub fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> CrfParams {
    let mut p = CrfParams::zeros();
    for v in p.values_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    p
}

pub fn random_rows(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<Row> {
    (0..len)
        .map(|_| {
            let mut row = [0.0; NUM_TAGS];
            for v in row.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
            row
        })
        .collect()
}

pub fn random_emissions(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> EmissionMatrix {
    EmissionMatrix::new(random_rows(rng, len, scale)).unwrap()
}

/// Small integers, so that exact ties occur often.
pub fn integer_params(rng: &mut ChaCha8Rng) -> CrfParams {
    let mut p = CrfParams::zeros();
    for v in p.values_mut() {
        *v = rng.gen_range(-1..=1) as f64;
    }
    p
}

pub fn integer_rows(rng: &mut ChaCha8Rng, len: usize) -> Vec<Row> {
    (0..len)
        .map(|_| {
            let mut row = [0.0; NUM_TAGS];
            for v in row.iter_mut() {
                *v = rng.gen_range(-1..=1) as f64;
            }
            row
        })
        .collect()
}

pub fn random_tags(rng: &mut ChaCha8Rng, len: usize) -> Vec<Tag> {
    (0..len).map(|_| Tag::ALL[rng.gen_range(0..NUM_TAGS)]).collect()
}

pub fn random_original_labels(rng: &mut ChaCha8Rng, len: usize) -> Vec<Tag> {
    (0..len).map(|_| Tag::ORIGINAL[rng.gen_range(0..Tag::ORIGINAL.len())]).collect()
}

/// Words `w0 w1 ...` split into the given number of pieces each.
pub fn pieces_for(counts: &[usize]) -> (Vec<String>, Vec<Vec<String>>) {
    let words: Vec<String> = (0..counts.len()).map(|i| format!("w{i}")).collect();
    let pieces = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            (0..n)
                .map(|k| if k == 0 { format!("w{i}") } else { format!("##{i}{k}") })
                .collect()
        })
        .collect();
    (words, pieces)
}

/// Odometer over `base^len` digit vectors.
pub fn product(base: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = base.pow(len as u32);
    (0..total).map(move |mut code| {
        let mut v = vec![0; len];
        for slot in v.iter_mut().rev() {
            *slot = code % base;
            code /= base;
        }
        v
    })
}

/// Word-level BIO rule restated: `I-X` needs `B-X` or `I-X` right before it.
pub fn bio_valid(labels: &[Tag]) -> bool {
    labels.iter().enumerate().all(|(i, t)| {
        !t.is_inside()
            || (i > 0 && {
                let prev = labels[i - 1];
                prev.family() == t.family() && (prev.is_begin() || prev.is_inside())
            })
    })
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random aligned sentence over the original tag set, with 1–3 pieces per
/// word. With `bio` set the word labels are redrawn until BIO-valid.
pub fn random_aligned(rng: &mut ChaCha8Rng, max_words: usize, bio: bool) -> AlignedSentence {
    let n = rng.gen_range(1..=max_words);
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let (words, pieces) = pieces_for(&counts);
    let mut labels = random_original_labels(rng, n);
    while bio && !bio_valid(&labels) {
        labels = random_original_labels(rng, n);
    }
    auxcrf::align::project_pieces(&words, &labels, pieces).unwrap()
}
