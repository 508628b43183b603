//! Linear-chain CRF over the expanded tag space.
//!
//! Scores are `start[y0] + Σ emissions[t][yt] + Σ transitions[yt][yt+1] + end[yT-1]`.
//! The log-partition and its gradients come from forward-backward in log
//! space; decoding is Viterbi. Both can run under a [`PathMask`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::align::AlignedSentence;
use crate::labelspace::{ConstraintMask, Tag, NUM_TAGS};

/// Score substituted for masked entries in forward-backward.
pub const MASK_PENALTY: f64 = -1e4;

/// Half-width of the uniform initialisation range for transition/start/end scores.
pub const INIT_RANGE: f64 = 0.1;

pub type Row = [f64; NUM_TAGS];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence has {expected} positions but {actual} labels")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("mask covers {mask} positions but sequence has {sequence}")]
    MaskLengthMismatch { mask: usize, sequence: usize },
    #[error("non-finite emission score at position {position}")]
    NonFiniteEmission { position: usize },
    #[error("gold path violates the constraint mask at position {position}")]
    GoldViolatesMask { position: usize },
    #[error("no label sequence satisfies the constraint mask")]
    NoLegalPath,
}

/// Transition, start and end scores. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[i][j]`: score of tag `j` following tag `i`.
    pub transitions: [Row; NUM_TAGS],
    pub start: Row,
    pub end: Row,
}

/// Number of scalar CRF parameters.
pub const NUM_CRF_PARAMS: usize = NUM_TAGS * NUM_TAGS + 2 * NUM_TAGS;

impl CrfParams {
    pub fn zeros() -> Self {
        CrfParams {
            transitions: [[0.0; NUM_TAGS]; NUM_TAGS],
            start: [0.0; NUM_TAGS],
            end: [0.0; NUM_TAGS],
        }
    }

    /// Uniform in `(-INIT_RANGE, INIT_RANGE)`, seeded.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for v in p.values_mut() {
            *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
        p
    }

    /// Transitions row-major, then start, then end.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.transitions
            .iter()
            .flat_map(|r| r.iter())
            .chain(self.start.iter())
            .chain(self.end.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.transitions
            .iter_mut()
            .flat_map(|r| r.iter_mut())
            .chain(self.start.iter_mut())
            .chain(self.end.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn add_scaled(&mut self, other: &CrfParams, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }
}

/// Per-position, per-tag scores for one subword sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    rows: Vec<Row>,
}

impl EmissionMatrix {
    pub fn new(rows: Vec<Row>) -> Result<Self, CrfError> {
        if rows.is_empty() {
            return Err(CrfError::EmptySequence);
        }
        if let Some(position) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(CrfError::NonFiniteEmission { position });
        }
        Ok(EmissionMatrix { rows })
    }

    pub fn zeros(len: usize) -> Self {
        EmissionMatrix {
            rows: vec![[0.0; NUM_TAGS]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [Row] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<Row> {
        self.rows
    }
}

/// Constraint applied at score time: the transition grammar plus, optionally,
/// the set of tags allowed at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMask {
    pub grammar: ConstraintMask,
    pub positions: Option<Vec<[bool; NUM_TAGS]>>,
}

impl PathMask {
    pub fn grammar(grammar: &ConstraintMask) -> Self {
        PathMask {
            grammar: grammar.clone(),
            positions: None,
        }
    }

    /// Grammar plus the structure of an aligned sentence: `A` on `[CLS]`, `Z`
    /// on `[SEP]`, original tags on word-initial pieces and `X-*`/`Y` on
    /// trailing pieces.
    pub fn for_sentence(grammar: &ConstraintMask, aligned: &AlignedSentence) -> Self {
        let len = aligned.subwords.len();
        let starts = aligned.word_starts();
        let positions = (0..len)
            .map(|t| {
                let mut allowed = [false; NUM_TAGS];
                let permitted: &[Tag] = if t == 0 {
                    &[Tag::A]
                } else if t + 1 == len {
                    &[Tag::Z]
                } else if starts[t] {
                    &Tag::ORIGINAL
                } else {
                    &[Tag::XAspect, Tag::XSentiment, Tag::Y]
                };
                for tag in permitted {
                    allowed[tag.index()] = true;
                }
                allowed
            })
            .collect();
        PathMask {
            grammar: grammar.clone(),
            positions: Some(positions),
        }
    }

    fn check_len(&self, len: usize) -> Result<(), CrfError> {
        match &self.positions {
            Some(p) if p.len() != len => Err(CrfError::MaskLengthMismatch {
                mask: p.len(),
                sequence: len,
            }),
            _ => Ok(()),
        }
    }

    #[inline]
    fn allowed_at(&self, t: usize, tag: usize) -> bool {
        self.positions.as_ref().is_none_or(|p| p[t][tag])
    }

    /// First position at which `tags` breaks the mask.
    pub fn first_violation(&self, tags: &[Tag]) -> Option<usize> {
        let position_bad = tags
            .iter()
            .enumerate()
            .find(|(t, tag)| !self.allowed_at(*t, tag.index()))
            .map(|(t, _)| t);
        match (self.grammar.first_violation(tags), position_bad) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn is_legal(&self, tags: &[Tag]) -> bool {
        self.first_violation(tags).is_none()
    }
}

/// Parameters and emissions with the mask folded in.
struct Scores {
    transitions: [Row; NUM_TAGS],
    start: Row,
    end: Row,
    emissions: Vec<Row>,
}

impl Scores {
    fn build(
        params: &CrfParams,
        emissions: &EmissionMatrix,
        mask: Option<&PathMask>,
        blocked: f64,
    ) -> Result<Self, CrfError> {
        let mut s = Scores {
            transitions: params.transitions,
            start: params.start,
            end: params.end,
            emissions: emissions.rows.clone(),
        };
        if let Some(mask) = mask {
            mask.check_len(emissions.len())?;
            let g = &mask.grammar;
            for i in 0..NUM_TAGS {
                for j in 0..NUM_TAGS {
                    if !g.allowed[i][j] {
                        s.transitions[i][j] = blocked;
                    }
                }
                if !g.start_allowed[i] {
                    s.start[i] = blocked;
                }
                if !g.end_allowed[i] {
                    s.end[i] = blocked;
                }
            }
            for (t, row) in s.emissions.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if !mask.allowed_at(t, j) {
                        *v = blocked;
                    }
                }
            }
        }
        Ok(s)
    }
}

#[inline]
fn log_sum_exp(values: &Row) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Unnormalised log-score of one label sequence.
pub fn sequence_score(
    params: &CrfParams,
    emissions: &EmissionMatrix,
    labels: &[Tag],
) -> Result<f64, CrfError> {
    if labels.len() != emissions.len() {
        return Err(CrfError::LengthMismatch {
            expected: emissions.len(),
            actual: labels.len(),
        });
    }
    let Some(first) = labels.first() else {
        return Err(CrfError::EmptySequence);
    };
    let mut score = params.start[first.index()];
    for (row, tag) in emissions.rows.iter().zip(labels) {
        score += row[tag.index()];
    }
    for pair in labels.windows(2) {
        score += params.transitions[pair[0].index()][pair[1].index()];
    }
    score += params.end[labels[labels.len() - 1].index()];
    Ok(score)
}

fn forward(s: &Scores) -> (Vec<Row>, f64) {
    let len = s.emissions.len();
    let mut alpha = vec![[0.0; NUM_TAGS]; len];
    for j in 0..NUM_TAGS {
        alpha[0][j] = s.start[j] + s.emissions[0][j];
    }
    let mut buf = [0.0; NUM_TAGS];
    for t in 1..len {
        for j in 0..NUM_TAGS {
            for i in 0..NUM_TAGS {
                buf[i] = alpha[t - 1][i] + s.transitions[i][j];
            }
            alpha[t][j] = log_sum_exp(&buf) + s.emissions[t][j];
        }
    }
    for j in 0..NUM_TAGS {
        buf[j] = alpha[len - 1][j] + s.end[j];
    }
    let log_z = log_sum_exp(&buf);
    (alpha, log_z)
}

fn backward(s: &Scores) -> Vec<Row> {
    let len = s.emissions.len();
    let mut beta = vec![[0.0; NUM_TAGS]; len];
    beta[len - 1] = s.end;
    let mut buf = [0.0; NUM_TAGS];
    for t in (0..len - 1).rev() {
        for i in 0..NUM_TAGS {
            for j in 0..NUM_TAGS {
                buf[j] = s.transitions[i][j] + s.emissions[t + 1][j] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Log of the sum of `exp(sequence_score)` over all label sequences, or over
/// the mask-legal ones when a mask is given.
pub fn log_partition(
    params: &CrfParams,
    emissions: &EmissionMatrix,
    mask: Option<&PathMask>,
) -> Result<f64, CrfError> {
    if emissions.is_empty() {
        return Err(CrfError::EmptySequence);
    }
    let scores = Scores::build(params, emissions, mask, MASK_PENALTY)?;
    Ok(forward(&scores).1)
}

/// Per-position tag marginals `p(y_t = j)`.
pub fn marginals(
    params: &CrfParams,
    emissions: &EmissionMatrix,
    mask: Option<&PathMask>,
) -> Result<Vec<Row>, CrfError> {
    if emissions.is_empty() {
        return Err(CrfError::EmptySequence);
    }
    let s = Scores::build(params, emissions, mask, MASK_PENALTY)?;
    let (alpha, log_z) = forward(&s);
    let beta = backward(&s);
    Ok(alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let mut row = [0.0; NUM_TAGS];
            for j in 0..NUM_TAGS {
                row[j] = (a[j] + b[j] - log_z).exp();
            }
            row
        })
        .collect())
}

/// Loss and gradients for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceGradient {
    pub nll: f64,
    pub params: CrfParams,
    pub emissions: Vec<Row>,
}

/// Negative log-likelihood of `gold` and its gradient (expected minus
/// observed feature counts).
pub fn sentence_nll_and_grad(
    params: &CrfParams,
    emissions: &EmissionMatrix,
    gold: &[Tag],
    mask: Option<&PathMask>,
) -> Result<SentenceGradient, CrfError> {
    let gold_score = sequence_score(params, emissions, gold)?;
    if let Some(mask) = mask {
        mask.check_len(emissions.len())?;
        if let Some(position) = mask.first_violation(gold) {
            return Err(CrfError::GoldViolatesMask { position });
        }
    }
    let s = Scores::build(params, emissions, mask, MASK_PENALTY)?;
    let (alpha, log_z) = forward(&s);
    let beta = backward(&s);
    let len = emissions.len();

    let mut grad = CrfParams::zeros();
    let mut em_grad = vec![[0.0; NUM_TAGS]; len];
    for t in 0..len {
        for j in 0..NUM_TAGS {
            em_grad[t][j] = (alpha[t][j] + beta[t][j] - log_z).exp();
        }
    }
    grad.start = em_grad[0];
    for j in 0..NUM_TAGS {
        grad.end[j] = (alpha[len - 1][j] + s.end[j] - log_z).exp();
    }
    for t in 0..len - 1 {
        for i in 0..NUM_TAGS {
            let a = alpha[t][i] - log_z;
            for j in 0..NUM_TAGS {
                grad.transitions[i][j] +=
                    (a + s.transitions[i][j] + s.emissions[t + 1][j] + beta[t + 1][j]).exp();
            }
        }
    }

    for (t, tag) in gold.iter().enumerate() {
        em_grad[t][tag.index()] -= 1.0;
    }
    grad.start[gold[0].index()] -= 1.0;
    grad.end[gold[len - 1].index()] -= 1.0;
    for pair in gold.windows(2) {
        grad.transitions[pair[0].index()][pair[1].index()] -= 1.0;
    }

    // Masked entries are constants at score time.
    if let Some(mask) = mask {
        let g = &mask.grammar;
        for i in 0..NUM_TAGS {
            for j in 0..NUM_TAGS {
                if !g.allowed[i][j] {
                    grad.transitions[i][j] = 0.0;
                }
            }
            if !g.start_allowed[i] {
                grad.start[i] = 0.0;
            }
            if !g.end_allowed[i] {
                grad.end[i] = 0.0;
            }
        }
        for (t, row) in em_grad.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if !mask.allowed_at(t, j) {
                    *v = 0.0;
                }
            }
        }
    }

    Ok(SentenceGradient {
        nll: log_z - gold_score,
        params: grad,
        emissions: em_grad,
    })
}

/// One training instance: emissions, gold path and an optional mask.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub emissions: &'a EmissionMatrix,
    pub gold: &'a [Tag],
    pub mask: Option<&'a PathMask>,
}

/// Mean loss over a batch with gradients of that mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub nll: f64,
    pub params: CrfParams,
    /// Emission gradients, one matrix per instance, already scaled by `1/batch`.
    pub emissions: Vec<Vec<Row>>,
}

/// Batch NLL is the mean over sentences. Per-sentence work runs in parallel;
/// the reduction is sequential in batch order, so the result does not depend
/// on the thread count.
pub fn nll_and_grad(params: &CrfParams, batch: &[Instance<'_>]) -> Result<BatchGradient, CrfError> {
    let per_sentence: Vec<SentenceGradient> = batch
        .par_iter()
        .map(|inst| sentence_nll_and_grad(params, inst.emissions, inst.gold, inst.mask))
        .collect::<Result<_, _>>()?;
    let n = batch.len().max(1) as f64;
    let scale = 1.0 / n;
    let mut total = BatchGradient {
        nll: 0.0,
        params: CrfParams::zeros(),
        emissions: Vec::with_capacity(per_sentence.len()),
    };
    for g in per_sentence {
        total.nll += g.nll;
        total.params.add_scaled(&g.params, scale);
        let mut em = g.emissions;
        for row in &mut em {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        total.emissions.push(em);
    }
    total.nll *= scale;
    Ok(total)
}

/// Highest-scoring label sequence and its score.
///
/// Masked entries are excluded outright. Ties go to the lowest tag index at
/// every backpointer and at the final step.
pub fn viterbi(
    params: &CrfParams,
    emissions: &EmissionMatrix,
    mask: Option<&PathMask>,
) -> Result<(Vec<Tag>, f64), CrfError> {
    if emissions.is_empty() {
        return Err(CrfError::EmptySequence);
    }
    let s = Scores::build(params, emissions, mask, f64::NEG_INFINITY)?;
    let len = s.emissions.len();
    let mut delta = [0.0; NUM_TAGS];
    for j in 0..NUM_TAGS {
        delta[j] = s.start[j] + s.emissions[0][j];
    }
    let mut back = vec![[0usize; NUM_TAGS]; len];
    for t in 1..len {
        let mut next = [f64::NEG_INFINITY; NUM_TAGS];
        for j in 0..NUM_TAGS {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..NUM_TAGS {
                let v = delta[i] + s.transitions[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + s.emissions[t][j];
            back[t][j] = arg;
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for j in 0..NUM_TAGS {
        let v = delta[j] + s.end[j];
        if v > best {
            best = v;
            last = j;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(CrfError::NoLegalPath);
    }
    let mut path = vec![0usize; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    let tags: Vec<Tag> = path.into_iter().map(|i| Tag::ALL[i]).collect();
    let score = sequence_score(params, emissions, &tags)?;
    Ok((tags, score))
}
