//! Training loop: AdamW with warmup/linear decay over CRF and emitter
//! parameters, with per-epoch validation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::align::{collapse, AlignError, AlignedSentence, Aligner};
use crate::corpus::Corpus;
use crate::crf::{self, CrfError, CrfParams, EmissionMatrix, Instance, PathMask, Row, NUM_CRF_PARAMS};
use crate::emit::{FeatureEmitter, FeatureId, DEFAULT_HASH_DIM, DEFAULT_HASH_SEED};
use crate::eval::{entity_f1, token_f1, EntityDefinition};
use crate::labelspace::{default_constraint_mask, Tag, NUM_TAGS};
use crate::model::Model;
use crate::optim::{self, AdamW, Moments};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {nll} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, nll: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sentence {id}: {source}")]
    Align { id: String, source: AlignError },
    #[error("sentence {id}: {source}")]
    Crf { id: String, source: CrfError },
    #[error("no emissions for sentence {0}")]
    MissingEmissions(String),
    #[error("model has no feature emitter but sentence {0} has no external emissions")]
    NoEmitter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub mask_in_training: bool,
    pub mask_in_decoding: bool,
    pub hash_dim: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            batch_size: 32,
            epochs: 3,
            warmup_fraction: 0.5,
            seed: 0,
            mask_in_training: false,
            mask_in_decoding: false,
            hash_dim: DEFAULT_HASH_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(TrainError::Config(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lr_at_step(&self, step: usize, total_steps: usize) -> f64 {
        optim::lr_at_step(self.learning_rate, self.warmup_fraction, step, total_steps)
    }

    /// Sets one field from a `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
            v.parse().map_err(|_| TrainError::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "warmup_fraction" => self.warmup_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mask_in_training" | "mask_train" => self.mask_in_training = num(key, value)?,
            "mask_in_decoding" | "mask_decode" => self.mask_in_decoding = num(key, value)?,
            "hash_dim" => self.hash_dim = num(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` config file; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), TrainError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Total optimisation steps for `n` training sentences; the last partial batch counts.
    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * n.div_ceil(self.batch_size)
    }
}

/// A sentence ready for training or decoding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub aligned: AlignedSentence,
    pub features: Option<Vec<Vec<FeatureId>>>,
    pub external: Option<EmissionMatrix>,
    pub mask: PathMask,
}

impl Prepared {
    pub fn emissions(&self, model: &Model) -> Result<EmissionMatrix, TrainError> {
        if let Some(m) = &self.external {
            return Ok(m.clone());
        }
        match (&model.emitter, &self.features) {
            (Some(e), Some(f)) => Ok(e.emit_features(f)),
            (Some(e), None) => Ok(e.emit(&self.aligned)),
            (None, _) => Err(TrainError::NoEmitter(self.id.clone())),
        }
    }
}

/// Where emission scores come from.
#[derive(Debug, Clone, Copy)]
pub enum EmissionSource<'a> {
    /// The model's feature emitter.
    Features(&'a FeatureEmitter),
    /// Pre-computed matrices keyed by sentence id.
    External(&'a HashMap<String, EmissionMatrix>),
}

/// Aligns sentences and attaches features or external emissions.
pub fn prepare_aligned(
    aligned: Vec<(String, AlignedSentence)>,
    source: EmissionSource<'_>,
) -> Result<Vec<Prepared>, TrainError> {
    let grammar = default_constraint_mask();
    aligned
        .into_iter()
        .map(|(id, aligned)| {
            let (features, external) = match source {
                EmissionSource::Features(e) => (Some(e.featurize_sentence(&aligned)), None),
                EmissionSource::External(map) => {
                    let m = map.get(&id).ok_or_else(|| TrainError::MissingEmissions(id.clone()))?;
                    if m.len() != aligned.len() {
                        return Err(TrainError::Crf {
                            id,
                            source: CrfError::LengthMismatch {
                                expected: aligned.len(),
                                actual: m.len(),
                            },
                        });
                    }
                    (None, Some(m.clone()))
                }
            };
            let mask = PathMask::for_sentence(&grammar, &aligned);
            Ok(Prepared {
                id,
                aligned,
                features,
                external,
                mask,
            })
        })
        .collect()
}

pub fn align_corpus(corpus: &Corpus, aligner: &Aligner<'_>) -> Result<Vec<(String, AlignedSentence)>, TrainError> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            aligner
                .align(&s.words, &s.labels)
                .map(|a| (s.id.clone(), a))
                .map_err(|source| TrainError::Align {
                    id: s.id.clone(),
                    source,
                })
        })
        .collect()
}

pub fn prepare(corpus: &Corpus, aligner: &Aligner<'_>, source: EmissionSource<'_>) -> Result<Vec<Prepared>, TrainError> {
    prepare_aligned(align_corpus(corpus, aligner)?, source)
}

/// Word-level labels predicted for one sentence and the collapse repair count.
pub fn predict(model: &Model, sentence: &Prepared, mask_decode: bool) -> Result<(Vec<Tag>, usize), TrainError> {
    let em = sentence.emissions(model)?;
    let mask = mask_decode.then_some(&sentence.mask);
    let (path, _) = crf::viterbi(&model.params, &em, mask).map_err(|source| TrainError::Crf {
        id: sentence.id.clone(),
        source,
    })?;
    let c = collapse(&sentence.aligned, &path).map_err(|source| TrainError::Align {
        id: sentence.id.clone(),
        source,
    })?;
    Ok((c.labels, c.repairs))
}

pub fn predict_all(model: &Model, sentences: &[Prepared], mask_decode: bool) -> Result<(Vec<Vec<Tag>>, usize), TrainError> {
    let out: Vec<(Vec<Tag>, usize)> = sentences
        .par_iter()
        .map(|s| predict(model, s, mask_decode))
        .collect::<Result<_, _>>()?;
    let repairs = out.iter().map(|(_, r)| r).sum();
    Ok((out.into_iter().map(|(l, _)| l).collect(), repairs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimisation steps completed at the end of the epoch.
    pub step: usize,
    /// Mean per-sentence NLL over the epoch's batches.
    pub train_nll: f64,
    /// Token-level micro F1 over the four aspect/opinion tags.
    pub val_f1: f64,
    /// Collapsed-token entity micro F1.
    pub val_entity_f1: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,step,train_nll,val_f1,val_entity_f1\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{:.12},{:.12},{:.12}",
            m.epoch, m.step, m.train_nll, m.val_f1, m.val_entity_f1
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Checkpoint of the epoch with the best validation token F1 (earliest on ties).
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochMetrics>,
}

/// Fresh model: seeded CRF scores and, unless emissions are external, an empty emitter.
pub fn initial_model(config: &TrainConfig, features: bool, vocab: Option<String>) -> Result<Model, TrainError> {
    let emitter = if features {
        Some(FeatureEmitter::new(config.hash_dim, DEFAULT_HASH_SEED).map_err(|e| TrainError::Config(e.to_string()))?)
    } else {
        None
    };
    Ok(Model {
        params: CrfParams::random(config.seed),
        emitter,
        vocab,
        mask_train: config.mask_in_training,
        mask_decode: config.mask_in_decoding,
    })
}

struct OptimizerState {
    adam: AdamW,
    crf: Vec<Moments>,
    emitter: BTreeMap<FeatureId, [Moments; NUM_TAGS]>,
}

impl OptimizerState {
    fn step(&mut self, model: &mut Model, lr: f64, crf_grad: &CrfParams, emitter_grad: BTreeMap<FeatureId, Row>) {
        self.adam.begin_step();
        let adam = self.adam;
        for ((p, g), s) in model.params.values_mut().zip(crf_grad.values()).zip(&mut self.crf) {
            adam.update(lr, p, *g, s);
        }
        if let Some(emitter) = model.emitter.as_mut() {
            for id in emitter_grad.keys() {
                emitter.weights.entry(*id).or_insert([0.0; NUM_TAGS]);
            }
            // Every stored weight is updated, gradient or not, so decay and
            // momentum apply exactly as for a dense parameter vector.
            for (id, row) in emitter.weights.iter_mut() {
                let grad = emitter_grad.get(id).copied().unwrap_or([0.0; NUM_TAGS]);
                let state = self.emitter.entry(*id).or_insert([Moments::default(); NUM_TAGS]);
                for j in 0..NUM_TAGS {
                    adam.update(lr, &mut row[j], grad[j], &mut state[j]);
                }
            }
        }
    }
}

/// Runs `config.epochs` epochs of mini-batch training starting from `init`.
pub fn train(config: &TrainConfig, init: Model, train_set: &[Prepared], validation: &[Prepared]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if config.mask_in_training {
        // Gold with a stray I-* cannot be scored under the mask.
        for s in train_set {
            if let Some(position) = s.mask.first_violation(&s.aligned.subword_labels) {
                return Err(TrainError::Crf {
                    id: s.id.clone(),
                    source: CrfError::GoldViolatesMask { position },
                });
            }
        }
    }

    let mut model = init;
    model.mask_train = config.mask_in_training;
    model.mask_decode = config.mask_in_decoding;
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(config.epochs);

    let total_steps = config.total_steps(train_set.len());
    let mut opt = OptimizerState {
        adam: AdamW::new(config.weight_decay),
        crf: vec![Moments::default(); NUM_CRF_PARAMS],
        emitter: BTreeMap::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let val_gold: Vec<Vec<Tag>> = validation.iter().map(|s| s.aligned.word_labels.clone()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let emissions: Vec<EmissionMatrix> = batch
                .par_iter()
                .map(|s| s.emissions(&model))
                .collect::<Result<_, _>>()?;
            let instances: Vec<Instance<'_>> = batch
                .iter()
                .zip(&emissions)
                .map(|(s, em)| Instance {
                    emissions: em,
                    gold: &s.aligned.subword_labels,
                    mask: config.mask_in_training.then_some(&s.mask),
                })
                .collect();
            let grad = crf::nll_and_grad(&model.params, &instances).map_err(|source| TrainError::Crf {
                id: batch.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(","),
                source,
            })?;
            if !grad.nll.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    nll: grad.nll,
                });
            }
            nll_sum += grad.nll * batch.len() as f64;

            let mut emitter_grad: BTreeMap<FeatureId, Row> = BTreeMap::new();
            if let Some(emitter) = &model.emitter {
                for (s, em_grad) in batch.iter().zip(&grad.emissions) {
                    if s.external.is_some() {
                        continue;
                    }
                    let features = match &s.features {
                        Some(f) => std::borrow::Cow::Borrowed(f),
                        None => std::borrow::Cow::Owned(emitter.featurize_sentence(&s.aligned)),
                    };
                    FeatureEmitter::accumulate_gradient(&features, em_grad, &mut emitter_grad);
                }
            }

            let lr = config.lr_at_step(step, total_steps);
            opt.step(&mut model, lr, &grad.params, emitter_grad);
            step += 1;
        }

        let (pred, _) = predict_all(&model, validation, config.mask_in_decoding)?;
        let val_f1 = token_f1(&val_gold, &pred).expect("shapes match").micro_f1();
        let val_entity_f1 = entity_f1(&val_gold, &pred, EntityDefinition::CollapsedToken)
            .expect("shapes match")
            .micro()
            .f1();
        history.push(EpochMetrics {
            epoch,
            step,
            train_nll: nll_sum / train_set.len() as f64,
            val_f1,
            val_entity_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = Some(epoch);
            best = model.clone();
        }
    }

    Ok(TrainOutcome {
        model,
        best,
        best_epoch,
        history,
    })
}
