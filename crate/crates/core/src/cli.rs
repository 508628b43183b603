//! Command-line front end.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::align::{AlignedSentence, Aligner, DEFAULT_MAX_SUBWORDS};
use crate::corpus::{self, Corpus, Sentence};
use crate::crf::EmissionMatrix;
use crate::emit::FeatureEmitter;
use crate::eval::{audit_corpus, ArgmaxBaseline, EvalReport};
use crate::external::{self, LogitsRecord};
use crate::labelspace::default_constraint_mask;
use crate::model::Model;
use crate::segment::{Segmenter, WholeWord, WordPiece};
use crate::synth;
use crate::train::{self, EmissionSource, Prepared, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "auxcrf", version, about = "Aspect/opinion term extraction with an auxiliary-label CRF")]
pub struct Cli {
    /// Worker threads for per-sentence parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// `features`, or `external:PATH` for a logits file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmissionsArg {
    Features,
    External(PathBuf),
}

impl FromStr for EmissionsArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "features" => Ok(EmissionsArg::Features),
            _ => match s.strip_prefix("external:") {
                Some(p) if !p.is_empty() => Ok(EmissionsArg::External(PathBuf::from(p))),
                _ => Err(format!("expected `features` or `external:PATH`, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// Subword vocabulary for the greedy segmenter; without one every word is a single piece.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Segmentation sidecar giving each word's subword span in the logits records.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Emission source.
    #[arg(long, default_value = "features")]
    pub emissions: EmissionsArg,
    /// Reject sentences longer than this many subwords (markers included).
    #[arg(long, default_value_t = DEFAULT_MAX_SUBWORDS)]
    pub max_subwords: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model.
    Train(TrainArgs),
    /// Score predictions (or a model, or the argmax baseline) against gold labels.
    Eval(EvalArgs),
    /// Label a CoNLL file.
    Tag(TagArgs),
    /// List invalid BIO sequences in a labelled file.
    Audit(AuditArgs),
    /// Label distribution and vocabulary statistics.
    Stats(StatsArgs),
    /// Generate a synthetic corpus and vocabulary.
    Synth(SynthArgs),
    /// Validate a logits file and rewrite it with ten canonical columns.
    ConvertLogits(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training file (CoNLL: token<TAB>label, blank line between sentences).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation file; if absent the training file is split with --n-train.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Sentences kept for training when splitting --train; the rest validate.
    #[arg(long)]
    pub n_train: Option<usize>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Logits for the validation file when --emissions is external.
    #[arg(long)]
    pub validation_emissions: Option<PathBuf>,
    /// Segmentation sidecar for the validation logits.
    #[arg(long)]
    pub validation_segmentation: Option<PathBuf>,
    /// key=value config file; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and --n-train splits [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 3]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: 1e-2].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fraction of all steps spent warming up [default: 0.5].
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Feature hashing size, a power of two of at least 65536 [default: 262144].
    #[arg(long)]
    pub hash_dim: Option<u32>,
    /// Apply the constraint mask in the training objective.
    #[arg(long)]
    pub mask_train: bool,
    /// Apply the constraint mask when decoding.
    #[arg(long)]
    pub mask_decode: bool,
    /// Final model.
    #[arg(long)]
    pub model_out: PathBuf,
    /// Also save the checkpoint with the best validation token F1.
    #[arg(long)]
    pub best_model_out: Option<PathBuf>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labelled reference file.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted labels in CoNLL format.
    #[arg(long, conflicts_with_all = ["model", "baseline_train"])]
    pub pred: Option<PathBuf>,
    /// Decode the gold file's tokens with this model.
    #[arg(long, conflicts_with = "baseline_train")]
    pub model: Option<PathBuf>,
    /// Fit the argmax baseline on this file and evaluate it.
    #[arg(long)]
    pub baseline_train: Option<PathBuf>,
    #[command(flatten)]
    pub input: InputArgs,
    /// Apply the constraint mask when decoding (also on if the model was saved with it).
    #[arg(long)]
    pub mask_decode: bool,
    /// Write the violation list as CSV.
    #[arg(long)]
    pub violations_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// CoNLL tokens; a label column is optional and ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write the labelled CoNLL file.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Apply the constraint mask when decoding (also on if the model was saved with it).
    #[arg(long)]
    pub mask_decode: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Labelled CoNLL file to check.
    #[arg(long)]
    pub pred: PathBuf,
    /// Write the violation list as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// A single file, reported as split `data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Print the transition constraint table.
    #[arg(long)]
    pub mask: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Receives train.conll, validation.conll, test.conll and vocab.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub validation: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Every token string keeps one label throughout.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Logits file with five or ten columns per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

/// Flag problems detected before any IO; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

/// Parses `argv` (program name first) and runs it; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ConvertLogits(a) => cmd_convert(a),
    }
}

fn segmenter(vocab: Option<&Path>) -> Result<Box<dyn Segmenter>> {
    Ok(match vocab {
        Some(p) => Box::new(WordPiece::from_file(p).with_context(|| format!("reading vocabulary {}", p.display()))?),
        None => Box::new(WholeWord),
    })
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    corpus::read_conll(path).with_context(|| format!("reading {}", path.display()))
}

/// Aligns a corpus, either with the segmenter or with the pieces recorded in
/// external logits plus a segmentation sidecar.
fn align(
    corpus: &Corpus,
    vocab: Option<&Path>,
    cap: usize,
    logits: Option<&[LogitsRecord]>,
    sidecar: Option<&Path>,
) -> Result<Vec<(String, AlignedSentence)>> {
    let seg = segmenter(vocab)?;
    let aligner = Aligner::new(seg.as_ref()).with_cap(cap);
    let (Some(records), Some(sidecar)) = (logits, sidecar) else {
        return Ok(train::align_corpus(corpus, &aligner)?);
    };
    let spans = external::read_sidecar_file(sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let by_id: HashMap<&str, &LogitsRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    corpus
        .sentences
        .iter()
        .map(|s| {
            let record = by_id
                .get(s.id.as_str())
                .ok_or_else(|| external::ExternalError::MissingSentence(s.id.clone()))?;
            let word_spans = spans
                .get(&s.id)
                .ok_or_else(|| anyhow!("segmentation sidecar has no entry for sentence {:?}", s.id))?;
            let pieces = external::pieces_from_spans(&s.id, &record.subwords, word_spans)?;
            let aligned = aligner
                .align_pieces(&s.words, &s.labels, pieces)
                .with_context(|| format!("sentence {}", s.id))?;
            Ok((s.id.clone(), aligned))
        })
        .collect()
}

/// Aligned sentences with their emissions attached.
fn load_split(
    corpus: &Corpus,
    input: &InputArgs,
    logits_path: Option<&Path>,
    sidecar: Option<&Path>,
    emitter: Option<&FeatureEmitter>,
    vocab: Option<&Path>,
) -> Result<Vec<Prepared>> {
    match logits_path {
        None => {
            let emitter = emitter.ok_or_else(|| anyhow!("feature emissions requested but the model has none"))?;
            let aligned = align(corpus, vocab, input.max_subwords, None, None)?;
            Ok(train::prepare_aligned(aligned, EmissionSource::Features(emitter))?)
        }
        Some(path) => {
            let records = external::read_records_file(path).with_context(|| format!("reading {}", path.display()))?;
            let aligned = align(corpus, vocab, input.max_subwords, Some(&records), sidecar)?;
            let matrices: HashMap<String, EmissionMatrix> =
                external::match_records(records, aligned.iter().map(|(id, a)| (id.as_str(), a)))
                    .with_context(|| format!("matching {}", path.display()))?;
            Ok(train::prepare_aligned(aligned, EmissionSource::External(&matrices))?)
        }
    }
}

fn external_path(e: &EmissionsArg) -> Option<&Path> {
    match e {
        EmissionsArg::Features => None,
        EmissionsArg::External(p) => Some(p.as_path()),
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.apply_kv(&text).map_err(|e| UsageError(e.to_string()))?;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.warmup_fraction {
        config.warmup_fraction = v;
    }
    if let Some(v) = a.hash_dim {
        config.hash_dim = v;
    }
    config.mask_in_training |= a.mask_train;
    config.mask_in_decoding |= a.mask_decode;
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a)?;
    let external = external_path(&a.input.emissions);
    if a.validation.is_none() && a.n_train.is_none() {
        return Err(UsageError("either --validation or --n-train is required".into()).into());
    }
    if external.is_some() && a.validation.is_some() && a.validation_emissions.is_none() {
        return Err(UsageError("--validation-emissions is required with external emissions".into()).into());
    }

    let full = read_corpus(&a.train)?;
    let (train_corpus, val_corpus, val_logits) = match &a.validation {
        Some(v) => (full, read_corpus(v)?, a.validation_emissions.as_deref()),
        None => {
            let n = a.n_train.expect("checked above");
            let (t, v) = corpus::split_train_validation(&full, n, config.seed)?;
            (t, v, external)
        }
    };
    let vocab = a.input.vocab.as_deref();
    let init = train::initial_model(&config, external.is_none(), vocab.map(|p| p.display().to_string()))?;
    let val_sidecar = a.validation_segmentation.as_deref().or(a.input.segmentation.as_deref());
    let train_set = load_split(&train_corpus, &a.input, external, a.input.segmentation.as_deref(), init.emitter.as_ref(), vocab)?;
    let val_set = load_split(&val_corpus, &a.input, val_logits, val_sidecar, init.emitter.as_ref(), vocab)?;

    let outcome = train::train(&config, init, &train_set, &val_set)?;
    outcome
        .model
        .save_file(&a.model_out)
        .with_context(|| format!("writing {}", a.model_out.display()))?;
    if let Some(p) = &a.best_model_out {
        outcome.best.save_file(p).with_context(|| format!("writing {}", p.display()))?;
    }
    let csv = train::metrics_csv(&outcome.history);
    if let Some(p) = &a.metrics_out {
        fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut out = std::io::stdout().lock();
    write!(out, "{csv}")?;
    writeln!(out, "train.sentences={}", train_set.len())?;
    writeln!(out, "validation.sentences={}", val_set.len())?;
    writeln!(out, "train.steps={}", config.total_steps(train_set.len()))?;
    if let Some(e) = outcome.best_epoch {
        writeln!(out, "train.best_epoch={e}")?;
    }
    if let Some(last) = outcome.history.last() {
        writeln!(out, "train.final_val_f1={:.6}", last.val_f1)?;
    }
    Ok(())
}

fn model_vocab(model: &Model, input: &InputArgs) -> Option<PathBuf> {
    input.vocab.clone().or_else(|| model.vocab.as_ref().map(PathBuf::from))
}

/// Decodes `corpus` with a saved model.
fn decode(model_path: &Path, corpus: &Corpus, input: &InputArgs, mask_flag: bool) -> Result<(Vec<Vec<crate::Tag>>, usize)> {
    let model = Model::load_file(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let vocab = model_vocab(&model, input);
    let set = load_split(
        corpus,
        input,
        external_path(&input.emissions),
        input.segmentation.as_deref(),
        model.emitter.as_ref(),
        vocab.as_deref(),
    )?;
    Ok(train::predict_all(&model, &set, mask_flag || model.mask_decode)?)
}

fn cmd_tag(a: TagArgs) -> Result<()> {
    let tokens = corpus::read_conll_tokens(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (pred, repairs) = decode(&a.model, &tokens, &a.inputs, a.mask_decode)?;
    let tagged = Corpus::new(
        tokens
            .sentences
            .iter()
            .zip(pred)
            .map(|(s, labels)| Sentence::new(s.id.clone(), s.words.clone(), labels))
            .collect(),
    );
    corpus::write_conll_file(&a.output, &tagged).with_context(|| format!("writing {}", a.output.display()))?;
    println!("tag.sentences={}", tagged.len());
    println!("tag.repairs={repairs}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.pred.is_none() && a.model.is_none() && a.baseline_train.is_none() {
        return Err(UsageError("one of --pred, --model or --baseline-train is required".into()).into());
    }
    let gold = read_corpus(&a.gold)?;
    let (pred, repairs) = if let Some(p) = &a.pred {
        let pred = read_corpus(p)?;
        if pred.len() != gold.len() {
            bail!("{} gold sentences but {} predicted", gold.len(), pred.len());
        }
        for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
            if g.words != p.words {
                bail!("sentence {}: predicted file has different tokens", g.id);
            }
        }
        (pred.labels(), 0)
    } else if let Some(m) = &a.model {
        decode(m, &gold, &a.input, a.mask_decode)?
    } else {
        let train_path = a.baseline_train.as_ref().expect("checked above");
        let baseline = ArgmaxBaseline::fit(&read_corpus(train_path)?)?;
        (baseline.predict_corpus(&gold), 0)
    };
    let ids: Vec<String> = gold.sentences.iter().map(|s| s.id.clone()).collect();
    let words: Vec<Vec<String>> = gold.sentences.iter().map(|s| s.words.clone()).collect();
    let report = EvalReport::new(&gold.labels(), &pred, &ids, Some(&words))?.with_repairs(repairs);
    if let Some(p) = &a.violations_out {
        fs::write(p, report.census.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{}", report.to_table());
    print!("{}", report.to_kv());
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> Result<()> {
    let pred = read_corpus(&a.pred)?;
    let census = audit_corpus(&pred);
    if let Some(p) = &a.out {
        fs::write(p, census.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    for v in census.violations.iter().take(20) {
        println!("{} @{}: {}", v.sentence, v.position, v.context);
    }
    println!("violations={}", census.count());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let named = [("data", &a.data), ("train", &a.train), ("validation", &a.validation), ("test", &a.test)];
    if !a.mask && named.iter().all(|(_, p)| p.is_none()) {
        return Err(UsageError("give --data, --train/--validation/--test, or --mask".into()).into());
    }
    if a.mask {
        print!("{}", default_constraint_mask().to_table());
    }
    let mut loaded = Vec::new();
    for (name, path) in named {
        if let Some(p) = path {
            loaded.push((name, read_corpus(p)?));
        }
    }
    if loaded.is_empty() {
        return Ok(());
    }
    let refs: Vec<(&str, &Corpus)> = loaded.iter().map(|(n, c)| (*n, c)).collect();
    let st = corpus::stats(&refs);
    print!("{}", st.to_table());
    print!("{}", st.to_kv());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let splits = synth::generate_splits(a.train, a.validation, a.test, a.seed, !a.deterministic);
    for (name, c) in ["train", "validation", "test"].iter().zip(&splits) {
        let path = a.out_dir.join(format!("{name}.conll"));
        corpus::write_conll_file(&path, c).with_context(|| format!("writing {}", path.display()))?;
        println!("synth.{name}={}", c.len());
    }
    let vocab_path = a.out_dir.join("vocab.txt");
    let mut text = synth::vocabulary().join("\n");
    text.push('\n');
    fs::write(&vocab_path, text).with_context(|| format!("writing {}", vocab_path.display()))?;
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let records = external::read_records_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let converted: Vec<LogitsRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let m = r
                .to_matrix()
                .map_err(|reason| external::ExternalError::MalformedRecord { line: i + 1, reason })?;
            Ok(LogitsRecord::from_matrix(r.id.clone(), r.subwords.clone(), &m))
        })
        .collect::<Result<_>>()?;
    external::write_records_file(&a.output, &converted).with_context(|| format!("writing {}", a.output.display()))?;
    println!("convert.records={}", converted.len());
    Ok(())
}
