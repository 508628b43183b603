//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Criteria that need the real review dataset read it from the directory in
//! `AUXCRF_DATASET_DIR` (`train.conll`, `test.conll`) and are skipped otherwise.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use auxcrf::align::{collapse, project_pieces, Aligner};
use auxcrf::corpus::{self, read_conll, Corpus};
use auxcrf::crf::{log_partition, sentence_nll_and_grad, viterbi, CrfParams, EmissionMatrix, PathMask};
use auxcrf::eval::{audit_bio, token_f1, ArgmaxBaseline};
use auxcrf::labelspace::{default_constraint_mask, Tag, NUM_TAGS};
use auxcrf::segment::WordPiece;
use auxcrf::synth::{self, SynthConfig};
use auxcrf::train::{self, EmissionSource, TrainConfig};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARTITION_INSTANCES: usize = 200;
const PARTITION_REL_TOL: f64 = 1e-10;
const PARTITION_TIME_LIMIT: Duration = Duration::from_secs(10);
const VITERBI_INSTANCES: usize = 200;
/// Enumerated scores this close to the best are treated as tied.
const VITERBI_TIE_TOL: f64 = 1e-12;
const GRADIENT_INSTANCES: usize = 100;
const GRADIENT_STEP: f64 = 1e-5;
const GRADIENT_ABS_TOL: f64 = 1e-6;
const MASKED_DECODES: usize = 10_000;
const ROUND_TRIP_MAX_WORDS: usize = 4;
const ROUND_TRIP_MAX_PIECES: usize = 3;
const SYNTH_TRAIN: usize = 500;
const SYNTH_VALIDATION: usize = 100;
const SYNTH_TEST: usize = 100;
const SYNTH_EPOCHS: usize = 20;
const SYNTH_MIN_F1: f64 = 0.90;
const SYNTH_TIME_LIMIT: Duration = Duration::from_secs(120);
const BASELINE_REAL_ROW: [f64; 5] = [0.777, 0.592, 0.810, 0.391, 0.851];
const BASELINE_REAL_TOL: f64 = 0.02;
const STATS_TRAIN: [usize; 5] = [7005, 2292, 9646, 4265, 39897];
const STATS_TEST: [usize; 5] = [1758, 584, 2384, 1067, 9706];
const STATS_TOTALS: (usize, usize) = (63105, 15499);
const STATS_OVERLAP: f64 = 75.4;
const STATS_OVERLAP_TOL: f64 = 0.1;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (CrfParams, Vec<[f64; NUM_TAGS]>) {
    let len = rng.gen_range(1..=5);
    (random_params(rng, 2.0), random_rows(rng, len, 3.0))
}

fn crf_partition_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let instances: Vec<_> = (0..PARTITION_INSTANCES).map(|_| random_instance(&mut rng)).collect();
    let started = Instant::now();
    let values: Vec<f64> = instances
        .iter()
        .map(|(p, rows)| log_partition(p, &EmissionMatrix::new(rows.clone()).unwrap(), None).unwrap())
        .collect();
    let elapsed = started.elapsed();
    let worst = instances
        .iter()
        .zip(&values)
        .map(|((p, rows), got)| relative_error(*got, brute_log_partition(p, rows, None)))
        .fold(0.0, f64::max);
    verdict(
        worst <= PARTITION_REL_TOL && elapsed < PARTITION_TIME_LIMIT,
        format!(
            "{PARTITION_INSTANCES} instances, T in [1,5]: max relative error {worst:.2e} (limit {PARTITION_REL_TOL:.0e}), {:.3} s (limit {} s)",
            elapsed.as_secs_f64(),
            PARTITION_TIME_LIMIT.as_secs()
        ),
    )
}

fn viterbi_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut agree = 0;
    let mut total = 0;
    for i in 0..VITERBI_INSTANCES {
        // Every other instance uses small integers so exact ties occur.
        let (p, rows) = if i % 2 == 0 {
            random_instance(&mut rng)
        } else {
            let len = rng.gen_range(1..=5);
            (integer_params(&mut rng), integer_rows(&mut rng, len))
        };
        let tol = if i % 2 == 0 { VITERBI_TIE_TOL } else { 0.0 };
        let (path, _) = viterbi(&p, &EmissionMatrix::new(rows.clone()).unwrap(), None).unwrap();
        let (want, _) = brute_argmax(&p, &rows, None, tol).unwrap();
        total += 1;
        if path == to_tags(&want) {
            agree += 1;
        }
    }
    verdict(
        agree == total,
        format!("{agree}/{total} decodes equal the enumerated argmax (half with exact ties)"),
    )
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = GRADIENT_STEP;
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for _ in 0..GRADIENT_INSTANCES {
        let (p, rows) = random_instance(&mut rng);
        let gold = random_tags(&mut rng, rows.len());
        let nll = |p: &CrfParams, rows: &[[f64; NUM_TAGS]]| {
            sentence_nll_and_grad(p, &EmissionMatrix::new(rows.to_vec()).unwrap(), &gold, None)
                .unwrap()
                .nll
        };
        let g = sentence_nll_and_grad(&p, &EmissionMatrix::new(rows.clone()).unwrap(), &gold, None).unwrap();
        for (k, want) in g.params.values().enumerate() {
            let at = |d: f64| {
                let mut q = p.clone();
                *q.values_mut().nth(k).unwrap() += d;
                nll(&q, &rows)
            };
            worst = worst.max(((at(h) - at(-h)) / (2.0 * h) - want).abs());
            coordinates += 1;
        }
        for t in 0..rows.len() {
            for j in 0..NUM_TAGS {
                let at = |d: f64| {
                    let mut r = rows.clone();
                    r[t][j] += d;
                    nll(&p, &r)
                };
                worst = worst.max(((at(h) - at(-h)) / (2.0 * h) - g.emissions[t][j]).abs());
                coordinates += 1;
            }
        }
    }
    verdict(
        worst <= GRADIENT_ABS_TOL,
        format!(
            "{GRADIENT_INSTANCES} instances, {coordinates} coordinates: max |analytic - central difference| {worst:.2e} (h {h:.0e}, limit {GRADIENT_ABS_TOL:.0e})"
        ),
    )
}

fn constraint_guarantee() -> Verdict {
    let grammar = default_constraint_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut subword_violations = 0;
    let mut word_level = Vec::with_capacity(MASKED_DECODES);
    for _ in 0..MASKED_DECODES {
        let aligned = random_aligned(&mut rng, 8, false);
        let mask = PathMask::for_sentence(&grammar, &aligned);
        let params = random_params(&mut rng, 3.0);
        let em = random_emissions(&mut rng, aligned.len(), 6.0);
        let (path, _) = viterbi(&params, &em, Some(&mask)).unwrap();
        if !grammar.is_legal(&path) {
            subword_violations += 1;
        }
        word_level.push(collapse(&aligned, &path).unwrap().labels);
    }
    let word_violations = audit_bio(&[], &word_level, None).count();
    verdict(
        word_violations == 0 && subword_violations == 0,
        format!(
            "{MASKED_DECODES} masked decodes: {word_violations} BIO violations after collapse, {subword_violations} grammar violations at subword level"
        ),
    )
}

fn alignment_round_trip() -> Verdict {
    let mut cases = 0;
    let mut failures = 0;
    for n in 1..=ROUND_TRIP_MAX_WORDS {
        for code in product(Tag::ORIGINAL.len(), n) {
            let labels: Vec<Tag> = code.iter().map(|&i| Tag::ORIGINAL[i]).collect();
            for counts in product(ROUND_TRIP_MAX_PIECES, n) {
                let counts: Vec<usize> = counts.iter().map(|c| c + 1).collect();
                let (words, pieces) = pieces_for(&counts);
                let aligned = project_pieces(&words, &labels, pieces).unwrap();
                let back = collapse(&aligned, &aligned.subword_labels).unwrap();
                cases += 1;
                if back.labels != labels || back.repairs != 0 {
                    failures += 1;
                }
            }
        }
    }
    verdict(
        failures == 0,
        format!("{cases} labelings x segmentations (<= {ROUND_TRIP_MAX_WORDS} words, <= {ROUND_TRIP_MAX_PIECES} pieces/word): {failures} failures"),
    )
}

fn synthetic_end_to_end() -> Verdict {
    let started = Instant::now();
    let defaults = SynthConfig::default();
    let [train_c, val_c, test_c] =
        synth::generate_splits(SYNTH_TRAIN, SYNTH_VALIDATION, SYNTH_TEST, defaults.seed, defaults.ambiguous);
    let seg = WordPiece::new(synth::vocabulary());
    let aligner = Aligner::new(&seg);
    let config = TrainConfig {
        epochs: SYNTH_EPOCHS,
        ..TrainConfig::default()
    };
    let init = train::initial_model(&config, true, None).unwrap();
    let source = EmissionSource::Features(init.emitter.as_ref().unwrap());
    let train_set = train::prepare(&train_c, &aligner, source).unwrap();
    let val_set = train::prepare(&val_c, &aligner, source).unwrap();
    let test_set = train::prepare(&test_c, &aligner, source).unwrap();
    let out = train::train(&config, init, &train_set, &val_set).unwrap();
    let elapsed = started.elapsed();

    let best = out.history.iter().map(|m| m.val_f1).fold(f64::NEG_INFINITY, f64::max);
    let first_hit = out.history.iter().find(|m| m.val_f1 >= SYNTH_MIN_F1).map(|m| m.epoch);
    let finite = out.history.iter().all(|m| m.train_nll.is_finite());
    let (pred, _) = train::predict_all(&out.model, &test_set, false).unwrap();
    let test_f1 = token_f1(&test_c.labels(), &pred).unwrap().micro_f1();
    let last = out.history.last().unwrap();
    verdict(
        first_hit.is_some() && finite && elapsed < SYNTH_TIME_LIMIT,
        format!(
            "{SYNTH_TRAIN}/{SYNTH_VALIDATION} sentences, default config, {SYNTH_EPOCHS} epochs: validation token micro-F1 best {best:.4} (first >= {SYNTH_MIN_F1} at epoch {}), final {:.4}; test F1 of final model {test_f1:.4}; {:.1} s (limit {} s)",
            first_hit.map_or("never".to_string(), |e| e.to_string()),
            last.val_f1,
            elapsed.as_secs_f64(),
            SYNTH_TIME_LIMIT.as_secs()
        ),
    )
}

fn dataset_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("AUXCRF_DATASET_DIR")?);
    (dir.join("train.conll").is_file() && dir.join("test.conll").is_file()).then_some(dir)
}

fn baseline_sanity() -> Verdict {
    let defaults = SynthConfig::default();
    let [train_c, _, test_c] = synth::generate_splits(SYNTH_TRAIN, SYNTH_VALIDATION, SYNTH_TEST, defaults.seed, false);
    let baseline = ArgmaxBaseline::fit(&train_c).unwrap();
    let overlap = corpus::overlap_percent(&train_c, &test_c);
    let score = |c: &Corpus| token_f1(&c.labels(), &baseline.predict_corpus(c)).unwrap();
    let (on_train, on_test) = (score(&train_c), score(&test_c));
    let perfect = |s: &auxcrf::eval::TokenScores| Tag::ORIGINAL.iter().all(|&t| s.label(t).f1() == 1.0 || s.label(t).support() == 0);
    let mut detail = format!(
        "deterministic synthetic corpus: train micro-F1 {:.4}, test micro-F1 {:.4} (test vocabulary {overlap:.1}% seen)",
        on_train.micro_f1(),
        on_test.micro_f1()
    );
    let mut ok = perfect(&on_train) && perfect(&on_test) && overlap == 100.0;
    match dataset_dir() {
        None => detail.push_str("; real-dataset row skipped (AUXCRF_DATASET_DIR not set)"),
        Some(dir) => {
            let train_r = read_conll(dir.join("train.conll")).unwrap();
            let test_r = read_conll(dir.join("test.conll")).unwrap();
            let b = ArgmaxBaseline::fit(&train_r).unwrap();
            let s = token_f1(&test_r.labels(), &b.predict_corpus(&test_r)).unwrap();
            let got: Vec<f64> = Tag::ORIGINAL_REPORT_ORDER.iter().map(|&t| s.label(t).f1()).collect();
            let within = got.iter().zip(BASELINE_REAL_ROW).all(|(g, w)| (g - w).abs() <= BASELINE_REAL_TOL);
            ok &= within;
            detail.push_str(&format!("; real dataset row {got:.3?} vs {BASELINE_REAL_ROW:?} (tolerance {BASELINE_REAL_TOL})"));
        }
    }
    verdict(ok, detail)
}

fn stats_reproduction() -> Verdict {
    let Some(dir) = dataset_dir() else {
        return Verdict::Skip("needs the review dataset; set AUXCRF_DATASET_DIR".into());
    };
    let train_r = read_conll(dir.join("train.conll")).unwrap();
    let test_r = read_conll(dir.join("test.conll")).unwrap();
    let st = corpus::stats(&[("train", &train_r), ("test", &test_r)]);
    let counts = |name: &str| -> Vec<usize> {
        let c = st.counts(name).unwrap();
        Tag::ORIGINAL_REPORT_ORDER.iter().map(|t| c[t.report_name()]).collect()
    };
    let (tr, te) = (counts("train"), counts("test"));
    let totals = (tr.iter().sum::<usize>(), te.iter().sum::<usize>());
    let overlap = st.overlap_percent.unwrap_or(f64::NAN);
    verdict(
        tr == STATS_TRAIN && te == STATS_TEST && totals == STATS_TOTALS && (overlap - STATS_OVERLAP).abs() <= STATS_OVERLAP_TOL,
        format!("train {tr:?}, test {te:?}, totals {totals:?}, overlap {overlap:.2}%"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let bin = env!("CARGO_BIN_EXE_auxcrf");
    let status = Command::new(bin).args(["synth", "--out-dir", &s(d)]).output().unwrap();
    assert!(status.status.success());
    let run = |tag: &str, threads: &str| {
        let model = d.join(format!("{tag}.model"));
        let csv = d.join(format!("{tag}.csv"));
        let out = Command::new(bin)
            .args(["train", "--train", &s(&d.join("train.conll")), "--validation", &s(&d.join("validation.conll"))])
            .args(["--vocab", &s(&d.join("vocab.txt")), "--seed", "7", "--threads", threads])
            .args(["--model-out", &s(&model), "--metrics-out", &s(&csv)])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(model).unwrap(), std::fs::read(csv).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "4");
    verdict(
        a == b,
        format!(
            "two train runs (1 and 4 threads): model files {} ({} bytes), metric CSVs {}",
            if a.0 == b.0 { "identical" } else { "differ" },
            a.0.len(),
            if a.1 == b.1 { "identical" } else { "differ" }
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("crf-partition-oracle", crf_partition_oracle),
        ("viterbi-oracle", viterbi_oracle),
        ("gradient-check", gradient_check),
        ("constraint-guarantee", constraint_guarantee),
        ("alignment-round-trip", alignment_round_trip),
        ("synthetic-end-to-end", synthetic_end_to_end),
        ("baseline-sanity", baseline_sanity),
        ("stats-reproduction", stats_reproduction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        match v {
            Verdict::Pass(d) => println!("ACCEPTANCE PASS {name}: {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("ACCEPTANCE FAIL {name}: {d}");
            }
            Verdict::Skip(d) => println!("ACCEPTANCE SKIP {name}: {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
