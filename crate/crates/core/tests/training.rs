use auxcrf::align::Aligner;
use auxcrf::corpus::{Corpus, Sentence};
use auxcrf::eval::token_f1;
use auxcrf::labelspace::parse_tag;
use auxcrf::segment::WordPiece;
use auxcrf::train::{self, EmissionSource, Prepared, TrainConfig, TrainError};

/// Each token string carries one label everywhere.
const TOY: &[&str] = &[
    "kamar/B-ASPECT mandi/I-ASPECT bersih/B-SENTIMENT",
    "kasur/B-ASPECT nyaman/B-SENTIMENT sekali/I-SENTIMENT",
    "wifi/B-ASPECT lambat/B-SENTIMENT",
    "pelayanan/B-ASPECT ramah/B-SENTIMENT dan/O cepat/B-SENTIMENT",
    "lokasinya/B-ASPECT strategis/B-SENTIMENT",
    "kamar/B-ASPECT mandi/I-ASPECT kotor/B-SENTIMENT",
    "sarapan/B-ASPECT enak/B-SENTIMENT sekali/I-SENTIMENT",
    "saya/O suka/O kasur/B-ASPECT nya/O",
    "ac/B-ASPECT dingin/B-SENTIMENT",
    "harga/B-ASPECT murah/B-SENTIMENT utk/O transit/O",
];

fn toy_corpus() -> Corpus {
    Corpus::new(
        TOY.iter()
            .enumerate()
            .map(|(i, line)| {
                let (words, labels) = line
                    .split(' ')
                    .map(|tok| {
                        let (w, l) = tok.split_once('/').unwrap();
                        (w.to_string(), parse_tag(l).unwrap())
                    })
                    .unzip();
                Sentence::new(i.to_string(), words, labels)
            })
            .collect(),
    )
}

fn prepared(config: &TrainConfig) -> (auxcrf::Model, Vec<Prepared>) {
    let seg = WordPiece::new(["kamar", "lokasi", "##nya", "ut", "##k", "ka", "##sur"]);
    let init = train::initial_model(config, true, None).unwrap();
    let set = train::prepare(
        &toy_corpus(),
        &Aligner::new(&seg),
        EmissionSource::Features(init.emitter.as_ref().unwrap()),
    )
    .unwrap();
    (init, set)
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        batch_size: 2,
        epochs: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_corpus_is_learned_exactly() {
    let config = toy_config();
    let (init, set) = prepared(&config);
    let out = train::train(&config, init, &set, &set).unwrap();
    assert_eq!(out.history.len(), 50);
    for pair in out.history[1..].windows(2) {
        assert!(
            pair[1].train_nll < pair[0].train_nll,
            "epoch {}: {} then {}",
            pair[1].epoch,
            pair[0].train_nll,
            pair[1].train_nll
        );
    }
    let (pred, _) = train::predict_all(&out.model, &set, false).unwrap();
    let gold = toy_corpus().labels();
    let scores = token_f1(&gold, &pred).unwrap();
    assert_eq!(scores.micro_f1(), 1.0);
    assert_eq!(scores.accuracy(), 1.0);
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let config = TrainConfig {
        epochs: 0,
        ..toy_config()
    };
    let (init, set) = prepared(&config);
    let out = train::train(&config, init.clone(), &set, &set).unwrap();
    assert_eq!(out.model, init);
    assert!(out.history.is_empty());
}

#[test]
fn same_seed_gives_bit_identical_parameters() {
    let config = TrainConfig {
        epochs: 5,
        ..toy_config()
    };
    let run = || {
        let (init, set) = prepared(&config);
        train::train(&config, init, &set, &set).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(train::metrics_csv(&a.history), train::metrics_csv(&b.history));
    let other = TrainConfig { seed: 9, ..config.clone() };
    let (init, set) = prepared(&other);
    assert_ne!(train::train(&other, init, &set, &set).unwrap().model, a.model);
}

#[test]
fn masked_training_decodes_without_violations() {
    let config = TrainConfig {
        mask_in_training: true,
        mask_in_decoding: true,
        epochs: 10,
        ..toy_config()
    };
    let (init, set) = prepared(&config);
    let out = train::train(&config, init, &set, &set).unwrap();
    assert!(out.history.iter().all(|m| m.train_nll.is_finite()));
    let (pred, repairs) = train::predict_all(&out.model, &set, true).unwrap();
    assert_eq!(repairs, 0);
    assert_eq!(auxcrf::eval::audit_bio(&[], &pred, None).count(), 0);
}

#[test]
fn masked_training_rejects_gold_with_stray_inside_tags() {
    let config = TrainConfig {
        mask_in_training: true,
        ..toy_config()
    };
    let (init, mut set) = prepared(&config);
    let bad = Corpus::new(vec![Sentence::new(
        "stray",
        vec!["nya".into(), "bagus".into()],
        vec![parse_tag("O").unwrap(), parse_tag("I-SENTIMENT").unwrap()],
    )]);
    let seg = WordPiece::new(["nya", "bagus"]);
    set.extend(
        train::prepare(&bad, &Aligner::new(&seg), EmissionSource::Features(init.emitter.as_ref().unwrap())).unwrap(),
    );
    match train::train(&config, init, &set, &set) {
        Err(TrainError::Crf { id, .. }) => assert_eq!(id, "stray"),
        other => panic!("expected a mask error, got {other:?}"),
    }
}

#[test]
fn best_checkpoint_tracks_validation() {
    let config = TrainConfig {
        epochs: 8,
        ..toy_config()
    };
    let (init, set) = prepared(&config);
    let out = train::train(&config, init, &set, &set).unwrap();
    let best_epoch = out.best_epoch.unwrap();
    let best_f1 = out.history[best_epoch - 1].val_f1;
    assert!(out.history.iter().all(|m| m.val_f1 <= best_f1));
    let (pred, _) = train::predict_all(&out.best, &set, false).unwrap();
    let f1 = token_f1(&toy_corpus().labels(), &pred).unwrap().micro_f1();
    assert!((f1 - best_f1).abs() < 1e-12);
}
