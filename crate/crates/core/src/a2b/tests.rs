use super::*;
use crate::bytetext::GraphemeVocab;
use crate::corpus::{attach_features, SynthProfile, Utterance};
use crate::tensor::{grad_check, grad_check_report, GradCheckOptions};

fn tiny_config(output_unit: OutputUnit, seed: u64) -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        encoder_width: 8,
        decoder_layers: 1,
        decoder_width: 8,
        attention_heads: 2,
        attention_dim: 6,
        embed_dim: 6,
        output_unit,
        feature_dim: 4,
        stack_left: 3,
        stack_stride: 3,
        languages: Vec::new(),
        seed,
        optimizer: Default::default(),
    }
}

fn tiny_profile() -> SynthProfile {
    SynthProfile {
        dim: 4,
        kmin: 2,
        kmax: 3,
        noise_sigma: 0.05,
        seed: 11,
    }
}

fn utterances(texts: &[&str], language: &str, profile: &SynthProfile) -> Vec<Utterance> {
    let mut utts: Vec<Utterance> = texts
        .iter()
        .map(|t| Utterance::new(*t, language))
        .collect();
    attach_features(&mut utts, profile).unwrap();
    utts
}

fn examples(model: &A2bModel, utts: &[Utterance]) -> Vec<TrainExample> {
    utts.iter()
        .enumerate()
        .map(|(i, u)| model.make_example(u, i).unwrap())
        .collect()
}

#[test]
fn byte_config_has_256_output_rows() {
    let model = build_a2b(tiny_config(OutputUnit::Bytes, 1)).unwrap();
    assert_eq!(model.store().get("out.w").value.cols(), 256);
    assert_eq!(model.store().get("out.b").value.cols(), 256);
    assert_eq!(model.store().get("emb.table").value.rows(), 256);
}

#[test]
fn grapheme_config_output_rows_track_vocab() {
    let vocab = GraphemeVocab::build(&["オンア"], 1).unwrap();
    assert_eq!(vocab.output_dim(), 6); // 3 symbols + UNK/SOS/EOS
    let model = build_a2b(tiny_config(OutputUnit::Graphemes(vocab), 1)).unwrap();
    assert_eq!(model.store().get("out.w").value.cols(), 6);
    assert_eq!(model.store().get("emb.table").value.rows(), 6);
}

#[test]
fn same_config_and_seed_builds_identical_parameters() {
    let a = build_a2b(tiny_config(OutputUnit::Bytes, 7)).unwrap();
    let b = build_a2b(tiny_config(OutputUnit::Bytes, 7)).unwrap();
    assert_eq!(a.param_count(), b.param_count());
    for (pa, pb) in a.store().iter().zip(b.store().iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.value, pb.value, "parameter {}", pa.name);
    }
    let c = build_a2b(tiny_config(OutputUnit::Bytes, 8)).unwrap();
    assert!(a.store().iter().zip(c.store().iter()).any(|(x, y)| x.value != y.value));
}

#[test]
fn invalid_config_is_rejected_with_reason() {
    let mut config = tiny_config(OutputUnit::Bytes, 1);
    config.encoder_width = 0;
    match build_a2b(config) {
        Err(A2bError::InvalidConfig(msg)) => assert!(msg.contains("encoder_width")),
        other => panic!("expected InvalidConfig, got {other:?}"),
    }
}

#[test]
fn duplicated_utterance_keeps_per_token_loss() {
    let profile = tiny_profile();
    let utts = utterances(&["オン"], "KA", &profile);
    let mut m1 = build_a2b(tiny_config(OutputUnit::Bytes, 3)).unwrap();
    let mut m2 = build_a2b(tiny_config(OutputUnit::Bytes, 3)).unwrap();
    let e = examples(&m1, &utts);
    let single = m1.train_step(&e).unwrap();
    let doubled = m2.train_step(&[e[0].clone(), e[0].clone()]).unwrap();
    assert!(
        (single - doubled).abs() < 1e-12,
        "single {single} vs doubled {doubled}"
    );
}

#[test]
fn full_model_gradient_check() {
    let profile = tiny_profile();
    let utts = utterances(&["ab", "ba"], "EN", &profile);
    let model = build_a2b(tiny_config(OutputUnit::Bytes, 5)).unwrap();
    let batch = examples(&model, &utts);
    // Rebuild the whole teacher-forced loss from the perturbed store.
    let config = model.config.clone();
    let mut store = model.store().clone();
    let report = grad_check(
        &mut store,
        |s| {
            let mut probe = build_a2b(config.clone()).unwrap();
            *probe.store_mut() = s.clone();
            let mut g = Graph::new();
            let (l0, n0) = probe.example_loss(&mut g, &batch[0]);
            let (l1, n1) = probe.example_loss(&mut g, &batch[1]);
            let sum = g.add(l0, l1);
            let loss = g.scale(sum, 1.0 / (n0 + n1) as f64);
            (g, loss)
        },
        &GradCheckOptions {
            samples_per_param: 6,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{}", grad_check_report(&report));
}

#[test]
fn memorizes_a_tiny_corpus() {
    let profile = SynthProfile {
        noise_sigma: 0.0,
        ..tiny_profile()
    };
    let texts = ["ab", "ba", "aab", "bba", "abab", "baab", "aa", "bb", "abba", "baba"];
    let utts = utterances(&texts, "EN", &profile);
    let mut config = tiny_config(OutputUnit::Bytes, 17);
    config.encoder_width = 16;
    config.decoder_width = 16;
    config.optimizer.lr = 1e-2;
    config.optimizer.clip_norm = 1.0;
    let mut model = build_a2b(config).unwrap();
    let batch = examples(&model, &utts);
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        loss = model.train_step(&batch).unwrap();
    }
    assert!(loss < 0.1, "per-token loss after 200 steps: {loss}");

    // The memorized utterance decodes back exactly.
    let beam = model.default_beam(16);
    let hyp = crate::decode::greedy_decode(
        &model.stepper(utts[0].features.as_ref().unwrap(), None),
        &beam,
    );
    assert!(hyp.finished);
    assert_eq!(
        model
            .config
            .output_unit
            .decode_hypothesis(&hyp.payload_ids(model.config.output_unit.eos_id())),
        "ab"
    );
}

#[test]
fn checkpoint_roundtrip_is_bit_exact_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let profile = tiny_profile();
    let utts = utterances(&["オン", "アオ"], "KA", &profile);
    let mut model = build_a2b(tiny_config(OutputUnit::Bytes, 23)).unwrap();
    let batch = examples(&model, &utts);
    for _ in 0..5 {
        model.train_step(&batch).unwrap();
    }
    save_checkpoint(&model, &path).unwrap();

    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed.trained_steps(), model.trained_steps());
    for (a, b) in model.store().iter().zip(resumed.store().iter()) {
        assert_eq!(a.value, b.value, "parameter {}", a.name);
    }

    // One more identical step on both: losses and parameters stay equal.
    let l1 = model.train_step(&batch).unwrap();
    let l2 = resumed.train_step(&batch).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    for (a, b) in model.store().iter().zip(resumed.store().iter()) {
        assert_eq!(a.value, b.value, "diverged at {}", a.name);
    }
}

#[test]
fn saved_file_bytes_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    let model = build_a2b(tiny_config(OutputUnit::Bytes, 29)).unwrap();
    save_checkpoint(&model, &p1).unwrap();
    save_checkpoint(&model, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn grapheme_checkpoint_with_byte_valued_vocab_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bv.ckpt");
    let model = build_a2b(tiny_config(
        OutputUnit::Graphemes(GraphemeVocab::byte_valued()),
        31,
    ))
    .unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, model.config);
}

#[test]
fn byte_model_language_growth_zero_extends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two_lang.ckpt");
    let mut config = tiny_config(OutputUnit::Bytes, 37);
    config.languages = vec!["EN".into(), "KA".into()];
    let profile = tiny_profile();
    let utts = utterances(&["ab"], "EN", &profile);
    let mut model = build_a2b(config).unwrap();
    let batch = examples(&model, &utts);
    for _ in 0..3 {
        model.train_step(&batch).unwrap();
    }
    save_checkpoint(&model, &path).unwrap();

    let grown = load_checkpoint_with_languages(
        &path,
        &["EN".into(), "KA".into(), "ES".into()],
    )
    .unwrap();
    assert_eq!(grown.config.languages.len(), 3);
    // New language slots are zero rows at the end of each language block.
    for p in grown.store().iter().filter(|p| p.name.ends_with(".w_lang")) {
        assert_eq!(p.value.rows(), 3, "{}", p.name);
        assert!(p.value.row(2).iter().all(|&v| v == 0.0), "{}", p.name);
        let old = model.store().get(&p.name);
        assert_eq!(&p.value.data()[..old.value.len()], old.value.data());
    }
    // Output layer shape never changed.
    assert_eq!(grown.store().get("out.w").value.cols(), 256);

    // Zero slots leave old-language behavior bit-identical.
    let lang0 = Some(0);
    let (_, before) = model.stepper(utts[0].features.as_ref().unwrap(), lang0).begin();
    let (_, after) = grown.stepper(utts[0].features.as_ref().unwrap(), lang0).begin();
    assert_eq!(before, after);
}

#[test]
fn language_list_must_extend_saved_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two_lang.ckpt");
    let mut config = tiny_config(OutputUnit::Bytes, 41);
    config.languages = vec!["EN".into(), "KA".into()];
    let model = build_a2b(config).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let err = load_checkpoint_with_languages(&path, &["KA".into(), "EN".into(), "ES".into()]);
    assert!(matches!(err, Err(A2bError::ShapeMismatch(_))));
}

#[test]
fn ascii_parity_byte_and_byte_valued_grapheme_models_are_identical() {
    // Same seed, same 256-way output: target sequences match element for
    // element, so the loss trajectories are bit-identical.
    let profile = SynthProfile {
        dim: 4,
        kmin: 2,
        kmax: 3,
        noise_sigma: 0.05,
        seed: 47,
    };
    let texts = ["hello", "world", "on off", "abba"];
    let utts = utterances(&texts, "EN", &profile);
    let mut byte_model = build_a2b(tiny_config(OutputUnit::Bytes, 53)).unwrap();
    let mut graph_model = build_a2b(tiny_config(
        OutputUnit::Graphemes(GraphemeVocab::byte_valued()),
        53,
    ))
    .unwrap();
    for utt in &utts {
        let b = byte_model.make_example(utt, 0).unwrap();
        let g = graph_model.make_example(utt, 0).unwrap();
        assert_eq!(b.targets, g.targets, "targets for {:?}", utt.text);
    }
    let byte_batch = examples(&byte_model, &utts);
    let graph_batch = examples(&graph_model, &utts);
    for step in 0..25 {
        let lb = byte_model.train_step(&byte_batch).unwrap();
        let lg = graph_model.train_step(&graph_batch).unwrap();
        assert!(
            (lb - lg).abs() < 1e-9,
            "step {step}: byte {lb} vs grapheme {lg}"
        );
    }
}

#[test]
fn unknown_language_is_rejected_when_conditioned() {
    let mut config = tiny_config(OutputUnit::Bytes, 59);
    config.languages = vec!["EN".into()];
    let model = build_a2b(config).unwrap();
    let profile = tiny_profile();
    let utts = utterances(&["ab"], "XX", &profile);
    assert!(matches!(
        model.make_example(&utts[0], 0),
        Err(A2bError::UnknownLanguage(l)) if l == "XX"
    ));
}

#[test]
fn missing_features_are_rejected() {
    let model = build_a2b(tiny_config(OutputUnit::Bytes, 61)).unwrap();
    let utt = Utterance::new("ab", "EN");
    assert!(matches!(
        model.make_example(&utt, 4),
        Err(A2bError::MissingFeatures(4))
    ));
}

#[test]
fn untrained_model_scores_poorly_and_evaluate_aggregates() {
    let profile = tiny_profile();
    let utts = utterances(&["オンオン", "アイウエ", "ンンアア"], "KA", &profile);
    let model = build_a2b(tiny_config(OutputUnit::Bytes, 67)).unwrap();
    let mut test = std::collections::BTreeMap::new();
    test.insert("KA".to_string(), utts);
    let beam = model.default_beam(24);
    let outcome = evaluate(&model, &test, &beam, EvalMetric::Ter, 2);
    let eval = &outcome["KA"];
    assert_eq!(eval.utterances, 3);
    assert_eq!(eval.rows.len(), 3);
    assert_eq!(eval.hypotheses.len(), 3);
    assert!(
        eval.rate() > 0.5,
        "an untrained model should be far from the reference: {}",
        eval.rate()
    );
    // Sharding does not change the outcome.
    let outcome1 = evaluate(&model, &test, &beam, EvalMetric::Ter, 1);
    assert_eq!(outcome1["KA"].counts, eval.counts);
    for (a, b) in outcome1["KA"].hypotheses.iter().zip(&eval.hypotheses) {
        assert_eq!(a, b);
    }
}
