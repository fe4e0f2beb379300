//! Componentwise gradient audit: every layer and both full models checked
//! against central differences. Shared by the CLI's grad-check command and
//! the acceptance suite.

use crate::a2b::{build_a2b, ModelConfig, OutputUnit, TrainExample};
use crate::b2a::{build_b2a, B2aConfig, B2aExample};
use crate::corpus::{synth_features, SynthProfile};
use crate::layers::{Embedding, Linear, LocationAttention, Lstm, MultiHeadAttention};
use crate::tensor::{
    grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor,
};

/// Runs every component check; one (name, report) pair per component.
pub fn gradient_audit(seed: u64, tol: f64) -> Vec<(String, GradCheckReport)> {
    let opts = GradCheckOptions {
        tol,
        samples_per_param: 8,
        seed,
        ..GradCheckOptions::default()
    };
    let mut results = Vec::new();

    results.push(("lstm".to_string(), check_lstm(seed, &opts)));
    results.push((
        "additive_attention".to_string(),
        check_attention(seed, &opts),
    ));
    results.push((
        "location_attention".to_string(),
        check_location(seed, &opts),
    ));
    results.push(("conv1d".to_string(), check_conv(seed, &opts)));
    results.push((
        "embedding_softmax".to_string(),
        check_embedding(seed, &opts),
    ));
    results.push(("a2b_model".to_string(), check_a2b(seed, &opts)));
    results.push(("b2a_model".to_string(), check_b2a(seed, &opts)));
    results
}

fn check_lstm(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut store = ParamStore::new();
    let cell = Lstm::init(&mut store, seed, "cell", &[("x", 3)], 4);
    let inputs: Vec<Tensor> = (0..5)
        .map(|i| Tensor::row_vec(vec![0.2 * i as f64 - 0.3, 0.1, -0.05 * i as f64]))
        .collect();
    grad_check(
        &mut store,
        |s| {
            let mut g = Graph::new();
            let mut state = cell.zero_state(&mut g);
            for input in &inputs {
                let x = g.input(input.clone());
                let p = cell.proj(&mut g, s, "x", x);
                state = cell.step(&mut g, s, p, state);
            }
            let loss = g.mse_mean(state.h, Tensor::row_vec(vec![0.1, -0.2, 0.3, 0.0]));
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn check_attention(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::init(&mut store, seed, "att", 3, 4, 5, 6);
    let keys = Tensor::from_fn(6, 5, |r, c| 0.17 * r as f64 - 0.11 * c as f64 + 0.03);
    let query = Tensor::row_vec(vec![0.5, -0.4, 0.2, 0.7]);
    grad_check(
        &mut store,
        |s| {
            let mut g = Graph::new();
            let k = g.input(keys.clone());
            let prepared = attn.prepare(&mut g, s, k).expect("non-empty keys");
            let q = g.input(query.clone());
            let (ctx, _) = attn.step(&mut g, s, q, &prepared);
            let loss = g.mse_mean(ctx, Tensor::zeros(1, 5));
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn check_location(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut store = ParamStore::new();
    let loc = LocationAttention::init(&mut store, seed, "loc", 4, 5, 6, 3, 5);
    let keys = Tensor::from_fn(7, 5, |r, c| 0.09 * (r * 5 + c) as f64 - 0.25);
    let query = Tensor::row_vec(vec![0.6, -0.1, 0.3, -0.5]);
    grad_check(
        &mut store,
        |s| {
            let mut g = Graph::new();
            let k = g.input(keys.clone());
            let prepared = loc.prepare(&mut g, s, k).expect("non-empty keys");
            let q = g.input(query.clone());
            let cum0 = loc.zero_cumulative(&mut g, 7);
            let (c1, _, cum1) = loc.step(&mut g, s, q, &prepared, cum0).expect("lengths");
            let (c2, _, _) = loc.step(&mut g, s, q, &prepared, cum1).expect("lengths");
            let both = g.concat_cols(&[c1, c2]);
            let loss = g.mse_mean(both, Tensor::zeros(1, 10));
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn check_conv(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut store = ParamStore::new();
    store.insert(
        "kernel",
        crate::layers::init_weight(3 * 4, 5, 12, seed, "kernel"),
    );
    let input = Tensor::from_fn(6, 4, |r, c| 0.13 * r as f64 - 0.07 * c as f64);
    grad_check(
        &mut store,
        |s| {
            let mut g = Graph::new();
            let x = g.input(input.clone());
            let k = g.param(s, "kernel");
            let y = g.conv1d_same(x, k, 3);
            let act = g.tanh(y);
            let loss = g.mse_mean(act, Tensor::zeros(6, 5));
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn check_embedding(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let mut store = ParamStore::new();
    let emb = Embedding::init(&mut store, seed, "emb", 7, 4);
    let lin = Linear::init(&mut store, seed, "head", 4, 6);
    grad_check(
        &mut store,
        |s| {
            let mut g = Graph::new();
            let x = emb.lookup(&mut g, s, &[3, 0, 6, 3]);
            let logits = lin.apply(&mut g, s, x);
            let ce = g.cross_entropy_sum(logits, vec![1, 5, 0, 2]);
            let loss = g.scale(ce, 0.25);
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn audit_profile(seed: u64) -> SynthProfile {
    SynthProfile {
        dim: 4,
        kmin: 2,
        kmax: 3,
        noise_sigma: 0.05,
        seed,
    }
}

fn check_a2b(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let profile = audit_profile(seed);
    let config = ModelConfig {
        encoder_layers: 1,
        encoder_width: 6,
        decoder_layers: 1,
        decoder_width: 6,
        attention_heads: 2,
        attention_dim: 4,
        embed_dim: 4,
        output_unit: OutputUnit::Bytes,
        feature_dim: 4,
        stack_left: 3,
        stack_stride: 3,
        languages: vec!["L0".into(), "L1".into()],
        seed,
        optimizer: Default::default(),
    };
    let model = build_a2b(config.clone()).expect("valid config");
    let batch: Vec<TrainExample> = [("ab", 0usize), ("オ", 1)]
        .iter()
        .enumerate()
        .map(|(i, (text, lang))| TrainExample {
            features: synth_features(text, &profile, i as u64).expect("non-empty"),
            targets: config.output_unit.encode_targets(text),
            lang: Some(*lang),
        })
        .collect();
    let mut store = model.store().clone();
    grad_check(
        &mut store,
        |s| {
            let mut probe = build_a2b(config.clone()).expect("valid config");
            *probe.store_mut() = s.clone();
            let mut g = Graph::new();
            let (l0, n0) = probe.example_loss(&mut g, &batch[0]);
            let (l1, n1) = probe.example_loss(&mut g, &batch[1]);
            let sum = g.add(l0, l1);
            let loss = g.scale(sum, 1.0 / (n0 + n1) as f64);
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}

fn check_b2a(seed: u64, opts: &GradCheckOptions) -> GradCheckReport {
    let profile = audit_profile(seed ^ 0xB2A);
    let config = B2aConfig {
        embed_dim: 4,
        conv_layers: 1,
        conv_filters: 5,
        conv_width: 3,
        encoder_width: 4,
        decoder_width: 6,
        attention_dim: 4,
        location_filters: 2,
        location_width: 3,
        feature_dim: 4,
        speakers: 2,
        speaker_dim: 2,
        stop_threshold: 0.5,
        seed,
        optimizer: Default::default(),
    };
    let model = build_b2a(config.clone()).expect("valid config");
    let example = B2aExample {
        bytes: "aオ".as_bytes().to_vec(),
        frames: synth_features("aオ", &profile, 3).expect("non-empty"),
        speaker: 1,
    };
    let mut store = model.store().clone();
    grad_check(
        &mut store,
        |s| {
            let mut probe = build_b2a(config.clone()).expect("valid config");
            *probe.store_mut() = s.clone();
            let mut g = Graph::new();
            let loss = probe.example_loss(&mut g, &example);
            (g, loss)
        },
        opts,
    )
    .expect("finite loss")
}
