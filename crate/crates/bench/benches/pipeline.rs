use bytespeech::a2b::{build_a2b, ModelConfig, OutputUnit};
use bytespeech::bytetext::{accepts, decode_bytes, encode_bytes, DecodePolicy};
use bytespeech::corpus::{synth_features, SynthProfile, Utterance};
use bytespeech::decode::{beam_search, BeamConfig};
use bytespeech::rng::Rng;
use bytespeech::score::ter_counts;
use bytespeech::tensor::{matmul, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn utf8_validation(c: &mut Criterion) {
    let mut rng = Rng::from_seed(1);
    let inputs: Vec<Vec<u8>> = (0..256)
        .map(|_| {
            (0..64)
                .map(|_| (rng.next_u64() & 0xFF) as u8)
                .collect()
        })
        .collect();
    c.bench_function("utf8_accepts_64b_x256", |b| {
        b.iter(|| {
            let mut ok = 0usize;
            for bytes in &inputs {
                if accepts(black_box(bytes)) {
                    ok += 1;
                }
            }
            ok
        })
    });
}

fn byte_codec(c: &mut Criterion) {
    let text = "google 音声認識 オン wi-fi αβγ".repeat(8);
    c.bench_function("encode_decode_roundtrip", |b| {
        b.iter(|| {
            let seq = encode_bytes(black_box(&text), true);
            decode_bytes(seq.strip_specials(), DecodePolicy::Replace).unwrap()
        })
    });
}

fn alignment(c: &mut Criterion) {
    let reference = "アソッガカダツラヘカリロユマキャキン".repeat(4);
    let hypothesis = "アソッガカチララヘカリロヤマキャキン".repeat(4);
    c.bench_function("ter_72_codepoints", |b| {
        b.iter(|| ter_counts(black_box(&reference), black_box(&hypothesis)).unwrap())
    });
}

fn dense_matmul(c: &mut Criterion) {
    let mut rng = Rng::from_seed(2);
    let a = Tensor::from_fn(64, 128, |_, _| rng.normal());
    let b = Tensor::from_fn(128, 256, |_, _| rng.normal());
    c.bench_function("matmul_64x128x256", |bch| {
        bch.iter(|| matmul(black_box(&a), black_box(&b)))
    });
}

fn model_config() -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        encoder_width: 32,
        decoder_layers: 1,
        decoder_width: 32,
        attention_heads: 2,
        attention_dim: 16,
        embed_dim: 8,
        output_unit: OutputUnit::Bytes,
        feature_dim: 8,
        stack_left: 3,
        stack_stride: 2,
        languages: vec![],
        seed: 3,
        optimizer: Default::default(),
    }
}

fn train_step(c: &mut Criterion) {
    let profile = SynthProfile::default();
    let mut model = build_a2b(model_config()).unwrap();
    let mut utt = Utterance::new("オンオフ", "KA");
    utt.features = Some(synth_features(&utt.text, &profile, 1).unwrap());
    let example = model.make_example(&utt, 0).unwrap();
    let batch = vec![example; 4];
    c.bench_function("a2b_train_step_batch4", |b| {
        b.iter(|| model.train_step(black_box(&batch)).unwrap())
    });
}

fn greedy_and_beam(c: &mut Criterion) {
    let profile = SynthProfile::default();
    let model = build_a2b(model_config()).unwrap();
    let features = synth_features("オンオフセット", &profile, 2).unwrap();
    for beam in [1usize, 4] {
        let config = BeamConfig {
            beam_size: beam,
            max_len: 32,
            constrain_utf8: true,
            length_norm_alpha: 0.0,
        };
        c.bench_function(&format!("a2b_decode_beam{beam}"), |b| {
            b.iter(|| {
                let stepper = model.stepper(black_box(&features), None);
                beam_search(&stepper, &config)
            })
        });
    }
}

criterion_group!(
    benches,
    utf8_validation,
    byte_codec,
    alignment,
    dense_matmul,
    train_step,
    greedy_and_beam
);
criterion_main!(benches);
