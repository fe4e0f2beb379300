// Scratch harness for convergence experiments; not part of the deliverable.
use bytespeech::a2b::{build_a2b, evaluate, EvalMetric, ModelConfig, OutputUnit};
use bytespeech::corpus::{
    attach_features, generate_texts, Script, SynthProfile, TextGenSpec, Utterance,
};
use bytespeech::rng::Rng;
use bytespeech::tensor::AdamConfig;
use std::collections::BTreeMap;

fn template_stats() {
    // Nearest-template Bayes-floor probe: min pairwise distance and
    // simulated per-symbol classification error with k-frame averaging.
    let symbols = Script::Katakana.symbols();
    for seed in [404u64, 1, 2, 3, 4, 5] {
        let profile = SynthProfile {
            dim: 8,
            kmin: 2,
            kmax: 4,
            noise_sigma: 0.1,
            seed,
        };
        let templates: Vec<Vec<f64>> = symbols
            .iter()
            .map(|&c| bytespeech::corpus::symbol_template(&profile, c))
            .collect();
        let mut min_d = f64::INFINITY;
        for i in 0..templates.len() {
            for j in i + 1..templates.len() {
                let d: f64 = templates[i]
                    .iter()
                    .zip(&templates[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_d = min_d.min(d);
            }
        }
        // Simulated nearest-template error using the mean of k noisy frames.
        let mut rng = Rng::from_seed(seed ^ 0x5555);
        let mut errs = [0usize; 2];
        let trials = 4000;
        for t in 0..trials {
            let true_idx = rng.next_below(symbols.len() as u64) as usize;
            for (ki, &k) in [2usize, 4].iter().enumerate() {
                let mut mean = vec![0.0; 8];
                for _ in 0..k {
                    for (m, &v) in mean.iter_mut().zip(&templates[true_idx]) {
                        *m += (v + 0.1 * rng.normal()) / k as f64;
                    }
                }
                let mut best = (usize::MAX, f64::INFINITY);
                for (i, tpl) in templates.iter().enumerate() {
                    let d: f64 = mean.iter().zip(tpl).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                if best.0 != true_idx {
                    errs[ki] += 1;
                }
            }
            let _ = t;
        }
        println!(
            "seed {seed}: min pairwise distance {min_d:.3}, NN error k=2 {:.4}, k=4 {:.4}",
            errs[0] as f64 / trials as f64,
            errs[1] as f64 / trials as f64
        );
    }
}

fn main() {
    if std::env::args().nth(1).as_deref() == Some("stats") {
        template_stats();
        return;
    }
    let noise: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.1);
    let profile = SynthProfile {
        dim: 8,
        kmin: 2,
        kmax: 4,
        noise_sigma: noise,
        seed: 404,
    };
    let nsym: usize = std::env::args()
        .nth(7)
        .and_then(|s| s.parse().ok())
        .unwrap_or(usize::MAX);
    let mut symbols = Script::Katakana.symbols();
    symbols.truncate(nsym);
    let spec = TextGenSpec::single_words(symbols, 3, 8);
    let train_texts = generate_texts(&spec, 2000, 1001);
    let test_texts: Vec<String> = generate_texts(&spec, 260, 2002)
        .into_iter()
        .filter(|t| !train_texts.contains(t))
        .take(200)
        .collect();
    eprintln!("train {} test {}", train_texts.len(), test_texts.len());

    let mut train: Vec<Utterance> = train_texts
        .iter()
        .map(|t| Utterance::new(t.clone(), "KA"))
        .collect();
    attach_features(&mut train, &profile).unwrap();
    let mut test: Vec<Utterance> = test_texts
        .iter()
        .map(|t| Utterance::new(t.clone(), "KA"))
        .collect();
    attach_features(&mut test, &profile).unwrap();

    let width: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(48);
    let steps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500);
    let lr: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-2);
    let stride: usize = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let batch = 8;

    let unit = match std::env::args().nth(9).as_deref() {
        Some("graphemes") => {
            let texts: Vec<&str> = train_texts.iter().map(|s| s.as_str()).collect();
            OutputUnit::Graphemes(bytespeech::bytetext::GraphemeVocab::build(&texts, 1).unwrap())
        }
        _ => OutputUnit::Bytes,
    };
    let config = ModelConfig {
        encoder_layers: 2,
        encoder_width: width,
        decoder_layers: 1,
        decoder_width: width,
        attention_heads: 4,
        attention_dim: 32,
        embed_dim: 16,
        output_unit: unit,
        feature_dim: 8,
        stack_left: 3,
        stack_stride: stride,
        languages: vec![],
        seed: 99,
        optimizer: AdamConfig {
            lr,
            clip_norm: 1.0,
            ..AdamConfig::default()
        },
    };
    let mut model = build_a2b(config).unwrap();
    eprintln!("params: {}", model.param_count());

    let variants: u64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = Rng::from_seed(7);
    let t0 = std::time::Instant::now();
    for step in 1..=steps {
        if step == steps / 2 {
            model.set_learning_rate(lr * 0.1);
        }
        let examples: Vec<_> = (0..batch)
            .map(|_| {
                let i = rng.next_below(train.len() as u64) as usize;
                if variants > 0 {
                    // Fresh deterministic noise realization per visit.
                    let v = rng.next_below(variants);
                    let seed = bytespeech::rng::mix(&[profile.seed, i as u64, v]);
                    let mut utt = train[i].clone();
                    utt.features =
                        Some(bytespeech::corpus::synth_features(&utt.text, &profile, seed).unwrap());
                    model.make_example(&utt, i).unwrap()
                } else {
                    model.make_example(&train[i], i).unwrap()
                }
            })
            .collect();
        let loss = model.train_step(&examples).unwrap();
        if step % 250 == 0 {
            eprintln!(
                "step {step} loss {loss:.4} ({:.1} ms/step)",
                t0.elapsed().as_millis() as f64 / step as f64
            );
        }
    }
    let train_time = t0.elapsed();

    let beam_size: usize = std::env::args()
        .nth(8)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let te = std::time::Instant::now();
    let mut testmap = BTreeMap::new();
    testmap.insert("KA".to_string(), test);
    let mut beam = model.default_beam(40);
    beam.beam_size = beam_size;
    let outcome = evaluate(&model, &testmap, &beam, EvalMetric::Ter, 2);
    let mut trainmap = BTreeMap::new();
    trainmap.insert("KA".to_string(), train[..200].to_vec());
    let train_outcome = evaluate(&model, &trainmap, &beam, EvalMetric::Ter, 2);
    println!(
        "width={width} steps={steps} lr={lr} stride={stride} testTER={:.4} trainTER={:.4} train {:?} eval {:?}",
        outcome["KA"].rate(),
        train_outcome["KA"].rate(),
        train_time,
        te.elapsed()
    );
    let mut shown = 0;
    for (id, hyp) in outcome["KA"].hypotheses.iter() {
        let idx: usize = id.rsplit('-').next().unwrap().parse().unwrap();
        let reference = &testmap["KA"][idx].text;
        if reference != hyp && shown < 10 {
            shown += 1;
            eprintln!("ref {reference:?}\nhyp {hyp:?}");
        }
    }
}
