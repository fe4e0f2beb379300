//! Command-line front end: corpus generation, training, decoding, scoring,
//! and reporting, all deterministic given explicit seeds.

use bytespeech::a2b::{
    load_checkpoint, save_checkpoint, A2bError, A2bStageTrainer, EvalMetric, ModelConfig,
    OutputUnit, TrainOptions,
};
use bytespeech::b2a::{self, build_b2a, save_b2a_checkpoint, B2aConfig, B2aError, B2aExample};
use bytespeech::bytetext::{encode_bytes, GraphemeVocab};
use bytespeech::corpus::{
    attach_features, generate_code_switch_texts, generate_texts, read_feature_file, run_schedule,
    utterance_seed, synth_features, CorpusError, Manifest, MixSampler, Script, ScheduleError,
    SynthProfile, TextGenSpec, Utterance,
};
use bytespeech::decode::{beam_search, write_nbest, BeamConfig};
use bytespeech::score::{self, render_report, write_score_file, AlignmentCounts, ScoreRow};
use bytespeech::tensor::AdamConfig;
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod gradcheck;

#[derive(Parser)]
#[command(
    name = "bytespeech",
    about = "Byte-level multilingual speech recognition and synthesis toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic corpora and a manifest.
    GenCorpus(GenCorpusArgs),
    /// Print the UTF-8 byte decomposition of a text.
    Tokenize(TokenizeArgs),
    /// Train a recognizer over the manifest's curriculum.
    TrainAsr(TrainAsrArgs),
    /// Train a synthesizer on the manifest's languages.
    TrainTts(TrainTtsArgs),
    /// Decode utterances with a trained recognizer.
    Decode(DecodeArgs),
    /// Score hypotheses against references.
    Score(ScoreArgs),
    /// Render a systems-by-languages report table.
    Report(ReportArgs),
    /// Run gradient checks on every layer and both full models.
    GradCheck(GradCheckArgs),
    /// Sample the language mixing distribution and print proportions.
    SampleMix(SampleMixArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Language spec NAME=SCRIPT[:SYMBOLS], e.g. KA=katakana:46. Scripts:
    /// ascii, greek, katakana, hiragana.
    #[arg(long = "lang", required = true)]
    langs: Vec<String>,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    /// Words per utterance, MIN,MAX.
    #[arg(long, default_value = "1,1")]
    words: String,
    /// Symbols per word, MIN,MAX.
    #[arg(long = "word-len", default_value = "3,8")]
    word_len: String,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    kmin: usize,
    #[arg(long, default_value_t = 4)]
    kmax: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Code-switch test set HOST=EMBEDDED:COUNT (host/embedded are --lang
    /// names); writes codeswitch_test.txt.
    #[arg(long)]
    codeswitch: Option<String>,
    /// Also write BLF1 feature files next to each utterance file.
    #[arg(long = "write-features")]
    write_features: bool,
    /// Curriculum stage in manifest syntax, e.g.
    /// "steps=2000 init=random KA=1 EN=1"; repeatable.
    #[arg(long = "stage")]
    stages: Vec<String>,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    text: String,
    /// Wrap with the SOS/EOS marker bytes.
    #[arg(long)]
    specials: bool,
    /// Also write the byte line to OUT/tokens.txt with a run.meta echo.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long = "enc-layers", default_value_t = 2)]
    enc_layers: usize,
    #[arg(long = "enc-width", default_value_t = 32)]
    enc_width: usize,
    #[arg(long = "dec-layers", default_value_t = 1)]
    dec_layers: usize,
    #[arg(long = "dec-width", default_value_t = 32)]
    dec_width: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long = "attn-dim", default_value_t = 32)]
    attn_dim: usize,
    #[arg(long = "embed-dim", default_value_t = 16)]
    embed_dim: usize,
    #[arg(long = "stack-left", default_value_t = 3)]
    stack_left: usize,
    #[arg(long = "stack-stride", default_value_t = 2)]
    stack_stride: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long = "clip-norm", default_value_t = 1.0)]
    clip_norm: f64,
}

#[derive(Args)]
struct TrainAsrArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output unit: bytes or graphemes.
    #[arg(long, default_value = "bytes")]
    unit: String,
    /// Grapheme vocabulary min count when --unit graphemes.
    #[arg(long = "min-count", default_value_t = 1)]
    min_count: u64,
    /// Condition every layer on a 1-hot language vector.
    #[arg(long = "lang-vector")]
    lang_vector: bool,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Noise realizations per utterance during training (0 = fixed
    /// features).
    #[arg(long, default_value_t = 10)]
    variants: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "eval-max-len", default_value_t = 64)]
    eval_max_len: usize,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct TrainTtsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Manifest providing the synthesis profile (and test sets unless
    /// --input is given).
    #[arg(long)]
    manifest: PathBuf,
    /// Restrict to one language.
    #[arg(long)]
    language: Option<String>,
    /// Decode this utterance file instead of the manifest test sets; needs
    /// --language for the feature seed stream.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Decode a single BLF1 feature file and print the hypothesis.
    #[arg(long)]
    blf: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long = "max-len", default_value_t = 64)]
    max_len: usize,
    /// Disable the UTF-8 well-formedness constraint (byte models).
    #[arg(long = "no-constrain")]
    no_constrain: bool,
    /// Length-normalization exponent (0 = off).
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference utterances, one per line.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypotheses: plain lines, or an n-best file with --nbest.
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    nbest: bool,
    #[arg(long, default_value = "ter")]
    metric: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Cell spec SYSTEM:LANGUAGE=scorefile; repeatable.
    #[arg(long = "cell", required = true)]
    cells: Vec<String>,
    /// Add relative-change rows against this system.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct SampleMixArgs {
    /// Comma-separated LANG=RATIO pairs, e.g. EN=3,JA=3,ES=4.
    #[arg(long)]
    ratios: String,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure category mapped to the exit code.
pub(crate) enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        CliError::Numeric(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<A2bError> for CliError {
    fn from(e: A2bError) -> Self {
        match e {
            A2bError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            A2bError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<B2aError> for CliError {
    fn from(e: B2aError) -> Self {
        match e {
            B2aError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            B2aError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<score::ScoreError> for CliError {
    fn from(e: score::ScoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(args) => gen_corpus(args),
        Command::Tokenize(args) => tokenize(args),
        Command::TrainAsr(args) => train_asr(args),
        Command::TrainTts(args) => train_tts(args),
        Command::Decode(args) => decode_cmd(args),
        Command::Score(args) => score_cmd(args),
        Command::Report(args) => report_cmd(args),
        Command::GradCheck(args) => gradcheck::run(args.seed, args.tol),
        Command::SampleMix(args) => sample_mix(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// Echo of the fully resolved run configuration, written next to every
/// command's artifacts so a run can be reproduced from the file alone.
fn write_run_meta(dir: &Path, command: &str, entries: &[(&str, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::from("#RUNMETA1\n");
    let _ = writeln!(out, "command {command}");
    let _ = writeln!(out, "version {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in entries {
        let _ = writeln!(out, "{k} {v}");
    }
    std::fs::write(dir.join("run.meta"), out)?;
    Ok(())
}

fn parse_pair(s: &str, what: &str) -> Result<(usize, usize), CliError> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("{what} needs MIN,MAX")))?;
    let lo = a
        .parse()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    let hi = b
        .parse()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))?;
    if lo > hi || lo == 0 {
        return Err(CliError::Usage(format!("{what}: need 1 <= MIN <= MAX")));
    }
    Ok((lo, hi))
}

fn parse_ratios(s: &str) -> Result<BTreeMap<String, f64>, CliError> {
    let mut ratios = BTreeMap::new();
    for part in s.split(',') {
        let (lang, ratio) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("ratio {part} needs LANG=VALUE")))?;
        let value: f64 = ratio
            .parse()
            .map_err(|e| CliError::Usage(format!("ratio {part}: {e}")))?;
        if value < 0.0 || !value.is_finite() {
            return Err(CliError::Usage(format!(
                "ratio {part} must be finite and nonnegative"
            )));
        }
        ratios.insert(lang.to_string(), value);
    }
    if ratios.is_empty() {
        return Err(CliError::Usage("no ratios given".into()));
    }
    Ok(ratios)
}

fn gen_corpus(args: GenCorpusArgs) -> Result<(), CliError> {
    let (words_min, words_max) = parse_pair(&args.words, "--words")?;
    let (len_min, len_max) = parse_pair(&args.word_len, "--word-len")?;
    let profile = SynthProfile {
        dim: args.dim,
        kmin: args.kmin,
        kmax: args.kmax,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    profile.validate()?;
    std::fs::create_dir_all(&args.out)?;

    let mut languages = Vec::new();
    let mut symbol_sets: BTreeMap<String, Vec<char>> = BTreeMap::new();
    for (li, spec) in args.langs.iter().enumerate() {
        let (name, script_spec) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--lang {spec} needs NAME=SCRIPT")))?;
        let (script_name, nsym) = match script_spec.split_once(':') {
            Some((s, n)) => (
                s,
                Some(n.parse::<usize>().map_err(|e| {
                    CliError::Usage(format!("--lang {spec}: symbol count: {e}"))
                })?),
            ),
            None => (script_spec, None),
        };
        let script = Script::parse(script_name)
            .ok_or_else(|| CliError::Usage(format!("unknown script {script_name}")))?;
        let mut symbols = script.symbols();
        if let Some(n) = nsym {
            if n == 0 || n > symbols.len() {
                return Err(CliError::Usage(format!(
                    "--lang {spec}: symbol count must be in 1..={}",
                    symbols.len()
                )));
            }
            symbols.truncate(n);
        }
        let spec = TextGenSpec {
            symbols: symbols.clone(),
            words_min,
            words_max,
            word_len_min: len_min,
            word_len_max: len_max,
        };
        let train_seed = bytespeech::rng::mix(&[args.seed, li as u64, 0]);
        let test_seed = bytespeech::rng::mix(&[args.seed, li as u64, 1]);
        let train_texts = generate_texts(&spec, args.train, train_seed);
        let test_texts: Vec<String> = generate_texts(&spec, args.test * 2, test_seed)
            .into_iter()
            .filter(|t| !train_texts.contains(t))
            .take(args.test)
            .collect();

        let train_path = args.out.join(format!("{name}_train.txt"));
        let test_path = args.out.join(format!("{name}_test.txt"));
        std::fs::write(&train_path, train_texts.join("\n") + "\n")?;
        std::fs::write(&test_path, test_texts.join("\n") + "\n")?;

        if args.write_features {
            for (split, texts) in [("train", &train_texts), ("test", &test_texts)] {
                let dir = args.out.join(format!("{name}_{split}_features"));
                std::fs::create_dir_all(&dir)?;
                for (i, text) in texts.iter().enumerate() {
                    let seed = utterance_seed(profile.seed, name, i);
                    let feats = synth_features(text, &profile, seed)?;
                    bytespeech::corpus::write_feature_file(
                        &dir.join(format!("{i:05}.blf")),
                        &feats,
                    )?;
                }
            }
        }

        symbol_sets.insert(name.to_string(), symbols);
        languages.push(bytespeech::corpus::LanguageEntry {
            name: name.to_string(),
            train_path: PathBuf::from(format!("{name}_train.txt")),
            test_path: Some(PathBuf::from(format!("{name}_test.txt"))),
        });
    }

    if let Some(cs) = &args.codeswitch {
        let (host, rest) = cs
            .split_once('=')
            .ok_or_else(|| CliError::Usage("--codeswitch needs HOST=EMBEDDED:COUNT".into()))?;
        let (embedded, count) = rest
            .split_once(':')
            .ok_or_else(|| CliError::Usage("--codeswitch needs HOST=EMBEDDED:COUNT".into()))?;
        let count: usize = count
            .parse()
            .map_err(|e| CliError::Usage(format!("--codeswitch count: {e}")))?;
        let host_syms = symbol_sets
            .get(host)
            .ok_or_else(|| CliError::Usage(format!("--codeswitch host {host} is not a --lang")))?;
        let emb_syms = symbol_sets.get(embedded).ok_or_else(|| {
            CliError::Usage(format!("--codeswitch embedded {embedded} is not a --lang"))
        })?;
        let texts = generate_code_switch_texts(
            host_syms,
            emb_syms,
            count,
            5,
            7,
            bytespeech::rng::mix(&[args.seed, 0xC5]),
        );
        std::fs::write(args.out.join("codeswitch_test.txt"), texts.join("\n") + "\n")?;
    }

    let mut stages = Vec::new();
    for (i, stage_line) in args.stages.iter().enumerate() {
        // Validate through the manifest parser.
        let probe = format!("#MANIFEST1\nstage {stage_line}\n");
        let parsed = Manifest::parse(&probe, &args.out)
            .map_err(|e| CliError::Usage(format!("--stage {}: {e}", i + 1)))?;
        stages.extend(parsed.schedule.stages);
    }
    if stages.is_empty() {
        // Default: one equal-ratio stage over all generated languages.
        let ratios: BTreeMap<String, f64> = languages
            .iter()
            .map(|l| (l.name.clone(), 1.0))
            .collect();
        stages.push(bytespeech::corpus::Stage {
            ratios,
            steps: 1000,
            init: bytespeech::corpus::StageInit::Random,
        });
    }

    let manifest = Manifest {
        profile,
        languages,
        schedule: bytespeech::corpus::MixSchedule { stages },
    };
    manifest.save(&args.out.join("manifest.txt"))?;

    write_run_meta(
        &args.out,
        "gen-corpus",
        &[
            ("seed", args.seed.to_string()),
            ("langs", args.langs.join(" ")),
            ("train", args.train.to_string()),
            ("test", args.test.to_string()),
            ("words", args.words.clone()),
            ("word_len", args.word_len.clone()),
            ("dim", args.dim.to_string()),
            ("kmin", args.kmin.to_string()),
            ("kmax", args.kmax.to_string()),
            ("noise", args.noise.to_string()),
            (
                "codeswitch",
                args.codeswitch.clone().unwrap_or_else(|| "-".into()),
            ),
            ("write_features", args.write_features.to_string()),
        ],
    )?;
    println!("wrote corpus to {}", args.out.display());
    Ok(())
}

fn tokenize(args: TokenizeArgs) -> Result<(), CliError> {
    let seq = encode_bytes(&args.text, args.specials);
    let line = seq
        .as_slice()
        .iter()
        .map(|b| format!("{b:02X}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!("{line}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("tokens.txt"), format!("{line}\n"))?;
        write_run_meta(
            dir,
            "tokenize",
            &[
                ("text", args.text.clone()),
                ("specials", args.specials.to_string()),
            ],
        )?;
    }
    Ok(())
}

/// Loads train/test corpora with features attached from a manifest.
fn load_corpora(
    manifest: &Manifest,
) -> Result<
    (
        BTreeMap<String, Vec<Utterance>>,
        BTreeMap<String, Vec<Utterance>>,
    ),
    CliError,
> {
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for entry in &manifest.languages {
        let mut utts = Manifest::load_utterances(&entry.train_path, &entry.name)?;
        attach_features(&mut utts, &manifest.profile)?;
        train.insert(entry.name.clone(), utts);
        if let Some(test_path) = &entry.test_path {
            let mut utts = Manifest::load_utterances(test_path, &entry.name)?;
            attach_features(&mut utts, &manifest.profile)?;
            test.insert(entry.name.clone(), utts);
        }
    }
    Ok((train, test))
}

fn model_config(
    args: &ModelArgs,
    unit: OutputUnit,
    feature_dim: usize,
    seed: u64,
) -> ModelConfig {
    ModelConfig {
        encoder_layers: args.enc_layers,
        encoder_width: args.enc_width,
        decoder_layers: args.dec_layers,
        decoder_width: args.dec_width,
        attention_heads: args.heads,
        attention_dim: args.attn_dim,
        embed_dim: args.embed_dim,
        output_unit: unit,
        feature_dim,
        stack_left: args.stack_left,
        stack_stride: args.stack_stride,
        languages: Vec::new(),
        seed,
        optimizer: AdamConfig {
            lr: args.lr,
            clip_norm: args.clip_norm,
            ..AdamConfig::default()
        },
    }
}

fn train_asr(args: TrainAsrArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.schedule.stages.is_empty() {
        return Err(CliError::Usage("manifest has no stages".into()));
    }
    let (train, test) = load_corpora(&manifest)?;

    let unit = match args.unit.as_str() {
        "bytes" => OutputUnit::Bytes,
        "graphemes" => {
            let all: Vec<&str> = train
                .values()
                .flatten()
                .map(|u| u.text.as_str())
                .collect();
            let vocab = GraphemeVocab::build(&all, args.min_count)
                .map_err(|e| CliError::Data(e.to_string()))?;
            OutputUnit::Graphemes(vocab)
        }
        other => return Err(CliError::Usage(format!("unknown unit {other}"))),
    };

    std::fs::create_dir_all(&args.out)?;
    if let OutputUnit::Graphemes(vocab) = &unit {
        if !vocab.is_byte_valued() {
            vocab
                .save(&args.out.join("vocab.tsv"))
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
    }

    let config = model_config(&args.model, unit, manifest.profile.dim, args.seed);
    let options = TrainOptions {
        batch_size: args.batch,
        eval_max_len: args.eval_max_len,
        metric: EvalMetric::Ter,
        threads: args.threads,
        checkpoint_dir: Some(args.out.clone()),
        eval_each_stage: true,
        lr_decay: Some((0.6, 0.25)),
        augment: (args.variants > 0).then_some(bytespeech::a2b::Augment {
            profile: manifest.profile,
            variants: args.variants,
        }),
    };
    let mut trainer = A2bStageTrainer::new(
        config,
        args.lang_vector,
        &train,
        &test,
        options,
        args.seed,
    );
    let metrics = run_schedule(&manifest.schedule, &mut trainer).map_err(|e| match e {
        ScheduleError::Stage { source, .. } => CliError::from(source),
        other => CliError::Data(other.to_string()),
    })?;

    let model = trainer
        .into_model()
        .expect("at least one stage ran");
    save_checkpoint(&model, &args.out.join("model.ckpt"))?;

    let mut lines = String::from("stage\tsteps\tfinal_loss\tlanguage\trate\n");
    for m in &metrics {
        if m.per_language.is_empty() {
            let _ = writeln!(lines, "{}\t{}\t{:.6}\t-\t-", m.stage_index, m.steps_run, m.final_loss);
        }
        for (lang, rate) in &m.per_language {
            let _ = writeln!(
                lines,
                "{}\t{}\t{:.6}\t{}\t{:.4}",
                m.stage_index, m.steps_run, m.final_loss, lang, rate
            );
        }
    }
    std::fs::write(args.out.join("metrics.tsv"), &lines)?;
    print!("{lines}");

    write_run_meta(
        &args.out,
        "train-asr",
        &[
            ("manifest", args.manifest.display().to_string()),
            ("unit", args.unit.clone()),
            ("min_count", args.min_count.to_string()),
            ("lang_vector", args.lang_vector.to_string()),
            ("batch", args.batch.to_string()),
            ("variants", args.variants.to_string()),
            ("threads", args.threads.to_string()),
            ("seed", args.seed.to_string()),
            ("eval_max_len", args.eval_max_len.to_string()),
            ("enc_layers", args.model.enc_layers.to_string()),
            ("enc_width", args.model.enc_width.to_string()),
            ("dec_layers", args.model.dec_layers.to_string()),
            ("dec_width", args.model.dec_width.to_string()),
            ("heads", args.model.heads.to_string()),
            ("attn_dim", args.model.attn_dim.to_string()),
            ("embed_dim", args.model.embed_dim.to_string()),
            ("stack_left", args.model.stack_left.to_string()),
            ("stack_stride", args.model.stack_stride.to_string()),
            ("lr", args.model.lr.to_string()),
            ("clip_norm", args.model.clip_norm.to_string()),
        ],
    )?;
    Ok(())
}

fn train_tts(args: TrainTtsArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    let (train, _) = load_corpora(&manifest)?;
    if train.is_empty() {
        return Err(CliError::Data("manifest lists no languages".into()));
    }
    let speakers: Vec<String> = train.keys().cloned().collect();
    let mut config = B2aConfig::desk(manifest.profile.dim, speakers.len(), args.seed);
    config.optimizer.lr = args.lr;
    config.optimizer.clip_norm = 1.0;
    let mut model = build_b2a(config)?;

    let ratios: BTreeMap<String, f64> = speakers.iter().map(|s| (s.clone(), 1.0)).collect();
    let sampler = MixSampler::new(&train, &ratios, args.seed)?;
    std::fs::create_dir_all(&args.out)?;

    let mut final_loss = f64::NAN;
    for step in 0..args.steps {
        if step == args.steps * 6 / 10 {
            let lr = args.lr * 0.25;
            model.set_learning_rate(lr);
        }
        let batch: Vec<B2aExample> = (0..args.batch)
            .map(|j| {
                let (lang_idx, utt_idx) = sampler.draw((step * args.batch + j) as u64);
                let language = &speakers[lang_idx];
                let utt = &train[language][utt_idx];
                B2aExample {
                    bytes: encode_bytes(&utt.text, false).as_slice().to_vec(),
                    frames: utt.features.clone().expect("features attached"),
                    speaker: lang_idx,
                }
            })
            .collect();
        final_loss = model.train_step(&batch)?;
    }
    save_b2a_checkpoint(&model, &args.out.join("b2a.ckpt"))?;
    std::fs::write(
        args.out.join("metrics.tsv"),
        format!("steps\tfinal_loss\n{}\t{final_loss:.6}\n", args.steps),
    )?;
    println!("final loss {final_loss:.6}");

    // One synthesized sample per language exercises the output interface.
    for (idx, language) in speakers.iter().enumerate() {
        if let Some(utt) = train[language].first() {
            let bytes = encode_bytes(&utt.text, false);
            let result = b2a::synthesize(&model, bytes.as_slice(), idx, 200)?;
            b2a::write_synthesis(&args.out.join(format!("sample_{language}")), &result)?;
        }
    }

    write_run_meta(
        &args.out,
        "train-tts",
        &[
            ("manifest", args.manifest.display().to_string()),
            ("steps", args.steps.to_string()),
            ("batch", args.batch.to_string()),
            ("lr", args.lr.to_string()),
            ("seed", args.seed.to_string()),
            ("speakers", speakers.join(",")),
        ],
    )?;
    Ok(())
}

fn decode_cmd(args: DecodeArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.ckpt)?;
    let manifest = Manifest::load(&args.manifest)?;
    let beam = BeamConfig {
        beam_size: args.beam,
        max_len: args.max_len,
        constrain_utf8: matches!(model.config.output_unit, OutputUnit::Bytes)
            && !args.no_constrain,
        length_norm_alpha: args.alpha,
    };

    if let Some(blf) = &args.blf {
        let features = read_feature_file(blf)?;
        let lang_idx = args
            .language
            .as_deref()
            .and_then(|l| model.config.language_index(l));
        let stepper = model.stepper(&features, lang_idx);
        let hyps = beam_search(&stepper, &beam);
        let ids = hyps[0].payload_ids(model.config.output_unit.eos_id());
        println!("{}", model.config.output_unit.decode_hypothesis(&ids));
        return Ok(());
    }

    // Assemble the evaluation corpora.
    let mut test: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    match &args.input {
        Some(path) => {
            let language = args.language.clone().ok_or_else(|| {
                CliError::Usage("--input needs --language for the feature stream".into())
            })?;
            let mut utts = Manifest::load_utterances(path, &language)?;
            attach_features(&mut utts, &manifest.profile)?;
            test.insert(language, utts);
        }
        None => {
            let (_, all_test) = load_corpora(&manifest)?;
            for (lang, utts) in all_test {
                if args.language.as_deref().is_none_or(|l| l == lang) {
                    test.insert(lang, utts);
                }
            }
        }
    }
    if test.is_empty() {
        return Err(CliError::Data("no test utterances to decode".into()));
    }

    let mut entries = Vec::new();
    for (language, utts) in &test {
        let lang_idx = model.config.language_index(language);
        for (i, utt) in utts.iter().enumerate() {
            let features = utt.features.as_ref().expect("features attached");
            let stepper = model.stepper(features, lang_idx);
            let hyps = beam_search(&stepper, &beam);
            let rendered: Vec<(f64, String)> = hyps
                .iter()
                .map(|h| {
                    let ids = h.payload_ids(model.config.output_unit.eos_id());
                    (
                        h.score(args.alpha),
                        model.config.output_unit.decode_hypothesis(&ids),
                    )
                })
                .collect();
            entries.push((format!("{language}-{i:04}"), rendered));
        }
    }

    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            write_nbest(path, &entries).map_err(|e| CliError::Data(e.to_string()))?;
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    write_run_meta(
                        dir,
                        "decode",
                        &[
                            ("ckpt", args.ckpt.display().to_string()),
                            ("manifest", args.manifest.display().to_string()),
                            (
                                "language",
                                args.language.clone().unwrap_or_else(|| "-".into()),
                            ),
                            (
                                "input",
                                args.input
                                    .as_ref()
                                    .map(|p| p.display().to_string())
                                    .unwrap_or_else(|| "-".into()),
                            ),
                            ("beam", args.beam.to_string()),
                            ("max_len", args.max_len.to_string()),
                            ("constrain", (!args.no_constrain).to_string()),
                            ("alpha", args.alpha.to_string()),
                        ],
                    )?;
                }
            }
        }
        None => {
            for (utt_id, hyps) in &entries {
                for (rank, (score, text)) in hyps.iter().enumerate() {
                    println!("{utt_id}\t{rank}\t{score:.6}\t{text}");
                }
            }
        }
    }
    Ok(())
}

fn score_cmd(args: ScoreArgs) -> Result<(), CliError> {
    let references: Vec<String> = std::fs::read_to_string(&args.reference)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    let hyp_text = std::fs::read_to_string(&args.hyp)?;
    let hypotheses: Vec<String> = if args.nbest {
        // Rank-0 hypothesis per utterance, in file order.
        hyp_text
            .lines()
            .filter_map(|l| {
                let fields: Vec<&str> = l.split('\t').collect();
                (fields.len() == 4 && fields[1] == "0").then(|| fields[3].to_string())
            })
            .collect()
    } else {
        hyp_text.lines().map(|l| l.to_string()).collect()
    };
    if references.len() != hypotheses.len() {
        return Err(CliError::Data(format!(
            "reference has {} utterances, hypotheses have {}",
            references.len(),
            hypotheses.len()
        )));
    }

    let mut rows = Vec::new();
    let mut total = AlignmentCounts::default();
    for (i, (r, h)) in references.iter().zip(&hypotheses).enumerate() {
        let counts = match args.metric.as_str() {
            "wer" => score::wer_counts(r, h)?,
            "ter" => score::ter_counts(r, h)?,
            other => return Err(CliError::Usage(format!("unknown metric {other}"))),
        };
        total.merge(&counts);
        rows.push(ScoreRow {
            utt_id: format!("utt-{i:04}"),
            counts,
        });
    }
    println!(
        "{} {:.4} (S={} D={} I={} N={})",
        args.metric.to_uppercase(),
        total.rate(),
        total.substitutions,
        total.deletions,
        total.insertions,
        total.ref_len
    );
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        write_score_file(path, &rows)?;
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let mut results = score::ResultTable::new();
    for cell in &args.cells {
        let (key, file) = cell
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--cell {cell} needs SYSTEM:LANG=FILE")))?;
        let (system, language) = key
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("--cell {cell} needs SYSTEM:LANG=FILE")))?;
        let rows = score::read_score_file(Path::new(file))?;
        let mut total = AlignmentCounts::default();
        for row in &rows {
            total.merge(&row.counts);
        }
        results.insert((system.to_string(), language.to_string()), total);
    }
    let (pretty, tsv) = render_report(&results, args.baseline.as_deref());
    print!("{pretty}");
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, &pretty)?;
        std::fs::write(path.with_extension("tsv"), &tsv)?;
    }
    Ok(())
}

fn sample_mix(args: SampleMixArgs) -> Result<(), CliError> {
    let ratios = parse_ratios(&args.ratios)?;
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    // One placeholder utterance per language: only the language draw
    // matters here.
    let corpora: BTreeMap<String, Vec<Utterance>> = ratios
        .keys()
        .map(|lang| (lang.clone(), vec![Utterance::new("x", lang.clone())]))
        .collect();
    let sampler = MixSampler::new(&corpora, &ratios, args.seed)?;
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for pos in 0..args.n {
        let (lang, _) = sampler.draw(pos);
        *counts.entry(sampler.languages()[lang].as_str()).or_insert(0) += 1;
    }
    let mut lines = String::new();
    for (lang, count) in &counts {
        let _ = writeln!(lines, "{lang} {:.6}", *count as f64 / args.n as f64);
    }
    print!("{lines}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("proportions.txt"), &lines)?;
        write_run_meta(
            dir,
            "sample-mix",
            &[
                ("ratios", args.ratios.clone()),
                ("n", args.n.to_string()),
                ("seed", args.seed.to_string()),
            ],
        )?;
    }
    Ok(())
}

