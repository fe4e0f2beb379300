//! Recognizer checkpoints: magic `A2B1`, version, config echo, named
//! parameter table (little-endian 64-bit floats), optimizer state, and the
//! training step counter. Save then load round-trips bit-exactly.

use super::{build_a2b, A2bError, A2bModel, ModelConfig, OutputUnit};
use crate::bytetext::GraphemeVocab;
use crate::io::{
    expect_magic, read_string, read_u16, read_u32, read_u64, write_string, write_u16, write_u32,
    write_u64,
};
use crate::tensor::{read_adam, read_param_table, write_adam, write_param_store, Tensor};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"A2B1";
const VERSION: u16 = 1;

fn write_config<W: Write>(w: &mut W, config: &ModelConfig) -> Result<(), A2bError> {
    for v in [
        config.encoder_layers,
        config.encoder_width,
        config.decoder_layers,
        config.decoder_width,
        config.attention_heads,
        config.attention_dim,
        config.embed_dim,
        config.feature_dim,
        config.stack_left,
        config.stack_stride,
    ] {
        write_u32(w, v as u32)?;
    }
    write_u64(w, config.seed)?;
    crate::io::write_f64(w, config.optimizer.lr)?;
    crate::io::write_f64(w, config.optimizer.beta1)?;
    crate::io::write_f64(w, config.optimizer.beta2)?;
    crate::io::write_f64(w, config.optimizer.eps)?;
    crate::io::write_f64(w, config.optimizer.clip_norm)?;
    write_u32(w, config.languages.len() as u32)?;
    for lang in &config.languages {
        write_string(w, lang)?;
    }
    match &config.output_unit {
        OutputUnit::Bytes => write_u16(w, 0)?,
        OutputUnit::Graphemes(v) if v.is_byte_valued() => write_u16(w, 2)?,
        OutputUnit::Graphemes(v) => {
            write_u16(w, 1)?;
            let entries: Vec<_> = v.entries().collect();
            write_u32(w, entries.len() as u32)?;
            for (c, _, count) in entries {
                write_u32(w, c as u32)?;
                write_u64(w, count)?;
            }
        }
    }
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig, A2bError> {
    let mut dims = [0usize; 10];
    for d in dims.iter_mut() {
        *d = read_u32(r)? as usize;
    }
    let seed = read_u64(r)?;
    let optimizer = crate::tensor::AdamConfig {
        lr: crate::io::read_f64(r)?,
        beta1: crate::io::read_f64(r)?,
        beta2: crate::io::read_f64(r)?,
        eps: crate::io::read_f64(r)?,
        clip_norm: crate::io::read_f64(r)?,
    };
    let lang_count = read_u32(r)? as usize;
    let mut languages = Vec::with_capacity(lang_count);
    for _ in 0..lang_count {
        languages.push(read_string(r)?);
    }
    let output_unit = match read_u16(r)? {
        0 => OutputUnit::Bytes,
        2 => OutputUnit::Graphemes(GraphemeVocab::byte_valued()),
        1 => {
            let n = read_u32(r)? as usize;
            let mut counts = BTreeMap::new();
            for _ in 0..n {
                let cp = read_u32(r)?;
                let count = read_u64(r)?;
                let c = char::from_u32(cp).ok_or_else(|| {
                    A2bError::BadCheckpoint(format!("codepoint {cp:#X} is not a scalar"))
                })?;
                counts.insert(c, count);
            }
            OutputUnit::Graphemes(GraphemeVocab::from_counts(counts))
        }
        other => {
            return Err(A2bError::BadCheckpoint(format!(
                "unknown output unit tag {other}"
            )))
        }
    };
    Ok(ModelConfig {
        encoder_layers: dims[0],
        encoder_width: dims[1],
        decoder_layers: dims[2],
        decoder_width: dims[3],
        attention_heads: dims[4],
        attention_dim: dims[5],
        embed_dim: dims[6],
        feature_dim: dims[7],
        stack_left: dims[8],
        stack_stride: dims[9],
        output_unit,
        languages,
        seed,
        optimizer,
    })
}

/// Writes the model, optimizer state, and step counter.
pub fn save_checkpoint(model: &A2bModel, path: &Path) -> Result<(), A2bError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u16(&mut w, VERSION)?;
    write_config(&mut w, &model.config)?;
    write_u64(&mut w, model.trained_steps())?;
    write_param_store(&mut w, model.store())?;
    write_adam(&mut w, model.optimizer())?;
    w.flush()?;
    Ok(())
}

fn read_checkpoint_file(
    path: &Path,
) -> Result<(ModelConfig, u64, BTreeMap<String, Tensor>, crate::tensor::Adam), A2bError> {
    if !path.exists() {
        return Err(A2bError::CheckpointMissing(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    if !expect_magic(&mut r, MAGIC)? {
        return Err(A2bError::BadCheckpoint(format!(
            "{}: missing A2B1 magic",
            path.display()
        )));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(A2bError::VersionMismatch { found: version });
    }
    let config = read_config(&mut r)?;
    let steps = read_u64(&mut r)?;
    let params = read_param_table(&mut r)?;
    let adam = read_adam(&mut r)?;
    Ok((config, steps, params, adam))
}

/// Restores a model exactly as saved.
pub fn load_checkpoint(path: &Path) -> Result<A2bModel, A2bError> {
    let (config, steps, params, adam) = read_checkpoint_file(path)?;
    let mut model = build_a2b(config)?;
    install_params(&mut model, params, None)?;
    model.restore_optimizer(adam, steps);
    Ok(model)
}

/// Restores a model while growing its language list: `languages` must
/// extend the saved list, and every language-block weight gains zero rows
/// for the new slots. Byte models never change output shape this way;
/// grapheme models with a different vocabulary are rejected.
pub fn load_checkpoint_with_languages(
    path: &Path,
    languages: &[String],
) -> Result<A2bModel, A2bError> {
    let (saved_config, steps, params, mut adam) = read_checkpoint_file(path)?;
    if languages.len() < saved_config.languages.len()
        || !languages.starts_with(&saved_config.languages)
    {
        return Err(A2bError::ShapeMismatch(format!(
            "new language list {:?} must extend the saved list {:?}",
            languages, saved_config.languages
        )));
    }
    if saved_config.languages.is_empty() && !languages.is_empty() {
        return Err(A2bError::ShapeMismatch(
            "the saved model has no language input to extend".into(),
        ));
    }
    let grown = languages.len() - saved_config.languages.len();
    let mut config = saved_config.clone();
    config.languages = languages.to_vec();
    let mut model = build_a2b(config)?;
    if grown > 0 {
        let lang_names: Vec<String> = model
            .store()
            .names()
            .filter(|n| n.ends_with(".w_lang"))
            .map(|s| s.to_string())
            .collect();
        for name in &lang_names {
            adam.extend_rows(name, languages.len());
        }
        install_params(&mut model, params, Some(languages.len()))?;
    } else {
        install_params(&mut model, params, None)?;
    }
    model.restore_optimizer(adam, steps);
    Ok(model)
}

/// Copies saved tensors into the freshly built model. With
/// `extend_lang_rows` set, `.w_lang` parameters may have fewer saved rows;
/// the extra rows stay zero.
fn install_params(
    model: &mut A2bModel,
    params: BTreeMap<String, Tensor>,
    extend_lang_rows: Option<usize>,
) -> Result<(), A2bError> {
    let expected: Vec<String> = model.store().names().map(|s| s.to_string()).collect();
    if expected.len() != params.len() {
        return Err(A2bError::ShapeMismatch(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            expected.len()
        )));
    }
    for name in expected {
        let saved = params
            .get(&name)
            .ok_or_else(|| A2bError::ShapeMismatch(format!("missing parameter {name}")))?;
        let target = model.store_mut().get_mut(&name);
        let want = target.value.shape();
        let got = saved.shape();
        if want == got {
            target.value = saved.clone();
        } else if extend_lang_rows.is_some()
            && name.ends_with(".w_lang")
            && got.1 == want.1
            && got.0 < want.0
        {
            let mut grown = Tensor::zeros(want.0, want.1);
            grown.data_mut()[..saved.len()].copy_from_slice(saved.data());
            target.value = grown;
        } else {
            return Err(A2bError::ShapeMismatch(format!(
                "{name}: saved {}x{}, model needs {}x{}",
                got.0, got.1, want.0, want.1
            )));
        }
    }
    Ok(())
}
