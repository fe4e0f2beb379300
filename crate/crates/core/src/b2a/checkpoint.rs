//! Synthesizer checkpoints: identical layout to the recognizer's, with
//! magic `B2A1`.

use super::{build_b2a, B2aConfig, B2aError, B2aModel};
use crate::io::{expect_magic, read_f64, read_u16, read_u32, read_u64, write_f64, write_u16, write_u32, write_u64};
use crate::tensor::{read_adam, read_param_table, write_adam, write_param_store, AdamConfig};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"B2A1";
const VERSION: u16 = 1;

fn write_config<W: Write>(w: &mut W, c: &B2aConfig) -> Result<(), B2aError> {
    for v in [
        c.embed_dim,
        c.conv_layers,
        c.conv_filters,
        c.conv_width,
        c.encoder_width,
        c.decoder_width,
        c.attention_dim,
        c.location_filters,
        c.location_width,
        c.feature_dim,
        c.speakers,
        c.speaker_dim,
    ] {
        write_u32(w, v as u32)?;
    }
    write_f64(w, c.stop_threshold)?;
    write_u64(w, c.seed)?;
    write_f64(w, c.optimizer.lr)?;
    write_f64(w, c.optimizer.beta1)?;
    write_f64(w, c.optimizer.beta2)?;
    write_f64(w, c.optimizer.eps)?;
    write_f64(w, c.optimizer.clip_norm)?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<B2aConfig, B2aError> {
    let mut dims = [0usize; 12];
    for d in dims.iter_mut() {
        *d = read_u32(r)? as usize;
    }
    let stop_threshold = read_f64(r)?;
    let seed = read_u64(r)?;
    let optimizer = AdamConfig {
        lr: read_f64(r)?,
        beta1: read_f64(r)?,
        beta2: read_f64(r)?,
        eps: read_f64(r)?,
        clip_norm: read_f64(r)?,
    };
    Ok(B2aConfig {
        embed_dim: dims[0],
        conv_layers: dims[1],
        conv_filters: dims[2],
        conv_width: dims[3],
        encoder_width: dims[4],
        decoder_width: dims[5],
        attention_dim: dims[6],
        location_filters: dims[7],
        location_width: dims[8],
        feature_dim: dims[9],
        speakers: dims[10],
        speaker_dim: dims[11],
        stop_threshold,
        seed,
        optimizer,
    })
}

pub fn save_b2a_checkpoint(model: &B2aModel, path: &Path) -> Result<(), B2aError> {
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

pub fn load_b2a_checkpoint(path: &Path) -> Result<B2aModel, B2aError> {
    if !path.exists() {
        return Err(B2aError::CheckpointMissing(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    if !expect_magic(&mut r, MAGIC)? {
        return Err(B2aError::BadCheckpoint(format!(
            "{}: missing B2A1 magic",
            path.display()
        )));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(B2aError::VersionMismatch { found: version });
    }
    let config = read_config(&mut r)?;
    let steps = read_u64(&mut r)?;
    let params = read_param_table(&mut r)?;
    let adam = read_adam(&mut r)?;

    let mut model = build_b2a(config)?;
    let expected: Vec<String> = model.store().names().map(|s| s.to_string()).collect();
    if expected.len() != params.len() {
        return Err(B2aError::ShapeMismatch(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            expected.len()
        )));
    }
    for name in expected {
        let saved = params
            .get(&name)
            .ok_or_else(|| B2aError::ShapeMismatch(format!("missing parameter {name}")))?;
        let target = model.store_mut().get_mut(&name);
        if target.value.shape() != saved.shape() {
            return Err(B2aError::ShapeMismatch(format!(
                "{name}: saved {:?}, model needs {:?}",
                saved.shape(),
                target.value.shape()
            )));
        }
        target.value = saved.clone();
    }
    model.restore_optimizer(adam, steps);
    Ok(model)
}
