//! Binary feature files: magic `BLF1`, little-endian u32 frame count and
//! dimension, then T x D little-endian f32 values row-major.

use super::{CorpusError, FeatureMatrix};
use crate::io::{expect_magic, read_f32, read_u32, write_f32, write_u32};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BLF1";

pub fn write_feature_file(path: &Path, features: &FeatureMatrix) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, features.frames() as u32)?;
    write_u32(&mut w, features.dim() as u32)?;
    for &v in features.data() {
        write_f32(&mut w, v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix, CorpusError> {
    let mut r = BufReader::new(File::open(path)?);
    if !expect_magic(&mut r, MAGIC)? {
        return Err(CorpusError::FeatureFile(format!(
            "{}: missing BLF1 magic",
            path.display()
        )));
    }
    let frames = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames * dim {
        data.push(read_f32(&mut r)? as f64);
    }
    Ok(FeatureMatrix::new(frames, dim, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_features, SynthProfile};

    #[test]
    fn feature_file_roundtrip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.blf");
        let feats = synth_features("オン", &SynthProfile::default(), 3).unwrap();
        write_feature_file(&path, &feats).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.frames(), feats.frames());
        assert_eq!(back.dim(), feats.dim());
        for (a, b) in back.data().iter().zip(feats.data()) {
            assert!((a - b).abs() < 1e-6, "f32 storage precision");
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.blf");
        let feats = FeatureMatrix::new(2, 3, vec![0.0; 6]);
        write_feature_file(&path, &feats).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"BLF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 12 + 6 * 4);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.blf");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(CorpusError::FeatureFile(_))
        ));
    }
}
