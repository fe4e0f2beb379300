//! Text as UTF-8 byte sequences, plus grapheme vocabularies for the
//! character-output baseline.
//!
//! Byte targets keep the output layer at exactly 256 classes for any
//! language. The SOS/EOS markers reuse 0xFE/0xFF, two values that never
//! occur in well-formed UTF-8, so no extra softmax rows are needed.

mod utf8;

pub use utf8::{accepts, allowed_next, reachable_states, utf8_step, ByteMask, Utf8State};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Start-of-sequence marker byte (never produced by well-formed UTF-8).
pub const SOS_BYTE: u8 = 0xFE;
/// End-of-sequence marker byte (never produced by well-formed UTF-8).
pub const EOS_BYTE: u8 = 0xFF;

#[derive(Debug, Error)]
pub enum BytetextError {
    #[error("ill-formed UTF-8 at byte position {position}")]
    IllFormed { position: usize },
    #[error("allowed_next called on the Invalid state")]
    InvalidState,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid byte sequence: {0}")]
    InvalidSeq(String),
    #[error("vocabulary file error: {0}")]
    VocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A byte-level token sequence, optionally wrapped in SOS/EOS markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteSeq {
    bytes: Vec<u8>,
}

impl ByteSeq {
    /// Validates the marker invariants: SOS at most once and only first,
    /// EOS at most once and only last.
    pub fn from_raw(bytes: Vec<u8>) -> Result<Self, BytetextError> {
        for (i, &b) in bytes.iter().enumerate() {
            if b == SOS_BYTE && i != 0 {
                return Err(BytetextError::InvalidSeq(format!(
                    "SOS at position {i}, expected only position 0"
                )));
            }
            if b == EOS_BYTE && i + 1 != bytes.len() {
                return Err(BytetextError::InvalidSeq(format!(
                    "EOS at position {i}, expected only the last position"
                )));
            }
        }
        Ok(ByteSeq { bytes })
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// The payload without SOS/EOS markers.
    pub fn strip_specials(&self) -> &[u8] {
        let start = usize::from(self.bytes.first() == Some(&SOS_BYTE));
        let end = self.bytes.len() - usize::from(self.bytes.last() == Some(&EOS_BYTE));
        &self.bytes[start..end.max(start)]
    }

    /// Token ids for the 256-way output space (byte value = class id).
    pub fn to_ids(&self) -> Vec<u32> {
        self.bytes.iter().map(|&b| b as u32).collect()
    }
}

/// UTF-8 encodes `text`, optionally wrapping it in SOS/EOS.
pub fn encode_bytes(text: &str, add_specials: bool) -> ByteSeq {
    let mut bytes = Vec::with_capacity(text.len() + 2);
    if add_specials {
        bytes.push(SOS_BYTE);
    }
    bytes.extend_from_slice(text.as_bytes());
    if add_specials {
        bytes.push(EOS_BYTE);
    }
    ByteSeq { bytes }
}

/// How [`decode_bytes`] treats ill-formed input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodePolicy {
    /// Fail at the first invalid byte.
    Strict,
    /// Replace each maximal ill-formed subsequence with one U+FFFD.
    Replace,
}

enum ScalarErr {
    /// `consumed` bytes form the maximal subpart; the byte at relative
    /// offset `at` caused the rejection and is not consumed.
    BadByte { consumed: usize, at: usize },
    /// Input ended mid-scalar; all remaining bytes form one subpart.
    Truncated { consumed: usize },
}

/// Decodes one scalar from the front of `bytes` (which must be non-empty).
fn next_scalar(bytes: &[u8]) -> Result<(char, usize), ScalarErr> {
    let mut state = Utf8State::Boundary;
    let mut cp: u32 = 0;
    for (k, &b) in bytes.iter().enumerate() {
        let next = utf8_step(state, b);
        if next.is_invalid() {
            return Err(ScalarErr::BadByte {
                consumed: k.max(1),
                at: k,
            });
        }
        if k == 0 {
            cp = match b {
                0x00..=0x7F => b as u32,
                0xC2..=0xDF => (b & 0x1F) as u32,
                0xE0..=0xEF => (b & 0x0F) as u32,
                _ => (b & 0x07) as u32,
            };
        } else {
            cp = (cp << 6) | (b & 0x3F) as u32;
        }
        state = next;
        if state.is_boundary() {
            let ch = char::from_u32(cp)
                .expect("the automaton only accepts valid Unicode scalars");
            return Ok((ch, k + 1));
        }
    }
    Err(ScalarErr::Truncated {
        consumed: bytes.len(),
    })
}

/// Decodes raw bytes (no SOS/EOS; callers strip markers first).
///
/// Strict mode errors at the first invalid byte. Replace mode substitutes
/// one U+FFFD per maximal ill-formed subsequence, matching
/// `String::from_utf8_lossy`.
pub fn decode_bytes(bytes: &[u8], policy: DecodePolicy) -> Result<String, BytetextError> {
    let mut out = String::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match next_scalar(&bytes[i..]) {
            Ok((ch, len)) => {
                out.push(ch);
                i += len;
            }
            Err(err) => {
                let (consumed, position) = match err {
                    ScalarErr::BadByte { consumed, at } => (consumed, i + at),
                    ScalarErr::Truncated { consumed } => (consumed, bytes.len()),
                };
                match policy {
                    DecodePolicy::Strict => {
                        return Err(BytetextError::IllFormed { position });
                    }
                    DecodePolicy::Replace => {
                        out.push('\u{FFFD}');
                        i += consumed;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VocabKind {
    /// UNK=0, SOS=1, EOS=2, symbols dense from 3 in codepoint order.
    Dense,
    /// Symbol id equals the codepoint (single-byte scripts only); specials
    /// parked at 0xFD/0xFE/0xFF so sequences match byte targets exactly.
    ByteValued,
}

/// Grapheme (codepoint) vocabulary for the character-output baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphemeVocab {
    symbol_to_id: BTreeMap<char, u32>,
    id_to_symbol: BTreeMap<u32, char>,
    counts: BTreeMap<char, u64>,
    kind: VocabKind,
    unk_id: u32,
    sos_id: u32,
    eos_id: u32,
    output_dim: usize,
}

/// A grapheme-id token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphemeSeq {
    pub ids: Vec<u32>,
}

impl GraphemeVocab {
    /// Builds a vocabulary from training text: every codepoint occurring at
    /// least `min_count` times, ids assigned in codepoint order.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: u64) -> Result<Self, BytetextError> {
        if corpus.is_empty() {
            return Err(BytetextError::EmptyCorpus);
        }
        let mut counts: BTreeMap<char, u64> = BTreeMap::new();
        for utt in corpus {
            for c in utt.as_ref().chars() {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts.retain(|_, &mut n| n >= min_count);
        let mut symbol_to_id = BTreeMap::new();
        let mut id_to_symbol = BTreeMap::new();
        for (i, &c) in counts.keys().enumerate() {
            let id = 3 + i as u32;
            symbol_to_id.insert(c, id);
            id_to_symbol.insert(id, c);
        }
        let output_dim = 3 + symbol_to_id.len();
        Ok(GraphemeVocab {
            symbol_to_id,
            id_to_symbol,
            counts,
            kind: VocabKind::Dense,
            unk_id: 0,
            sos_id: 1,
            eos_id: 2,
            output_dim,
        })
    }

    /// Vocabulary over all single-byte codepoints with id = codepoint, so a
    /// grapheme sequence over ASCII text equals the byte sequence
    /// element for element (including the SOS/EOS markers).
    pub fn byte_valued() -> Self {
        let mut symbol_to_id = BTreeMap::new();
        let mut id_to_symbol = BTreeMap::new();
        for cp in 0u32..0x80 {
            let c = char::from_u32(cp).expect("ASCII scalar");
            symbol_to_id.insert(c, cp);
            id_to_symbol.insert(cp, c);
        }
        GraphemeVocab {
            symbol_to_id,
            id_to_symbol,
            counts: BTreeMap::new(),
            kind: VocabKind::ByteValued,
            unk_id: 0xFD,
            sos_id: SOS_BYTE as u32,
            eos_id: EOS_BYTE as u32,
            output_dim: 256,
        }
    }

    /// Rebuilds a dense vocabulary from (symbol, count) pairs; ids are
    /// recomputed in codepoint order.
    pub fn from_counts(counts: BTreeMap<char, u64>) -> Self {
        let mut symbol_to_id = BTreeMap::new();
        let mut id_to_symbol = BTreeMap::new();
        for (i, &c) in counts.keys().enumerate() {
            let id = 3 + i as u32;
            symbol_to_id.insert(c, id);
            id_to_symbol.insert(id, c);
        }
        let output_dim = 3 + symbol_to_id.len();
        GraphemeVocab {
            symbol_to_id,
            id_to_symbol,
            counts,
            kind: VocabKind::Dense,
            unk_id: 0,
            sos_id: 1,
            eos_id: 2,
            output_dim,
        }
    }

    pub fn is_byte_valued(&self) -> bool {
        self.kind == VocabKind::ByteValued
    }

    /// (symbol, id, count) triples in codepoint order.
    pub fn entries(&self) -> impl Iterator<Item = (char, u32, u64)> + '_ {
        self.symbol_to_id
            .iter()
            .map(|(&c, &id)| (c, id, self.count_of(c)))
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn sos_id(&self) -> u32 {
        self.sos_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    /// Number of softmax classes: symbols plus the reserved specials.
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn symbol_count(&self) -> usize {
        self.symbol_to_id.len()
    }

    pub fn count_of(&self, c: char) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn id_of(&self, c: char) -> u32 {
        self.symbol_to_id.get(&c).copied().unwrap_or(self.unk_id)
    }

    pub fn contains(&self, c: char) -> bool {
        self.symbol_to_id.contains_key(&c)
    }

    pub fn encode(&self, text: &str, add_specials: bool) -> GraphemeSeq {
        let mut ids = Vec::with_capacity(text.chars().count() + 2);
        if add_specials {
            ids.push(self.sos_id);
        }
        ids.extend(text.chars().map(|c| self.id_of(c)));
        if add_specials {
            ids.push(self.eos_id);
        }
        GraphemeSeq { ids }
    }

    /// Renders ids back to text; UNK becomes U+FFFD, SOS/EOS are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.sos_id || id == self.eos_id {
                continue;
            }
            match self.id_to_symbol.get(&id) {
                Some(&c) => out.push(c),
                None => out.push('\u{FFFD}'),
            }
        }
        out
    }

    /// Writes the `#GVOC1` vocabulary file: one `hex-codepoint<TAB>id<TAB>count`
    /// line per symbol. Only dense vocabularies are persisted.
    pub fn save(&self, path: &Path) -> Result<(), BytetextError> {
        assert_eq!(self.kind, VocabKind::Dense, "only dense vocabs are saved");
        let mut out = String::from("#GVOC1\n");
        for (&c, &id) in &self.symbol_to_id {
            let count = self.count_of(c);
            writeln!(out, "{:X}\t{}\t{}", c as u32, id, count).expect("write to string");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BytetextError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("#GVOC1") {
            return Err(BytetextError::VocabFile("missing #GVOC1 header".into()));
        }
        let mut symbol_to_id = BTreeMap::new();
        let mut id_to_symbol = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(hex), Some(id), Some(count)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(BytetextError::VocabFile(format!(
                    "line {}: expected 3 tab-separated fields",
                    lineno + 2
                )));
            };
            let cp = u32::from_str_radix(hex, 16)
                .map_err(|e| BytetextError::VocabFile(format!("line {}: {e}", lineno + 2)))?;
            let c = char::from_u32(cp).ok_or_else(|| {
                BytetextError::VocabFile(format!("line {}: {cp:#X} is not a scalar", lineno + 2))
            })?;
            let id: u32 = id
                .parse()
                .map_err(|e| BytetextError::VocabFile(format!("line {}: {e}", lineno + 2)))?;
            let count: u64 = count
                .parse()
                .map_err(|e| BytetextError::VocabFile(format!("line {}: {e}", lineno + 2)))?;
            symbol_to_id.insert(c, id);
            id_to_symbol.insert(id, c);
            counts.insert(c, count);
        }
        // Ids must be dense from 3 in codepoint order.
        for (i, (_, &id)) in symbol_to_id.iter().enumerate() {
            if id != 3 + i as u32 {
                return Err(BytetextError::VocabFile(format!(
                    "ids are not dense and codepoint-ordered (saw {id} at rank {i})"
                )));
            }
        }
        let output_dim = 3 + symbol_to_id.len();
        Ok(GraphemeVocab {
            symbol_to_id,
            id_to_symbol,
            counts,
            kind: VocabKind::Dense,
            unk_id: 0,
            sos_id: 1,
            eos_id: 2,
            output_dim,
        })
    }
}

/// Fraction of codepoint tokens in `corpus` that fall outside `vocab`.
///
/// The byte representation of the same corpus has no out-of-vocabulary
/// tokens by construction, whatever the corpus.
pub fn oov_rate<S: AsRef<str>>(vocab: &GraphemeVocab, corpus: &[S]) -> Result<f64, BytetextError> {
    if corpus.is_empty() {
        return Err(BytetextError::EmptyCorpus);
    }
    let mut total = 0u64;
    let mut oov = 0u64;
    for utt in corpus {
        for c in utt.as_ref().chars() {
            total += 1;
            if !vocab.contains(c) {
                oov += 1;
            }
        }
    }
    if total == 0 {
        return Err(BytetextError::EmptyCorpus);
    }
    Ok(oov as f64 / total as f64)
}
