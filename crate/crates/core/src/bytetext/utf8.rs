//! Incremental UTF-8 well-formedness automaton.
//!
//! Implements the byte-sequence table of RFC 3629: overlong encodings,
//! surrogates, and code points above U+10FFFF are rejected at the earliest
//! possible byte. The automaton drives both lenient decoding and the byte
//! masks used by constrained decoding.

use super::{BytetextError, EOS_BYTE, SOS_BYTE};

/// State of the automaton between bytes.
///
/// `Need` carries the admissible range for the next byte, the number of
/// tail bytes still required (including that next byte), and how many bytes
/// of the current scalar have been consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Utf8State {
    /// At a scalar boundary (start of input or after a complete scalar).
    Boundary,
    Need {
        lo: u8,
        hi: u8,
        more: u8,
        seen: u8,
    },
    /// Absorbing reject state.
    Invalid,
}

impl Utf8State {
    pub fn is_boundary(&self) -> bool {
        matches!(self, Utf8State::Boundary)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, Utf8State::Invalid)
    }

    /// Bytes consumed of the scalar in progress (0 at a boundary).
    pub fn pending(&self) -> u8 {
        match self {
            Utf8State::Need { seen, .. } => *seen,
            _ => 0,
        }
    }
}

/// Advances the automaton by one byte. Deterministic; `Invalid` absorbs.
pub fn utf8_step(state: Utf8State, byte: u8) -> Utf8State {
    match state {
        Utf8State::Invalid => Utf8State::Invalid,
        Utf8State::Boundary => lead(byte),
        Utf8State::Need { lo, hi, more, seen } => {
            if byte < lo || byte > hi {
                Utf8State::Invalid
            } else if more == 1 {
                Utf8State::Boundary
            } else {
                Utf8State::Need {
                    lo: 0x80,
                    hi: 0xBF,
                    more: more - 1,
                    seen: seen + 1,
                }
            }
        }
    }
}

fn lead(byte: u8) -> Utf8State {
    match byte {
        0x00..=0x7F => Utf8State::Boundary,
        0xC2..=0xDF => Utf8State::Need {
            lo: 0x80,
            hi: 0xBF,
            more: 1,
            seen: 1,
        },
        0xE0 => Utf8State::Need {
            lo: 0xA0,
            hi: 0xBF,
            more: 2,
            seen: 1,
        },
        0xE1..=0xEC | 0xEE..=0xEF => Utf8State::Need {
            lo: 0x80,
            hi: 0xBF,
            more: 2,
            seen: 1,
        },
        0xED => Utf8State::Need {
            lo: 0x80,
            hi: 0x9F,
            more: 2,
            seen: 1,
        },
        0xF0 => Utf8State::Need {
            lo: 0x90,
            hi: 0xBF,
            more: 3,
            seen: 1,
        },
        0xF1..=0xF3 => Utf8State::Need {
            lo: 0x80,
            hi: 0xBF,
            more: 3,
            seen: 1,
        },
        0xF4 => Utf8State::Need {
            lo: 0x80,
            hi: 0x8F,
            more: 3,
            seen: 1,
        },
        // 0xC0, 0xC1 (overlong leads) and 0xF5..=0xFF (beyond U+10FFFF,
        // including the SOS/EOS markers).
        _ => Utf8State::Invalid,
    }
}

/// Set of admissible next tokens for constrained decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMask {
    /// `allow[b]` is true when `utf8_step(state, b)` is not `Invalid`.
    pub allow: [bool; 256],
    /// True when EOS may be emitted (scalar boundary and the caller allows
    /// finishing).
    pub eos: bool,
}

impl ByteMask {
    /// Whether token id `id` may be emitted; EOS is its reserved byte value.
    pub fn permits(&self, id: u32) -> bool {
        if id == EOS_BYTE as u32 {
            return self.eos;
        }
        if id == SOS_BYTE as u32 || id > 0xFF {
            return false;
        }
        self.allow[id as usize]
    }
}

/// Computes the admissible-byte mask for a state.
///
/// Errors when called on `Invalid`: no continuation exists there.
pub fn allowed_next(state: Utf8State, allow_eos: bool) -> Result<ByteMask, BytetextError> {
    if state.is_invalid() {
        return Err(BytetextError::InvalidState);
    }
    let mut allow = [false; 256];
    for b in 0..=255u8 {
        allow[b as usize] = !utf8_step(state, b).is_invalid();
    }
    Ok(ByteMask {
        allow,
        eos: allow_eos && state.is_boundary(),
    })
}

/// Runs the automaton over a whole byte string; true iff it never rejects
/// and ends at a scalar boundary.
pub fn accepts(bytes: &[u8]) -> bool {
    let mut state = Utf8State::Boundary;
    for &b in bytes {
        state = utf8_step(state, b);
        if state.is_invalid() {
            return false;
        }
    }
    state.is_boundary()
}

/// Every state reachable from `Boundary`, found by exhaustive expansion.
pub fn reachable_states() -> Vec<Utf8State> {
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = vec![Utf8State::Boundary];
    seen.insert(Utf8State::Boundary);
    while let Some(state) = queue.pop() {
        for b in 0..=255u8 {
            let next = utf8_step(state, b);
            if !next.is_invalid() && seen.insert(next) {
                queue.push(next);
            }
        }
    }
    seen.into_iter().collect()
}
