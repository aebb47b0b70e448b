//! Byte-level tokenizer: ids 0..=255 are raw byte values, followed by
//! three specials. Detokenization drops specials, so it is the exact
//! inverse of tokenization on raw bytes.

use crate::error::{CoreError, Result};

pub const TOKEN_BOS: u32 = 256;
pub const TOKEN_EOS: u32 = 257;
pub const TOKEN_PAD: u32 = 258;

/// Smallest vocabulary that can host all byte values plus the specials.
pub const MIN_VOCAB: usize = 259;

pub fn tokenize(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

/// Inverse of [`tokenize`]; special tokens are skipped, ids beyond the
/// vocabulary are rejected.
pub fn detokenize(ids: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        match id {
            0..=255 => out.push(id as u8),
            TOKEN_BOS | TOKEN_EOS | TOKEN_PAD => {}
            other => {
                return Err(CoreError::Tokenizer(format!(
                    "id {other} outside byte vocabulary"
                )))
            }
        }
    }
    Ok(out)
}

/// Printable rendering of a token id for reports: ASCII graphic characters
/// appear verbatim, everything else as hex, specials by name.
pub fn describe(id: u32) -> String {
    match id {
        TOKEN_BOS => "<bos>".to_string(),
        TOKEN_EOS => "<eos>".to_string(),
        TOKEN_PAD => "<pad>".to_string(),
        0..=255 => {
            let b = id as u8;
            if b.is_ascii_graphic() && b != b',' && b != b'"' {
                (b as char).to_string()
            } else {
                format!("0x{b:02X}")
            }
        }
        other => format!("<{other}>"),
    }
}
