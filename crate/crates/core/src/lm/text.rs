//! Character-level lyric tokenizer.

use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
const CHARSET: &str = " abcdefghijklmnopqrstuvwxyz0123456789'";

/// Size of the text vocabulary: three marks plus the character set.
pub fn text_vocab_size() -> usize {
    3 + CHARSET.chars().count()
}

/// Lowercase with whitespace runs collapsed to one space and trimmed.
pub fn normalize_lyric(lyric: &str) -> String {
    lyric
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// `[BOS] chars [EOS]`; characters outside the set map to `UNK`.
pub fn tokenize_lyric(lyric: &str) -> Result<Vec<usize>> {
    let norm = normalize_lyric(lyric);
    if norm.is_empty() {
        return Err(Error::invalid("lyric is empty after normalization"));
    }
    let mut out = vec![BOS];
    out.extend(
        norm.chars()
            .map(|c| CHARSET.chars().position(|x| x == c).map_or(UNK, |i| i + 3)),
    );
    out.push(EOS);
    Ok(out)
}
