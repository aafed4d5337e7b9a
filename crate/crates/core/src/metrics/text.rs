//! Character error rate.

use crate::error::{Error, Result};

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize_transcript(s: &str) -> String {
    let kept: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Levenshtein distance over chars with unit costs, two-row DP.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over the normalized reference length.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r: Vec<char> = normalize_transcript(reference).chars().collect();
    if r.is_empty() {
        return Err(Error::invalid("empty reference transcript"));
    }
    let h: Vec<char> = normalize_transcript(hypothesis).chars().collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_pair() {
        assert_eq!(cer("kitten", "sitting").unwrap(), 0.5);
        assert_eq!(cer("Hello,  World!", "hello world").unwrap(), 0.0);
        assert!(cer("?!", "x").is_err());
    }
}
