//! Segmentation, loudness normalization and song-level splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fixture::LyricLine;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentFlag {
    UnderLength,
    OverLength,
}

/// Consecutive lines `[first, last)` spanning `[start, end)` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub first: usize,
    pub last: usize,
    pub start: f64,
    pub end: f64,
    pub flag: Option<SegmentFlag>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Greedy grouping of whole lines: a segment keeps absorbing lines while it
/// is shorter than `min_s` and the next line still fits under `max_s`.
pub fn segment(lines: &[LyricLine], min_s: f64, max_s: f64) -> Result<Vec<Segment>> {
    if !(min_s > 0.0 && max_s >= min_s) {
        return Err(Error::invalid(format!("bad segment bounds {min_s}..{max_s}")));
    }
    for (i, w) in lines.windows(2).enumerate() {
        if w[1].start < w[0].end || w[0].end < w[0].start {
            return Err(Error::invalid(format!(
                "lyric line {} overlaps or is out of order",
                i + 1
            )));
        }
    }
    let close = |first: usize, last: usize| {
        let (start, end) = (lines[first].start, lines[last - 1].end);
        let d = end - start;
        let flag = if d > max_s {
            Some(SegmentFlag::OverLength)
        } else if d < min_s {
            Some(SegmentFlag::UnderLength)
        } else {
            None
        };
        Segment {
            first,
            last,
            start,
            end,
            flag,
        }
    };
    let mut out = Vec::new();
    let mut first = 0;
    for i in 1..lines.len() {
        let cur = lines[i - 1].end - lines[first].start;
        let extended = lines[i].end - lines[first].start;
        if !(cur < min_s && extended <= max_s) {
            out.push(close(first, i));
            first = i;
        }
    }
    if !lines.is_empty() {
        out.push(close(first, lines.len()));
    }
    Ok(out)
}

pub fn rms(audio: &[f32]) -> f64 {
    (audio.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / audio.len().max(1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loudness {
    pub audio: Vec<f32>,
    pub gain: f64,
    /// The gain was reduced to keep every sample within [-1, 1].
    pub limited: bool,
}

/// Uniform gain to reach `target_dbfs` RMS, capped so no sample clips.
pub fn normalize_loudness(audio: &[f32], target_dbfs: f64) -> Result<Loudness> {
    if audio.is_empty() {
        return Err(Error::invalid("empty audio"));
    }
    let r = rms(audio);
    if r == 0.0 {
        return Err(Error::invalid("cannot normalize digital silence"));
    }
    let target = 10f64.powf(target_dbfs / 20.0);
    let mut gain = target / r;
    let peak = audio.iter().fold(0.0f64, |m, &s| m.max((s as f64).abs()));
    let limited = peak * gain > 1.0;
    if limited {
        gain = 1.0 / peak;
        log::warn!("loudness limiter engaged: gain reduced to {gain:.4} to avoid clipping");
    }
    let out = if gain == 1.0 {
        audio.to_vec()
    } else {
        audio.iter().map(|&s| (s as f64 * gain) as f32).collect()
    };
    Ok(Loudness {
        audio: out,
        gain,
        limited,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Split sizes for `n` songs: `⌊r_train·n⌋` train (at least 1, leaving 2),
/// the remainder divided by the val:test ratio with at least one each.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("{n} songs cannot fill three splits")));
    }
    let train = ((a * n as f64).floor() as usize).clamp(1, n - 2);
    let rem = n - train;
    let val = ((rem as f64 * b / (b + c)).floor() as usize).clamp(1, rem - 1);
    Ok((train, val, rem - val))
}

/// Seeded shuffle of the distinct songs, then contiguous assignment.
pub fn make_splits(song_ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<BTreeMap<String, Split>> {
    let mut songs: Vec<String> = song_ids.to_vec();
    songs.sort();
    songs.dedup();
    let (train, val, _) = split_counts(songs.len(), ratios)?;
    songs.shuffle(&mut seeded_rng(seed));
    Ok(songs
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (s, split)
        })
        .collect())
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.85, 0.075, 0.075);
