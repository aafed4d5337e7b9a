//! Clip manifests and the dataset build over a set of songs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fixture::Song;
use super::prep::{make_splits, normalize_loudness, segment, Split, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::motion::MotionSequence;
use crate::vocal::write_wav;

/// One line of the manifest. Paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub song_id: String,
    pub lyric: String,
    /// Line boundaries in seconds from the clip start.
    pub lyric_line_times: Vec<(f64, f64)>,
    pub audio_path: String,
    pub motion_path: Option<String>,
    pub singer_id: String,
    pub split: Split,
}

impl ClipManifest {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.lyric_line_times.windows(2).enumerate() {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!(
                    "clip {}: line {} overlaps its predecessor",
                    self.clip_id,
                    i + 1
                )));
            }
        }
        if self.lyric_line_times.iter().any(|(a, b)| b < a) {
            return Err(Error::Format(format!(
                "clip {}: line ends before it starts",
                self.clip_id
            )));
        }
        Ok(())
    }

    /// Checks that referenced files exist under `root`.
    pub fn resolve(&self, root: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
        let audio = root.join(&self.audio_path);
        if !audio.exists() {
            return Err(Error::Format(format!(
                "clip {}: missing {}",
                self.clip_id,
                audio.display()
            )));
        }
        let motion = match &self.motion_path {
            Some(p) => {
                let m = root.join(p);
                if !m.exists() {
                    return Err(Error::Format(format!("clip {}: missing {}", self.clip_id, m.display())));
                }
                Some(m)
            }
            None => None,
        };
        Ok((audio, motion))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub min_segment_s: f64,
    pub max_segment_s: f64,
    pub ratios: (f64, f64, f64),
    pub target_dbfs: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            min_segment_s: 10.0,
            max_segment_s: 20.0,
            ratios: DEFAULT_RATIOS,
            target_dbfs: -20.0,
            seed: 0,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Segments every song, writes loudness-normalized clip audio and motion
/// under `out`, and writes `out/manifest.jsonl`.
pub fn build_dataset(songs: &[Song], out: &Path, cfg: &BuildConfig) -> Result<Vec<ClipManifest>> {
    let ids: Vec<String> = songs.iter().map(|s| s.song_id.clone()).collect();
    let splits = make_splits(&ids, cfg.ratios, cfg.seed)?;
    let mut manifest = Vec::new();
    for song in songs {
        let segs = segment(&song.lines, cfg.min_segment_s, cfg.max_segment_s)?;
        for (si, seg) in segs.iter().enumerate() {
            if let Some(flag) = seg.flag {
                log::info!("{} segment {si}: {flag:?} ({:.2} s)", song.song_id, seg.duration());
            }
            let clip_id = format!("{}_{si:02}", song.song_id);
            let sr = song.sample_rate as f64;
            let a0 = (seg.start * sr).round() as usize;
            let a1 = ((seg.end * sr).round() as usize).min(song.audio.len());
            let fps = song.motion.fps;
            let m0 = (seg.start * fps).round() as usize;
            let m1 = ((seg.end * fps).round() as usize).min(song.motion.len());
            if a1 <= a0 || m1 <= m0 {
                log::warn!("{clip_id}: segment falls outside the recording, skipped");
                continue;
            }
            let audio = normalize_loudness(&song.audio[a0..a1], cfg.target_dbfs)?;
            let audio_path = format!("audio/{clip_id}.wav");
            write_wav(out.join(&audio_path), &audio.audio, song.sample_rate)?;
            let motion: MotionSequence = song.motion.slice(m0, m1)?;
            let motion_path = format!("motion/{clip_id}.motion");
            std::fs::create_dir_all(out.join("motion"))?;
            motion.save(out.join(&motion_path))?;
            let lines = &song.lines[seg.first..seg.last];
            manifest.push(ClipManifest {
                clip_id,
                song_id: song.song_id.clone(),
                lyric: lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" "),
                lyric_line_times: lines.iter().map(|l| (l.start - seg.start, l.end - seg.start)).collect(),
                audio_path,
                motion_path: Some(motion_path),
                singer_id: song.singer_id.clone(),
                split: splits[&song.song_id],
            });
        }
    }
    jsonl::save(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipManifest>> {
    let clips: Vec<ClipManifest> = jsonl::load(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    for c in &clips {
        c.validate()?;
        c.resolve(root)?;
        if !seen.insert(c.clip_id.clone()) {
            return Err(Error::Format(format!("duplicate clip id {}", c.clip_id)));
        }
    }
    Ok(clips)
}
