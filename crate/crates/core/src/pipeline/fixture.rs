//! Synthetic songs with known beats, pitch and beat-locked motion.
//!
//! Every pose column follows `c + a·cos(πt/p) + b·cos(2πt/p)` with
//! `|b| < |a|/4`, so joint speed is exactly zero on every beat `t = k·p`.
//! One note is sung per beat; its onset sits on the beat.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, EXPRESSION, FRAME_DIM, TRANSLATION};
use crate::numerics::seeded_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub songs: usize,
    pub song_seconds: f64,
    pub fps: f64,
    pub sample_rate: u32,
    pub singers: usize,
    /// Beats per lyric line.
    pub beats_per_line: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            songs: 40,
            song_seconds: 30.0,
            fps: 20.0,
            sample_rate: 16000,
            singers: 4,
            beats_per_line: 4,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyricLine {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl LyricLine {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A sung note: `[start, end)` seconds at a constant base frequency with
/// light vibrato.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub start: f64,
    pub end: f64,
    pub f0: f64,
}

#[derive(Clone, Debug)]
pub struct Song {
    pub song_id: String,
    pub singer_id: String,
    pub beat_period: f64,
    pub lines: Vec<LyricLine>,
    pub notes: Vec<Note>,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub motion: MotionSequence,
}

/// Vibrato depth (fraction of f0) and rate (Hz).
const VIBRATO_DEPTH: f64 = 0.01;
const VIBRATO_RATE: f64 = 5.0;
const HARMONICS: usize = 6;
const ATTACK: f64 = 0.01;
const RELEASE: f64 = 0.03;

const SINGER_BASE_HZ: [f64; 6] = [70.0, 90.0, 110.0, 130.0, 80.0, 100.0];
/// Scale degrees as frequency ratios (two octaves of a pentatonic scale).
const SCALE: [f64; 10] = [1.0, 1.125, 1.25, 1.5, 1.6875, 2.0, 2.25, 2.5, 3.0, 3.375];

const SYLLABLES: [&str; 16] = [
    "la", "na", "yo", "flow", "beat", "rhyme", "mic", "drop", "step", "light", "fire", "sky", "run", "deep", "high",
    "low",
];

impl Note {
    /// Instantaneous frequency at `t` seconds (0 outside the note).
    pub fn f0_at(&self, t: f64) -> f64 {
        if t < self.start || t >= self.end {
            return 0.0;
        }
        self.f0 * (1.0 + VIBRATO_DEPTH * (2.0 * PI * VIBRATO_RATE * (t - self.start)).sin())
    }
}

/// Reference F0 track sampled at `hop` seconds (frame `i` at `i·hop`).
pub fn f0_track(notes: &[Note], duration: f64, hop: f64) -> (Vec<f64>, Vec<bool>) {
    let n = (duration / hop).floor() as usize;
    let mut f0 = vec![0.0; n];
    for (i, v) in f0.iter_mut().enumerate() {
        let t = i as f64 * hop;
        if let Some(note) = notes.iter().find(|nt| t >= nt.start && t < nt.end) {
            *v = note.f0_at(t);
        }
    }
    let voiced = f0.iter().map(|&v| v > 0.0).collect();
    (f0, voiced)
}

/// Additive harmonic synthesis of `notes`, phase-continuous within a note.
pub fn render_notes(notes: &[Note], duration: f64, sample_rate: u32, gain: f64) -> Vec<f32> {
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    let mut out = vec![0.0f64; n];
    for note in notes {
        let s0 = (note.start * sr).round() as usize;
        let s1 = ((note.end * sr).round() as usize).min(n);
        let mut phase = 0.0;
        for (i, o) in out.iter_mut().enumerate().take(s1).skip(s0) {
            let t = i as f64 / sr;
            let f = note.f0_at(t);
            phase += 2.0 * PI * f / sr;
            let rel = t - note.start;
            let env = (rel / ATTACK).min(1.0) * ((note.end - t) / RELEASE).min(1.0);
            let mut v = 0.0;
            for h in 1..=HARMONICS {
                if f * h as f64 >= sr / 2.0 {
                    break;
                }
                v += (h as f64 * phase).sin() / h as f64;
            }
            *o += gain * env * v;
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// Beat-locked motion: see the module docs.
pub fn beat_locked_motion(frames: usize, fps: f64, beat_period: f64, rng: &mut impl Rng) -> Result<MotionSequence> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut coeffs = Vec::with_capacity(FRAME_DIM);
    for c in 0..FRAME_DIM {
        let scale = if EXPRESSION.contains(&c) {
            0.05
        } else if TRANSLATION.contains(&c) {
            0.02
        } else {
            0.15
        };
        let a = scale * (0.3 + rng.gen::<f64>()) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let b = a * rng.gen_range(-0.2..0.2);
        let offset = scale * normal.sample(rng);
        coeffs.push((offset, a, b));
    }
    let mut data = Vec::with_capacity(frames * FRAME_DIM);
    for i in 0..frames {
        let th = PI * (i as f64 / fps) / beat_period;
        for &(c, a, b) in &coeffs {
            data.push(c + a * th.cos() + b * (2.0 * th).cos());
        }
    }
    MotionSequence::new(fps, data)
}

pub fn generate_song(index: usize, cfg: &FixtureConfig) -> Result<Song> {
    let mut rng = seeded_rng(cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let singer = index % cfg.singers.max(1);
    let base = SINGER_BASE_HZ[singer % SINGER_BASE_HZ.len()];
    let beat_period = rng.gen_range(0.5..0.8);
    let beats = (cfg.song_seconds / beat_period).floor() as usize;
    let mut notes = Vec::with_capacity(beats);
    for k in 0..beats {
        let start = k as f64 * beat_period;
        notes.push(Note {
            start,
            end: start + 0.8 * beat_period,
            f0: base * SCALE[rng.gen_range(0..SCALE.len())],
        });
    }
    let mut lines = Vec::new();
    let mut k = 0;
    while k < beats {
        let n = cfg.beats_per_line.min(beats - k);
        let words: Vec<&str> = (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
        lines.push(LyricLine {
            text: words.join(" "),
            start: k as f64 * beat_period,
            end: (k + n) as f64 * beat_period,
        });
        k += n;
    }
    let audio = render_notes(&notes, cfg.song_seconds, cfg.sample_rate, 0.2);
    let frames = (cfg.song_seconds * cfg.fps).round() as usize;
    let motion = beat_locked_motion(frames, cfg.fps, beat_period, &mut rng)?;
    Ok(Song {
        song_id: format!("song{index:03}"),
        singer_id: format!("singer{singer}"),
        beat_period,
        lines,
        notes,
        audio,
        sample_rate: cfg.sample_rate,
        motion,
    })
}

pub fn generate(cfg: &FixtureConfig) -> Result<Vec<Song>> {
    if cfg.songs == 0 || !(cfg.song_seconds > 0.0) {
        return Err(Error::invalid("fixture needs at least one song of positive length"));
    }
    (0..cfg.songs).map(|i| generate_song(i, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{joint_speed, kinematic_beats};

    #[test]
    fn motion_speed_vanishes_on_beats() {
        let mut rng = seeded_rng(3);
        let p = 0.6;
        let m = beat_locked_motion(200, 20.0, p, &mut rng).unwrap();
        let beats = kinematic_beats(&m);
        assert!(beats.len() >= 10);
        for b in beats {
            let k = (b / p).round();
            assert!((b - k * p).abs() <= 0.5 / 20.0 + 1e-9, "{b}");
        }
        let (_, speed) = joint_speed(&m);
        assert!(speed.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn songs_are_deterministic_and_in_range() {
        let cfg = FixtureConfig {
            songs: 2,
            song_seconds: 5.0,
            ..FixtureConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a[1].audio, b[1].audio);
        assert_eq!(a[1].motion, b[1].motion);
        for s in &a {
            assert_eq!(s.audio.len(), 80000);
            assert_eq!(s.motion.len(), 100);
            assert!(s.notes.iter().all(|n| (60.0..=500.0).contains(&n.f0)));
            assert!(s.audio.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
