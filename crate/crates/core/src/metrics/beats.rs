//! Beat Constancy: proximity of kinematic beats to audio onsets.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::kinematics::joints;
use crate::error::{Error, Result};
use crate::motion::MotionSequence;

/// Kernel width in seconds.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// Audio onset hop in seconds.
const ONSET_HOP: f64 = 0.01;
/// Onset analysis window in seconds (rounded up to a power of two).
const ONSET_WINDOW: f64 = 0.04;
/// Minimum kinematic-beat prominence as a fraction of the speed range.
const MIN_PROMINENCE: f64 = 0.1;

/// Half-wave-rectified spectral flux, one value per hop, with frame times
/// at window centres.
pub fn onset_envelope(audio: &[f32], sample_rate: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    if audio.is_empty() {
        return Err(Error::invalid("empty audio"));
    }
    let sr = sample_rate as f64;
    let hop = ((ONSET_HOP * sr).round() as usize).max(1);
    let win = ((ONSET_WINDOW * sr).ceil() as usize).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let frames = audio.len().div_ceil(hop);
    let mut prev = vec![0.0; win / 2 + 1];
    let mut flux = Vec::with_capacity(frames);
    let mut times = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = audio.get(start + i).copied().unwrap_or(0.0) as f64;
            *b = Complex::new(s * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let mut v = 0.0;
        for (k, p) in prev.iter_mut().enumerate() {
            let mag = buf[k].norm();
            if f > 0 {
                v += (mag - *p).max(0.0);
            }
            *p = mag;
        }
        flux.push(v);
        times.push((start as f64 + win as f64 / 2.0) / sr);
    }
    Ok((times, flux))
}

/// Onset times: local maxima of the flux envelope above mean + 1 std.
pub fn audio_beats(audio: &[f32], sample_rate: u32) -> Result<Vec<f64>> {
    let (times, env) = onset_envelope(audio, sample_rate)?;
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let std = (env.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let thresh = mean + std;
    let mut beats = Vec::new();
    for i in 0..env.len() {
        let left = if i > 0 { env[i - 1] } else { f64::NEG_INFINITY };
        let right = env.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if env[i] > thresh && env[i] > left && env[i] >= right {
            beats.push(times[i]);
        }
    }
    Ok(beats)
}

/// Mean joint speed (mm/s) between consecutive frames, timed at the
/// midpoint of each frame pair.
pub fn joint_speed(m: &MotionSequence) -> (Vec<f64>, Vec<f64>) {
    let j = joints(m);
    let mut times = Vec::new();
    let mut speed = Vec::new();
    for t in 0..j.frames.saturating_sub(1) {
        let s: f64 = (0..j.points)
            .map(|p| (j.point(t + 1, p) - j.point(t, p)).norm())
            .sum::<f64>()
            * j.fps;
        speed.push(s / j.points as f64);
        times.push((t as f64 + 0.5) / j.fps);
    }
    (times, speed)
}

/// Prominence of the local minimum at `i`: how far the signal must rise
/// before reaching a lower point on both sides, taking the smaller side.
fn minimum_prominence(x: &[f64], i: usize) -> f64 {
    let side = |range: &mut dyn Iterator<Item = usize>| {
        let mut peak = x[i];
        for j in range {
            if x[j] < x[i] {
                break;
            }
            peak = peak.max(x[j]);
        }
        peak
    };
    let left = side(&mut (0..i).rev());
    let right = side(&mut (i + 1..x.len()));
    left.min(right) - x[i]
}

/// Kinematic beats: local minima of mean joint speed whose prominence is at
/// least 10% of the speed range. Plateaus report their first sample.
pub fn kinematic_beats(m: &MotionSequence) -> Vec<f64> {
    let (times, speed) = joint_speed(m);
    if speed.len() < 3 {
        return Vec::new();
    }
    let lo = speed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = speed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_prom = MIN_PROMINENCE * (hi - lo);
    if hi - lo <= 0.0 {
        return Vec::new();
    }
    let mut beats = Vec::new();
    for i in 1..speed.len() - 1 {
        if speed[i] < speed[i - 1] && speed[i] <= speed[i + 1] && minimum_prominence(&speed, i) >= min_prom {
            beats.push(times[i]);
        }
    }
    beats
}

/// `mean_b exp(-min_a (b - a)² / 2σ²)` over motion beats `b`.
pub fn beat_constancy_from_beats(motion_beats: &[f64], audio_beats: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if motion_beats.is_empty() {
        return Err(Error::Undefined {
            metric: "beat_constancy",
            reason: "no kinematic beats".into(),
        });
    }
    if audio_beats.is_empty() {
        return Err(Error::Undefined {
            metric: "beat_constancy",
            reason: "no audio beats".into(),
        });
    }
    let total: f64 = motion_beats
        .iter()
        .map(|b| {
            let d = audio_beats.iter().map(|a| (b - a).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / motion_beats.len() as f64)
}

pub fn beat_constancy(motion: &MotionSequence, audio: &[f32], sample_rate: u32, sigma: f64) -> Result<f64> {
    let a = audio_beats(audio, sample_rate)?;
    beat_constancy_from_beats(&kinematic_beats(motion), &a, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::FRAME_DIM;

    #[test]
    fn kernel_examples() {
        let a = [0.5, 1.0, 1.5];
        assert!((beat_constancy_from_beats(&a, &a, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let v = beat_constancy_from_beats(&[1.1], &a, 0.1).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!(beat_constancy_from_beats(&[], &a, 0.1).is_err());
        assert!(beat_constancy_from_beats(&a, &[], 0.1).is_err());
    }

    #[test]
    fn clicks_are_detected_as_onsets() {
        let sr = 16000;
        let mut audio = vec![0f32; sr as usize * 2];
        for &t in &[0.25, 0.75, 1.25, 1.75] {
            let s = (t * sr as f64) as usize;
            for (i, x) in audio[s..s + 400].iter_mut().enumerate() {
                *x = (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr as f64).sin()) as f32;
            }
        }
        let beats = audio_beats(&audio, sr).unwrap();
        assert_eq!(beats.len(), 4, "{beats:?}");
        for (b, t) in beats.iter().zip([0.25, 0.75, 1.25, 1.75]) {
            assert!((b - t).abs() < 0.04, "{b} vs {t}");
        }
    }

    #[test]
    fn speed_minima_of_oscillation() {
        // x = cos(2π t / 0.5): speed minima every 0.25 s.
        let fps = 100.0;
        let frames = 200;
        let mut data = vec![0.0; frames * FRAME_DIM];
        for t in 0..frames {
            data[t * FRAME_DIM + 3] = 0.01 * (2.0 * std::f64::consts::PI * t as f64 / fps / 0.5).cos();
        }
        let m = MotionSequence::new(fps, data).unwrap();
        let beats = kinematic_beats(&m);
        assert!(beats.len() >= 6, "{beats:?}");
        for b in beats {
            let phase = (b / 0.25).round() * 0.25;
            assert!((b - phase).abs() <= 0.011, "{b}");
        }
    }

    #[test]
    fn prominence_filters_ripples() {
        let x = [5.0, 1.0, 5.0, 4.9, 5.0, 0.0, 5.0];
        assert!((minimum_prominence(&x, 1) - 4.0).abs() < 1e-12);
        assert!((minimum_prominence(&x, 3) - 0.1).abs() < 1e-12);
    }
}
