//! Frame-synchronous log-mel features and autocorrelation pitch tracking.
//!
//! Frame `i` is centred at `i · hop` seconds and spans a 40 ms window;
//! samples outside the signal count as zero.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MEL_BINS: usize = 40;
pub const DEFAULT_HOP: f64 = 0.02;
pub const WINDOW_SECONDS: f64 = 0.04;
/// Natural-log floor applied to mel energies.
pub const LOG_FLOOR: f64 = -23.025850929940457;
pub const SUPPORTED_RATES: [u32; 3] = [16000, 22050, 44100];

pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 500.0;
/// Minimum normalized autocorrelation peak for a voiced frame.
pub const VOICING_THRESHOLD: f64 = 0.5;
/// Minimum frame RMS for a voiced frame, in dBFS.
pub const RMS_GATE_DBFS: f64 = -40.0;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK filterbank between 0 Hz and Nyquist; returns
/// `bins × (nfft/2 + 1)` weights with unit peaks.
pub fn mel_filterbank(bins: usize, nfft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let sr = sample_rate as f64;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64))
        .collect();
    let nbins = nfft / 2 + 1;
    (0..bins)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..nbins)
                .map(|k| {
                    let f = k as f64 * sr / nfft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Centre frequency of each mel bin in Hz.
pub fn mel_centers(bins: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=bins)
        .map(|i| mel_to_hz(top * i as f64 / (bins + 1) as f64))
        .collect()
}

pub(crate) struct Framing {
    pub hop: usize,
    pub win: usize,
    pub frames: usize,
}

pub(crate) fn framing(len: usize, sample_rate: u32, hop_seconds: f64) -> Result<Framing> {
    if len == 0 {
        return Err(Error::invalid("empty audio"));
    }
    if !(hop_seconds > 0.0) {
        return Err(Error::invalid("hop must be positive"));
    }
    let sr = sample_rate as f64;
    let hop = (hop_seconds * sr).round() as usize;
    let win = (WINDOW_SECONDS * sr).round() as usize;
    if hop == 0 {
        return Err(Error::invalid("hop shorter than one sample"));
    }
    Ok(Framing {
        hop,
        win,
        frames: len / hop,
    })
}

/// Window samples for frame `i`, zero outside the signal.
pub(crate) fn frame_samples(audio: &[f32], i: usize, f: &Framing, out: &mut [f64]) {
    let start = (i * f.hop) as isize - (f.win / 2) as isize;
    for (j, o) in out.iter_mut().enumerate() {
        let s = start + j as isize;
        *o = if s >= 0 && (s as usize) < audio.len() {
            audio[s as usize] as f64
        } else {
            0.0
        };
    }
}

fn check_rate(sample_rate: u32) -> Result<()> {
    if !SUPPORTED_RATES.contains(&sample_rate) {
        return Err(Error::invalid(format!("unsupported sample rate {sample_rate}")));
    }
    Ok(())
}

/// `⌊n / hop⌋ × 40` natural-log mel energies (Hann window).
pub fn extract_features(audio: &[f32], sample_rate: u32, hop_seconds: f64) -> Result<Tensor> {
    check_rate(sample_rate)?;
    let f = framing(audio.len(), sample_rate, hop_seconds)?;
    let nfft = f.win.next_power_of_two();
    let fb = mel_filterbank(MEL_BINS, nfft, sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let hann: Vec<f64> = (0..f.win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / f.win as f64).cos())
        .collect();
    let mut frame = vec![0.0; f.win];
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    let mut out = Vec::with_capacity(f.frames * MEL_BINS);
    for i in 0..f.frames {
        frame_samples(audio, i, &f, &mut frame);
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if k < f.win { frame[k] * hann[k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for filt in &fb {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(LOG_FLOOR.exp()).ln());
        }
    }
    Tensor::matrix(f.frames, MEL_BINS, out)
}

/// Per-frame F0 (0 where unvoiced) and voicing flags.
///
/// The lag search covers `[sr/f0_max, sr/f0_min]`; the chosen period is the
/// first local maximum of the normalized autocorrelation reaching 90% of the
/// global maximum, refined by parabolic interpolation.
pub fn estimate_f0(
    audio: &[f32],
    sample_rate: u32,
    hop_seconds: f64,
    f0_min: f64,
    f0_max: f64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if !(f0_min > 0.0 && f0_min < f0_max) {
        return Err(Error::invalid(format!("f0 range {f0_min}..{f0_max} is empty")));
    }
    let f = framing(audio.len(), sample_rate, hop_seconds)?;
    let sr = sample_rate as f64;
    let lag_lo = ((sr / f0_max).floor() as usize).max(2) - 1;
    let lag_hi = ((sr / f0_min).ceil() as usize + 1).min(f.win - 2);
    let gate = 10f64.powf(RMS_GATE_DBFS / 20.0);
    let mut frame = vec![0.0; f.win];
    let mut r = vec![0.0; lag_hi + 1];
    let mut f0 = Vec::with_capacity(f.frames);
    let mut voiced = Vec::with_capacity(f.frames);
    for i in 0..f.frames {
        frame_samples(audio, i, &f, &mut frame);
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        let rms = (energy / f.win as f64).sqrt();
        if rms < gate {
            f0.push(0.0);
            voiced.push(false);
            continue;
        }
        for (tau, rv) in r.iter_mut().enumerate().take(lag_hi + 1).skip(lag_lo) {
            let n = f.win - tau;
            let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
            for j in 0..n {
                let (a, b) = (frame[j], frame[j + tau]);
                xy += a * b;
                xx += a * a;
                yy += b * b;
            }
            *rv = if xx > 0.0 && yy > 0.0 {
                xy / (xx * yy).sqrt()
            } else {
                0.0
            };
        }
        let peaks: Vec<usize> = (lag_lo + 1..lag_hi)
            .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
            .collect();
        let best = peaks.iter().map(|&t| r[t]).fold(f64::NEG_INFINITY, f64::max);
        let pick = peaks.into_iter().find(|&t| r[t] >= 0.9 * best);
        match pick {
            Some(t) if r[t] >= VOICING_THRESHOLD => {
                let (a, b, c) = (r[t - 1], r[t], r[t + 1]);
                let denom = a - 2.0 * b + c;
                let shift = if denom.abs() > 1e-12 {
                    0.5 * (a - c) / denom
                } else {
                    0.0
                };
                let hz = sr / (t as f64 + shift.clamp(-0.5, 0.5));
                if (f0_min..=f0_max).contains(&hz) {
                    f0.push(hz);
                    voiced.push(true);
                } else {
                    f0.push(0.0);
                    voiced.push(false);
                }
            }
            _ => {
                f0.push(0.0);
                voiced.push(false);
            }
        }
    }
    Ok((f0, voiced))
}

/// Features plus pitch track at a shared hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocalAnalysis {
    /// `L × 40` row-major.
    pub features: Vec<f64>,
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    pub hop_seconds: f64,
    pub sample_rate: u32,
}

impl VocalAnalysis {
    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn feature_rows(&self) -> Tensor {
        Tensor::matrix(self.len(), MEL_BINS, self.features.clone()).expect("L x 40")
    }
}

pub fn analyze(audio: &[f32], sample_rate: u32, hop_seconds: f64) -> Result<VocalAnalysis> {
    let features = extract_features(audio, sample_rate, hop_seconds)?;
    let (f0_hz, voiced) = estimate_f0(audio, sample_rate, hop_seconds, F0_MIN, F0_MAX)?;
    debug_assert_eq!(features.rows(), f0_hz.len());
    Ok(VocalAnalysis {
        features: features.into_data(),
        f0_hz,
        voiced,
        hop_seconds,
        sample_rate,
    })
}
