//! Waveform synthesis from frame-rate parameters: a harmonic bank shaped by
//! a mel envelope for voiced frames, filtered noise for unvoiced ones.
//! Parameters are interpolated sample by sample between frame centres.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::analysis::{mel_centers, MEL_BINS};
use super::f0codec::F0Codec;
use super::kmeans::KMeansModel;
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub hop_seconds: f64,
    /// RMS of a steady voiced frame.
    pub voiced_gain: f64,
    /// RMS of a steady unvoiced frame.
    pub noise_gain: f64,
    /// Pole of the one-pole noise colouring filter.
    pub noise_pole: f64,
    pub max_harmonics: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            hop_seconds: 0.02,
            voiced_gain: 0.1,
            noise_gain: 0.02,
            noise_pole: 0.6,
            max_harmonics: 40,
            seed: 0,
        }
    }
}

/// Linear amplitude of a log-mel envelope at `hz`, interpolated between bin
/// centres on the mel scale.
fn envelope_at(env: &[f64], centers: &[f64], hz: f64) -> f64 {
    let log_e = if hz <= centers[0] {
        env[0]
    } else if hz >= centers[centers.len() - 1] {
        env[env.len() - 1]
    } else {
        let j = centers.partition_point(|&c| c <= hz);
        let t = (hz - centers[j - 1]) / (centers[j] - centers[j - 1]);
        (1.0 - t) * env[j - 1] + t * env[j]
    };
    (0.5 * log_e).exp()
}

/// Renders `len(f0) · hop` samples. `envelopes` holds one 40-bin log-mel
/// vector per frame; an empty slice means a flat spectrum.
pub fn synthesize(f0_hz: &[f64], voiced: &[bool], envelopes: &[Vec<f64>], cfg: &SynthConfig) -> Result<Vec<f32>> {
    let n = f0_hz.len();
    if n == 0 {
        return Err(Error::invalid("nothing to synthesize"));
    }
    if voiced.len() != n {
        return Err(Error::shape("synthesize voicing", n, voiced.len()));
    }
    if !envelopes.is_empty() && envelopes.len() != n {
        return Err(Error::shape("synthesize envelopes", n, envelopes.len()));
    }
    if envelopes.iter().any(|e| e.len() != MEL_BINS) {
        return Err(Error::shape("synthesize envelope", MEL_BINS, "other"));
    }
    if !(0.0..1.0).contains(&cfg.noise_pole) {
        return Err(Error::invalid("noise pole must lie in [0, 1)"));
    }
    let sr = cfg.sample_rate as f64;
    let hop = (cfg.hop_seconds * sr).round() as usize;
    if hop == 0 {
        return Err(Error::invalid("hop shorter than one sample"));
    }
    let nyquist = sr / 2.0;
    let centers = mel_centers(MEL_BINS, cfg.sample_rate);

    // Unvoiced frames borrow the nearest voiced F0 so the oscillator phase
    // stays continuous across gaps.
    let mut f0 = f0_hz.to_vec();
    let known: Vec<usize> = (0..n).filter(|&i| voiced[i] && f0_hz[i] > 0.0).collect();
    for (i, v) in f0.iter_mut().enumerate() {
        if !(voiced[i] && *v > 0.0) {
            *v = match known.binary_search(&i) {
                _ if known.is_empty() => 100.0,
                Ok(j) | Err(j) if j >= known.len() => f0_hz[known[j.min(known.len() - 1)]],
                Ok(j) | Err(j) => f0_hz[known[j]],
            };
        }
    }

    let h_max = cfg.max_harmonics.max(1);
    let amps: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut a: Vec<f64> = (1..=h_max)
                .map(|h| {
                    let f = h as f64 * f0[i];
                    if f >= nyquist {
                        0.0
                    } else if envelopes.is_empty() {
                        1.0 / h as f64
                    } else {
                        envelope_at(&envelopes[i], &centers, f)
                    }
                })
                .collect();
            let power: f64 = a.iter().map(|x| x * x / 2.0).sum();
            let g = if voiced[i] && power > 0.0 {
                cfg.voiced_gain / power.sqrt()
            } else {
                0.0
            };
            a.iter_mut().for_each(|x| *x *= g);
            a
        })
        .collect();
    let noise_gain: Vec<f64> = voiced.iter().map(|&v| if v { 0.0 } else { cfg.noise_gain }).collect();

    let mut rng = seeded_rng(cfg.seed);
    let c = (1.0 - cfg.noise_pole * cfg.noise_pole).sqrt();
    let mut state: f64 = StandardNormal.sample(&mut rng);
    let mut phase = 0.0f64;
    let total = n * hop;
    let mut out = Vec::with_capacity(total);
    let two_pi = 2.0 * std::f64::consts::PI;
    for s in 0..total {
        let pos = s as f64 / hop as f64;
        let i = (pos.floor() as usize).min(n - 1);
        let j = (i + 1).min(n - 1);
        let t = pos - i as f64;
        let f = (1.0 - t) * f0[i] + t * f0[j];
        phase = (phase + two_pi * f / sr) % two_pi;
        let mut y = 0.0;
        for h in 0..h_max {
            let a = (1.0 - t) * amps[i][h] + t * amps[j][h];
            if a != 0.0 && (h + 1) as f64 * f < nyquist {
                y += a * ((h + 1) as f64 * phase).sin();
            }
        }
        let x: f64 = StandardNormal.sample(&mut rng);
        state = cfg.noise_pole * state + c * x;
        y += ((1.0 - t) * noise_gain[i] + t * noise_gain[j]) * state;
        out.push(y as f32);
    }
    Ok(out)
}

/// Audio from unit ids: envelopes and voicing come from the semantic
/// centroids, F0 from the pitch decoder. Lengths may differ by one frame, in
/// which case the longer stream is truncated.
pub fn resynthesize(
    semantic_ids: &[u32],
    pitch_ids: &[u32],
    singer: &str,
    units: &KMeansModel,
    pitch: &F0Codec,
    cfg: &SynthConfig,
) -> Result<Vec<f32>> {
    let (a, b) = (semantic_ids.len(), pitch_ids.len());
    if a.abs_diff(b) > 1 {
        return Err(Error::shape("resynthesize unit streams", a, b));
    }
    let n = a.min(b);
    if n == 0 {
        return Err(Error::invalid("nothing to resynthesize"));
    }
    if units.dim != MEL_BINS {
        return Err(Error::shape("unit centroids", MEL_BINS, units.dim));
    }
    if let Some(pos) = semantic_ids[..n].iter().position(|&k| k as usize >= units.k) {
        return Err(Error::invalid(format!(
            "semantic id {} at position {pos} outside {}",
            semantic_ids[pos], units.k
        )));
    }
    let f0 = pitch.decode(&pitch_ids[..n], singer)?;
    let voiced: Vec<bool> = semantic_ids[..n].iter().map(|&k| units.is_voiced(k as usize)).collect();
    let env: Vec<Vec<f64>> = semantic_ids[..n]
        .iter()
        .map(|&k| units.centroid(k as usize).to_vec())
        .collect();
    synthesize(&f0, &voiced, &env, cfg)
}
