//! Semantic units and the F0 codec bundled as one vocal tokenizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{VocalAnalysis, MEL_BINS};
use super::f0codec::{train_f0_codec, F0Codec, F0CodecConfig, F0Example};
use super::kmeans::{fit_kmeans, KMeansConfig, KMeansModel};
use super::synth::{resynthesize, SynthConfig};
use super::units::UnitSeq;
use crate::error::{Error, Result};
use crate::motion::TrainOptions;
use crate::numerics::{Checkpoint, Tensor};

#[derive(Clone, Debug)]
pub struct VocalCodec {
    pub units: KMeansModel,
    pub pitch: F0Codec,
    pub hop_seconds: f64,
    pub sample_rate: u32,
}

#[derive(Serialize, Deserialize)]
struct UnitsMeta {
    k: usize,
    dim: usize,
    inertia: Vec<f64>,
    reseeded: usize,
}

/// One analyzed clip with its singer.
pub struct VocalClip<'a> {
    pub singer: &'a str,
    pub analysis: &'a VocalAnalysis,
}

impl VocalCodec {
    /// Fits k-means on the pooled feature frames, then trains the F0 codec on
    /// every clip long enough for one window. All clips must share a hop and
    /// sample rate.
    pub fn fit(clips: &[VocalClip], kmeans: &KMeansConfig, f0: &F0CodecConfig, opts: &TrainOptions) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::invalid("no clips to fit the vocal codec on"))?;
        let (hop, sr) = (first.analysis.hop_seconds, first.analysis.sample_rate);
        let mut rows = Vec::new();
        for c in clips {
            if c.analysis.hop_seconds != hop || c.analysis.sample_rate != sr {
                return Err(Error::invalid("clips disagree on hop or sample rate"));
            }
            rows.extend_from_slice(&c.analysis.features);
        }
        let data = Tensor::matrix(rows.len() / MEL_BINS, MEL_BINS, rows)?;
        let mut units = fit_kmeans(&data, kmeans)?;
        let feats: Vec<Tensor> = clips.iter().map(|c| c.analysis.feature_rows()).collect();
        units.set_voicing(feats.iter().zip(clips).map(|(f, c)| (f, c.analysis.voiced.as_slice())))?;
        let examples: Vec<F0Example> = clips
            .iter()
            .filter(|c| c.analysis.len() >= f0.window)
            .map(|c| F0Example {
                singer: c.singer.to_string(),
                f0_hz: c.analysis.f0_hz.clone(),
                voiced: c.analysis.voiced.clone(),
            })
            .collect();
        if examples.is_empty() {
            return Err(Error::invalid(format!(
                "no clip reaches the {}-frame F0 window",
                f0.window
            )));
        }
        let (pitch, log) = train_f0_codec(&examples, f0, opts)?;
        log::info!(
            "vocal codec: {} units, F0 loss {:.4} -> {:.4}",
            units.k,
            log.losses.first().copied().unwrap_or(f64::NAN),
            log.losses.last().copied().unwrap_or(f64::NAN)
        );
        Ok(Self {
            units,
            pitch,
            hop_seconds: hop,
            sample_rate: sr,
        })
    }

    pub fn encode(&self, a: &VocalAnalysis, singer: &str) -> Result<UnitSeq> {
        if a.hop_seconds != self.hop_seconds {
            return Err(Error::invalid(format!(
                "analysis hop {} differs from codec hop {}",
                a.hop_seconds, self.hop_seconds
            )));
        }
        let semantic = self.units.assign(&a.feature_rows())?;
        let pitch = self.pitch.encode(&a.f0_hz, &a.voiced, singer)?;
        UnitSeq::new(semantic, pitch)
    }

    pub fn resynthesize(&self, units: &UnitSeq, singer: &str, seed: u64) -> Result<Vec<f32>> {
        let cfg = SynthConfig {
            sample_rate: self.sample_rate,
            hop_seconds: self.hop_seconds,
            seed,
            ..SynthConfig::default()
        };
        resynthesize(
            &units.semantic_ids,
            &units.pitch_ids,
            singer,
            &self.units,
            &self.pitch,
            &cfg,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let pitch = self.pitch.to_checkpoint()?;
        let units = UnitsMeta {
            k: self.units.k,
            dim: self.units.dim,
            inertia: self.units.inertia.clone(),
            reseeded: self.units.reseeded,
        };
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "vocal-codec",
            "hop_seconds": self.hop_seconds,
            "sample_rate": self.sample_rate,
            "units": units,
            "pitch": pitch.meta,
        }));
        ck.push(
            "units.centroids",
            Tensor::matrix(self.units.k, self.units.dim, self.units.centroids.clone())?,
        );
        ck.push(
            "units.voiced_fraction",
            Tensor::new(vec![self.units.k], self.units.voiced_fraction.clone())?,
        );
        ck.extend_prefixed("pitch", pitch.tensors);
        ck.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some("vocal-codec") {
            return Err(Error::Format("not a vocal codec checkpoint".into()));
        }
        let meta: UnitsMeta = serde_json::from_value(ck.meta["units"].clone())?;
        let centroids = ck.get("units.centroids")?;
        let voiced = ck.get("units.voiced_fraction")?;
        if centroids.shape() != [meta.k, meta.dim] || voiced.len() != meta.k {
            return Err(Error::Format("unit tensors disagree with their metadata".into()));
        }
        let pitch = F0Codec::from_checkpoint(&Checkpoint {
            meta: ck.meta["pitch"].clone(),
            tensors: ck.prefixed("pitch"),
        })?;
        let hop_seconds = ck.meta["hop_seconds"]
            .as_f64()
            .ok_or_else(|| Error::Format("vocal codec checkpoint lacks hop_seconds".into()))?;
        let sample_rate = ck.meta["sample_rate"]
            .as_u64()
            .ok_or_else(|| Error::Format("vocal codec checkpoint lacks sample_rate".into()))?
            as u32;
        Ok(Self {
            units: KMeansModel {
                k: meta.k,
                dim: meta.dim,
                centroids: centroids.data().to_vec(),
                inertia: meta.inertia,
                voiced_fraction: voiced.data().to_vec(),
                reseeded: meta.reseeded,
            },
            pitch,
            hop_seconds,
            sample_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocal::analyze;

    fn tone(f0: f64, secs: f64, sr: u32) -> Vec<f32> {
        (0..(secs * sr as f64) as usize)
            .map(|i| (0.3 * (2.0 * std::f64::consts::PI * f0 * i as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn checkpoint_round_trip_preserves_encoding() {
        let sr = 16000;
        let a = analyze(&tone(150.0, 1.2, sr), sr, 0.02).unwrap();
        let b = analyze(&tone(220.0, 1.2, sr), sr, 0.02).unwrap();
        let clips = [
            VocalClip {
                singer: "s0",
                analysis: &a,
            },
            VocalClip {
                singer: "s1",
                analysis: &b,
            },
        ];
        let km = KMeansConfig {
            k: 4,
            ..KMeansConfig::default()
        };
        let f0 = F0CodecConfig {
            codes: 4,
            singer_dim: 4,
            window: 20,
            ..F0CodecConfig::default()
        };
        let opts = TrainOptions {
            steps: 5,
            batch_size: 2,
            ..TrainOptions::default()
        };
        let codec = VocalCodec::fit(&clips, &km, &f0, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocal.ckpt");
        codec.save(&p).unwrap();
        let back = VocalCodec::load(&p).unwrap();
        assert_eq!(codec.encode(&a, "s0").unwrap(), back.encode(&a, "s0").unwrap());
        let u = back.encode(&b, "s1").unwrap();
        assert_eq!(u.len(), b.len());
        let y = back.resynthesize(&u, "s1", 0).unwrap();
        assert_eq!(y.len(), u.len() * 320);
    }
}
