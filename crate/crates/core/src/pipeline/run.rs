//! Stage glue shared by the command line and the end-to-end tests: loading
//! clips, building token corpora, rendering generated streams and scoring
//! them against held-out clips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{load_manifest, ClipManifest};
use super::prep::Split;
use crate::error::{Error, Result};
use crate::lm::LmExample;
use crate::metrics::{
    beat_constancy, diversity, face_landmarks, fid, gpe, lip_mse, lvd, motion_reconstruction, vde, DiversityKind,
    EvalReport, FeatureSet, DEFAULT_SIGMA, LIP_INDICES,
};
use crate::motion::{MotionSequence, MotionTokenizer, Part};
use crate::tokens::{
    decouple, interleave_motion, interleave_vocal, mix, DecoupleConfig, DecoupleReport, StreamRecord, TokenStream,
    VocabLayout,
};
use crate::vocal::{analyze, read_wav, UnitRecord, UnitSeq, VocalAnalysis, VocalCodec};

/// A manifest entry with its audio and motion loaded.
#[derive(Clone, Debug)]
pub struct Clip {
    pub manifest: ClipManifest,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub motion: Option<MotionSequence>,
}

/// Loads every clip of `split` (all clips when `None`) in manifest order.
pub fn load_clips(manifest: &Path, split: Option<Split>) -> Result<Vec<Clip>> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for m in load_manifest(manifest)? {
        if split.is_some_and(|s| s != m.split) {
            continue;
        }
        let (audio_path, motion_path) = m.resolve(root)?;
        let (audio, sample_rate) = read_wav(audio_path)?;
        let motion = motion_path.map(MotionSequence::load).transpose()?;
        out.push(Clip {
            manifest: m,
            audio,
            sample_rate,
            motion,
        });
    }
    Ok(out)
}

pub fn motion_of(clip: &Clip) -> Result<&MotionSequence> {
    clip.motion
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("clip {} has no motion", clip.manifest.clip_id)))
}

pub fn analyze_clips(clips: &[Clip], hop: f64) -> Result<Vec<VocalAnalysis>> {
    clips.iter().map(|c| analyze(&c.audio, c.sample_rate, hop)).collect()
}

pub fn unit_record(clip: &Clip, vocal: &VocalCodec) -> Result<UnitRecord> {
    let a = analyze(&clip.audio, clip.sample_rate, vocal.hop_seconds)?;
    let u = vocal.encode(&a, &clip.manifest.singer_id)?;
    Ok(UnitRecord {
        clip_id: clip.manifest.clip_id.clone(),
        semantic_ids: u.semantic_ids,
        pitch_ids: u.pitch_ids,
        singer_id: clip.manifest.singer_id.clone(),
        hop_seconds: vocal.hop_seconds,
    })
}

/// One line of a motion token file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionTokenRecord {
    pub clip_id: String,
    pub face: Vec<u32>,
    pub body: Vec<u32>,
    pub hand: Vec<u32>,
}

pub fn motion_tokens(clip: &Clip, tokenizer: &MotionTokenizer) -> Result<MotionTokenRecord> {
    let [face, body, hand] = tokenizer.encode(motion_of(clip)?)?;
    Ok(MotionTokenRecord {
        clip_id: clip.manifest.clip_id.clone(),
        face: face.ids,
        body: body.ids,
        hand: hand.ids,
    })
}

/// Vocabulary sized to the trained codecs.
pub fn layout_for(tokenizer: &MotionTokenizer, vocal: &VocalCodec) -> VocabLayout {
    VocabLayout::with_widths(
        vocal.units.k as u32,
        vocal.pitch.config.codes as u32,
        tokenizer.face.config.codebook_size as u32,
        tokenizer.body.config.codebook_size as u32,
        tokenizer.hand.config.codebook_size as u32,
    )
}

/// Vocal block followed by the motion block.
pub fn clip_stream(
    layout: &VocabLayout,
    clip: &Clip,
    tokenizer: &MotionTokenizer,
    vocal: &VocalCodec,
) -> Result<TokenStream> {
    let tag = |e: Error| Error::invalid(format!("clip {}: {e}", clip.manifest.clip_id));
    let u = unit_record(clip, vocal).map_err(tag)?;
    let [face, body, hand] = tokenizer.encode(motion_of(clip)?).map_err(tag)?;
    let v = interleave_vocal(layout, &u.semantic_ids, &u.pitch_ids)?;
    let m = interleave_motion(layout, &face.ids, &body.ids, &hand.ids)?;
    Ok(mix(layout, &v, &m))
}

pub fn build_corpus(
    layout: &VocabLayout,
    clips: &[Clip],
    tokenizer: &MotionTokenizer,
    vocal: &VocalCodec,
) -> Result<Vec<LmExample>> {
    clips
        .iter()
        .map(|c| {
            Ok(LmExample {
                clip_id: c.manifest.clip_id.clone(),
                lyric: c.manifest.lyric.clone(),
                stream: clip_stream(layout, c, tokenizer, vocal)?,
            })
        })
        .collect()
}

/// A generated stream turned back into motion and audio. Either output is
/// `None` when its block is empty.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub report: DecoupleReport,
    pub motion: Option<MotionSequence>,
    pub audio: Option<Vec<f32>>,
}

pub fn decouple_config(tokenizer: &MotionTokenizer, vocal: &VocalCodec, fps: f64) -> DecoupleConfig {
    DecoupleConfig {
        hop_seconds: vocal.hop_seconds,
        downsample: tokenizer.body.config.downsample,
        fps,
        ..DecoupleConfig::default()
    }
}

pub fn render(
    layout: &VocabLayout,
    stream: &TokenStream,
    tokenizer: &MotionTokenizer,
    vocal: &VocalCodec,
    singer: &str,
    fps: f64,
    seed: u64,
) -> Result<Rendered> {
    let report = decouple(layout, stream, &decouple_config(tokenizer, vocal, fps))?;
    let motion = if report.motion_len() > 0 {
        Some(tokenizer.decode(report.face(), report.body(), report.hand(), fps)?)
    } else {
        None
    };
    let audio = if report.vocal.is_empty() {
        None
    } else {
        Some(vocal.resynthesize(&report.vocal, singer, seed)?)
    };
    Ok(Rendered { report, motion, audio })
}

/// Clip-level motion feature: the body encoder's time-pooled latent.
pub fn motion_feature(tokenizer: &MotionTokenizer, m: &MotionSequence) -> Result<Vec<f64>> {
    tokenizer.body.pooled_latent(&m.part(Part::Body))
}

pub const FEATURE_EXTRACTOR: &str = "body codec encoder, latent averaged over time";

fn mean(values: &[f64], metric: &'static str, what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Undefined {
            metric,
            reason: format!("no clip has {what}"),
        });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn undefined(metric: &'static str, reason: &str) -> Result<f64> {
    Err(Error::Undefined {
        metric,
        reason: reason.into(),
    })
}

/// Scores generated streams against the held-out clips they were generated
/// for. Generated clips without a matching reference are ignored.
pub fn evaluate_generation(
    layout: &VocabLayout,
    clips: &[Clip],
    generated: &[StreamRecord],
    tokenizer: &MotionTokenizer,
    vocal: &VocalCodec,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(serde_json::json!({
        "clips": clips.len(),
        "generated": generated.len(),
        "bc_sigma": DEFAULT_SIGMA,
        "diversity": DiversityKind::Dispersion,
        "lip_indices": LIP_INDICES,
        "seed": seed,
    }));
    report.feature_extractor = Some(FEATURE_EXTRACTOR.into());
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    let (mut bc, mut mse, mut vel) = (Vec::new(), Vec::new(), Vec::new());
    let (mut f_ref, mut v_ref, mut f_est, mut v_est) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut mpj, mut pampj, mut accl) = (Vec::new(), Vec::new(), Vec::new());
    for (i, clip) in clips.iter().enumerate() {
        let gt = motion_of(clip)?;
        let rec = motion_reconstruction(&tokenizer.reconstruct(gt)?, gt)?;
        mpj.push(rec.mpjpe);
        pampj.push(rec.pampjpe);
        accl.push(rec.accl);
        real.push(motion_feature(tokenizer, gt)?);
        let Some(g) = generated.iter().find(|g| g.clip_id == clip.manifest.clip_id) else {
            continue;
        };
        let singer = &clip.manifest.singer_id;
        let r = render(
            layout,
            &TokenStream::new(g.ids.clone()),
            tokenizer,
            vocal,
            singer,
            gt.fps,
            seed.wrapping_add(i as u64),
        )?;
        if let Some(m) = &r.motion {
            fake.push(motion_feature(tokenizer, m)?);
            let n = m.len().min(gt.len());
            let (gm, rm) = (face_landmarks(&m.slice(0, n)?), face_landmarks(&gt.slice(0, n)?));
            mse.push(lip_mse(&gm, &rm, &LIP_INDICES)?);
            if n >= 2 {
                vel.push(lvd(&gm, &rm)?);
            }
            if let Some(audio) = &r.audio {
                match beat_constancy(m, audio, vocal.sample_rate, DEFAULT_SIGMA) {
                    Ok(v) => bc.push(v),
                    Err(e) => log::info!("{}: no beat constancy ({e})", clip.manifest.clip_id),
                }
            }
        }
        if let Some(audio) = &r.audio {
            let est = analyze(audio, vocal.sample_rate, vocal.hop_seconds)?;
            let gt_a = analyze(&clip.audio, clip.sample_rate, vocal.hop_seconds)?;
            let n = est.len().min(gt_a.len());
            f_ref.extend_from_slice(&gt_a.f0_hz[..n]);
            v_ref.extend_from_slice(&gt_a.voiced[..n]);
            f_est.extend_from_slice(&est.f0_hz[..n]);
            v_est.extend_from_slice(&est.voiced[..n]);
        }
    }
    let fid_value = if fake.is_empty() {
        undefined("fid", "no generated stream has a motion block")
    } else {
        FeatureSet::new(real).and_then(|r| fid(&r, &FeatureSet::new(fake.clone())?))
    };
    report.record("FID", fid_value);
    report.record(
        "DIV",
        FeatureSet::new(fake).and_then(|f| diversity(&f, DiversityKind::Dispersion)),
    );
    report.record("BC", mean(&bc, "bc", "both beat tracks"));
    report.record("MSE", mean(&mse, "lip_mse", "generated motion"));
    report.record("LVD", mean(&vel, "lvd", "two generated frames"));
    report.record("CER", undefined("cer", "no transcription model is bundled"));
    report.record("GPE", gpe(&f_ref, &v_ref, &f_est, &v_est));
    report.record("VDE", vde(&v_ref, &v_est));
    report.record("MPJPE", mean(&mpj, "mpjpe", "motion"));
    report.record("PAMPJPE", mean(&pampj, "pampjpe", "motion"));
    report.record("ACCL", mean(&accl, "accl", "motion"));
    Ok(report)
}

/// Units of `u` as a stream id list, for tools that only have units.
pub fn vocal_stream(layout: &VocabLayout, u: &UnitSeq) -> Result<TokenStream> {
    interleave_vocal(layout, &u.semantic_ids, &u.pitch_ids)
}
