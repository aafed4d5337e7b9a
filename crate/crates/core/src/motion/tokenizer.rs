//! The three part codecs as one motion tokenizer, and the single-codec
//! ablation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{train_codec, windows, CodecConfig, CodecInput, PartCodec, TrainLog, TrainOptions};
use super::sequence::{MotionSequence, Part, PartTokenSeq, LAYOUT};
use crate::error::{Error, Result};
use crate::metrics::{motion_reconstruction, Reconstruction, Table, RECONSTRUCTION_COLUMNS};
use crate::numerics::Checkpoint;

/// Face, body and hand codecs.
#[derive(Clone, Debug)]
pub struct MotionTokenizer {
    pub face: PartCodec,
    pub body: PartCodec,
    pub hand: PartCodec,
}

impl MotionTokenizer {
    pub fn codec(&self, part: Part) -> &PartCodec {
        match part {
            Part::Face => &self.face,
            Part::Body => &self.body,
            Part::Hand => &self.hand,
        }
    }

    /// Trains each part codec on windows cut from `seqs` (hop of half a
    /// window). Each part uses seed `opts.seed + index`.
    pub fn train(seqs: &[MotionSequence], config: &CodecConfig, opts: &TrainOptions) -> Result<(Self, [TrainLog; 3])> {
        let mut codecs = Vec::new();
        let mut logs = Vec::new();
        for (i, part) in Part::ALL.into_iter().enumerate() {
            let input = CodecInput::Part(part);
            let data = windows(seqs, input, config.window_length, config.window_length / 2);
            let o = TrainOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..opts.clone()
            };
            let (c, l) = train_codec(input, &data, config, &o)?;
            codecs.push(c);
            logs.push(l);
        }
        let hand = codecs.pop().expect("three codecs");
        let body = codecs.pop().expect("three codecs");
        let face = codecs.pop().expect("three codecs");
        let logs: [TrainLog; 3] = logs.try_into().expect("three logs");
        Ok((Self { face, body, hand }, logs))
    }

    pub fn encode(&self, m: &MotionSequence) -> Result<[PartTokenSeq; 3]> {
        Ok([
            self.face.encode_motion(m)?,
            self.body.encode_motion(m)?,
            self.hand.encode_motion(m)?,
        ])
    }

    /// Decodes equal-length part token sequences into `4·N` frames.
    pub fn decode(&self, face: &[u32], body: &[u32], hand: &[u32], fps: f64) -> Result<MotionSequence> {
        if face.len() != body.len() || face.len() != hand.len() {
            return Err(Error::shape(
                "decode",
                [face.len(); 3],
                [face.len(), body.len(), hand.len()],
            ));
        }
        MotionSequence::from_parts(
            fps,
            &self.face.decode(face)?,
            &self.body.decode(body)?,
            &self.hand.decode(hand)?,
        )
    }

    /// Encode + decode, truncated to the input length.
    pub fn reconstruct(&self, m: &MotionSequence) -> Result<MotionSequence> {
        let f = self.face.reconstruct(&m.part(Part::Face))?;
        let b = self.body.reconstruct(&m.part(Part::Body))?;
        let h = self.hand.reconstruct(&m.part(Part::Hand))?;
        MotionSequence::from_parts(m.fps, &f, &b, &h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "motion-tokenizer",
            "layout": LAYOUT,
            "parts": {
                "face": self.face.to_checkpoint()?.meta,
                "body": self.body.to_checkpoint()?.meta,
                "hand": self.hand.to_checkpoint()?.meta,
            },
        }));
        for part in Part::ALL {
            ck.extend_prefixed(part.name(), self.codec(part).to_checkpoint()?.tensors);
        }
        ck.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some("motion-tokenizer") {
            return Err(Error::Format("not a motion tokenizer checkpoint".into()));
        }
        let part = |p: Part| {
            let sub = Checkpoint {
                meta: ck.meta["parts"][p.name()].clone(),
                tensors: ck.prefixed(p.name()),
            };
            PartCodec::from_checkpoint(&sub)
        };
        Ok(Self {
            face: part(Part::Face)?,
            body: part(Part::Body)?,
            hand: part(Part::Hand)?,
        })
    }
}

/// Either the split tokenizer or one codec over all columns.
enum Variant {
    Split(MotionTokenizer),
    Single(PartCodec),
}

impl Variant {
    fn reconstruct(&self, m: &MotionSequence) -> Result<MotionSequence> {
        match self {
            Variant::Split(t) => t.reconstruct(m),
            Variant::Single(c) => MotionSequence::new(m.fps, c.reconstruct(m.data())?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub codebook_size: usize,
    pub split: bool,
    pub metrics: Reconstruction,
}

/// Mean reconstruction metrics over `eval` clips.
fn score(v: &Variant, eval: &[MotionSequence]) -> Result<Reconstruction> {
    if eval.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut acc = Reconstruction {
        mpjpe: 0.0,
        pampjpe: 0.0,
        accl: 0.0,
    };
    for m in eval {
        let r = motion_reconstruction(&v.reconstruct(m)?, m)?;
        acc.mpjpe += r.mpjpe / eval.len() as f64;
        acc.pampjpe += r.pampjpe / eval.len() as f64;
        acc.accl += r.accl / eval.len() as f64;
    }
    Ok(acc)
}

/// Single-vs-split comparison: one split row per codebook size in `sizes`,
/// plus a single-codec row at `config.codebook_size`. Every variant gets the
/// same training options.
pub fn ablate_single_vs_split(
    train: &[MotionSequence],
    eval: &[MotionSequence],
    config: &CodecConfig,
    opts: &TrainOptions,
    sizes: &[usize],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let single_cfg = config.clone();
    let data = windows(train, CodecInput::Whole, config.window_length, config.window_length / 2);
    let (single, _) = train_codec(CodecInput::Whole, &data, &single_cfg, opts)?;
    rows.push(AblationRow {
        label: "Single".into(),
        codebook_size: config.codebook_size,
        split: false,
        metrics: score(&Variant::Single(single), eval)?,
    });
    for &k in sizes {
        let cfg = CodecConfig {
            codebook_size: k,
            ..config.clone()
        };
        let (tok, _) = MotionTokenizer::train(train, &cfg, opts)?;
        rows.push(AblationRow {
            label: format!("K = {k}"),
            codebook_size: k,
            split: true,
            metrics: score(&Variant::Split(tok), eval)?,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(&RECONSTRUCTION_COLUMNS);
    for r in rows {
        t.push(
            r.label.clone(),
            vec![Some(r.metrics.mpjpe), Some(r.metrics.pampjpe), Some(r.metrics.accl)],
        );
    }
    t
}
