use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total pose-state width per frame.
pub const FRAME_DIM: usize = 259;
/// Column layout of a frame, in order.
pub const LAYOUT: &str = "jaw3|body63|hand90|expr100|trans3";

pub const JAW: std::ops::Range<usize> = 0..3;
pub const BODY: std::ops::Range<usize> = 3..66;
pub const HAND: std::ops::Range<usize> = 66..156;
pub const EXPRESSION: std::ops::Range<usize> = 156..256;
pub const TRANSLATION: std::ops::Range<usize> = 256..259;

const MOTION_MAGIC: &[u8; 8] = b"VMMOTN\0\x01";

/// The three tokenized body parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Face,
    Body,
    Hand,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Face, Part::Body, Part::Hand];

    /// Frame columns consumed by this part's codec: face = jaw + expression,
    /// body = body pose + global translation, hand = hand pose.
    pub fn columns(self) -> Vec<usize> {
        match self {
            Part::Face => JAW.chain(EXPRESSION).collect(),
            Part::Body => BODY.chain(TRANSLATION).collect(),
            Part::Hand => HAND.collect(),
        }
    }

    pub fn dim(self) -> usize {
        self.columns().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Face => "face",
            Part::Body => "body",
            Part::Hand => "hand",
        }
    }
}

/// Per-frame continuous pose state, `T × 259`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub fps: f64,
    frames: Vec<f64>,
}

impl MotionSequence {
    pub fn new(fps: f64, frames: Vec<f64>) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() || frames.len() % FRAME_DIM != 0 {
            return Err(Error::shape(
                "MotionSequence",
                format!("T x {FRAME_DIM}, T >= 1"),
                frames.len(),
            ));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "motion frame {} column {}",
                i / FRAME_DIM,
                i % FRAME_DIM
            )));
        }
        Ok(Self { fps, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len() / FRAME_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * FRAME_DIM..(t + 1) * FRAME_DIM]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.frames[t * FRAME_DIM..(t + 1) * FRAME_DIM]
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Self::new(self.fps, self.frames[start * FRAME_DIM..end * FRAME_DIM].to_vec())
    }

    /// `T × d_s` matrix of one part's columns, row-major.
    pub fn part(&self, part: Part) -> Vec<f64> {
        let cols = part.columns();
        let mut out = Vec::with_capacity(self.len() * cols.len());
        for t in 0..self.len() {
            let f = self.frame(t);
            out.extend(cols.iter().map(|&c| f[c]));
        }
        out
    }

    /// Reassembles a sequence from the three parts' `T × d_s` matrices.
    pub fn from_parts(fps: f64, face: &[f64], body: &[f64], hand: &[f64]) -> Result<Self> {
        let t = face.len() / Part::Face.dim();
        for (p, m) in [(Part::Face, face), (Part::Body, body), (Part::Hand, hand)] {
            if m.len() != t * p.dim() {
                return Err(Error::shape("from_parts", t * p.dim(), m.len()));
            }
        }
        let mut frames = vec![0.0; t * FRAME_DIM];
        for (p, m) in [(Part::Face, face), (Part::Body, body), (Part::Hand, hand)] {
            let cols = p.columns();
            let d = cols.len();
            for i in 0..t {
                for (j, &c) in cols.iter().enumerate() {
                    frames[i * FRAME_DIM + c] = m[i * d + j];
                }
            }
        }
        Self::new(fps, frames)
    }

    /// Writes the binary motion file: magic, `fps: f64`, `T: u64`,
    /// layout string (u32 length + UTF-8), then `T × 259` little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.frames.len() * 4);
        out.extend_from_slice(MOTION_MAGIC);
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(LAYOUT.len() as u32).to_le_bytes());
        out.extend_from_slice(LAYOUT.as_bytes());
        for &v in &self.frames {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic)?;
        if &magic != MOTION_MAGIC {
            return Err(Error::Format("not a motion file (bad magic)".into()));
        }
        let mut b8 = [0u8; 8];
        bytes.read_exact(&mut b8)?;
        let fps = f64::from_le_bytes(b8);
        bytes.read_exact(&mut b8)?;
        let t = u64::from_le_bytes(b8) as usize;
        let mut b4 = [0u8; 4];
        bytes.read_exact(&mut b4)?;
        let ll = u32::from_le_bytes(b4) as usize;
        let mut layout = vec![0u8; ll];
        bytes.read_exact(&mut layout)?;
        if layout != LAYOUT.as_bytes() {
            return Err(Error::Format(format!(
                "unsupported motion layout {:?}",
                String::from_utf8_lossy(&layout)
            )));
        }
        if bytes.len() != t * FRAME_DIM * 4 {
            return Err(Error::Format(format!(
                "motion payload has {} bytes, expected {}",
                bytes.len(),
                t * FRAME_DIM * 4
            )));
        }
        let frames = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::new(fps, frames)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Discrete tokens of one part at `1 / downsample` of the frame rate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartTokenSeq {
    pub part: Part,
    pub ids: Vec<u32>,
}
