//! Intra-modality interleaving, modality mixing, and the inference-time
//! decoupling scan.
//!
//! A mixed stream is `[start_vocal] (hubert pitch)* [start_motion]
//! (face body hand)* [end]`.

use serde::{Deserialize, Serialize};

use super::layout::{TokenKind, VocabLayout};
use crate::error::{Error, Result};
use crate::motion::{Part, PartTokenSeq};
use crate::vocal::UnitSeq;

/// A sequence of global token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub ids: Vec<u32>,
}

impl TokenStream {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rejects any id outside the layout.
    pub fn validate(&self, layout: &VocabLayout) -> Result<()> {
        match self.ids.iter().position(|&id| id >= layout.total()) {
            Some(p) => Err(Error::invalid(format!(
                "token {} at position {p} outside vocabulary of {}",
                self.ids[p],
                layout.total()
            ))),
            None => Ok(()),
        }
    }
}

/// `[f1, b1, h1, f2, b2, h2, ...]` with ids offset into the layout ranges.
pub fn interleave_motion(layout: &VocabLayout, face: &[u32], body: &[u32], hand: &[u32]) -> Result<TokenStream> {
    if face.len() != body.len() || face.len() != hand.len() {
        return Err(Error::shape(
            "interleave_motion",
            [face.len(); 3],
            [face.len(), body.len(), hand.len()],
        ));
    }
    let mut ids = Vec::with_capacity(3 * face.len());
    for i in 0..face.len() {
        ids.push(layout.encode(TokenKind::Face, face[i])?);
        ids.push(layout.encode(TokenKind::Body, body[i])?);
        ids.push(layout.encode(TokenKind::Hand, hand[i])?);
    }
    Ok(TokenStream { ids })
}

/// `[h1, p1, h2, p2, ...]` with ids offset into the layout ranges.
pub fn interleave_vocal(layout: &VocabLayout, semantic: &[u32], pitch: &[u32]) -> Result<TokenStream> {
    if semantic.len() != pitch.len() {
        return Err(Error::shape("interleave_vocal", semantic.len(), pitch.len()));
    }
    let mut ids = Vec::with_capacity(2 * semantic.len());
    for (&h, &p) in semantic.iter().zip(pitch) {
        ids.push(layout.encode(TokenKind::Hubert, h)?);
        ids.push(layout.encode(TokenKind::Pitch, p)?);
    }
    Ok(TokenStream { ids })
}

/// Inverse of [`interleave_motion`] for a well-formed block.
pub fn deinterleave_motion(layout: &VocabLayout, stream: &TokenStream) -> Result<[PartTokenSeq; 3]> {
    let report = scan_block(layout, &stream.ids, 0, MOTION_PATTERN, Policy::Strict)?;
    let mut parts = split_groups(&report.groups, 3);
    let hand = parts.pop().unwrap_or_default();
    let body = parts.pop().unwrap_or_default();
    let face = parts.pop().unwrap_or_default();
    if report.pending > 0 {
        return Err(Error::invalid(format!(
            "motion block ends with {} dangling tokens",
            report.pending
        )));
    }
    Ok([
        PartTokenSeq {
            part: Part::Face,
            ids: face,
        },
        PartTokenSeq {
            part: Part::Body,
            ids: body,
        },
        PartTokenSeq {
            part: Part::Hand,
            ids: hand,
        },
    ])
}

/// Inverse of [`interleave_vocal`] for a well-formed block.
pub fn deinterleave_vocal(layout: &VocabLayout, stream: &TokenStream) -> Result<UnitSeq> {
    let report = scan_block(layout, &stream.ids, 0, VOCAL_PATTERN, Policy::Strict)?;
    if report.pending > 0 {
        return Err(Error::invalid(format!(
            "vocal block ends with {} dangling tokens",
            report.pending
        )));
    }
    let mut parts = split_groups(&report.groups, 2);
    let pitch = parts.pop().unwrap_or_default();
    let semantic = parts.pop().unwrap_or_default();
    UnitSeq::new(semantic, pitch)
}

/// `[start_vocal] + vocal + [start_motion] + motion + [end]`.
pub fn mix(layout: &VocabLayout, vocal: &TokenStream, motion: &TokenStream) -> TokenStream {
    let s = layout.specials();
    let mut ids = Vec::with_capacity(vocal.len() + motion.len() + 3);
    ids.push(s.start_vocal);
    ids.extend_from_slice(&vocal.ids);
    ids.push(s.start_motion);
    ids.extend_from_slice(&motion.ids);
    ids.push(s.end);
    TokenStream { ids }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// The first pattern violation is an error.
    Strict,
    /// Misplaced tokens are skipped and logged.
    #[default]
    SkipAndLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupleConfig {
    pub policy: Policy,
    /// Seconds per (hubert, pitch) pair.
    pub hop_seconds: f64,
    /// Motion frames per (face, body, hand) triple.
    pub downsample: usize,
    pub fps: f64,
    /// Allowed difference between vocal and motion block durations.
    pub tolerance_seconds: f64,
}

impl Default for DecoupleConfig {
    fn default() -> Self {
        Self {
            policy: Policy::SkipAndLog,
            hop_seconds: 0.02,
            downsample: 4,
            fps: 20.0,
            tolerance_seconds: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub position: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecoupleWarning {
    MissingMotionBlock,
    MissingEnd,
    TokensAfterEnd { count: usize },
    DurationMismatch { vocal_seconds: f64, motion_seconds: f64 },
}

/// Result of separating a generated stream into modality sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupleReport {
    pub vocal: UnitSeq,
    pub motion: [PartTokenSeq; 3],
    pub violations: Vec<Violation>,
    /// Tokens of an incomplete group at the end of a block.
    pub truncated_tail: usize,
    /// Tokens of partial groups dropped when a violation forced a resync.
    pub discarded: usize,
    pub warnings: Vec<DecoupleWarning>,
}

impl DecoupleReport {
    pub fn face(&self) -> &[u32] {
        &self.motion[0].ids
    }

    pub fn body(&self) -> &[u32] {
        &self.motion[1].ids
    }

    pub fn hand(&self) -> &[u32] {
        &self.motion[2].ids
    }

    pub fn motion_len(&self) -> usize {
        self.motion[0].ids.len()
    }
}

const VOCAL_PATTERN: &[TokenKind] = &[TokenKind::Hubert, TokenKind::Pitch];
const MOTION_PATTERN: &[TokenKind] = &[TokenKind::Face, TokenKind::Body, TokenKind::Hand];

struct BlockScan {
    /// Completed groups of local indices.
    groups: Vec<u32>,
    pending: usize,
    discarded: usize,
    violations: Vec<Violation>,
}

fn describe(layout: &VocabLayout, id: u32) -> String {
    let s = layout.specials();
    match id {
        _ if id == s.start_vocal => "start_vocal".into(),
        _ if id == s.start_motion => "start_motion".into(),
        _ if id == s.end => "end".into(),
        _ if id == s.pad => "pad".into(),
        _ => layout
            .kind_of(id)
            .map_or_else(|| format!("out-of-vocabulary id {id}"), |k| k.name().into()),
    }
}

/// Periodic-pattern automaton over one block. On a mismatch the partial
/// group is dropped; a token of the pattern's first kind then opens a new
/// group, anything else is skipped. Each misplaced token is logged once.
fn scan_block(
    layout: &VocabLayout,
    ids: &[u32],
    base: usize,
    pattern: &[TokenKind],
    policy: Policy,
) -> Result<BlockScan> {
    let mut scan = BlockScan {
        groups: Vec::new(),
        pending: 0,
        discarded: 0,
        violations: Vec::new(),
    };
    let mut partial: Vec<u32> = Vec::with_capacity(pattern.len());
    for (off, &id) in ids.iter().enumerate() {
        let expected = pattern[partial.len()];
        match layout.decode(id) {
            Ok((kind, local)) if kind == expected => {
                partial.push(local);
                if partial.len() == pattern.len() {
                    scan.groups.append(&mut partial);
                }
            }
            decoded => {
                let position = base + off;
                let actual = describe(layout, id);
                if policy == Policy::Strict {
                    return Err(Error::Pattern {
                        position,
                        expected: expected.name().into(),
                        actual,
                    });
                }
                scan.violations.push(Violation {
                    position,
                    expected: expected.name().into(),
                    actual,
                });
                scan.discarded += partial.len();
                partial.clear();
                if let Ok((kind, local)) = decoded {
                    if kind == pattern[0] {
                        partial.push(local);
                    }
                }
            }
        }
    }
    scan.pending = partial.len();
    Ok(scan)
}

fn split_groups(flat: &[u32], period: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::with_capacity(flat.len() / period); period];
    for (i, &v) in flat.iter().enumerate() {
        out[i % period].push(v);
    }
    out
}

/// Separates a mixed stream back into vocal units and the three part
/// token sequences.
pub fn decouple(layout: &VocabLayout, stream: &TokenStream, cfg: &DecoupleConfig) -> Result<DecoupleReport> {
    let ids = &stream.ids;
    if ids.is_empty() {
        return Err(Error::invalid("cannot decouple an empty stream"));
    }
    let s = layout.specials();
    if ids[0] != s.start_vocal {
        return Err(Error::Pattern {
            position: 0,
            expected: "start_vocal".into(),
            actual: describe(layout, ids[0]),
        });
    }
    let end_pos = ids.iter().position(|&id| id == s.end);
    let body_end = end_pos.unwrap_or(ids.len());
    let motion_start = ids[1..body_end]
        .iter()
        .position(|&id| id == s.start_motion)
        .map(|p| p + 1);

    let mut warnings = Vec::new();
    let vocal_end = motion_start.unwrap_or(body_end);
    let vocal = scan_block(layout, &ids[1..vocal_end], 1, VOCAL_PATTERN, cfg.policy)?;
    let motion = match motion_start {
        Some(ms) => Some(scan_block(
            layout,
            &ids[ms + 1..body_end],
            ms + 1,
            MOTION_PATTERN,
            cfg.policy,
        )?),
        None => {
            warnings.push(DecoupleWarning::MissingMotionBlock);
            None
        }
    };
    match end_pos {
        None => warnings.push(DecoupleWarning::MissingEnd),
        Some(p) if p + 1 < ids.len() => warnings.push(DecoupleWarning::TokensAfterEnd {
            count: ids.len() - p - 1,
        }),
        Some(_) => {}
    }

    let mut vparts = split_groups(&vocal.groups, 2);
    let pitch = vparts.pop().unwrap_or_default();
    let semantic = vparts.pop().unwrap_or_default();
    let units = UnitSeq::new(semantic, pitch)?;

    let mut violations = vocal.violations;
    let mut truncated_tail = vocal.pending;
    let mut discarded = vocal.discarded;
    let (face, body, hand) = match motion {
        Some(m) => {
            violations.extend(m.violations);
            truncated_tail += m.pending;
            discarded += m.discarded;
            let mut mp = split_groups(&m.groups, 3);
            let hand = mp.pop().unwrap_or_default();
            let body = mp.pop().unwrap_or_default();
            let face = mp.pop().unwrap_or_default();
            let vocal_seconds = units.len() as f64 * cfg.hop_seconds;
            let motion_seconds = face.len() as f64 * cfg.downsample as f64 / cfg.fps;
            if (vocal_seconds - motion_seconds).abs() > cfg.tolerance_seconds {
                warnings.push(DecoupleWarning::DurationMismatch {
                    vocal_seconds,
                    motion_seconds,
                });
            }
            (face, body, hand)
        }
        None => Default::default(),
    };
    for w in &warnings {
        log::debug!("decouple: {w:?}");
    }
    Ok(DecoupleReport {
        vocal: units,
        motion: [
            PartTokenSeq {
                part: Part::Face,
                ids: face,
            },
            PartTokenSeq {
                part: Part::Body,
                ids: body,
            },
            PartTokenSeq {
                part: Part::Hand,
                ids: hand,
            },
        ],
        violations,
        truncated_tail,
        discarded,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> VocabLayout {
        VocabLayout::default()
    }

    fn lenient() -> DecoupleConfig {
        DecoupleConfig {
            tolerance_seconds: f64::INFINITY,
            ..DecoupleConfig::default()
        }
    }

    #[test]
    fn motion_interleave_order() {
        let l = layout();
        let s = interleave_motion(&l, &[1, 2], &[3, 4], &[5, 6]).unwrap();
        let f = l.range(TokenKind::Face).start;
        let b = l.range(TokenKind::Body).start;
        let h = l.range(TokenKind::Hand).start;
        assert_eq!(s.ids, vec![f + 1, b + 3, h + 5, f + 2, b + 4, h + 6]);
        assert!(interleave_motion(&l, &[], &[], &[]).unwrap().is_empty());
        assert!(interleave_motion(&l, &[1], &[], &[1]).is_err());
    }

    #[test]
    fn vocal_interleave_offsets() {
        let l = layout();
        let s = interleave_vocal(&l, &[7], &[3]).unwrap();
        assert_eq!(
            s.ids,
            vec![
                l.range(TokenKind::Hubert).start + 7,
                l.range(TokenKind::Pitch).start + 3
            ]
        );
        assert!(interleave_vocal(&l, &[], &[]).unwrap().is_empty());
        assert!(interleave_vocal(&l, &[1, 2], &[1]).is_err());
        assert!(interleave_vocal(&l, &[0], &[20]).is_err());
    }

    #[test]
    fn mix_shape() {
        let l = layout();
        let s = l.specials();
        let v = TokenStream::new(vec![10, 11]);
        let m = TokenStream::new(vec![600, 601, 602]);
        let mixed = mix(&l, &v, &m);
        assert_eq!(
            mixed.ids,
            vec![s.start_vocal, 10, 11, s.start_motion, 600, 601, 602, s.end]
        );
        let empty = mix(&l, &TokenStream::default(), &TokenStream::default());
        assert_eq!(empty.ids, vec![s.start_vocal, s.start_motion, s.end]);
    }

    #[test]
    fn well_formed_stream_recovers_exactly() {
        let l = layout();
        let v = interleave_vocal(&l, &[1, 2, 3], &[4, 5, 6]).unwrap();
        let m = interleave_motion(&l, &[7], &[8], &[9]).unwrap();
        let r = decouple(&l, &mix(&l, &v, &m), &lenient()).unwrap();
        assert_eq!(r.vocal.semantic_ids, vec![1, 2, 3]);
        assert_eq!(r.vocal.pitch_ids, vec![4, 5, 6]);
        assert_eq!((r.face(), r.body(), r.hand()), (&[7][..], &[8][..], &[9][..]));
        assert!(r.violations.is_empty());
        assert_eq!(r.truncated_tail, 0);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn misplaced_face_token_resyncs() {
        // Motion block [f, b, f, b, h] after an empty vocal block.
        let l = layout();
        let sp = l.specials();
        let f = l.range(TokenKind::Face).start;
        let b = l.range(TokenKind::Body).start;
        let h = l.range(TokenKind::Hand).start;
        let ids = vec![sp.start_vocal, sp.start_motion, f, b + 1, f + 2, b + 3, h + 4, sp.end];
        let r = decouple(&l, &TokenStream::new(ids), &lenient()).unwrap();
        assert_eq!(r.violations.len(), 1);
        // Position within the motion block is 2; absolute position is 4.
        assert_eq!(r.violations[0].position, 4);
        assert_eq!(r.violations[0].expected, "hand");
        assert_eq!(r.violations[0].actual, "face");
        assert_eq!(r.motion_len(), 1);
        assert_eq!((r.face(), r.body(), r.hand()), (&[2][..], &[3][..], &[4][..]));
        assert_eq!(r.discarded, 2);
        assert_eq!(r.truncated_tail, 0);
    }

    #[test]
    fn strict_policy_errors_on_first_violation() {
        let l = layout();
        let sp = l.specials();
        let p = l.range(TokenKind::Pitch).start;
        let ids = vec![sp.start_vocal, p, sp.start_motion, sp.end];
        let cfg = DecoupleConfig {
            policy: Policy::Strict,
            ..lenient()
        };
        match decouple(&l, &TokenStream::new(ids), &cfg) {
            Err(Error::Pattern { position, .. }) => assert_eq!(position, 1),
            other => panic!("expected pattern error, got {other:?}"),
        }
    }

    #[test]
    fn missing_motion_block_is_vocal_only() {
        let l = layout();
        let sp = l.specials();
        let mut ids = vec![sp.start_vocal];
        ids.extend(interleave_vocal(&l, &[1, 2], &[3, 4]).unwrap().ids);
        ids.push(sp.end);
        let r = decouple(&l, &TokenStream::new(ids), &lenient()).unwrap();
        assert_eq!(r.vocal.len(), 2);
        assert_eq!(r.motion_len(), 0);
        assert!(r.warnings.contains(&DecoupleWarning::MissingMotionBlock));
    }

    #[test]
    fn incomplete_tail_is_truncated() {
        let l = layout();
        let sp = l.specials();
        let mut ids = vec![sp.start_vocal];
        ids.extend(interleave_vocal(&l, &[1], &[3]).unwrap().ids);
        ids.push(l.range(TokenKind::Hubert).start + 9);
        ids.push(sp.start_motion);
        ids.extend(interleave_motion(&l, &[1, 2], &[1, 2], &[1, 2]).unwrap().ids);
        ids.pop();
        let r = decouple(&l, &TokenStream::new(ids), &lenient()).unwrap();
        assert_eq!(r.vocal.len(), 1);
        assert_eq!(r.motion_len(), 1);
        assert_eq!(r.truncated_tail, 3);
        assert!(r.warnings.contains(&DecoupleWarning::MissingEnd));
    }

    #[test]
    fn head_must_be_start_vocal() {
        let l = layout();
        assert!(decouple(&l, &TokenStream::new(vec![l.specials().start_motion]), &lenient()).is_err());
        assert!(decouple(&l, &TokenStream::default(), &lenient()).is_err());
    }

    #[test]
    fn duration_mismatch_flagged() {
        let l = layout();
        // 50 pairs = 1.0 s of vocals vs 1 triple = 0.2 s of motion.
        let v = interleave_vocal(&l, &[0; 50], &[0; 50]).unwrap();
        let m = interleave_motion(&l, &[0], &[0], &[0]).unwrap();
        let r = decouple(&l, &mix(&l, &v, &m), &DecoupleConfig::default()).unwrap();
        assert!(matches!(r.warnings[..], [DecoupleWarning::DurationMismatch { .. }]));
        // 5 triples = 1.0 s: consistent.
        let m = interleave_motion(&l, &[0; 5], &[0; 5], &[0; 5]).unwrap();
        let r = decouple(&l, &mix(&l, &v, &m), &DecoupleConfig::default()).unwrap();
        assert!(r.warnings.is_empty());
    }
}
