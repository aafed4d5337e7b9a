use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a token in the unified vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Special,
    Hubert,
    Pitch,
    Face,
    Body,
    Hand,
}

impl TokenKind {
    pub const ALL: [TokenKind; 6] = [
        TokenKind::Special,
        TokenKind::Hubert,
        TokenKind::Pitch,
        TokenKind::Face,
        TokenKind::Body,
        TokenKind::Hand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Special => "special",
            TokenKind::Hubert => "hubert",
            TokenKind::Pitch => "pitch",
            TokenKind::Face => "face",
            TokenKind::Body => "body",
            TokenKind::Hand => "hand",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown token kind {s:?}")))
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ids of the special tokens, all inside the `special` range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub start_vocal: u32,
    pub start_motion: u32,
    pub end: u32,
    pub pad: u32,
}

/// Partition of `[0, total)` into one contiguous id range per token kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutJson", into = "LayoutJson")]
pub struct VocabLayout {
    ranges: Vec<(TokenKind, Range<u32>)>,
    specials: Specials,
}

#[derive(Serialize, Deserialize)]
struct LayoutJson {
    ranges: BTreeMap<String, [u32; 2]>,
    specials: Specials,
}

impl From<VocabLayout> for LayoutJson {
    fn from(l: VocabLayout) -> Self {
        LayoutJson {
            ranges: l
                .ranges
                .iter()
                .map(|(k, r)| (k.name().to_string(), [r.start, r.end]))
                .collect(),
            specials: l.specials,
        }
    }
}

impl TryFrom<LayoutJson> for VocabLayout {
    type Error = Error;

    fn try_from(j: LayoutJson) -> Result<Self> {
        let mut ranges = Vec::new();
        for (k, [lo, hi]) in j.ranges {
            ranges.push((TokenKind::parse(&k)?, lo..hi));
        }
        ranges.sort_by_key(|(_, r)| r.start);
        let layout = VocabLayout {
            ranges,
            specials: j.specials,
        };
        layout.validate()?;
        Ok(layout)
    }
}

impl Default for VocabLayout {
    fn default() -> Self {
        Self::with_widths(500, 20, 512, 512, 512)
    }
}

impl VocabLayout {
    pub const SPECIAL_WIDTH: u32 = 4;

    /// Layout `[special | hubert | pitch | face | body | hand]`.
    pub fn with_widths(hubert: u32, pitch: u32, face: u32, body: u32, hand: u32) -> Self {
        let mut lo = 0;
        let mut ranges = Vec::new();
        for (k, w) in [
            (TokenKind::Special, Self::SPECIAL_WIDTH),
            (TokenKind::Hubert, hubert),
            (TokenKind::Pitch, pitch),
            (TokenKind::Face, face),
            (TokenKind::Body, body),
            (TokenKind::Hand, hand),
        ] {
            ranges.push((k, lo..lo + w));
            lo += w;
        }
        Self {
            ranges,
            specials: Specials {
                start_vocal: 0,
                start_motion: 1,
                end: 2,
                pad: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for k in TokenKind::ALL {
            if !self.ranges.iter().any(|(kk, _)| *kk == k) {
                return Err(Error::Format(format!("layout has no range for {k}")));
            }
        }
        if self.ranges.len() != TokenKind::ALL.len() {
            return Err(Error::Format("layout has duplicate kinds".into()));
        }
        for (k, r) in &self.ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::Format(format!(
                    "layout range for {k} is {}..{}, expected to start at {next} and be nonempty",
                    r.start, r.end
                )));
            }
            next = r.end;
        }
        let s = self.specials;
        let sr = self.range(TokenKind::Special);
        let ids = [s.start_vocal, s.start_motion, s.end, s.pad];
        for (i, id) in ids.iter().enumerate() {
            if !sr.contains(id) || ids[..i].contains(id) {
                return Err(Error::Format(format!("special id {id} invalid or duplicated")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u32 {
        self.ranges.last().map_or(0, |(_, r)| r.end)
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn range(&self, kind: TokenKind) -> Range<u32> {
        self.ranges
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, r)| r.clone())
            .expect("validated layout has every kind")
    }

    pub fn width(&self, kind: TokenKind) -> u32 {
        let r = self.range(kind);
        r.end - r.start
    }

    /// Global id of local index `local` within `kind`.
    pub fn encode(&self, kind: TokenKind, local: u32) -> Result<u32> {
        let r = self.range(kind);
        if local >= r.end - r.start {
            return Err(Error::invalid(format!(
                "{kind} index {local} outside width {}",
                r.end - r.start
            )));
        }
        Ok(r.start + local)
    }

    /// `(kind, local index)` of a global id.
    pub fn decode(&self, id: u32) -> Result<(TokenKind, u32)> {
        self.ranges
            .iter()
            .find(|(_, r)| r.contains(&id))
            .map(|(k, r)| (*k, id - r.start))
            .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of {}", self.total())))
    }

    pub fn kind_of(&self, id: u32) -> Option<TokenKind> {
        self.decode(id).ok().map(|(k, _)| k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
