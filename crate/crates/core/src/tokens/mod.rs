//! Unified vocabulary and the token organization: interleaving within a
//! modality, mixing across modalities, and decoupling generated streams.

mod layout;
mod organize;

use serde::{Deserialize, Serialize};

pub use layout::{Specials, TokenKind, VocabLayout};
pub use organize::{
    decouple, deinterleave_motion, deinterleave_vocal, interleave_motion, interleave_vocal, mix, DecoupleConfig,
    DecoupleReport, DecoupleWarning, Policy, TokenStream, Violation,
};

/// One line of a token-stream file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub clip_id: String,
    pub ids: Vec<u32>,
}
