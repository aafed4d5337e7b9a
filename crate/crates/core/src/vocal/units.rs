use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semantic unit ids and pitch ids at a shared hop.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSeq {
    pub semantic_ids: Vec<u32>,
    pub pitch_ids: Vec<u32>,
}

impl UnitSeq {
    pub fn new(semantic_ids: Vec<u32>, pitch_ids: Vec<u32>) -> Result<Self> {
        if semantic_ids.len() != pitch_ids.len() {
            return Err(Error::shape("UnitSeq", semantic_ids.len(), pitch_ids.len()));
        }
        Ok(Self {
            semantic_ids,
            pitch_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.semantic_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic_ids.is_empty()
    }
}

/// One line of a unit file (JSON-lines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub clip_id: String,
    pub semantic_ids: Vec<u32>,
    pub pitch_ids: Vec<u32>,
    pub singer_id: String,
    pub hop_seconds: f64,
}

impl UnitRecord {
    pub fn units(&self) -> Result<UnitSeq> {
        UnitSeq::new(self.semantic_ids.clone(), self.pitch_ids.clone())
    }
}
