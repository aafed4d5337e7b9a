//! Evaluation reports (JSON) and table export (CSV).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// `{metric: value}` plus the configuration and feature-extractor provenance.
/// Undefined metrics are stored as `null` with the reason in `notes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, Option<f64>>,
    pub config: serde_json::Value,
    pub feature_extractor: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    /// Records a metric result; an error becomes `null` plus a note.
    pub fn record(&mut self, name: &str, value: Result<f64>) {
        match value {
            Ok(v) => {
                self.metrics.insert(name.into(), Some(v));
            }
            Err(e) => {
                self.metrics.insert(name.into(), None);
                self.notes.insert(name.into(), e.to_string());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Column sets mirroring the published comparison tables.
pub const GENERATION_COLUMNS: [&str; 5] = ["FID", "DIV", "BC", "MSE", "LVD"];
pub const RECONSTRUCTION_COLUMNS: [&str; 3] = ["MPJPE", "PAMPJPE", "ACCL"];
pub const VOCAL_COLUMNS: [&str; 3] = ["CER", "GPE", "VDE"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
    }

    /// Empty cells for undefined values; labels containing commas or quotes
    /// are quoted.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("method");
        for c in &self.columns {
            out.push(',');
            out.push_str(&quote(c));
        }
        out.push('\n');
        for (label, vals) in &self.rows {
            out.push_str(&quote(label));
            for v in vals {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}
