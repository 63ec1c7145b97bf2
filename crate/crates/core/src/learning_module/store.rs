//! Long-term memory of one LM and its JSON file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LearningError, Models, ObjectModel};

pub const STORE_VERSION: u32 = 1;

/// Learned models plus the two bookkeeping lists pairing each learning
/// episode's model with the object actually shown. The lists are for
/// analysis only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMemory {
    pub models: Models,
    pub learned: Vec<String>,
    pub ground_truth: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreFile {
    version: u32,
    lm_id: String,
    models: Vec<ObjectModel>,
    learned: Vec<String>,
    ground_truth: Vec<String>,
}

impl ModelMemory {
    /// `new_object_<k>` for the first unused `k`.
    pub fn next_new_id(&self) -> String {
        (0..)
            .map(|k| format!("new_object_{k}"))
            .find(|id| !self.models.contains_key(id))
            .expect("unbounded range")
    }

    pub fn record_episode(&mut self, model_id: &str, ground_truth: &str) {
        self.learned.push(model_id.into());
        self.ground_truth.push(ground_truth.into());
    }

    /// Ground-truth label most often paired with `model_id`; ties go to the
    /// alphabetically first label.
    pub fn label_of(&self, model_id: &str) -> Option<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (m, g) in self.learned.iter().zip(&self.ground_truth) {
            if m == model_id {
                *counts.entry(g).or_default() += 1;
            }
        }
        let mut best: Option<(&str, usize)> = None;
        for (label, n) in counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((label, n));
            }
        }
        best.map(|(l, _)| l.to_string())
    }

    pub fn to_json(&self, lm_id: &str) -> String {
        let file = StoreFile {
            version: STORE_VERSION,
            lm_id: lm_id.into(),
            models: self.models.values().cloned().collect(),
            learned: self.learned.clone(),
            ground_truth: self.ground_truth.clone(),
        };
        serde_json::to_string_pretty(&file).expect("models serialize")
    }

    /// Parses a store; returns the LM id alongside the memory.
    pub fn from_json(text: &str) -> Result<(String, Self), LearningError> {
        let file: StoreFile = serde_json::from_str(text).map_err(|e| LearningError::Schema(e.to_string()))?;
        if file.version != STORE_VERSION {
            return Err(LearningError::Schema(format!("unsupported version {}", file.version)));
        }
        if file.learned.len() != file.ground_truth.len() {
            return Err(LearningError::Schema("bookkeeping lists differ in length".into()));
        }
        let mut models = Models::new();
        for m in file.models {
            if !m.nodes().iter().all(|n| n.frame.is_orthonormal(crate::geometry::FRAME_TOLERANCE)) {
                return Err(LearningError::Schema(format!("model `{}` has a non-orthonormal frame", m.object_id)));
            }
            if models.insert(m.object_id.clone(), m).is_some() {
                return Err(LearningError::Schema("duplicate model id".into()));
            }
        }
        Ok((
            file.lm_id,
            Self {
                models,
                learned: file.learned,
                ground_truth: file.ground_truth,
            },
        ))
    }

    pub fn save(&self, lm_id: &str, path: &Path) -> Result<(), LearningError> {
        fs::write(path, self.to_json(lm_id))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(String, Self), LearningError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
