//! The message type every component speaks: a feature at a pose.
//!
//! Messages serialize to single-line JSON. Reals are written as shortest
//! round-trip decimal strings, so `decode(encode(m)) == m` bit for bit.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vec3_serde, Rotation, SurfaceFrame, Vec3, FRAME_TOLERANCE};

pub const FEATURE_RGBA: &str = "rgba";
pub const FEATURE_CURVATURES: &str = "principal_curvatures";
pub const FEATURE_DEGENERATE: &str = "curvature_degenerate";
pub const FEATURE_OBJECT_ID: &str = "object_id";
pub const FEATURE_EVIDENCE: &str = "evidence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SenderType {
    #[serde(rename = "SM")]
    SensorModule,
    #[serde(rename = "LM")]
    LearningModule,
}

/// Orientation carried by a message: a sensed surface frame or an object
/// rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    Frame(SurfaceFrame),
    Rotation(Rotation),
}

impl Morphology {
    pub fn frame(&self) -> Option<&SurfaceFrame> {
        match self {
            Morphology::Frame(f) => Some(f),
            Morphology::Rotation(_) => None,
        }
    }

    fn is_orthonormal(&self) -> bool {
        match self {
            Morphology::Frame(f) => f.is_orthonormal(FRAME_TOLERANCE),
            Morphology::Rotation(r) => r.is_valid(FRAME_TOLERANCE),
        }
    }
}

/// A pose-independent feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Vector(Vec<f64>),
    Symbol(String),
}

impl FeatureValue {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            FeatureValue::Vector(v) => Some(v),
            FeatureValue::Symbol(_) => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            FeatureValue::Symbol(s) => Some(s),
            FeatureValue::Vector(_) => None,
        }
    }
}

impl From<Vec<f64>> for FeatureValue {
    fn from(v: Vec<f64>) -> Self {
        FeatureValue::Vector(v)
    }
}

pub type Features = BTreeMap<String, FeatureValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    #[serde(with = "vec3_serde")]
    pub location: Vec3,
    pub morph: Morphology,
    pub features: Features,
    pub confidence: f64,
    pub use_state: bool,
    pub sender_id: String,
    pub sender_type: SenderType,
}

impl StateMessage {
    pub fn feature_vector(&self, name: &str) -> Option<&[f64]> {
        self.features.get(name).and_then(FeatureValue::as_vector)
    }

    /// True when the sender flagged the curvature directions as undefined.
    pub fn is_degenerate(&self) -> bool {
        is_degenerate(&self.features)
    }
}

pub fn is_degenerate(features: &Features) -> bool {
    features
        .get(FEATURE_DEGENERATE)
        .and_then(FeatureValue::as_vector)
        .and_then(|v| v.first())
        .is_some_and(|&d| d > 0.5)
}

/// A target pose plus desired features for the motor system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalState(pub StateMessage);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub object_id: String,
    /// Model-frame location.
    #[serde(with = "vec3_serde")]
    pub location: Vec3,
    pub rotation: Rotation,
    /// Scaled to `[-1, 1]`.
    pub evidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotePacket {
    pub sender_id: String,
    #[serde(with = "vec3_serde")]
    pub sender_sensed_location: Vec3,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ConfidenceOutOfRange,
    FrameNotOrthonormal,
    EmptySenderId,
    NonFiniteLocation,
    NonFiniteFeature(String),
    VoteEvidenceOutOfRange(usize),
    VoteRotationInvalid(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ConfidenceOutOfRange => f.write_str("confidence out of range"),
            Violation::FrameNotOrthonormal => f.write_str("frame not orthonormal"),
            Violation::EmptySenderId => f.write_str("sender id is empty"),
            Violation::NonFiniteLocation => f.write_str("location is not finite"),
            Violation::NonFiniteFeature(name) => write!(f, "feature {name} is not finite"),
            Violation::VoteEvidenceOutOfRange(i) => write!(f, "vote {i} evidence out of range"),
            Violation::VoteRotationInvalid(i) => write!(f, "vote {i} rotation not orthonormal"),
        }
    }
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Every invariant violation in `msg`; `Ok` iff there are none.
pub fn validate(msg: &StateMessage) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if !(0.0..=1.0).contains(&msg.confidence) {
        out.push(Violation::ConfidenceOutOfRange);
    }
    if !msg.morph.is_orthonormal() {
        out.push(Violation::FrameNotOrthonormal);
    }
    if msg.sender_id.is_empty() {
        out.push(Violation::EmptySenderId);
    }
    if !finite(&msg.location) {
        out.push(Violation::NonFiniteLocation);
    }
    for (name, value) in &msg.features {
        if let FeatureValue::Vector(v) = value {
            if v.iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFiniteFeature(name.clone()));
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn validate_votes(packet: &VotePacket) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if packet.sender_id.is_empty() {
        out.push(Violation::EmptySenderId);
    }
    if !finite(&packet.sender_sensed_location) {
        out.push(Violation::NonFiniteLocation);
    }
    for (i, vote) in packet.votes.iter().enumerate() {
        if !(-1.0..=1.0).contains(&vote.evidence) {
            out.push(Violation::VoteEvidenceOutOfRange(i));
        }
        if !vote.rotation.is_valid(FRAME_TOLERANCE) {
            out.push(Violation::VoteRotationInvalid(i));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Error)]
#[error("malformed message at byte {offset}: {message}")]
pub struct CodecError {
    pub offset: usize,
    pub message: String,
}

/// One JSON line, without the trailing newline.
pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("messages always serialize")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    serde_json::from_slice(bytes).map_err(|e| CodecError {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = bytes
        .split_inclusive(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

/// Anything that can appear in the CMP traffic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CmpRecord {
    State(StateMessage),
    Votes(VotePacket),
}
