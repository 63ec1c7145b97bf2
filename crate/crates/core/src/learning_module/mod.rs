//! The evidence-based learning module.
//!
//! Every stored node of every model is a candidate location, paired with
//! the rotations that align the first sensed frame to the node's frame.
//! Each later observation moves all candidates by the sensed displacement
//! (rotated into their model frame) and scores how well the model explains
//! what is sensed there.

mod graph;
mod store;

use std::collections::BTreeMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{build_graph, update_graph, GraphNode, ObjectModel, SpatialIndex, INDEX_CELL};
pub use store::{ModelMemory, STORE_VERSION};

use crate::cmp::{
    FeatureValue, Features, Morphology, SenderType, StateMessage, FEATURE_CURVATURES, FEATURE_EVIDENCE,
    FEATURE_OBJECT_ID, FEATURE_RGBA,
};
use crate::environment::Action;
use crate::geometry::{align_frames, Displacement, GeometryError, Rotation, SurfaceFrame, Vec3, DEFAULT_DEGENERATE_SAMPLES};

pub type Models = BTreeMap<String, ObjectModel>;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("unknown feature `{0}`: no tolerance configured")]
    UnknownFeature(String),
    #[error("hypothesis space is empty")]
    EmptySpace,
    #[error("buffer holds no usable observation")]
    EmptyBuffer,
    #[error("displacement is not finite")]
    NonFiniteDisplacement,
    #[error("invalid object pose")]
    InvalidPose,
    #[error("message does not carry a surface frame")]
    NotAFrame,
    #[error("no model named `{0}`")]
    MissingModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("model store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("model store schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    /// Neighbor search radius around each search location (meters).
    pub max_match_distance: f64,
    pub feature_tolerances: BTreeMap<String, f64>,
    pub feature_weights: BTreeMap<String, f64>,
    pub percent_threshold: f64,
    pub n_degenerate_rotations: usize,
    pub dedup_distance: f64,
    /// Nodes whose normals differ by more than this are never merged.
    pub dedup_normal_angle_deg: f64,
    pub max_steps: usize,
    pub min_steps: usize,
    pub pose_distance: f64,
    pub pose_angle_deg: f64,
    /// Steps the possible-pose set of a single candidate object must stay
    /// nearly unchanged before it counts as a symmetric match; 0 disables.
    pub symmetry_steps: usize,
    pub vote_radius: f64,
    pub vote_angle_deg: f64,
    /// Share of the highest-evidence hypotheses sent as votes.
    pub vote_top_fraction: f64,
    /// Drop hypotheses further than this below the global maximum.
    pub prune_margin: Option<f64>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_match_distance: 0.01,
            feature_tolerances: BTreeMap::from([(FEATURE_RGBA.into(), 0.2), (FEATURE_CURVATURES.into(), 10.0)]),
            feature_weights: BTreeMap::from([(FEATURE_RGBA.into(), 0.5), (FEATURE_CURVATURES.into(), 0.5)]),
            percent_threshold: 0.2,
            n_degenerate_rotations: DEFAULT_DEGENERATE_SAMPLES,
            dedup_distance: 0.005,
            dedup_normal_angle_deg: 30.0,
            max_steps: 500,
            min_steps: 3,
            pose_distance: 0.01,
            pose_angle_deg: 10.0,
            symmetry_steps: 20,
            vote_radius: 0.01,
            vote_angle_deg: 30.0,
            vote_top_fraction: 0.2,
            prune_margin: None,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |m: &str| Err(LearningError::Config(m.into()));
        if !(self.percent_threshold > 0.0 && self.percent_threshold < 1.0) {
            return bad("percent_threshold must lie in (0, 1)");
        }
        if self.feature_weights.values().any(|w| !(*w >= 0.0)) {
            return bad("feature weights must be nonnegative");
        }
        let sum: f64 = self.feature_weights.values().sum();
        if !self.feature_weights.is_empty() && (sum - 1.0).abs() > 1e-9 {
            return bad("feature weights must sum to 1");
        }
        if let Some(name) = self.feature_weights.keys().find(|k| !self.feature_tolerances.contains_key(*k)) {
            return Err(LearningError::UnknownFeature(name.clone()));
        }
        if self.feature_tolerances.values().any(|t| !(*t > 0.0)) {
            return bad("feature tolerances must be positive");
        }
        if self.n_degenerate_rotations == 0 {
            return bad("n_degenerate_rotations must be at least 1");
        }
        if !(self.max_match_distance > 0.0) || !(self.dedup_distance >= 0.0) || !(self.vote_radius > 0.0) {
            return bad("distances must be positive");
        }
        if !(self.vote_top_fraction > 0.0 && self.vote_top_fraction <= 1.0) {
            return bad("vote_top_fraction must lie in (0, 1]");
        }
        if self.min_steps > self.max_steps {
            return bad("min_steps exceeds max_steps");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub message: StateMessage,
    pub action: Option<Action>,
}

/// Short-term memory of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub entries: Vec<BufferEntry>,
}

impl Buffer {
    pub fn push(&mut self, message: StateMessage, action: Option<Action>) {
        self.entries.push(BufferEntry { message, action });
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub object_id: String,
    /// Where the sensor currently is, in model coordinates.
    #[serde(with = "crate::geometry::vec3_serde")]
    pub location: Vec3,
    /// Model-to-body rotation.
    pub rotation: Rotation,
    pub evidence: f64,
}

/// Object pose in the body frame: `body = rotation·model + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub object_id: String,
    pub rotation: Rotation,
    #[serde(with = "crate::geometry::vec3_serde")]
    pub translation: Vec3,
}

impl ObjectPose {
    pub fn identity(object_id: &str) -> Self {
        Self {
            object_id: object_id.into(),
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_hypothesis(h: &Hypothesis, sensed_location: &Vec3) -> Self {
        Self {
            object_id: h.object_id.clone(),
            rotation: h.rotation,
            translation: sensed_location - h.rotation.apply(&h.location),
        }
    }
}

/// Hypotheses for one object, as parallel arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectHypotheses {
    pub object_id: String,
    pub locations: Vec<Vec3>,
    pub rotations: Vec<Rotation>,
    pub evidences: Vec<f64>,
}

impl ObjectHypotheses {
    pub fn len(&self) -> usize {
        self.evidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evidences.is_empty()
    }

    pub fn max_evidence(&self) -> f64 {
        self.evidences.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn hypothesis(&self, i: usize) -> Hypothesis {
        Hypothesis {
            object_id: self.object_id.clone(),
            location: self.locations[i],
            rotation: self.rotations[i],
            evidence: self.evidences[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HypothesisSpace {
    /// Sorted by object id.
    pub objects: Vec<ObjectHypotheses>,
    pub step: usize,
    /// Body-frame location of the latest observation.
    pub sensed_location: Vec3,
    possible_poses: Option<(String, Vec<usize>)>,
    /// Consecutive checks with an unchanged possible-pose set.
    pub stable_steps: usize,
}

impl HypothesisSpace {
    /// A space over the given objects (sorted by id on entry).
    pub fn from_objects(mut objects: Vec<ObjectHypotheses>, sensed_location: Vec3) -> Self {
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        Self {
            objects,
            sensed_location,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.objects.iter().map(ObjectHypotheses::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn object(&self, id: &str) -> Option<&ObjectHypotheses> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut ObjectHypotheses> {
        self.objects.iter_mut().find(|o| o.object_id == id)
    }

    /// Best evidence per object, in object order.
    pub fn object_evidences(&self) -> Vec<(&str, f64)> {
        self.objects
            .iter()
            .map(|o| (o.object_id.as_str(), o.max_evidence()))
            .collect()
    }
}

fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `Σ weight·max(0, 1 − distance/tolerance)` over the weighted features.
/// A feature missing on either side contributes nothing.
pub fn feature_evidence(
    sensed: &Features,
    stored: &BTreeMap<String, Vec<f64>>,
    config: &LmConfig,
) -> Result<f64, LearningError> {
    let mut total = 0.0;
    for (name, weight) in &config.feature_weights {
        let tol = config
            .feature_tolerances
            .get(name)
            .ok_or_else(|| LearningError::UnknownFeature(name.clone()))?;
        let (Some(FeatureValue::Vector(s)), Some(t)) = (sensed.get(name), stored.get(name)) else {
            continue;
        };
        total += weight * (1.0 - feature_distance(s, t) / tol).max(0.0);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Agreement of a sensed frame (already in model coordinates) with a node:
/// `0.5·cos θ_normal + 0.5·cos 2θ_curvature`, or the normal term alone when
/// either curvature direction is undefined.
pub fn morphology_evidence(sensed: &SurfaceFrame, sensed_degenerate: bool, stored: &GraphNode) -> f64 {
    let cos_pn = sensed.normal.dot(&stored.frame.normal).clamp(-1.0, 1.0);
    if sensed_degenerate || stored.degenerate() {
        return cos_pn;
    }
    let cos_cd = sensed.dir1.dot(&stored.frame.dir1).clamp(-1.0, 1.0);
    0.5 * cos_pn + 0.5 * (2.0 * cos_cd * cos_cd - 1.0)
}

fn sensed_frame(msg: &StateMessage) -> Result<&SurfaceFrame, LearningError> {
    msg.morph.frame().ok_or(LearningError::NotAFrame)
}

/// Two hypotheses per node (or `n_degenerate_rotations` where curvature
/// is undefined), with feature evidence as the starting count.
pub fn init_hypotheses(models: &Models, first: &StateMessage, config: &LmConfig) -> Result<HypothesisSpace, LearningError> {
    let frame = sensed_frame(first)?;
    let degenerate = first.is_degenerate();
    let mut objects = Vec::with_capacity(models.len());
    for (id, model) in models {
        let mut h = ObjectHypotheses {
            object_id: id.clone(),
            ..Default::default()
        };
        for node in model.nodes() {
            let ev = feature_evidence(&first.features, &node.features, config)?;
            let rots = align_frames(frame, &node.frame, degenerate || node.degenerate(), config.n_degenerate_rotations)?;
            for r in rots {
                h.locations.push(node.location);
                h.rotations.push(r);
                h.evidences.push(ev);
            }
        }
        objects.push(h);
    }
    Ok(HypothesisSpace {
        objects,
        step: 0,
        sensed_location: first.location,
        possible_poses: None,
        stable_steps: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn hypothesis_step(
    model: &ObjectModel,
    feature_ev: &[f64],
    sensed: &SurfaceFrame,
    degenerate: bool,
    delta: &Vec3,
    radius: f64,
    scratch: &mut Vec<usize>,
    location: &mut Vec3,
    evidence: &mut f64,
    rotation: &Rotation,
) {
    let search = *location + rotation.apply_inverse(delta);
    let local = sensed.rotated_inverse(rotation);
    model.neighbors(&search, radius, scratch);
    *evidence += if scratch.is_empty() {
        -1.0
    } else {
        scratch
            .iter()
            .map(|&i| morphology_evidence(&local, degenerate, &model.nodes()[i]) + feature_ev[i])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    *location = search;
}

fn update_object(
    h: &mut ObjectHypotheses,
    model: &ObjectModel,
    feature_ev: &[f64],
    sensed: &SurfaceFrame,
    degenerate: bool,
    delta: &Vec3,
    config: &LmConfig,
) {
    let radius = config.max_match_distance;
    #[cfg(feature = "parallel")]
    {
        h.locations
            .par_iter_mut()
            .zip(h.evidences.par_iter_mut())
            .zip(h.rotations.par_iter())
            .with_min_len(256)
            .for_each_init(Vec::new, |scratch, ((loc, ev), rot)| {
                hypothesis_step(model, feature_ev, sensed, degenerate, delta, radius, scratch, loc, ev, rot)
            });
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut scratch = Vec::new();
        for ((loc, ev), rot) in h.locations.iter_mut().zip(h.evidences.iter_mut()).zip(h.rotations.iter()) {
            hypothesis_step(model, feature_ev, sensed, degenerate, delta, radius, &mut scratch, loc, ev, rot);
        }
    }
}

/// Moves every hypothesis by the displacement and adds the best-neighbor
/// score (or −1 when nothing in the model is near the search location).
pub fn update_evidence(
    space: &mut HypothesisSpace,
    displacement: &Displacement,
    msg: &StateMessage,
    models: &Models,
    config: &LmConfig,
) -> Result<(), LearningError> {
    if !displacement.is_finite() {
        return Err(LearningError::NonFiniteDisplacement);
    }
    let frame = sensed_frame(msg)?;
    let degenerate = msg.is_degenerate();
    for h in &mut space.objects {
        let model = models
            .get(&h.object_id)
            .ok_or_else(|| LearningError::MissingModel(h.object_id.clone()))?;
        let feature_ev = model
            .nodes()
            .iter()
            .map(|n| feature_evidence(&msg.features, &n.features, config))
            .collect::<Result<Vec<f64>, _>>()?;
        update_object(h, model, &feature_ev, frame, degenerate, &displacement.delta, config);
    }
    space.step += 1;
    space.sensed_location = msg.location;
    if let Some(margin) = config.prune_margin {
        prune(space, margin);
    }
    Ok(())
}

fn prune(space: &mut HypothesisSpace, margin: f64) {
    let best = space
        .objects
        .iter()
        .map(ObjectHypotheses::max_evidence)
        .fold(f64::NEG_INFINITY, f64::max);
    for h in &mut space.objects {
        let keep: Vec<usize> = (0..h.len()).filter(|&i| h.evidences[i] >= best - margin).collect();
        if keep.len() == h.len() {
            continue;
        }
        h.locations = keep.iter().map(|&i| h.locations[i]).collect();
        h.rotations = keep.iter().map(|&i| h.rotations[i]).collect();
        h.evidences = keep.iter().map(|&i| h.evidences[i]).collect();
    }
}

/// Objects whose best evidence is positive and within the percent
/// threshold of the global maximum, in object order.
pub fn possible_matches(space: &HypothesisSpace, config: &LmConfig) -> Vec<String> {
    let evs = space.object_evidences();
    let best = evs.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best * (1.0 - config.percent_threshold);
    evs.into_iter()
        .filter(|&(_, e)| e > 0.0 && e >= cutoff)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Indices of the object's hypotheses passing the same threshold rule.
pub fn possible_poses(h: &ObjectHypotheses, config: &LmConfig) -> Vec<usize> {
    let best = h.max_evidence();
    let cutoff = best * (1.0 - config.percent_threshold);
    (0..h.len())
        .filter(|&i| h.evidences[i] > 0.0 && h.evidences[i] >= cutoff)
        .collect()
}

fn argmax(h: &ObjectHypotheses) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in h.evidences.iter().enumerate() {
        if best.is_none_or(|b| *e > h.evidences[b]) {
            best = Some(i);
        }
    }
    best
}

/// Global argmax; ties go to the first object id, then the lower index.
pub fn most_likely_hypothesis(space: &HypothesisSpace) -> Result<Hypothesis, LearningError> {
    let mut best: Option<(usize, usize)> = None;
    for (o, h) in space.objects.iter().enumerate() {
        if let Some(i) = argmax(h) {
            if best.is_none_or(|(bo, bi)| h.evidences[i] > space.objects[bo].evidences[bi]) {
                best = Some((o, i));
            }
        }
    }
    let (o, i) = best.ok_or(LearningError::EmptySpace)?;
    Ok(space.objects[o].hypothesis(i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Terminal {
    Match { hypothesis: Hypothesis },
    NoMatch,
    TimeOut,
    Continue,
}

impl Terminal {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Terminal::Continue)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Terminal::Match { .. } => "match",
            Terminal::NoMatch => "no_match",
            Terminal::TimeOut => "time_out",
            Terminal::Continue => "continue",
        }
    }
}

fn single_object_poses(space: &HypothesisSpace, config: &LmConfig) -> Option<(String, Vec<usize>)> {
    let possible = possible_matches(space, config);
    let [id] = possible.as_slice() else {
        return None;
    };
    let h = space.object(id)?;
    Some((id.clone(), possible_poses(h, config)))
}

/// Jaccard overlap between consecutive possible-pose sets above which a
/// step counts as stable.
pub const STABLE_OVERLAP: f64 = 0.9;

fn overlap(a: &[usize], b: &[usize]) -> f64 {
    // Both sorted ascending.
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    if union == 0 {
        1.0
    } else {
        common as f64 / union as f64
    }
}

/// Updates the stability counter behind the symmetric-match rule. Called
/// once per LM step, after evidence and votes are in.
pub fn track_possible_poses(space: &mut HypothesisSpace, config: &LmConfig) {
    let current = single_object_poses(space, config);
    let stable = match (&current, &space.possible_poses) {
        (Some((id, now)), Some((prev_id, prev))) => id == prev_id && overlap(now, prev) > STABLE_OVERLAP,
        _ => false,
    };
    space.stable_steps = if stable { space.stable_steps + 1 } else { 0 };
    space.possible_poses = current;
}

pub fn check_terminal(space: &HypothesisSpace, step: usize, config: &LmConfig) -> Terminal {
    if step >= config.max_steps {
        return Terminal::TimeOut;
    }
    if step < config.min_steps {
        return Terminal::Continue;
    }
    let possible = possible_matches(space, config);
    if possible.is_empty() {
        return Terminal::NoMatch;
    }
    let [id] = possible.as_slice() else {
        return Terminal::Continue;
    };
    let Some(h) = space.object(id) else {
        return Terminal::Continue;
    };
    let Some(best) = argmax(h) else {
        return Terminal::Continue;
    };
    let mlh = h.hypothesis(best);
    let mlh_pose = ObjectPose::from_hypothesis(&mlh, &space.sensed_location);
    let max_angle = config.pose_angle_deg.to_radians();
    let clustered = possible_poses(h, config).into_iter().all(|i| {
        let pose = ObjectPose::from_hypothesis(&h.hypothesis(i), &space.sensed_location);
        (pose.translation - mlh_pose.translation).norm() <= config.pose_distance
            && pose.rotation.geodesic_distance(&mlh_pose.rotation) <= max_angle
    });
    let symmetric = config.symmetry_steps > 0 && space.stable_steps >= config.symmetry_steps;
    if clustered || symmetric {
        Terminal::Match { hypothesis: mlh }
    } else {
        Terminal::Continue
    }
}

/// The module's answer as a CMP message: object id and rotation at the
/// body-frame location of the model origin.
pub fn lm_output(space: &HypothesisSpace, msg: &StateMessage, sender_id: &str) -> Result<StateMessage, LearningError> {
    let mlh = most_likely_hypothesis(space)?;
    let pose = ObjectPose::from_hypothesis(&mlh, &msg.location);
    let mut evs: Vec<f64> = space.object_evidences().into_iter().map(|e| e.1).collect();
    evs.sort_by(|a, b| b.total_cmp(a));
    let second = evs.get(1).copied().unwrap_or(0.0);
    let margin = mlh.evidence - second;
    let confidence = if margin > 0.0 && mlh.evidence.abs() > 0.0 {
        (margin / mlh.evidence.abs()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut features = Features::new();
    features.insert(FEATURE_OBJECT_ID.into(), FeatureValue::Symbol(mlh.object_id.clone()));
    features.insert(FEATURE_EVIDENCE.into(), FeatureValue::Vector(vec![mlh.evidence]));
    Ok(StateMessage {
        location: pose.translation,
        morph: Morphology::Rotation(mlh.rotation),
        features,
        confidence,
        use_state: true,
        sender_id: sender_id.into(),
        sender_type: SenderType::LearningModule,
    })
}

/// How a finished episode should be written to memory.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnTarget {
    /// Unsupervised: use the episode's own outcome.
    Outcome(Option<ObjectPose>),
    /// Labeled: store under `label`, observed at the given object pose.
    Supervised { label: String, pose: ObjectPose },
}

/// A learning module: buffer, long-term memory and the current episode's
/// hypothesis space.
#[derive(Debug, Clone)]
pub struct LearningModule {
    pub id: String,
    pub config: LmConfig,
    pub memory: ModelMemory,
    pub buffer: Buffer,
    pub space: Option<HypothesisSpace>,
    last_location: Option<Vec3>,
    /// Observations that updated evidence this episode.
    pub steps: usize,
}

impl LearningModule {
    pub fn new(id: impl Into<String>, config: LmConfig) -> Self {
        Self {
            id: id.into(),
            config,
            memory: ModelMemory::default(),
            buffer: Buffer::default(),
            space: None,
            last_location: None,
            steps: 0,
        }
    }

    /// Clears the buffer and hypotheses; memory persists.
    pub fn reset(&mut self) {
        self.buffer.clear();
        self.space = None;
        self.last_location = None;
        self.steps = 0;
    }

    /// Feeds one message; gated messages are ignored. Returns whether an
    /// LM step happened.
    pub fn observe(&mut self, msg: &StateMessage, action: Option<Action>) -> Result<bool, LearningError> {
        if !msg.use_state {
            return Ok(false);
        }
        match (&mut self.space, self.last_location) {
            (Some(space), Some(prev)) => {
                let d = Displacement { delta: msg.location - prev };
                update_evidence(space, &d, msg, &self.memory.models, &self.config)?;
            }
            _ => self.space = Some(init_hypotheses(&self.memory.models, msg, &self.config)?),
        }
        self.buffer.push(msg.clone(), action);
        self.last_location = Some(msg.location);
        self.steps += 1;
        if let Some(space) = &mut self.space {
            track_possible_poses(space, &self.config);
        }
        Ok(true)
    }

    /// Stores a message without inference, for the exploration phase.
    pub fn record(&mut self, msg: &StateMessage, action: Option<Action>) {
        if msg.use_state {
            self.buffer.push(msg.clone(), action);
        }
    }

    pub fn terminal(&self) -> Terminal {
        match &self.space {
            Some(space) => check_terminal(space, self.steps, &self.config),
            None if self.steps >= self.config.max_steps => Terminal::TimeOut,
            None => Terminal::Continue,
        }
    }

    pub fn output(&self, msg: &StateMessage) -> Option<StateMessage> {
        lm_output(self.space.as_ref()?, msg, &self.id).ok()
    }

    /// Object pose implied by the current most likely hypothesis.
    pub fn detected_pose(&self) -> Option<ObjectPose> {
        let space = self.space.as_ref()?;
        let mlh = most_likely_hypothesis(space).ok()?;
        Some(ObjectPose::from_hypothesis(&mlh, &space.sensed_location))
    }

    /// Writes the buffer into memory and returns the model id it went to.
    pub fn learn(&mut self, target: &LearnTarget, ground_truth: &str) -> Result<String, LearningError> {
        let id = match target {
            LearnTarget::Outcome(Some(pose)) => {
                let model = self
                    .memory
                    .models
                    .get_mut(&pose.object_id)
                    .ok_or_else(|| LearningError::MissingModel(pose.object_id.clone()))?;
                update_graph(model, &self.buffer, pose, &self.config)?;
                pose.object_id.clone()
            }
            LearnTarget::Outcome(None) => {
                let id = self.memory.next_new_id();
                let model = build_graph(&id, &self.buffer, &self.config)?;
                self.memory.models.insert(id.clone(), model);
                id
            }
            LearnTarget::Supervised { label, pose } => {
                let model = self
                    .memory
                    .models
                    .entry(label.clone())
                    .or_insert_with(|| ObjectModel::new(label.clone(), Vec::new()));
                update_graph(model, &self.buffer, pose, &self.config)?;
                if model.is_empty() {
                    self.memory.models.remove(label);
                    return Err(LearningError::EmptyBuffer);
                }
                label.clone()
            }
        };
        self.memory.record_episode(&id, ground_truth);
        Ok(id)
    }
}
