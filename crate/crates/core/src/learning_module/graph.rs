//! Graph object models: feature-annotated surface points in the model's
//! reference frame.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Buffer, LearningError, LmConfig, ObjectPose};
use crate::cmp::{FeatureValue, Morphology, StateMessage, FEATURE_DEGENERATE};
use crate::geometry::{vec3_serde, SurfaceFrame, Vec3, FRAME_TOLERANCE};

/// Edge length of the spatial index cells (meters).
pub const INDEX_CELL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    #[serde(with = "vec3_serde")]
    pub location: Vec3,
    pub frame: SurfaceFrame,
    pub features: BTreeMap<String, Vec<f64>>,
}

impl GraphNode {
    pub fn degenerate(&self) -> bool {
        self.features
            .get(FEATURE_DEGENERATE)
            .and_then(|v| v.first())
            .is_some_and(|&d| d > 0.5)
    }

    /// Node built from a sensor message; symbols are dropped.
    pub fn from_message(msg: &StateMessage) -> Option<Self> {
        let Morphology::Frame(frame) = msg.morph else {
            return None;
        };
        let features = msg
            .features
            .iter()
            .filter_map(|(k, v)| match v {
                FeatureValue::Vector(x) => Some((k.clone(), x.clone())),
                FeatureValue::Symbol(_) => None,
            })
            .collect();
        Some(Self {
            location: msg.location,
            frame,
            features,
        })
    }
}

/// Uniform voxel grid over node locations.
#[derive(Debug, Clone, Default)]
pub struct SpatialIndex {
    cells: HashMap<[i64; 3], Vec<u32>>,
}

fn cell_of(p: &Vec3) -> [i64; 3] {
    [
        (p.x / INDEX_CELL).floor() as i64,
        (p.y / INDEX_CELL).floor() as i64,
        (p.z / INDEX_CELL).floor() as i64,
    ]
}

impl SpatialIndex {
    pub fn build(points: impl Iterator<Item = Vec3>) -> Self {
        let mut index = Self::default();
        for (i, p) in points.enumerate() {
            index.insert(i, &p);
        }
        index
    }

    fn insert(&mut self, i: usize, p: &Vec3) {
        self.cells.entry(cell_of(p)).or_default().push(i as u32);
    }

    /// Indices of indexed points within `radius` of `q`, in ascending order.
    pub fn within(&self, points: impl Fn(usize) -> Vec3, q: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if !q.iter().all(|c| c.is_finite()) {
            return;
        }
        let reach = (radius / INDEX_CELL).ceil() as i64;
        let c = cell_of(q);
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            if (points(i as usize) - q).norm_squared() <= r2 {
                                out.push(i as usize);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObjectModelData {
    object_id: String,
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "ObjectModelData", into = "ObjectModelData")]
pub struct ObjectModel {
    pub object_id: String,
    nodes: Vec<GraphNode>,
    /// Links between temporally consecutive nodes.
    pub edges: Vec<(usize, usize)>,
    index: SpatialIndex,
}

impl PartialEq for ObjectModel {
    fn eq(&self, other: &Self) -> bool {
        self.object_id == other.object_id && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl From<ObjectModelData> for ObjectModel {
    fn from(d: ObjectModelData) -> Self {
        let mut m = ObjectModel::new(d.object_id, d.nodes);
        m.edges = d.edges;
        m
    }
}

impl From<ObjectModel> for ObjectModelData {
    fn from(m: ObjectModel) -> Self {
        Self {
            object_id: m.object_id,
            nodes: m.nodes,
            edges: m.edges,
        }
    }
}

impl ObjectModel {
    pub fn new(object_id: impl Into<String>, nodes: Vec<GraphNode>) -> Self {
        let index = SpatialIndex::build(nodes.iter().map(|n| n.location));
        Self {
            object_id: object_id.into(),
            nodes,
            edges: Vec::new(),
            index,
        }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, q: &Vec3, radius: f64, out: &mut Vec<usize>) {
        self.index.within(|i| self.nodes[i].location, q, radius, out);
    }

    /// Distance from `q` to the closest node.
    pub fn nearest_distance(&self, q: &Vec3) -> f64 {
        self.nodes
            .iter()
            .map(|n| (n.location - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// True when some node is a near duplicate of `candidate`.
    pub fn has_duplicate(&self, candidate: &GraphNode, config: &LmConfig) -> bool {
        let mut near = Vec::new();
        self.neighbors(&candidate.location, config.dedup_distance, &mut near);
        near.iter().any(|&i| is_duplicate(&self.nodes[i], candidate, config))
    }

    /// Inserts unless a near duplicate exists; returns whether it was added.
    pub fn insert(&mut self, node: GraphNode, config: &LmConfig) -> bool {
        if self.has_duplicate(&node, config) {
            return false;
        }
        let i = self.nodes.len();
        self.index.insert(i, &node.location);
        self.nodes.push(node);
        true
    }

    /// Every pair of nodes passes the dedup rule.
    pub fn dedup_invariant_holds(&self, config: &LmConfig) -> bool {
        self.nodes.iter().enumerate().all(|(i, a)| {
            self.nodes[i + 1..]
                .iter()
                .all(|b| (a.location - b.location).norm() > config.dedup_distance || !is_duplicate(a, b, config))
        })
    }
}

fn is_duplicate(a: &GraphNode, b: &GraphNode, config: &LmConfig) -> bool {
    if (a.location - b.location).norm() > config.dedup_distance {
        return false;
    }
    if a.frame.normal.dot(&b.frame.normal) < config.dedup_normal_angle_deg.to_radians().cos() {
        return false;
    }
    config.feature_tolerances.iter().all(|(name, tol)| {
        match (a.features.get(name), b.features.get(name)) {
            (Some(x), Some(y)) if x.len() == y.len() => {
                x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() < *tol
            }
            (None, None) => true,
            _ => false,
        }
    })
}

fn insert_all(model: &mut ObjectModel, nodes: impl Iterator<Item = GraphNode>, config: &LmConfig) {
    let mut last: Option<usize> = None;
    for node in nodes {
        if !node.frame.is_orthonormal(FRAME_TOLERANCE) {
            continue;
        }
        if model.insert(node, config) {
            let i = model.len() - 1;
            if let Some(prev) = last {
                model.edges.push((prev, i));
            }
            last = Some(i);
        }
    }
}

/// Model from the buffer's used observations, in the body frame of the
/// learning episode.
pub fn build_graph(object_id: &str, buffer: &Buffer, config: &LmConfig) -> Result<ObjectModel, LearningError> {
    let nodes: Vec<GraphNode> = buffer
        .entries
        .iter()
        .filter(|e| e.message.use_state)
        .filter_map(|e| GraphNode::from_message(&e.message))
        .collect();
    if nodes.is_empty() {
        return Err(LearningError::EmptyBuffer);
    }
    let mut model = ObjectModel::new(object_id, Vec::new());
    insert_all(&mut model, nodes.into_iter(), config);
    Ok(model)
}

/// Adds the buffer's observations, mapped into the model frame through
/// the inverse of the detected object pose.
pub fn update_graph(
    model: &mut ObjectModel,
    buffer: &Buffer,
    pose: &ObjectPose,
    config: &LmConfig,
) -> Result<usize, LearningError> {
    if !pose.rotation.is_valid(FRAME_TOLERANCE) || !pose.translation.iter().all(|c| c.is_finite()) {
        return Err(LearningError::InvalidPose);
    }
    let before = model.len();
    let nodes = buffer
        .entries
        .iter()
        .filter(|e| e.message.use_state)
        .filter_map(|e| GraphNode::from_message(&e.message))
        .map(|mut n| {
            n.location = pose.rotation.apply_inverse(&(n.location - pose.translation));
            n.frame = n.frame.rotated_inverse(&pose.rotation);
            n
        });
    insert_all(model, nodes, config);
    Ok(model.len() - before)
}
