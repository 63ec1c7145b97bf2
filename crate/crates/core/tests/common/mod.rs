#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sensorimotor::cmp::{
    FeatureValue, Morphology, SenderType, StateMessage, FEATURE_CURVATURES, FEATURE_DEGENERATE, FEATURE_RGBA,
};
use sensorimotor::geometry::{align_frames, Rotation, SurfaceFrame, Vec3};
use sensorimotor::learning_module::{GraphNode, LmConfig, Models, ObjectModel};

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    Rotation::from_axis_angle(&unit(rng), rng.random_range(0.0..std::f64::consts::PI))
}

pub fn random_frame(rng: &mut ChaCha8Rng) -> SurfaceFrame {
    let n = unit(rng);
    let h = unit(rng);
    let d1 = h - n * h.dot(&n);
    if d1.norm() < 1e-3 {
        return SurfaceFrame::from_normal(&n);
    }
    SurfaceFrame::from_normal_dir1(n, d1.normalize())
}

pub fn random_node(rng: &mut ChaCha8Rng, extent: f64) -> GraphNode {
    let degenerate = rng.random_bool(0.2);
    let k1: f64 = rng.random_range(0.0..40.0);
    let k2 = if degenerate { k1 } else { rng.random_range(-10.0..k1) };
    GraphNode {
        location: Vec3::new(
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
        ),
        frame: random_frame(rng),
        features: BTreeMap::from([
            (FEATURE_RGBA.to_string(), vec![rng.random(), rng.random(), rng.random(), 1.0]),
            (FEATURE_CURVATURES.to_string(), vec![k1, k2]),
            (FEATURE_DEGENERATE.to_string(), vec![if degenerate { 1.0 } else { 0.0 }]),
        ]),
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, id: &str, count: usize) -> ObjectModel {
    ObjectModel::new(id, (0..count).map(|_| random_node(rng, 0.02)).collect())
}

pub fn message(location: Vec3, frame: SurfaceFrame, features: &BTreeMap<String, Vec<f64>>) -> StateMessage {
    StateMessage {
        location,
        morph: Morphology::Frame(frame),
        features: features
            .iter()
            .map(|(k, v)| (k.clone(), FeatureValue::Vector(v.clone())))
            .collect(),
        confidence: 1.0,
        use_state: true,
        sender_id: "sm_0".into(),
        sender_type: SenderType::SensorModule,
    }
}

/// Observations of `model` under a random pose: mostly nodes, sometimes
/// jittered or random points, with lightly perturbed features.
pub fn trajectory(rng: &mut ChaCha8Rng, model: &ObjectModel, pose: (&Rotation, &Vec3), len: usize) -> Vec<StateMessage> {
    let (r, t) = pose;
    (0..len)
        .map(|_| {
            let node = &model.nodes()[rng.random_range(0..model.len())];
            let roll: f64 = rng.random();
            let (loc, frame) = if roll < 0.7 {
                (node.location, node.frame)
            } else if roll < 0.9 {
                let jitter = unit(rng) * rng.random_range(0.0..0.008);
                (node.location + jitter, node.frame)
            } else {
                let other = random_node(rng, 0.03);
                (other.location, other.frame)
            };
            let mut features = node.features.clone();
            if rng.random_bool(0.3) {
                let rgba = features.get_mut(FEATURE_RGBA).unwrap();
                rgba[0] = (rgba[0] + rng.random_range(-0.15..0.15)).clamp(0.0, 1.0);
            }
            message(r.apply(&loc) + t, frame.rotated(r), &features)
        })
        .collect()
}

// Independent restatement of the evidence rules, written against the
// plain definitions with exhaustive neighbor scans.

pub fn oracle_feature_evidence(msg: &StateMessage, node: &GraphNode, config: &LmConfig) -> f64 {
    let mut total = 0.0;
    for (name, w) in &config.feature_weights {
        let tol = config.feature_tolerances[name];
        let (Some(FeatureValue::Vector(a)), Some(b)) = (msg.features.get(name), node.features.get(name)) else {
            continue;
        };
        if a.len() != b.len() {
            continue;
        }
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        total += w * (1.0 - d / tol).max(0.0);
    }
    total.clamp(0.0, 1.0)
}

fn degenerate_flag(v: Option<&Vec<f64>>) -> bool {
    v.and_then(|x| x.first()).is_some_and(|x| *x > 0.5)
}

pub fn oracle_morphology(normal: &Vec3, dir1: &Vec3, degenerate: bool, node: &GraphNode) -> f64 {
    let angle = |a: &Vec3, b: &Vec3| a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos();
    let cos_n = angle(normal, &node.frame.normal).cos();
    if degenerate || degenerate_flag(node.features.get(FEATURE_DEGENERATE)) {
        return cos_n;
    }
    0.5 * cos_n + 0.5 * (2.0 * angle(dir1, &node.frame.dir1)).cos()
}

#[derive(Debug, Clone)]
pub struct OracleHypothesis {
    pub object_id: String,
    pub start: Vec3,
    pub rotation: Rotation,
    pub evidence: f64,
}

/// Replays a whole trajectory from scratch. Hypothesis order matches the
/// module: object id, node, then candidate rotation.
pub fn oracle_replay(models: &Models, msgs: &[StateMessage], config: &LmConfig) -> Vec<OracleHypothesis> {
    let first = &msgs[0];
    let f0 = first.morph.frame().unwrap();
    let deg0 = first.is_degenerate();
    let mut out = Vec::new();
    for (id, model) in models {
        for node in model.nodes() {
            let node_deg = degenerate_flag(node.features.get(FEATURE_DEGENERATE));
            let rots = align_frames(f0, &node.frame, deg0 || node_deg, config.n_degenerate_rotations).unwrap();
            for r in rots {
                out.push(OracleHypothesis {
                    object_id: id.clone(),
                    start: node.location,
                    rotation: r,
                    evidence: oracle_feature_evidence(first, node, config),
                });
            }
        }
    }
    for msg in &msgs[1..] {
        let f = msg.morph.frame().unwrap();
        let deg = msg.is_degenerate();
        for h in &mut out {
            let model = &models[&h.object_id];
            // Absolute search location: start node plus the total displacement
            // carried into the model frame.
            let q = h.start + h.rotation.inverse().apply(&(msg.location - first.location));
            let n = h.rotation.inverse().apply(&f.normal);
            let d1 = h.rotation.inverse().apply(&f.dir1);
            let best = model
                .nodes()
                .iter()
                .filter(|node| (node.location - q).norm() <= config.max_match_distance)
                .map(|node| oracle_morphology(&n, &d1, deg, node) + oracle_feature_evidence(msg, node, config))
                .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
            h.evidence += best.unwrap_or(-1.0);
        }
    }
    out
}
