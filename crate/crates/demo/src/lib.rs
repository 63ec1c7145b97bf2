//! WebAssembly bindings for the browser demo. Every call returns JSON text.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sensorimotor::environment::library;
use sensorimotor::environment::{orbit_pose, sense_patch, CameraConfig, ObjectInstance, Scene, SceneObject};
use sensorimotor::geometry::{Pose, Vec3};
use sensorimotor::harness::{
    run_experiment, EpisodeResult, Exploration, ExperimentConfig, ExperimentState, Learning, Mode, ObjectEntry,
};
use sensorimotor::policies::SpiralConfig;
use sensorimotor::sensor_module::{SensorConfig, SensorModule};

/// Distance from the surface when sensing a patch (meters).
const PATCH_STANDOFF: f64 = 0.064;

fn object(label: &str) -> Result<SceneObject, String> {
    library::by_label(label).ok_or_else(|| format!("unknown object `{label}`"))
}

fn vec3(v: &Vec3) -> Value {
    json!([v.x, v.y, v.z])
}

fn direction(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
}

/// Labels of the built-in objects.
#[wasm_bindgen]
pub fn object_labels() -> String {
    let mut labels: Vec<String> = library::benchmark_objects().into_iter().map(|(l, _)| l).collect();
    labels.push("plain_cylinder".into());
    json!(labels).to_string()
}

/// Looks at `label` from the given direction and runs the sensor module on
/// the patch around the first surface hit: depth image, normal, principal
/// curvatures and degeneracy.
#[wasm_bindgen]
pub fn sense(label: &str, azimuth_deg: f64, elevation_deg: f64) -> Result<String, String> {
    let scene = Scene::single(ObjectInstance {
        object: object(label)?,
        pose: Pose::identity(),
        label: label.into(),
    });
    let camera = CameraConfig::patch();
    let far = orbit_pose(&direction(azimuth_deg, elevation_deg), 0.25, &Vec3::zeros());
    let probe = sense_patch(&scene, &far, &camera);
    let center = probe.center();
    if !center.on_object {
        return Ok(json!({ "on_object": false }).to_string());
    }
    let forward = probe.view_direction();
    let near = Pose::new(center.location - forward * PATCH_STANDOFF, far.orientation);
    let patch = sense_patch(&scene, &near, &camera);
    let depth: Vec<Vec<Value>> = (0..patch.height)
        .map(|r| {
            (0..patch.width)
                .map(|c| {
                    let p = patch.pixel(r, c);
                    if p.on_object {
                        json!(p.depth)
                    } else {
                        Value::Null
                    }
                })
                .collect()
        })
        .collect();
    let msg = SensorModule::new(SensorConfig::default()).process(&patch);
    let frame = msg.morph.frame();
    Ok(json!({
        "on_object": msg.use_state,
        "location": vec3(&msg.location),
        "normal": frame.map(|f| vec3(&f.normal)),
        "dir1": frame.map(|f| vec3(&f.dir1)),
        "principal_curvatures": msg.feature_vector("principal_curvatures"),
        "degenerate": msg.is_degenerate(),
        "confidence": msg.confidence,
        "depth": depth,
    })
    .to_string())
}

fn episode_json(r: &EpisodeResult) -> Value {
    json!({
        "terminal": r.terminal.name(),
        "detected": r.detected_label,
        "truth": r.ground_truth_label,
        "correct": r.correct(),
        "steps": r.steps,
        "rotation_error_deg": r.rotation_error,
        "evidence": r.evidence_trace(),
        "mlh": r.trace.iter().map(|s| s.lms[0].mlh_object.clone()).collect::<Vec<_>>(),
        "possible": r.trace.iter().map(|s| s.lms[0].possible.clone()).collect::<Vec<_>>(),
    })
}

/// A learning module trained on a chosen set of objects.
#[wasm_bindgen]
pub struct Demo {
    state: ExperimentState,
}

#[wasm_bindgen]
impl Demo {
    /// Learns each object in `labels_json` (a JSON list) by scanning it
    /// from `viewpoints` directions.
    #[wasm_bindgen(constructor)]
    pub fn new(labels_json: &str, viewpoints: usize) -> Result<Demo, String> {
        let labels: Vec<String> = serde_json::from_str(labels_json).map_err(|e| e.to_string())?;
        let config = ExperimentConfig {
            objects: labels.iter().map(|l| ObjectEntry::new(l, vec![[0.0; 3]])).collect(),
            mode: Mode::Train,
            learning: Learning::Supervised,
            exploration: Exploration::Scan {
                viewpoints: viewpoints.max(1),
                spiral: SpiralConfig::default(),
            },
            ..Default::default()
        };
        let mut state = ExperimentState::new(config).map_err(|e| e.to_string())?;
        run_experiment(&mut state).map_err(|e| e.to_string())?;
        Ok(Demo { state })
    }

    /// Ids of the learned models.
    pub fn models(&self) -> String {
        json!(self.state.lms[0].memory.models.keys().collect::<Vec<_>>()).to_string()
    }

    /// One inference episode on `label` rotated by Euler angles (degrees).
    pub fn recognize(&self, label: &str, rx: f64, ry: f64, rz: f64, seed: u64) -> Result<String, String> {
        let config = ExperimentConfig {
            objects: vec![ObjectEntry::new(label, vec![[rx, ry, rz]])],
            mode: Mode::Eval,
            seed,
            ..self.state.config.clone()
        };
        let mut state = self.state.with_config(config).map_err(|e| e.to_string())?;
        let results = run_experiment(&mut state).map_err(|e| e.to_string())?;
        Ok(episode_json(&results[0]).to_string())
    }

    /// Nodes of one model as `[x, y, z, nx, ny, nz, r, g, b]` rows.
    pub fn model(&self, id: &str) -> Result<String, String> {
        let model = self.state.lms[0]
            .memory
            .models
            .get(id)
            .ok_or_else(|| format!("no model `{id}`"))?;
        let rows: Vec<[f64; 9]> = model
            .nodes()
            .iter()
            .map(|n| {
                let c = n.features.get("rgba").map(Vec::as_slice).unwrap_or(&[0.5, 0.5, 0.5]);
                let l = n.location;
                let f = n.frame.normal;
                [l.x, l.y, l.z, f.x, f.y, f.z, c[0], c[1], c[2]]
            })
            .collect();
        Ok(json!(rows).to_string())
    }
}
