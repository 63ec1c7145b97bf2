//! The motor system: model-free exploration policies, positioning
//! routines and the translation of goal states into actions.
//!
//! Nothing here reads object models except `hypothesis_test_goal`, which
//! runs on the learning-module side and only hands a goal state over.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{Features, GoalState, Morphology, SenderType, StateMessage};
use crate::environment::{
    apply_action, look_rotation, sense_patch, Action, AgentKind, AgentState, CameraConfig, Patch, Scene,
};
use crate::geometry::{Pose, SurfaceFrame, Vec3};
use crate::learning_module::{
    most_likely_hypothesis, possible_poses, HypothesisSpace, LmConfig, Models, ObjectHypotheses, ObjectPose,
};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("goal is unreachable: no surface at the target")]
    Unreachable,
    #[error("object not found within {0} positioning steps")]
    ObjectNotFound(usize),
    #[error("no model named `{0}`")]
    MissingModel(String),
    #[error("agent cannot perform `{0}`")]
    Agent(String),
}

/// Step sizes of the primitive actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSizes {
    /// Distant agent pan/tilt step (degrees).
    pub orient_deg: f64,
    /// Surface agent tangential step (meters).
    pub translate_m: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            orient_deg: 3.0,
            translate_m: 0.004,
        }
    }
}

fn sample_primitive(agent: &AgentState, steps: &StepSizes, rng: &mut ChaCha8Rng) -> Action {
    match agent.kind {
        AgentKind::Distant => {
            let a = steps.orient_deg.to_radians();
            match rng.random_range(0..4) {
                0 => Action::Orient { delta_pitch: a, delta_yaw: 0.0 },
                1 => Action::Orient { delta_pitch: -a, delta_yaw: 0.0 },
                2 => Action::Orient { delta_pitch: 0.0, delta_yaw: a },
                _ => Action::Orient { delta_pitch: 0.0, delta_yaw: -a },
            }
        }
        AgentKind::Surface => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            tangential(agent, theta.cos(), theta.sin(), steps.translate_m)
        }
    }
}

/// A tangential move along sensor-frame `(x, y)` scaled to `length`.
fn tangential(agent: &AgentState, x: f64, y: f64, length: f64) -> Action {
    let local = Vec3::new(x, y, 0.0).normalize() * length;
    Action::TranslateTangential {
        delta: agent.pose.orientation.apply(&local),
    }
}

/// Repeats `prev` with probability `alpha`, else samples a primitive. After
/// an off-object observation the previous action is undone instead.
pub fn random_walk_step(
    prev: Option<&Action>,
    off_object: bool,
    alpha: f64,
    agent: &AgentState,
    steps: &StepSizes,
    rng: &mut ChaCha8Rng,
) -> Action {
    if off_object {
        if let Some(back) = prev.and_then(Action::reversed) {
            return back;
        }
    }
    let repeat: bool = rng.random_bool(alpha.clamp(0.0, 1.0));
    match prev {
        Some(a) if repeat && a.reversed().is_some() => a.clone(),
        _ => sample_primitive(agent, steps, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureConfig {
    /// Steps following the minimum-curvature direction per cycle.
    pub min_curvature_steps: usize,
    /// Steps following the maximum-curvature direction per cycle.
    pub max_curvature_steps: usize,
    /// Heading closer than this to a visited location triggers avoidance.
    pub avoid_radius: f64,
    /// Momentum of the random-walk fallback.
    pub alpha: f64,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            min_curvature_steps: 8,
            max_curvature_steps: 4,
            avoid_radius: 2.0 * LmConfig::default().dedup_distance,
            alpha: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMove {
    FollowMin,
    FollowMax,
    Avoid,
    Random,
}

/// Motor-side memory of the curvature-informed policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurvatureState {
    pub phase_step: usize,
    heading: Option<Vec3>,
    pub visited: Vec<Vec3>,
    pub last_move: Option<CurvatureMove>,
}

/// Follows principal curvature directions, alternating min and max, with
/// an avoidance step when the path would revisit a location.
#[allow(clippy::too_many_arguments)]
pub fn curvature_informed_step(
    state: &mut CurvatureState,
    sensed: &SurfaceFrame,
    location: &Vec3,
    degenerate: bool,
    prev: Option<&Action>,
    agent: &AgentState,
    steps: &StepSizes,
    config: &CurvatureConfig,
    rng: &mut ChaCha8Rng,
) -> Action {
    state.visited.push(*location);
    if degenerate {
        state.heading = None;
        state.last_move = Some(CurvatureMove::Random);
        return random_walk_step(prev, false, config.alpha, agent, steps, rng);
    }
    let cycle = config.min_curvature_steps + config.max_curvature_steps;
    let follow_min = cycle == 0 || state.phase_step % cycle < config.min_curvature_steps;
    state.phase_step += 1;
    let mut dir = if follow_min { sensed.dir2 } else { sensed.dir1 };
    if state.heading.is_some_and(|h| h.dot(&dir) < 0.0) {
        dir = -dir;
    }
    let step = steps.translate_m;
    let ahead = location + dir * step;
    // The most recent locations are behind us by construction.
    let skip = (config.avoid_radius / step).ceil() as usize + 1;
    let history = &state.visited[..state.visited.len().saturating_sub(skip)];
    let blocked = history.iter().any(|v| (v - ahead).norm() < config.avoid_radius);
    let (dir, kind) = if blocked {
        (sensed.normal.cross(&dir).normalize(), CurvatureMove::Avoid)
    } else if follow_min {
        (dir, CurvatureMove::FollowMin)
    } else {
        (dir, CurvatureMove::FollowMax)
    };
    state.heading = Some(dir);
    state.last_move = Some(kind);
    Action::TranslateTangential { delta: dir * step }
}

/// Archimedean spiral in (pitch, yaw) around the starting look direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralConfig {
    /// Gap between successive turns (degrees).
    pub turn_spacing_deg: f64,
    /// Arc length per step (degrees).
    pub step_deg: f64,
    /// The scan stops growing beyond this radius (degrees).
    pub max_radius_deg: f64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            turn_spacing_deg: 3.0,
            step_deg: 3.0,
            max_radius_deg: 22.0,
        }
    }
}

impl SpiralConfig {
    /// Offset (pitch, yaw) in degrees of spiral point `k`.
    pub fn point(&self, k: usize) -> (f64, f64) {
        let b = self.turn_spacing_deg / std::f64::consts::TAU;
        // Arc length of r = bθ is about bθ²/2.
        let theta = (2.0 * self.step_deg * k as f64 / b).sqrt();
        let r = (b * theta).min(self.max_radius_deg);
        (r * theta.sin(), r * theta.cos())
    }

    /// Steps until the spiral reaches its maximum radius.
    pub fn len(&self) -> usize {
        let b = self.turn_spacing_deg / std::f64::consts::TAU;
        let theta_max = self.max_radius_deg / b;
        (b * theta_max * theta_max / (2.0 * self.step_deg)).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Pan/tilt deltas moving from spiral point `k-1` to `k`.
pub fn scan_spiral_step(step_index: usize, spiral: &SpiralConfig) -> Action {
    if step_index == 0 {
        return Action::Orient {
            delta_pitch: 0.0,
            delta_yaw: 0.0,
        };
    }
    let (p0, y0) = spiral.point(step_index - 1);
    let (p1, y1) = spiral.point(step_index);
    Action::Orient {
        delta_pitch: (p1 - p0).to_radians(),
        delta_yaw: (y1 - y0).to_radians(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    GetGoodView,
    TouchObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub camera: CameraConfig,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub max_steps: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig::view_finder(),
            min_fraction: 0.3,
            max_fraction: 0.6,
            max_steps: 40,
        }
    }
}

fn framed(view: &Patch, config: &ViewConfig) -> bool {
    let f = view.on_object_fraction();
    view.center().on_object && f >= config.min_fraction && f <= config.max_fraction
}

/// Pitch and yaw turning the optical axis onto sensor-frame direction `d`.
fn turn_towards(d: &Vec3) -> Action {
    let yaw = d.x.atan2(d.z);
    let pitch = (-d.y).atan2((d.x * d.x + d.z * d.z).sqrt());
    Action::Orient {
        delta_pitch: pitch,
        delta_yaw: yaw,
    }
}

fn step(scene: &Scene, agent: &mut AgentState, action: Action, out: &mut Vec<Action>) -> Result<(), PolicyError> {
    *agent = apply_action(scene, agent, &action).map_err(|e| PolicyError::Agent(e.to_string()))?;
    out.push(action);
    Ok(())
}

fn good_view(scene: &Scene, start: &AgentState, config: &ViewConfig) -> Result<Vec<Action>, PolicyError> {
    let mut agent = start.clone();
    let mut actions = Vec::new();
    let mut searched = 0;
    for _ in 0..config.max_steps {
        let pose = agent.sensor_pose(0);
        let view = sense_patch(scene, &pose, &config.camera);
        if framed(&view, config) {
            return Ok(actions);
        }
        let count = view.on_object_count();
        if count == 0 {
            // Nothing in sight: sweep the view around.
            searched += 1;
            let a = (config.camera.base_fov_deg * 0.8).to_radians();
            let sweep = match searched % 4 {
                0 => Action::Orient { delta_pitch: a, delta_yaw: 0.0 },
                _ => Action::Orient { delta_pitch: 0.0, delta_yaw: a },
            };
            step(scene, &mut agent, sweep, &mut actions)?;
            continue;
        }
        if !view.center().on_object {
            // Nearest on-object pixel, not the centroid: a ring's centroid
            // is in its hole.
            let (h, w) = (view.height as f64 / 2.0, view.width as f64 / 2.0);
            let nearest = (0..view.pixels.len())
                .filter(|&i| view.pixels[i].on_object)
                .min_by(|&a, &b| {
                    let d = |i: usize| ((i / view.width) as f64 - h).powi(2) + ((i % view.width) as f64 - w).powi(2);
                    d(a).total_cmp(&d(b))
                })
                .expect("count > 0");
            let local = pose.orientation.apply_inverse(&(view.pixels[nearest].location - pose.location));
            step(scene, &mut agent, turn_towards(&local), &mut actions)?;
            continue;
        }
        let f = view.on_object_fraction();
        let target = 0.5 * (config.min_fraction + config.max_fraction);
        let depth = view.center().depth;
        // Apparent area scales with inverse squared distance.
        let wanted = depth * (f / target).sqrt();
        let mut advance = depth - wanted;
        if agent.kind == AgentKind::Distant && advance > 0.0 {
            advance = advance.min(depth - agent.contact_offset);
        }
        if advance.abs() < 1e-9 {
            return Err(PolicyError::ObjectNotFound(config.max_steps));
        }
        step(scene, &mut agent, Action::MoveForward { distance: advance }, &mut actions)?;
    }
    let view = sense_patch(scene, &agent.sensor_pose(0), &config.camera);
    if framed(&view, config) {
        Ok(actions)
    } else {
        Err(PolicyError::ObjectNotFound(config.max_steps))
    }
}

fn touch(scene: &Scene, start: &AgentState) -> Result<Vec<Action>, PolicyError> {
    let mut agent = start.clone();
    let mut actions = Vec::new();
    let forward = agent.forward();
    let hit = scene
        .ray_cast(&agent.pose.location, &forward)
        .ok_or(PolicyError::ObjectNotFound(1))?;
    let gap = hit.distance - agent.contact_offset;
    if gap.abs() > 1e-12 {
        step(scene, &mut agent, Action::MoveForward { distance: gap }, &mut actions)?;
    }
    // Settle onto the offset surface, facing it squarely.
    if (scene.signed_distance(&agent.pose.location) - agent.contact_offset).abs() > 1e-9
        || agent.forward().dot(&-scene.distance_gradient(&agent.pose.location)) < 1.0 - 1e-9
    {
        step(scene, &mut agent, Action::TranslateTangential { delta: Vec3::zeros() }, &mut actions)?;
    }
    Ok(actions)
}

/// Positioning run at episode start; its observations are not sent to the
/// learning modules.
pub fn utility_positioning(
    scene: &Scene,
    agent: &AgentState,
    mode: UtilityMode,
    view: &ViewConfig,
) -> Result<Vec<Action>, PolicyError> {
    match mode {
        UtilityMode::GetGoodView => good_view(scene, agent, view),
        UtilityMode::TouchObject => touch(scene, agent),
    }
}

/// A jump putting sensor `sensor` at `standoff` from the goal location,
/// looking against the requested normal. The landing is checked against
/// the world before it is proposed.
pub fn goal_to_actions(
    goal: &GoalState,
    agent: &AgentState,
    sensor: usize,
    standoff: f64,
    current_sensed: Option<&Vec3>,
    scene: &Scene,
) -> Result<Vec<Action>, PolicyError> {
    let target = goal.0.location;
    if current_sensed.is_some_and(|c| (c - target).norm() < 1e-9) {
        return Ok(Vec::new());
    }
    let normal = match &goal.0.morph {
        Morphology::Frame(f) => f.normal,
        Morphology::Rotation(r) => r.apply(&Vec3::z()),
    };
    let standoff = if agent.kind == AgentKind::Surface {
        agent.contact_offset
    } else {
        standoff
    };
    let eye = target + normal * standoff;
    let look = -normal;
    let hit = scene.ray_cast(&eye, &look).ok_or(PolicyError::Unreachable)?;
    if (hit.location - target).norm() > 1e-3 || scene.signed_distance(&eye) < 0.0 {
        return Err(PolicyError::Unreachable);
    }
    let sensor_pose = Pose::new(eye, look_rotation(&look, &agent.pose.orientation.apply(&Vec3::x())));
    let offset = agent.sensors[sensor].offset;
    Ok(vec![Action::JumpToPose {
        pose: sensor_pose.compose(&offset.inverse()),
    }])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    Objects,
    Poses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisTestConfig {
    pub enabled: bool,
    pub mode: TestMode,
    /// Fire when second-best / best evidence exceeds this.
    pub trigger_ratio: f64,
    /// Minimum LM steps between jumps.
    pub cooldown: usize,
    /// Distant agent standoff for the jump (meters).
    pub standoff: f64,
}

impl Default for HypothesisTestConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            mode: TestMode::Objects,
            trigger_ratio: 0.8,
            cooldown: 10,
            standoff: 0.1,
        }
    }
}

fn best_index(h: &ObjectHypotheses, among: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in among {
        if best.is_none_or(|b| h.evidences[i] > h.evidences[b]) {
            best = Some(i);
        }
    }
    best
}

/// Node of `a` (at pose `pa`) farthest from any node of `b` (at `pb`), in
/// body coordinates: (distance, body location, body normal).
fn farthest_node(models: &Models, a: &ObjectPose, b: &ObjectPose) -> Result<Option<(f64, Vec3, Vec3)>, PolicyError> {
    let ma = models.get(&a.object_id).ok_or_else(|| PolicyError::MissingModel(a.object_id.clone()))?;
    let mb = models.get(&b.object_id).ok_or_else(|| PolicyError::MissingModel(b.object_id.clone()))?;
    let to_body = |p: &ObjectPose, x: &Vec3| p.rotation.apply(x) + p.translation;
    let others: Vec<Vec3> = mb.nodes().iter().map(|n| to_body(b, &n.location)).collect();
    let mut best: Option<(f64, Vec3, Vec3)> = None;
    for n in ma.nodes() {
        let p = to_body(a, &n.location);
        let d = others.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(bd, _, _)| d > bd) {
            best = Some((d, p, a.rotation.apply(&n.frame.normal)));
        }
    }
    Ok(best)
}

/// Graph-mismatch goal: overlay the two leading hypotheses and pick the
/// point where they disagree most. Both overlays are searched, so the
/// point may lie on either graph.
#[allow(clippy::too_many_arguments)]
pub fn hypothesis_test_goal(
    space: &HypothesisSpace,
    models: &Models,
    mode: TestMode,
    config: &HypothesisTestConfig,
    lm_config: &LmConfig,
    steps_since_jump: usize,
    sender_id: &str,
) -> Result<Option<GoalState>, PolicyError> {
    if steps_since_jump < config.cooldown {
        return Ok(None);
    }
    let Ok(mlh) = most_likely_hypothesis(space) else {
        return Ok(None);
    };
    let here = space.sensed_location;
    let first = ObjectPose::from_hypothesis(&mlh, &here);
    let (best_ev, second) = match mode {
        TestMode::Objects => {
            let mut ranked: Vec<(&str, f64)> = space.object_evidences().into_iter().filter(|(id, _)| *id != mlh.object_id).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
            let Some(&(id, ev)) = ranked.first() else {
                return Ok(None);
            };
            let h = space.object(id).expect("ranked from the space");
            let i = best_index(h, 0..h.len()).expect("object has hypotheses");
            (ev, ObjectPose::from_hypothesis(&h.hypothesis(i), &here))
        }
        TestMode::Poses => {
            let h = space.object(&mlh.object_id).expect("mlh object present");
            let max_angle = lm_config.pose_angle_deg.to_radians();
            let distinct = possible_poses(h, lm_config).into_iter().filter(|&i| {
                let p = ObjectPose::from_hypothesis(&h.hypothesis(i), &here);
                (p.translation - first.translation).norm() > lm_config.pose_distance
                    || p.rotation.geodesic_distance(&first.rotation) > max_angle
            });
            let Some(i) = best_index(h, distinct) else {
                return Ok(None);
            };
            (h.evidences[i], ObjectPose::from_hypothesis(&h.hypothesis(i), &here))
        }
    };
    if !(mlh.evidence > 0.0) || best_ev / mlh.evidence <= config.trigger_ratio {
        return Ok(None);
    }
    let forward = farthest_node(models, &first, &second)?;
    let backward = farthest_node(models, &second, &first)?;
    let pick = match (forward, backward) {
        (Some(f), Some(b)) if b.0 > f.0 => b,
        (Some(f), _) => f,
        (None, Some(b)) => b,
        (None, None) => return Ok(None),
    };
    let (_, location, normal) = pick;
    Ok(Some(GoalState(StateMessage {
        location,
        morph: Morphology::Frame(SurfaceFrame::from_normal(&normal)),
        features: Features::new(),
        confidence: 1.0,
        use_state: true,
        sender_id: sender_id.into(),
        sender_type: SenderType::LearningModule,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{orbit_pose, ObjectInstance, Primitive, SceneObject};
    use rand::SeedableRng;

    fn sphere(r: f64, at: Vec3) -> Scene {
        Scene::single(ObjectInstance {
            object: SceneObject::primitive(Primitive::Sphere { radius: r }, [1.0; 4]),
            pose: Pose::new(at, crate::geometry::Rotation::identity()),
            label: "ball".into(),
        })
    }

    fn distant(at: Vec3, target: Vec3) -> AgentState {
        let mut a = AgentState::single_sensor(AgentKind::Distant, Pose::identity());
        a.pose = Pose::new(at, look_rotation(&(target - at), &Vec3::x()));
        a
    }

    #[test]
    fn full_momentum_repeats() {
        let agent = distant(Vec3::new(0.0, 0.0, 0.3), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prev = Action::Orient { delta_pitch: 0.1, delta_yaw: 0.0 };
        for _ in 0..50 {
            assert_eq!(random_walk_step(Some(&prev), false, 1.0, &agent, &StepSizes::default(), &mut rng), prev);
        }
    }

    #[test]
    fn zero_momentum_is_reproducible() {
        let agent = distant(Vec3::new(0.0, 0.0, 0.3), Vec3::zeros());
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..30)
                .map(|_| random_walk_step(None, false, 0.0, &agent, &StepSizes::default(), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn off_object_reverses() {
        let agent = distant(Vec3::new(0.0, 0.0, 0.3), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prev = Action::Orient { delta_pitch: 0.1, delta_yaw: -0.2 };
        for alpha in [0.0, 0.5, 1.0] {
            assert_eq!(
                random_walk_step(Some(&prev), true, alpha, &agent, &StepSizes::default(), &mut rng),
                Action::Orient { delta_pitch: -0.1, delta_yaw: 0.2 }
            );
        }
    }

    #[test]
    fn min_curvature_on_a_cylinder_runs_along_the_axis() {
        let agent = AgentState::single_sensor(AgentKind::Surface, orbit_pose(&Vec3::x(), 0.07, &Vec3::zeros()));
        let frame = SurfaceFrame::from_normal_dir1(Vec3::x(), Vec3::y());
        let mut state = CurvatureState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = curvature_informed_step(
            &mut state,
            &frame,
            &Vec3::new(0.05, 0.0, 0.0),
            false,
            None,
            &agent,
            &StepSizes::default(),
            &CurvatureConfig::default(),
            &mut rng,
        );
        let Action::TranslateTangential { delta } = a else { panic!() };
        assert!(delta.normalize().dot(&Vec3::z()).abs() > 10f64.to_radians().cos());
        assert_eq!(state.last_move, Some(CurvatureMove::FollowMin));
    }

    #[test]
    fn degenerate_input_falls_back_to_random_walk() {
        let agent = AgentState::single_sensor(AgentKind::Surface, orbit_pose(&Vec3::x(), 0.07, &Vec3::zeros()));
        let frame = SurfaceFrame::from_normal(&Vec3::x());
        let mut state = CurvatureState::default();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let config = CurvatureConfig::default();
        let got = curvature_informed_step(&mut state, &frame, &Vec3::zeros(), true, None, &agent, &StepSizes::default(), &config, &mut a);
        let expected = random_walk_step(None, false, config.alpha, &agent, &StepSizes::default(), &mut b);
        assert_eq!(got, expected);
        assert_eq!(state.last_move, Some(CurvatureMove::Random));
    }

    #[test]
    fn revisits_trigger_an_avoidance_step() {
        let agent = AgentState::single_sensor(AgentKind::Surface, orbit_pose(&Vec3::x(), 0.07, &Vec3::zeros()));
        let frame = SurfaceFrame::from_normal_dir1(Vec3::x(), Vec3::y());
        let config = CurvatureConfig::default();
        let mut state = CurvatureState {
            visited: vec![Vec3::new(0.05, 0.0, 0.004)],
            ..Default::default()
        };
        // Pad the history so the old visit is not treated as just behind us.
        state.visited.extend((0..10).map(|i| Vec3::new(0.05, 0.1 + i as f64 * 0.01, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = curvature_informed_step(
            &mut state,
            &frame,
            &Vec3::new(0.05, 0.0, 0.0),
            false,
            None,
            &agent,
            &StepSizes::default(),
            &config,
            &mut rng,
        );
        let Action::TranslateTangential { delta } = a else { panic!() };
        assert_eq!(state.last_move, Some(CurvatureMove::Avoid));
        assert!(delta.dot(&Vec3::z()).abs() < 1e-12);
    }

    #[test]
    fn spiral_starts_still_and_grows() {
        let s = SpiralConfig::default();
        assert_eq!(scan_spiral_step(0, &s), Action::Orient { delta_pitch: 0.0, delta_yaw: 0.0 });
        let mut last = 0.0;
        for k in 0..s.len() + 20 {
            let (p, y) = s.point(k);
            let r = (p * p + y * y).sqrt();
            assert!(r >= last - 1e-12);
            last = r;
        }
        assert!((last - s.max_radius_deg).abs() < 1e-9);
    }

    #[test]
    fn framed_object_needs_no_positioning() {
        let scene = sphere(0.05, Vec3::zeros());
        let config = ViewConfig::default();
        // Angular radius for ~45% coverage of a 90 degree square view.
        let alpha = (0.45f64 * 4.0 / std::f64::consts::PI).sqrt().atan();
        let d = 0.05 / alpha.sin();
        let agent = distant(Vec3::new(0.0, 0.0, d), Vec3::zeros());
        assert_eq!(utility_positioning(&scene, &agent, UtilityMode::GetGoodView, &config).unwrap(), vec![]);
    }

    #[test]
    fn tiny_object_is_brought_into_the_band() {
        let scene = sphere(0.005, Vec3::zeros());
        let config = ViewConfig::default();
        let mut agent = distant(Vec3::new(0.0, 0.0, 0.5), Vec3::zeros());
        agent.contact_offset = 0.001;
        let actions = utility_positioning(&scene, &agent, UtilityMode::GetGoodView, &config).unwrap();
        for a in &actions {
            agent = apply_action(&scene, &agent, a).unwrap();
        }
        let f = sense_patch(&scene, &agent.sensor_pose(0), &config.camera).on_object_fraction();
        assert!(f >= config.min_fraction && f <= config.max_fraction, "{f}");
    }

    #[test]
    fn touch_lands_at_the_contact_offset() {
        let scene = sphere(0.05, Vec3::zeros());
        let mut agent = AgentState::single_sensor(AgentKind::Surface, Pose::identity());
        agent.pose = Pose::new(Vec3::new(0.0, 0.01, 0.35), look_rotation(&-Vec3::z(), &Vec3::x()));
        for a in utility_positioning(&scene, &agent, UtilityMode::TouchObject, &ViewConfig::default()).unwrap() {
            agent = apply_action(&scene, &agent, &a).unwrap();
        }
        assert!((scene.signed_distance(&agent.pose.location) - agent.contact_offset).abs() < 1e-4);
        assert!(agent.contact);
    }

    fn goal(location: Vec3, normal: Vec3) -> GoalState {
        GoalState(StateMessage {
            location,
            morph: Morphology::Frame(SurfaceFrame::from_normal(&normal)),
            features: Features::new(),
            confidence: 1.0,
            use_state: true,
            sender_id: "lm".into(),
            sender_type: SenderType::LearningModule,
        })
    }

    #[test]
    fn jump_lands_on_the_goal() {
        let scene = sphere(0.05, Vec3::zeros());
        let agent = distant(Vec3::new(0.0, 0.0, 0.3), Vec3::zeros());
        let n = Vec3::new(1.0, -1.0, 0.5).normalize();
        let g = goal(n * 0.05, n);
        let actions = goal_to_actions(&g, &agent, 0, 0.1, None, &scene).unwrap();
        let moved = apply_action(&scene, &agent, &actions[0]).unwrap();
        let patch = sense_patch(&scene, &moved.sensor_pose(0), &CameraConfig::patch());
        assert!((patch.center().location - g.0.location).norm() < LmConfig::default().max_match_distance);
        assert_eq!(goal_to_actions(&g, &agent, 0, 0.1, Some(&(n * 0.05)), &scene).unwrap(), vec![]);
    }

    #[test]
    fn goal_in_empty_space_fails() {
        let scene = sphere(0.05, Vec3::zeros());
        let agent = distant(Vec3::new(0.0, 0.0, 0.3), Vec3::zeros());
        let g = goal(Vec3::new(0.3, 0.3, 0.3), Vec3::x());
        assert_eq!(goal_to_actions(&g, &agent, 0, 0.1, None, &scene), Err(PolicyError::Unreachable));
    }
}
