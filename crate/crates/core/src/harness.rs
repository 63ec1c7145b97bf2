//! Experiment runner: episodes, epochs, metrics and persistence.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{FeatureValue, StateMessage, FEATURE_CURVATURES};
use crate::environment::{
    apply_action, library, orbit_pose, sense_patch, Action, AgentKind, AgentState, CameraConfig, EnvironmentError,
    ObjectInstance, Patch, Scene, SceneFile, SceneObject, SensorMount,
};
use crate::geometry::{Pose, Rotation, Vec3};
use crate::learning_module::{
    possible_matches, LearnTarget, LearningError, LearningModule, LmConfig, ModelMemory, ObjectPose,
    Terminal,
};
use crate::policies::{
    curvature_informed_step, goal_to_actions, hypothesis_test_goal, random_walk_step, scan_spiral_step,
    utility_positioning, CurvatureConfig, CurvatureState, HypothesisTestConfig, PolicyError, SpiralConfig, StepSizes,
    UtilityMode, ViewConfig,
};
use crate::sensor_module::{curvature_is_degenerate, SensorConfig, SensorModule};
use crate::voting::{emit_vote, integrate_votes, transform_votes};

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Io(String),
    #[error("state file: {0}")]
    Schema(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learning {
    /// Models are named and posed from the episode's own outcome.
    Unsupervised,
    /// Models are named by the object label and posed by ground truth.
    Supervised,
}

/// One object and the rotations (Euler XYZ, degrees) it is shown at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub label: String,
    #[serde(default = "identity_rotations")]
    pub rotations: Vec<[f64; 3]>,
    #[serde(default)]
    pub position: [f64; 3],
}

fn identity_rotations() -> Vec<[f64; 3]> {
    vec![[0.0; 3]]
}

impl ObjectEntry {
    pub fn new(label: &str, rotations: Vec<[f64; 3]>) -> Self {
        Self {
            label: label.into(),
            rotations,
            position: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RandomWalk,
    CurvatureInformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Momentum of the random walk.
    pub alpha: f64,
    pub steps: StepSizes,
    pub curvature: CurvatureConfig,
    pub hypothesis_test: HypothesisTestConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::RandomWalk,
            alpha: 0.7,
            steps: StepSizes::default(),
            curvature: CurvatureConfig::default(),
            hypothesis_test: HypothesisTestConfig::default(),
        }
    }
}

/// What the agent does after the matching phase of a training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Exploration {
    /// Keep running the policy for `exploration_steps`.
    Policy,
    /// Spiral scans from `viewpoints` directions around the object.
    Scan {
        viewpoints: usize,
        #[serde(default)]
        spiral: SpiralConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene file with object shapes; the built-in library when absent.
    pub scene: Option<PathBuf>,
    pub objects: Vec<ObjectEntry>,
    pub agent: AgentKind,
    /// One sensor per learning module: (pitch, yaw) offsets in degrees.
    pub sensor_offsets_deg: Vec<[f64; 2]>,
    pub start_direction: [f64; 3],
    pub start_distance: f64,
    pub patch: CameraConfig,
    pub view: ViewConfig,
    pub sm: SensorConfig,
    pub lm: LmConfig,
    pub policy: PolicyConfig,
    /// Directed vote edges `[sender, receiver]` between learning modules.
    pub wiring: Vec<[usize; 2]>,
    pub mode: Mode,
    pub learning: Learning,
    pub epochs: usize,
    pub seed: u64,
    /// Terminal learning modules needed to end an episode; all of them for
    /// a single module, a majority otherwise.
    pub min_lms_match: Option<usize>,
    pub exploration_steps: usize,
    pub exploration: Exploration,
    /// Keep every sensor-module message for the CMP log.
    pub log_cmp: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: None,
            objects: Vec::new(),
            agent: AgentKind::Distant,
            sensor_offsets_deg: vec![[0.0, 0.0]],
            start_direction: [0.0, 0.0, 1.0],
            start_distance: 0.25,
            patch: CameraConfig::patch(),
            view: ViewConfig::default(),
            sm: SensorConfig::default(),
            lm: LmConfig::default(),
            policy: PolicyConfig::default(),
            wiring: Vec::new(),
            mode: Mode::Train,
            learning: Learning::Unsupervised,
            epochs: 1,
            seed: 0,
            min_lms_match: None,
            exploration_steps: 100,
            exploration: Exploration::Policy,
            log_cmp: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; a relative scene path is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(scene) = &config.scene {
            if scene.is_relative() {
                config.scene = Some(path.parent().unwrap_or(Path::new(".")).join(scene));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn n_lms(&self) -> usize {
        self.sensor_offsets_deg.len()
    }

    pub fn min_lms(&self) -> usize {
        let n = self.n_lms();
        self.min_lms_match.unwrap_or(if n == 1 { 1 } else { n.div_ceil(2) })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let n = self.n_lms();
        if n == 0 {
            return bad("at least one sensor is required".into());
        }
        if let Some(&[a, b]) = self.wiring.iter().find(|w| w[0] >= n || w[1] >= n || w[0] == w[1]) {
            return bad(format!("wiring [{a}, {b}] does not connect two of the {n} learning modules"));
        }
        if self.min_lms() == 0 || self.min_lms() > n {
            return bad(format!("min_lms_match must be in 1..={n}"));
        }
        if self.objects.is_empty() {
            return bad("no objects listed".into());
        }
        if let Some(o) = self.objects.iter().find(|o| o.rotations.is_empty()) {
            return bad(format!("object `{}` has no rotations", o.label));
        }
        if !(self.start_distance > 0.0) {
            return bad("start_distance must be positive".into());
        }
        if matches!(self.exploration, Exploration::Scan { .. }) && self.agent != AgentKind::Distant {
            return bad("scan exploration needs a distant agent".into());
        }
        if self.agent == AgentKind::Distant && self.policy.kind == PolicyKind::CurvatureInformed {
            return bad("the curvature-informed policy needs a surface agent".into());
        }
        self.lm.validate()?;
        Ok(())
    }

    /// Shapes for every listed label, from the scene file or the library.
    pub fn resolve_objects(&self) -> Result<BTreeMap<String, SceneObject>, HarnessError> {
        let mut found = BTreeMap::new();
        if let Some(path) = &self.scene {
            let file = SceneFile::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            for inst in file.instances(base)? {
                found.insert(inst.label.clone(), inst.object);
            }
        }
        let mut out = BTreeMap::new();
        for o in &self.objects {
            let object = match found.get(&o.label) {
                Some(obj) => obj.clone(),
                None => library::by_label(&o.label)
                    .ok_or_else(|| HarnessError::Config(format!("unknown object `{}`", o.label)))?,
            };
            out.insert(o.label.clone(), object);
        }
        Ok(out)
    }

    /// Episodes of one epoch: (label, rotation) in config order.
    pub fn episodes(&self) -> Vec<(&ObjectEntry, [f64; 3])> {
        self.objects
            .iter()
            .flat_map(|o| o.rotations.iter().map(move |r| (o, *r)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeTerminal {
    Match,
    NoMatch,
    TimeOut,
}

impl EpisodeTerminal {
    pub fn name(&self) -> &'static str {
        match self {
            EpisodeTerminal::Match => "match",
            EpisodeTerminal::NoMatch => "no_match",
            EpisodeTerminal::TimeOut => "time_out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrace {
    pub use_state: bool,
    pub lm_step: usize,
    pub mlh_object: Option<String>,
    pub mlh_evidence: Option<f64>,
    pub possible: Vec<String>,
    pub terminal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    /// Action that led to this observation.
    pub action: Option<Action>,
    pub lms: Vec<LmTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub epoch: usize,
    pub terminal: EpisodeTerminal,
    /// Monty steps of the matching phase.
    pub steps: usize,
    pub lm_steps: Vec<usize>,
    pub detected_object: Option<String>,
    pub detected_label: Option<String>,
    pub detected_rotation: Option<Rotation>,
    pub ground_truth_label: String,
    pub ground_truth_rotation: Rotation,
    pub ground_truth_euler_deg: [f64; 3],
    /// Degrees, symmetry-aware; only on match.
    pub rotation_error: Option<f64>,
    /// Goal-state locations the agent jumped to.
    pub goals: Vec<Vec3Row>,
    /// Model each LM wrote to (train mode).
    pub learned: Vec<Option<String>>,
    pub trace: Vec<StepRecord>,
    #[serde(skip)]
    pub messages: Vec<StateMessage>,
}

impl EpisodeResult {
    pub fn correct(&self) -> bool {
        self.terminal == EpisodeTerminal::Match && self.detected_label.as_deref() == Some(&self.ground_truth_label)
    }

    /// Per-step evidence of the first LM's most likely hypothesis.
    pub fn evidence_trace(&self) -> Vec<Option<f64>> {
        self.trace.iter().map(|s| s.lms[0].mlh_evidence).collect()
    }
}

pub type Vec3Row = [f64; 3];

/// Everything that persists between episodes.
#[derive(Debug, Clone)]
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub lms: Vec<LearningModule>,
    /// Per LM: the object rotation each model's frame was learned at.
    pub references: Vec<BTreeMap<String, Rotation>>,
    pub episodes_run: usize,
}

fn lm_id(i: usize) -> String {
    format!("lm_{i}")
}

impl ExperimentState {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let lms = (0..config.n_lms()).map(|i| LearningModule::new(lm_id(i), config.lm.clone())).collect();
        let references = vec![BTreeMap::new(); config.n_lms()];
        Ok(Self {
            config,
            lms,
            references,
            episodes_run: 0,
        })
    }

    /// Keeps the learned memory and references but runs under `config`.
    pub fn with_config(&self, config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        if config.n_lms() != self.lms.len() {
            return Err(HarnessError::Config(format!(
                "config has {} learning modules, stored state has {}",
                config.n_lms(),
                self.lms.len()
            )));
        }
        let lms = self
            .lms
            .iter()
            .map(|lm| {
                let mut fresh = LearningModule::new(lm.id.clone(), config.lm.clone());
                fresh.memory = lm.memory.clone();
                fresh
            })
            .collect();
        Ok(Self {
            config,
            lms,
            references: self.references.clone(),
            episodes_run: 0,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    version: u32,
    config: ExperimentConfig,
    lm_files: Vec<String>,
    references: Vec<BTreeMap<String, Rotation>>,
}

fn state_json(state: &ExperimentState) -> String {
    let file = StateFile {
        version: STATE_VERSION,
        config: state.config.clone(),
        lm_files: state.lms.iter().map(|lm| format!("{}.json", lm.id)).collect(),
        references: state.references.clone(),
    };
    serde_json::to_string_pretty(&file).expect("state serializes")
}

/// Writes `state.json` plus one model store per LM into `dir`.
pub fn save_state(state: &ExperimentState, dir: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for lm in &state.lms {
        lm.memory.save(&lm.id, &dir.join(format!("{}.json", lm.id)))?;
    }
    let path = dir.join("state.json");
    std::fs::write(&path, state_json(state)).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Reads a state written by `save_state`. Nothing is returned unless every
/// file parses.
pub fn load_state(path: &Path) -> Result<ExperimentState, HarnessError> {
    let path = if path.is_dir() { path.join("state.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| HarnessError::Schema(e.to_string()))?;
    if file.version != STATE_VERSION {
        return Err(HarnessError::Schema(format!(
            "version {} is not supported (expected {STATE_VERSION})",
            file.version
        )));
    }
    if file.lm_files.len() != file.config.n_lms() || file.references.len() != file.lm_files.len() {
        return Err(HarnessError::Schema("learning module count mismatch".into()));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut lms = Vec::new();
    for name in &file.lm_files {
        let (id, memory) = ModelMemory::load(&dir.join(name)).map_err(|e| match e {
            LearningError::Schema(m) => HarnessError::Schema(format!("{name}: {m}")),
            other => other.into(),
        })?;
        let mut lm = LearningModule::new(id, file.config.lm.clone());
        lm.memory = memory;
        lms.push(lm);
    }
    Ok(ExperimentState {
        config: file.config,
        lms,
        references: file.references,
        episodes_run: 0,
    })
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sensor_mounts(config: &ExperimentConfig) -> Vec<SensorMount> {
    config
        .sensor_offsets_deg
        .iter()
        .enumerate()
        .map(|(i, [pitch, yaw])| SensorMount {
            id: format!("sm_{i}"),
            offset: Pose::new(
                Vec3::zeros(),
                Rotation::from_axis_angle(&Vec3::y(), yaw.to_radians())
                    .compose(&Rotation::from_axis_angle(&Vec3::x(), pitch.to_radians())),
            ),
        })
        .collect()
}

fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn degenerate(msg: &StateMessage) -> bool {
    match msg.features.get(FEATURE_CURVATURES) {
        Some(FeatureValue::Vector(k)) if k.len() >= 2 => curvature_is_degenerate(k[0], k[1]),
        _ => true,
    }
}

struct World<'a> {
    config: &'a ExperimentConfig,
    scene: Scene,
    agent: AgentState,
    sms: Vec<SensorModule>,
    rng: ChaCha8Rng,
    prev_action: Option<Action>,
    curvature: CurvatureState,
    messages: Vec<StateMessage>,
}

impl World<'_> {
    fn apply(&mut self, action: &Action) -> Result<(), HarnessError> {
        self.agent = apply_action(&self.scene, &self.agent, action)?;
        Ok(())
    }

    fn position(&mut self) -> Result<(), HarnessError> {
        let mode = match self.agent.kind {
            AgentKind::Distant => UtilityMode::GetGoodView,
            AgentKind::Surface => UtilityMode::TouchObject,
        };
        for a in utility_positioning(&self.scene, &self.agent, mode, &self.config.view)? {
            self.apply(&a)?;
        }
        Ok(())
    }

    fn sense(&mut self) -> (Vec<Patch>, Vec<StateMessage>) {
        let patches: Vec<Patch> = (0..self.agent.sensors.len())
            .map(|i| sense_patch(&self.scene, &self.agent.sensor_pose(i), &self.config.patch))
            .collect();
        let msgs: Vec<StateMessage> = self.sms.iter_mut().zip(&patches).map(|(sm, p)| sm.process(p)).collect();
        if self.config.log_cmp {
            self.messages.extend(msgs.iter().cloned());
        }
        (patches, msgs)
    }

    fn policy_action(&mut self, patch: &Patch, msg: &StateMessage) -> Action {
        let policy = &self.config.policy;
        let off_object = !patch.center().on_object;
        match (policy.kind, &msg.morph) {
            (PolicyKind::CurvatureInformed, crate::cmp::Morphology::Frame(frame)) if msg.use_state => curvature_informed_step(
                &mut self.curvature,
                frame,
                &msg.location,
                degenerate(msg),
                self.prev_action.as_ref(),
                &self.agent,
                &policy.steps,
                &policy.curvature,
                &mut self.rng,
            ),
            _ => random_walk_step(
                self.prev_action.as_ref(),
                off_object,
                policy.alpha,
                &self.agent,
                &policy.steps,
                &mut self.rng,
            ),
        }
    }
}

fn lm_trace(lm: &LearningModule, use_state: bool) -> LmTrace {
    let (mlh_object, mlh_evidence, possible) = match &lm.space {
        Some(space) => match crate::learning_module::most_likely_hypothesis(space) {
            Ok(h) => (Some(h.object_id), Some(h.evidence), possible_matches(space, &lm.config)),
            Err(_) => (None, None, Vec::new()),
        },
        None => (None, None, Vec::new()),
    };
    LmTrace {
        use_state,
        lm_step: lm.steps,
        mlh_object,
        mlh_evidence,
        possible,
        terminal: lm.terminal().name().into(),
    }
}

fn vote_round(lms: &mut [LearningModule], wiring: &[[usize; 2]]) {
    if wiring.is_empty() {
        return;
    }
    // All packets are built before any is integrated.
    let packets: Vec<_> = lms
        .iter()
        .map(|lm| {
            lm.space
                .as_ref()
                .filter(|s| !s.is_empty())
                .map(|s| emit_vote(s, &lm.id, &s.sensed_location, lm.config.vote_top_fraction))
        })
        .collect();
    for &[from, to] in wiring {
        let Some(packet) = &packets[from] else { continue };
        let lm = &mut lms[to];
        let config = lm.config.clone();
        if let Some(space) = &mut lm.space {
            let votes = transform_votes(packet, &space.sensed_location);
            integrate_votes(space, &votes, &config);
        }
    }
}

/// Runs one episode on `object` shown at `euler_deg`; learns afterwards in
/// train mode.
pub fn run_episode(
    state: &mut ExperimentState,
    entry: &ObjectEntry,
    object: &SceneObject,
    euler_deg: [f64; 3],
    epoch: usize,
) -> Result<EpisodeResult, HarnessError> {
    let config = state.config.clone();
    let episode = state.episodes_run;
    let rotation = Rotation::from_euler_deg(euler_deg[0], euler_deg[1], euler_deg[2]);
    let center = Vec3::from(entry.position);
    let scene = Scene::single(ObjectInstance {
        object: object.clone(),
        pose: Pose::new(center, rotation),
        label: entry.label.clone(),
    });
    let start = orbit_pose(&Vec3::from(config.start_direction), config.start_distance, &center);
    let agent = match config.agent {
        AgentKind::Distant => AgentState::distant(start, sensor_mounts(&config)),
        AgentKind::Surface => AgentState::surface(start, sensor_mounts(&config), 0.02),
    };
    let sms = (0..config.n_lms())
        .map(|i| {
            let mut c = config.sm.clone();
            c.sensor_id = format!("sm_{i}");
            c.noise_seed = c.noise_seed ^ config.seed.wrapping_add((episode * 64 + i) as u64);
            SensorModule::new(c)
        })
        .collect();
    let mut world = World {
        config: &config,
        scene,
        agent,
        sms,
        rng: episode_rng(config.seed, episode),
        prev_action: None,
        curvature: CurvatureState::default(),
        messages: Vec::new(),
    };
    for lm in &mut state.lms {
        lm.reset();
    }
    world.position()?;

    let mut trace = Vec::new();
    let mut goals = Vec::new();
    let mut steps = 0;
    let mut since_jump = 0;
    let mut action: Option<Action> = None;
    let ht = config.policy.hypothesis_test;
    let terminal = loop {
        let (patches, msgs) = world.sense();
        let mut lm_traces = Vec::new();
        let lm0_before = state.lms[0].steps;
        for (lm, msg) in state.lms.iter_mut().zip(&msgs) {
            lm.observe(msg, action.clone())?;
        }
        vote_round(&mut state.lms, &config.wiring);
        for (lm, msg) in state.lms.iter().zip(&msgs) {
            lm_traces.push(lm_trace(lm, msg.use_state));
        }
        since_jump += state.lms[0].steps - lm0_before;
        trace.push(StepRecord {
            episode,
            step: steps,
            action: action.clone(),
            lms: lm_traces,
        });
        steps += 1;

        let done: Vec<Terminal> = state.lms.iter().map(|lm| lm.terminal()).collect();
        let finished = done
            .iter()
            .filter(|t| matches!(t, Terminal::Match { .. } | Terminal::NoMatch))
            .count();
        if finished >= config.min_lms() {
            break if done.iter().any(|t| matches!(t, Terminal::Match { .. })) {
                EpisodeTerminal::Match
            } else {
                EpisodeTerminal::NoMatch
            };
        }
        if steps >= config.lm.max_steps {
            break EpisodeTerminal::TimeOut;
        }

        let mut next = None;
        if ht.enabled {
            for (i, lm) in state.lms.iter().enumerate() {
                let Some(space) = &lm.space else { continue };
                let goal = hypothesis_test_goal(space, &lm.memory.models, ht.mode, &ht, &lm.config, since_jump, &lm.id)?;
                let Some(goal) = goal else { continue };
                let here = msgs[i].use_state.then_some(&msgs[i].location);
                if let Ok(mut jump) = goal_to_actions(&goal, &world.agent, i, ht.standoff, here, &world.scene) {
                    if let Some(a) = jump.pop() {
                        goals.push(goal.0.location.into());
                        since_jump = 0;
                        next = Some(a);
                        break;
                    }
                }
            }
        }
        let next = match next {
            Some(a) => a,
            None => world.policy_action(&patches[0], &msgs[0]),
        };
        world.apply(&next)?;
        world.prev_action = Some(next.clone());
        action = Some(next);
    };

    let lm_steps = state.lms.iter().map(|lm| lm.steps).collect();
    let (detected_object, detected_rotation) = episode_detection(&state.lms, terminal);
    let detected_label = detected_object.as_ref().and_then(|id| state.lms[0].memory.label_of(id));
    let rotation_error = match (&detected_object, &detected_rotation) {
        (Some(id), Some(r)) if terminal == EpisodeTerminal::Match => {
            let reference = state.references[0].get(id).copied().unwrap_or_else(Rotation::identity);
            Some(object.symmetry().rotation_error(&r.compose(&reference), &rotation).to_degrees())
        }
        _ => None,
    };

    let mut learned = vec![None; state.lms.len()];
    if config.mode == Mode::Train {
        explore(&mut world, state, action, center)?;
        let truth = ObjectPose {
            object_id: entry.label.clone(),
            rotation,
            translation: center,
        };
        for (i, lm) in state.lms.iter_mut().enumerate() {
            let target = match config.learning {
                Learning::Supervised => LearnTarget::Supervised {
                    label: entry.label.clone(),
                    pose: truth.clone(),
                },
                Learning::Unsupervised => match lm.terminal() {
                    Terminal::Match { .. } => LearnTarget::Outcome(lm.detected_pose()),
                    _ if terminal == EpisodeTerminal::Match
                        && lm.detected_pose().map(|p| p.object_id) == detected_object =>
                    {
                        LearnTarget::Outcome(lm.detected_pose())
                    }
                    _ => LearnTarget::Outcome(None),
                },
            };
            let fresh = !matches!(&target, LearnTarget::Outcome(Some(_)))
                && !matches!(&target, LearnTarget::Supervised { label, .. } if lm.memory.models.contains_key(label));
            let id = lm.learn(&target, &entry.label)?;
            if fresh {
                let reference = match config.learning {
                    Learning::Supervised => Rotation::identity(),
                    Learning::Unsupervised => rotation,
                };
                state.references[i].insert(id.clone(), reference);
            }
            learned[i] = Some(id);
        }
    }
    state.episodes_run += 1;

    Ok(EpisodeResult {
        episode,
        epoch,
        terminal,
        steps,
        lm_steps,
        detected_object,
        detected_label,
        detected_rotation,
        ground_truth_label: entry.label.clone(),
        ground_truth_rotation: rotation,
        ground_truth_euler_deg: euler_deg,
        rotation_error,
        goals,
        learned,
        trace,
        messages: std::mem::take(&mut world.messages),
    })
}

/// Object and rotation agreed by the matching LMs: the most common object,
/// with the rotation of the first LM that reported it.
fn episode_detection(lms: &[LearningModule], terminal: EpisodeTerminal) -> (Option<String>, Option<Rotation>) {
    if terminal != EpisodeTerminal::Match {
        return (None, None);
    }
    let matched: Vec<_> = lms
        .iter()
        .filter_map(|lm| match lm.terminal() {
            Terminal::Match { hypothesis } => Some((hypothesis.object_id.clone(), lm.detected_pose())),
            _ => None,
        })
        .collect();
    let mut counts: Vec<(&str, usize)> = Vec::new();
    for (id, _) in &matched {
        match counts.iter_mut().find(|(c, _)| c == id) {
            Some(c) => c.1 += 1,
            None => counts.push((id, 1)),
        }
    }
    let Some(&(best, _)) = counts.iter().fold(None, |acc: Option<&(&str, usize)>, c| match acc {
        Some(a) if a.1 >= c.1 => Some(a),
        _ => Some(c),
    }) else {
        return (None, None);
    };
    let rotation = matched
        .iter()
        .find(|(id, _)| id == best)
        .and_then(|(_, pose)| pose.as_ref().map(|p| p.rotation));
    (Some(best.to_string()), rotation)
}

fn record_all(world: &mut World, lms: &mut [LearningModule], action: &Option<Action>) {
    let (_, msgs) = world.sense();
    for (lm, msg) in lms.iter_mut().zip(&msgs) {
        lm.record(msg, action.clone());
    }
}

fn explore(
    world: &mut World,
    state: &mut ExperimentState,
    mut action: Option<Action>,
    center: Vec3,
) -> Result<(), HarnessError> {
    let config = world.config;
    match &config.exploration {
        Exploration::Policy => {
            for _ in 0..config.exploration_steps {
                let (patches, msgs) = world.sense();
                for (lm, msg) in state.lms.iter_mut().zip(&msgs) {
                    lm.record(msg, action.clone());
                }
                let next = world.policy_action(&patches[0], &msgs[0]);
                world.apply(&next)?;
                world.prev_action = Some(next.clone());
                action = Some(next);
            }
        }
        Exploration::Scan { viewpoints, spiral } => {
            for dir in fibonacci_directions(*viewpoints) {
                let jump = Action::JumpToPose {
                    pose: orbit_pose(&dir, config.start_distance, &center),
                };
                world.apply(&jump)?;
                if world.position().is_err() {
                    continue;
                }
                for k in 0..spiral.len() {
                    let a = scan_spiral_step(k, spiral);
                    world.apply(&a)?;
                    record_all(world, &mut state.lms, &Some(a));
                }
            }
        }
    }
    Ok(())
}

/// One episode per (object, rotation), in config order.
pub fn run_epoch(state: &mut ExperimentState, epoch: usize) -> Result<Vec<EpisodeResult>, HarnessError> {
    let objects = state.config.resolve_objects()?;
    let config = state.config.clone();
    let mut out = Vec::new();
    for (entry, euler) in config.episodes() {
        out.push(run_episode(state, entry, &objects[&entry.label], euler, epoch)?);
    }
    Ok(out)
}

/// All configured epochs.
pub fn run_experiment(state: &mut ExperimentState) -> Result<Vec<EpisodeResult>, HarnessError> {
    let mut out = Vec::new();
    for epoch in 0..state.config.epochs {
        out.extend(run_epoch(state, epoch)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub accuracy: f64,
    pub matches: usize,
    pub no_matches: usize,
    pub time_outs: usize,
    /// Degrees, over correct matches.
    pub mean_rotation_error: Option<f64>,
    pub median_rotation_error: Option<f64>,
    pub mean_steps: f64,
    /// Ground-truth label to detected label (or terminal name) counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Metrics {
    let n = results.len();
    let correct: Vec<&EpisodeResult> = results.iter().filter(|r| r.correct()).collect();
    let mut errors: Vec<f64> = correct.iter().filter_map(|r| r.rotation_error).collect();
    errors.sort_by(f64::total_cmp);
    let median = match errors.len() {
        0 => None,
        k if k % 2 == 1 => Some(errors[k / 2]),
        k => Some(0.5 * (errors[k / 2 - 1] + errors[k / 2])),
    };
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in results {
        let got = match r.terminal {
            EpisodeTerminal::Match => r.detected_label.clone().unwrap_or_else(|| "unlabeled".into()),
            t => t.name().into(),
        };
        *confusion.entry(r.ground_truth_label.clone()).or_default().entry(got).or_default() += 1;
    }
    let count = |t: EpisodeTerminal| results.iter().filter(|r| r.terminal == t).count();
    Metrics {
        episodes: n,
        accuracy: if n == 0 { 0.0 } else { correct.len() as f64 / n as f64 },
        matches: count(EpisodeTerminal::Match),
        no_matches: count(EpisodeTerminal::NoMatch),
        time_outs: count(EpisodeTerminal::TimeOut),
        mean_rotation_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        median_rotation_error: median,
        mean_steps: if n == 0 {
            0.0
        } else {
            results.iter().map(|r| r.steps as f64).sum::<f64>() / n as f64
        },
        confusion,
    }
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    episode: usize,
    epoch: usize,
    object: &'a str,
    rot_x: f64,
    rot_y: f64,
    rot_z: f64,
    terminal: &'static str,
    steps: usize,
    lm_steps: usize,
    detected_object: &'a str,
    detected_label: &'a str,
    rotation_error_deg: Option<f64>,
    correct: bool,
    goals: usize,
}

/// Per-episode CSV.
pub fn write_results_csv(results: &[EpisodeResult], out: impl Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(EpisodeRow {
            episode: r.episode,
            epoch: r.epoch,
            object: &r.ground_truth_label,
            rot_x: r.ground_truth_euler_deg[0],
            rot_y: r.ground_truth_euler_deg[1],
            rot_z: r.ground_truth_euler_deg[2],
            terminal: r.terminal.name(),
            steps: r.steps,
            lm_steps: r.lm_steps[0],
            detected_object: r.detected_object.as_deref().unwrap_or(""),
            detected_label: r.detected_label.as_deref().unwrap_or(""),
            rotation_error_deg: r.rotation_error,
            correct: r.correct(),
            goals: r.goals.len(),
        })
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Per-step JSONL traces.
pub fn write_traces_jsonl(results: &[EpisodeResult], mut out: impl Write) -> Result<(), HarnessError> {
    for step in results.iter().flat_map(|r| &r.trace) {
        let line = serde_json::to_string(step).expect("trace serializes");
        writeln!(out, "{line}").map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Logged sensor-module messages, one CMP record per line.
pub fn write_cmp_jsonl(results: &[EpisodeResult], mut out: impl Write) -> Result<(), HarnessError> {
    for m in results.iter().flat_map(|r| &r.messages) {
        out.write_all(&crate::cmp::encode(m))
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Writes episodes.csv, steps.jsonl and (when logged) cmp.jsonl to `dir`.
pub fn write_outputs(results: &[EpisodeResult], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| io_err(&p, e))
    };
    write_results_csv(results, create("episodes.csv")?)?;
    write_traces_jsonl(results, create("steps.jsonl")?)?;
    if results.iter().any(|r| !r.messages.is_empty()) {
        write_cmp_jsonl(results, create("cmp.jsonl")?)?;
    }
    Ok(())
}

/// Held-out evaluation rotations: 90 degrees about each axis.
pub const HELD_OUT_ROTATIONS: [[f64; 3]; 3] = [[90.0, 0.0, 0.0], [0.0, 90.0, 0.0], [0.0, 0.0, 90.0]];

/// Built-in suites as (training config, evaluation config).
pub fn benchmark_suite(name: &str) -> Result<(ExperimentConfig, ExperimentConfig), HarnessError> {
    let labels: Vec<String> = library::benchmark_objects().into_iter().map(|(l, _)| l).collect();
    let scan = Exploration::Scan {
        viewpoints: 14,
        spiral: SpiralConfig::default(),
    };
    let train = |objects: Vec<ObjectEntry>| ExperimentConfig {
        objects,
        mode: Mode::Train,
        learning: Learning::Supervised,
        exploration: scan.clone(),
        ..Default::default()
    };
    let eval = |t: &ExperimentConfig, objects: Vec<ObjectEntry>| ExperimentConfig {
        objects,
        mode: Mode::Eval,
        ..t.clone()
    };
    let all = |rots: Vec<[f64; 3]>| labels.iter().map(|l| ObjectEntry::new(l, rots.clone())).collect::<Vec<_>>();
    match name {
        "recognition" => {
            let t = train(all(identity_rotations()));
            let e = eval(&t, all(HELD_OUT_ROTATIONS.to_vec()));
            Ok((t, e))
        }
        "voting" => {
            let mut t = train(all(identity_rotations()));
            t.sensor_offsets_deg = vec![[0.0, 0.0], [0.0, 8.0]];
            t.wiring = vec![[0, 1], [1, 0]];
            let e = eval(&t, all(HELD_OUT_ROTATIONS.to_vec()));
            Ok((t, e))
        }
        "unsupervised" => {
            let t = ExperimentConfig {
                objects: vec![ObjectEntry::new("mug", identity_rotations())],
                mode: Mode::Train,
                learning: Learning::Unsupervised,
                exploration: scan.clone(),
                ..Default::default()
            };
            let e = eval(&t, t.objects.clone());
            Ok((t, e))
        }
        "hypothesis_test" => {
            let t = train(vec![
                ObjectEntry::new("plain_cylinder", identity_rotations()),
                ObjectEntry::new("mug", identity_rotations()),
            ]);
            let mut e = eval(&t, vec![ObjectEntry::new("mug", identity_rotations())]);
            e.policy.hypothesis_test.enabled = true;
            Ok((t, e))
        }
        other => Err(HarnessError::Config(format!(
            "unknown suite `{other}` (recognition, voting, unsupervised, hypothesis_test)"
        ))),
    }
}
