use serde::{Deserialize, Serialize};

use super::{EnvironmentError, Scene};
use crate::geometry::{vec3_serde, Pose, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Looks at the object from a distance, like an eye in a socket.
    Distant,
    /// Moves along the surface at a fixed offset, like a fingertip.
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMount {
    pub id: String,
    /// Sensor pose relative to the agent.
    #[serde(default)]
    pub offset: Pose,
}

/// All mounted sensors move with the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub kind: AgentKind,
    pub pose: Pose,
    pub sensors: Vec<SensorMount>,
    /// Surface agents only: whether the agent sits at `contact_offset`.
    pub contact: bool,
    /// Standoff from the surface kept by surface agents; also the closest
    /// any agent may approach when moving forward.
    pub contact_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Distant agent: turn the look direction (radians). Yaw turns about
    /// the sensor's `y` axis, pitch about its `x` axis.
    Orient { delta_pitch: f64, delta_yaw: f64 },
    /// Surface agent: slide along the surface by roughly this body-frame
    /// vector, then settle back to the contact offset.
    TranslateTangential {
        #[serde(with = "vec3_serde")]
        delta: Vec3,
    },
    MoveForward { distance: f64 },
    OrientToFace {
        #[serde(with = "vec3_serde")]
        target: Vec3,
    },
    /// Instantaneous move to an absolute pose.
    JumpToPose { pose: Pose },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Orient { .. } => "orient",
            Action::TranslateTangential { .. } => "translate_tangential",
            Action::MoveForward { .. } => "move_forward",
            Action::OrientToFace { .. } => "orient_to_face",
            Action::JumpToPose { .. } => "jump_to_pose",
        }
    }

    /// The action undoing this one, for relative actions.
    pub fn reversed(&self) -> Option<Action> {
        match *self {
            Action::Orient {
                delta_pitch,
                delta_yaw,
            } => Some(Action::Orient {
                delta_pitch: -delta_pitch,
                delta_yaw: -delta_yaw,
            }),
            Action::TranslateTangential { delta } => Some(Action::TranslateTangential { delta: -delta }),
            Action::MoveForward { distance } => Some(Action::MoveForward { distance: -distance }),
            Action::OrientToFace { .. } | Action::JumpToPose { .. } => None,
        }
    }
}

impl AgentState {
    pub fn distant(pose: Pose, sensors: Vec<SensorMount>) -> Self {
        Self {
            kind: AgentKind::Distant,
            pose,
            sensors,
            contact: false,
            contact_offset: 0.01,
        }
    }

    pub fn surface(pose: Pose, sensors: Vec<SensorMount>, contact_offset: f64) -> Self {
        Self {
            kind: AgentKind::Surface,
            pose,
            sensors,
            contact: false,
            contact_offset,
        }
    }

    pub fn single_sensor(kind: AgentKind, pose: Pose) -> Self {
        let sensors = vec![SensorMount {
            id: "sensor_0".into(),
            offset: Pose::identity(),
        }];
        match kind {
            AgentKind::Distant => Self::distant(pose, sensors),
            AgentKind::Surface => Self::surface(pose, sensors, 0.02),
        }
    }

    pub fn sensor_pose(&self, index: usize) -> Pose {
        self.pose.compose(&self.sensors[index].offset)
    }

    pub fn forward(&self) -> Vec3 {
        self.pose.orientation.apply(&Vec3::z())
    }

    fn right(&self) -> Vec3 {
        self.pose.orientation.apply(&Vec3::x())
    }
}

/// Orientation whose `z` axis is `forward` and whose `x` axis is as close
/// to `right_hint` as possible.
pub fn look_rotation(forward: &Vec3, right_hint: &Vec3) -> Rotation {
    let z = forward.normalize();
    let mut x = right_hint - z * right_hint.dot(&z);
    if x.norm() < 1e-9 {
        let helper = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        x = helper - z * helper.dot(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Rotation::from_rows([[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]])
}

/// Pose on a sphere of `radius` around `center`, looking at the center.
pub fn orbit_pose(direction: &Vec3, radius: f64, center: &Vec3) -> Pose {
    let dir = direction.normalize();
    let forward = -dir;
    let mut right = Vec3::z().cross(&forward);
    if right.norm() < 1e-9 {
        right = Vec3::x();
    }
    Pose::new(center + dir * radius, look_rotation(&forward, &right))
}

/// Moves `p` along the distance gradient until it sits `offset` from the
/// surface.
fn settle(scene: &Scene, mut p: Vec3, offset: f64) -> Vec3 {
    for _ in 0..100 {
        let err = scene.signed_distance(&p) - offset;
        if err.abs() < 1e-13 {
            break;
        }
        p -= scene.distance_gradient(&p) * err;
    }
    p
}

fn in_contact(scene: &Scene, agent: &AgentState) -> bool {
    (scene.signed_distance(&agent.pose.location) - agent.contact_offset).abs() < 1e-6
}

pub fn apply_action(
    scene: &Scene,
    agent: &AgentState,
    action: &Action,
) -> Result<AgentState, EnvironmentError> {
    let mut next = agent.clone();
    let mismatch = || EnvironmentError::ActionMismatch {
        action: action.name(),
        kind: agent.kind,
    };
    match action {
        Action::Orient {
            delta_pitch,
            delta_yaw,
        } => {
            if agent.kind != AgentKind::Distant {
                return Err(mismatch());
            }
            let yaw = Rotation::from_axis_angle(&Vec3::y(), *delta_yaw);
            let pitch = Rotation::from_axis_angle(&Vec3::x(), *delta_pitch);
            next.pose.orientation = agent.pose.orientation.compose(&yaw).compose(&pitch);
        }
        Action::TranslateTangential { delta } => {
            if agent.kind != AgentKind::Surface {
                return Err(mismatch());
            }
            let normal = -agent.forward();
            let tangential = delta - normal * delta.dot(&normal);
            let p = settle(scene, agent.pose.location + tangential, agent.contact_offset);
            let n = scene.distance_gradient(&p);
            next.pose = Pose::new(p, look_rotation(&-n, &agent.right()));
            next.contact = in_contact(scene, &next);
        }
        Action::MoveForward { distance } => {
            let forward = agent.forward();
            let mut step = *distance;
            if step > 0.0 {
                if let Some(hit) = scene.ray_cast(&agent.pose.location, &forward) {
                    step = step.min((hit.distance - agent.contact_offset).max(0.0));
                }
            }
            next.pose.location += forward * step;
            if agent.kind == AgentKind::Surface {
                next.contact = in_contact(scene, &next);
            }
        }
        Action::OrientToFace { target } => {
            let dir = target - agent.pose.location;
            if dir.norm() > 1e-12 {
                next.pose.orientation = look_rotation(&dir, &agent.right());
            }
        }
        Action::JumpToPose { pose } => {
            next.pose = *pose;
            if agent.kind == AgentKind::Surface {
                next.contact = in_contact(scene, &next);
            }
        }
    }
    Ok(next)
}
