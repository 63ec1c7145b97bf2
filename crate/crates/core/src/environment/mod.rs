//! Synthetic world: parametric objects and meshes, ray-cast patch sensing
//! and the agents that carry sensors through it.

mod agent;
pub mod library;
pub mod mesh;
mod sensing;
pub mod shapes;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agent::{apply_action, look_rotation, orbit_pose, Action, AgentKind, AgentState, SensorMount};
pub use mesh::{Mesh, MeshData};
pub use sensing::{sense_patch, CameraConfig, Patch, PatchPixel};
pub use shapes::{Primitive, SurfaceProperties};

use crate::geometry::{transform_point, Pose, Rotation, Vec3};

pub type Rgba = [f64; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("OBJ parse error on line {line}: {message}")]
    ObjParse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("point is {0:e} m from the surface")]
    OffSurface(f64),
    #[error("analytic surface properties are not available for meshes")]
    MeshUnsupported,
    #[error("action {action} is not available to a {kind:?} agent")]
    ActionMismatch { action: &'static str, kind: AgentKind },
}

/// One colored primitive of a composite object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub shape: Primitive,
    #[serde(default)]
    pub pose: Pose,
    pub color: Rgba,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Primitive { primitive: Primitive },
    Composite { parts: Vec<Part> },
    Mesh { mesh: Mesh },
}

/// Rotational symmetries of an object, used to score pose estimates on
/// objects whose pose is only defined up to a symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Symmetry {
    None,
    /// Every rotation maps the object onto itself.
    Full,
    /// Continuous symmetry about `axis`; `flip` adds the half turns that
    /// reverse the axis.
    Axial { axis: [f64; 3], flip: bool },
    /// A finite rotation group, identity included.
    Discrete { rotations: Vec<Rotation> },
}

impl Symmetry {
    /// Smallest geodesic distance between `detected` and any symmetric
    /// equivalent of `truth`, in radians.
    pub fn rotation_error(&self, detected: &Rotation, truth: &Rotation) -> f64 {
        let relative = truth.inverse().compose(detected);
        match self {
            Symmetry::None => relative.angle(),
            Symmetry::Full => 0.0,
            Symmetry::Axial { axis, flip } => {
                let a = Vec3::new(axis[0], axis[1], axis[2]).normalize();
                let angle = relative.apply(&a).dot(&a).clamp(-1.0, 1.0).acos();
                if *flip {
                    angle.min(std::f64::consts::PI - angle)
                } else {
                    angle
                }
            }
            Symmetry::Discrete { rotations } => rotations
                .iter()
                .map(|s| relative.geodesic_distance(s))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// The 24 proper rotations of a cube.
    pub fn cube() -> Self {
        Symmetry::Discrete {
            rotations: signed_permutations(|_| true),
        }
    }

    /// The identity plus half turns about each coordinate axis.
    pub fn cuboid() -> Self {
        Symmetry::Discrete {
            rotations: signed_permutations(|perm| perm == [0, 1, 2]),
        }
    }

    /// Quarter turns about `z` plus the half turns that flip it.
    pub fn square_prism() -> Self {
        Symmetry::Discrete {
            rotations: signed_permutations(|perm| perm[2] == 2),
        }
    }
}

fn signed_permutations(keep: impl Fn([usize; 3]) -> bool) -> Vec<Rotation> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for perm in perms.into_iter().filter(|p| keep(*p)) {
        for signs in 0..8 {
            let mut rows = [[0.0; 3]; 3];
            for (row, &col) in perm.iter().enumerate() {
                rows[row][col] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            let r = Rotation::from_rows(rows);
            if r.matrix().determinant() > 0.0 {
                out.push(r);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    /// Color of primitives and of meshes without vertex colors.
    #[serde(default = "default_color")]
    pub color: Rgba,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<Symmetry>,
}

fn default_color() -> Rgba {
    [0.7, 0.7, 0.7, 1.0]
}

/// Hit in an object's local frame.
#[derive(Debug, Clone, Copy)]
struct LocalHit {
    t: f64,
    normal: Vec3,
    color: Rgba,
}

impl SceneObject {
    pub fn primitive(primitive: Primitive, color: Rgba) -> Self {
        Self {
            shape: Shape::Primitive { primitive },
            color,
            symmetry: None,
        }
    }

    pub fn validate(&self) -> Result<(), EnvironmentError> {
        let ok = match &self.shape {
            Shape::Primitive { primitive } => primitive.dimensions_valid(),
            Shape::Composite { parts } => {
                !parts.is_empty() && parts.iter().all(|p| p.shape.dimensions_valid())
            }
            Shape::Mesh { mesh } => mesh.face_count() > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(EnvironmentError::InvalidScene(
                "object dimensions must be positive".into(),
            ))
        }
    }

    /// Declared symmetry, or the one implied by a bare primitive.
    pub fn symmetry(&self) -> Symmetry {
        if let Some(s) = &self.symmetry {
            return s.clone();
        }
        let z = [0.0, 0.0, 1.0];
        match &self.shape {
            Shape::Primitive { primitive } => match *primitive {
                Primitive::Sphere { .. } => Symmetry::Full,
                Primitive::Cylinder { .. } | Primitive::Capsule { .. } | Primitive::Torus { .. } => {
                    Symmetry::Axial { axis: z, flip: true }
                }
                Primitive::Box {
                    width,
                    height,
                    depth,
                } => {
                    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.max(b);
                    if eq(width, height) && eq(height, depth) {
                        Symmetry::cube()
                    } else if eq(width, height) {
                        Symmetry::square_prism()
                    } else {
                        Symmetry::cuboid()
                    }
                }
            },
            _ => Symmetry::None,
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match &self.shape {
            Shape::Primitive { primitive } => primitive.bounding_radius(),
            Shape::Composite { parts } => parts
                .iter()
                .map(|p| p.pose.location.norm() + p.shape.bounding_radius())
                .fold(0.0, f64::max),
            Shape::Mesh { mesh } => mesh.bounding_radius(),
        }
    }

    fn intersect_local(&self, origin: &Vec3, dir: &Vec3) -> Option<LocalHit> {
        match &self.shape {
            Shape::Primitive { primitive } => primitive.intersect(origin, dir).map(|(t, normal)| LocalHit {
                t,
                normal,
                color: self.color,
            }),
            Shape::Composite { parts } => {
                let mut best: Option<LocalHit> = None;
                for part in parts {
                    let o = part.pose.orientation.apply_inverse(&(origin - part.pose.location));
                    let d = part.pose.orientation.apply_inverse(dir);
                    if let Some((t, n)) = part.shape.intersect(&o, &d) {
                        if best.is_none_or(|b| t < b.t) {
                            best = Some(LocalHit {
                                t,
                                normal: part.pose.orientation.apply(&n),
                                color: part.color,
                            });
                        }
                    }
                }
                best
            }
            Shape::Mesh { mesh } => mesh.intersect(origin, dir).map(|h| LocalHit {
                t: h.t,
                normal: h.normal,
                color: h.color.unwrap_or(self.color),
            }),
        }
    }

    /// Signed distance in the object's local frame.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match &self.shape {
            Shape::Primitive { primitive } => primitive.signed_distance(p),
            Shape::Composite { parts } => parts
                .iter()
                .map(|part| {
                    let q = part.pose.orientation.apply_inverse(&(p - part.pose.location));
                    part.shape.signed_distance(&q)
                })
                .fold(f64::INFINITY, f64::min),
            Shape::Mesh { mesh } => mesh.signed_distance(p),
        }
    }
}

/// Analytic normal, principal directions and curvatures at a point on the
/// surface of `object`, both in the object's local frame.
pub fn analytic_surface_properties(
    object: &SceneObject,
    point: &Vec3,
) -> Result<SurfaceProperties, EnvironmentError> {
    let tol = 1e-6;
    match &object.shape {
        Shape::Mesh { .. } => Err(EnvironmentError::MeshUnsupported),
        Shape::Primitive { primitive } => {
            let d = primitive.signed_distance(point);
            if d.abs() > tol {
                return Err(EnvironmentError::OffSurface(d));
            }
            Ok(primitive.surface_properties(point))
        }
        Shape::Composite { parts } => {
            let d = object.signed_distance(point);
            if d.abs() > tol {
                return Err(EnvironmentError::OffSurface(d));
            }
            let part = parts
                .iter()
                .min_by(|a, b| {
                    let da = a.shape.signed_distance(&a.pose.orientation.apply_inverse(&(point - a.pose.location)));
                    let db = b.shape.signed_distance(&b.pose.orientation.apply_inverse(&(point - b.pose.location)));
                    da.abs().total_cmp(&db.abs())
                })
                .expect("composites have parts");
            let q = part.pose.orientation.apply_inverse(&(point - part.pose.location));
            let props = part.shape.surface_properties(&q);
            Ok(SurfaceProperties {
                frame: props.frame.rotated(&part.pose.orientation),
                ..props
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub object: SceneObject,
    pub pose: Pose,
    pub label: String,
}

impl ObjectInstance {
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.pose.orientation.apply_inverse(&(p - self.pose.location))
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        transform_point(&self.pose, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub location: Vec3,
    pub distance: f64,
    pub normal: Vec3,
    pub color: Rgba,
    pub instance: usize,
}

/// Objects do not move during an episode; there is no physics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub instances: Vec<ObjectInstance>,
}

impl Scene {
    pub fn single(instance: ObjectInstance) -> Self {
        Self {
            instances: vec![instance],
        }
    }

    /// Nearest intersection along the ray; `dir` must be unit length.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (i, inst) in self.instances.iter().enumerate() {
            let o = inst.to_local(origin);
            let d = inst.pose.orientation.apply_inverse(dir);
            if let Some(hit) = inst.object.intersect_local(&o, &d) {
                if best.is_none_or(|b| hit.t < b.distance) {
                    best = Some(RayHit {
                        location: origin + dir * hit.t,
                        distance: hit.t,
                        normal: inst.pose.orientation.apply(&hit.normal),
                        color: hit.color,
                        instance: i,
                    });
                }
            }
        }
        best
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.instances
            .iter()
            .map(|inst| inst.object.signed_distance(&inst.to_local(p)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Outward unit normal of the nearest surface, from the distance field.
    pub fn distance_gradient(&self, p: &Vec3) -> Vec3 {
        let h = 1e-7;
        let g = Vec3::from_fn(|i, _| {
            let mut e = Vec3::zeros();
            e[i] = h;
            self.signed_distance(&(p + e)) - self.signed_distance(&(p - e))
        });
        g.try_normalize(1e-300).unwrap_or_else(Vec3::z)
    }

    /// World-frame analytic properties at a world-frame surface point.
    pub fn surface_properties(
        &self,
        instance: usize,
        world_point: &Vec3,
    ) -> Result<SurfaceProperties, EnvironmentError> {
        let inst = self
            .instances
            .get(instance)
            .ok_or_else(|| EnvironmentError::InvalidScene("no such instance".into()))?;
        let props = analytic_surface_properties(&inst.object, &inst.to_local(world_point))?;
        Ok(SurfaceProperties {
            frame: props.frame.rotated(&inst.pose.orientation),
            ..props
        })
    }
}

/// Shape description as written in scene files; `obj_file` is resolved
/// relative to the scene file on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeSpec {
    Primitive { primitive: Primitive },
    Composite { parts: Vec<Part> },
    Mesh { mesh: Mesh },
    ObjFile { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub shape: ShapeSpec,
    #[serde(default = "default_color")]
    pub color: Rgba,
    #[serde(default)]
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<Symmetry>,
}

/// Scene description file: candidate objects with their default poses and
/// the agent's starting pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub agent_start: Option<Pose>,
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self, EnvironmentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvironmentError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EnvironmentError::InvalidScene(e.to_string()))
    }

    /// Instances for every object, with OBJ files read from `base_dir`.
    pub fn instances(&self, base_dir: &Path) -> Result<Vec<ObjectInstance>, EnvironmentError> {
        self.objects
            .iter()
            .map(|spec| {
                let shape = match &spec.shape {
                    ShapeSpec::Primitive { primitive } => Shape::Primitive {
                        primitive: *primitive,
                    },
                    ShapeSpec::Composite { parts } => Shape::Composite {
                        parts: parts.clone(),
                    },
                    ShapeSpec::Mesh { mesh } => Shape::Mesh { mesh: mesh.clone() },
                    ShapeSpec::ObjFile { path } => Shape::Mesh {
                        mesh: Mesh::load_obj(&base_dir.join(path))?,
                    },
                };
                let object = SceneObject {
                    shape,
                    color: spec.color,
                    symmetry: spec.symmetry.clone(),
                };
                object.validate()?;
                Ok(ObjectInstance {
                    object,
                    pose: spec.pose,
                    label: spec.label.clone(),
                })
            })
            .collect()
    }
}
