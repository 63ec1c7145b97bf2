//! The parametric object set used by the benchmarks.

use super::{Part, Primitive, Rgba, SceneObject, Shape, Symmetry};
use crate::geometry::{Pose, Rotation, Vec3};

pub const RED: Rgba = [0.9, 0.1, 0.1, 1.0];
pub const BLUE: Rgba = [0.1, 0.2, 0.9, 1.0];
pub const WHITE: Rgba = [0.95, 0.95, 0.95, 1.0];
pub const GRAY: Rgba = [0.6, 0.6, 0.6, 1.0];
pub const YELLOW: Rgba = [0.9, 0.8, 0.1, 1.0];
pub const GREEN: Rgba = [0.1, 0.8, 0.2, 1.0];
pub const ORANGE: Rgba = [1.0, 0.5, 0.0, 1.0];
pub const PURPLE: Rgba = [0.5, 0.1, 0.7, 1.0];
pub const TEAL: Rgba = [0.0, 0.6, 0.6, 1.0];

pub const MUG_RADIUS: f64 = 0.035;
pub const MUG_HEIGHT: f64 = 0.09;

fn part(shape: Primitive, location: Vec3, orientation: Rotation, color: Rgba) -> Part {
    Part {
        shape,
        pose: Pose::new(location, orientation),
        color,
    }
}

/// Red lower half, blue upper half.
pub fn two_tone_cylinder() -> SceneObject {
    let half = Primitive::Cylinder {
        radius: 0.03,
        height: 0.04,
    };
    SceneObject {
        shape: Shape::Composite {
            parts: vec![
                part(half, Vec3::new(0.0, 0.0, -0.02), Rotation::identity(), RED),
                part(half, Vec3::new(0.0, 0.0, 0.02), Rotation::identity(), BLUE),
            ],
        },
        color: RED,
        symmetry: Some(Symmetry::Axial {
            axis: [0.0, 0.0, 1.0],
            flip: false,
        }),
    }
}

/// The mug's body without its handle.
pub fn plain_cylinder() -> SceneObject {
    SceneObject::primitive(
        Primitive::Cylinder {
            radius: MUG_RADIUS,
            height: MUG_HEIGHT,
        },
        WHITE,
    )
}

/// Cylinder body with a ring handle on the +x side.
pub fn mug() -> SceneObject {
    let handle_center = Vec3::new(MUG_RADIUS + 0.01, 0.0, 0.0);
    SceneObject {
        shape: Shape::Composite {
            parts: vec![
                part(
                    Primitive::Cylinder {
                        radius: MUG_RADIUS,
                        height: MUG_HEIGHT,
                    },
                    Vec3::zeros(),
                    Rotation::identity(),
                    WHITE,
                ),
                part(
                    Primitive::Torus {
                        major_radius: 0.022,
                        minor_radius: 0.006,
                    },
                    handle_center,
                    Rotation::from_axis_angle(&Vec3::x(), std::f64::consts::FRAC_PI_2),
                    WHITE,
                ),
            ],
        },
        color: WHITE,
        symmetry: Some(Symmetry::None),
    }
}

/// True when a mug-frame point belongs to the handle rather than the body.
pub fn on_mug_handle(p: &Vec3) -> bool {
    p.xy().norm() > MUG_RADIUS + 1e-3
}

pub fn dumbbell() -> SceneObject {
    let ball = Primitive::Sphere { radius: 0.022 };
    SceneObject {
        shape: Shape::Composite {
            parts: vec![
                part(ball, Vec3::new(0.0, 0.0, -0.045), Rotation::identity(), TEAL),
                part(ball, Vec3::new(0.0, 0.0, 0.045), Rotation::identity(), TEAL),
                part(
                    Primitive::Cylinder {
                        radius: 0.009,
                        height: 0.07,
                    },
                    Vec3::zeros(),
                    Rotation::identity(),
                    GRAY,
                ),
            ],
        },
        color: TEAL,
        symmetry: Some(Symmetry::Axial {
            axis: [0.0, 0.0, 1.0],
            flip: true,
        }),
    }
}

/// The eight benchmark objects with their labels.
pub fn benchmark_objects() -> Vec<(String, SceneObject)> {
    vec![
        (
            "sphere".into(),
            SceneObject::primitive(Primitive::Sphere { radius: 0.04 }, GRAY),
        ),
        (
            "cube".into(),
            SceneObject::primitive(
                Primitive::Box {
                    width: 0.06,
                    height: 0.06,
                    depth: 0.06,
                },
                YELLOW,
            ),
        ),
        ("two_tone_cylinder".into(), two_tone_cylinder()),
        (
            "capsule".into(),
            SceneObject::primitive(
                Primitive::Capsule {
                    radius: 0.025,
                    height: 0.05,
                },
                GREEN,
            ),
        ),
        (
            "torus".into(),
            SceneObject::primitive(
                Primitive::Torus {
                    major_radius: 0.035,
                    minor_radius: 0.012,
                },
                ORANGE,
            ),
        ),
        ("mug".into(), mug()),
        (
            "flat_box".into(),
            SceneObject::primitive(
                Primitive::Box {
                    width: 0.09,
                    height: 0.05,
                    depth: 0.02,
                },
                PURPLE,
            ),
        ),
        ("dumbbell".into(), dumbbell()),
    ]
}

pub fn by_label(label: &str) -> Option<SceneObject> {
    match label {
        "plain_cylinder" => Some(plain_cylinder()),
        _ => benchmark_objects()
            .into_iter()
            .find(|(l, _)| l == label)
            .map(|(_, o)| o),
    }
}
