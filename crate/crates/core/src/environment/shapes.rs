//! Analytic primitives in their local frame: ray intersection, signed
//! distance and differential geometry.

use serde::{Deserialize, Serialize};

use crate::geometry::{SurfaceFrame, Vec3};

const EPS_T: f64 = 1e-9;

/// Principal quantities at a surface point. Curvature is positive where the
/// surface is convex (bulges out along the normal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceProperties {
    pub frame: SurfaceFrame,
    pub k1: f64,
    pub k2: f64,
}

impl SurfaceProperties {
    fn new(normal: Vec3, dir1: Vec3, k1: f64, k2: f64) -> Self {
        Self {
            frame: SurfaceFrame::from_normal_dir1(normal, dir1),
            k1,
            k2,
        }
    }

    fn flat(normal: Vec3) -> Self {
        Self {
            frame: SurfaceFrame::from_normal(&normal),
            k1: 0.0,
            k2: 0.0,
        }
    }
}

/// Centered at the origin. Axis-symmetric shapes use `z` as their axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    /// Capped cylinder spanning `z ∈ [-height/2, height/2]`.
    Cylinder { radius: f64, height: f64 },
    /// Cylinder segment of length `height` with hemispherical caps.
    Capsule { radius: f64, height: f64 },
    Box { width: f64, height: f64, depth: f64 },
    Torus { major_radius: f64, minor_radius: f64 },
}

impl Primitive {
    pub fn dimensions_valid(&self) -> bool {
        let pos = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        match *self {
            Primitive::Sphere { radius } => pos(&[radius]),
            Primitive::Cylinder { radius, height } | Primitive::Capsule { radius, height } => {
                pos(&[radius, height])
            }
            Primitive::Box {
                width,
                height,
                depth,
            } => pos(&[width, height, depth]),
            Primitive::Torus {
                major_radius,
                minor_radius,
            } => pos(&[major_radius, minor_radius]) && minor_radius < major_radius,
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => radius,
            Primitive::Cylinder { radius, height } => (radius * radius + height * height / 4.0).sqrt(),
            Primitive::Capsule { radius, height } => radius + height / 2.0,
            Primitive::Box {
                width,
                height,
                depth,
            } => 0.5 * (width * width + height * height + depth * depth).sqrt(),
            Primitive::Torus {
                major_radius,
                minor_radius,
            } => major_radius + minor_radius,
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Sphere { radius } => p.norm() - radius,
            Primitive::Cylinder { radius, height } => {
                let dr = p.xy().norm() - radius;
                let dz = p.z.abs() - height / 2.0;
                dr.max(dz).min(0.0) + (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
            }
            Primitive::Capsule { radius, height } => {
                let z = p.z.clamp(-height / 2.0, height / 2.0);
                (p - Vec3::new(0.0, 0.0, z)).norm() - radius
            }
            Primitive::Box {
                width,
                height,
                depth,
            } => {
                let q = p.abs() - Vec3::new(width, height, depth) / 2.0;
                q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
            }
            Primitive::Torus {
                major_radius,
                minor_radius,
            } => {
                let q = nalgebra::Vector2::new(p.xy().norm() - major_radius, p.z);
                q.norm() - minor_radius
            }
        }
    }

    /// Nearest hit along `origin + t·dir` with `t > 0`; `dir` must be unit.
    /// Returns the distance and the outward normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Primitive::Sphere { radius } => {
                let t = sphere_hit(origin, dir, &Vec3::zeros(), radius)?;
                Some((t, (origin + dir * t) / radius))
            }
            Primitive::Cylinder { radius, height } => {
                let half = height / 2.0;
                let mut best = lateral_hit(origin, dir, radius, half);
                for z in [-half, half] {
                    if let Some(t) = plane_hit(origin.z, dir.z, z) {
                        let p = origin + dir * t;
                        if p.xy().norm_squared() <= radius * radius {
                            best = nearer(best, Some((t, Vec3::new(0.0, 0.0, z.signum()))));
                        }
                    }
                }
                best
            }
            Primitive::Capsule { radius, height } => {
                let half = height / 2.0;
                let mut best = lateral_hit(origin, dir, radius, half);
                for z in [-half, half] {
                    let c = Vec3::new(0.0, 0.0, z);
                    if let Some(t) = sphere_hit(origin, dir, &c, radius) {
                        let p = origin + dir * t;
                        if (p.z - z) * z.signum() >= 0.0 {
                            best = nearer(best, Some((t, (p - c) / radius)));
                        }
                    }
                    // the far side of a cap sphere can be the first valid hit
                    // when the near side lies inside the cylinder segment
                    if let Some(t) = sphere_hit_far(origin, dir, &c, radius) {
                        let p = origin + dir * t;
                        if (p.z - z) * z.signum() >= 0.0 {
                            best = nearer(best, Some((t, (p - c) / radius)));
                        }
                    }
                }
                best
            }
            Primitive::Box {
                width,
                height,
                depth,
            } => box_hit(origin, dir, &(Vec3::new(width, height, depth) / 2.0)),
            Primitive::Torus { .. } => {
                let t = self.march(origin, dir)?;
                let p = origin + dir * t;
                Some((t, self.gradient(&p)))
            }
        }
    }

    /// Sphere tracing; exact SDFs never overshoot the first surface.
    fn march(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let r = self.bounding_radius() * 1.01;
        let (t0, t1) = sphere_span(origin, dir, &Vec3::zeros(), r)?;
        let mut t = t0.max(0.0);
        let scale = self.bounding_radius();
        for _ in 0..20_000 {
            if t > t1 {
                return None;
            }
            let d = self.signed_distance(&(origin + dir * t));
            if d.abs() < 1e-12 * scale.max(1.0) {
                return (t > EPS_T).then_some(t);
            }
            if d < 0.0 {
                // started inside; step out until the exit surface
                t += (-d).max(1e-9);
                continue;
            }
            t += d;
        }
        None
    }

    /// Normalized SDF gradient (outward normal) by central differences.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = 1e-7 * self.bounding_radius().max(1e-3);
        let g = Vec3::new(
            self.signed_distance(&(p + Vec3::x() * h)) - self.signed_distance(&(p - Vec3::x() * h)),
            self.signed_distance(&(p + Vec3::y() * h)) - self.signed_distance(&(p - Vec3::y() * h)),
            self.signed_distance(&(p + Vec3::z() * h)) - self.signed_distance(&(p - Vec3::z() * h)),
        );
        g.try_normalize(1e-300).unwrap_or_else(Vec3::z)
    }

    /// Analytic normal, principal directions and curvatures at a point on
    /// the surface.
    pub fn surface_properties(&self, p: &Vec3) -> SurfaceProperties {
        match *self {
            Primitive::Sphere { radius } => {
                let mut props = SurfaceProperties::flat(p.normalize());
                props.k1 = 1.0 / radius;
                props.k2 = 1.0 / radius;
                props
            }
            Primitive::Cylinder { radius, height } => {
                let on_side = (p.xy().norm() - radius).abs() <= (p.z.abs() - height / 2.0).abs();
                if on_side {
                    cylinder_side(p, radius)
                } else {
                    SurfaceProperties::flat(Vec3::new(0.0, 0.0, p.z.signum()))
                }
            }
            Primitive::Capsule { radius, height } => {
                let half = height / 2.0;
                if p.z.abs() <= half {
                    cylinder_side(p, radius)
                } else {
                    let c = Vec3::new(0.0, 0.0, half * p.z.signum());
                    let mut props = SurfaceProperties::flat((p - c).normalize());
                    props.k1 = 1.0 / radius;
                    props.k2 = 1.0 / radius;
                    props
                }
            }
            Primitive::Box {
                width,
                height,
                depth,
            } => {
                let half = Vec3::new(width, height, depth) / 2.0;
                let rel = p.abs() - half;
                let axis = rel.imax();
                let mut n = Vec3::zeros();
                n[axis] = p[axis].signum();
                SurfaceProperties::flat(n)
            }
            Primitive::Torus {
                major_radius,
                minor_radius,
            } => {
                let radial = Vec3::new(p.x, p.y, 0.0).normalize();
                let center = radial * major_radius;
                let n = (p - center).normalize();
                let toroidal = Vec3::new(-p.y, p.x, 0.0).normalize();
                let cos = n.dot(&radial);
                let k_tube = 1.0 / minor_radius;
                let k_ring = cos / (major_radius + minor_radius * cos);
                // k_tube always dominates: |k_ring| > k_tube would need R < r
                SurfaceProperties::new(n, toroidal.cross(&n), k_tube, k_ring)
            }
        }
    }
}

fn cylinder_side(p: &Vec3, radius: f64) -> SurfaceProperties {
    let n = Vec3::new(p.x, p.y, 0.0).normalize();
    let circumferential = Vec3::new(-n.y, n.x, 0.0);
    SurfaceProperties::new(n, circumferential, 1.0 / radius, 0.0)
}

fn nearer(a: Option<(f64, Vec3)>, b: Option<(f64, Vec3)>) -> Option<(f64, Vec3)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn sphere_span(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<(f64, f64)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

fn sphere_hit(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let (t0, t1) = sphere_span(origin, dir, center, radius)?;
    if t0 > EPS_T {
        Some(t0)
    } else if t1 > EPS_T {
        Some(t1)
    } else {
        None
    }
}

fn sphere_hit_far(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let (_, t1) = sphere_span(origin, dir, center, radius)?;
    (t1 > EPS_T).then_some(t1)
}

fn plane_hit(o: f64, d: f64, z: f64) -> Option<f64> {
    if d.abs() < 1e-15 {
        return None;
    }
    let t = (z - o) / d;
    (t > EPS_T).then_some(t)
}

/// Infinite-cylinder hit restricted to `|z| ≤ half`.
fn lateral_hit(origin: &Vec3, dir: &Vec3, radius: f64, half: f64) -> Option<(f64, Vec3)> {
    let a = dir.x * dir.x + dir.y * dir.y;
    if a < 1e-18 {
        return None;
    }
    let b = origin.x * dir.x + origin.y * dir.y;
    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    for t in [(-b - s) / a, (-b + s) / a] {
        if t > EPS_T {
            let p = origin + dir * t;
            if p.z.abs() <= half {
                return Some((t, Vec3::new(p.x, p.y, 0.0) / radius));
            }
        }
    }
    None
}

fn box_hit(origin: &Vec3, dir: &Vec3, half: &Vec3) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i].abs() > half[i] {
                return None;
            }
            continue;
        }
        let t1 = (-half[i] - origin[i]) / dir[i];
        let t2 = (half[i] - origin[i]) / dir[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            near_axis = i;
        }
        if hi < t_far {
            t_far = hi;
            far_axis = i;
        }
    }
    if t_near > t_far || t_far <= EPS_T {
        return None;
    }
    let (t, axis) = if t_near > EPS_T {
        (t_near, near_axis)
    } else {
        (t_far, far_axis)
    };
    let p = origin + dir * t;
    let mut n = Vec3::zeros();
    n[axis] = p[axis].signum();
    Some((t, n))
}
