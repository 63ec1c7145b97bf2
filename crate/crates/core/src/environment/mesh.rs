//! Triangle meshes with optional per-vertex color, an AABB hierarchy for
//! ray casting, and a minimal OBJ reader.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvironmentError, Rgba};
use crate::geometry::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshData {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<Vec<Rgba>>,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0·∞ means the ray is parallel and inside the slab
            if !lo.is_nan() {
                t0 = t0.max(lo);
            }
            if !hi.is_nan() {
                t1 = t1.min(hi);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshHit {
    pub t: f64,
    pub face: usize,
    /// Geometric face normal, flipped to oppose the ray.
    pub normal: Vec3,
    pub color: Option<Rgba>,
}

/// A triangle mesh ready for ray casting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "MeshData", into = "MeshData")]
pub struct Mesh {
    data: MeshData,
    vertices: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl From<Mesh> for MeshData {
    fn from(m: Mesh) -> Self {
        m.data
    }
}

impl From<MeshData> for Mesh {
    fn from(data: MeshData) -> Self {
        let vertices: Vec<Vec3> = data
            .vertices
            .iter()
            .map(|v| Vec3::new(v[0], v[1], v[2]))
            .collect();
        let mut mesh = Mesh {
            order: (0..data.faces.len()).collect(),
            data,
            vertices,
            nodes: Vec::new(),
        };
        if !mesh.data.faces.is_empty() {
            let n = mesh.order.len();
            mesh.build(0, n);
        }
        mesh
    }
}

impl Mesh {
    pub fn new(data: MeshData) -> Result<Self, EnvironmentError> {
        let nv = data.vertices.len();
        if data.faces.is_empty() {
            return Err(EnvironmentError::InvalidMesh("mesh has no faces".into()));
        }
        if let Some(colors) = &data.colors {
            if colors.len() != nv {
                return Err(EnvironmentError::InvalidMesh(
                    "color count does not match vertex count".into(),
                ));
            }
        }
        if data.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(EnvironmentError::InvalidMesh("non-finite vertex".into()));
        }
        for (i, f) in data.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(EnvironmentError::InvalidMesh(format!(
                    "face {i} references a missing vertex"
                )));
            }
        }
        let mesh = Mesh::from(data);
        for i in 0..mesh.data.faces.len() {
            let [a, b, c] = mesh.triangle(i);
            if (b - a).cross(&(c - a)).norm() <= 1e-18 {
                return Err(EnvironmentError::InvalidMesh(format!("face {i} is degenerate")));
            }
        }
        Ok(mesh)
    }

    pub fn data(&self) -> &MeshData {
        &self.data
    }

    pub fn face_count(&self) -> usize {
        self.data.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.data.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    fn centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.triangle(f) {
                bounds.grow(&v);
            }
        }
        let index = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return index;
        }
        let mut centroid_bounds = Aabb::empty();
        for &f in &self.order[start..end] {
            centroid_bounds.grow(&self.centroid(f));
        }
        let axis = (centroid_bounds.max - centroid_bounds.min).imax();
        let mid = (start + end) / 2;
        let centroids: Vec<f64> = (0..self.data.faces.len())
            .map(|f| self.centroid(f)[axis])
            .collect();
        self.order[start..end].sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
        self.nodes.push(BvhNode::Leaf { bounds, start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[index] = BvhNode::Inner {
            bounds,
            left,
            right,
        };
        index
    }

    /// Nearest hit using the hierarchy.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<MeshHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|c| 1.0 / c);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let limit = best.map_or(f64::INFINITY, |b| b.0);
            if self.nodes[i].bounds().entry(origin, &inv, limit).is_none() {
                continue;
            }
            match self.nodes[i] {
                BvhNode::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        if let Some(t) = ray_triangle(origin, dir, &self.triangle(f)) {
                            if best.is_none_or(|b| t < b.0 || (t == b.0 && f < b.1)) {
                                best = Some((t, f));
                            }
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best.map(|(t, f)| self.hit_record(origin, dir, t, f))
    }

    /// Linear scan over every triangle; the reference the hierarchy is
    /// checked against.
    pub fn intersect_brute_force(&self, origin: &Vec3, dir: &Vec3) -> Option<MeshHit> {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..self.face_count() {
            if let Some(t) = ray_triangle(origin, dir, &self.triangle(f)) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, f));
                }
            }
        }
        best.map(|(t, f)| self.hit_record(origin, dir, t, f))
    }

    fn hit_record(&self, origin: &Vec3, dir: &Vec3, t: f64, face: usize) -> MeshHit {
        let [a, b, c] = self.triangle(face);
        let mut normal = (b - a).cross(&(c - a)).normalize();
        if normal.dot(dir) > 0.0 {
            normal = -normal;
        }
        let color = self.data.colors.as_ref().map(|colors| {
            let p = origin + dir * t;
            let (u, v, w) = barycentric(&p, &a, &b, &c);
            let [ia, ib, ic] = self.data.faces[face];
            let mut out = [0.0; 4];
            for (k, o) in out.iter_mut().enumerate() {
                *o = u * colors[ia][k] + v * colors[ib][k] + w * colors[ic][k];
            }
            out
        });
        MeshHit {
            t,
            face,
            normal,
            color,
        }
    }

    /// Distance to the closest triangle, negative behind its face normal.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut sign = 1.0;
        for f in 0..self.face_count() {
            let tri = self.triangle(f);
            let q = closest_point_on_triangle(p, &tri);
            let d = (p - q).norm();
            if d < best {
                best = d;
                let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                sign = if (p - q).dot(&n) < 0.0 { -1.0 } else { 1.0 };
            }
        }
        sign * best
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn load_obj(path: &Path) -> Result<Self, EnvironmentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvironmentError::Io(format!("{}: {e}", path.display())))?;
        parse_obj(&text)
    }
}

/// Möller–Trumbore; returns `t > 0` of the hit.
fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-12).then_some(t)
}

fn barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (f64, f64, f64) {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    (1.0 - v - w, v, w)
}

fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Reads `v x y z [r g b [a]]` and `f i j k ...` records; polygons are fan
/// triangulated and everything else is ignored.
pub fn parse_obj(text: &str) -> Result<Mesh, EnvironmentError> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Option<Rgba>> = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |what: &str| EnvironmentError::ObjParse {
            line: lineno + 1,
            message: what.to_string(),
        };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad vertex coordinate"))?;
                match nums.len() {
                    3 => colors.push(None),
                    6 => colors.push(Some([nums[3], nums[4], nums[5], 1.0])),
                    7 => colors.push(Some([nums[3], nums[4], nums[5], nums[6]])),
                    _ => return Err(bad("vertex needs 3, 6 or 7 values")),
                }
                vertices.push([nums[0], nums[1], nums[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let n = vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let colors = if colors.iter().all(Option::is_some) && !colors.is_empty() {
        Some(colors.into_iter().flatten().collect())
    } else if colors.iter().any(Option::is_some) {
        return Err(EnvironmentError::ObjParse {
            line: 0,
            message: "either all or no vertices must carry a color".into(),
        });
    } else {
        None
    };
    Mesh::new(MeshData {
        vertices,
        faces,
        colors,
    })
}

/// Closed UV sphere, handy for tests and demos.
pub fn uv_sphere(radius: f64, rings: usize, segments: usize) -> Mesh {
    let mut vertices = vec![[0.0, 0.0, radius]];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            vertices.push([
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -radius]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
        faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    let colors = vertices
        .iter()
        .map(|v| [0.5 + v[2] / (2.0 * radius), 0.2, 0.5 - v[2] / (2.0 * radius), 1.0])
        .collect();
    Mesh::new(MeshData {
        vertices,
        faces,
        colors: Some(colors),
    })
    .expect("uv sphere is well formed")
}
