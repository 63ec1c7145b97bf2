//! Turns a raw patch into a CMP message: a surface frame at the center
//! pixel plus pose-independent features.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{
    FeatureValue, Features, Morphology, SenderType, StateMessage, FEATURE_CURVATURES, FEATURE_DEGENERATE,
    FEATURE_RGBA,
};
use crate::environment::Patch;
use crate::geometry::{orthonormalize_frame, SurfaceFrame, Vec3};

pub const MIN_FIT_POINTS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("too few on-object points: {found} (need {needed})")]
    TooFewPoints { found: usize, needed: usize },
    #[error("rank-deficient fit")]
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub sensor_id: String,
    /// Below this movement (meters) an unchanged observation is gated out.
    pub min_displacement: f64,
    /// Per-feature change tolerances for gating.
    pub gate_tolerances: BTreeMap<String, f64>,
    /// Residual scale for the confidence mapping.
    pub sigma_ref: f64,
    /// Standard deviation of additive depth noise (meters).
    pub depth_noise_std: f64,
    pub noise_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            sensor_id: "sensor_0".into(),
            min_displacement: 1e-3,
            gate_tolerances: BTreeMap::from([(FEATURE_RGBA.into(), 0.05), (FEATURE_CURVATURES.into(), 2.0)]),
            sigma_ref: 1e-3,
            depth_noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

/// Principal directions and curvatures at the patch center. Curvature is
/// positive where the surface bulges toward the sensor; `k1 >= k2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureEstimate {
    /// Normal refined by the quadric's linear terms.
    pub normal: Vec3,
    pub dir1: Vec3,
    pub dir2: Vec3,
    pub k1: f64,
    pub k2: f64,
    pub degenerate: bool,
    /// Root-mean-square residual of the quadric fit (meters).
    pub rms: f64,
}

/// `|k1 - k2| < 0.1·max(|k1|, |k2|, 1)`.
pub fn curvature_is_degenerate(k1: f64, k2: f64) -> bool {
    (k1 - k2).abs() < 0.1 * k1.abs().max(k2.abs()).max(1.0)
}

fn on_object(patch: &Patch) -> Result<Vec<Vec3>, SensorError> {
    let pts: Vec<Vec3> = patch.on_object_points().copied().collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(SensorError::TooFewPoints {
            found: pts.len(),
            needed: MIN_FIT_POINTS,
        });
    }
    Ok(pts)
}

/// Total-least-squares plane normal over the on-object points, facing the
/// sensor.
pub fn estimate_point_normal(patch: &Patch) -> Result<Vec3, SensorError> {
    let pts = on_object(patch)?;
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (small, mid) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let largest = eig.eigenvalues[order[2]];
    if !(largest > 0.0) || mid <= 1e-12 * largest || !small.is_finite() {
        return Err(SensorError::RankDeficient);
    }
    let n: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    Ok(if n.dot(&patch.view_direction()) > 0.0 { -n } else { n })
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let f = SurfaceFrame::from_normal(n);
    (f.dir1, f.dir2)
}

struct Quadric {
    /// Coefficients of `z = a x² + b xy + c y² + d x + e y + f`.
    coef: [f64; 6],
    rms: f64,
}

fn fit_quadric(pts: &[Vec3], origin: &Vec3, t1: &Vec3, t2: &Vec3, n: &Vec3) -> Result<Quadric, SensorError> {
    let local: Vec<(f64, f64, f64)> = pts
        .iter()
        .map(|p| {
            let d = p - origin;
            (d.dot(t1), d.dot(t2), d.dot(n))
        })
        .collect();
    let scale = local
        .iter()
        .map(|(x, y, _)| x.abs().max(y.abs()))
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(SensorError::RankDeficient);
    }
    let m = local.len();
    let mut a = DMatrix::zeros(m, 6);
    let mut b = DVector::zeros(m);
    for (i, &(x, y, z)) in local.iter().enumerate() {
        let (u, v) = (x / scale, y / scale);
        a.set_row(i, &nalgebra::RowDVector::from_row_slice(&[u * u, u * v, v * v, u, v, 1.0]));
        b[i] = z / scale;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < 1e-9 * smax {
        return Err(SensorError::RankDeficient);
    }
    let sol = svd.solve(&b, 0.0).map_err(|_| SensorError::RankDeficient)?;
    let resid = &a * &sol - &b;
    let rms = (resid.norm_squared() / m as f64).sqrt() * scale;
    // Undo the coordinate scaling: z/s = q(x/s, y/s).
    let coef = [
        sol[0] / scale,
        sol[1] / scale,
        sol[2] / scale,
        sol[3],
        sol[4],
        sol[5] * scale,
    ];
    Ok(Quadric { coef, rms })
}

/// Quadric fit in the tangent frame at the center point, refined twice by
/// the fit's own gradient.
pub fn estimate_principal_curvatures(patch: &Patch, normal: &Vec3) -> Result<CurvatureEstimate, SensorError> {
    let pts = on_object(patch)?;
    let origin = patch.center().location;
    let mut n = normal.normalize();
    let mut q;
    let mut iter = 0;
    loop {
        let (t1, t2) = tangent_basis(&n);
        q = fit_quadric(&pts, &origin, &t1, &t2, &n)?;
        let [_, _, _, d, e, _] = q.coef;
        let refined = (n - t1 * d - t2 * e).normalize();
        iter += 1;
        if iter == 3 || !refined.iter().all(|c| c.is_finite()) {
            break;
        }
        n = refined;
    }
    let (t1, t2) = tangent_basis(&n);
    let [a, b, c, d, e, _] = q.coef;
    let w = (1.0 + d * d + e * e).sqrt();
    let first = Matrix2::new(1.0 + d * d, d * e, d * e, 1.0 + e * e);
    let second = Matrix2::new(2.0 * a, b, b, 2.0 * c) / w;
    let first_inv = first.try_inverse().ok_or(SensorError::RankDeficient)?;
    // Symmetrize I^{-1/2} II I^{-1/2} so the eigenproblem stays real.
    let sqrt_inv = {
        let eig = SymmetricEigen::new(first_inv);
        eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose()
    };
    let shape = sqrt_inv * second * sqrt_inv;
    let eig = SymmetricEigen::new(0.5 * (shape + shape.transpose()));
    // Surfaces bulging toward the sensor bend away from the normal: negate.
    let (mut k1, mut k2) = (-eig.eigenvalues[0], -eig.eigenvalues[1]);
    let mut v1 = sqrt_inv * eig.eigenvectors.column(0);
    let mut v2 = sqrt_inv * eig.eigenvectors.column(1);
    if k2 > k1 {
        std::mem::swap(&mut k1, &mut k2);
        std::mem::swap(&mut v1, &mut v2);
    }
    let lift = |v: nalgebra::Vector2<f64>| t1 * v.x + t2 * v.y + n * (d * v.x + e * v.y);
    let dir1 = lift(v1);
    let dir2 = lift(v2);
    let frame = orthonormalize_frame(&n, &dir1, &dir2).map_err(|_| SensorError::RankDeficient)?;
    if !(k1.is_finite() && k2.is_finite()) {
        return Err(SensorError::RankDeficient);
    }
    Ok(CurvatureEstimate {
        normal: frame.normal,
        dir1: frame.dir1,
        dir2: frame.dir2,
        k1,
        k2,
        degenerate: curvature_is_degenerate(k1, k2),
        rms: q.rms,
    })
}

fn feature_delta(a: &FeatureValue, b: &FeatureValue) -> f64 {
    match (a, b) {
        (FeatureValue::Vector(x), FeatureValue::Vector(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        }
        (FeatureValue::Symbol(x), FeatureValue::Symbol(y)) if x == y => 0.0,
        _ => f64::INFINITY,
    }
}

fn unchanged(msg: &StateMessage, prev: &StateMessage, config: &SensorConfig) -> bool {
    if (msg.location - prev.location).norm() >= config.min_displacement {
        return false;
    }
    config.gate_tolerances.iter().all(|(name, tol)| match (msg.features.get(name), prev.features.get(name)) {
        (Some(a), Some(b)) => feature_delta(a, b) < *tol,
        (None, None) => true,
        _ => false,
    })
}

fn rejected(patch: &Patch, config: &SensorConfig) -> StateMessage {
    let view = patch.view_direction();
    StateMessage {
        location: patch.center().location,
        morph: Morphology::Frame(SurfaceFrame::from_normal(&-view)),
        features: Features::new(),
        confidence: 0.0,
        use_state: false,
        sender_id: config.sensor_id.clone(),
        sender_type: SenderType::SensorModule,
    }
}

/// Builds the outgoing message for `patch`. `prev_sent` is the last message
/// this sensor passed on with `use_state` set.
pub fn to_cmp(patch: &Patch, prev_sent: Option<&StateMessage>, config: &SensorConfig) -> StateMessage {
    let center = patch.center();
    if !center.on_object {
        return rejected(patch, config);
    }
    let estimate = estimate_point_normal(patch).and_then(|n| estimate_principal_curvatures(patch, &n));
    let Ok(est) = estimate else {
        return rejected(patch, config);
    };
    let mut features = Features::new();
    features.insert(FEATURE_RGBA.into(), FeatureValue::Vector(center.color.to_vec()));
    features.insert(FEATURE_CURVATURES.into(), FeatureValue::Vector(vec![est.k1, est.k2]));
    features.insert(
        FEATURE_DEGENERATE.into(),
        FeatureValue::Vector(vec![if est.degenerate { 1.0 } else { 0.0 }]),
    );
    let mut msg = StateMessage {
        location: center.location,
        morph: Morphology::Frame(SurfaceFrame {
            normal: est.normal,
            dir1: est.dir1,
            dir2: est.dir2,
        }),
        features,
        confidence: (-est.rms / config.sigma_ref).exp().clamp(0.0, 1.0),
        use_state: true,
        sender_id: config.sensor_id.clone(),
        sender_type: SenderType::SensorModule,
    };
    if prev_sent.is_some_and(|prev| unchanged(&msg, prev, config)) {
        msg.use_state = false;
    }
    msg
}

/// Displaces every on-object point along its viewing ray by Gaussian noise.
pub fn add_depth_noise(patch: &Patch, std: f64, rng: &mut ChaCha8Rng) -> Patch {
    let mut noisy = patch.clone();
    if std <= 0.0 {
        return noisy;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let origin = patch.sensor_pose.location;
    for px in noisy.pixels.iter_mut().filter(|p| p.on_object) {
        let ray = (px.location - origin).normalize();
        let dz = normal.sample(rng);
        px.location += ray * dz;
        px.depth += dz;
    }
    noisy
}

/// A sensor module with its gating memory and noise source.
#[derive(Debug, Clone)]
pub struct SensorModule {
    pub config: SensorConfig,
    prev_sent: Option<StateMessage>,
    rng: ChaCha8Rng,
}

impl SensorModule {
    pub fn new(config: SensorConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
        Self {
            config,
            prev_sent: None,
            rng,
        }
    }

    /// Forgets the last sent message; called at episode start.
    pub fn reset(&mut self) {
        self.prev_sent = None;
    }

    pub fn process(&mut self, patch: &Patch) -> StateMessage {
        let noisy;
        let patch = if self.config.depth_noise_std > 0.0 {
            noisy = add_depth_noise(patch, self.config.depth_noise_std, &mut self.rng);
            &noisy
        } else {
            patch
        };
        let msg = to_cmp(patch, self.prev_sent.as_ref(), &self.config);
        if msg.use_state {
            self.prev_sent = Some(msg.clone());
        }
        msg
    }
}
