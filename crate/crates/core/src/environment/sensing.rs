use serde::{Deserialize, Serialize};

use super::{Rgba, Scene};
use crate::geometry::{Pose, Vec3};

/// Pinhole camera. Sensor frame: `x` right, `y` down, `z` along the
/// optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub height: usize,
    pub width: usize,
    pub zoom: f64,
    /// Field of view at zoom 1, in degrees.
    pub base_fov_deg: f64,
}

impl CameraConfig {
    /// The small, zoomed-in sensor patch.
    pub fn patch() -> Self {
        Self {
            height: 16,
            width: 16,
            zoom: 10.0,
            base_fov_deg: 90.0,
        }
    }

    /// The wide view used to position the agent.
    pub fn view_finder() -> Self {
        Self {
            height: 64,
            width: 64,
            zoom: 1.0,
            base_fov_deg: 90.0,
        }
    }

    pub fn half_extent(&self) -> f64 {
        (self.base_fov_deg.to_radians() / self.zoom / 2.0).tan()
    }

    /// Unit ray direction of pixel `(row, col)` in the sensor frame. The
    /// pixel at `(height/2, width/2)` lies exactly on the optical axis.
    pub fn pixel_direction(&self, row: usize, col: usize) -> Vec3 {
        let s = self.half_extent();
        let u = (col as f64 - (self.width / 2) as f64) / (self.width as f64 / 2.0) * s;
        let v = (row as f64 - (self.height / 2) as f64) / (self.height as f64 / 2.0) * s;
        Vec3::new(u, v, 1.0).normalize()
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self::patch()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPixel {
    /// Body-frame location of the hit; the far end of the ray when off
    /// the object.
    pub location: Vec3,
    pub color: Rgba,
    pub on_object: bool,
    /// Distance along the ray; infinite when off the object.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub pixels: Vec<PatchPixel>,
    pub sensor_pose: Pose,
    pub zoom: f64,
}

const FAR: f64 = 10.0;

impl Patch {
    pub fn pixel(&self, row: usize, col: usize) -> &PatchPixel {
        &self.pixels[row * self.width + col]
    }

    pub fn center(&self) -> &PatchPixel {
        self.pixel(self.height / 2, self.width / 2)
    }

    pub fn on_object_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.on_object).count()
    }

    pub fn on_object_fraction(&self) -> f64 {
        self.on_object_count() as f64 / self.pixels.len() as f64
    }

    pub fn on_object_points(&self) -> impl Iterator<Item = &Vec3> {
        self.pixels.iter().filter(|p| p.on_object).map(|p| &p.location)
    }

    /// Unit optical axis in the body frame.
    pub fn view_direction(&self) -> Vec3 {
        self.sensor_pose.orientation.apply(&Vec3::z())
    }
}

/// One ray per pixel from `sensor_pose` into the scene.
pub fn sense_patch(scene: &Scene, sensor_pose: &Pose, camera: &CameraConfig) -> Patch {
    assert!(camera.height >= 5 && camera.width >= 5, "patches need at least 5x5 pixels");
    let origin = sensor_pose.location;
    let mut pixels = Vec::with_capacity(camera.height * camera.width);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let dir = sensor_pose.orientation.apply(&camera.pixel_direction(row, col));
            pixels.push(match scene.ray_cast(&origin, &dir) {
                Some(hit) => PatchPixel {
                    location: hit.location,
                    color: hit.color,
                    on_object: true,
                    depth: hit.distance,
                },
                None => PatchPixel {
                    location: origin + dir * FAR,
                    color: [0.0; 4],
                    on_object: false,
                    depth: f64::INFINITY,
                },
            });
        }
    }
    Patch {
        height: camera.height,
        width: camera.width,
        pixels,
        sensor_pose: *sensor_pose,
        zoom: camera.zoom,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{look_rotation, ObjectInstance, Primitive, SceneObject};

    fn wall() -> Scene {
        Scene::single(ObjectInstance {
            object: SceneObject::primitive(
                Primitive::Box {
                    width: 10.0,
                    height: 10.0,
                    depth: 0.1,
                },
                [0.2, 0.4, 0.6, 1.0],
            ),
            pose: Pose::identity(),
            label: "wall".into(),
        })
    }

    #[test]
    fn plane_patch_is_coplanar() {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 0.15), look_rotation(&-Vec3::z(), &Vec3::x()));
        let patch = sense_patch(&wall(), &pose, &CameraConfig::patch());
        assert_eq!(patch.on_object_count(), 256);
        for p in &patch.pixels {
            assert!((p.location.z - 0.05).abs() < 1e-9);
            assert!(((p.location - pose.location).norm() - p.depth).abs() < 1e-12);
        }
        assert!((patch.center().depth - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_space_is_off_object() {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 0.15), look_rotation(&Vec3::z(), &Vec3::x()));
        let patch = sense_patch(&wall(), &pose, &CameraConfig::patch());
        assert_eq!(patch.on_object_count(), 0);
    }

    #[test]
    fn center_pixel_is_the_optical_axis() {
        let scene = Scene::single(ObjectInstance {
            object: crate::environment::library::mug(),
            pose: Pose::identity(),
            label: "mug".into(),
        });
        let dir = Vec3::new(-1.0, 0.3, 0.2).normalize();
        let pose = Pose::new(Vec3::new(0.3, -0.09, -0.06), look_rotation(&dir, &Vec3::y()));
        let patch = sense_patch(&scene, &pose, &CameraConfig::patch());
        assert!((patch.view_direction() - dir).norm() < 1e-15);
        let hit = scene.ray_cast(&pose.location, &patch.view_direction()).unwrap();
        assert_eq!(patch.center().location, hit.location);
        assert!(patch.center().on_object);
    }
}
