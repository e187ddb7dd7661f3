//! Pinhole camera, rigid poses, and pixel-to-ray generation.
//!
//! Convention: right-handed, camera looks down its own -z axis (blender
//! style), x right, y up. Pixel (u, v) indexes column u and row v from the
//! top-left corner; rays pass through pixel centers (u + 0.5, v + 0.5).

use crate::error::Error;
use crate::Result;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, f: f64) -> Vec3 {
        Vec3::new(self.x * f, self.y * f, self.z * f)
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// 4x4 camera-to-world rigid transform (column vectors; last row 0 0 0 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub matrix: [[f64; 4]; 4],
}

impl Pose {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Pose { matrix: m }
    }

    pub fn from_matrix(matrix: [[f64; 4]; 4]) -> Self {
        Pose { matrix }
    }

    /// Camera-to-world look-at: camera at `eye`, -z pointing at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let back = (eye - target).normalized(); // camera +z
        let right = up.cross(back).normalized();
        let cam_up = back.cross(right);
        Pose {
            matrix: [
                [right.x, cam_up.x, back.x, eye.x],
                [right.y, cam_up.y, back.y, eye.y],
                [right.z, cam_up.z, back.z, eye.z],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.matrix[0][3], self.matrix[1][3], self.matrix[2][3])
    }

    /// Column `i` of the rotation block.
    pub fn axis(&self, i: usize) -> Vec3 {
        Vec3::new(self.matrix[0][i], self.matrix[1][i], self.matrix[2][i])
    }

    /// World-space direction the camera looks along (-z column).
    pub fn forward(&self) -> Vec3 {
        self.axis(2).scale(-1.0)
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.matrix[0][0] * v.x + self.matrix[0][1] * v.y + self.matrix[0][2] * v.z,
            self.matrix[1][0] * v.x + self.matrix[1][1] * v.y + self.matrix[1][2] * v.z,
            self.matrix[2][0] * v.x + self.matrix[2][1] * v.y + self.matrix[2][2] * v.z,
        )
    }

    /// Inverse-rotate (rotation transpose) a world direction into camera space.
    pub fn rotate_inv(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.matrix[0][0] * v.x + self.matrix[1][0] * v.y + self.matrix[2][0] * v.z,
            self.matrix[0][1] * v.x + self.matrix[1][1] * v.y + self.matrix[2][1] * v.z,
            self.matrix[0][2] * v.x + self.matrix[1][2] * v.y + self.matrix[2][2] * v.z,
        )
    }

    /// How far the rotation block is from orthonormal (max abs deviation of
    /// R^T R from identity).
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.axis(i).dot(self.axis(j));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        for k in 0..3 {
            worst = worst.max(self.matrix[3][k].abs());
        }
        worst = worst.max((self.matrix[3][3] - 1.0).abs());
        worst
    }

    pub fn validate_rigid(&self, tol: f64) -> Result<()> {
        let err = self.orthonormality_error();
        if err > tol {
            return Err(Error::parse(
                "pose",
                format!("rotation block not orthonormal (error {:.3e} > {:.1e})", err, tol),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov_x: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, fov_x: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Usage("image dimensions must be >= 1".into()));
        }
        if !(fov_x > 0.0 && fov_x < std::f64::consts::PI) {
            return Err(Error::Usage(format!(
                "fov_x must be in (0, pi), got {}",
                fov_x
            )));
        }
        Ok(CameraIntrinsics {
            width,
            height,
            fov_x,
        })
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.width as f64 / (2.0 * (self.fov_x / 2.0).tan())
    }
}

/// A single ray: unit direction, world origin, and the scene slab it samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.direction.scale(t)
    }
}

/// Ray through the center of pixel (u, v).
pub fn ray_for_pixel(
    intr: &CameraIntrinsics,
    pose: &Pose,
    bounds: (f64, f64),
    u: usize,
    v: usize,
) -> Result<Ray> {
    if u >= intr.width || v >= intr.height {
        return Err(Error::Range(format!(
            "pixel ({}, {}) outside {}x{}",
            u, v, intr.width, intr.height
        )));
    }
    let f = intr.focal();
    let cx = intr.width as f64 / 2.0;
    let cy = intr.height as f64 / 2.0;
    let dir_cam = Vec3::new(
        (u as f64 + 0.5 - cx) / f,
        -(v as f64 + 0.5 - cy) / f, // image rows grow downward, camera y is up
        -1.0,
    );
    let dir = pose.rotate(dir_cam).normalized();
    Ok(Ray {
        origin: pose.translation(),
        direction: dir,
        t_near: bounds.0,
        t_far: bounds.1,
    })
}

/// All rays of a view in row-major pixel order.
pub fn rays_for_view(
    intr: &CameraIntrinsics,
    pose: &Pose,
    bounds: (f64, f64),
) -> Vec<((usize, usize), Ray)> {
    let mut out = Vec::with_capacity(intr.width * intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            let ray = ray_for_pixel(intr, pose, bounds, u, v).expect("pixel in range");
            out.push(((u, v), ray));
        }
    }
    out
}

/// Project a world point back to continuous pixel coordinates. Inverse of
/// [`ray_for_pixel`] for points in front of the camera.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, point: Vec3) -> Option<(f64, f64)> {
    let rel = point - pose.translation();
    let cam = pose.rotate_inv(rel);
    if cam.z >= 0.0 {
        return None; // behind the camera
    }
    let f = intr.focal();
    let u = cam.x / -cam.z * f + intr.width as f64 / 2.0;
    let v = -(cam.y / -cam.z) * f + intr.height as f64 / 2.0;
    Some((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr64() -> CameraIntrinsics {
        CameraIntrinsics::new(64, 64, 60f64.to_radians()).unwrap()
    }

    #[test]
    fn center_pixel_looks_along_forward_axis() {
        let pose = Pose::identity();
        // An odd resolution has a true center pixel.
        let intr = CameraIntrinsics::new(63, 63, 60f64.to_radians()).unwrap();
        let ray = ray_for_pixel(&intr, &pose, (0.1, 10.0), 31, 31).unwrap();
        let fwd = pose.forward();
        assert!((ray.direction.dot(fwd) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirrored_pixels_have_mirrored_directions() {
        let intr = intr64();
        let pose = Pose::identity();
        let b = (0.1, 10.0);
        for (u, v) in [(3usize, 10usize), (0, 0), (20, 63)] {
            let a = ray_for_pixel(&intr, &pose, b, u, v).unwrap();
            let m = ray_for_pixel(&intr, &pose, b, intr.width - 1 - u, v).unwrap();
            // x components mirror, y and z match.
            assert!((a.direction.x + m.direction.x).abs() < 1e-12);
            assert!((a.direction.y - m.direction.y).abs() < 1e-12);
            assert!((a.direction.z - m.direction.z).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_angle_matches_closed_form() {
        let intr = intr64();
        let pose = Pose::identity();
        let ray = ray_for_pixel(&intr, &pose, (0.1, 10.0), 0, 0).unwrap();
        let f = intr.focal();
        // Corner pixel center offset from the optical axis.
        let dx: f64 = 0.5 - 32.0;
        let dy: f64 = -(0.5 - 32.0);
        let expected = (dx * dx + dy * dy).sqrt().atan2(f);
        let angle = ray.direction.dot(pose.forward()).acos();
        assert!((angle - expected).abs() < 1e-12);
    }

    #[test]
    fn rays_for_view_is_exhaustive_row_major_and_unit() {
        let intr = CameraIntrinsics::new(2, 2, 1.0).unwrap();
        let pose = Pose::look_at(Vec3::new(3.0, 2.0, 1.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let rays = rays_for_view(&intr, &pose, (1.0, 2.0));
        assert_eq!(rays.len(), 4);
        let order: Vec<(usize, usize)> = rays.iter().map(|(p, _)| *p).collect();
        assert_eq!(order, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        for (_, r) in &rays {
            assert!((r.direction.norm() - 1.0).abs() < 1e-9);
            assert!(r.t_near < r.t_far);
        }
    }

    #[test]
    fn out_of_bounds_pixel_is_a_range_error() {
        let intr = intr64();
        let r = ray_for_pixel(&intr, &Pose::identity(), (0.1, 1.0), 64, 0);
        assert!(matches!(r, Err(Error::Range(_))));
    }

    #[test]
    fn projection_inverts_ray_generation() {
        let intr = intr64();
        let pose = Pose::look_at(
            Vec3::new(4.0, -2.0, 3.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
        );
        for (u, v) in [(0usize, 0usize), (13, 50), (63, 63), (31, 7)] {
            let ray = ray_for_pixel(&intr, &pose, (0.5, 8.0), u, v).unwrap();
            for t in [0.7, 2.0, 5.5] {
                let (pu, pv) = project(&intr, &pose, ray.point_at(t)).unwrap();
                assert!((pu - (u as f64 + 0.5)).abs() < 1e-6);
                assert!((pv - (v as f64 + 0.5)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn look_at_is_rigid_and_aims_at_target() {
        let pose = Pose::look_at(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
        );
        assert!(pose.orthonormality_error() < 1e-12);
        let fwd = pose.forward();
        let to_target = (Vec3::ZERO - pose.translation()).normalized();
        assert!((fwd.dot(to_target) - 1.0).abs() < 1e-12);
    }
}
