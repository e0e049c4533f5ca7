//! Camera model and rigid-transform helpers shared by every module.

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// A rigid transform. The direction (world←camera, camera←world, frame→keyframe)
/// is always stated at the use site.
pub type Pose = Isometry3<f64>;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at integer
/// coordinates, so `u = fx * x / z + cx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    /// Back-projects pixel `(u, v)` to the camera-frame point at depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Unnormalized viewing ray through pixel `(u, v)` (z = 1).
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.backproject(u, v, 1.0)
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx.is_finite()
            && self.cy.is_finite()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SE(3) exponential of a tangent vector `(v, ω)` with translation first.
pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    let v = Vector3::new(xi[0], xi[1], xi[2]);
    let w = Vector3::new(xi[3], xi[4], xi[5]);
    let theta = w.norm();
    let rot = UnitQuaternion::from_scaled_axis(w);
    let k = skew(&w);
    let vmat = if theta < 1e-8 {
        Matrix3::identity() + 0.5 * k + k * k / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity()
            + (1.0 - theta.cos()) / t2 * k
            + (theta - theta.sin()) / (t2 * theta) * k * k
    };
    Isometry3::from_parts(Translation3::from(vmat * v), rot)
}

/// Re-projects the rotation onto the unit sphere; chained compositions
/// otherwise let the quaternion norm drift.
pub fn renormalized(p: &Pose) -> Pose {
    let q = UnitQuaternion::new_normalize(p.rotation.into_inner());
    Isometry3::from_parts(p.translation, q)
}

/// Geodesic distance between two rotations, in radians.
pub fn rotation_distance(a: &Pose, b: &Pose) -> f64 {
    a.rotation.angle_to(&b.rotation)
}

pub fn translation_distance(a: &Pose, b: &Pose) -> f64 {
    (a.translation.vector - b.translation.vector).norm()
}

/// World←camera pose for a camera at `eye` looking at `target`, with OpenCV
/// axes (x right, y down, z forward). `up` is the world up direction.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    let rot = UnitQuaternion::from_matrix(&r);
    Isometry3::from_parts(Translation3::from(eye), rot)
}

pub fn pose_from_row_major(m: &[f64]) -> Option<Pose> {
    if m.len() != 12 && m.len() != 16 {
        return None;
    }
    let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let t = Vector3::new(m[3], m[7], m[11]);
    let rot = UnitQuaternion::from_matrix(&r);
    Some(Isometry3::from_parts(Translation3::from(t), rot))
}

pub fn pose_to_row_major(p: &Pose) -> [f64; 16] {
    let r = p.rotation.to_rotation_matrix();
    let r = r.matrix();
    let t = p.translation.vector;
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.z,
        0.0,
        0.0,
        0.0,
        1.0,
    ]
}
