//! EWA projection of 3D Gaussians onto the image plane and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Point3, Vector2, Vector3};

use super::gaussian::{quat_matrix_backward, quat_to_matrix, sigmoid, GaussianMap};
use crate::geometry::{Intrinsics, Pose};

/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass term added to the diagonal of every 2D covariance, in px².
pub const COV2D_BLUR: f64 = 0.3;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub index: usize,
    pub mean: Vector2<f64>,
    /// Symmetric 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`, blur included.
    pub cov: [f64; 3],
    /// Inverse covariance in the same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    /// `3 · sqrt(largest eigenvalue)`, px.
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

fn covariance_3d(rotation: &[f64], log_scale: &[f64]) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let s = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * log_scale[0]).exp(),
        (2.0 * log_scale[1]).exp(),
        (2.0 * log_scale[2]).exp(),
    ));
    r * s * r.transpose()
}

fn perspective_jacobian(t: &Vector3<f64>, k: &Intrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * t.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * t.y * iz * iz,
    )
}

/// Projects Gaussian `i` through the camera←world `pose`.
///
/// Returns `None` when it lies in front of the near plane or when its mean
/// falls outside the image dilated by its 3σ radius.
pub fn project_gaussian(map: &GaussianMap, i: usize, pose: &Pose, k: &Intrinsics) -> Option<Projected> {
    let t = (pose * Point3::from(map.position(i))).coords;
    if t.z <= NEAR_PLANE {
        return None;
    }
    let w = pose.rotation.to_rotation_matrix().into_inner();
    let sigma3 = covariance_3d(&map.rotations[4 * i..4 * i + 4], &map.log_scales[3 * i..3 * i + 3]);
    let j = perspective_jacobian(&t, k);
    let cov = j * w * sigma3 * w.transpose() * j.transpose() + Matrix2::identity() * COV2D_BLUR;
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    let (u, v) = k.project(&t);
    if u + radius < -0.5
        || u - radius > k.width as f64 - 0.5
        || v + radius < -0.5
        || v - radius > k.height as f64 - 0.5
    {
        return None;
    }
    let cl = &map.color_logits[3 * i..3 * i + 3];
    Some(Projected {
        index: i,
        mean: Vector2::new(u, v),
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        radius,
        opacity: sigmoid(map.opacity_logits[i]),
        color: [sigmoid(cl[0]), sigmoid(cl[1]), sigmoid(cl[2])],
    })
}

/// Projects every Gaussian and returns the survivors sorted by ascending
/// depth, ties broken by index.
pub fn project_all(map: &GaussianMap, pose: &Pose, k: &Intrinsics) -> Vec<Projected> {
    let mut out: Vec<Projected> = (0..map.len())
        .filter_map(|i| project_gaussian(map, i, pose, k))
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Screen-space gradient of one Gaussian, as accumulated by the rasterizer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScreenGrad {
    pub mean: [f64; 2],
    /// Gradient w.r.t. the conic parameters `[K00, K01, K11]` where the
    /// off-diagonal parameter enters the quadratic form twice.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

/// 3D parameter gradients of one Gaussian produced by [`project_backward`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamGrad {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color_logit: [f64; 3],
}

/// Chains screen-space gradients back through the projection.
pub fn project_backward(map: &GaussianMap, proj: &Projected, g: &ScreenGrad, pose: &Pose, k: &Intrinsics) -> ParamGrad {
    let i = proj.index;
    let t = (pose * Point3::from(map.position(i))).coords;
    let w = pose.rotation.to_rotation_matrix().into_inner();
    let q = &map.rotations[4 * i..4 * i + 4];
    let ls = &map.log_scales[3 * i..3 * i + 3];
    let r = quat_to_matrix(q);
    let svec = Vector3::new(ls[0].exp(), ls[1].exp(), ls[2].exp());
    let m = r * Matrix3::from_diagonal(&svec);
    let sigma3 = m * m.transpose();
    let sigma_c = w * sigma3 * w.transpose();
    let j = perspective_jacobian(&t, k);

    // conic -> covariance: dL/dΣ = -K G_K K with symmetric full-matrix grads
    let kk = Matrix2::new(proj.conic[0], proj.conic[1], proj.conic[1], proj.conic[2]);
    let gk = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov = -(kk * gk * kk);

    // Σ2 = J Σc Jᵀ + blur
    let g_sigma_c = j.transpose() * g_cov * j;
    let g_j = 2.0 * g_cov * j * sigma_c;
    let g_sigma3 = w.transpose() * g_sigma_c * w;
    let g_m = 2.0 * g_sigma3 * m;
    let mut g_r = Matrix3::zeros();
    let mut g_logscale = [0.0; 3];
    for c in 0..3 {
        let mut ds = 0.0;
        for row in 0..3 {
            g_r[(row, c)] = g_m[(row, c)] * svec[c];
            ds += r[(row, c)] * g_m[(row, c)];
        }
        g_logscale[c] = ds * svec[c];
    }
    let g_q = quat_matrix_backward(q, &g_r);

    // camera-space point receives gradients from the mean and from J
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let mut g_t = Vector3::new(
        g.mean[0] * k.fx * iz,
        g.mean[1] * k.fy * iz,
        -g.mean[0] * k.fx * t.x * iz2 - g.mean[1] * k.fy * t.y * iz2,
    );
    g_t.x += g_j[(0, 2)] * (-k.fx * iz2);
    g_t.y += g_j[(1, 2)] * (-k.fy * iz2);
    g_t.z += g_j[(0, 0)] * (-k.fx * iz2)
        + g_j[(0, 2)] * (2.0 * k.fx * t.x * iz2 * iz)
        + g_j[(1, 1)] * (-k.fy * iz2)
        + g_j[(1, 2)] * (2.0 * k.fy * t.y * iz2 * iz);
    let g_x = w.transpose() * g_t;

    let o = proj.opacity;
    let c = proj.color;
    ParamGrad {
        position: [g_x.x, g_x.y, g_x.z],
        rotation: g_q,
        log_scale: g_logscale,
        opacity_logit: g.opacity * o * (1.0 - o),
        color_logit: [
            g.color[0] * c[0] * (1.0 - c[0]),
            g.color[1] * c[1] * (1.0 - c[1]),
            g.color[2] * c[2] * (1.0 - c[2]),
        ],
    }
}
