use nalgebra::{Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset_io::{FrameRecord, GaussianPayload};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One Gaussian with its raw (unconstrained) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Orientation quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color_logit: Vector3<f64>,
    pub feature: Vec<f64>,
}

impl Gaussian {
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3], feature: Vec<f64>) -> Self {
        let c = |v: f64| logit(v.clamp(1e-6, 1.0 - 1e-6));
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: c(opacity),
            color_logit: Vector3::new(c(color[0]), c(color[1]), c(color[2])),
            feature,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn color(&self) -> Vector3<f64> {
        self.color_logit.map(sigmoid)
    }
}

/// Structure-of-arrays storage for all Gaussians of a map.
///
/// Every attribute array is a contiguous parameter group, which is what the
/// optimizer and the checkpoint writer both want.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianMap {
    pub feature_dim: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
    pub features: Vec<f64>,
}

impl GaussianMap {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            ..Default::default()
        }
    }

    pub fn from_gaussians(feature_dim: usize, gaussians: &[Gaussian]) -> Self {
        let mut m = Self::new(feature_dim);
        for g in gaussians {
            m.push(g);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn push(&mut self, g: &Gaussian) {
        assert_eq!(g.feature.len(), self.feature_dim, "feature dim");
        self.positions.extend_from_slice(g.position.as_slice());
        self.rotations.extend_from_slice(&g.rotation);
        self.log_scales.extend_from_slice(g.log_scale.as_slice());
        self.opacity_logits.push(g.opacity_logit);
        self.color_logits.extend_from_slice(g.color_logit.as_slice());
        self.features.extend_from_slice(&g.feature);
    }

    pub fn extend(&mut self, gaussians: &[Gaussian]) {
        for g in gaussians {
            self.push(g);
        }
    }

    pub fn get(&self, i: usize) -> Gaussian {
        let d = self.feature_dim;
        Gaussian {
            position: self.position(i),
            rotation: [
                self.rotations[4 * i],
                self.rotations[4 * i + 1],
                self.rotations[4 * i + 2],
                self.rotations[4 * i + 3],
            ],
            log_scale: Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3]),
            opacity_logit: self.opacity_logits[i],
            color_logit: Vector3::from_column_slice(&self.color_logits[3 * i..3 * i + 3]),
            feature: self.features[d * i..d * (i + 1)].to_vec(),
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[self.feature_dim * i..self.feature_dim * (i + 1)]
    }

    /// Renormalizes every orientation quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|x| *x /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// Keeps only the Gaussians for which `keep` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter(v: &mut Vec<f64>, stride: usize, keep: &[bool]) {
            let mut out = Vec::with_capacity(v.len());
            for (i, k) in keep.iter().enumerate() {
                if *k {
                    out.extend_from_slice(&v[i * stride..(i + 1) * stride]);
                }
            }
            *v = out;
        }
        let d = self.feature_dim;
        filter(&mut self.positions, 3, keep);
        filter(&mut self.rotations, 4, keep);
        filter(&mut self.log_scales, 3, keep);
        filter(&mut self.opacity_logits, 1, keep);
        filter(&mut self.color_logits, 3, keep);
        filter(&mut self.features, d, keep);
    }

    /// Largest distance of any Gaussian center from the centroid.
    pub fn extent(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        let mut c = Vector3::zeros();
        for i in 0..n {
            c += self.position(i);
        }
        c /= n as f64;
        (0..n).map(|i| (self.position(i) - c).norm()).fold(0.0, f64::max)
    }

    pub fn to_payload(&self) -> GaussianPayload {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        GaussianPayload {
            count: self.len(),
            feature_dim: self.feature_dim,
            positions: f(&self.positions),
            rotations: f(&self.rotations),
            log_scales: f(&self.log_scales),
            opacity_logits: f(&self.opacity_logits),
            color_logits: f(&self.color_logits),
            features: f(&self.features),
        }
    }

    pub fn from_payload(p: &GaussianPayload) -> Self {
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect();
        Self {
            feature_dim: p.feature_dim,
            positions: f(&p.positions),
            rotations: f(&p.rotations),
            log_scales: f(&p.log_scales),
            opacity_logits: f(&p.opacity_logits),
            color_logits: f(&p.color_logits),
            features: f(&p.features),
        }
    }
}

/// Per-Gaussian gradients with the same layout as [`GaussianMap`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientBuffer {
    pub feature_dim: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
    pub features: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        Self {
            feature_dim,
            positions: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            log_scales: vec![0.0; 3 * n],
            opacity_logits: vec![0.0; n],
            color_logits: vec![0.0; 3 * n],
            features: vec![0.0; feature_dim * n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn zero(&mut self) {
        for v in self.groups_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn groups(&self) -> [&Vec<f64>; 6] {
        [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.opacity_logits,
            &self.color_logits,
            &self.features,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.positions,
            &mut self.rotations,
            &mut self.log_scales,
            &mut self.opacity_logits,
            &mut self.color_logits,
            &mut self.features,
        ]
    }

    /// Adds `scale · other` into `self`.
    pub fn accumulate(&mut self, other: &GradientBuffer, scale: f64) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Confidence below which pixels never seed a Gaussian.
pub const INIT_CONFIDENCE_THRESHOLD: f64 = 0.0;
/// Std of the initial semantic features.
pub const INIT_FEATURE_STD: f64 = 0.01;

/// Seeds one Gaussian per `stride`-sampled pixel whose confidence exceeds
/// `min_confidence`.
///
/// `pose` is world←camera. `keep` optionally filters pixels (row-major index);
/// the mapping loop uses it to skip pixels already covered by the map.
pub fn init_from_pointmap(
    frame: &FrameRecord,
    pose: &Pose,
    intrinsics: &Intrinsics,
    stride: usize,
    feature_dim: usize,
    min_confidence: f64,
    keep: Option<&dyn Fn(usize) -> bool>,
    seed: u64,
) -> Result<Vec<Gaussian>> {
    if stride == 0 {
        return Err(Error::Config("init stride must be at least 1".into()));
    }
    let (w, h) = (frame.width(), frame.height());
    let scale_factor = stride as f64 / std::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_FEATURE_STD).unwrap();
    let mut out = Vec::new();
    let mut any_confident = false;
    for v in (0..h).step_by(stride) {
        for u in (0..w).step_by(stride) {
            let p = v * w + u;
            if frame.confidence.data[p] <= min_confidence {
                continue;
            }
            any_confident = true;
            if let Some(k) = keep {
                if !k(p) {
                    continue;
                }
            }
            let x = frame.pointmap.pixel(p);
            let cam = Point3::new(x[0], x[1], x[2]);
            let world = pose * cam;
            let c = frame.rgb.pixel(p);
            let scale = scale_factor * cam.z / intrinsics.fx;
            let feature: Vec<f64> = (0..feature_dim).map(|_| normal.sample(&mut rng)).collect();
            out.push(Gaussian::isotropic(
                world.coords,
                scale,
                0.5,
                [c[0], c[1], c[2]],
                feature,
            ));
        }
    }
    if !any_confident {
        return Err(Error::EmptyInit);
    }
    Ok(out)
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw quaternion,
/// including the normalization step.
pub fn quat_matrix_backward(q: &[f64], g: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = |i: usize, j: usize| g[(i, j)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dn = [dw, dx, dy, dz];
    let un = [w, x, y, z];
    let dot: f64 = dn.iter().zip(&un).map(|(a, b)| a * b).sum();
    [
        (dn[0] - un[0] * dot) / n,
        (dn[1] - un[1] * dot) / n,
        (dn[2] - un[2] * dot) / n,
        (dn[3] - un[3] * dot) / n,
    ]
}
