//! Synthetic ground-truth scenes.
//!
//! A desk plane carries a few boxes and spheres; every object is cut into
//! horizontal slabs ("parts") with their own albedo and label. Frames are
//! ray-cast along a circular orbit and provide everything the mapping engine
//! consumes: RGB, a noisy camera-frame pointmap with confidences, a part-level
//! and an object-level label layer, and a unit embedding per visible label.
//!
//! [`pairwise_pointmap`] stands in for a two-view network prediction: it
//! expresses one frame's points in another camera's frame using the
//! ground-truth relative pose plus independent depth noise.

use std::collections::BTreeMap;

use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset_io::{FrameRecord, MaskRecord, SceneDataset};
use crate::error::{Error, Result};
use crate::geometry::{look_at, Intrinsics, Pose};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_objects: usize,
    pub parts_per_object: usize,
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    /// Total orbit angle swept over all frames, radians.
    pub angular_span: f64,
    /// Relative std of the multiplicative depth noise.
    pub depth_noise_sigma: f64,
    pub confidence_floor: f64,
    pub embedding_dim: usize,
    /// Std of per-view isotropic noise added to each mask embedding before
    /// renormalization; 0 gives the canonical embedding in every view.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_objects: 4,
            parts_per_object: 3,
            width: 96,
            height: 96,
            n_frames: 120,
            orbit_radius: 2.4,
            orbit_height: 1.3,
            angular_span: 1.4,
            depth_noise_sigma: 0.0,
            confidence_floor: 0.2,
            embedding_dim: 32,
            embedding_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width < 32 || self.height < 32 {
            return bad("image size must be at least 32x32");
        }
        if self.n_objects == 0 || self.parts_per_object == 0 {
            return bad("need at least one object with one part");
        }
        if self.n_frames == 0 {
            return bad("need at least one frame");
        }
        if !(self.depth_noise_sigma >= 0.0) || !(self.embedding_noise >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return bad("confidence_floor must lie in [0,1]");
        }
        if !(self.orbit_radius > 0.0) || !self.orbit_radius.is_finite() {
            return bad("degenerate trajectory: orbit radius must be positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding dim must be positive");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = 0.9 * self.width as f64;
        Intrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn num_labels(&self) -> usize {
        self.n_objects * (1 + self.parts_per_object)
    }

    pub fn object_label(&self, object: usize) -> i32 {
        object as i32
    }

    pub fn part_label(&self, object: usize, part: usize) -> i32 {
        (self.n_objects + object * self.parts_per_object + part) as i32
    }
}

const DESK_HALF: f64 = 1.6;
const LIGHT: [f64; 3] = [0.4, 0.3, 0.85];

#[derive(Debug, Clone)]
enum Shape {
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Debug, Clone)]
struct SceneObject {
    shape: Shape,
    /// Bottom and top of the object along world z; parts split this range.
    z_range: (f64, f64),
    albedo: Vec<Vector3<f64>>,
}

impl SceneObject {
    fn part_at(&self, z: f64) -> usize {
        let n = self.albedo.len();
        let (lo, hi) = self.z_range;
        let t = ((z - lo) / (hi - lo)).clamp(0.0, 1.0 - 1e-12);
        ((t * n as f64) as usize).min(n - 1)
    }

    /// Nearest hit `(t, normal)` of the ray `o + t·d` with `t > eps`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match &self.shape {
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut axis0 = 0;
                let mut axis1 = 0;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (min[a] - o[a]) / d[a];
                    let tb = (max[a] - o[a]) / d[a];
                    let (near, far) = if ta < tb { (ta, tb) } else { (tb, ta) };
                    if near > t0 {
                        t0 = near;
                        axis0 = a;
                    }
                    if far < t1 {
                        t1 = far;
                        axis1 = a;
                    }
                }
                if t0 > t1 || t1 < 1e-9 {
                    return None;
                }
                let (t, axis) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
                let mut n = Vector3::zeros();
                n[axis] = -d[axis].signum();
                Some((t, n))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > 1e-9 { -b - s } else { -b + s };
                if t <= 1e-9 {
                    return None;
                }
                let p = o + d * t;
                Some((t, (p - center) / *radius))
            }
        }
    }
}

/// Result of casting one ray into the scene.
#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    color: Vector3<f64>,
    object: Option<(usize, usize)>,
}

struct World {
    objects: Vec<SceneObject>,
}

impl World {
    fn build(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0b1e_c7a1_0001);
        let n = cfg.n_objects;
        let ring = if n == 1 { 0.0 } else { 0.55 + 0.05 * n as f64 };
        let mut objects = Vec::with_capacity(n);
        for o in 0..n {
            let ang = std::f64::consts::TAU * o as f64 / n as f64 + rng.random_range(-0.15..0.15);
            let c = Vector3::new(ring * ang.cos(), ring * ang.sin(), 0.0);
            let albedo = (0..cfg.parts_per_object)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(0.15..0.95),
                        rng.random_range(0.15..0.95),
                        rng.random_range(0.15..0.95),
                    )
                })
                .collect();
            let (shape, z_range) = if o % 2 == 0 {
                let hx = rng.random_range(0.16..0.28);
                let hy = rng.random_range(0.16..0.28);
                let h = rng.random_range(0.35..0.7);
                (
                    Shape::Box {
                        min: Vector3::new(c.x - hx, c.y - hy, 0.0),
                        max: Vector3::new(c.x + hx, c.y + hy, h),
                    },
                    (0.0, h),
                )
            } else {
                let r = rng.random_range(0.18..0.28);
                (
                    Shape::Sphere {
                        center: Vector3::new(c.x, c.y, r),
                        radius: r,
                    },
                    (0.0, 2.0 * r),
                )
            };
            objects.push(SceneObject {
                shape,
                z_range,
                albedo,
            });
        }
        Self { objects }
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let light = Vector3::from(LIGHT).normalize();
        let shade = |albedo: Vector3<f64>, n: &Vector3<f64>| albedo * (0.35 + 0.65 * n.dot(&light).max(0.0));
        let mut best: Option<Hit> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((t, n)) = obj.intersect(o, d) {
                if best.map_or(true, |b| t < b.t) {
                    let p = o + d * t;
                    let part = obj.part_at(p.z);
                    best = Some(Hit {
                        t,
                        color: shade(obj.albedo[part], &n),
                        object: Some((i, part)),
                    });
                }
            }
        }
        if d.z < -1e-12 {
            let t = -o.z / d.z;
            let p = o + d * t;
            if t > 1e-9 && p.x.abs() <= DESK_HALF && p.y.abs() <= DESK_HALF && best.map_or(true, |b| t < b.t)
            {
                let checker = ((p.x / 0.25).floor() as i64 + (p.y / 0.25).floor() as i64).rem_euclid(2);
                let albedo = if checker == 0 {
                    Vector3::new(0.62, 0.55, 0.45)
                } else {
                    Vector3::new(0.42, 0.36, 0.30)
                };
                best = Some(Hit {
                    t,
                    color: shade(albedo, &Vector3::z()),
                    object: None,
                });
            }
        }
        best
    }
}

/// World←camera pose of frame `i` on the configured orbit.
pub fn orbit_pose(cfg: &SynthConfig, i: usize) -> Pose {
    let frac = if cfg.n_frames > 1 {
        i as f64 / (cfg.n_frames - 1) as f64
    } else {
        0.0
    };
    let ang = -0.5 * cfg.angular_span + frac * cfg.angular_span;
    let eye = Vector3::new(
        cfg.orbit_radius * ang.cos(),
        cfg.orbit_radius * ang.sin(),
        cfg.orbit_height,
    );
    look_at(eye, Vector3::new(0.0, 0.0, 0.2), Vector3::z())
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Draws `n_labels` unit vectors in `R^dim` with all pairwise cosines below 0.5.
pub fn make_embeddings(n_labels: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    const MAX_TRIES: usize = 2000;
    const MAX_COS: f64 = 0.5;
    if n_labels == 0 || dim == 0 {
        return Err(Error::Config("need at least one label and dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3b0_c442_98fc_1c14);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n_labels);
    while out.len() < n_labels {
        let mut accepted = false;
        for _ in 0..MAX_TRIES {
            let mut v: Vec<f64> = (0..dim).map(|_| normal_sample(&mut rng)).collect();
            normalize(&mut v);
            let ok = out
                .iter()
                .all(|e| e.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < MAX_COS);
            if ok {
                out.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Config(format!(
                "cannot place {n_labels} embeddings in dim {dim} with cosine < {MAX_COS}"
            )));
        }
    }
    Ok(out)
}

/// Composes `gt` with a rigid perturbation whose rotation angle is exactly
/// `rot_sigma` and whose translation norm is exactly `trans_sigma`, in
/// directions drawn from `seed`.
pub fn perturb_pose(gt: &Pose, rot_sigma: f64, trans_sigma: f64, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut dir = || {
        let v = Vector3::new(
            normal_sample(&mut rng),
            normal_sample(&mut rng),
            normal_sample(&mut rng),
        );
        Unit::new_normalize(v)
    };
    let axis = dir();
    let tdir = dir();
    let delta = Pose::from_parts(
        (tdir.into_inner() * trans_sigma).into(),
        UnitQuaternion::from_axis_angle(&axis, rot_sigma),
    );
    gt * delta
}

struct RenderedFrame {
    frame: FrameRecord,
}

fn render_frame(
    cfg: &SynthConfig,
    world: &World,
    k: &Intrinsics,
    pose: &Pose,
    canonical: &[Vec<f64>],
    frame_index: usize,
) -> RenderedFrame {
    let (w, h) = (k.width, k.height);
    let mut noise_rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03 ^ (frame_index as u64).wrapping_mul(0x9e37_79b9));
    let mut rgb = Image::zeros(w, h, 3);
    let mut pointmap = Image::zeros(w, h, 3);
    let mut confidence = Image::zeros(w, h, 1);
    let mut parts = vec![-1i32; w * h];
    let mut objects = vec![-1i32; w * h];
    let origin = pose.translation.vector;
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            let ray_cam = k.ray(u as f64, v as f64);
            let dir = (pose.rotation * ray_cam).normalize();
            // draw noise for every pixel so the stream does not depend on hits
            let eps = cfg.depth_noise_sigma * normal_sample(&mut noise_rng);
            let Some(hit) = world.cast(&origin, &dir) else {
                continue;
            };
            let world_pt = origin + dir * hit.t;
            let cam_pt = pose.inverse_transform_point(&Point3::from(world_pt)).coords;
            let noisy = cam_pt * (1.0 + eps);
            pointmap.pixel_mut(p).copy_from_slice(noisy.as_slice());
            confidence.data[p] = cfg.confidence_floor + (1.0 - cfg.confidence_floor) * (-eps.abs()).exp();
            rgb.pixel_mut(p)
                .copy_from_slice(hit.color.map(|c| c.clamp(0.0, 1.0)).as_slice());
            if let Some((o, part)) = hit.object {
                parts[p] = cfg.part_label(o, part);
                objects[p] = cfg.object_label(o);
            }
        }
    }

    let mask_layers = vec![parts, objects];
    let mut emb_rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2545_f491_4f6c_dd1d ^ (frame_index as u64).wrapping_mul(0xff51_afd7));
    let mut table = BTreeMap::new();
    for label in 0..cfg.num_labels() as i32 {
        let mut e = canonical[label as usize].clone();
        if cfg.embedding_noise > 0.0 {
            for x in e.iter_mut() {
                *x += cfg.embedding_noise * normal_sample(&mut emb_rng);
            }
            normalize(&mut e);
        }
        table.insert(label, e);
    }
    let mut masks: Vec<MaskRecord> =
        FrameRecord::masks_from_layers(&mask_layers, &table, w * h).expect("synthetic labels are unique");
    masks.sort_by_key(|m| (m.layer, m.label_id));
    RenderedFrame {
        frame: FrameRecord {
            rgb,
            pointmap,
            confidence,
            mask_layers,
            masks,
            gt_pose: Some(*pose),
        },
    }
}

/// Generates a complete synthetic scene; deterministic in `cfg`.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SceneDataset> {
    cfg.validate()?;
    let world = World::build(cfg);
    let k = cfg.intrinsics();
    let canonical = make_embeddings(cfg.num_labels(), cfg.embedding_dim, cfg.seed)?;
    let frames = (0..cfg.n_frames)
        .map(|i| render_frame(cfg, &world, &k, &orbit_pose(cfg, i), &canonical, i).frame)
        .collect();
    let mut class_table = BTreeMap::new();
    for o in 0..cfg.n_objects {
        class_table.insert(cfg.object_label(o), format!("object {o}"));
        for p in 0..cfg.parts_per_object {
            class_table.insert(cfg.part_label(o, p), format!("object {o} part {p}"));
        }
    }
    let queries = canonical
        .into_iter()
        .enumerate()
        .map(|(i, e)| (i as i32, e))
        .collect();
    let scene = SceneDataset {
        intrinsics: k,
        embedding_dim: cfg.embedding_dim,
        frames,
        class_table: Some(class_table),
        queries: Some(queries),
        original_size: Some((cfg.width, cfg.height)),
    };
    scene.validate()?;
    Ok(scene)
}

/// Frame `frame`'s pointmap expressed in the camera of frame `reference`,
/// as a two-view network would predict it.
///
/// Uses the ground-truth relative pose and multiplies each depth by an
/// independent `1 + N(0, noise_sigma²)` factor. Returns the pointmap and the
/// frame's confidence map (pixels with zero confidence keep a zero point).
pub fn pairwise_pointmap(
    scene: &SceneDataset,
    reference: usize,
    frame: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Image, Image)> {
    let fr = &scene.frames[frame];
    let (Some(t_wr), Some(t_wf)) = (scene.frames[reference].gt_pose, fr.gt_pose) else {
        return Err(Error::Data(
            "pairwise pointmaps need ground-truth poses for both frames".into(),
        ));
    };
    let t_rf = t_wr.inverse() * t_wf;
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ ((reference as u64) << 32 | frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let mut out = Image::zeros(fr.pointmap.width, fr.pointmap.height, 3);
    for p in 0..fr.pointmap.num_pixels() {
        let eps = noise_sigma * normal_sample(&mut rng);
        if fr.confidence.data[p] <= 0.0 {
            continue;
        }
        let x = fr.pointmap.pixel(p);
        let x = Point3::new(x[0], x[1], x[2]) * (1.0 + eps);
        let y = t_rf * x;
        out.pixel_mut(p).copy_from_slice(y.coords.as_slice());
    }
    Ok((out, fr.confidence.clone()))
}
