//! The SLAM loop: tracking, keyframe and mapping-frame events, and the
//! mapping optimizer.

use log::{info, warn};
use nalgebra::{Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Decoder, PipelineConfig, ScaleMode};
use crate::dataset_io::{
    Checkpoint, FrameRecord, MatrixPayload, SceneDataset, TrajectoryEntry, FLAG_KEYFRAME, FLAG_MAPPING, FLAG_SKIPPED,
};
use crate::error::{Error, Result};
use crate::geometry::{renormalized, Intrinsics, Pose};
use crate::image::Image;
use crate::objectives::{
    loss_ce_closed_set, loss_corr, loss_lang, loss_rgb, loss_total, sample_pixels, Adam, LossReport,
};
use crate::scale_supervision::{compute_levels, lift_mask_scale, LiftedMask, ScaleSupervision};
use crate::scene_synth::pairwise_pointmap;
use crate::semantic_memory::{
    masked_embedding, pixel_language_target, readout, readout_backward, MemoryBank, Projection, Readout,
};
use crate::splatting::{init_from_pointmap, prune_transparent, render, render_backward, GaussianMap, RenderSettings, PRUNE_OPACITY};
use crate::tracking::{gather_points, keyframe_decision, match_fraction, match_rays, optimize_pose};

/// Optimizer groups in parameter order, with their per-Gaussian stride
/// (0 for the non-Gaussian groups).
const GROUPS: [&str; 8] = [
    "positions",
    "rotations",
    "log_scales",
    "opacity",
    "color",
    "features",
    "projection",
    "head",
];

/// Per-frame world←camera poses with keyframe/mapping/skipped flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEstimate {
    pub poses: Vec<Pose>,
    pub flags: Vec<u8>,
}

impl TrajectoryEstimate {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_keyframe(&self, i: usize) -> bool {
        self.flags[i] & FLAG_KEYFRAME != 0
    }

    pub fn is_supervision(&self, i: usize) -> bool {
        self.flags[i] & (FLAG_KEYFRAME | FLAG_MAPPING) != 0
    }

    pub fn keyframes(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_keyframe(i)).collect()
    }

    /// Frames never used for supervision, every `stride`-th of them.
    pub fn held_out(&self, stride: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.is_supervision(i))
            .step_by(stride.max(1))
            .collect()
    }

    pub fn to_entries(&self) -> Vec<TrajectoryEntry> {
        self.poses
            .iter()
            .zip(&self.flags)
            .map(|(p, &flags)| {
                let t = p.translation.vector;
                let q = p.rotation;
                TrajectoryEntry {
                    pose: [t.x, t.y, t.z, q.i, q.j, q.k, q.w],
                    flags,
                }
            })
            .collect()
    }

    pub fn from_entries(entries: &[TrajectoryEntry]) -> Self {
        let poses = entries
            .iter()
            .map(|e| {
                let [tx, ty, tz, qx, qy, qz, qw] = e.pose;
                Pose::from_parts(
                    Translation3::new(tx, ty, tz),
                    UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)),
                )
            })
            .collect();
        Self {
            poses,
            flags: entries.iter().map(|e| e.flags).collect(),
        }
    }
}

/// Closed-set classifier `head · F_p` over `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassHead {
    /// Label id of each row.
    pub classes: Vec<i32>,
    /// Row-major `K × d`.
    pub weights: Vec<f64>,
}

impl ClassHead {
    pub fn predict(&self, f: &[f64]) -> i32 {
        let d = f.len();
        let mut best = (f64::NEG_INFINITY, -1);
        for (k, row) in self.weights.chunks_exact(d).enumerate() {
            let l: f64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            if l > best.0 {
                best = (l, self.classes[k]);
            }
        }
        best.1
    }

    /// Maps a label image onto row indices; labels outside the class list become -1.
    pub fn class_indices(&self, labels: &[i32]) -> Vec<i32> {
        labels
            .iter()
            .map(|l| self.classes.binary_search(l).map_or(-1, |k| k as i32))
            .collect()
    }
}

/// Sorted label ids occurring in mask layer `layer` of any frame.
pub fn layer_labels(scene: &SceneDataset, layer: usize) -> Vec<i32> {
    let mut set = std::collections::BTreeSet::new();
    for f in &scene.frames {
        if let Some(l) = f.mask_layers.get(layer) {
            set.extend(l.iter().copied().filter(|&x| x >= 0));
        }
    }
    set.into_iter().collect()
}

/// Everything needed to render and query the trained scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub map: GaussianMap,
    pub bank: MemoryBank,
    pub projection: Projection,
    pub head: Option<ClassHead>,
    pub trajectory: TrajectoryEstimate,
    pub config: PipelineConfig,
}

impl Model {
    /// Decodes a rendered feature into the language embedding space.
    pub fn decode(&self, f: &[f64]) -> Result<Readout> {
        decode_language(f, &self.bank, &self.projection, self.config.temperature, self.config.decoder)
    }

    pub fn to_checkpoint(&self, optimizer: &Adam) -> Checkpoint {
        let head = match &self.head {
            Some(h) => MatrixPayload {
                rows: h.classes.len(),
                cols: self.map.feature_dim,
                data: h.weights.iter().map(|&x| x as f32).collect(),
            },
            None => MatrixPayload::default(),
        };
        Checkpoint {
            seed: self.config.seed,
            config: self.config.to_toml(),
            gaussians: self.map.to_payload(),
            bank: self.bank.to_payload(),
            projection: self.projection.to_payload(),
            head,
            optimizer: optimizer.snapshot(),
            trajectory: self.trajectory.to_entries(),
        }
    }

    /// Rebuilds a model; the closed-set class list is recovered from `scene`.
    pub fn from_checkpoint(ckpt: &Checkpoint, scene: &SceneDataset) -> Result<Self> {
        ckpt.validate()?;
        let config = PipelineConfig::from_toml(&ckpt.config)?;
        let head = if ckpt.head.rows > 0 {
            let classes = layer_labels(scene, config.eval_layer);
            if classes.len() != ckpt.head.rows {
                return Err(Error::Validation(format!(
                    "checkpoint head has {} classes, scene has {}",
                    ckpt.head.rows,
                    classes.len()
                )));
            }
            Some(ClassHead {
                classes,
                weights: ckpt.head.data.iter().map(|&x| f64::from(x)).collect(),
            })
        } else {
            None
        };
        Ok(Self {
            map: GaussianMap::from_payload(&ckpt.gaussians),
            bank: MemoryBank::from_payload(&ckpt.bank),
            projection: Projection::from_payload(&ckpt.projection),
            head,
            trajectory: TrajectoryEstimate::from_entries(&ckpt.trajectory),
            config,
        })
    }
}

/// Decoded language feature: bank attention, or the plain projection when
/// `decoder` is linear (attention then stays empty).
pub fn decode_language(
    f: &[f64],
    bank: &MemoryBank,
    proj: &Projection,
    temperature: f64,
    decoder: Decoder,
) -> Result<Readout> {
    match decoder {
        Decoder::Memory => readout(f, bank, proj, temperature),
        Decoder::Linear => Ok(Readout {
            output: proj.apply(f),
            attention: Vec::new(),
        }),
    }
}

/// Backward of [`decode_language`]; accumulates into `grad_w` and returns d/df.
pub fn decode_language_backward(
    f: &[f64],
    cache: &Readout,
    bank: &MemoryBank,
    proj: &Projection,
    temperature: f64,
    decoder: Decoder,
    grad_out: &[f64],
    grad_w: &mut [f64],
) -> Result<Vec<f64>> {
    match decoder {
        Decoder::Memory => readout_backward(f, cache, bank, proj, temperature, grad_out, grad_w),
        Decoder::Linear => {
            for r in 0..proj.rows {
                for c in 0..proj.cols {
                    grad_w[r * proj.cols + c] += grad_out[r] * f[c];
                }
            }
            Ok(proj.apply_transpose(grad_out))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct SlamOutput {
    pub model: Model,
    pub optimizer: Adam,
    pub losses: Vec<LossRow>,
    pub skipped: usize,
}

impl SlamOutput {
    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(&self.optimizer)
    }
}

fn points_of(img: &Image) -> Vec<Vector3<f64>> {
    (0..img.num_pixels()).map(|i| Vector3::from_column_slice(img.pixel(i))).collect()
}

/// Tracks `frame` against keyframe `kf`. Returns the frame→keyframe pose and
/// the number of valid matches.
fn track_frame(
    scene: &SceneDataset,
    kf: usize,
    frame: usize,
    t_init: &Pose,
    cfg: &PipelineConfig,
) -> Result<(Pose, usize)> {
    let kfr = &scene.frames[kf];
    let fr = &scene.frames[frame];
    let (targets, conf) = match pairwise_pointmap(scene, kf, frame, cfg.pairwise_noise, cfg.seed.wrapping_add(3)) {
        Ok((x, c)) => (points_of(&x), c.data),
        // without a two-view pointmap, associate through the predicted pose
        Err(Error::Data(_)) => (
            points_of(&fr.pointmap).iter().map(|x| t_init * Point3::from(*x)).map(|p| p.coords).collect(),
            fr.confidence.data.clone(),
        ),
        Err(e) => return Err(e),
    };
    let matches = match_rays(&kfr.pointmap, &kfr.confidence, &targets, &conf, &cfg.tracker)?;
    let (kept, pf, pk) = gather_points(&matches, &kfr.pointmap, &kfr.confidence, &fr.pointmap);
    let est = optimize_pose(&kept, &pf, &pk, t_init, &cfg.tracker)?;
    Ok((est.t_kf, matches.len()))
}

/// Runs the tracking front end over the whole sequence. Tracking reads only
/// pointmaps, never the map, so it can run ahead of mapping without changing
/// any result.
pub fn track_sequence(scene: &SceneDataset, cfg: &PipelineConfig) -> Result<(TrajectoryEstimate, usize)> {
    let n = scene.len();
    if n == 0 {
        return Err(Error::Validation("scene has no frames".into()));
    }
    let mut poses = vec![Pose::identity()];
    let mut flags = vec![FLAG_KEYFRAME];
    let (mut kf, mut last_selected, mut skipped) = (0usize, 0usize, 0usize);
    for t in 1..n {
        let predicted = if t >= 2 {
            renormalized(&(poses[t - 1] * (poses[t - 2].inverse() * poses[t - 1])))
        } else {
            poses[t - 1]
        };
        let t_init = poses[kf].inverse() * predicted;
        let (pose, fraction, mut flag) = match track_frame(scene, kf, t, &t_init, cfg) {
            Ok((t_kf, n_matches)) => (
                renormalized(&(poses[kf] * t_kf)),
                match_fraction(n_matches, &scene.frames[kf].confidence),
                0,
            ),
            Err(e) => {
                warn!("frame {t}: tracking failed ({e}); using constant velocity");
                skipped += 1;
                (predicted, 1.0, FLAG_SKIPPED)
            }
        };
        let d = keyframe_decision(t, last_selected, fraction, &cfg.tracker);
        if d.is_keyframe && flag == 0 {
            flag |= FLAG_KEYFRAME;
            kf = t;
            last_selected = t;
        } else if d.is_mapping_frame || d.is_keyframe {
            flag |= FLAG_MAPPING;
            last_selected = t;
        }
        poses.push(pose);
        flags.push(flag);
    }
    if n > 1 && skipped as f64 > cfg.max_skip_fraction * (n - 1) as f64 {
        return Err(Error::RunFailed(format!(
            "tracking failed on {skipped} of {} frames",
            n - 1
        )));
    }
    Ok((TrajectoryEstimate { poses, flags }, skipped))
}

struct SupFrame {
    frame: usize,
    lifted: Vec<LiftedMask>,
    sup: Option<ScaleSupervision>,
    /// Pixels covered by at least one lifted mask.
    candidates: Vec<usize>,
    /// Closed-set class index per pixel.
    classes: Option<Vec<i32>>,
}

struct Mapper<'a> {
    scene: &'a SceneDataset,
    cfg: &'a PipelineConfig,
    k: Intrinsics,
    poses: &'a [Pose],
    map: GaussianMap,
    bank: MemoryBank,
    proj: Projection,
    head: Option<ClassHead>,
    adam: Adam,
    extent_set: bool,
    scale_pool: Vec<f64>,
    levels: Vec<f64>,
    frames: Vec<SupFrame>,
    rng: ChaCha8Rng,
    iter: usize,
    losses: Vec<LossRow>,
    settings: RenderSettings,
}

impl<'a> Mapper<'a> {
    fn new(scene: &'a SceneDataset, cfg: &'a PipelineConfig, poses: &'a [Pose]) -> Self {
        let d = cfg.feature_dim;
        let dim = scene.embedding_dim;
        let head = cfg.closed_set.then(|| {
            let classes = layer_labels(scene, cfg.eval_layer);
            let weights = vec![0.0; classes.len() * d];
            ClassHead { classes, weights }
        });
        let lr = &cfg.learning_rates;
        let head_len = head.as_ref().map_or(0, |h| h.weights.len());
        let adam = Adam::new(&[
            (GROUPS[0], 0, lr.positions),
            (GROUPS[1], 0, lr.rotations),
            (GROUPS[2], 0, lr.scales),
            (GROUPS[3], 0, lr.opacity),
            (GROUPS[4], 0, lr.color),
            (GROUPS[5], 0, lr.features),
            (GROUPS[6], dim * d, lr.projection),
            (GROUPS[7], head_len, lr.head),
        ]);
        Self {
            scene,
            cfg,
            k: scene.intrinsics,
            poses,
            map: GaussianMap::new(d),
            bank: MemoryBank::new(dim),
            proj: Projection::random(dim, d, cfg.seed.wrapping_add(2)),
            head,
            adam,
            extent_set: false,
            scale_pool: Vec::new(),
            levels: Vec::new(),
            frames: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
            iter: 0,
            losses: Vec::new(),
            settings: RenderSettings::default(),
        }
    }

    fn strides(&self) -> [usize; 6] {
        [3, 4, 3, 1, 3, self.map.feature_dim]
    }

    fn sync_optimizer(&mut self) {
        let n = self.map.len();
        for (name, s) in GROUPS.iter().zip(self.strides()) {
            self.adam.resize(name, n * s);
        }
    }

    fn effective_levels(&self) -> Vec<f64> {
        match self.cfg.scale_mode {
            ScaleMode::All => self.levels.clone(),
            ScaleMode::CoarseOnly => self.levels.last().copied().into_iter().collect(),
            ScaleMode::FineOnly => self.levels.first().copied().into_iter().collect(),
        }
    }

    fn lift(frame: &FrameRecord) -> Result<Vec<LiftedMask>> {
        let mut out = Vec::new();
        for (i, m) in frame.masks.iter().enumerate() {
            match lift_mask_scale(m, i, &frame.pointmap, &frame.confidence) {
                Ok(l) => out.push(l),
                Err(Error::EmptyLift) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    fn build_sup(&self, sf: &mut SupFrame) -> Result<()> {
        let levels = self.effective_levels();
        if levels.is_empty() {
            return Ok(());
        }
        let sup = ScaleSupervision::from_masks(sf.lifted.clone(), &levels, self.k.width, self.k.height)?;
        sf.candidates = (0..self.k.num_pixels()).filter(|&p| sup.covered(p)).collect();
        sf.sup = Some(sup);
        Ok(())
    }

    fn add_supervision_frame(&mut self, f: usize, refresh: bool) -> Result<()> {
        let frame = &self.scene.frames[f];
        let lifted = Self::lift(frame)?;
        let classes = match (&self.head, frame.mask_layers.get(self.cfg.eval_layer)) {
            (Some(h), Some(layer)) => Some(h.class_indices(layer)),
            _ => None,
        };
        if refresh {
            self.scale_pool.extend(lifted.iter().map(|m| m.scale3d));
        }
        let mut sf = SupFrame {
            frame: f,
            lifted,
            sup: None,
            candidates: Vec::new(),
            classes,
        };
        if refresh && !self.scale_pool.is_empty() {
            self.levels = compute_levels(&self.scale_pool, self.cfg.scale_levels)?;
            let mut frames = std::mem::take(&mut self.frames);
            for old in &mut frames {
                self.build_sup(old)?;
            }
            self.frames = frames;
        }
        self.build_sup(&mut sf)?;
        self.frames.push(sf);
        Ok(())
    }

    fn add_keyframe(&mut self, f: usize) -> Result<()> {
        let frame = &self.scene.frames[f];
        let pose = self.poses[f];
        let cover = (!self.map.is_empty())
            .then(|| render(&self.map, &pose.inverse(), &self.k, &self.settings).final_transmittance);
        let threshold = self.cfg.coverage_transmittance;
        let keep = |p: usize| cover.as_ref().is_none_or(|t| t.data[p] > threshold);
        let seed = self.cfg.seed ^ (f as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        match init_from_pointmap(
            frame,
            &pose,
            &self.k,
            self.cfg.init_stride,
            self.cfg.feature_dim,
            self.cfg.init_min_confidence,
            Some(&keep),
            seed,
        ) {
            Ok(gs) => {
                self.map.extend(&gs);
                self.sync_optimizer();
            }
            Err(Error::EmptyInit) => warn!("keyframe {f}: no confident pixel to seed Gaussians"),
            Err(e) => return Err(e),
        }
        if !self.extent_set && !self.map.is_empty() {
            let extent = self.map.extent().max(1e-6);
            if let Some(g) = self.adam.group_mut(GROUPS[0]) {
                g.lr = self.cfg.learning_rates.positions * extent;
            }
            self.extent_set = true;
        }
        self.add_supervision_frame(f, true)?;
        for i in 0..frame.masks.len() {
            match masked_embedding(frame, i) {
                Ok(e) => {
                    self.bank.maybe_insert(&e, self.cfg.memory_threshold, (f as u32, i as u32))?;
                }
                Err(Error::Data(msg)) => warn!("keyframe {f}: {msg}"),
                Err(e) => return Err(e),
            }
        }
        info!(
            "keyframe {f}: {} Gaussians, bank {} entries, levels {:?}",
            self.map.len(),
            self.bank.len(),
            self.levels
        );
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let w = cfg.weights;
        let si = self.rng.random_range(0..self.frames.len());
        let sample_seed: u64 = self.rng.random();
        let sf = &self.frames[si];
        let frame = &self.scene.frames[sf.frame];
        let pose_cw = self.poses[sf.frame].inverse();
        let out = render(&self.map, &pose_cw, &self.k, &self.settings);
        let (l_rgb, mut g_color) = loss_rgb(&out.color, &frame.rgb, w.ssim)?;
        g_color.data.iter_mut().for_each(|g| *g *= w.rgb);

        let d = self.map.feature_dim;
        let mut g_feat = Image::zeros(self.k.width, self.k.height, d);
        let mut g_proj = vec![0.0; self.proj.w.len()];
        let mut g_head = vec![0.0; self.head.as_ref().map_or(0, |h| h.weights.len())];
        let (mut l_corr, mut l_lang, mut l_ce) = (0.0, 0.0, None);
        let samples = sample_pixels(&sf.candidates, cfg.samples, sample_seed);
        if let Some(sup) = &sf.sup {
            if w.corr > 0.0 && samples.len() >= 2 {
                let (v, g) = loss_corr(&out.feature, sup, &samples);
                l_corr = v;
                add_scaled(&mut g_feat, &g, w.corr);
            }
            let use_lang = w.lang > 0.0 && (cfg.decoder == Decoder::Linear || !self.bank.is_empty());
            if use_lang {
                let mut pix = Vec::new();
                let mut fhat = Vec::new();
                let mut caches = Vec::new();
                let mut targets = Vec::new();
                for &p in &samples {
                    if let Some(t) = pixel_language_target(p, sup, frame) {
                        let r = decode_language(out.feature.pixel(p), &self.bank, &self.proj, cfg.temperature, cfg.decoder)?;
                        fhat.push(r.output.clone());
                        caches.push(r);
                        targets.push(t);
                        pix.push(p);
                    }
                }
                let (v, grads) = loss_lang(&fhat, &targets);
                l_lang = v;
                for ((p, cache), g) in pix.iter().zip(&caches).zip(&grads) {
                    let g: Vec<f64> = g.iter().map(|x| x * w.lang).collect();
                    let f = out.feature.pixel(*p);
                    let gf = decode_language_backward(f, cache, &self.bank, &self.proj, cfg.temperature, cfg.decoder, &g, &mut g_proj)?;
                    for (o, x) in g_feat.pixel_mut(*p).iter_mut().zip(gf) {
                        *o += x;
                    }
                }
            }
        }
        if let (Some(head), Some(classes)) = (&self.head, &sf.classes) {
            let labelled: Vec<usize> = samples.iter().copied().filter(|&p| classes[p] >= 0).collect();
            let (v, gh, gf) = loss_ce_closed_set(&out.feature, &head.weights, head.classes.len(), classes, &labelled)?;
            l_ce = Some(v);
            add_scaled(&mut g_feat, &gf, w.ce);
            for (o, x) in g_head.iter_mut().zip(gh) {
                *o += w.ce * x;
            }
        }
        let report = loss_total(l_rgb, l_corr, l_lang, l_ce, &w)?;
        let grads = render_backward(&self.map, &out.state, &pose_cw, &self.k, &g_color, Some(&g_feat))?;
        let mut no_head: Vec<f64> = Vec::new();
        let head_w = match &mut self.head {
            Some(h) => &mut h.weights,
            None => &mut no_head,
        };
        let m = &mut self.map;
        self.adam.step(
            &mut [
                &mut m.positions,
                &mut m.rotations,
                &mut m.log_scales,
                &mut m.opacity_logits,
                &mut m.color_logits,
                &mut m.features,
                &mut self.proj.w,
                head_w,
            ],
            &[
                &grads.positions,
                &grads.rotations,
                &grads.log_scales,
                &grads.opacity_logits,
                &grads.color_logits,
                &grads.features,
                &g_proj,
                &g_head,
            ],
        )?;
        m.normalize_rotations();
        self.losses.push(LossRow {
            iter: self.iter,
            report,
        });
        self.iter += 1;
        Ok(())
    }

    fn optimize(&mut self, iters: usize) -> Result<()> {
        if self.frames.is_empty() || self.map.is_empty() {
            return Ok(());
        }
        for _ in 0..iters {
            self.step()?;
        }
        let keep = prune_transparent(&mut self.map, PRUNE_OPACITY);
        if keep.iter().any(|k| !k) {
            for (name, s) in GROUPS.iter().zip(self.strides()) {
                self.adam.retain(name, s, &keep);
            }
        }
        Ok(())
    }
}

fn add_scaled(dst: &mut Image, src: &Image, s: f64) {
    if s == 0.0 {
        return;
    }
    for (o, x) in dst.data.iter_mut().zip(&src.data) {
        *o += s * x;
    }
}

/// Iterations per mapping event and the remainder left for final refinement.
pub fn iteration_split(cfg: &PipelineConfig, events: usize) -> (usize, usize) {
    let budget = cfg.budget();
    if events == 0 {
        return (0, budget);
    }
    match cfg.iters_per_event {
        Some(k) => (k, budget.saturating_sub(k * events)),
        None => (budget / events, budget % events),
    }
}

/// Full pipeline on `scene`; deterministic in the config seed.
pub fn run_slam(scene: &SceneDataset, cfg: &PipelineConfig) -> Result<SlamOutput> {
    cfg.validate()?;
    scene.validate()?;
    if cfg.closed_set && layer_labels(scene, cfg.eval_layer).is_empty() {
        return Err(Error::Config("closed-set mode needs labels in the evaluation layer".into()));
    }
    let (trajectory, skipped) = track_sequence(scene, cfg)?;
    let events: Vec<usize> = (0..trajectory.len()).filter(|&i| trajectory.is_supervision(i)).collect();
    let (per_event, final_iters) = iteration_split(cfg, events.len());
    info!(
        "{} events ({} keyframes), {per_event} iterations each, {final_iters} final",
        events.len(),
        trajectory.flags.iter().filter(|f| **f & FLAG_KEYFRAME != 0).count()
    );
    let mut mapper = Mapper::new(scene, cfg, &trajectory.poses);
    for &f in &events {
        if trajectory.is_keyframe(f) {
            mapper.add_keyframe(f)?;
        } else {
            mapper.add_supervision_frame(f, false)?;
        }
        mapper.optimize(per_event)?;
    }
    mapper.optimize(final_iters)?;
    let Mapper {
        map,
        bank,
        proj,
        head,
        adam,
        losses,
        ..
    } = mapper;
    Ok(SlamOutput {
        model: Model {
            map,
            bank,
            projection: proj,
            head,
            trajectory,
            config: cfg.clone(),
        },
        optimizer: adam,
        losses,
        skipped,
    })
}
