//! Evaluation of a trained model against a scene.

use std::collections::BTreeMap;

use super::metrics::{classify, eval_ate, render_metrics, Confusion, RenderMetrics, SegmentationMetrics};
use super::slam::{LossRow, Model};
use crate::dataset_io::{MetricRow, SceneDataset};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::Image;
use crate::splatting::{render, GaussianMap, RenderSettings};

/// Renders `frames` at their estimated poses and scores them against the RGB.
pub fn eval_render(map: &GaussianMap, poses: &[Pose], scene: &SceneDataset, frames: &[usize]) -> RenderMetrics {
    let settings = RenderSettings::default();
    let pairs: Vec<(Image, &Image)> = frames
        .iter()
        .map(|&f| {
            let out = render(map, &poses[f].inverse(), &scene.intrinsics, &settings);
            (out.color, &scene.frames[f].rgb)
        })
        .collect();
    render_metrics(&pairs)
}

/// Query embeddings for the labels of mask layer `layer`.
///
/// Uses the scene's query table when present, otherwise the normalized mean
/// of each label's mask embeddings.
pub fn scene_queries(scene: &SceneDataset, layer: usize) -> Vec<(i32, Vec<f64>)> {
    let labels = super::slam::layer_labels(scene, layer);
    if let Some(q) = &scene.queries {
        return labels.iter().filter_map(|l| q.get(l).map(|e| (*l, e.clone()))).collect();
    }
    let mut sums: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for f in &scene.frames {
        for m in f.masks.iter().filter(|m| m.layer == layer) {
            let s = sums.entry(m.label_id).or_insert_with(|| vec![0.0; m.embedding.len()]);
            for (a, b) in s.iter_mut().zip(&m.embedding) {
                *a += b;
            }
        }
    }
    sums.into_iter()
        .map(|(l, mut v)| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= n);
            (l, v)
        })
        .collect()
}

/// Open-set segmentation: each labelled pixel goes to the query closest in
/// cosine to its decoded feature.
pub fn eval_segmentation(
    model: &Model,
    scene: &SceneDataset,
    frames: &[usize],
    queries: &[(i32, Vec<f64>)],
) -> Result<SegmentationMetrics> {
    if queries.is_empty() {
        return Err(Error::Config("no query embeddings for segmentation".into()));
    }
    segment(model, scene, frames, |f| Ok(classify(&model.decode(f)?.output, queries)))
}

/// Closed-set segmentation through the classifier head.
pub fn eval_segmentation_closed(model: &Model, scene: &SceneDataset, frames: &[usize]) -> Result<SegmentationMetrics> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::Config("model has no closed-set head".into()))?;
    segment(model, scene, frames, |f| Ok(head.predict(f)))
}

fn segment(
    model: &Model,
    scene: &SceneDataset,
    frames: &[usize],
    predict: impl Fn(&[f64]) -> Result<i32>,
) -> Result<SegmentationMetrics> {
    let layer = model.config.eval_layer;
    let settings = RenderSettings::default();
    let mut conf = Confusion::default();
    for &f in frames {
        let Some(gt) = scene.frames[f].mask_layers.get(layer) else {
            continue;
        };
        let out = render(&model.map, &model.trajectory.poses[f].inverse(), &scene.intrinsics, &settings);
        let mut pred = vec![-1; gt.len()];
        for (p, g) in gt.iter().enumerate() {
            if *g >= 0 {
                pred[p] = predict(out.feature.pixel(p))?;
            }
        }
        conf.add(&pred, gt);
    }
    conf.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub miou: f64,
    pub fwiou: f64,
    pub acc: f64,
    /// Absent when the scene has no ground-truth poses.
    pub ate_rmse: Option<f64>,
    pub frames: usize,
    pub segmentation: SegmentationMetrics,
}

impl EvalReport {
    pub fn to_row(&self) -> MetricRow {
        let mut r = MetricRow::new()
            .with("psnr", self.psnr)
            .with("ssim", self.ssim)
            .with("miou", self.miou)
            .with("fwiou", self.fwiou)
            .with("acc", self.acc);
        if let Some(a) = self.ate_rmse {
            r = r.with("ate_rmse", a);
        }
        r.with("frames", self.frames)
    }

    /// One row per label with its IoU and ground-truth frequency.
    pub fn label_rows(&self) -> Vec<MetricRow> {
        self.segmentation
            .per_label
            .iter()
            .map(|(l, iou)| {
                MetricRow::new()
                    .with("label", *l as usize)
                    .with("iou", *iou)
                    .with("frequency", *self.segmentation.frequency.get(l).unwrap_or(&0.0))
            })
            .collect()
    }
}

/// Render, segmentation (open- or closed-set per the model config) and
/// trajectory metrics over the held-out frames.
pub fn evaluate(model: &Model, scene: &SceneDataset) -> Result<EvalReport> {
    if model.trajectory.len() != scene.len() {
        return Err(Error::Validation(format!(
            "trajectory has {} poses, scene has {} frames",
            model.trajectory.len(),
            scene.len()
        )));
    }
    let mut frames = model.trajectory.held_out(model.config.eval_stride);
    if frames.is_empty() {
        frames = (0..scene.len()).collect();
    }
    let r = eval_render(&model.map, &model.trajectory.poses, scene, &frames);
    let seg = if model.config.closed_set {
        eval_segmentation_closed(model, scene, &frames)?
    } else {
        eval_segmentation(model, scene, &frames, &scene_queries(scene, model.config.eval_layer))?
    };
    let ate_rmse = match scene.gt_poses() {
        Some(gt) => Some(eval_ate(&model.trajectory.poses, &gt)?),
        None => None,
    };
    Ok(EvalReport {
        psnr: r.psnr,
        ssim: r.ssim,
        miou: seg.miou,
        fwiou: seg.fwiou,
        acc: seg.acc,
        ate_rmse,
        frames: frames.len(),
        segmentation: seg,
    })
}

pub const LOSS_COLUMNS: [&str; 6] = ["iter", "L_rgb", "L_corr", "L_lang", "L_ce", "L_total"];

/// Loss log rows; the closed-set column is 0 when that term is off.
pub fn loss_rows(losses: &[LossRow]) -> Vec<MetricRow> {
    losses
        .iter()
        .map(|r| {
            MetricRow::new()
                .with("iter", r.iter)
                .with("L_rgb", r.report.rgb)
                .with("L_corr", r.report.corr)
                .with("L_lang", r.report.lang)
                .with("L_ce", r.report.ce.unwrap_or(0.0))
                .with("L_total", r.report.total)
        })
        .collect()
}
