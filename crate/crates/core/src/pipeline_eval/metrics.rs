//! Rendering, segmentation and trajectory metrics.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::Image;
use crate::objectives::ssim;

/// PSNR value reported for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1/MSE)` over all pixels and channels of images in [0, 1].
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b));
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub frames: usize,
}

/// Mean PSNR and SSIM over `(rendered, ground truth)` pairs.
pub fn render_metrics(pairs: &[(Image, &Image)]) -> RenderMetrics {
    if pairs.is_empty() {
        return RenderMetrics {
            psnr: f64::NAN,
            ssim: f64::NAN,
            frames: 0,
        };
    }
    let n = pairs.len() as f64;
    let (mut p, mut s) = (0.0, 0.0);
    for (r, g) in pairs {
        p += psnr(r, g);
        s += ssim(r, g, false).0;
    }
    RenderMetrics {
        psnr: p / n,
        ssim: s / n,
        frames: pairs.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMetrics {
    pub miou: f64,
    pub fwiou: f64,
    pub acc: f64,
    /// IoU per label that occurs in the ground truth or the prediction.
    pub per_label: BTreeMap<i32, f64>,
    /// Ground-truth pixel frequency per label (sums to 1).
    pub frequency: BTreeMap<i32, f64>,
}

/// Accumulates a confusion table between predicted and ground-truth labels.
/// Ground-truth pixels below zero are ignored.
#[derive(Debug, Clone, Default)]
pub struct Confusion {
    tp: BTreeMap<i32, u64>,
    fp: BTreeMap<i32, u64>,
    fn_: BTreeMap<i32, u64>,
    gt: BTreeMap<i32, u64>,
    valid: u64,
    correct: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: &[i32], gt: &[i32]) {
        assert_eq!(pred.len(), gt.len());
        for (&p, &g) in pred.iter().zip(gt) {
            if g < 0 {
                continue;
            }
            self.valid += 1;
            *self.gt.entry(g).or_default() += 1;
            if p == g {
                self.correct += 1;
                *self.tp.entry(g).or_default() += 1;
            } else {
                *self.fn_.entry(g).or_default() += 1;
                *self.fp.entry(p).or_default() += 1;
            }
        }
    }

    pub fn finish(&self) -> Result<SegmentationMetrics> {
        if self.valid == 0 {
            return Err(Error::InsufficientData("no labelled pixel to evaluate".into()));
        }
        let mut labels: Vec<i32> = self.gt.keys().chain(self.fp.keys()).copied().collect();
        labels.sort_unstable();
        labels.dedup();
        let get = |m: &BTreeMap<i32, u64>, l: i32| *m.get(&l).unwrap_or(&0) as f64;
        let mut per_label = BTreeMap::new();
        let mut frequency = BTreeMap::new();
        let mut fwiou = 0.0;
        for &l in &labels {
            let (tp, fp, fn_) = (get(&self.tp, l), get(&self.fp, l), get(&self.fn_, l));
            let iou = tp / (tp + fp + fn_);
            per_label.insert(l, iou);
            let f = get(&self.gt, l) / self.valid as f64;
            if f > 0.0 {
                frequency.insert(l, f);
            }
            fwiou += f * iou;
        }
        let miou = per_label.values().sum::<f64>() / per_label.len() as f64;
        Ok(SegmentationMetrics {
            miou,
            fwiou,
            acc: self.correct as f64 / self.valid as f64,
            per_label,
            frequency,
        })
    }
}

/// Metrics of one prediction/ground-truth pair of label images.
pub fn segmentation_metrics(pred: &[i32], gt: &[i32]) -> Result<SegmentationMetrics> {
    let mut c = Confusion::default();
    c.add(pred, gt);
    c.finish()
}

/// Index of the query with the highest cosine to `f`, returned as its label.
pub fn classify(f: &[f64], queries: &[(i32, Vec<f64>)]) -> i32 {
    let nf = f.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let mut best = (f64::NEG_INFINITY, -1);
    for (label, q) in queries {
        let c = f.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / nf;
        if c > best.0 {
            best = (c, *label);
        }
    }
    best.1
}

/// Rigid (scale fixed to 1) least-squares alignment `dst ≈ R·src + t`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut e = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        e[(2, 2)] = -1.0;
    }
    let r = u * e * vt;
    (r, md - r * ms)
}

/// RMSE of camera positions after rigid alignment of `est` onto `gt`.
pub fn eval_ate(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::Validation(format!(
            "{} estimated poses but {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "ATE needs at least 3 poses, got {}",
            est.len()
        )));
    }
    let src: Vec<Vector3<f64>> = est.iter().map(|p| p.translation.vector).collect();
    let dst: Vec<Vector3<f64>> = gt.iter().map(|p| p.translation.vector).collect();
    let (r, t) = align_rigid(&src, &dst);
    let sq: f64 = src.iter().zip(&dst).map(|(s, d)| (r * s + t - d).norm_squared()).sum();
    Ok((sq / src.len() as f64).sqrt())
}
