//! Photometric, contrastive, language and closed-set losses with gradients.

use serde::{Deserialize, Serialize};

use super::ssim::ssim;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scale_supervision::ScaleSupervision;

/// Norm floor used by the cosine similarities.
pub const NORM_FLOOR: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1 − λ)·mean|r − t| + λ·(1 − SSIM(r, t))` and its gradient w.r.t. `r`.
pub fn loss_rgb(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Image)> {
    if !rendered.same_shape(target) {
        return Err(Error::Validation("rendered and target images differ in shape".into()));
    }
    let n = rendered.data.len() as f64;
    let mut grad = Image::zeros(rendered.width, rendered.height, rendered.channels);
    let mut l1 = 0.0;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = (1.0 - lambda_ssim) * if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / n;
    }
    l1 /= n;
    let mut value = (1.0 - lambda_ssim) * l1;
    if lambda_ssim != 0.0 {
        let (s, gs) = ssim(rendered, target, true);
        value += lambda_ssim * (1.0 - s);
        for (g, x) in grad.data.iter_mut().zip(&gs.unwrap().data) {
            *g -= lambda_ssim * x;
        }
    }
    Ok((value, grad))
}

fn unit_floor(f: &[f64]) -> (Vec<f64>, f64, bool) {
    let n = dot(f, f).sqrt();
    let clamped = n <= NORM_FLOOR;
    let nn = n.max(NORM_FLOOR);
    (f.iter().map(|x| x / nn).collect(), nn, clamped)
}

/// Cosine similarity with norms floored at [`NORM_FLOOR`].
pub fn corr_f(f1: &[f64], f2: &[f64]) -> f64 {
    let n1 = dot(f1, f1).sqrt().max(NORM_FLOOR);
    let n2 = dot(f2, f2).sqrt().max(NORM_FLOOR);
    dot(f1, f2) / (n1 * n2)
}

/// Pulls a gradient w.r.t. a normalized vector back to the raw vector.
fn unit_backward(u: &[f64], n: f64, clamped: bool, gu: &[f64]) -> Vec<f64> {
    if clamped {
        return gu.iter().map(|g| g / n).collect();
    }
    let ug = dot(u, gu);
    gu.iter().zip(u).map(|(g, x)| (g - x * ug) / n).collect()
}

/// Scale-conditioned contrastive loss over the sampled pixels, including
/// `p1 = p2` pairs, normalized by `1/(S·|P|²)`.
///
/// Returns the value and the gradient w.r.t. the feature map (non-zero only
/// at sampled pixels).
pub fn loss_corr(feature_map: &Image, sup: &ScaleSupervision, samples: &[usize]) -> (f64, Image) {
    let d = feature_map.channels;
    let mut grad = Image::zeros(feature_map.width, feature_map.height, d);
    let p = samples.len();
    if p == 0 {
        return (0.0, grad);
    }
    let s = sup.num_levels() as f64;
    let norm = 1.0 / (s * (p * p) as f64);
    let units: Vec<(Vec<f64>, f64, bool)> = samples.iter().map(|&i| unit_floor(feature_map.pixel(i))).collect();
    let mut gu = vec![vec![0.0; d]; p];
    let mut value = 0.0;
    for i in 0..p {
        for j in i..p {
            let c = dot(&units[i].0, &units[j].0);
            if c <= 0.0 {
                continue;
            }
            let coef = sup.pair_coefficient(samples[i], samples[j]) * norm;
            if coef == 0.0 {
                continue;
            }
            if i == j {
                value += coef * c;
                // d(u·u) vanishes on the unit sphere unless the norm is floored
                if units[i].2 {
                    for e in 0..d {
                        gu[i][e] += 2.0 * coef * units[i].0[e];
                    }
                }
                continue;
            }
            value += 2.0 * coef * c;
            for e in 0..d {
                gu[i][e] += 2.0 * coef * units[j].0[e];
                gu[j][e] += 2.0 * coef * units[i].0[e];
            }
        }
    }
    for (k, &pix) in samples.iter().enumerate() {
        let (u, n, clamped) = &units[k];
        let g = unit_backward(u, *n, *clamped, &gu[k]);
        for (o, x) in grad.pixel_mut(pix).iter_mut().zip(g) {
            *o += x;
        }
    }
    (value, grad)
}

/// Mean of `(1 − cos(F̂, t)) + ‖F̂ − t‖²` over the given pairs, with the
/// gradient w.r.t. each `F̂`. An empty set yields zero.
pub fn loss_lang(fhat: &[Vec<f64>], targets: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    assert_eq!(fhat.len(), targets.len());
    let n = fhat.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (f, t) in fhat.iter().zip(targets) {
        let (uf, nf, cf) = unit_floor(f);
        let nt = dot(t, t).sqrt().max(NORM_FLOOR);
        let ut: Vec<f64> = t.iter().map(|x| x / nt).collect();
        let c = dot(&uf, &ut);
        let sq: f64 = f.iter().zip(*t).map(|(a, b)| (a - b) * (a - b)).sum();
        value += (1.0 - c) + sq;
        let neg_ut: Vec<f64> = ut.iter().map(|x| -x).collect();
        let mut g = unit_backward(&uf, nf, cf, &neg_ut);
        for ((o, a), b) in g.iter_mut().zip(f).zip(*t) {
            *o = (*o + 2.0 * (a - b)) * inv;
        }
        grads.push(g);
    }
    (value * inv, grads)
}

/// Softmax cross-entropy of `head · F_p` against `labels[p]` averaged over the
/// sampled pixels. Returns `(value, d/dhead, d/dfeature_map)`.
pub fn loss_ce_closed_set(
    feature_map: &Image,
    head: &[f64],
    num_classes: usize,
    labels: &[i32],
    samples: &[usize],
) -> Result<(f64, Vec<f64>, Image)> {
    let d = feature_map.channels;
    assert_eq!(head.len(), num_classes * d, "head shape");
    let mut g_head = vec![0.0; head.len()];
    let mut g_feat = Image::zeros(feature_map.width, feature_map.height, d);
    if samples.is_empty() {
        return Ok((0.0, g_head, g_feat));
    }
    let inv = 1.0 / samples.len() as f64;
    let mut value = 0.0;
    let mut logits = vec![0.0; num_classes];
    for &pix in samples {
        let y = labels[pix];
        if y < 0 || y as usize >= num_classes {
            return Err(Error::Data(format!("label {y} outside 0..{num_classes}")));
        }
        let y = y as usize;
        let f = feature_map.pixel(pix);
        for (k, l) in logits.iter_mut().enumerate() {
            *l = dot(&head[k * d..(k + 1) * d], f);
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        value += (mx + z.ln() - logits[y]) * inv;
        let gf = g_feat.pixel_mut(pix);
        for k in 0..num_classes {
            let pk = (logits[k] - mx).exp() / z - if k == y { 1.0 } else { 0.0 };
            let pk = pk * inv;
            let row = &head[k * d..(k + 1) * d];
            for e in 0..d {
                g_head[k * d + e] += pk * f[e];
                gf[e] += pk * row[e];
            }
        }
    }
    Ok((value, g_head, g_feat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub corr: f64,
    pub lang: f64,
    pub ce: f64,
    /// Weight of the SSIM term inside the photometric loss.
    pub ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            corr: 0.05,
            lang: 0.05,
            ce: 0.05,
            ssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.rgb, self.corr, self.lang, self.ce, self.ssim].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.ssim > 1.0 {
            return Err(Error::Config("ssim weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub rgb: f64,
    pub corr: f64,
    pub lang: f64,
    pub ce: Option<f64>,
    pub total: f64,
}

/// Weighted sum of the components; the closed-set term counts only when present.
pub fn loss_total(rgb: f64, corr: f64, lang: f64, ce: Option<f64>, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [("rgb", rgb), ("corr", corr), ("lang", lang), ("ce", ce.unwrap_or(0.0))] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss component {name} is not finite")));
        }
    }
    let mut total = w.rgb * rgb + w.corr * corr + w.lang * lang;
    if let Some(c) = ce {
        total += w.ce * c;
    }
    Ok(LossReport {
        rgb,
        corr,
        lang,
        ce,
        total,
    })
}
