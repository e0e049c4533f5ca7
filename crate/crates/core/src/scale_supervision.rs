//! Scale-conditioned mask supervision: lifted 3D mask sizes, discrete scale
//! levels, per-pixel identity vectors and mask correspondence.

use std::path::Path;

use crate::dataset_io::binary::{encode_i32, write_file};
use crate::dataset_io::{FrameRecord, MaskRecord};
use crate::error::{Error, Result};
use crate::image::Image;

/// Lower bound on a lifted mask scale.
pub const MIN_SCALE: f64 = 1e-6;
/// Offset that separates duplicate levels.
pub const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMask {
    /// Index into the frame's mask list.
    pub mask_index: usize,
    pub label_id: i32,
    pub scale3d: f64,
    pub pixels: Vec<bool>,
}

/// Diagonal of the bounding box of the mask's confident camera-frame points.
pub fn lift_mask_scale(mask: &MaskRecord, mask_index: usize, pointmap: &Image, confidence: &Image) -> Result<LiftedMask> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for (p, inside) in mask.pixels.iter().enumerate() {
        if !inside || confidence.data[p] <= 0.0 {
            continue;
        }
        any = true;
        for (c, x) in pointmap.pixel(p).iter().enumerate() {
            lo[c] = lo[c].min(*x);
            hi[c] = hi[c].max(*x);
        }
    }
    if !any {
        return Err(Error::EmptyLift);
    }
    let diag = (0..3).map(|c| (hi[c] - lo[c]).powi(2)).sum::<f64>().sqrt();
    Ok(LiftedMask {
        mask_index,
        label_id: mask.label_id,
        scale3d: diag.max(MIN_SCALE),
        pixels: mask.pixels.clone(),
    })
}

/// Nearest-rank quantiles of `scales` at fractions `(k - 0.5) / S`, made
/// strictly ascending by nudging duplicates upwards.
pub fn compute_levels(scales: &[f64], s: usize) -> Result<Vec<f64>> {
    if scales.is_empty() {
        return Err(Error::InsufficientData("no mask scales to derive levels from".into()));
    }
    if s == 0 {
        return Err(Error::Config("number of scale levels must be at least 1".into()));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let raw: Vec<f64> = (1..=s)
        .map(|k| {
            let frac = (k as f64 - 0.5) / s as f64;
            let rank = ((frac * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        })
        .collect();
    let mut levels = Vec::with_capacity(s);
    for k in 0..s {
        let mut l = raw[k];
        if k > 0 && raw[k] == raw[k - 1] {
            l += (k + 1) as f64 * LEVEL_EPS;
        }
        if k > 0 && l <= levels[k - 1] {
            l = levels[k - 1] + LEVEL_EPS;
        }
        levels.push(l);
    }
    Ok(levels)
}

/// Active-mask rule at scale `s` for masks containing a pixel, given their
/// sizes: a mask is active unless some other containing mask has size in
/// `[s, own size)`.
pub fn active_by_rule(sizes: &[f64], s: f64) -> Vec<bool> {
    sizes
        .iter()
        .map(|&si| !sizes.iter().any(|&sj| s <= sj && sj < si))
        .collect()
}

/// Per-frame supervision tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSupervision {
    pub levels: Vec<f64>,
    /// Ordered coarse to fine (descending scale, ties by mask index).
    pub masks: Vec<LiftedMask>,
    pub width: usize,
    pub height: usize,
    words: usize,
    /// `[level][pixel][word]` bitsets over `masks`.
    identity: Vec<u64>,
}

impl ScaleSupervision {
    /// Lifts every mask of `frame` and tabulates identity vectors at `levels`.
    /// Masks without a confident pixel are dropped.
    pub fn build(frame: &FrameRecord, levels: &[f64]) -> Result<Self> {
        let mut masks = Vec::new();
        for (i, m) in frame.masks.iter().enumerate() {
            match lift_mask_scale(m, i, &frame.pointmap, &frame.confidence) {
                Ok(l) => masks.push(l),
                Err(Error::EmptyLift) => continue,
                Err(e) => return Err(e),
            }
        }
        Self::from_masks(masks, levels, frame.width(), frame.height())
    }

    pub fn from_masks(mut masks: Vec<LiftedMask>, levels: &[f64], width: usize, height: usize) -> Result<Self> {
        if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("scale levels must be non-empty and strictly ascending".into()));
        }
        masks.sort_by(|a, b| b.scale3d.total_cmp(&a.scale3d).then(a.mask_index.cmp(&b.mask_index)));
        let n_pix = width * height;
        let words = masks.len().div_ceil(64).max(1);
        let mut identity = vec![0u64; levels.len() * n_pix * words];
        let mut containing: Vec<usize> = Vec::new();
        for p in 0..n_pix {
            containing.clear();
            containing.extend((0..masks.len()).filter(|&i| masks[i].pixels[p]));
            if containing.is_empty() {
                continue;
            }
            for (li, &s) in levels.iter().enumerate() {
                // smallest containing size that is >= s
                let m_star = containing
                    .iter()
                    .map(|&i| masks[i].scale3d)
                    .filter(|&x| x >= s)
                    .fold(f64::INFINITY, f64::min);
                let base = (li * n_pix + p) * words;
                for &i in &containing {
                    let sz = masks[i].scale3d;
                    if sz < s || sz == m_star {
                        identity[base + i / 64] |= 1u64 << (i % 64);
                    }
                }
            }
        }
        Ok(Self {
            levels: levels.to_vec(),
            masks,
            width,
            height,
            words,
            identity,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Identity bitset of `pixel` at 0-based `level`; bit `i` refers to `masks[i]`.
    pub fn identity_bits(&self, level: usize, pixel: usize) -> &[u64] {
        let base = (level * self.width * self.height + pixel) * self.words;
        &self.identity[base..base + self.words]
    }

    /// Identity vector as booleans over `masks`.
    pub fn identity_vector(&self, level: usize, pixel: usize) -> Vec<bool> {
        let bits = self.identity_bits(level, pixel);
        (0..self.masks.len()).map(|i| bits[i / 64] >> (i % 64) & 1 == 1).collect()
    }

    /// 1 when the two pixels share an active mask at `level`.
    pub fn mask_correspondence(&self, level: usize, p1: usize, p2: usize) -> bool {
        self.identity_bits(level, p1)
            .iter()
            .zip(self.identity_bits(level, p2))
            .any(|(a, b)| a & b != 0)
    }

    /// Summed contrastive sign over all levels, `Σ_s (1 − 2·Corr_m)`.
    pub fn pair_coefficient(&self, p1: usize, p2: usize) -> f64 {
        let s = self.num_levels();
        let pos = (0..s).filter(|&l| self.mask_correspondence(l, p1, p2)).count();
        s as f64 - 2.0 * pos as f64
    }

    /// True when some mask covers `pixel`.
    pub fn covered(&self, pixel: usize) -> bool {
        self.masks.iter().any(|m| m.pixels[pixel])
    }

    /// Per-level label images: each pixel carries the label of its largest
    /// active mask, or -1.
    pub fn label_images(&self) -> Vec<Vec<i32>> {
        let n_pix = self.width * self.height;
        (0..self.num_levels())
            .map(|l| {
                (0..n_pix)
                    .map(|p| {
                        let bits = self.identity_bits(l, p);
                        (0..self.masks.len())
                            .find(|&i| bits[i / 64] >> (i % 64) & 1 == 1)
                            .map_or(-1, |i| self.masks[i].label_id)
                    })
                    .collect()
            })
            .collect()
    }

    /// Writes the label images as one `S×H×W` int32 array.
    pub fn dump_labels(&self, path: &Path) -> Result<()> {
        let data: Vec<i32> = self.label_images().into_iter().flatten().collect();
        let bytes = encode_i32(&[self.num_levels(), self.height, self.width], &data);
        write_file(path, &bytes)
    }
}
