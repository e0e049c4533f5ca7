//! Tiled front-to-back rasterizer and its brute-force reference.

use super::gaussian::GaussianMap;
use super::project::{project_all, Projected};
use crate::geometry::{Intrinsics, Pose};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Blending stops once transmittance drops below this. Zero disables it.
    pub transmittance_min: f64,
    pub alpha_max: f64,
    /// Mahalanobis radius (in σ) beyond which a Gaussian is ignored.
    /// `None` lets every Gaussian touch every pixel.
    pub sigma_cutoff: Option<f64>,
    pub tile: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            transmittance_min: 1e-4,
            alpha_max: 0.999,
            sigma_cutoff: Some(3.0),
            tile: 16,
        }
    }
}

impl RenderSettings {
    /// Settings used for exact comparisons: no early termination.
    pub fn exact() -> Self {
        Self {
            transmittance_min: 0.0,
            ..Self::default()
        }
    }
}

/// Cached forward state needed by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardState {
    pub(crate) projected: Vec<Projected>,
    /// Per tile, indices into `projected` in depth order.
    pub(crate) tile_lists: Vec<Vec<u32>>,
    pub(crate) tiles_x: usize,
    /// Per pixel, number of entries of its tile list that were processed.
    pub(crate) last_processed: Vec<u32>,
    pub(crate) settings: RenderSettings,
}

impl ForwardState {
    pub fn projected(&self) -> &[Projected] {
        &self.projected
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub feature: Image,
    pub final_transmittance: Image,
    /// Expected depth, normalized by accumulated opacity (0 where nothing is hit).
    pub depth: Image,
    pub contrib_count: Vec<u32>,
    pub state: ForwardState,
}

impl RenderOutput {
    fn empty(k: &Intrinsics, d: usize, settings: RenderSettings) -> Self {
        let (w, h) = (k.width, k.height);
        Self {
            color: Image::zeros(w, h, 3),
            feature: Image::zeros(w, h, d),
            final_transmittance: Image::filled(w, h, 1, 1.0),
            depth: Image::zeros(w, h, 1),
            contrib_count: vec![0; w * h],
            state: ForwardState {
                settings,
                ..Default::default()
            },
        }
    }
}

/// Per-pixel evaluation of one Gaussian. Returns `(alpha, power, clipped)`
/// or `None` when the pixel lies beyond the cutoff.
#[inline]
pub(crate) fn eval_alpha(p: &Projected, px: f64, py: f64, settings: &RenderSettings) -> Option<(f64, f64, bool)> {
    let dx = px - p.mean.x;
    let dy = py - p.mean.y;
    let [a, b, c] = p.conic;
    let mahal = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if let Some(k) = settings.sigma_cutoff {
        if mahal > k * k {
            return None;
        }
    }
    let power = -0.5 * mahal;
    let raw = p.opacity * power.exp();
    if raw > settings.alpha_max {
        Some((settings.alpha_max, power, true))
    } else {
        Some((raw, power, false))
    }
}

fn tile_range(p: &Projected, settings: &RenderSettings, k: &Intrinsics) -> Option<(usize, usize, usize, usize)> {
    let t = settings.tile as f64;
    let tiles_x = k.width.div_ceil(settings.tile);
    let tiles_y = k.height.div_ceil(settings.tile);
    let Some(cut) = settings.sigma_cutoff else {
        return Some((0, tiles_x, 0, tiles_y));
    };
    let r = p.radius / 3.0 * cut;
    let x0 = ((p.mean.x - r) / t).floor().max(0.0);
    let x1 = ((p.mean.x + r) / t).floor() + 1.0;
    let y0 = ((p.mean.y - r) / t).floor().max(0.0);
    let y1 = ((p.mean.y + r) / t).floor() + 1.0;
    let x1 = x1.min(tiles_x as f64);
    let y1 = y1.min(tiles_y as f64);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Renders color, feature, transmittance and depth for the camera←world `pose`.
pub fn render(map: &GaussianMap, pose: &Pose, k: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    let d = map.feature_dim;
    let mut out = RenderOutput::empty(k, d, *settings);
    let projected = project_all(map, pose, k);
    let tile = settings.tile.max(1);
    let tiles_x = k.width.div_ceil(tile);
    let tiles_y = k.height.div_ceil(tile);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (j, p) in projected.iter().enumerate() {
        if let Some((x0, x1, y0, y1)) = tile_range(p, settings, k) {
            for ty in y0..y1 {
                for tx in x0..x1 {
                    tile_lists[ty * tiles_x + tx].push(j as u32);
                }
            }
        }
    }
    let w = k.width;
    let mut last_processed = vec![0u32; k.num_pixels()];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &tile_lists[ty * tiles_x + tx];
            for v in ty * tile..((ty + 1) * tile).min(k.height) {
                for u in tx * tile..((tx + 1) * tile).min(w) {
                    let pix = v * w + u;
                    let mut t = 1.0;
                    let mut col = [0.0; 3];
                    let mut depth = 0.0;
                    let mut count = 0u32;
                    let feat = &mut out.feature.data[pix * d..(pix + 1) * d];
                    let mut processed = 0u32;
                    for &j in list {
                        processed += 1;
                        let p = &projected[j as usize];
                        let Some((alpha, _, _)) = eval_alpha(p, u as f64, v as f64, settings) else {
                            continue;
                        };
                        let wgt = alpha * t;
                        for c in 0..3 {
                            col[c] += wgt * p.color[c];
                        }
                        let f = map.feature(p.index);
                        for (o, x) in feat.iter_mut().zip(f) {
                            *o += wgt * x;
                        }
                        depth += wgt * p.depth;
                        count += 1;
                        t *= 1.0 - alpha;
                        if t < settings.transmittance_min {
                            break;
                        }
                    }
                    last_processed[pix] = processed;
                    out.color.data[3 * pix..3 * pix + 3].copy_from_slice(&col);
                    out.final_transmittance.data[pix] = t;
                    out.depth.data[pix] = if 1.0 - t > 1e-12 { depth / (1.0 - t) } else { 0.0 };
                    out.contrib_count[pix] = count;
                }
            }
        }
    }
    out.state = ForwardState {
        projected,
        tile_lists,
        tiles_x,
        last_processed,
        settings: *settings,
    };
    out
}

/// Literal per-pixel loop over every projected Gaussian in depth order,
/// without tiling or early termination. Serves as the reference for [`render`].
pub fn brute_force_render(map: &GaussianMap, pose: &Pose, k: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    let d = map.feature_dim;
    let mut out = RenderOutput::empty(k, d, *settings);
    let projected = project_all(map, pose, k);
    for v in 0..k.height {
        for u in 0..k.width {
            let pix = v * k.width + u;
            let mut t = 1.0;
            let mut depth = 0.0;
            for p in &projected {
                let Some((alpha, _, _)) = eval_alpha(p, u as f64, v as f64, settings) else {
                    continue;
                };
                let wgt = alpha * t;
                for c in 0..3 {
                    out.color.data[3 * pix + c] += wgt * p.color[c];
                }
                for (e, x) in map.feature(p.index).iter().enumerate() {
                    out.feature.data[pix * d + e] += wgt * x;
                }
                depth += wgt * p.depth;
                out.contrib_count[pix] += 1;
                t *= 1.0 - alpha;
            }
            out.final_transmittance.data[pix] = t;
            out.depth.data[pix] = if 1.0 - t > 1e-12 { depth / (1.0 - t) } else { 0.0 };
        }
    }
    out.state.projected = projected;
    out
}
