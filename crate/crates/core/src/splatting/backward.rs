//! Analytic gradients of the rasterizer.

use super::gaussian::{GaussianMap, GradientBuffer};
use super::project::{project_backward, ScreenGrad};
use super::render::{eval_alpha, ForwardState};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::image::Image;

/// Back-propagates `grad_color` (H×W×3) and `grad_feature` (H×W×d) through
/// the render that produced `state`.
///
/// Pixels are walked tile by tile in a fixed order, so the result is
/// deterministic.
pub fn render_backward(
    map: &GaussianMap,
    state: &ForwardState,
    pose: &Pose,
    k: &Intrinsics,
    grad_color: &Image,
    grad_feature: Option<&Image>,
) -> Result<GradientBuffer> {
    let d = map.feature_dim;
    let (w, h) = (k.width, k.height);
    if grad_color.width != w || grad_color.height != h || grad_color.channels != 3 {
        return Err(Error::Validation("color gradient shape does not match the render".into()));
    }
    if let Some(gf) = grad_feature {
        if gf.width != w || gf.height != h || gf.channels != d {
            return Err(Error::Validation("feature gradient shape does not match the render".into()));
        }
        if !gf.all_finite() {
            return Err(Error::Numerical("non-finite feature gradient".into()));
        }
    }
    if !grad_color.all_finite() {
        return Err(Error::Numerical("non-finite color gradient".into()));
    }
    let mut out = GradientBuffer::zeros(map.len(), d);
    if state.projected.is_empty() {
        return Ok(out);
    }
    let settings = &state.settings;
    let tile = settings.tile.max(1);
    let tiles_x = state.tiles_x;
    let tiles_y = h.div_ceil(tile);
    let mut screen = vec![ScreenGrad::default(); state.projected.len()];
    let mut feat_grad = vec![0.0; state.projected.len() * d];
    let mut acc_f = vec![0.0; d];
    let zero_f = vec![0.0; d];

    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &state.tile_lists[ty * tiles_x + tx];
            for v in ty * tile..((ty + 1) * tile).min(h) {
                for u in tx * tile..((tx + 1) * tile).min(w) {
                    let pix = v * w + u;
                    let gc = &grad_color.data[3 * pix..3 * pix + 3];
                    let gf = match grad_feature {
                        Some(g) => &g.data[pix * d..(pix + 1) * d],
                        None => &zero_f[..],
                    };
                    if gc.iter().all(|x| *x == 0.0) && gf.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let n = state.last_processed[pix] as usize;
                    // recover transmittance in front of every processed contributor
                    let mut alphas: Vec<(usize, f64, bool)> = Vec::with_capacity(n);
                    for &j in &list[..n] {
                        let p = &state.projected[j as usize];
                        if let Some((a, _, clipped)) = eval_alpha(p, u as f64, v as f64, settings) {
                            alphas.push((j as usize, a, clipped));
                        }
                    }
                    let mut t_front = Vec::with_capacity(alphas.len());
                    let mut t = 1.0;
                    for &(_, a, _) in &alphas {
                        t_front.push(t);
                        t *= 1.0 - a;
                    }
                    let mut acc_c = [0.0; 3];
                    acc_f.iter_mut().for_each(|x| *x = 0.0);
                    let (px, py) = (u as f64, v as f64);
                    for (idx, &(j, alpha, clipped)) in alphas.iter().enumerate().rev() {
                        let p = &state.projected[j];
                        let ti = t_front[idx];
                        let wgt = alpha * ti;
                        let sg = &mut screen[j];
                        let mut g_alpha = 0.0;
                        for c in 0..3 {
                            sg.color[c] += wgt * gc[c];
                            g_alpha += (p.color[c] - acc_c[c]) * gc[c];
                        }
                        let f = map.feature(p.index);
                        let fg = &mut feat_grad[j * d..(j + 1) * d];
                        for e in 0..d {
                            fg[e] += wgt * gf[e];
                            g_alpha += (f[e] - acc_f[e]) * gf[e];
                        }
                        g_alpha *= ti;
                        for c in 0..3 {
                            acc_c[c] = alpha * p.color[c] + (1.0 - alpha) * acc_c[c];
                        }
                        for e in 0..d {
                            acc_f[e] = alpha * f[e] + (1.0 - alpha) * acc_f[e];
                        }
                        if clipped {
                            continue;
                        }
                        // alpha = o · exp(power)
                        let gauss = alpha / p.opacity;
                        sg.opacity += g_alpha * gauss;
                        let g_power = g_alpha * alpha;
                        let dx = px - p.mean.x;
                        let dy = py - p.mean.y;
                        let [a, b, c] = p.conic;
                        sg.mean[0] += g_power * (a * dx + b * dy);
                        sg.mean[1] += g_power * (b * dx + c * dy);
                        sg.conic[0] += g_power * (-0.5 * dx * dx);
                        sg.conic[1] += g_power * (-dx * dy);
                        sg.conic[2] += g_power * (-0.5 * dy * dy);
                    }
                }
            }
        }
    }

    for (j, p) in state.projected.iter().enumerate() {
        let i = p.index;
        let pg = project_backward(map, p, &screen[j], pose, k);
        out.positions[3 * i..3 * i + 3].iter_mut().zip(pg.position).for_each(|(o, g)| *o += g);
        out.rotations[4 * i..4 * i + 4].iter_mut().zip(pg.rotation).for_each(|(o, g)| *o += g);
        out.log_scales[3 * i..3 * i + 3].iter_mut().zip(pg.log_scale).for_each(|(o, g)| *o += g);
        out.opacity_logits[i] += pg.opacity_logit;
        out.color_logits[3 * i..3 * i + 3].iter_mut().zip(pg.color_logit).for_each(|(o, g)| *o += g);
        out.features[d * i..d * (i + 1)]
            .iter_mut()
            .zip(&feat_grad[j * d..(j + 1) * d])
            .for_each(|(o, g)| *o += g);
    }
    if !out.all_finite() {
        return Err(Error::Numerical("non-finite Gaussian gradient".into()));
    }
    Ok(out)
}
