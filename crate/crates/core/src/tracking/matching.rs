//! Ray-error correspondence search.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::TrackerConfig;
use crate::error::{Error, Result};
use crate::image::Image;

/// Minimum number of matches that survive filtering.
pub const MIN_MATCHES: usize = 6;

/// Unit ray through `x`.
pub fn normalize_ray(x: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = x.norm();
    if !(n > 1e-12) {
        return Err(Error::DegenerateRay);
    }
    Ok(x / n)
}

/// One reference-pixel/target-point correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Continuous pixel `(u, v)` in the reference frame.
    pub ref_pixel: Vector2<f64>,
    /// Index of the target point (pixel index in the other frame).
    pub target_index: usize,
    pub q_match: f64,
    pub residual: f64,
}

/// Bilinear lookup of a 3-channel image at continuous `(u, v)`.
///
/// Returns `None` if any of the four neighbours is outside the image or has
/// zero confidence.
pub fn sample_bilinear(points: &Image, conf: &Image, u: f64, v: f64) -> Option<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let (w, h) = (points.width, points.height);
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let u0 = (u.floor() as usize).min(w.saturating_sub(2));
    let v0 = (v.floor() as usize).min(h.saturating_sub(2));
    let (u1, v1) = ((u0 + 1).min(w - 1), (v0 + 1).min(h - 1));
    let fu = u - u0 as f64;
    let fv = v - v0 as f64;
    let idx = [v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1];
    if idx.iter().any(|&i| conf.data[i] <= 0.0) {
        return None;
    }
    let p = |i: usize| Vector3::from_column_slice(points.pixel(i));
    let (p00, p10, p01, p11) = (p(idx[0]), p(idx[1]), p(idx[2]), p(idx[3]));
    let x = p00 * (1.0 - fu) * (1.0 - fv) + p10 * fu * (1.0 - fv) + p01 * (1.0 - fu) * fv + p11 * fu * fv;
    let du = (p10 - p00) * (1.0 - fv) + (p11 - p01) * fv;
    let dv = (p01 - p00) * (1.0 - fu) + (p11 - p10) * fu;
    Some((x, du, dv))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct RefRays {
    rays: Vec<Vector3<f64>>,
    valid: Vec<bool>,
    width: usize,
    height: usize,
}

impl RefRays {
    fn new(points: &Image, conf: &Image) -> Self {
        let n = points.num_pixels();
        let mut rays = vec![Vector3::zeros(); n];
        let mut valid = vec![false; n];
        for i in 0..n {
            if conf.data[i] > 0.0 {
                if let Ok(r) = normalize_ray(&Vector3::from_column_slice(points.pixel(i))) {
                    rays[i] = r;
                    valid[i] = true;
                }
            }
        }
        Self {
            rays,
            valid,
            width: points.width,
            height: points.height,
        }
    }

    fn best_in(&self, target: &Vector3<f64>, us: impl Iterator<Item = usize> + Clone, vs: impl Iterator<Item = usize>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for v in vs {
            for u in us.clone() {
                let i = v * self.width + u;
                if !self.valid[i] {
                    continue;
                }
                let e = (self.rays[i] - target).norm_squared();
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((i, e));
                }
            }
        }
        best
    }
}

/// Continuous refinement of a pixel by Gauss-Newton on the ray error.
fn refine(points: &Image, conf: &Image, target: &Vector3<f64>, start: Vector2<f64>, cfg: &TrackerConfig) -> (Vector2<f64>, f64) {
    let mut p = start;
    let eval = |p: &Vector2<f64>| -> Option<(f64, Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
        let (x, du, dv) = sample_bilinear(points, conf, p.x, p.y)?;
        let n = x.norm();
        if n <= 1e-12 {
            return None;
        }
        let psi = x / n;
        let proj: Matrix3<f64> = (Matrix3::identity() - psi * psi.transpose()) / n;
        let r = psi - target;
        Some((r.norm_squared(), r, proj * du, proj * dv))
    };
    let Some(mut cur) = eval(&p) else {
        return (p, f64::INFINITY);
    };
    let (wmax, hmax) = ((points.width - 1) as f64, (points.height - 1) as f64);
    for _ in 0..cfg.match_max_iters {
        let (e, r, ju, jv) = cur;
        let h = Matrix2::new(ju.dot(&ju), ju.dot(&jv), ju.dot(&jv), jv.dot(&jv));
        let g = Vector2::new(ju.dot(&r), jv.dot(&r));
        let damp = 1e-9 * (h[(0, 0)] + h[(1, 1)]).max(1e-18);
        let Some(step) = (h + Matrix2::identity() * damp).try_inverse().map(|hi| -(hi * g)) else {
            break;
        };
        let mut accepted = false;
        let mut s = step;
        for _ in 0..6 {
            let cand = Vector2::new((p.x + s.x).clamp(0.0, wmax), (p.y + s.y).clamp(0.0, hmax));
            if let Some(next) = eval(&cand) {
                if next.0 <= e {
                    let moved = (cand - p).norm();
                    p = cand;
                    cur = next;
                    accepted = true;
                    if moved < cfg.match_tol {
                        return (p, cur.0.sqrt());
                    }
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (p, cur.0.sqrt())
}

/// For every target point finds the reference pixel whose ray best matches
/// its ray: coarse grid search, a dense local window, then continuous
/// Gauss-Newton on the bilinearly interpolated reference pointmap.
///
/// `targets` must be expressed in the reference camera frame. Targets with
/// zero confidence are skipped. Matches are filtered by residual and
/// confidence relative to their medians.
pub fn match_rays(
    pointmap_ref: &Image,
    conf_ref: &Image,
    targets: &[Vector3<f64>],
    conf_target: &[f64],
    cfg: &TrackerConfig,
) -> Result<Vec<Correspondence>> {
    assert_eq!(targets.len(), conf_target.len());
    let rays = RefRays::new(pointmap_ref, conf_ref);
    let stride = cfg.grid_stride.max(1);
    let (w, h) = (rays.width, rays.height);
    let mut raw = Vec::new();
    for (ti, (x, &qt)) in targets.iter().zip(conf_target).enumerate() {
        if qt <= 0.0 {
            continue;
        }
        let Ok(tr) = normalize_ray(x) else { continue };
        let Some((coarse, _)) = rays.best_in(&tr, (0..w).step_by(stride), (0..h).step_by(stride)) else {
            continue;
        };
        let (cu, cv) = (coarse % w, coarse / w);
        let us = cu.saturating_sub(stride)..(cu + stride + 1).min(w);
        let vs = cv.saturating_sub(stride)..(cv + stride + 1).min(h);
        let (best, _) = rays.best_in(&tr, us, vs).expect("window contains the coarse pixel");
        let start = Vector2::new((best % w) as f64, (best / w) as f64);
        let (p, residual) = refine(pointmap_ref, conf_ref, &tr, start, cfg);
        let grid_residual = (rays.rays[best] - tr).norm();
        let (p, residual) = if residual <= grid_residual { (p, residual) } else { (start, grid_residual) };
        let nearest = (p.y.round() as usize) * w + p.x.round() as usize;
        let qk = if rays.valid[nearest] { conf_ref.data[nearest] } else { conf_ref.data[best] };
        raw.push(Correspondence {
            ref_pixel: p,
            target_index: ti,
            q_match: (qt * qk).sqrt(),
            residual,
        });
    }
    let med_r = median(raw.iter().map(|c| c.residual).collect());
    let med_q = median(raw.iter().map(|c| c.q_match).collect());
    let r_max = (2.0 * med_r).max(cfg.residual_floor);
    let out: Vec<Correspondence> = raw
        .into_iter()
        .filter(|c| c.residual <= r_max && c.q_match >= 0.1 * med_q && c.q_match > 0.0)
        .collect();
    if out.len() < MIN_MATCHES {
        return Err(Error::InsufficientMatches {
            found: out.len(),
            required: MIN_MATCHES,
        });
    }
    Ok(out)
}

/// Looks up the reference point under each match and the corresponding
/// target-frame point, skipping matches whose reference point cannot be
/// interpolated.
pub fn gather_points(
    matches: &[Correspondence],
    pointmap_ref: &Image,
    conf_ref: &Image,
    points_frame: &Image,
) -> (Vec<Correspondence>, Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut kept = Vec::with_capacity(matches.len());
    let mut pf = Vec::with_capacity(matches.len());
    let mut pk = Vec::with_capacity(matches.len());
    for m in matches {
        let xk = match sample_bilinear(pointmap_ref, conf_ref, m.ref_pixel.x, m.ref_pixel.y) {
            Some((x, _, _)) => x,
            None => {
                let i = (m.ref_pixel.y.round() as usize) * pointmap_ref.width + m.ref_pixel.x.round() as usize;
                if conf_ref.data[i] <= 0.0 {
                    continue;
                }
                Vector3::from_column_slice(pointmap_ref.pixel(i))
            }
        };
        kept.push(*m);
        pk.push(xk);
        pf.push(Vector3::from_column_slice(points_frame.pixel(m.target_index)));
    }
    (kept, pf, pk)
}
