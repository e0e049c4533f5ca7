//! Robust SE(3) Gauss-Newton on ray residuals.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::matching::Correspondence;
use super::TrackerConfig;
use crate::error::{Error, Result};
use crate::geometry::{renormalized, se3_exp, skew, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Frame→keyframe transform.
    pub t_kf: Pose,
    pub iterations: usize,
    /// Final robust cost.
    pub cost: f64,
}

/// Weighting of a match with confidence `q`: its residual is divided by
/// `sigma_r / sqrt(q)`.
#[inline]
pub fn match_sigma(q: f64, sigma_r: f64) -> f64 {
    sigma_r / q.sqrt()
}

#[inline]
fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

fn unit(x: &Vector3<f64>) -> Vector3<f64> {
    let n = x.norm();
    if n > 1e-12 {
        x / n
    } else {
        Vector3::zeros()
    }
}

/// Robust cost of `t_kf` and, per match, the whitened residual.
pub fn robust_cost(matches: &[Correspondence], points_f: &[Vector3<f64>], points_k: &[Vector3<f64>], t_kf: &Pose, cfg: &TrackerConfig) -> f64 {
    let delta = cfg.huber_delta / cfg.sigma_r;
    let mut cost = 0.0;
    for ((m, xf), xk) in matches.iter().zip(points_f).zip(points_k) {
        let r = unit(xk) - unit(&(t_kf * nalgebra::Point3::from(*xf)).coords);
        let e = r.norm() / match_sigma(m.q_match, cfg.sigma_r);
        cost += huber(e, delta);
    }
    cost
}

fn solve(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    h.cholesky().map(|c| -c.solve(g))
}

/// Minimizes the Huber-robustified, confidence-weighted ray error over the
/// frame→keyframe pose, starting from `t_init`.
///
/// Steps are left-multiplied `exp(ξ)·T` and accepted only when they lower the
/// cost; the step is halved up to ten times before giving up.
pub fn optimize_pose(
    matches: &[Correspondence],
    points_f: &[Vector3<f64>],
    points_k: &[Vector3<f64>],
    t_init: &Pose,
    cfg: &TrackerConfig,
) -> Result<PoseEstimate> {
    if matches.len() < super::matching::MIN_MATCHES {
        return Err(Error::InsufficientMatches {
            found: matches.len(),
            required: super::matching::MIN_MATCHES,
        });
    }
    assert_eq!(matches.len(), points_f.len());
    assert_eq!(matches.len(), points_k.len());
    let delta = cfg.huber_delta / cfg.sigma_r;
    let rays_k: Vec<Vector3<f64>> = points_k.iter().map(unit).collect();
    let mut t = renormalized(t_init);
    let mut cost = robust_cost(matches, points_f, points_k, &t, cfg);
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for ((m, xf), rk) in matches.iter().zip(points_f).zip(&rays_k) {
            let y = (t * nalgebra::Point3::from(*xf)).coords;
            let n = y.norm();
            if n <= 1e-12 {
                continue;
            }
            let psi = y / n;
            let s = 1.0 / match_sigma(m.q_match, cfg.sigma_r);
            let r = (rk - psi) * s;
            let e = r.norm();
            let w = if e <= delta { 1.0 } else { delta / e };
            // d(psi)/dy · dy/dξ with dy/dξ = [I, -[y]x]
            let dpsi: Matrix3<f64> = (Matrix3::identity() - psi * psi.transpose()) / n;
            let mut j = nalgebra::Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-s * dpsi));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(s * dpsi * skew(&y)));
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        let step = match solve(&h, &g) {
            Some(s) => s,
            None => {
                let damp = 1e-6 * h.trace().max(1e-12);
                solve(&(h + Matrix6::identity() * damp), &g).ok_or(Error::DegenerateGeometry)?
            }
        };
        if !step.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateGeometry);
        }
        let mut s = step;
        let mut accepted = false;
        for _ in 0..10 {
            let cand = renormalized(&(se3_exp(&s) * t));
            let c = robust_cost(matches, points_f, points_k, &cand, cfg);
            if c <= cost {
                t = cand;
                cost = c;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted || s.norm() < cfg.tol {
            break;
        }
    }
    Ok(PoseEstimate {
        t_kf: t,
        iterations,
        cost,
    })
}
