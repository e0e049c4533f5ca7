//! Camera tracking from pointmap ray errors, plus keyframe and mapping-frame
//! scheduling.

pub mod matching;
pub mod solver;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::Image;

pub use matching::{gather_points, match_rays, normalize_ray, sample_bilinear, Correspondence, MIN_MATCHES};
pub use solver::{match_sigma, optimize_pose, robust_cost, PoseEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Huber threshold in ray-residual units.
    pub huber_delta: f64,
    pub sigma_r: f64,
    pub max_iters: usize,
    /// Step norm below which the pose solver stops.
    pub tol: f64,
    /// A frame becomes a keyframe when its match fraction drops below this.
    pub keyframe_threshold: f64,
    /// Without a keyframe, every this many frames becomes a mapping frame.
    pub mapping_interval: usize,
    pub grid_stride: usize,
    pub match_max_iters: usize,
    /// Pixel update below which match refinement stops.
    pub match_tol: f64,
    /// Matches with residual at or below this are never rejected by the
    /// median rule.
    pub residual_floor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            huber_delta: 0.01,
            sigma_r: 0.003,
            max_iters: 30,
            tol: 1e-8,
            keyframe_threshold: 0.7,
            mapping_interval: 10,
            grid_stride: 4,
            match_max_iters: 10,
            match_tol: 0.01,
            residual_floor: 1e-3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.huber_delta, self.sigma_r, self.tol, self.keyframe_threshold, self.match_tol];
        if positive.iter().any(|v| !(*v > 0.0)) || self.residual_floor < 0.0 {
            return Err(Error::Config("tracker thresholds must be positive".into()));
        }
        if self.max_iters == 0 || self.grid_stride == 0 || self.mapping_interval == 0 || self.match_max_iters == 0 {
            return Err(Error::Config("tracker iteration counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeyframeDecision {
    pub is_keyframe: bool,
    pub is_mapping_frame: bool,
}

/// Valid matches relative to the reference frame's confident pixels.
pub fn match_fraction(valid_matches: usize, conf_ref: &Image) -> f64 {
    let confident = conf_ref.data.iter().filter(|c| **c > 0.0).count();
    if confident == 0 {
        0.0
    } else {
        valid_matches as f64 / confident as f64
    }
}

/// `last_selected` is the index of the most recent keyframe or mapping frame.
pub fn keyframe_decision(frame_index: usize, last_selected: usize, fraction: f64, cfg: &TrackerConfig) -> KeyframeDecision {
    if fraction < cfg.keyframe_threshold {
        return KeyframeDecision {
            is_keyframe: true,
            is_mapping_frame: false,
        };
    }
    let since = frame_index.saturating_sub(last_selected);
    KeyframeDecision {
        is_keyframe: false,
        is_mapping_frame: since > 0 && since % cfg.mapping_interval == 0,
    }
}

/// Formats `idx tx ty tz qx qy qz qw kf_flag` lines for world←camera poses.
pub fn format_trajectory(poses: &[Pose], keyframes: &[bool]) -> String {
    let mut s = String::new();
    for (i, (p, kf)) in poses.iter().zip(keyframes).enumerate() {
        let t = p.translation.vector;
        let q = p.rotation;
        writeln!(
            s,
            "{i} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {}",
            t.x,
            t.y,
            t.z,
            q.i,
            q.j,
            q.k,
            q.w,
            u8::from(*kf)
        )
        .unwrap();
    }
    s
}

pub fn write_trajectory(path: &Path, poses: &[Pose], keyframes: &[bool]) -> Result<()> {
    std::fs::write(path, format_trajectory(poses, keyframes)).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(text: &str) -> Result<(Vec<Pose>, Vec<bool>)> {
    let mut poses = Vec::new();
    let mut flags = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("trajectory line {}: not numeric", line_no + 1)))?;
        if v.len() != 9 {
            return Err(Error::Format(format!("trajectory line {}: expected 9 fields", line_no + 1)));
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
        poses.push(Pose::from_parts(Translation3::new(v[1], v[2], v[3]), q));
        flags.push(v[8] != 0.0);
    }
    Ok((poses, flags))
}
