//! Adam with named parameter groups.

use serde::{Deserialize, Serialize};

use crate::dataset_io::{OptimizerGroupSnapshot, OptimizerSnapshot};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Per-group learning rates. The position rate is multiplied by the scene
/// extent when the optimizer is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub positions: f64,
    pub rotations: f64,
    pub scales: f64,
    pub opacity: f64,
    pub color: f64,
    pub features: f64,
    pub projection: f64,
    pub head: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            positions: 1.6e-4,
            rotations: 1e-3,
            scales: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            features: 2.5e-3,
            projection: 1e-3,
            head: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.positions,
            self.rotations,
            self.scales,
            self.opacity,
            self.color,
            self.features,
            self.projection,
            self.head,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub groups: Vec<AdamGroup>,
}

impl Adam {
    pub fn new(specs: &[(&str, usize, f64)]) -> Self {
        Self {
            step: 0,
            groups: specs
                .iter()
                .map(|(name, len, lr)| AdamGroup {
                    name: (*name).to_string(),
                    lr: *lr,
                    m: vec![0.0; *len],
                    v: vec![0.0; *len],
                })
                .collect(),
        }
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut AdamGroup> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    /// Grows or shrinks a group's moments; new slots start at zero.
    pub fn resize(&mut self, name: &str, len: usize) {
        if let Some(g) = self.group_mut(name) {
            g.m.resize(len, 0.0);
            g.v.resize(len, 0.0);
        }
    }

    /// Keeps moment blocks of `stride` entries whose flag in `keep` is set.
    pub fn retain(&mut self, name: &str, stride: usize, keep: &[bool]) {
        if let Some(g) = self.group_mut(name) {
            for buf in [&mut g.m, &mut g.v] {
                let mut out = Vec::with_capacity(buf.len());
                for (i, k) in keep.iter().enumerate() {
                    if *k {
                        out.extend_from_slice(&buf[i * stride..(i + 1) * stride]);
                    }
                }
                *buf = out;
            }
        }
    }

    /// One update of every group; `params[i]` and `grads[i]` pair with
    /// `self.groups[i]`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::Validation("parameter groups do not match the optimizer".into()));
        }
        for (g, gr) in self.groups.iter().zip(grads) {
            if gr.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in group {}", g.name)));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for ((g, p), gr) in self.groups.iter_mut().zip(params.iter_mut()).zip(grads) {
            if p.len() != g.m.len() || gr.len() != g.m.len() {
                return Err(Error::Validation(format!("group {} has mismatched length", g.name)));
            }
            for i in 0..p.len() {
                g.m[i] = ADAM_BETA1 * g.m[i] + (1.0 - ADAM_BETA1) * gr[i];
                g.v[i] = ADAM_BETA2 * g.v[i] + (1.0 - ADAM_BETA2) * gr[i] * gr[i];
                let mh = g.m[i] / bc1;
                let vh = g.v[i] / bc2;
                p[i] -= g.lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            step: self.step,
            groups: self
                .groups
                .iter()
                .map(|g| OptimizerGroupSnapshot {
                    name: g.name.clone(),
                    m: g.m.clone(),
                    v: g.v.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds moments from a snapshot; learning rates come from `lrs`
    /// matched by group name (missing names get 0).
    pub fn from_snapshot(s: &OptimizerSnapshot, lrs: &[(&str, f64)]) -> Self {
        Self {
            step: s.step,
            groups: s
                .groups
                .iter()
                .map(|g| AdamGroup {
                    name: g.name.clone(),
                    lr: lrs.iter().find(|(n, _)| *n == g.name).map_or(0.0, |(_, l)| *l),
                    m: g.m.clone(),
                    v: g.v.clone(),
                })
                .collect(),
        }
    }
}
