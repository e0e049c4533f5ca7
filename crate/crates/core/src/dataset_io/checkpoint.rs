//! Single-file binary checkpoints.
//!
//! Field order (all little-endian):
//!
//! 1. magic `SSLCKPT\x01` (8 bytes), `u32` format version
//! 2. `u64` rng seed, config snapshot as `u32` length + UTF-8 bytes
//! 3. Gaussians: `u64` count N, `u32` feature dim d, then `f32` arrays
//!    positions `N×3`, rotations `N×4` (w,x,y,z), log-scales `N×3`,
//!    opacity logits `N`, color logits `N×3`, features `N×d`
//! 4. memory bank: `u32` M, `u32` D, `f32` entries `M×D`, `u32` log length,
//!    log entries as `(u32 keyframe, u32 mask)`
//! 5. projection: `u32` rows, `u32` cols, `f32` row-major data
//! 6. closed-set head: same layout as the projection (0×0 when absent)
//! 7. optimizer: `u64` step, `u32` group count, per group a name string,
//!    `u64` length, then `f64` first and second moments
//! 8. trajectory: `u32` frame count, per frame `f64 × 7`
//!    (tx ty tz qx qy qz qw, world←camera) and a `u8` flag byte
//!    (bit 0 keyframe, bit 1 mapping frame, bit 2 tracking skipped)

use std::path::Path;

use super::binary::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLCKPT\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianPayload {
    pub count: usize,
    pub feature_dim: usize,
    pub positions: Vec<f32>,
    pub rotations: Vec<f32>,
    pub log_scales: Vec<f32>,
    pub opacity_logits: Vec<f32>,
    pub color_logits: Vec<f32>,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixPayload {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankPayload {
    pub dim: usize,
    pub entries: MatrixPayload,
    pub insertion_log: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerGroupSnapshot {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub groups: Vec<OptimizerGroupSnapshot>,
}

pub const FLAG_KEYFRAME: u8 = 1;
pub const FLAG_MAPPING: u8 = 2;
pub const FLAG_SKIPPED: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    /// `tx ty tz qx qy qz qw`, world←camera.
    pub pose: [f64; 7],
    pub flags: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: String,
    pub gaussians: GaussianPayload,
    pub bank: BankPayload,
    pub projection: MatrixPayload,
    pub head: MatrixPayload,
    pub optimizer: OptimizerSnapshot,
    pub trajectory: Vec<TrajectoryEntry>,
}

impl Checkpoint {
    /// Checks that every array length agrees with its header counts.
    pub fn validate(&self) -> Result<()> {
        let g = &self.gaussians;
        let n = g.count;
        let checks = [
            ("positions", g.positions.len(), n * 3),
            ("rotations", g.rotations.len(), n * 4),
            ("log_scales", g.log_scales.len(), n * 3),
            ("opacity_logits", g.opacity_logits.len(), n),
            ("color_logits", g.color_logits.len(), n * 3),
            ("features", g.features.len(), n * g.feature_dim),
            (
                "bank entries",
                self.bank.entries.data.len(),
                self.bank.entries.rows * self.bank.entries.cols,
            ),
            (
                "projection",
                self.projection.data.len(),
                self.projection.rows * self.projection.cols,
            ),
            ("head", self.head.data.len(), self.head.rows * self.head.cols),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Validation(format!(
                    "checkpoint {name}: {got} values, header implies {want}"
                )));
            }
        }
        if self.bank.entries.rows > 0 && self.bank.entries.cols != self.bank.dim {
            return Err(Error::Validation("checkpoint bank width != dim".into()));
        }
        for grp in &self.optimizer.groups {
            if grp.m.len() != grp.v.len() {
                return Err(Error::Validation(format!(
                    "optimizer group {} moment lengths differ",
                    grp.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.seed);
        w.string(&self.config);

        let g = &self.gaussians;
        w.u64(g.count as u64);
        w.u32(g.feature_dim as u32);
        for arr in [
            &g.positions,
            &g.rotations,
            &g.log_scales,
            &g.opacity_logits,
            &g.color_logits,
            &g.features,
        ] {
            w.f32_slice(arr);
        }

        w.u32(self.bank.entries.rows as u32);
        w.u32(self.bank.dim as u32);
        w.f32_slice(&self.bank.entries.data);
        w.u32(self.bank.insertion_log.len() as u32);
        for (k, m) in &self.bank.insertion_log {
            w.u32(*k);
            w.u32(*m);
        }

        for mat in [&self.projection, &self.head] {
            w.u32(mat.rows as u32);
            w.u32(mat.cols as u32);
            w.f32_slice(&mat.data);
        }

        w.u64(self.optimizer.step);
        w.u32(self.optimizer.groups.len() as u32);
        for grp in &self.optimizer.groups {
            w.string(&grp.name);
            w.u64(grp.m.len() as u64);
            w.f64_slice(&grp.m);
            w.f64_slice(&grp.v);
        }

        w.u32(self.trajectory.len() as u32);
        for t in &self.trajectory {
            w.f64_slice(&t.pose);
            w.u8(t.flags);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint: bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let seed = r.u64()?;
        let config = r.string()?;

        let count = r.u64()? as usize;
        let feature_dim = r.u32()? as usize;
        let gaussians = GaussianPayload {
            count,
            feature_dim,
            positions: r.f32_vec(count * 3)?,
            rotations: r.f32_vec(count * 4)?,
            log_scales: r.f32_vec(count * 3)?,
            opacity_logits: r.f32_vec(count)?,
            color_logits: r.f32_vec(count * 3)?,
            features: r.f32_vec(count * feature_dim)?,
        };

        let rows = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let entries = MatrixPayload {
            rows,
            cols: dim,
            data: r.f32_vec(rows * dim)?,
        };
        let log_len = r.u32()? as usize;
        let mut insertion_log = Vec::with_capacity(log_len.min(1 << 20));
        for _ in 0..log_len {
            insertion_log.push((r.u32()?, r.u32()?));
        }
        let bank = BankPayload {
            dim,
            entries,
            insertion_log,
        };

        let mut mats = Vec::with_capacity(2);
        for _ in 0..2 {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            mats.push(MatrixPayload {
                rows,
                cols,
                data: r.f32_vec(rows * cols)?,
            });
        }
        let head = mats.pop().unwrap();
        let projection = mats.pop().unwrap();

        let step = r.u64()?;
        let ngroups = r.u32()? as usize;
        let mut groups = Vec::with_capacity(ngroups.min(64));
        for _ in 0..ngroups {
            let name = r.string()?;
            let len = r.u64()? as usize;
            let m = r.f64_vec(len)?;
            let v = r.f64_vec(len)?;
            groups.push(OptimizerGroupSnapshot { name, m, v });
        }

        let nframes = r.u32()? as usize;
        let mut trajectory = Vec::with_capacity(nframes.min(1 << 20));
        for _ in 0..nframes {
            let mut pose = [0.0; 7];
            for p in pose.iter_mut() {
                *p = r.f64()?;
            }
            trajectory.push(TrajectoryEntry {
                pose,
                flags: r.u8()?,
            });
        }
        r.finish()?;
        let ckpt = Checkpoint {
            seed,
            config,
            gaussians,
            bank,
            projection,
            head,
            optimizer: OptimizerSnapshot { step, groups },
            trajectory,
        };
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_file(path)?)
}
