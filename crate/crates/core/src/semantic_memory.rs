//! Language-embedding memory bank with attention readout from compact
//! Gaussian features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset_io::{BankPayload, FrameRecord, MatrixPayload};
use crate::error::{Error, Result};
use crate::scale_supervision::ScaleSupervision;

/// Tolerance on the unit norm of offered embeddings.
pub const UNIT_TOL: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The stored embedding of mask `mask_index`, renormalized.
pub fn masked_embedding(frame: &FrameRecord, mask_index: usize) -> Result<Vec<f64>> {
    let m = frame
        .masks
        .get(mask_index)
        .ok_or_else(|| Error::Data(format!("mask {mask_index} does not exist")))?;
    let n = norm(&m.embedding);
    if m.embedding.is_empty() || !(n > 0.0) || !n.is_finite() {
        return Err(Error::Data(format!("mask {mask_index} has no usable embedding")));
    }
    Ok(m.embedding.iter().map(|x| x / n).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    pub dim: usize,
    /// Row-major `M × dim`.
    pub entries: Vec<f64>,
    /// `(keyframe index, source mask index)` per row.
    pub insertion_log: Vec<(u32, u32)>,
}

impl MemoryBank {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.insertion_log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insertion_log.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn max_similarity(&self, e: &[f64]) -> Option<f64> {
        (0..self.len()).map(|i| dot(self.row(i), e)).reduce(f64::max)
    }

    /// Appends `e` when its largest cosine to the current rows is below `tau`.
    pub fn maybe_insert(&mut self, e: &[f64], tau: f64, source: (u32, u32)) -> Result<bool> {
        if e.len() != self.dim {
            return Err(Error::Validation(format!("embedding length {} != bank dim {}", e.len(), self.dim)));
        }
        if (norm(e) - 1.0).abs() > UNIT_TOL {
            return Err(Error::Validation("offered embedding is not unit norm".into()));
        }
        if self.max_similarity(e).is_some_and(|s| s >= tau) {
            return Ok(false);
        }
        self.entries.extend_from_slice(e);
        self.insertion_log.push(source);
        Ok(true)
    }

    /// All pairwise row cosines (upper triangle).
    pub fn pairwise_cosines(&self) -> Vec<f64> {
        let m = self.len();
        let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                out.push(dot(self.row(i), self.row(j)));
            }
        }
        out
    }

    /// Text summary: size plus a 10-bin histogram of pairwise cosines over [-1, 1].
    pub fn summary(&self) -> String {
        let mut bins = [0usize; 10];
        for c in self.pairwise_cosines() {
            let b = (((c + 1.0) / 0.2).floor() as isize).clamp(0, 9) as usize;
            bins[b] += 1;
        }
        let mut s = format!("M={} D={}\n", self.len(), self.dim);
        for (i, n) in bins.iter().enumerate() {
            let lo = -1.0 + 0.2 * i as f64;
            s.push_str(&format!("[{lo:+.1},{:+.1}) {n}\n", lo + 0.2));
        }
        s
    }

    pub fn to_payload(&self) -> BankPayload {
        BankPayload {
            dim: self.dim,
            entries: MatrixPayload {
                rows: self.len(),
                cols: self.dim,
                data: self.entries.iter().map(|&x| x as f32).collect(),
            },
            insertion_log: self.insertion_log.clone(),
        }
    }

    pub fn from_payload(p: &BankPayload) -> Self {
        Self {
            dim: p.dim,
            entries: p.entries.data.iter().map(|&x| f64::from(x)).collect(),
            insertion_log: p.insertion_log.clone(),
        }
    }
}

/// Learnable `D × d` linear map from Gaussian features to the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub w: Vec<f64>,
}

impl Projection {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
        }
    }

    /// Entries drawn from `N(0, 1/cols)`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0 / (cols.max(1) as f64).sqrt()).unwrap();
        Self {
            rows,
            cols,
            w: (0..rows * cols).map(|_| n.sample(&mut rng)).collect(),
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(&self.w[r * self.cols..(r + 1) * self.cols], f)).collect()
    }

    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (o, x) in out.iter_mut().zip(row) {
                *o += g[r] * x;
            }
        }
        out
    }

    pub fn to_payload(&self) -> MatrixPayload {
        MatrixPayload {
            rows: self.rows,
            cols: self.cols,
            data: self.w.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn from_payload(p: &MatrixPayload) -> Self {
        Self {
            rows: p.rows,
            cols: p.cols,
            w: p.data.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// Forward values kept for [`readout_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub output: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Softmax attention of the projected query over the bank rows.
pub fn readout(f: &[f64], bank: &MemoryBank, proj: &Projection, temperature: f64) -> Result<Readout> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let q = proj.apply(f);
    let logits: Vec<f64> = (0..bank.len()).map(|i| dot(&q, bank.row(i)) / temperature).collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut a: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = a.iter().sum();
    a.iter_mut().for_each(|x| *x /= z);
    let mut out = vec![0.0; bank.dim];
    for (i, ai) in a.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(bank.row(i)) {
            *o += ai * x;
        }
    }
    Ok(Readout {
        output: out,
        attention: a,
    })
}

/// Gradients of a readout w.r.t. the query feature and the projection.
/// `grad_w` is accumulated into (row-major, same shape as `proj.w`).
pub fn readout_backward(
    f: &[f64],
    cache: &Readout,
    bank: &MemoryBank,
    proj: &Projection,
    temperature: f64,
    grad_out: &[f64],
    grad_w: &mut [f64],
) -> Result<Vec<f64>> {
    if grad_out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite readout gradient".into()));
    }
    let a = &cache.attention;
    let ga: Vec<f64> = (0..bank.len()).map(|i| dot(grad_out, bank.row(i))).collect();
    let mean: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
    let mut gq = vec![0.0; bank.dim];
    for i in 0..bank.len() {
        let gl = a[i] * (ga[i] - mean) / temperature;
        if gl != 0.0 {
            for (o, x) in gq.iter_mut().zip(bank.row(i)) {
                *o += gl * x;
            }
        }
    }
    for r in 0..proj.rows {
        if gq[r] != 0.0 {
            let row = &mut grad_w[r * proj.cols..(r + 1) * proj.cols];
            for (o, x) in row.iter_mut().zip(f) {
                *o += gq[r] * x;
            }
        }
    }
    Ok(proj.apply_transpose(&gq))
}

/// Embedding of the smallest mask containing `pixel`, if any.
pub fn pixel_language_target<'a>(pixel: usize, sup: &ScaleSupervision, frame: &'a FrameRecord) -> Option<&'a [f64]> {
    // masks are ordered coarse to fine
    sup.masks
        .iter()
        .rev()
        .find(|m| m.pixels[pixel])
        .map(|m| frame.masks[m.mask_index].embedding.as_slice())
}
