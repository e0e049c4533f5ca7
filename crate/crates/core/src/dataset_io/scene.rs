//! Scene containers and the JSON manifest format.
//!
//! A scene directory holds `manifest.json` plus per-frame binary payloads:
//!
//! ```text
//! {
//!   "version": 1, "width": W, "height": H, "intrinsics": [fx, fy, cx, cy], "D": 32,
//!   "original_size": [W0, H0],            // optional
//!   "class_table": {"0": "object 0", ...}, // optional
//!   "queries": "queries.bin",             // optional, embedding table
//!   "frames": [{
//!     "rgb": "frame_0000_rgb.bin",        // f32 [H, W, 3]
//!     "pointmap": "frame_0000_pts.bin",   // f32 [H, W, 3], camera frame
//!     "confidence": "frame_0000_conf.bin",// f32 [H, W]
//!     "mask_layers": ["frame_0000_layer0.bin", ...], // i32 [H, W], -1 = none
//!     "embeddings": "frame_0000_emb.bin", // embedding table, one row per label
//!     "gt_pose": [16 × f64]               // optional, row-major world←camera
//!   }]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::{
    decode_embeddings, decode_f32, decode_i32, encode_embeddings, encode_f32, encode_i32,
    read_file, write_file,
};
use crate::error::{Error, Result};
use crate::geometry::{pose_from_row_major, pose_to_row_major, Intrinsics, Pose};
use crate::image::Image;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
const UNIT_TOL: f64 = 1e-6;

/// One binary instance mask with its language embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub label_id: i32,
    /// Granularity layer the mask came from (0 = finest in synthetic scenes).
    pub layer: usize,
    /// Row-major `H × W` membership.
    pub pixels: Vec<bool>,
    pub embedding: Vec<f64>,
}

impl MaskRecord {
    pub fn pixel_count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, pixel: usize) -> bool {
        self.pixels[pixel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub rgb: Image,
    pub pointmap: Image,
    pub confidence: Image,
    /// One `H × W` label image per granularity layer; `-1` marks no label.
    pub mask_layers: Vec<Vec<i32>>,
    pub masks: Vec<MaskRecord>,
    /// World←camera.
    pub gt_pose: Option<Pose>,
}

impl FrameRecord {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn mask_by_label(&self, label: i32) -> Option<&MaskRecord> {
        self.masks.iter().find(|m| m.label_id == label)
    }

    /// Rebuilds mask records from the label layers and a label→embedding table.
    pub fn masks_from_layers(
        layers: &[Vec<i32>],
        embeddings: &BTreeMap<i32, Vec<f64>>,
        num_pixels: usize,
    ) -> Result<Vec<MaskRecord>> {
        let mut masks = Vec::new();
        let mut seen = BTreeSet::new();
        for (layer, labels) in layers.iter().enumerate() {
            let ids: BTreeSet<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::Validation(format!(
                        "label {id} appears in more than one mask layer"
                    )));
                }
                let embedding = embeddings
                    .get(&id)
                    .ok_or_else(|| Error::Validation(format!("label {id} has no embedding")))?
                    .clone();
                let pixels: Vec<bool> = (0..num_pixels).map(|p| labels[p] == id).collect();
                masks.push(MaskRecord {
                    label_id: id,
                    layer,
                    pixels,
                    embedding,
                });
            }
        }
        Ok(masks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub intrinsics: Intrinsics,
    pub embedding_dim: usize,
    pub frames: Vec<FrameRecord>,
    pub class_table: Option<BTreeMap<i32, String>>,
    /// Canonical per-label query embeddings used by open-set evaluation.
    pub queries: Option<BTreeMap<i32, Vec<f64>>>,
    /// Resolution of the source material before any resizing, as `(width, height)`.
    pub original_size: Option<(usize, usize)>,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks every type invariant; loaders and generators both call this.
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !k.is_valid() {
            return Err(Error::Validation("invalid intrinsics".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Validation("embedding dim must be positive".into()));
        }
        let (w, h, d) = (k.width, k.height, self.embedding_dim);
        for (i, f) in self.frames.iter().enumerate() {
            let ctx = |msg: String| Error::Validation(format!("frame {i}: {msg}"));
            for (name, img, c) in [
                ("rgb", &f.rgb, 3),
                ("pointmap", &f.pointmap, 3),
                ("confidence", &f.confidence, 1),
            ] {
                if img.width != w || img.height != h || img.channels != c {
                    return Err(Error::Format(format!(
                        "frame {i}: {name} has shape {}x{}x{}, expected {h}x{w}x{c}",
                        img.height, img.width, img.channels
                    )));
                }
            }
            if f.rgb.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ctx("rgb values outside [0,1]".into()));
            }
            for p in 0..w * h {
                let c = f.confidence.data[p];
                if !(c >= 0.0) {
                    return Err(ctx(format!("negative or NaN confidence at pixel {p}")));
                }
                if c > 0.0 && !(f.pointmap.pixel(p)[2] > 0.0) {
                    return Err(ctx(format!("non-positive depth at confident pixel {p}")));
                }
            }
            for layer in &f.mask_layers {
                if layer.len() != w * h {
                    return Err(Error::Format(format!("frame {i}: mask layer size mismatch")));
                }
            }
            let mut labels = BTreeSet::new();
            for m in &f.masks {
                if !labels.insert(m.label_id) {
                    return Err(ctx(format!("duplicate mask label {}", m.label_id)));
                }
                if m.pixels.len() != w * h {
                    return Err(Error::Format(format!("frame {i}: mask size mismatch")));
                }
                if !m.pixels.iter().any(|&b| b) {
                    return Err(ctx(format!("mask {} is empty", m.label_id)));
                }
                if m.embedding.len() != d {
                    return Err(ctx(format!(
                        "mask {} embedding has length {}, expected {d}",
                        m.label_id,
                        m.embedding.len()
                    )));
                }
                let n = norm(&m.embedding);
                if (n - 1.0).abs() > UNIT_TOL {
                    return Err(ctx(format!(
                        "mask {} embedding has norm {n}, expected unit",
                        m.label_id
                    )));
                }
            }
        }
        if let Some(q) = &self.queries {
            for (label, e) in q {
                if e.len() != d {
                    return Err(Error::Validation(format!(
                        "query {label} has length {}, expected {d}",
                        e.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Poses of all frames if every frame carries one.
    pub fn gt_poses(&self) -> Option<Vec<Pose>> {
        self.frames.iter().map(|f| f.gt_pose).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    width: usize,
    height: usize,
    intrinsics: [f64; 4],
    #[serde(rename = "D")]
    embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_size: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_table: Option<BTreeMap<i32, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    queries: Option<String>,
    frames: Vec<ManifestFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    rgb: String,
    pointmap: String,
    confidence: String,
    mask_layers: Vec<String>,
    embeddings: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_pose: Option<Vec<f64>>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn load_image(path: &Path, h: usize, w: usize, c: usize) -> Result<Image> {
    let what = path.display().to_string();
    let (dims, data) = decode_f32(&read_file(path)?, &what)?;
    let expected: Vec<usize> = if c == 1 { vec![h, w] } else { vec![h, w, c] };
    if dims != expected {
        return Err(Error::Format(format!(
            "{what}: dims {dims:?}, expected {expected:?}"
        )));
    }
    Ok(Image::from_vec(
        w,
        h,
        c,
        data.into_iter().map(f64::from).collect(),
    ))
}

/// Loads and validates a scene from a manifest file or a directory holding one.
pub fn load_scene(manifest: &Path) -> Result<SceneDataset> {
    let mpath = manifest_path(manifest);
    let dir = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            m.version
        )));
    }
    let [fx, fy, cx, cy] = m.intrinsics;
    let intrinsics = Intrinsics::new(fx, fy, cx, cy, m.width, m.height);
    let (w, h, d) = (m.width, m.height, m.embedding_dim);

    let mut frames = Vec::with_capacity(m.frames.len());
    for (i, mf) in m.frames.iter().enumerate() {
        let rgb = load_image(&dir.join(&mf.rgb), h, w, 3)?;
        let pointmap = load_image(&dir.join(&mf.pointmap), h, w, 3)?;
        let confidence = load_image(&dir.join(&mf.confidence), h, w, 1)?;
        let mut mask_layers = Vec::new();
        for lp in &mf.mask_layers {
            let p = dir.join(lp);
            let what = p.display().to_string();
            let (dims, labels) = decode_i32(&read_file(&p)?, &what)?;
            if dims != [h, w] {
                return Err(Error::Format(format!("{what}: dims {dims:?}, expected [{h}, {w}]")));
            }
            mask_layers.push(labels);
        }
        let ep = dir.join(&mf.embeddings);
        let (edim, rows) = decode_embeddings(&read_file(&ep)?, &ep.display().to_string())?;
        if edim != d {
            return Err(Error::Validation(format!(
                "frame {i}: embeddings have length {edim}, expected {d}"
            )));
        }
        let mut table = BTreeMap::new();
        for (label, e) in rows {
            if table.insert(label, e).is_some() {
                return Err(Error::Validation(format!(
                    "frame {i}: duplicate embedding for label {label}"
                )));
            }
        }
        let masks = FrameRecord::masks_from_layers(&mask_layers, &table, w * h)?;
        if masks.len() != table.len() {
            return Err(Error::Validation(format!(
                "frame {i}: {} embeddings but {} non-empty masks",
                table.len(),
                masks.len()
            )));
        }
        let gt_pose = match &mf.gt_pose {
            None => None,
            Some(v) => Some(pose_from_row_major(v).ok_or_else(|| {
                Error::Format(format!("frame {i}: gt_pose needs 12 or 16 values"))
            })?),
        };
        frames.push(FrameRecord {
            rgb,
            pointmap,
            confidence,
            mask_layers,
            masks,
            gt_pose,
        });
    }

    let queries = match &m.queries {
        None => None,
        Some(q) => {
            let p = dir.join(q);
            let (_, rows) = decode_embeddings(&read_file(&p)?, &p.display().to_string())?;
            Some(rows.into_iter().collect())
        }
    };
    let scene = SceneDataset {
        intrinsics,
        embedding_dim: d,
        frames,
        class_table: m.class_table,
        queries,
        original_size: m.original_size.map(|[a, b]| (a, b)),
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes `scene` into `dir` (created if missing) as a manifest plus payloads.
pub fn save_scene(scene: &SceneDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = &scene.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut frames = Vec::new();
    for (i, f) in scene.frames.iter().enumerate() {
        let name = |s: &str| format!("frame_{i:04}_{s}.bin");
        write_file(&dir.join(name("rgb")), &encode_f32(&[h, w, 3], &to_f32(&f.rgb.data)))?;
        write_file(
            &dir.join(name("pts")),
            &encode_f32(&[h, w, 3], &to_f32(&f.pointmap.data)),
        )?;
        write_file(
            &dir.join(name("conf")),
            &encode_f32(&[h, w], &to_f32(&f.confidence.data)),
        )?;
        let mut layers = Vec::new();
        for (l, labels) in f.mask_layers.iter().enumerate() {
            let n = name(&format!("layer{l}"));
            write_file(&dir.join(&n), &encode_i32(&[h, w], labels))?;
            layers.push(n);
        }
        let rows: Vec<(i32, Vec<f64>)> = f
            .masks
            .iter()
            .map(|m| (m.label_id, m.embedding.clone()))
            .collect();
        write_file(
            &dir.join(name("emb")),
            &encode_embeddings(scene.embedding_dim, &rows),
        )?;
        frames.push(ManifestFrame {
            rgb: name("rgb"),
            pointmap: name("pts"),
            confidence: name("conf"),
            mask_layers: layers,
            embeddings: name("emb"),
            gt_pose: f.gt_pose.map(|p| pose_to_row_major(&p).to_vec()),
        });
    }
    let queries = match &scene.queries {
        None => None,
        Some(q) => {
            let rows: Vec<(i32, Vec<f64>)> = q.iter().map(|(k, v)| (*k, v.clone())).collect();
            write_file(
                &dir.join("queries.bin"),
                &encode_embeddings(scene.embedding_dim, &rows),
            )?;
            Some("queries.bin".to_string())
        }
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        width: w,
        height: h,
        intrinsics: [k.fx, k.fy, k.cx, k.cy],
        embedding_dim: scene.embedding_dim,
        original_size: scene.original_size.map(|(a, b)| [a, b]),
        class_table: scene.class_table.clone(),
        queries,
        frames,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    let mpath = dir.join(MANIFEST_NAME);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}
