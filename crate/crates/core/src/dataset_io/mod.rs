//! On-disk formats and in-memory containers for scenes, checkpoints and
//! metric tables.

pub mod binary;
pub mod checkpoint;
pub mod metrics_csv;
pub mod ppm;
pub mod scene;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, BankPayload, Checkpoint, GaussianPayload, MatrixPayload,
    OptimizerGroupSnapshot, OptimizerSnapshot, TrajectoryEntry, FLAG_KEYFRAME, FLAG_MAPPING, FLAG_SKIPPED,
};
pub use metrics_csv::{format_sig6, metrics_to_csv, write_metrics_csv, MetricRow, MetricValue};
pub use ppm::{encode_ppm, feature_pca_image, write_ppm};
pub use scene::{load_scene, save_scene, FrameRecord, MaskRecord, SceneDataset};
