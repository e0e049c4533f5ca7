//! SLAM orchestration, evaluation metrics and report plots.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod slam;

pub use config::{Decoder, PipelineConfig, ScaleMode};
pub use eval::{
    eval_render, eval_segmentation, eval_segmentation_closed, evaluate, loss_rows, scene_queries, EvalReport, LOSS_COLUMNS,
};
pub use metrics::{
    align_rigid, classify, eval_ate, psnr, render_metrics, segmentation_metrics, Confusion, RenderMetrics,
    SegmentationMetrics, PSNR_CAP,
};
pub use plot::{bar_chart_svg, line_chart_svg, plot_report, read_numeric_csv, Series};
pub use slam::{
    decode_language, decode_language_backward, iteration_split, layer_labels, run_slam, track_sequence, ClassHead, LossRow,
    Model, SlamOutput, TrajectoryEstimate,
};
