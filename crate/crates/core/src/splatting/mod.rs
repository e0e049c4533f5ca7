//! Gaussian map storage and a differentiable CPU rasterizer for color and
//! semantic features.

pub mod backward;
pub mod gaussian;
pub mod project;
pub mod render;

pub use backward::render_backward;
pub use gaussian::{
    init_from_pointmap, logit, quat_matrix_backward, quat_to_matrix, sigmoid, Gaussian, GaussianMap, GradientBuffer,
};
pub use project::{project_all, project_gaussian, Projected, COV2D_BLUR, NEAR_PLANE};
pub use render::{brute_force_render, render, ForwardState, RenderOutput, RenderSettings};

/// Opacity below which [`prune_transparent`] drops a Gaussian.
pub const PRUNE_OPACITY: f64 = 0.005;

/// Removes Gaussians whose opacity fell below `threshold`. Returns the keep mask
/// so callers can compact parallel state (optimizer moments).
pub fn prune_transparent(map: &mut GaussianMap, threshold: f64) -> Vec<bool> {
    let keep: Vec<bool> = map.opacity_logits.iter().map(|&a| sigmoid(a) >= threshold).collect();
    map.retain(&keep);
    keep
}
