//! Training objectives, pixel sampling and the optimizer.

pub mod adam;
pub mod losses;
pub mod ssim;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamGroup, LearningRates, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use losses::{corr_f, loss_ce_closed_set, loss_corr, loss_lang, loss_rgb, loss_total, LossReport, LossWeights, NORM_FLOOR};
pub use ssim::ssim;

/// Draws up to `count` distinct entries of `candidates`, in draw order.
pub fn sample_pixels(candidates: &[usize], count: usize, seed: u64) -> Vec<usize> {
    if candidates.len() <= count {
        return candidates.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_unique_and_deterministic() {
        let c: Vec<usize> = (0..500).map(|i| i * 3).collect();
        let a = sample_pixels(&c, 100, 4);
        let b = sample_pixels(&c, 100, 4);
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 100);
        assert_eq!(sample_pixels(&c[..10], 100, 4).len(), 10);
    }
}
