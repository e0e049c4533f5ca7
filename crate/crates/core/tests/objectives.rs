use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semslam::image::Image;
use semslam::objectives::*;
use semslam::scale_supervision::{LiftedMask, ScaleSupervision};

fn random_image(w: usize, h: usize, c: usize, seed: u64, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(w, h, c);
    img.data.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
    img
}

fn assert_close(a: f64, n: f64, tol: f64, what: &str) {
    if a.abs().max(n.abs()) > 1e-6 {
        let rel = (a - n).abs() / a.abs().max(n.abs());
        assert!(rel < tol, "{what}: analytic {a} numeric {n}");
    }
}

fn random_supervision(w: usize, h: usize, seed: u64, levels: &[f64]) -> ScaleSupervision {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let masks = (0..n)
        .map(|i| {
            let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
            let (mw, mh) = (rng.random_range(1..=w), rng.random_range(1..=h));
            let mut pixels = vec![false; w * h];
            for v in y0..(y0 + mh).min(h) {
                for u in x0..(x0 + mw).min(w) {
                    pixels[v * w + u] = true;
                }
            }
            LiftedMask {
                mask_index: i,
                label_id: i as i32,
                scale3d: rng.random_range(0.1..2.0),
                pixels,
            }
        })
        .collect();
    ScaleSupervision::from_masks(masks, levels, w, h).unwrap()
}

/// Literal quadruple sum over levels and ordered pixel pairs.
fn naive_corr(fm: &Image, sup: &ScaleSupervision, samples: &[usize]) -> f64 {
    let s = sup.num_levels();
    let p = samples.len();
    let mut total = 0.0;
    for l in 0..s {
        for &p1 in samples {
            for &p2 in samples {
                let m = if sup.mask_correspondence(l, p1, p2) { 1.0 } else { 0.0 };
                total += (1.0 - 2.0 * m) * corr_f(fm.pixel(p1), fm.pixel(p2)).max(0.0);
            }
        }
    }
    total / (s * p * p) as f64
}

#[test]
fn rgb_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let r = random_image(14, 12, 3, seed, 0.0, 1.0);
        let t = random_image(14, 12, 3, seed + 50, 0.0, 1.0);
        let (_, g) = loss_rgb(&r, &t, 0.2).unwrap();
        let h = 1e-5;
        for i in (0..r.data.len()).step_by(7) {
            let mut p = r.clone();
            let mut m = r.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let n = (loss_rgb(&p, &t, 0.2).unwrap().0 - loss_rgb(&m, &t, 0.2).unwrap().0) / (2.0 * h);
            assert_close(g.data[i], n, 1e-3, "rgb");
        }
    }
}

#[test]
fn ssim_gradient_matches_finite_differences() {
    let r = random_image(16, 13, 2, 1, 0.0, 1.0);
    let t = random_image(16, 13, 2, 2, 0.0, 1.0);
    let (_, g) = ssim(&r, &t, true);
    let g = g.unwrap();
    let h = 1e-5;
    for i in 0..r.data.len() {
        let mut p = r.clone();
        let mut m = r.clone();
        p.data[i] += h;
        m.data[i] -= h;
        let n = (ssim(&p, &t, false).0 - ssim(&m, &t, false).0) / (2.0 * h);
        assert_close(g.data[i], n, 1e-4, "ssim");
    }
}

#[test]
fn corr_matches_naive_loop_and_gradient() {
    for seed in 0..30u64 {
        let (w, h) = (8, 8);
        let sup = random_supervision(w, h, seed, &[0.3, 0.8, 1.2, 1.7]);
        let fm = random_image(w, h, 4, seed + 7, -1.0, 1.0);
        let samples = sample_pixels(&(0..w * h).collect::<Vec<_>>(), 3 + (seed as usize % 14), seed);
        let (v, g) = loss_corr(&fm, &sup, &samples);
        assert!((v - naive_corr(&fm, &sup, &samples)).abs() < 1e-12);
        let eps = 1e-5;
        for &pix in &samples {
            for c in 0..4 {
                let i = pix * 4 + c;
                let mut p = fm.clone();
                let mut m = fm.clone();
                p.data[i] += eps;
                m.data[i] -= eps;
                let n = (loss_corr(&p, &sup, &samples).0 - loss_corr(&m, &sup, &samples).0) / (2.0 * eps);
                assert_close(g.data[i], n, 1e-3, "corr");
            }
        }
    }
}

#[test]
fn corr_uniform_single_mask_is_minus_one() {
    let mask = LiftedMask {
        mask_index: 0,
        label_id: 0,
        scale3d: 1.0,
        pixels: vec![true; 16],
    };
    let sup = ScaleSupervision::from_masks(vec![mask], &[0.5, 1.0, 1.5, 2.0], 4, 4).unwrap();
    let fm = Image::filled(4, 4, 3, 0.7);
    let samples: Vec<usize> = (0..16).collect();
    let (v, g) = loss_corr(&fm, &sup, &samples);
    assert!((v + 1.0).abs() < 1e-12);
    assert!(g.data.iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn corr_negative_similarities_give_zero() {
    let sup = random_supervision(4, 1, 3, &[0.5, 1.0]);
    let mut fm = Image::zeros(4, 1, 2);
    // four features pairwise at >= 90 degrees apart except with themselves
    fm.data.copy_from_slice(&[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
    let samples = [0, 1];
    let (v, g) = loss_corr(&fm, &sup, &samples);
    let diag = naive_corr(&fm, &sup, &samples);
    assert!((v - diag).abs() < 1e-15);
    assert!(g.data.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn ambiguous_pair_cancels() {
    // pixel 0 in part+whole, pixel 1 in whole only; positive at the coarse
    // level and negative at the fine level
    let part = LiftedMask {
        mask_index: 0,
        label_id: 0,
        scale3d: 0.2,
        pixels: vec![true, false],
    };
    let whole = LiftedMask {
        mask_index: 1,
        label_id: 1,
        scale3d: 1.0,
        pixels: vec![true, true],
    };
    let sup = ScaleSupervision::from_masks(vec![part, whole], &[0.1, 0.5], 2, 1).unwrap();
    assert_eq!(sup.pair_coefficient(0, 1), 0.0);
    let mut fm = Image::zeros(2, 1, 2);
    fm.data.copy_from_slice(&[1.0, 0.2, 0.9, 0.4]);
    let (_, g_pair) = loss_corr(&fm, &sup, &[0, 1]);
    // only the diagonal terms remain, and they carry no gradient
    assert!(g_pair.data.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn lang_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.random_range(1..6);
        let f: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let t: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let tr: Vec<&[f64]> = t.iter().map(|v| v.as_slice()).collect();
        let (_, g) = loss_lang(&f, &tr);
        let h = 1e-5;
        for i in 0..n {
            for e in 0..6 {
                let mut p = f.clone();
                let mut m = f.clone();
                p[i][e] += h;
                m[i][e] -= h;
                let num = (loss_lang(&p, &tr).0 - loss_lang(&m, &tr).0) / (2.0 * h);
                assert_close(g[i][e], num, 1e-4, "lang");
            }
        }
    }
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let k = 2 + case % 4;
        let fm = random_image(5, 4, 3, case as u64, -1.0, 1.0);
        let head: Vec<f64> = (0..k * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<i32> = (0..20).map(|_| rng.random_range(0..k as i32)).collect();
        let samples = sample_pixels(&(0..20).collect::<Vec<_>>(), 8, case as u64);
        let (_, gh, gf) = loss_ce_closed_set(&fm, &head, k, &labels, &samples).unwrap();
        let h = 1e-5;
        for i in 0..head.len() {
            let mut p = head.clone();
            let mut m = head.clone();
            p[i] += h;
            m[i] -= h;
            let n = (loss_ce_closed_set(&fm, &p, k, &labels, &samples).unwrap().0
                - loss_ce_closed_set(&fm, &m, k, &labels, &samples).unwrap().0)
                / (2.0 * h);
            assert_close(gh[i], n, 1e-4, "ce head");
        }
        for i in 0..fm.data.len() {
            let mut p = fm.clone();
            let mut m = fm.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let n = (loss_ce_closed_set(&p, &head, k, &labels, &samples).unwrap().0
                - loss_ce_closed_set(&m, &head, k, &labels, &samples).unwrap().0)
                / (2.0 * h);
            assert_close(gf.data[i], n, 1e-4, "ce feature");
        }
    }
}

#[test]
fn weights_scale_contributions_linearly() {
    let base = LossWeights::default();
    let r = loss_total(0.3, -0.2, 0.7, Some(1.5), &base).unwrap();
    for k in [0.0, 2.0, 3.5] {
        let w = LossWeights { corr: base.corr * k, ..base };
        let rk = loss_total(0.3, -0.2, 0.7, Some(1.5), &w).unwrap();
        assert!(((rk.total - r.total) - (k - 1.0) * base.corr * -0.2).abs() < 1e-15);
    }
    assert!((r.total - (0.3 + 0.05 * -0.2 + 0.05 * 0.7 + 0.05 * 1.5)).abs() < 1e-15);
}

#[test]
fn adam_single_step_descends() {
    let mut passed = 0;
    for seed in 0..50u64 {
        let r = random_image(12, 12, 3, seed, 0.05, 0.95);
        let t = random_image(12, 12, 3, seed + 1000, 0.05, 0.95);
        let (before, g) = loss_rgb(&r, &t, 0.2).unwrap();
        let mut opt = Adam::new(&[("img", r.data.len(), 1e-4)]);
        let mut p = r.clone();
        opt.step(&mut [&mut p.data], &[&g.data]).unwrap();
        let (after, _) = loss_rgb(&p, &t, 0.2).unwrap();
        if after <= before {
            passed += 1;
        }
    }
    assert!(passed >= 48, "{passed}");
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut opt = Adam::new(&[("a", 4, 0.01), ("b", 2, 0.1)]);
        let mut a = vec![0.5, -0.2, 0.1, 0.0];
        let mut b = vec![1.0, 2.0];
        for i in 0..10 {
            let ga: Vec<f64> = a.iter().map(|x| x * 2.0 + i as f64 * 0.1).collect();
            let gb: Vec<f64> = b.iter().map(|x| -x).collect();
            opt.step(&mut [&mut a, &mut b], &[&ga, &gb]).unwrap();
        }
        (a, b, opt.snapshot())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn corr_value_is_bounded(seed in 0u64..1_000_000, np in 2usize..12) {
        let sup = random_supervision(6, 6, seed, &[0.4, 1.0, 1.6]);
        let fm = random_image(6, 6, 3, seed ^ 0xabc, -1.0, 1.0);
        let samples = sample_pixels(&(0..36).collect::<Vec<_>>(), np, seed);
        let (v, _) = loss_corr(&fm, &sup, &samples);
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}
