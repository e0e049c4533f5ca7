use proptest::prelude::*;
use semslam::dataset_io::MaskRecord;
use semslam::image::Image;
use semslam::scale_supervision::*;
use semslam::Intrinsics;

const W: usize = 16;
const H: usize = 16;

/// Direct statement of the rule: mask i is active at p iff p is in mask i and
/// no mask j containing p has s <= size_j < size_i.
fn oracle_active(masks: &[LiftedMask], s: f64, p: usize) -> Vec<bool> {
    (0..masks.len())
        .map(|i| {
            masks[i].pixels[p]
                && !(0..masks.len()).any(|j| masks[j].pixels[p] && s <= masks[j].scale3d && masks[j].scale3d < masks[i].scale3d)
        })
        .collect()
}

fn rect_mask(idx: usize, x0: usize, y0: usize, w: usize, h: usize, scale: f64) -> LiftedMask {
    let mut pixels = vec![false; W * H];
    for v in y0..(y0 + h).min(H) {
        for u in x0..(x0 + w).min(W) {
            pixels[v * W + u] = true;
        }
    }
    LiftedMask {
        mask_index: idx,
        label_id: idx as i32,
        scale3d: scale,
        pixels,
    }
}

fn mask_strategy() -> impl Strategy<Value = Vec<LiftedMask>> {
    prop::collection::vec((0usize..16, 0usize..16, 1usize..16, 1usize..16, 1u32..8), 1..=6).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (x, y, w, h, s))| rect_mask(i, x, y, w, h, f64::from(s) * 0.25))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn identity_matches_exhaustive_rule(masks in mask_strategy(), raw_levels in prop::collection::vec(0u32..10, 1..5)) {
        let mut levels: Vec<f64> = raw_levels.iter().map(|x| f64::from(*x) * 0.25 + 0.1).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let sup = ScaleSupervision::from_masks(masks, &levels, W, H).unwrap();
        for (l, &s) in levels.iter().enumerate() {
            for p in 0..W * H {
                let expected = oracle_active(&sup.masks, s, p);
                prop_assert_eq!(sup.identity_vector(l, p), expected);
            }
        }
        for l in 0..levels.len() {
            for p1 in (0..W * H).step_by(7) {
                for p2 in (0..W * H).step_by(5) {
                    let a = sup.identity_vector(l, p1);
                    let b = sup.identity_vector(l, p2);
                    let dot = a.iter().zip(&b).any(|(x, y)| *x && *y);
                    prop_assert_eq!(sup.mask_correspondence(l, p1, p2), dot);
                    prop_assert_eq!(sup.mask_correspondence(l, p1, p2), sup.mask_correspondence(l, p2, p1));
                }
            }
        }
    }

    #[test]
    fn largest_mask_activation_is_monotone(masks in mask_strategy()) {
        let levels: Vec<f64> = (1..=8).map(|k| f64::from(k) * 0.25).collect();
        let sup = ScaleSupervision::from_masks(masks, &levels, W, H).unwrap();
        for p in 0..W * H {
            let containing: Vec<usize> = (0..sup.masks.len()).filter(|&i| sup.masks[i].pixels[p]).collect();
            let Some(&largest) = containing.iter().max_by(|a, b| sup.masks[**a].scale3d.total_cmp(&sup.masks[**b].scale3d)) else {
                continue;
            };
            let mut was_active = false;
            for l in 0..levels.len() {
                let active = sup.identity_vector(l, p)[largest];
                prop_assert!(active || !was_active);
                was_active = active;
            }
        }
    }

    #[test]
    fn finest_level_picks_smallest_mask(masks in mask_strategy()) {
        let smallest = masks.iter().map(|m| m.scale3d).fold(f64::INFINITY, f64::min);
        let sup = ScaleSupervision::from_masks(masks, &[smallest], W, H).unwrap();
        for p in 0..W * H {
            let sizes: Vec<f64> = sup.masks.iter().filter(|m| m.pixels[p]).map(|m| m.scale3d).collect();
            let Some(min) = sizes.iter().copied().reduce(f64::min) else { continue };
            let v = sup.identity_vector(0, p);
            for (i, m) in sup.masks.iter().enumerate() {
                prop_assert_eq!(v[i], m.pixels[p] && m.scale3d == min);
            }
        }
    }

    #[test]
    fn levels_are_strictly_ascending(scales in prop::collection::vec(0.001f64..5.0, 1..40), s in 1usize..8) {
        let levels = compute_levels(&scales, s).unwrap();
        prop_assert_eq!(levels.len(), s);
        prop_assert!(levels.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn nested_example_fine_and_coarse() {
    let part = rect_mask(0, 2, 2, 3, 3, 2.0);
    let whole = rect_mask(1, 0, 0, 10, 10, 10.0);
    let sup = ScaleSupervision::from_masks(vec![part, whole], &[1.0, 5.0], W, H).unwrap();
    let labels = |l: usize, p: usize| -> Vec<i32> {
        sup.identity_vector(l, p)
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| sup.masks[i].label_id)
            .collect()
    };
    let in_part = 3 * W + 3;
    let whole_only = 8 * W + 8;
    assert_eq!(labels(0, in_part), vec![0]);
    let mut coarse = labels(1, in_part);
    coarse.sort();
    assert_eq!(coarse, vec![0, 1]);
    assert_eq!(labels(0, whole_only), vec![1]);
    assert_eq!(labels(1, whole_only), vec![1]);
    assert!(!sup.mask_correspondence(0, in_part, whole_only));
    assert!(sup.mask_correspondence(1, in_part, whole_only));
    for p in [in_part, whole_only, 0] {
        for l in 0..2 {
            assert!(sup.mask_correspondence(l, p, p));
        }
    }
}

#[test]
fn planar_rectangle_scale_close_to_diagonal() {
    let (w, h) = (64, 64);
    let k = Intrinsics::new(60.0, 60.0, 31.5, 31.5, w, h);
    let (rw, rh, z) = (0.6, 0.4, 2.0);
    let mut pm = Image::zeros(w, h, 3);
    let mut pixels = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let x = k.backproject(u as f64, v as f64, z);
            pm.pixel_mut(v * w + u).copy_from_slice(x.as_slice());
            pixels[v * w + u] = x.x.abs() <= rw / 2.0 && x.y.abs() <= rh / 2.0;
        }
    }
    let m = MaskRecord {
        label_id: 1,
        layer: 0,
        pixels,
        embedding: vec![],
    };
    let l = lift_mask_scale(&m, 0, &pm, &Image::filled(w, h, 1, 1.0)).unwrap();
    let truth = (rw * rw + rh * rh as f64).sqrt();
    assert!((l.scale3d - truth).abs() < 0.1 * truth, "{} vs {truth}", l.scale3d);
}

#[test]
fn label_dump_roundtrips() {
    let sup = ScaleSupervision::from_masks(vec![rect_mask(0, 0, 0, 4, 4, 1.0)], &[0.5, 2.0], W, H).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("levels.bin");
    sup.dump_labels(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let (dims, data) = semslam::dataset_io::binary::decode_i32(&bytes, "levels").unwrap();
    assert_eq!(dims, vec![2, H, W]);
    assert_eq!(data[0], 0);
    assert_eq!(data[W * H - 1], -1);
}
