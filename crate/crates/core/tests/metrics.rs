use std::collections::{BTreeMap, HashSet};

use metamorph_core::imaging::{self, Image, LabelMap};
use proptest::prelude::*;

/// IoU by explicit pixel sets, one class at a time.
fn brute_iou(pred: &[u16], truth: &[u16]) -> (BTreeMap<u16, f64>, f64) {
    let classes: HashSet<u16> = pred.iter().chain(truth).copied().collect();
    let mut per = BTreeMap::new();
    for c in classes {
        let p: HashSet<usize> = (0..pred.len()).filter(|&i| pred[i] == c).collect();
        let t: HashSet<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        let inter = p.intersection(&t).count();
        let union = p.union(&t).count();
        per.insert(c, inter as f64 / union as f64);
    }
    let mean = per.values().sum::<f64>() / per.len() as f64;
    (per, mean)
}

fn naive_mse(a: &Image, b: &Image) -> f64 {
    let mut total = 0.0;
    for r in 0..a.height() {
        for c in 0..a.width() {
            for k in 0..a.channels() {
                let d = a.pixel(r, c)[k] as f64 - b.pixel(r, c)[k] as f64;
                total += d * d;
            }
        }
    }
    total / (a.height() * a.width() * a.channels()) as f64
}

fn naive_psnr(a: &Image, b: &Image) -> f64 {
    let m = naive_mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / m).log10()
    }
}

fn label_pair(max_side: usize, classes: u16) -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1..=max_side, 1..=max_side).prop_flat_map(move |(h, w)| {
        (
            prop::collection::vec(0..classes, h * w),
            prop::collection::vec(0..classes, h * w),
        )
            .prop_map(move |(p, t)| (LabelMap::new(h, w, p).unwrap(), LabelMap::new(h, w, t).unwrap()))
    })
}

fn image_pair(max_side: usize) -> impl Strategy<Value = (Image, Image)> {
    (1..=max_side, 1..=max_side, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
        (
            prop::collection::vec(any::<u8>(), h * w * c),
            prop::collection::vec(any::<u8>(), h * w * c),
        )
            .prop_map(move |(a, b)| (Image::new(h, w, c, a).unwrap(), Image::new(h, w, c, b).unwrap()))
    })
}

fn close(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn iou_matches_set_counting((pred, truth) in label_pair(8, 4)) {
        let report = imaging::iou(&pred, &truth).unwrap();
        let (per, mean) = brute_iou(pred.labels(), truth.labels());
        prop_assert_eq!(&report.per_class, &per);
        prop_assert_eq!(report.mean_iou, mean);
    }

    #[test]
    fn iou_bounds_and_reflexivity((pred, truth) in label_pair(16, 6)) {
        let r = imaging::iou(&pred, &truth).unwrap();
        prop_assert!(r.per_class.values().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((0.0..=1.0).contains(&r.mean_iou));
        prop_assert_eq!(imaging::iou(&truth, &truth).unwrap().mean_iou, 1.0);
    }

    #[test]
    fn mse_and_psnr_match_naive((a, b) in image_pair(16)) {
        prop_assert!(close(imaging::mse(&a, &b).unwrap(), naive_mse(&a, &b)));
        prop_assert!(close(imaging::psnr(&a, &b).unwrap(), naive_psnr(&a, &b)));
    }

    #[test]
    fn psnr_symmetric_and_non_negative((a, b) in image_pair(12)) {
        let ab = imaging::psnr(&a, &b).unwrap();
        prop_assert_eq!(ab, imaging::psnr(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn psnr_decreases_with_mse(m1 in 0.001f64..65025.0, m2 in 0.001f64..65025.0) {
        prop_assume!(m1 != m2);
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(imaging::psnr_from_mse(lo) > imaging::psnr_from_mse(hi));
    }
}

#[test]
fn set_miou_is_mean_of_image_means() {
    let a = LabelMap::new(1, 2, vec![0, 1]).unwrap();
    let b = LabelMap::new(1, 2, vec![0, 0]).unwrap();
    let c = LabelMap::new(1, 1, vec![2]).unwrap();
    let per_image = [imaging::iou(&a, &b).unwrap().mean_iou, 1.0];
    let set = imaging::mean_iou_over_set([(&a, &b), (&c, &c)]).unwrap();
    assert_eq!(set, (per_image[0] + per_image[1]) / 2.0);
}
