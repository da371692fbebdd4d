use metamorph_core::stats::{cohens_d, wilcoxon_signed_rank, PValueMode, PairedSamples, WilcoxonMode};
use proptest::prelude::*;

/// Enumerates all 2^n sign assignments of the ranks.
fn brute_exact_p(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let less = nz.iter().filter(|d| d.abs() < nz[i].abs()).count();
        let equal = nz.iter().filter(|d| d.abs() == nz[i].abs()).count();
        ranks[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    let w: f64 = (0..n).filter(|&i| nz[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            le += 1;
        }
        if s >= w - 1e-9 {
            ge += 1;
        }
    }
    let p = (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0);
    (w, p)
}

fn small_diffs() -> impl Strategy<Value = Vec<f64>> {
    // coarse grid so ties and zeros are common
    prop::collection::vec((-6i32..=6).prop_map(|v| v as f64 * 0.25), 1..=10)
        .prop_filter("needs a non-zero difference", |d| d.iter().any(|v| *v != 0.0))
}

fn pair(diffs: &[f64]) -> PairedSamples {
    let b: Vec<f64> = (0..diffs.len()).map(|i| 0.5 + i as f64 * 0.01).collect();
    let a: Vec<f64> = diffs.iter().zip(&b).map(|(d, y)| y + d).collect();
    PairedSamples::new(a, b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn exact_p_matches_enumeration(diffs in small_diffs()) {
        let s = PairedSamples::new(diffs.clone(), vec![0.0; diffs.len()]).unwrap();
        let r = wilcoxon_signed_rank(&s, WilcoxonMode::Exact).unwrap();
        let (w, p) = brute_exact_p(&diffs);
        prop_assert_eq!(r.mode, PValueMode::Exact);
        prop_assert_eq!(r.statistic, w);
        prop_assert!((r.p_value - p).abs() < 1e-12, "{} vs {}", r.p_value, p);
    }

    #[test]
    fn swapping_reflects_statistic(diffs in small_diffs()) {
        let s = PairedSamples::new(diffs.clone(), vec![0.0; diffs.len()]).unwrap();
        for mode in [WilcoxonMode::Exact, WilcoxonMode::NormalApproximation] {
            let r = wilcoxon_signed_rank(&s, mode).unwrap();
            let q = wilcoxon_signed_rank(&s.swapped(), mode).unwrap();
            let n = r.n_effective as f64;
            prop_assert_eq!(q.statistic, n * (n + 1.0) / 2.0 - r.statistic);
            prop_assert!((q.p_value - r.p_value).abs() < 1e-12);
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }
    }

    #[test]
    fn cohens_d_sign_antisymmetry_and_scale(
        a in prop::collection::vec(-100.0f64..100.0, 2..30),
        b in prop::collection::vec(-100.0f64..100.0, 2..30),
        k in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let Ok(r) = cohens_d(&a, &b) else { return Ok(()) };
        let rev = cohens_d(&b, &a).unwrap();
        prop_assert!((r.d + rev.d).abs() <= 1e-9 * r.d.abs().max(1.0));
        let diff = r.mean_a - r.mean_b;
        if diff.abs() > 1e-9 {
            prop_assert_eq!(r.d > 0.0, diff > 0.0);
        }
        let t = |v: &[f64]| v.iter().map(|x| k * x + shift).collect::<Vec<_>>();
        let scaled = cohens_d(&t(&a), &t(&b)).unwrap();
        prop_assert!((scaled.d - r.d).abs() <= 1e-7 * r.d.abs().max(1.0));
    }
}

#[test]
fn auto_switches_above_the_exact_limit() {
    let small: Vec<f64> = (1..=10).map(|i| i as f64 * 0.01).collect();
    assert_eq!(wilcoxon_signed_rank(&pair(&small), WilcoxonMode::Auto).unwrap().mode, PValueMode::Exact);
    let big: Vec<f64> = (1..=40).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 } * i as f64 * 0.01).collect();
    let r = wilcoxon_signed_rank(&pair(&big), WilcoxonMode::Auto).unwrap();
    assert_eq!(r.mode, PValueMode::NormalApproximation);
    assert!(wilcoxon_signed_rank(&pair(&big), WilcoxonMode::Exact).is_err());
}

#[test]
fn all_positive_differences() {
    // n = 6, W = 21, one extreme arrangement per tail: p = 2/64
    let d = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let r = wilcoxon_signed_rank(&pair(&d), WilcoxonMode::Exact).unwrap();
    assert_eq!(r.statistic, 21.0);
    assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);
}
