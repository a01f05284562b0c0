mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use spottunet_core::metrics::{dice_score, extract_surface, surface_dice, wilcoxon_one_sided, BinaryMask};

fn mask(v: &[u8], h: usize, w: usize, spacing: (f64, f64)) -> BinaryMask {
    BinaryMask::new(v.to_vec(), vec![h, w], vec![spacing.0, spacing.1]).unwrap()
}

#[test]
fn surface_extraction_matches_neighbour_scan() {
    let mut r = rng(1);
    for _ in 0..300 {
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let v = random_mask(&mut r, h, w);
        let got: Vec<(usize, usize)> = extract_surface(&mask(&v, h, w, (1.0, 1.0))).iter().map(|c| (c[0], c[1])).collect();
        assert_eq!(got, brute_surface(&v, h, w));
    }
}

#[test]
fn surface_dice_matches_all_pairs_oracle_on_8x8() {
    let mut r = rng(2);
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
        let a = random_mask(&mut r, h, w);
        let b = random_mask(&mut r, h, w);
        let tol = [0.5, 1.0, 1.5, 2.0, 3.0][r.random_range(0..5)];
        let got = surface_dice(&mask(&a, h, w, (1.0, 1.0)), &mask(&b, h, w, (1.0, 1.0)), tol).unwrap().score;
        assert_eq!(got, brute_surface_dice(&a, &b, h, w, (1.0, 1.0), tol));
    }
}

#[test]
fn anisotropic_spacing_matches_oracle() {
    let mut r = rng(3);
    for _ in 0..300 {
        let a = random_mask(&mut r, 7, 7);
        let b = random_mask(&mut r, 7, 7);
        let sp = (0.7, 1.3);
        let got = surface_dice(&mask(&a, 7, 7, sp), &mask(&b, 7, 7, sp), 1.6).unwrap().score;
        assert_eq!(got, brute_surface_dice(&a, &b, 7, 7, sp, 1.6));
    }
}

#[test]
fn wilcoxon_matches_enumeration_for_small_n() {
    let mut r = rng(4);
    for n in 1..=10 {
        for _ in 0..20 {
            let (x, y) = random_pairs(&mut r, n);
            let (p, _) = enumerate_wilcoxon(&x, &y);
            let got = wilcoxon_one_sided(&x, &y).unwrap();
            assert!((got - p).abs() < 1e-12, "n={n} {x:?} {y:?}: {got} vs {p}");
        }
    }
}

#[test]
fn wilcoxon_eight_untied_pairs() {
    let x = [0.91, 0.85, 0.77, 0.93, 0.66, 0.81, 0.72, 0.95];
    let y = [0.80, 0.87, 0.70, 0.79, 0.69, 0.62, 0.71, 0.90];
    let (p, _) = enumerate_wilcoxon(&x, &y);
    assert!((wilcoxon_one_sided(&x, &y).unwrap() - p).abs() < 1e-12);
}

fn mask_strategy(max: usize) -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0u8..=1, h * w),
            prop::collection::vec(0u8..=1, h * w),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn brute_force_equivalence_up_to_6x6((h, w, a, b) in mask_strategy(6), tol in 0.5f64..4.0) {
        let got = surface_dice(&mask(&a, h, w, (1.0, 1.0)), &mask(&b, h, w, (1.0, 1.0)), tol).unwrap().score;
        prop_assert_eq!(got, brute_surface_dice(&a, &b, h, w, (1.0, 1.0), tol));
    }
}

proptest! {
    #[test]
    fn surface_dice_is_symmetric_and_bounded((h, w, a, b) in mask_strategy(8), tol in 0.5f64..3.0) {
        let (ma, mb) = (mask(&a, h, w, (1.0, 1.0)), mask(&b, h, w, (1.0, 1.0)));
        let ab = surface_dice(&ma, &mb, tol).unwrap().score;
        prop_assert_eq!(ab, surface_dice(&mb, &ma, tol).unwrap().score);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice_score(&ma, &mb).unwrap(), dice_score(&mb, &ma).unwrap());
    }

    #[test]
    fn surface_dice_grows_with_tolerance((h, w, a, b) in mask_strategy(8), t0 in 0.1f64..3.0, dt in 0.0f64..3.0) {
        let (ma, mb) = (mask(&a, h, w, (1.0, 1.0)), mask(&b, h, w, (1.0, 1.0)));
        prop_assert!(surface_dice(&ma, &mb, t0).unwrap().score <= surface_dice(&ma, &mb, t0 + dt).unwrap().score);
    }

    #[test]
    fn doubling_spacing_and_tolerance_is_neutral((h, w, a, b) in mask_strategy(8), sy in 0.5f64..2.0, sx in 0.5f64..2.0, tol in 0.5f64..3.0) {
        let one = surface_dice(&mask(&a, h, w, (sy, sx)), &mask(&b, h, w, (sy, sx)), tol).unwrap().score;
        let two = surface_dice(&mask(&a, h, w, (2.0 * sy, 2.0 * sx)), &mask(&b, h, w, (2.0 * sy, 2.0 * sx)), 2.0 * tol).unwrap().score;
        prop_assert_eq!(one, two);
    }

    #[test]
    fn wilcoxon_p_is_a_probability_and_antisymmetric(seed in any::<u64>(), n in 1usize..=10) {
        let mut r = rng(seed);
        let (x, y) = random_pairs(&mut r, n);
        let up = wilcoxon_one_sided(&x, &y).unwrap();
        let down = wilcoxon_one_sided(&y, &x).unwrap();
        prop_assert!(up > 0.0 && up <= 1.0);
        let (_, point) = enumerate_wilcoxon(&x, &y);
        prop_assert!((up + down - 1.0 - point).abs() < 1e-12);
    }
}
