mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segloss::edt::edt;
use segloss::losses::hausdorff_reciprocal;
use segloss::metrics::{evaluate_case, extract_surface};

fn masks(seed: u64, max_side: usize) -> (segloss::volume::BinaryMask, segloss::volume::BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = common::random_geometry(&mut rng, max_side);
    (
        common::random_mask(&mut rng, g),
        common::random_mask(&mut rng, g),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edt_matches_brute_force(seed in any::<u64>()) {
        let (m, _) = masks(seed, 10);
        for (a, b) in edt(&m).data().iter().zip(common::brute_edt(&m)) {
            prop_assert!(a == &b || (a - b).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn surface_matches_brute_force(seed in any::<u64>()) {
        let (m, _) = masks(seed, 10);
        let got: Vec<[usize; 3]> = extract_surface(&m).coords().collect();
        prop_assert_eq!(got, common::brute_surface(&m));
    }

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>(), tau in 0.25f64..5.0) {
        let (p, q) = masks(seed, 9);
        let r = evaluate_case("c", &p, &q, tau).unwrap();
        prop_assert_eq!(r.dice, common::oracle_dice(&p, &q));
        prop_assert_eq!(r.nsd, common::oracle_nsd(&p, &q, tau));
        let msd = common::oracle_msd(&p, &q);
        prop_assert!(r.msd_mm == msd || (r.msd_mm - msd).abs() <= 1e-9);
        // symmetric in its arguments
        let s = evaluate_case("c", &q, &p, tau).unwrap();
        prop_assert_eq!((r.dice, r.nsd), (s.dice, s.nsd));
        prop_assert!(r.msd_mm == s.msd_mm || (r.msd_mm - s.msd_mm).abs() <= 1e-12);
    }

    #[test]
    fn hausdorff_reciprocal_matches_brute_force(seed in any::<u64>()) {
        let (p, q) = masks(seed, 8);
        let (sp, sq) = (common::brute_surface(&p), common::brute_surface(&q));
        let spacing = p.geometry().spacing();
        let expected = match (sp.is_empty(), sq.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let directed = |a: &[[usize; 3]], b: &[[usize; 3]]| {
                    a.iter()
                        .map(|&x| b.iter().map(|&y| common::distance_mm(x, y, spacing)).fold(f64::INFINITY, f64::min))
                        .fold(0.0, f64::max)
                };
                1.0 / (1.0 + directed(&sp, &sq).max(directed(&sq, &sp)))
            }
        };
        let got = hausdorff_reciprocal(&p, &q).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12, "{} vs {}", got, expected);
    }
}
