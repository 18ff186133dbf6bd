use deeplm::landmark::auroc_global;
use deeplm::metrics::auroc;
use deeplm::saliency::{extract_salient_window, smoe_scale};
use proptest::prelude::*;

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(0u8..2, n).prop_filter("both classes", |l| l.contains(&0) && l.contains(&1)),
        )
    })
}

proptest! {
    #[test]
    fn auroc_is_rank_based((s, l) in labelled(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = auroc(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let shifted: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        prop_assert!((auroc(&shifted, &l).unwrap() - base).abs() < 1e-12);
        let cubed: Vec<f64> = s.iter().map(|x| x.powi(3)).collect();
        prop_assert!((auroc(&cubed, &l).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn flipping_scores_complements_auroc((s, l) in labelled()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn global_auroc_ignores_landmark_order(
        a in prop::collection::vec(0.0f64..1.0, 1..8),
        r in prop::collection::vec(1usize..300, 8),
    ) {
        let per: Vec<Option<f64>> = a.iter().map(|&x| Some(x)).collect();
        let g = auroc_global(&per, &r[..a.len()]).unwrap();
        let rev_per: Vec<Option<f64>> = per.iter().rev().copied().collect();
        let rev_r: Vec<usize> = r[..a.len()].iter().rev().copied().collect();
        prop_assert!((auroc_global(&rev_per, &rev_r).unwrap() - g).abs() < 1e-12);
    }

    #[test]
    fn smoe_is_non_negative_and_sized(depth in 2usize..6, len in 1usize..10, seed in 0u64..1000) {
        let map: Vec<f64> = (0..depth * len).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 10.0).collect();
        let out = smoe_scale(&map, depth).unwrap();
        prop_assert_eq!(out.len(), len);
        prop_assert!(out.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn salient_window_fits_inside_the_map(map in prop::collection::vec(0.0f64..1.0, 60..200), hours in 1.0f64..8.0) {
        let w = extract_salient_window(&map, hours, 9.0).unwrap();
        prop_assert!(w.start + w.len <= map.len());
        prop_assert!(w.end_hours > w.start_hours);
        let best: f64 = map[w.start..w.start + w.len].iter().sum();
        for s in 0..=map.len() - w.len {
            prop_assert!(map[s..s + w.len].iter().sum::<f64>() <= best + 1e-9);
        }
    }
}
