//! Property tests for the crate's cross-cutting invariants.

use gale_core::dispatch::post_process_step;
use gale_core::econ::{cove, lcoe, value_factor, FarmSpec, StorageSpec};
use gale_core::metrics::power_curve_similarity;
use gale_core::nqf::brownian_walk;
use gale_core::series::{make_batches, SeriesFrame};
use proptest::prelude::*;

fn farm(capacity_mw: f64) -> FarmSpec {
    FarmSpec { capacity_mw, capex_usd: 1.0e6, opex_usd_per_yr: 5.0e4, fcr: 0.08 }
}

proptest! {
    #[test]
    fn settlement_respects_all_bounds(
        capacity_mw in 10.0..500.0f64,
        rating in 1.0..100.0f64,
        duration in 0.5..50.0f64,
        rte in 0.05..1.0f64,
        r in 0.0..=1.0f64,
        g_frac in 0.0..1.5f64,
        s_frac in 0.0..=1.0f64,
    ) {
        let farm = farm(capacity_mw);
        let storage = StorageSpec::new("prop", rating, duration, rte, 0.0, 0.0).unwrap();
        let cap = storage.capacity_mwh();
        let g = g_frac * capacity_mw;
        let s = s_frac * cap;
        let (r_prime, s_next) = post_process_step(r, g, s, &farm, &storage).unwrap();
        prop_assert!(s_next >= 0.0 && s_next <= cap);
        prop_assert!(r_prime >= 0.0);
        prop_assert!(r_prime <= r * capacity_mw + 1e-9);
        prop_assert!(r_prime <= g + s + 1e-9);
        prop_assert!(s_next - s <= rating + 1e-9);
    }

    #[test]
    fn split_then_concat_is_identity(
        len in 2usize..400,
        fraction in 0.01..0.99f64,
        seed in 0u64..1000,
    ) {
        let values: Vec<f64> = (0..len).map(|i| ((i as f64) + seed as f64).sin().abs()).collect();
        let frame = SeriesFrame::builder().generation(values).build().unwrap();
        let (a, b) = frame.split_train_test(fraction).unwrap();
        prop_assert_eq!(a.len() + b.len(), frame.len());
        prop_assert_eq!(a.concat(&b).unwrap(), frame);
    }

    #[test]
    fn batches_cover_each_window_exactly_once(
        len in 1usize..2000,
        seq_len in 1usize..200,
        batch_size in 1usize..16,
        seed in 0u64..100,
    ) {
        prop_assume!(seq_len <= len);
        let frame = SeriesFrame::builder().generation(vec![1.0; len]).build().unwrap();
        let batches = make_batches(&frame, seq_len, batch_size, seed, None).unwrap();
        let mut starts: Vec<usize> = batches.iter().flat_map(|b| b.starts.clone()).collect();
        starts.sort_unstable();
        let expected: Vec<usize> = (0..=(len - seq_len)).step_by(seq_len).collect();
        prop_assert_eq!(starts, expected);
        for b in &batches {
            prop_assert!(b.starts.len() <= batch_size);
        }
    }

    #[test]
    fn cost_metrics_scale_inversely_with_dispatch(
        scale in 0.1..10.0f64,
        base in 1.0..100.0f64,
    ) {
        let farm = farm(200.0);
        let storage = StorageSpec::new("prop", 5.0, 2.0, 0.9, 2.0e5, 1.0e4).unwrap();
        let dispatch: Vec<f64> = (0..24).map(|t| base + (t as f64)).collect();
        let scaled: Vec<f64> = dispatch.iter().map(|d| d * scale).collect();
        let prices: Vec<f64> = (0..24).map(|t| 20.0 + (t % 7) as f64).collect();

        let l0 = lcoe(&dispatch, &farm, &storage).unwrap();
        let l1 = lcoe(&scaled, &farm, &storage).unwrap();
        prop_assert!((l1 - l0 / scale).abs() <= 1e-9 * l0.max(1.0));

        let c0 = cove(&dispatch, &prices, &farm, &storage).unwrap();
        let c1 = cove(&scaled, &prices, &farm, &storage).unwrap();
        prop_assert!((c1 - c0 / scale).abs() <= 1e-9 * c0.max(1.0));
    }

    #[test]
    fn constant_dispatch_has_unit_value_factor(
        level in 0.1..100.0f64,
        len in 2usize..500,
        price_seed in 0u64..50,
    ) {
        let dispatch = vec![level; len];
        let prices: Vec<f64> = (0..len)
            .map(|t| 10.0 + ((t as f64) * 0.7 + price_seed as f64).sin().abs() * 40.0)
            .collect();
        let vf = value_factor(&dispatch, &prices).unwrap();
        prop_assert!((vf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_is_symmetric(seed_a in 0u64..30, seed_b in 0u64..30) {
        let points = |seed: u64| -> Vec<(f64, f64)> {
            (0..300)
                .map(|i| {
                    let x = ((i as f64) * 0.31 + seed as f64).sin() * 5.0 + 10.0;
                    let y = ((i as f64) * 0.17 + seed as f64).cos() * 0.5 + 0.5;
                    (x, y)
                })
                .collect()
        };
        let a = points(seed_a);
        let b = points(seed_b);
        let ab = power_curve_similarity(&a, &b, 12, 12).unwrap();
        let ba = power_curve_similarity(&b, &a, 12, 12).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn quantile_walk_stays_inside_open_unit(
        lambda in 0.0..0.2f64,
        gamma in 0.0..0.9f64,
        alpha0 in 0.001..0.999f64,
        seed in 0u64..200,
    ) {
        let walk = brownian_walk(500, lambda, gamma, seed, alpha0).unwrap();
        prop_assert_eq!(walk.len(), 500);
        prop_assert!((walk[0] - alpha0).abs() == 0.0);
        prop_assert!(walk.iter().all(|a| *a > 0.0 && *a < 1.0));
    }
}
