//! Invariants checked over randomized inputs.

use proprio_core::benchmark::{reflect, render_dynamics, DynamicsKind, DynamicsSpec};
use proprio_core::masking::motion_mask;
use proprio_core::optim::{clip_global_norm, l2_norm};
use proprio_core::refinement::{kl_loss, RefineParams};
use proprio_core::scoring::{aggregate, ScoreConfig, TimestepEstimate};
use proprio_core::search::argmin;
use proprio_core::{LatentDims, Tensor};
use proptest::prelude::*;

fn estimates(stats: &[(f64, f64)]) -> Vec<TimestepEstimate> {
    stats
        .iter()
        .map(|&(mean, variance)| TimestepEstimate {
            t: 0.5,
            mean,
            variance,
            weight: 0.0,
            normalized_weight: 0.0,
        })
        .collect()
}

fn stats() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..10.0f64, 0.0..5.0f64), 1..8)
}

proptest! {
    #[test]
    fn normalized_weights_sum_to_one(s in stats(), weighting in any::<bool>()) {
        let cfg = ScoreConfig { variance_weighting: weighting, ..ScoreConfig::default() };
        let (out, _) = aggregate(&estimates(&s), &cfg).unwrap();
        let total: f64 = out.iter().map(|e| e.normalized_weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn score_lies_within_mean_range(s in stats()) {
        let (_, score) = aggregate(&estimates(&s), &ScoreConfig::default()).unwrap();
        let lo = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(score >= lo - 1e-9 && score <= hi + 1e-9);
    }

    #[test]
    fn raising_one_variance_lowers_its_weight(s in stats(), k in 0usize..8, bump in 0.01..3.0f64) {
        prop_assume!(s.len() >= 2);
        let k = k % s.len();
        let cfg = ScoreConfig::default();
        let (before, _) = aggregate(&estimates(&s), &cfg).unwrap();
        let mut s2 = s.clone();
        s2[k].1 += bump;
        let (after, _) = aggregate(&estimates(&s2), &cfg).unwrap();
        prop_assert!(after[k].normalized_weight < before[k].normalized_weight);
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-3.0..3.0f64, 1..5), seed in any::<u64>()) {
        let c = mu.len();
        let ls: Vec<f64> = (0..c).map(|i| ((seed >> (i * 8)) as u8 as f64 / 64.0) - 2.0).collect();
        let p = RefineParams { mu, log_sigma: ls, base_noise: Tensor::zeros(&[1, 1, 1, c]) };
        prop_assert!(kl_loss(&p) >= 0.0);
    }

    #[test]
    fn clipping_bounds_the_norm(g in prop::collection::vec(-1.0..1.0f64, 1..16), max in 1e-6..2.0f64) {
        let mut g = g;
        let before = l2_norm(&g);
        let reported = clip_global_norm(&mut g, max);
        prop_assert_eq!(reported, before);
        prop_assert!(l2_norm(&g) <= max + 1e-12);
    }

    #[test]
    fn argmin_is_a_minimum(v in prop::collection::vec(-5.0..5.0f64, 1..20)) {
        let i = argmin(&v).unwrap();
        prop_assert!(v.iter().all(|&x| v[i] <= x));
        prop_assert!(v[..i].iter().all(|&x| x > v[i]));
    }

    #[test]
    fn mask_entries_in_unit_interval(data in prop::collection::vec(-4.0..4.0f64, 3 * 2 * 2 * 2)) {
        let x = Tensor::from_vec(&[3, 2, 2, 2], data).unwrap();
        let m = motion_mask(&x).unwrap();
        prop_assert!(m.values().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(m.values().shape(), &[3, 2, 2]);
    }

    #[test]
    fn reflect_stays_on_grid(p in -100.0..100.0f64, len in 1.0..30.0f64) {
        let r = reflect(p, len);
        prop_assert!((0.0..=len).contains(&r));
    }

    #[test]
    fn rendered_blob_is_finite_and_nonnegative(py in 0.0..15.0f64, px in 0.0..15.0f64, vy in -2.0..2.0f64, vx in -2.0..2.0f64) {
        let spec = DynamicsSpec {
            kind: DynamicsKind::BouncingBlob,
            blob_sigma: 1.5,
            initial_position: (py, px),
            velocity: (vy, vx),
            dims: LatentDims::new(4, 16, 16, 2),
        };
        let x = render_dynamics(&spec).unwrap();
        prop_assert!(x.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
