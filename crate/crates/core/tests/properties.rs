use cgabm_core::gedmd::psd_sigma;
use cgabm_core::km::{reduce_and_scale, restore_conserved, Measurement};
use cgabm_core::mjp::propensity;
use cgabm_core::prey::{wrap, PpmParams};
use cgabm_core::sde::{ensemble_moments, Path, WelfordGrid};
use cgabm_core::{linalg, JumpModel, PopulationState, TransitionRule};
use proptest::prelude::*;

fn rule_strategy() -> impl Strategy<Value = TransitionRule> {
    (prop::collection::vec(0u32..3, 3), prop::collection::vec(0u32..3, 3), 0.01f64..5.0)
        .prop_filter_map("net change must be nonzero", |(r, p, k)| TransitionRule::new(r, p, k).ok())
}

proptest! {
    #[test]
    fn propensity_vanishes_exactly_without_reactants(
        rule in rule_strategy(),
        counts in prop::collection::vec(0u32..6, 3),
    ) {
        let lacking = rule.reactants().iter().zip(&counts).any(|(a, x)| x < a);
        let model = JumpModel::new(3, vec![rule], 10).unwrap();
        let alpha = propensity(&model, 0, &PopulationState::new(counts)).unwrap();
        prop_assert!(alpha >= 0.0);
        prop_assert_eq!(alpha == 0.0, lacking);
    }

    #[test]
    fn psd_sigma_reproduces_psd_matrices(entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = (0..3).map(|k| entries[i * 3 + k] * entries[j * 3 + k]).sum();
            }
        }
        let s = psd_sigma(&a, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| s.sigma[i * 3 + k] * s.sigma[j * 3 + k]).sum();
                prop_assert!((v - a[i * 3 + j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn psd_sigma_output_is_psd(entries in prop::collection::vec(-2.0f64..2.0, 6)) {
        let a = [entries[0], entries[1], entries[2], entries[1], entries[3], entries[4], entries[2], entries[4], entries[5]];
        let s = psd_sigma(&a, 3);
        let mut sst = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                sst[i * 3 + j] = (0..3).map(|k| s.sigma[i * 3 + k] * s.sigma[j * 3 + k]).sum();
            }
        }
        let (eig, _) = linalg::symmetric_eigen(&sst, 3);
        prop_assert!(eig.iter().all(|&e| e >= -1e-12));
        prop_assert!(s.clipped_mass >= 0.0);
    }

    #[test]
    fn reduction_is_invertible_on_conserved_data(
        x in prop::collection::vec(0u32..20, 3),
        drift in prop::collection::vec(-5.0f64..5.0, 2),
        g in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let total: u32 = x.iter().sum();
        prop_assume!(total > 0);
        // Any a = P S P with P the projection onto zero-sum vectors is conserved.
        let s = [g[0] * g[0] + 0.1, g[1], g[2], g[1], g[3] * g[3] + 0.1, 0.0, g[2], 0.0, 0.2];
        let p = |i: usize, j: usize| if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = (0..3).flat_map(|k| (0..3).map(move |l| (k, l))).map(|(k, l)| p(i, k) * s[k * 3 + l] * p(l, j)).sum();
            }
        }
        let m = Measurement {
            point: x.iter().map(|&v| v as f64).collect(),
            drift: vec![drift[0], drift[1], -drift[0] - drift[1]],
            diffusion: a,
            sample_count: 1,
            lag: 1.0,
        };
        let n = total as f64;
        let reduced = reduce_and_scale(std::slice::from_ref(&m), n, &[3], true).unwrap();
        let restored = restore_conserved(&reduced[0], 1.0, &[3]).unwrap();
        for (r, o) in restored.point.iter().zip(&m.point) {
            prop_assert!((r * n - o).abs() < 1e-9);
        }
        for (r, o) in restored.drift.iter().zip(&m.drift) {
            prop_assert!((r * n - o).abs() < 1e-9);
        }
        for (r, o) in restored.diffusion.iter().zip(&m.diffusion) {
            prop_assert!((r * n * n - o).abs() < 1e-9);
        }
    }

    #[test]
    fn wrapping_is_idempotent(x in -1e4f64..1e4) {
        let size = PpmParams::table2().width;
        let w = wrap(x, size);
        prop_assert!((0.0..size).contains(&w));
        prop_assert_eq!(wrap(w, size), w);
    }

    #[test]
    fn welford_merge_matches_batch(values in prop::collection::vec(-10.0f64..10.0, 2..40), split in 0usize..40) {
        let split = split.min(values.len());
        let paths: Vec<Path> = values.iter().map(|&v| Path { times: vec![0.0], states: vec![vec![v]] }).collect();
        let batch = ensemble_moments(&paths).unwrap();
        let mut left = WelfordGrid::new(1, 1);
        let mut right = WelfordGrid::new(1, 1);
        for (k, p) in paths.iter().enumerate() {
            if k < split { left.push(&p.states) } else { right.push(&p.states) }
        }
        left.merge(&right);
        let merged = left.finish(vec![0.0]);
        prop_assert!((merged.mean[0][0] - batch.mean[0][0]).abs() < 1e-9);
        prop_assert!((merged.std[0][0] - batch.std[0][0]).abs() < 1e-9);
    }
}
