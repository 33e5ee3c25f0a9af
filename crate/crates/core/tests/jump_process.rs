use std::collections::BTreeMap;

use cgabm_core::mjp::{
    cme_solve, gillespie_simulate, gillespie_simulate_with, limit_sde, limit_sde_polynomials, DEFAULT_STATE_CAP,
};
use cgabm_core::rng::rng_for;
use cgabm_core::voter::{evm_jump_model, VoterRates};
use cgabm_core::{linalg, JumpModel, MonomialDictionary, PopulationState, TransitionRule};

#[test]
fn first_jump_time_is_exponential() {
    let n = 20u32;
    let rule = TransitionRule::new(vec![1, 0], vec![0, 1], 1.0).unwrap();
    let model = JumpModel::new(2, vec![rule], n as u64).unwrap();
    let x0 = PopulationState::new(vec![n, 0]);
    let runs = 100_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in 0..runs {
        let traj = gillespie_simulate_with(&model, &x0, 10.0, &mut rng_for(11, &[s])).unwrap();
        let t = traj.times[1];
        sum += t;
        sum_sq += t * t;
    }
    let mean = sum / runs as f64;
    let se = ((sum_sq / runs as f64 - mean * mean) / runs as f64).sqrt();
    assert!((mean - 1.0 / n as f64).abs() < 3.0 * se, "mean {mean}, se {se}");
}

fn empirical(model: &JumpModel, x0: &PopulationState, runs: u64, seed: u64) -> BTreeMap<PopulationState, u64> {
    let mut counts = BTreeMap::new();
    for s in 0..runs {
        let traj = gillespie_simulate(model, x0, 1.0, rng_seed(seed, s)).unwrap();
        *counts.entry(traj.final_state().clone()).or_insert(0) += 1;
    }
    counts
}

fn rng_seed(seed: u64, s: u64) -> u64 {
    cgabm_core::rng::derive_seed(seed, &[s])
}

#[test]
fn ssa_converges_to_master_equation() {
    let model = evm_jump_model(&VoterRates::reference(), 4).unwrap();
    let x0 = PopulationState::new(vec![2, 1, 1]);
    let p = cme_solve(&model, &[(x0.clone(), 1.0)], 1.0, DEFAULT_STATE_CAP).unwrap();
    assert_eq!(p.space.len(), 15);
    assert!((p.total() - 1.0).abs() < 1e-10);
    let coarse = p.tv_distance_to_counts(&empirical(&model, &x0, 10_000, 1));
    let fine = p.tv_distance_to_counts(&empirical(&model, &x0, 200_000, 2));
    assert!(fine <= 0.02, "{fine}");
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn ssa_conserves_population_and_stays_nonnegative() {
    let model = evm_jump_model(&VoterRates::reference(), 30).unwrap();
    let traj = gillespie_simulate(&model, &PopulationState::new(vec![30, 0, 0]), 5.0, 4).unwrap();
    assert!(traj.len() > 10);
    assert!(traj.states.iter().all(|s| s.total() == 30));
}

#[test]
fn limit_diffusion_is_psd_on_simplex() {
    let model = evm_jump_model(&VoterRates::reference(), 10).unwrap();
    let langevin = limit_sde_polynomials(&model);
    let steps = 20;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let c = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let a: Vec<f64> = langevin.diffusion.iter().flat_map(|row| row.iter().map(|p| p.eval(&c))).collect();
            for r in 0..3 {
                for s in 0..3 {
                    assert_eq!(a[r * 3 + s], a[s * 3 + r]);
                }
            }
            let (eig, _) = linalg::symmetric_eigen(&a, 3);
            assert!(eig.iter().all(|&e| e >= -1e-12), "{eig:?} at {c:?}");
        }
    }
}

#[test]
fn barycenter_is_a_fixed_point() {
    let model = evm_jump_model(&VoterRates::reference(), 10).unwrap();
    let (drift, _) = limit_sde(&model, &MonomialDictionary::new(2, 3)).unwrap();
    let b = drift.eval(&[1.0 / 3.0, 1.0 / 3.0]);
    assert!(b.iter().all(|v| v.abs() < 1e-14), "{b:?}");
    let c1 = drift.dictionary().index_of(&[1, 0]).unwrap();
    assert!((drift.row(0)[c1] - 0.97).abs() < 1e-14);
}
