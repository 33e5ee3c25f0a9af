use cgabm_core::km::km_estimate;
use cgabm_core::mjp::gillespie_state_at;
use cgabm_core::rng::SimRng;
use cgabm_core::voter::{evm_jump_model, VoterRates};
use cgabm_core::{PopulationState, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Exact transition of `dX = -X dt + dW`.
fn ou_sampler(x: &[f64], lag: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    let decay = (-lag).exp();
    let sd = ((1.0 - decay * decay) / 2.0).sqrt();
    let xi: f64 = rng.sample(StandardNormal);
    Ok(vec![x[0] * decay + sd * xi])
}

#[test]
fn ou_moments_match_closed_form() {
    let (x0, tau, k) = (1.0, 0.01, 100_000);
    let m = km_estimate(ou_sampler, &[x0], k, tau, 5).unwrap();
    let var_step = (1.0 - (-2.0 * tau).exp()) / 2.0;
    let se = (var_step / k as f64).sqrt() / tau;
    assert!((m.drift[0] + x0).abs() < 3.0 * se, "drift {} se {se}", m.drift[0]);
    assert!((m.diffusion[0] - 1.0).abs() < 0.03, "diffusion {}", m.diffusion[0]);
    assert_eq!(m.sample_count, k);
}

#[test]
fn diffusion_bias_is_first_order_in_lag() {
    let x0 = 3.0;
    let lags = [0.04, 0.02, 0.01];
    let bias: Vec<f64> =
        lags.iter().map(|&tau| km_estimate(ou_sampler, &[x0], 100_000, tau, 9).unwrap().diffusion[0] - 1.0).collect();
    let slope = (bias[0] / bias[2]).ln() / (lags[0] / lags[2]).ln();
    assert!((slope - 1.0).abs() <= 0.2, "bias {bias:?}, slope {slope}");
}

#[test]
fn doubling_samples_halves_variance() {
    let repeats = 1000u64;
    let var_of = |k: usize, seed: u64| {
        let est: Vec<f64> =
            (0..repeats).map(|r| km_estimate(ou_sampler, &[0.5], k, 0.01, seed + r).unwrap().drift[0]).collect();
        let mean = est.iter().sum::<f64>() / repeats as f64;
        est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64
    };
    let ratio = var_of(100, 0) / var_of(200, 10_000);
    assert!((1.6..2.5).contains(&ratio), "{ratio}");
}

#[test]
fn voter_barycenter_has_zero_drift() {
    let n = 5000u32;
    let model = evm_jump_model(&VoterRates::reference(), n as u64).unwrap();
    let x0 = PopulationState::new(vec![1667, 1667, 1666]);
    let k = 10_000;
    let tau = 0.01;
    let sampler = |_: &[f64], lag: f64, rng: &mut SimRng| Ok(gillespie_state_at(&model, &x0, lag, rng)?.as_f64());
    let m = km_estimate(sampler, &x0.as_f64(), k, tau, 3).unwrap();
    for i in 0..3 {
        // Var(dX_i / tau) per sample is bounded by the raw second moment estimate / tau.
        let se = (m.diffusion_entry(i, i) / tau / k as f64).sqrt();
        assert!(m.drift[i].abs() < 3.0 * se, "component {i}: drift {} se {se}", m.drift[i]);
    }
}
