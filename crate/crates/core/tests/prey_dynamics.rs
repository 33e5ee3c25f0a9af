use cgabm_core::prey::{ppm_counts, ppm_step_with, random_state, CountState, PpmParams};
use cgabm_core::rng::rng_for;

#[test]
fn prey_reproduce_at_table_rate() {
    let params = PpmParams::table2();
    let runs = 200;
    let total: u64 = (0..runs)
        .map(|r| {
            let mut rng = rng_for(1, &[r]);
            let mut state = random_state(CountState { prey: 1000, predators: 0 }, &params, &mut rng);
            ppm_step_with(&mut state, &params, &mut rng).unwrap();
            ppm_counts(&state).prey
        })
        .sum();
    let mean = total as f64 / runs as f64;
    let se = (1000.0 * 0.03 * 0.97 / runs as f64).sqrt();
    assert!((mean - 1030.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn log_prey_grows_linearly_without_predators() {
    let params = PpmParams::table2();
    let (steps, seeds) = (200usize, 50u64);
    let mut mean_log = vec![0.0; steps + 1];
    for s in 0..seeds {
        let mut rng = rng_for(2, &[s]);
        let mut state = random_state(CountState { prey: 100, predators: 0 }, &params, &mut rng);
        mean_log[0] += (100f64).ln() / seeds as f64;
        for t in 1..=steps {
            ppm_step_with(&mut state, &params, &mut rng).unwrap();
            mean_log[t] += (ppm_counts(&state).prey as f64).ln() / seeds as f64;
        }
    }
    let n = (steps + 1) as f64;
    let t_mean = steps as f64 / 2.0;
    let y_mean = mean_log.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in mean_log.iter().enumerate() {
        sxy += (t as f64 - t_mean) * (y - y_mean);
        sxx += (t as f64 - t_mean).powi(2);
    }
    let slope = sxy / sxx;
    let target = 1.03f64.ln();
    assert!((slope / target - 1.0).abs() < 0.05, "{slope} vs {target}");
}
