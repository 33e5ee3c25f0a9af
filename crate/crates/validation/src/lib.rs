//! Shared helpers for the acceptance suite in `tests/acceptance.rs`.
//!
//! Each criterion prints one `PASS` or `FAIL` line and then asserts.

use std::io::Write;
use std::time::Instant;

use cgabm_core::km::Measurement;
use cgabm_core::mjp::LangevinPolynomials;
use cgabm_core::rng::SimRng;
use cgabm_core::Result;
use rand::Rng;
use rand_distr::StandardNormal;

/// Prints the verdict line for a criterion and panics on failure. The line
/// goes straight to stdout, past the test harness's output capture.
pub fn verdict(criterion: u32, passed: bool, detail: &str, started: Instant) {
    let status = if passed { "PASS" } else { "FAIL" };
    let line = format!("{status} criterion {criterion}: {detail} [{:.1} s]\n", started.elapsed().as_secs_f64());
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(passed, "criterion {criterion}: {detail}");
}

/// Generic interior points of the reduced simplex `{c1, c2 >= 0, c1 + c2 <= 1}`.
pub fn triangle_points(count: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            if u + v < 1.0 {
                break vec![u, v];
            }
        })
        .collect()
}

/// Noise-free measurements of a polynomial SDE.
pub fn exact_measurements(model: &LangevinPolynomials, points: &[Vec<f64>]) -> Vec<Measurement> {
    points
        .iter()
        .map(|c| Measurement {
            point: c.clone(),
            drift: model.drift.iter().map(|p| p.eval(c)).collect(),
            diffusion: model.diffusion.iter().flat_map(|row| row.iter().map(|p| p.eval(c))).collect(),
            sample_count: 1,
            lag: 0.01,
        })
        .collect()
}

/// Exact transition of `dX = -X dt + dW` over `lag`.
pub fn ou_sampler(x: &[f64], lag: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    let decay = (-lag).exp();
    let sd = ((1.0 - decay * decay) / 2.0).sqrt();
    let xi: f64 = rng.sample(StandardNormal);
    Ok(vec![x[0] * decay + sd * xi])
}
