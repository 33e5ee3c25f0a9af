//! Model validation: prediction, comparison against a reference, parameter
//! sweeps and the statistics used to judge them.

use std::f64::consts::PI;
use std::path::Path;

use cgabm_core::gedmd::IdentifiedSde;
use cgabm_core::prey::{random_state, run_until_extinction, CountState, ExtinctionOutcome, PpmParams};
use cgabm_core::rng::{derive_seed, rng_for};
use cgabm_core::sde::{coefficient_error, euler_maruyama, integrate_drift, rmse, EnsembleStats, Path as SdePath};
use cgabm_core::PolynomialField;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CgError, Result};
use crate::formats;
use crate::pipeline::{learn, stream_seed, streams, Experiment};

/// What a learned model is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    AnalyticLimit,
    AbmEnsemble,
}

/// Sup-norm and RMSE gaps between two ensembles on a shared time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reference: Reference,
    pub num_paths: usize,
    pub t_end: f64,
    pub mean_sup_gap: f64,
    pub std_sup_gap: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

pub fn moment_gaps(learned: &EnsembleStats, reference: &EnsembleStats) -> Result<(f64, f64)> {
    if learned.times.len() != reference.times.len() {
        return Err(CgError::stage("compare", "ensembles use different time grids"));
    }
    let sup = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Result<f64> {
        let mut gap = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            if x.len() != y.len() {
                return Err(CgError::stage("compare", format!("model has {} coordinates, reference has {}", x.len(), y.len())));
            }
            for (u, v) in x.iter().zip(y) {
                gap = gap.max((u - v).abs());
            }
        }
        Ok(gap)
    };
    Ok((sup(&learned.mean, &reference.mean)?, sup(&learned.std, &reference.std)?))
}

/// Ensembles of the learned model and the reference from the configured initial state.
pub fn compare_ensembles(
    exp: &Experiment,
    learned: &IdentifiedSde,
    reference: Reference,
) -> Result<(EnsembleStats, EnsembleStats, ComparisonReport)> {
    if learned.dim() != exp.model_dim() {
        return Err(CgError::stage(
            "compare",
            format!("model has {} coordinates, the experiment has {}", learned.dim(), exp.model_dim()),
        ));
    }
    // Both SDE ensembles use the same noise stream.
    let seed = stream_seed(exp.config.seed, streams::EM);
    let ours = exp.model_ensemble(learned, seed)?;
    let theirs = match reference {
        Reference::AnalyticLimit => exp.model_ensemble(&exp.reference_sde()?, seed)?,
        Reference::AbmEnsemble => exp.abm_ensemble()?,
    };
    let (mean_sup_gap, std_sup_gap) = moment_gaps(&ours, &theirs)?;
    let report = ComparisonReport {
        reference,
        num_paths: exp.config.integrator.paths,
        t_end: exp.config.integrator.t_end,
        mean_sup_gap,
        std_sup_gap,
        mean_rmse: rmse(&ours.mean, &theirs.mean).map_err(|e| CgError::stage("compare", e))?,
        std_rmse: rmse(&ours.std, &theirs.std).map_err(|e| CgError::stage("compare", e))?,
    };
    Ok((ours, theirs, report))
}

/// Writes `learned_stats.csv`, `reference_stats.csv`, `comparison.csv` and `report.toml`.
pub fn run_compare(config: &ExperimentConfig, model: &Path, reference: Reference) -> Result<ComparisonReport> {
    let exp = Experiment::new(config)?;
    let sde = formats::read_model(model)?;
    let (ours, theirs, report) = compare_ensembles(&exp, &sde, reference)?;
    let dir = &exp.config.output_dir;
    formats::write_stats(&dir.join("learned_stats.csv"), &ours)?;
    formats::write_stats(&dir.join("reference_stats.csv"), &theirs)?;
    let d = sde.dim();
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("mean_gap_{i}")));
    header.extend((1..=d).map(|i| format!("std_gap_{i}")));
    let rows = (0..ours.times.len()).map(|t| {
        let mut row = vec![formats::num(ours.times[t])];
        row.extend((0..d).map(|i| formats::num(ours.mean[t][i] - theirs.mean[t][i])));
        row.extend((0..d).map(|i| formats::num(ours.std[t][i] - theirs.std[t][i])));
        row
    });
    formats::write_table(&dir.join("comparison.csv"), &header, rows)?;
    let path = dir.join("report.toml");
    std::fs::write(&path, toml::to_string(&report).expect("report serializes")).map_err(|e| CgError::io(&path, e))?;
    Ok(report)
}

/// Sample paths `0..count` of the model ensemble.
pub fn model_paths(exp: &Experiment, sde: &IdentifiedSde, count: usize) -> Result<Vec<SdePath>> {
    let cfg = exp.em_config(stream_seed(exp.config.seed, streams::EM))?;
    let c0 = exp.initial_model_state()?;
    (0..count)
        .into_par_iter()
        .map(|p| euler_maruyama(sde, &c0, &cfg, p as u64).map_err(|e| CgError::stage("predict", e)))
        .collect()
}

/// Integrates a model file: `prediction.csv` (ensemble moments),
/// `drift_path.csv` (deterministic part) and `paths.csv` (up to ten sample paths).
pub fn run_predict(config: &ExperimentConfig, model: &Path) -> Result<EnsembleStats> {
    let exp = Experiment::new(config)?;
    let sde = formats::read_model(model)?;
    if sde.dim() != exp.model_dim() {
        return Err(CgError::stage("predict", format!("model has {} coordinates, the experiment has {}", sde.dim(), exp.model_dim())));
    }
    let stats = exp.model_ensemble(&sde, stream_seed(exp.config.seed, streams::EM))?;
    let dir = &exp.config.output_dir;
    formats::write_stats(&dir.join("prediction.csv"), &stats)?;
    let i = &exp.config.integrator;
    let c0 = exp.initial_model_state()?;
    let ode = integrate_drift(&sde, &c0, i.dt.expect("resolved"), i.t_end, i.save_stride).map_err(|e| CgError::stage("predict", e))?;
    let columns: Vec<String> = (1..=sde.dim()).map(|k| format!("x{k}")).collect();
    formats::write_series(&dir.join("drift_path.csv"), &columns, &[(ode.times, ode.states)])?;
    let paths = model_paths(&exp, &sde, i.paths.min(10))?;
    let series: Vec<_> = paths.into_iter().map(|p| (p.times, p.states)).collect();
    formats::write_series(&dir.join("paths.csv"), &columns, &series)?;
    Ok(stats)
}

/// One cell and repeat of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub population: u64,
    pub k: usize,
    pub m: usize,
    pub repeat: usize,
    pub drift_rmse: f64,
    pub diffusion_rmse: f64,
    pub error: Option<String>,
}

/// Cells of the configured sweep grid, `(population, k, m)` with `m = None`
/// meaning the default for the population.
pub fn sweep_cells(config: &ExperimentConfig) -> Vec<(u64, usize, Option<usize>)> {
    let s = &config.sweep;
    let ns = if s.population.is_empty() { vec![config.population_or_default()] } else { s.population.clone() };
    let ks = if s.k.is_empty() { vec![config.sampling.k] } else { s.k.clone() };
    let ms: Vec<Option<usize>> = if s.m.is_empty() { vec![config.sampling.m] } else { s.m.iter().map(|&m| Some(m)).collect() };
    let mut cells = Vec::new();
    for &n in &ns {
        for &k in &ks {
            for &m in &ms {
                cells.push((n, k, m));
            }
        }
    }
    cells
}

/// Coefficient errors against the analytic reference for every cell and
/// repeat. Repeat `r` of cell `c` uses the master seed `derive_seed(seed, [SWEEP, c, r])`.
/// A failing cell is recorded and the sweep continues.
pub fn sweep(config: &ExperimentConfig, mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    config.resolved()?;
    let mut rows = Vec::new();
    for (c, (n, k, m)) in sweep_cells(config).into_iter().enumerate() {
        for r in 0..config.sweep.repeats {
            let mut cell = config.clone();
            cell.population = Some(n);
            cell.sampling.k = k;
            cell.sampling.m = m;
            cell.seed = derive_seed(config.seed, &[streams::SWEEP, c as u64, r as u64]);
            let outcome = Experiment::new(&cell).and_then(|exp| {
                let learned = learn(&exp)?;
                let reference = exp.reference_sde()?;
                let errors = coefficient_error(&learned.sde, &reference).map_err(|e| CgError::stage("sweep", e))?;
                Ok((exp.config.sampling.m.expect("resolved"), errors))
            });
            let row = match outcome {
                Ok((m, (drift_rmse, diffusion_rmse))) => {
                    SweepRow { population: n, k, m, repeat: r, drift_rmse, diffusion_rmse, error: None }
                }
                Err(e) => SweepRow {
                    population: n,
                    k,
                    m: m.unwrap_or(0),
                    repeat: r,
                    drift_rmse: f64::NAN,
                    diffusion_rmse: f64::NAN,
                    error: Some(e.to_string()),
                },
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean errors per cell over the successful repeats.
pub fn sweep_summary(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut out: Vec<SweepRow> = Vec::new();
    for row in rows {
        let key = (row.population, row.k, row.m);
        if !out.iter().any(|o| (o.population, o.k, o.m) == key) {
            let ok: Vec<&SweepRow> =
                rows.iter().filter(|r| (r.population, r.k, r.m) == key && r.error.is_none()).collect();
            let mean = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64;
            out.push(SweepRow {
                repeat: ok.len(),
                drift_rmse: if ok.is_empty() { f64::NAN } else { mean(|r| r.drift_rmse) },
                diffusion_rmse: if ok.is_empty() { f64::NAN } else { mean(|r| r.diffusion_rmse) },
                error: ok.is_empty().then(|| "every repeat failed".to_string()),
                ..row.clone()
            });
        }
    }
    out
}

pub fn write_sweep(path: &Path, rows: &[SweepRow], repeat_column: &str) -> Result<()> {
    let header = ["population", "k", "m", repeat_column, "drift_rmse", "diffusion_rmse", "error"].map(String::from);
    let rows = rows.iter().map(|r| {
        vec![
            r.population.to_string(),
            r.k.to_string(),
            r.m.to_string(),
            r.repeat.to_string(),
            formats::num(r.drift_rmse),
            formats::num(r.diffusion_rmse),
            r.error.clone().unwrap_or_default(),
        ]
    });
    formats::write_table(path, &header, rows)
}

/// Runs the sweep and writes `sweep.csv` (every repeat) and `sweep_summary.csv`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let rows = sweep(config, |r| {
        eprintln!(
            "N={} k={} m={} repeat={} drift_rmse={} diffusion_rmse={}{}",
            r.population,
            r.k,
            r.m,
            r.repeat,
            r.drift_rmse,
            r.diffusion_rmse,
            r.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
        )
    })?;
    let dir = &config.output_dir;
    write_sweep(&dir.join("sweep.csv"), &rows, "repeat")?;
    let summary = sweep_summary(&rows);
    write_sweep(&dir.join("sweep_summary.csv"), &summary, "repeats")?;
    Ok(summary)
}

/// Largest `|c_{1,i} - c_{2,i}|` over all types at each saved time, for two
/// clusters of `d` types in reduced coordinates `(c_{1,1..d-1}, c_{2,1..d-1})`.
pub fn cluster_gap(mean: &[Vec<f64>]) -> Vec<f64> {
    mean.iter()
        .map(|c| {
            let half = c.len() / 2;
            let (a, b) = c.split_at(half);
            let mut gap = 0.0f64;
            let mut rest = 0.0;
            for (x, y) in a.iter().zip(b) {
                gap = gap.max((x - y).abs());
                rest += x - y;
            }
            gap.max(rest.abs())
        })
        .collect()
}

/// `(d b_0 / d x_1, d b_1 / d x_0)` at `point` for a two-dimensional drift.
pub fn interaction_slopes(drift: &PolynomialField, point: &[f64]) -> (f64, f64) {
    (drift.polynomial(0).derivative(1).eval(point), drift.polynomial(1).derivative(0).eval(point))
}

/// Full turns of a planar path around `center`, from its unwrapped angle.
pub fn winding_turns(states: &[Vec<f64>], center: &[f64]) -> f64 {
    let mut total = 0.0;
    let angle = |s: &Vec<f64>| (s[1] - center[1]).atan2(s[0] - center[0]);
    for w in states.windows(2) {
        let mut step = angle(&w[1]) - angle(&w[0]);
        if step > PI {
            step -= 2.0 * PI;
        } else if step < -PI {
            step += 2.0 * PI;
        }
        total += step;
    }
    total.abs() / (2.0 * PI)
}

/// Outcome counts of predator-prey runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtinctionTally {
    pub runs: usize,
    pub predators_first: usize,
    pub prey_first: usize,
    pub coexistence: usize,
}

impl ExtinctionTally {
    pub fn predators_first_fraction(&self) -> f64 {
        self.predators_first as f64 / self.runs as f64
    }
}

/// Runs `runs` realizations for up to `horizon` steps; run `r` draws from
/// `rng_for(seed, [r])`.
pub fn extinction_tally(params: &PpmParams, start: CountState, horizon: usize, runs: usize, seed: u64) -> Result<ExtinctionTally> {
    let outcomes = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, &[r as u64]);
            let mut state = random_state(start, params, &mut rng);
            run_until_extinction(&mut state, params, horizon, &mut rng).map(|(o, _)| o)
        })
        .collect::<cgabm_core::Result<Vec<_>>>()
        .map_err(|e| CgError::stage("simulate", e))?;
    let mut t = ExtinctionTally { runs, ..Default::default() };
    for o in outcomes {
        match o {
            ExtinctionOutcome::PredatorsFirst { .. } => t.predators_first += 1,
            ExtinctionOutcome::PreyFirst { .. } => t.prey_first += 1,
            ExtinctionOutcome::Coexistence => t.coexistence += 1,
        }
    }
    Ok(t)
}

/// Mean of the measurement points, a proxy for the interior of the
/// ensemble's orbit.
pub fn mean_point(points: impl IntoIterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for p in points {
        if sum.is_empty() {
            sum = vec![0.0; p.len()];
        }
        for (s, v) in sum.iter_mut().zip(&p) {
            *s += v;
        }
        n += 1.0;
    }
    sum.iter().map(|s| s / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn winding_counts_turns_in_either_direction() {
        let circle = |turns: f64, dir: f64| -> Vec<Vec<f64>> {
            (0..=400).map(|i| {
                let a = dir * 2.0 * PI * turns * i as f64 / 400.0;
                vec![5.0 + a.cos(), 3.0 + a.sin()]
            })
            .collect()
        };
        assert!((winding_turns(&circle(2.5, 1.0), &[5.0, 3.0]) - 2.5).abs() < 1e-9);
        assert!((winding_turns(&circle(3.0, -1.0), &[5.0, 3.0]) - 3.0).abs() < 1e-9);
        assert!(winding_turns(&circle(3.0, 1.0), &[50.0, 3.0]) < 0.01);
    }

    #[test]
    fn cluster_gap_includes_the_dropped_type() {
        let gaps = cluster_gap(&[vec![0.5, 0.2, 0.45, 0.2], vec![0.2, 0.2, 0.1, 0.1]]);
        assert!((gaps[0] - 0.05).abs() < 1e-12);
        assert!((gaps[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let cfg = ExperimentConfig::from_toml_str(
            "population = 10\n[sampling]\nk = 10\n[sweep]\npopulation = [10, 4]\nm = [7, 100]",
        )
        .unwrap();
        assert_eq!(sweep_cells(&cfg).len(), 4);
        let rows = sweep(&cfg, |_| {}).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_none() && rows[0].drift_rmse.is_finite());
        assert!(rows[1].error.is_some());
        let summary = sweep_summary(&rows);
        assert_eq!(summary.len(), 4);
    }

    #[test]
    fn a_model_compared_with_itself_has_zero_gap() {
        let cfg = ExperimentConfig::from_toml_str("population = 100\n[integrator]\npaths = 20\nt_end = 1.0\ndt = 0.01").unwrap();
        let exp = Experiment::new(&cfg).unwrap();
        let reference = exp.reference_sde().unwrap();
        let (_, _, report) = compare_ensembles(&exp, &reference, Reference::AnalyticLimit).unwrap();
        assert_eq!((report.mean_sup_gap, report.std_sup_gap, report.mean_rmse), (0.0, 0.0, 0.0));
    }
}
