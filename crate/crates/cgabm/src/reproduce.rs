//! Canned experiments for Figures 4 to 8 and the checks applied to them.

use std::path::Path;

use cgabm_core::prey::CountState;

use crate::analysis::{
    cluster_gap, compare_ensembles, extinction_tally, interaction_slopes, mean_point, model_paths, sweep,
    sweep_summary, winding_turns, write_sweep, Reference, SweepRow,
};
use crate::config::ExperimentConfig;
use crate::error::{CgError, Result};
use crate::formats;
use crate::pipeline::{learn, stream_seed, streams, Experiment};

pub const FIGURES: [&str; 6] = ["fig4", "fig5a", "fig5b", "fig6", "fig7", "fig8"];

/// One pass/fail judgement with the measured value.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

const FIG4: &str = r#"
kind = "complete_evm"
[sampling]
k = 100
[sweep]
population = [10, 25, 50, 100, 250, 500, 1000, 2500, 5000]
k = [10, 25, 50, 100, 250, 500, 1000, 2500, 5000]
"#;

const FIG5A: &str = r#"
kind = "complete_evm"
population = 2000
[sampling]
m = 5000
k = 50
[integrator]
dt = 0.001
t_end = 10.0
paths = 1000
save_stride = 100
initial_state = [0.2, 0.7, 0.1]
"#;

const FIG5B: &str = r#"
kind = "complete_evm"
population = 5000
[sweep]
m = [50, 100, 200, 500, 1000, 2000]
k = [10, 100]
repeats = 10
"#;

const FIG6: &str = r#"
kind = "clustered_evm"
population = 50
[rates]
exploration = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
[network]
p = 0.2
[sampling]
m = 1000
k = 1000
[integrator]
dt = 0.005
t_end = 50.0
paths = 1000
save_stride = 20
initial_state = [0.85, 0.1, 0.05, 0.2, 0.5, 0.3]
"#;

const FIG7: &str = r#"
kind = "random_network_evm"
population = 500
[network]
edge_probability = 0.1
[sampling]
k = 100
[integrator]
dt = 0.001
t_end = 20.0
paths = 200
save_stride = 100
initial_state = [0.2, 0.7, 0.1]
"#;

const FIG8: &str = r#"
kind = "ppm"
[sampling]
m = 1000
k = 1000
lag = 1.0
[integrator]
dt = 0.1
t_end = 500.0
paths = 100
save_stride = 10
"#;

fn figure_text(id: &str) -> Result<&'static str> {
    Ok(match id {
        "fig4" => FIG4,
        "fig5a" => FIG5A,
        "fig5b" => FIG5B,
        "fig6" => FIG6,
        "fig7" => FIG7,
        "fig8" => FIG8,
        _ => return Err(CgError::Config(format!("unknown figure `{id}`; expected one of {}", FIGURES.join(", ")))),
    })
}

/// The canned configuration of a figure.
pub fn figure_config(id: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(figure_text(id)?)
}

/// The canned configuration with `key = value` overrides applied.
pub fn figure_config_with(id: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_with_overrides(figure_text(id)?, overrides)
}

/// Runs a figure, writes its tables and `checks.csv` below `config.output_dir`.
pub fn run_figure(id: &str, config: &ExperimentConfig) -> Result<Vec<Check>> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CgError::io(&dir, e))?;
    let checks = match id {
        "fig4" => fig4(config, &dir)?,
        "fig5a" => fig5a(config, &dir)?,
        "fig5b" => fig5b(config, &dir)?,
        "fig6" => fig6(config, &dir)?,
        "fig7" => fig7(config, &dir)?,
        "fig8" => fig8(config, &dir)?,
        _ => return Err(CgError::Config(format!("unknown figure `{id}`"))),
    };
    let header = ["check", "passed", "detail"].map(String::from);
    let rows = checks.iter().map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
    formats::write_table(&dir.join("checks.csv"), &header, rows)?;
    Ok(checks)
}

fn run_sweep_logged(config: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    let rows = sweep(config, |r| {
        eprintln!("N={} k={} m={} repeat={} drift_rmse={:.4e}", r.population, r.k, r.m, r.repeat, r.drift_rmse)
    })?;
    write_sweep(&dir.join("sweep.csv"), &rows, "repeat")?;
    let summary = sweep_summary(&rows);
    write_sweep(&dir.join("sweep_summary.csv"), &summary, "repeats")?;
    Ok(summary)
}

fn cell(rows: &[SweepRow], n: u64, k: usize) -> f64 {
    rows.iter().find(|r| r.population == n && r.k == k).map_or(f64::NAN, |r| r.drift_rmse)
}

fn fig4(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let rows = run_sweep_logged(config, dir)?;
    let ns = &config.sweep.population;
    let ks = &config.sweep.k;
    let (n_lo, n_hi) = (*ns.iter().min().unwrap_or(&10), *ns.iter().max().unwrap_or(&10));
    let (k_lo, k_hi) = (*ks.iter().min().unwrap_or(&100), *ks.iter().max().unwrap_or(&100));
    let along_n = (cell(&rows, n_hi, k_hi), cell(&rows, n_lo, k_hi));
    let along_k = (cell(&rows, n_hi, k_hi), cell(&rows, n_hi, k_lo));
    let corner = (cell(&rows, n_lo, k_hi), cell(&rows, n_hi, k_lo));
    Ok(vec![
        Check::new("error decreases in N", along_n.0 < along_n.1, format!("N={n_hi}: {:.4e}, N={n_lo}: {:.4e} (k={k_hi})", along_n.0, along_n.1)),
        Check::new("error decreases in k", along_k.0 < along_k.1, format!("k={k_hi}: {:.4e}, k={k_lo}: {:.4e} (N={n_hi})", along_k.0, along_k.1)),
        Check::new(
            "small N is not rescued by large k",
            corner.0 > corner.1,
            format!("(N={n_lo}, k={k_hi}): {:.4e}, (N={n_hi}, k={k_lo}): {:.4e}", corner.0, corner.1),
        ),
    ])
}

fn fig5a(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let exp = Experiment::new(config)?;
    let learned = learn(&exp)?;
    formats::write_model(&dir.join("model.toml"), &learned.sde)?;
    formats::write_manifest(&dir.join("manifest.toml"), &learned.manifest)?;
    let (ours, theirs, report) = compare_ensembles(&exp, &learned.sde, Reference::AnalyticLimit)?;
    formats::write_stats(&dir.join("learned_stats.csv"), &ours)?;
    formats::write_stats(&dir.join("reference_stats.csv"), &theirs)?;
    Ok(vec![
        Check::new("mean gap <= 0.02", report.mean_sup_gap <= 0.02, format!("{:.4e}", report.mean_sup_gap)),
        Check::new("std gap <= 0.01", report.std_sup_gap <= 0.01, format!("{:.4e}", report.std_sup_gap)),
    ])
}

fn fig5b(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let rows = run_sweep_logged(config, dir)?;
    let mut checks = Vec::new();
    for &k in &config.sweep.k {
        let curve: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k).collect();
        if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
            checks.push(Check::new(
                &format!("k={k}: error decreases in m"),
                last.drift_rmse < first.drift_rmse,
                format!("m={}: {:.4e}, m={}: {:.4e}", first.m, first.drift_rmse, last.m, last.drift_rmse),
            ));
        }
    }
    // The two smallest budgets m k reached with both sample counts.
    let (k_lo, k_hi) = (*config.sweep.k.iter().min().unwrap_or(&10), *config.sweep.k.iter().max().unwrap_or(&100));
    let pairs = rows
        .iter()
        .filter(|r| r.k == k_lo)
        .filter_map(|lo| rows.iter().find(|hi| hi.k == k_hi && hi.m * hi.k == lo.m * lo.k).map(|hi| (lo, hi)));
    for (lo, hi) in pairs.take(2) {
        checks.push(Check::new(
            &format!("budget {}: k={k_lo} beats k={k_hi}", lo.m * lo.k),
            lo.drift_rmse < hi.drift_rmse,
            format!("{:.4e} vs {:.4e}", lo.drift_rmse, hi.drift_rmse),
        ));
    }
    Ok(checks)
}

/// Largest cluster gap of the learned model's ensemble mean on `[from, to]`.
pub fn learned_cluster_gap(config: &ExperimentConfig, from: f64, to: f64) -> Result<(f64, crate::pipeline::Learned, cgabm_core::sde::EnsembleStats)> {
    let exp = Experiment::new(config)?;
    let learned = learn(&exp)?;
    let stats = exp.model_ensemble(&learned.sde, stream_seed(exp.config.seed, streams::EM))?;
    let gap = cluster_gap(&stats.mean)
        .iter()
        .zip(&stats.times)
        .filter(|(_, &t)| t >= from - 1e-9 && t <= to + 1e-9)
        .map(|(g, _)| *g)
        .fold(0.0, f64::max);
    Ok((gap, learned, stats))
}

fn fig6(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let t_end = config.integrator.t_end;
    for (p, from, to) in [(0.2, 30.0, t_end), (0.01, 0.0, 30.0)] {
        let mut c = config.clone();
        c.network.p = p;
        let (gap, learned, stats) = learned_cluster_gap(&c, from, to)?;
        let sub = dir.join(format!("p{p}"));
        formats::write_model(&sub.join("model.toml"), &learned.sde)?;
        formats::write_stats(&sub.join("prediction.csv"), &stats)?;
        let (passed, rule) = if p == 0.2 { (gap <= 0.05, "<= 0.05") } else { (gap > 0.1, "> 0.1") };
        checks.push(Check::new(&format!("p={p}: cluster gap on [{from}, {to}] {rule}"), passed, format!("{gap:.4e}")));
    }
    Ok(checks)
}

fn fig7(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let exp = Experiment::new(config)?;
    let learned = learn(&exp)?;
    formats::write_model(&dir.join("model.toml"), &learned.sde)?;
    let (ours, theirs, report) = compare_ensembles(&exp, &learned.sde, Reference::AbmEnsemble)?;
    formats::write_stats(&dir.join("learned_stats.csv"), &ours)?;
    formats::write_stats(&dir.join("abm_stats.csv"), &theirs)?;
    let early = ours
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= 2.0)
        .flat_map(|(i, _)| ours.mean[i].iter().zip(&theirs.mean[i]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::new("mean gap for t <= 2 is <= 0.05", early <= 0.05, format!("{early:.4e}")),
        Check::new("overall mean gap reported", true, format!("{:.4e}", report.mean_sup_gap)),
    ])
}

/// Lotka–Volterra structure of a learned predator–prey model.
pub struct PpmStructure {
    /// Mean of the measurement points.
    pub center: Vec<f64>,
    /// `d b_prey / d predators` and `d b_predators / d prey` at `center`.
    pub slopes: (f64, f64),
    /// Share of sample paths winding at least twice around `center`.
    pub cycling_fraction: f64,
    pub paths: Vec<cgabm_core::sde::Path>,
}

pub fn ppm_structure(exp: &Experiment, learned: &crate::pipeline::Learned, paths: usize) -> Result<PpmStructure> {
    let center = mean_point(learned.measurements.iter().map(|m| m.point.clone()));
    let slopes = interaction_slopes(&learned.sde.drift, &center);
    let sample = model_paths(exp, &learned.sde, paths)?;
    let cycling = sample.iter().filter(|p| winding_turns(&p.states, &center) >= 2.0).count();
    Ok(PpmStructure { center, slopes, cycling_fraction: cycling as f64 / paths as f64, paths: sample })
}

fn fig8(config: &ExperimentConfig, dir: &Path) -> Result<Vec<Check>> {
    let exp = Experiment::new(config)?;
    let learned = learn(&exp)?;
    formats::write_model(&dir.join("model.toml"), &learned.sde)?;
    formats::write_measurements(&dir.join("measurements.csv"), &learned.measurements)?;
    let PpmStructure { center, slopes: (prey_pred, pred_prey), cycling_fraction: fraction, paths: sample } =
        ppm_structure(&exp, &learned, config.integrator.paths)?;
    let columns = ["prey".to_string(), "predators".to_string()];
    let series: Vec<_> = sample.into_iter().take(10).map(|p| (p.times, p.states)).collect();
    formats::write_series(&dir.join("phase_paths.csv"), &columns, &series)?;
    let start = CountState { prey: config.ppm.initial_prey, predators: config.ppm.initial_predators };
    let tally = extinction_tally(
        &exp.config.ppm.params()?,
        start,
        config.ppm.extinction_horizon,
        1000,
        stream_seed(exp.config.seed, streams::ABM),
    )?;
    let frac = tally.predators_first_fraction();
    Ok(vec![
        Check::new("d b_prey / d predators < 0", prey_pred < 0.0, format!("{prey_pred:.4e} at {center:?}")),
        Check::new("d b_predators / d prey > 0", pred_prey > 0.0, format!("{pred_prey:.4e} at {center:?}")),
        Check::new("at least 80% of paths cycle twice", fraction >= 0.8, format!("{fraction:.3}")),
        Check::new("predators die out first in 2% to 7% of runs", (0.02..=0.07).contains(&frac), format!("{frac:.3}")),
    ])
}
