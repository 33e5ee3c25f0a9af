use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgabm::analysis::{self, Reference};
use cgabm::config::{parse_overrides, ExperimentConfig};
use cgabm::error::{CgError, Result};
use cgabm::formats;
use cgabm::pipeline::{self, stream_seed, streams, Experiment, System};
use cgabm::reproduce;
use cgabm_core::prey::{ppm_step_with, random_state, CountState};
use cgabm_core::rng::rng_for;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Learn coarse-grained SDE models of agent-based simulations.
///
/// Every subcommand takes an experiment file (TOML) followed by optional
/// `--section.key value` overrides, e.g. `--sampling.k 500`. The worker
/// count is read from CGABM_WORKERS.
#[derive(Parser)]
#[command(name = "cgabm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment file.
    config: PathBuf,
    /// `--key value` overrides of configuration entries.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let overrides = parse_overrides(&self.overrides)?;
        ExperimentConfig::load_with_overrides(Some(&self.config), &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    AnalyticLimit,
    AbmEnsemble,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the agent-based model and write its trajectories.
    Simulate(ConfigArgs),
    /// Generate measurements only.
    Estimate(ConfigArgs),
    /// Fit a model to a persisted measurement table.
    Identify {
        /// Defaults to `<output_dir>/measurements.csv`.
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Run the whole pipeline: measurements, estimation, identification.
    Run(ConfigArgs),
    /// Integrate a model file from the configured initial state.
    Predict {
        /// Defaults to `<output_dir>/model.toml`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Compare a model file with the analytic limit or the agent-based model.
    Compare {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "analytic-limit")]
        reference: ReferenceArg,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Coefficient errors over the `[sweep]` grid.
    Sweep(ConfigArgs),
    /// Rerun a canned figure experiment and check its expected behavior.
    Reproduce {
        /// One of fig4, fig5a, fig5b, fig6, fig7, fig8.
        figure: String,
        /// `--key value` overrides of the canned configuration.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn default_in(dir: &Path, explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| dir.join(name))
}

fn simulate(config: &ExperimentConfig) -> Result<()> {
    let exp = Experiment::new(config)?;
    let dir = &exp.config.output_dir;
    let times = exp.em_config(0)?.save_times();
    let paths: Vec<_> = (0..exp.config.integrator.paths as u64)
        .map(|p| exp.abm_raw_path(&times, p).map(|states| (times.clone(), states)))
        .collect::<Result<_>>()?;
    let columns: Vec<String> = match &exp.system {
        System::Ppm { .. } => vec!["prey".into(), "predators".into()],
        System::Network { network, .. } if network.num_clusters() > 1 => {
            let d = exp.full_dim() / network.num_clusters();
            (1..=network.num_clusters()).flat_map(|q| (1..=d).map(move |i| format!("c{q}_{i}"))).collect()
        }
        _ => (1..=exp.full_dim()).map(|i| format!("x{i}")).collect(),
    };
    formats::write_series(&dir.join("trajectories.csv"), &columns, &paths)?;
    formats::write_stats(&dir.join("abm_stats.csv"), &exp.abm_ensemble()?)?;
    match &exp.system {
        System::Network { network, .. } => {
            formats::write_network(dir, network)?;
            formats::write_adjacency(&dir.join("adjacency.csv"), network)?;
        }
        System::Ppm { params } => {
            // Path 0 again, keeping the spatial state.
            let start = CountState { prey: exp.config.ppm.initial_prey, predators: exp.config.ppm.initial_predators };
            let mut rng = rng_for(stream_seed(exp.config.seed, streams::ABM), &[0]);
            let mut state = random_state(start, params, &mut rng);
            formats::write_ppm_snapshot(&dir.join("snapshot_initial.csv"), &state)?;
            for _ in 0..exp.config.integrator.t_end.round() as usize {
                ppm_step_with(&mut state, params, &mut rng).map_err(|e| CgError::stage("simulate", e))?;
            }
            formats::write_ppm_snapshot(&dir.join("snapshot_final.csv"), &state)?;
            let tally = analysis::extinction_tally(
                params,
                start,
                exp.config.ppm.extinction_horizon,
                exp.config.integrator.paths,
                stream_seed(exp.config.seed, streams::ABM),
            )?;
            let path = dir.join("extinction.toml");
            std::fs::write(&path, toml::to_string(&tally).expect("tally serializes")).map_err(|e| CgError::io(&path, e))?;
            println!("predators died out first in {} of {} runs", tally.predators_first, tally.runs);
        }
        _ => {}
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    pipeline::init_workers()?;
    match cli.command {
        Command::Simulate(args) => simulate(&args.load()?),
        Command::Estimate(args) => {
            let m = pipeline::run_estimate(&args.load()?)?;
            println!("{} measurements", m.len());
            Ok(())
        }
        Command::Identify { measurements, args } => {
            let config = args.load()?;
            let path = default_in(&config.output_dir, measurements, "measurements.csv");
            let sde = pipeline::run_identify(&config, &path)?;
            print!("{}", formats::model_to_string(&sde));
            Ok(())
        }
        Command::Run(args) => {
            let learned = pipeline::run_pipeline(&args.load()?)?;
            println!(
                "{} measurements, generator rank {}, model written to {}",
                learned.measurements.len(),
                learned.generator.rank,
                learned.experiment.config.output_dir.join("model.toml").display()
            );
            Ok(())
        }
        Command::Predict { model, args } => {
            let config = args.load()?;
            let path = default_in(&config.output_dir, model, "model.toml");
            let stats = analysis::run_predict(&config, &path)?;
            println!("{} paths, {} saved times", stats.num_paths, stats.times.len());
            Ok(())
        }
        Command::Compare { model, reference, args } => {
            let config = args.load()?;
            let path = default_in(&config.output_dir, model, "model.toml");
            let reference = match reference {
                ReferenceArg::AnalyticLimit => Reference::AnalyticLimit,
                ReferenceArg::AbmEnsemble => Reference::AbmEnsemble,
            };
            let report = analysis::run_compare(&config, &path, reference)?;
            print!("{}", toml::to_string(&report).expect("report serializes"));
            Ok(())
        }
        Command::Sweep(args) => {
            for row in analysis::run_sweep(&args.load()?)? {
                println!("N={} k={} m={} drift_rmse={} diffusion_rmse={}", row.population, row.k, row.m, row.drift_rmse, row.diffusion_rmse);
            }
            Ok(())
        }
        Command::Reproduce { figure, overrides } => {
            let mut overrides = parse_overrides(&overrides)?;
            if !overrides.iter().any(|(k, _)| k == "output_dir") {
                overrides.push(("output_dir".into(), format!("out/{figure}")));
            }
            let config = reproduce::figure_config_with(&figure, &overrides)?;
            let checks = reproduce::run_figure(&figure, &config)?;
            let mut failed = Vec::new();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                if !c.passed {
                    failed.push(c.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CgError::Acceptance(failed.join("; ")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
