//! Measurement generation, estimation and identification for a configured
//! experiment, and the ensemble simulations used to validate the result.
//!
//! All randomness derives from the configuration's master seed. Each purpose
//! draws from its own stream (see [`streams`]); within a stream, work items
//! such as measurement points or paths are addressed by index, so results do
//! not depend on the number of worker threads.

use std::path::Path;
use std::time::Instant;

use cgabm_core::gedmd::{identify, GeneratorMatrix, IdentifiedSde, IdentifyOptions, Provenance};
use cgabm_core::km::{
    km_estimate, largest_remainder, lift_macro_to_micro_with, on_the_fly_points, reduce_and_scale,
    sample_simplex_points, Measurement,
};
use cgabm_core::mjp::{gillespie_simulate_with, gillespie_state_at, limit_sde};
use cgabm_core::prey::{ppm_counts, ppm_step_with, random_state, CountState, PpmParams, PpmState};
use cgabm_core::rng::{derive_seed, rng_for, SimRng};
use cgabm_core::sde::{ensemble_chunk, path_chunks, EmConfig, EnsembleStats, Projection, WelfordGrid};
use cgabm_core::voter::{evm_jump_model, make_clustered_network, two_cluster_limit_sde, DtEvm, Network, VoterRates};
use cgabm_core::{JumpModel, MonomialDictionary, PopulationState};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CgError, Result};
use crate::formats::{self, Manifest, MANIFEST_SCHEMA};

/// Stream ids below the master seed.
pub mod streams {
    pub const POINTS: u64 = 1;
    pub const NETWORK: u64 = 2;
    pub const KM: u64 = 3;
    pub const EM: u64 = 4;
    pub const ABM: u64 = 5;
    pub const SWEEP: u64 = 6;
    pub const COLLECT: u64 = 7;
}

pub fn stream_seed(master: u64, stream: u64) -> u64 {
    derive_seed(master, &[stream])
}

/// Sizes the global worker pool from `CGABM_WORKERS` (all cores when unset).
pub fn init_workers() -> Result<()> {
    let Ok(value) = std::env::var("CGABM_WORKERS") else {
        return Ok(());
    };
    let n: usize = value.parse().map_err(|_| CgError::Config(format!("CGABM_WORKERS must be an integer, got {value}")))?;
    // A pool that was already built keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// The agent-based system behind an experiment.
#[derive(Clone, Debug)]
pub enum System {
    /// Well-mixed voter model simulated exactly as a jump process.
    Complete { rates: VoterRates, model: JumpModel },
    /// Voter model on a network, simulated in discrete time.
    Network { rates: VoterRates, network: Network },
    Ppm { params: PpmParams },
    Custom { model: JumpModel },
}

/// A resolved configuration with its network or jump model built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: System,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let config = config.resolved()?;
        let n = config.population_or_default();
        let net_seed = stream_seed(config.seed, streams::NETWORK);
        let system = match config.kind {
            ExperimentKind::CompleteEvm => {
                let rates = config.rates.voter_rates()?;
                let model = evm_jump_model(&rates, n).map_err(|e| CgError::Config(e.to_string()))?;
                System::Complete { rates, model }
            }
            ExperimentKind::ClusteredEvm => {
                let rates = config.rates.voter_rates()?;
                let network = make_clustered_network(&config.cluster_sizes(), config.network.p, net_seed)
                    .map_err(|e| CgError::Config(e.to_string()))?;
                System::Network { rates, network }
            }
            ExperimentKind::RandomNetworkEvm => {
                let rates = config.rates.voter_rates()?;
                let network = Network::erdos_renyi(n as usize, config.network.edge_probability, net_seed)
                    .map_err(|e| CgError::Config(e.to_string()))?;
                System::Network { rates, network }
            }
            ExperimentKind::Ppm => System::Ppm { params: config.ppm.params()? },
            ExperimentKind::Custom => {
                let path = config.custom.model_file.as_ref().expect("validated");
                let model = formats::read_jump_model(path).map_err(|e| CgError::Config(e.to_string()))?;
                if !model.conserves_population() && config.custom.initial_state.len() != model.num_types() {
                    return Err(CgError::Config("custom.initial_state needs one count per type".into()));
                }
                System::Custom { model }
            }
        };
        let exp = Self { config, system };
        if exp.config.integrator.initial_state.len() != exp.full_dim() {
            return Err(CgError::Config(format!(
                "integrator.initial_state has {} entries, the system has {} coordinates",
                exp.config.integrator.initial_state.len(),
                exp.full_dim()
            )));
        }
        Ok(exp)
    }

    fn num_types(&self) -> usize {
        match &self.system {
            System::Complete { rates, .. } | System::Network { rates, .. } => rates.num_types(),
            System::Ppm { .. } => 2,
            System::Custom { model } => model.num_types(),
        }
    }

    /// Coordinates of the raw aggregate state.
    pub fn full_dim(&self) -> usize {
        match &self.system {
            System::Network { network, .. } => network.num_clusters() * self.num_types(),
            _ => self.num_types(),
        }
    }

    /// Blocks of raw coordinates with a conserved sum.
    pub fn conserved_blocks(&self) -> Vec<usize> {
        let d = self.num_types();
        match &self.system {
            System::Complete { .. } => vec![d],
            System::Network { network, .. } => vec![d; network.num_clusters()],
            System::Ppm { .. } => Vec::new(),
            System::Custom { model } => {
                if model.conserves_population() {
                    vec![d]
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Raw states are divided by this before fitting.
    pub fn scale(&self) -> f64 {
        match &self.system {
            System::Complete { model, .. } | System::Custom { model } => model.population_size() as f64,
            System::Network { .. } => 1.0,
            System::Ppm { .. } => self.config.ppm.count_scale,
        }
    }

    /// `N` of the fitted model: agents per unit of the model coordinates.
    pub fn population_size(&self) -> u64 {
        match &self.system {
            System::Network { network, .. } => network.cluster_sizes()[0] as u64,
            System::Ppm { .. } => 1,
            System::Complete { model, .. } | System::Custom { model } => model.population_size(),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.full_dim() - self.conserved_blocks().len()
    }

    pub fn dictionary(&self) -> MonomialDictionary {
        let degree = self.config.dictionary.max_degree.unwrap_or_else(|| match &self.system {
            System::Custom { model } => MonomialDictionary::degree_for_order(model.max_order()),
            _ => 3,
        });
        MonomialDictionary::new(self.model_dim(), degree)
    }

    pub fn lag(&self) -> f64 {
        self.config.sampling.lag.expect("resolved")
    }

    /// Raw state in model coordinates.
    pub fn observe(&self, raw: &[f64]) -> Vec<f64> {
        let s = self.scale();
        let blocks = self.conserved_blocks();
        if blocks.is_empty() {
            return raw.iter().map(|v| v / s).collect();
        }
        let mut out = Vec::with_capacity(self.model_dim());
        let mut start = 0;
        for len in blocks {
            out.extend(raw[start..start + len - 1].iter().map(|v| v / s));
            start += len;
        }
        out
    }

    /// The configured initial state as a realizable raw state.
    pub fn initial_raw(&self) -> Result<Vec<f64>> {
        let c0 = &self.config.integrator.initial_state;
        let bad = |e: cgabm_core::Error| CgError::Config(format!("integrator.initial_state: {e}"));
        Ok(match &self.system {
            System::Complete { model, .. } => {
                largest_remainder(c0, model.population_size() as u32).map_err(bad)?.iter().map(|&v| v as f64).collect()
            }
            System::Network { network, .. } => {
                let d = self.num_types();
                let mut out = Vec::with_capacity(c0.len());
                for (block, size) in c0.chunks(d).zip(network.cluster_sizes()) {
                    let counts = largest_remainder(block, size as u32).map_err(bad)?;
                    out.extend(counts.iter().map(|&v| v as f64 / size as f64));
                }
                out
            }
            System::Ppm { .. } | System::Custom { .. } => {
                if c0.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                    return Err(CgError::Config("integrator.initial_state must hold whole counts".into()));
                }
                c0.clone()
            }
        })
    }

    pub fn initial_model_state(&self) -> Result<Vec<f64>> {
        Ok(self.observe(&self.initial_raw()?))
    }

    /// Projection that keeps integrated states admissible.
    pub fn projection(&self) -> Projection {
        let blocks = self.conserved_blocks();
        if blocks.is_empty() {
            Projection::ClipNonnegative
        } else {
            Projection::Simplex { blocks: blocks.iter().map(|b| b - 1).collect(), reduced: true }
        }
    }

    /// Measurement points in raw coordinates.
    pub fn measurement_points(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.config.sampling.m.expect("resolved");
        let mut rng = rng_for(self.config.seed, &[streams::POINTS]);
        let stage = |e| CgError::stage("measurements", e);
        match &self.system {
            System::Complete { model, .. } | System::Custom { model } if model.conserves_population() => {
                let n = model.population_size();
                let points = sample_simplex_points(n, model.num_types(), m, &mut rng).map_err(stage)?;
                Ok(points.iter().map(PopulationState::as_f64).collect())
            }
            System::Network { network, .. } => {
                // Each cluster's frequencies are drawn independently from its own simplex.
                let d = self.num_types();
                let sizes = network.cluster_sizes();
                (0..m)
                    .map(|_| {
                        let mut point = Vec::with_capacity(self.full_dim());
                        for &size in &sizes {
                            let x = sample_simplex_points(size as u64, d, 1, &mut rng).map_err(stage)?;
                            point.extend(x[0].counts.iter().map(|&c| c as f64 / size as f64));
                        }
                        Ok(point)
                    })
                    .collect()
            }
            System::Custom { model } => {
                let x0 = PopulationState::new(self.config.custom.initial_state.clone());
                let lag = self.lag();
                let t_end = self.config.custom.collection_time;
                let snapshots = (0..self.config.custom.collection_runs)
                    .map(|r| {
                        let mut run_rng = rng_for(self.config.seed, &[streams::COLLECT, r as u64]);
                        let traj = gillespie_simulate_with(model, &x0, t_end, &mut run_rng).map_err(stage)?;
                        let steps = (t_end / lag).floor() as usize;
                        Ok((0..=steps).map(|s| traj.state_at(s as f64 * lag).counts.clone()).collect::<Vec<_>>())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let points = on_the_fly_points(snapshots.into_iter().flatten(), m, &mut rng);
                Ok(points.iter().map(|p| p.iter().map(|&c| c as f64).collect()).collect())
            }
            System::Ppm { params } => {
                let steps = self.lag().round() as usize;
                let start = CountState { prey: self.config.ppm.initial_prey, predators: self.config.ppm.initial_predators };
                let runs: Vec<Vec<Vec<u32>>> = (0..self.config.ppm.collection_runs)
                    .into_par_iter()
                    .map(|r| {
                        let mut run_rng = rng_for(self.config.seed, &[streams::COLLECT, r as u64]);
                        collect_ppm_run(start, params, self.config.ppm.collection_steps, steps, &mut run_rng)
                    })
                    .collect();
                let points = on_the_fly_points(runs.into_iter().flatten(), m, &mut rng);
                Ok(points.iter().map(|p| p.iter().map(|&c| c as f64).collect()).collect())
            }
            System::Complete { .. } => unreachable!("voter jump models conserve the population"),
        }
    }

    /// One draw of the raw state a lag after `point`.
    pub fn sample_after(&self, point: &[f64], lag: f64, rng: &mut SimRng) -> cgabm_core::Result<Vec<f64>> {
        match &self.system {
            System::Complete { model, .. } | System::Custom { model } => {
                let x0 = PopulationState::new(point.iter().map(|&v| v.round() as u32).collect());
                Ok(gillespie_state_at(model, &x0, lag, rng)?.as_f64())
            }
            System::Network { rates, network } => {
                let state = lift_macro_to_micro_with(point, network, rates.num_types(), rng)?;
                let mut sim = DtEvm::new(network, rates, state)?;
                sim.run_for(lag, rng);
                Ok(sim.aggregate().freqs)
            }
            System::Ppm { params } => {
                let counts = CountState { prey: point[0].round() as u64, predators: point[1].round() as u64 };
                let mut state = random_state(counts, params, rng);
                for _ in 0..lag.round() as usize {
                    ppm_step_with(&mut state, params, rng)?;
                }
                Ok(ppm_counts(&state).as_f64().to_vec())
            }
        }
    }

    /// Kramers–Moyal estimates at every point, in raw coordinates. Point `i`
    /// uses the seed `derive_seed(master, [KM, i])`.
    pub fn estimate(&self, points: &[Vec<f64>]) -> Result<Vec<Measurement>> {
        let k = self.config.sampling.k;
        let lag = self.lag();
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let seed = derive_seed(self.config.seed, &[streams::KM, i as u64]);
                km_estimate(|x, t, rng| self.sample_after(x, t, rng), p, k, lag, seed)
                    .map_err(|e| CgError::stage("measurements", e))
            })
            .collect()
    }

    /// Reduced and scaled measurements in model coordinates.
    pub fn reduce(&self, raw: &[Measurement]) -> Result<Vec<Measurement>> {
        let scale = self.scale();
        reduce_and_scale(raw, scale, &self.conserved_blocks(), scale != 1.0).map_err(|e| CgError::stage("reduce", e))
    }

    /// Limit SDE of the system in model coordinates, where one exists.
    pub fn reference_sde(&self) -> Result<IdentifiedSde> {
        let dict = self.dictionary();
        let n = self.population_size();
        let contract = |e: cgabm_core::Error| CgError::Config(format!("reference model: {e}"));
        let (drift, diffusion) = match &self.system {
            System::Complete { model, .. } | System::Custom { model } => limit_sde(model, &dict).map_err(contract)?,
            System::Network { rates, network } if self.config.kind == ExperimentKind::RandomNetworkEvm => {
                // Mean-field reference: the same agents on a complete network.
                let model = evm_jump_model(rates, network.num_agents() as u64).map_err(contract)?;
                limit_sde(&model, &dict).map_err(contract)?
            }
            System::Network { rates, network } => {
                let sizes = network.cluster_sizes();
                if sizes.len() != 2 || sizes[0] != sizes[1] {
                    return Err(CgError::Config("the analytic reference needs two clusters of equal size".into()));
                }
                two_cluster_limit_sde(rates, self.config.network.p, n, &dict).map_err(contract)?
            }
            System::Ppm { .. } => return Err(CgError::Config("the predator-prey model has no analytic limit".into())),
        };
        IdentifiedSde::new(drift, diffusion, n).map_err(contract)
    }

    pub fn em_config(&self, seed: u64) -> Result<EmConfig> {
        let i = &self.config.integrator;
        Ok(EmConfig::new(i.dt.expect("resolved"), i.t_end, i.paths, seed)
            .map_err(|e| CgError::Config(e.to_string()))?
            .with_projection(self.projection())
            .with_save_stride(i.save_stride))
    }

    /// Euler–Maruyama ensemble of `sde` from the configured initial state.
    pub fn model_ensemble(&self, sde: &IdentifiedSde, seed: u64) -> Result<EnsembleStats> {
        let cfg = self.em_config(seed)?;
        let c0 = self.initial_model_state()?;
        let grids = path_chunks(cfg.num_paths)
            .into_par_iter()
            .map(|range| ensemble_chunk(sde, &c0, &cfg, range))
            .collect::<cgabm_core::Result<Vec<_>>>()
            .map_err(|e| CgError::stage("simulate", e))?;
        Ok(merge_grids(grids, cfg.save_times(), c0.len()))
    }

    /// Observed model-coordinate states of one ABM path at `times`.
    pub fn abm_path(&self, times: &[f64], path: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.abm_raw_path(times, path)?.iter().map(|x| self.observe(x)).collect())
    }

    /// Raw aggregate states of ABM path `path` at `times`, drawn from
    /// `rng_for(derive_seed(master, [ABM]), [path])`.
    pub fn abm_raw_path(&self, times: &[f64], path: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = rng_for(stream_seed(self.config.seed, streams::ABM), &[path]);
        let raw0 = self.initial_raw()?;
        let stage = |e| CgError::stage("simulate", e);
        let mut out = Vec::with_capacity(times.len());
        let mut now = 0.0;
        match &self.system {
            System::Complete { model, .. } | System::Custom { model } => {
                let mut x = PopulationState::new(raw0.iter().map(|&v| v as u32).collect());
                for &t in times {
                    if t > now {
                        x = gillespie_state_at(model, &x, t - now, &mut rng).map_err(stage)?;
                        now = t;
                    }
                    out.push(x.as_f64());
                }
            }
            System::Network { rates, network } => {
                let state = lift_macro_to_micro_with(&raw0, network, rates.num_types(), &mut rng).map_err(stage)?;
                let mut sim = DtEvm::new(network, rates, state).map_err(stage)?;
                for &t in times {
                    sim.run_for(t - now, &mut rng);
                    now = t;
                    out.push(sim.aggregate().freqs);
                }
            }
            System::Ppm { params } => {
                let counts = CountState { prey: raw0[0] as u64, predators: raw0[1] as u64 };
                let mut state = random_state(counts, params, &mut rng);
                for &t in times {
                    for _ in 0..(t - now).round() as usize {
                        ppm_step_with(&mut state, params, &mut rng).map_err(stage)?;
                    }
                    now = t;
                    out.push(ppm_counts(&state).as_f64().to_vec());
                }
            }
        }
        Ok(out)
    }

    /// Moments of `integrator.paths` ABM paths at the integrator's save times.
    pub fn abm_ensemble(&self) -> Result<EnsembleStats> {
        let times = self.em_config(0)?.save_times();
        let dim = self.model_dim();
        let grids = path_chunks(self.config.integrator.paths)
            .into_par_iter()
            .map(|range| {
                let mut grid = WelfordGrid::new(times.len(), dim);
                for p in range {
                    grid.push(&self.abm_path(&times, p as u64)?);
                }
                Ok(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(merge_grids(grids, times, dim))
    }
}

fn merge_grids(grids: Vec<WelfordGrid>, times: Vec<f64>, dim: usize) -> EnsembleStats {
    let mut total = WelfordGrid::new(times.len(), dim);
    for g in &grids {
        total.merge(g);
    }
    total.finish(times)
}

/// Count states every `stride` steps until a breed dies out or the agent cap is hit.
fn collect_ppm_run(start: CountState, params: &PpmParams, steps: usize, stride: usize, rng: &mut SimRng) -> Vec<Vec<u32>> {
    let snapshot = |s: &PpmState| {
        let c = ppm_counts(s);
        vec![c.prey as u32, c.predators as u32]
    };
    let mut state = random_state(start, params, rng);
    let mut out = vec![snapshot(&state)];
    for step in 1..=steps {
        if ppm_step_with(&mut state, params, rng).is_err() {
            break;
        }
        let c = ppm_counts(&state);
        if step % stride == 0 {
            out.push(snapshot(&state));
        }
        if c.prey == 0 || c.predators == 0 {
            break;
        }
    }
    out
}

/// Everything one pipeline run produces.
#[derive(Clone, Debug)]
pub struct Learned {
    pub experiment: Experiment,
    pub raw: Vec<Measurement>,
    pub measurements: Vec<Measurement>,
    pub generator: GeneratorMatrix,
    pub sde: IdentifiedSde,
    pub manifest: Manifest,
}

fn base_manifest(exp: &Experiment) -> Result<Manifest> {
    let c = &exp.config;
    let mut seeds = std::collections::BTreeMap::new();
    for (name, id) in [
        ("points", streams::POINTS),
        ("network", streams::NETWORK),
        ("km", streams::KM),
        ("em", streams::EM),
        ("abm", streams::ABM),
        ("collect", streams::COLLECT),
    ] {
        seeds.insert(name.to_string(), stream_seed(c.seed, id));
    }
    Ok(Manifest {
        schema: MANIFEST_SCHEMA.into(),
        config_hash: c.config_hash()?,
        kind: toml::Value::try_from(c.kind).map(|v| v.as_str().unwrap_or_default().to_string()).unwrap_or_default(),
        seed: c.seed,
        seeds,
        num_points: c.sampling.m.expect("resolved"),
        samples_per_point: c.sampling.k,
        lag: exp.lag(),
        population_size: exp.population_size(),
        ..Manifest::default()
    })
}

/// Tracks stage timings and records the failing stage.
struct Stages {
    manifest: Manifest,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.manifest.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        match &out {
            Ok(_) => self.manifest.completed_stages.push(name.to_string()),
            Err(e) => {
                self.manifest.failed_stage = Some(name.to_string());
                self.manifest.error = Some(e.to_string());
            }
        }
        out
    }
}

/// Raw measurements for a built experiment.
pub fn generate_measurements(exp: &Experiment) -> Result<Vec<Measurement>> {
    let points = exp.measurement_points()?;
    if points.is_empty() {
        return Err(CgError::stage("measurements", "no measurement points were collected"));
    }
    exp.estimate(&points)
}

/// Fit and extraction from reduced measurements.
pub fn identify_model(exp: &Experiment, measurements: &[Measurement]) -> Result<(IdentifiedSde, GeneratorMatrix)> {
    let (sde, generator) = identify(measurements, &exp.dictionary(), exp.population_size(), IdentifyOptions::default())
        .map_err(|e| CgError::stage("identify", e))?;
    let provenance = Provenance {
        num_points: measurements.len(),
        samples_per_point: exp.config.sampling.k,
        lag: exp.lag(),
        seed: exp.config.seed,
        source: format!("{:?}", exp.config.kind),
    };
    Ok((sde.with_provenance(provenance), generator))
}

/// Runs every stage in memory.
pub fn learn(exp: &Experiment) -> Result<Learned> {
    learn_with(exp, &mut Stages { manifest: base_manifest(exp)? })
}

fn learn_with(exp: &Experiment, stages: &mut Stages) -> Result<Learned> {
    let raw = stages.run("measurements", || generate_measurements(exp))?;
    let measurements = stages.run("reduce", || exp.reduce(&raw))?;
    let (sde, generator) = stages.run("identify", || identify_model(exp, &measurements))?;
    let mut manifest = stages.manifest.clone();
    manifest.num_points = measurements.len();
    manifest.generator_rank = Some(generator.rank);
    manifest.rank_deficient = Some(generator.rank_deficient);
    manifest.underdetermined = Some(generator.underdetermined);
    Ok(Learned { experiment: exp.clone(), raw, measurements, generator, sde, manifest })
}

/// Runs the pipeline and writes `measurements.csv`, `generator.csv`,
/// `model.toml`, `config.toml` and `manifest.toml` to the output directory.
/// On failure, whatever was completed is still written along with the manifest.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Learned> {
    let exp = Experiment::new(config)?;
    let dir = exp.config.output_dir.clone();
    write_config(&dir, &exp)?;
    let mut stages = Stages { manifest: base_manifest(&exp)? };
    let result = learn_with(&exp, &mut stages);
    match &result {
        Ok(l) => {
            formats::write_measurements(&dir.join("measurements.csv"), &l.measurements)?;
            formats::write_generator(&dir.join("generator.csv"), &l.generator)?;
            formats::write_model(&dir.join("model.toml"), &l.sde)?;
            formats::write_manifest(&dir.join("manifest.toml"), &l.manifest)?;
        }
        Err(_) => {
            formats::write_manifest(&dir.join("manifest.toml"), &stages.manifest)?;
        }
    }
    result
}

/// Measurements only: writes `measurements.csv` and the manifest.
pub fn run_estimate(config: &ExperimentConfig) -> Result<Vec<Measurement>> {
    let exp = Experiment::new(config)?;
    let dir = exp.config.output_dir.clone();
    write_config(&dir, &exp)?;
    let mut stages = Stages { manifest: base_manifest(&exp)? };
    let result = stages
        .run("measurements", || generate_measurements(&exp))
        .and_then(|raw| stages.run("reduce", || exp.reduce(&raw)));
    if let Ok(m) = &result {
        stages.manifest.num_points = m.len();
        formats::write_measurements(&dir.join("measurements.csv"), m)?;
    }
    formats::write_manifest(&dir.join("manifest.toml"), &stages.manifest)?;
    result
}

/// Identification from a persisted measurement table.
pub fn run_identify(config: &ExperimentConfig, measurements: &Path) -> Result<IdentifiedSde> {
    let exp = Experiment::new(config)?;
    let dir = exp.config.output_dir.clone();
    let data = formats::read_measurements(measurements)?;
    let (sde, generator) = identify_model(&exp, &data)?;
    formats::write_generator(&dir.join("generator.csv"), &generator)?;
    formats::write_model(&dir.join("model.toml"), &sde)?;
    Ok(sde)
}

fn write_config(dir: &Path, exp: &Experiment) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CgError::io(dir, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, exp.config.to_toml_string()).map_err(|e| CgError::io(&path, e))?;
    if let System::Network { network, .. } = &exp.system {
        formats::write_network(dir, network)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!("kind = \"{kind}\"\nseed = 5\n{extra}")).unwrap()
    }

    #[test]
    fn coordinates_follow_the_kind() {
        let c = Experiment::new(&small("complete_evm", "")).unwrap();
        assert_eq!((c.full_dim(), c.model_dim(), c.population_size()), (3, 2, 10));
        assert_eq!(c.observe(&[2.0, 7.0, 1.0]), vec![0.2, 0.7]);
        assert_eq!(c.initial_model_state().unwrap(), vec![0.2, 0.7]);
        let n = Experiment::new(&small("clustered_evm", "population = 20")).unwrap();
        assert_eq!((n.full_dim(), n.model_dim(), n.population_size()), (6, 4, 20));
        assert_eq!(n.initial_model_state().unwrap(), vec![0.85, 0.1, 0.2, 0.5]);
        let p = Experiment::new(&small("ppm", "")).unwrap();
        assert_eq!((p.full_dim(), p.model_dim(), p.population_size()), (2, 2, 1));
        assert_eq!(p.initial_model_state().unwrap(), vec![320.0, 40.0]);
        assert_eq!(p.projection(), Projection::ClipNonnegative);
    }

    #[test]
    fn complete_network_measurements_are_reproducible_across_pools() {
        let exp = Experiment::new(&small("complete_evm", "[sampling]\nk = 20")).unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| learn(&exp).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.measurements, b.measurements);
        assert_eq!(a.sde, b.sde);
        assert_eq!(a.measurements.len(), 7);
        for m in &a.measurements {
            assert_eq!(m.dim(), 2);
            assert!(m.point.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(m.sample_count, 20);
        }
    }

    #[test]
    fn clustered_points_are_independent_per_cluster() {
        let exp = Experiment::new(&small("clustered_evm", "population = 10\n[sampling]\nm = 30\nk = 5")).unwrap();
        let points = exp.measurement_points().unwrap();
        assert_eq!(points.len(), 30);
        for p in &points {
            assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((p[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(points.iter().any(|p| p[..3] != p[3..]));
        let reduced = exp.reduce(&exp.estimate(&points[..3]).unwrap()).unwrap();
        assert_eq!(reduced[0].dim(), 4);
    }

    #[test]
    fn ppm_points_are_distinct_count_states() {
        let exp = Experiment::new(&small("ppm", "[ppm]\ncollection_runs = 2\ncollection_steps = 20\n[sampling]\nm = 15\nk = 2"))
            .unwrap();
        let points = exp.measurement_points().unwrap();
        assert!(!points.is_empty() && points.len() <= 15);
        let mut sorted = points.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), points.len());
        let m = exp.estimate(&points[..1]).unwrap();
        assert_eq!(m[0].dim(), 2);
    }

    #[test]
    fn abm_and_model_ensembles_share_the_save_grid() {
        let exp = Experiment::new(&small(
            "complete_evm",
            "population = 50\n[integrator]\npaths = 40\nt_end = 1.0\ndt = 0.01\nsave_stride = 10",
        ))
        .unwrap();
        let abm = exp.abm_ensemble().unwrap();
        let reference = exp.reference_sde().unwrap();
        let model = exp.model_ensemble(&reference, 3).unwrap();
        assert_eq!(abm.times.len(), 11);
        assert_eq!(abm.times, model.times);
        assert_eq!(abm.mean[0], vec![0.2, 0.7]);
        for (a, b) in abm.mean.iter().zip(&model.mean) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 0.08, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn failed_stage_is_recorded_in_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small("complete_evm", "[sampling]\nm = 100");
        cfg.output_dir = dir.path().to_path_buf();
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let manifest = formats::read_manifest(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(manifest.failed_stage.as_deref(), Some("measurements"));
        assert!(dir.path().join("config.toml").exists());
    }
}
