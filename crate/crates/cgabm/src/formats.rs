//! On-disk formats: CSV tables with a header row and versioned TOML documents.
//!
//! Floating-point values are written in Rust's shortest round-trip notation
//! (see [`num`]), so every table and model file reads back bit-exactly.

use std::fs;
use std::path::Path;

use cgabm_core::dictionary::{upper_index, DiffusionField, MonomialDictionary, PolynomialField};
use cgabm_core::gedmd::{GeneratorMatrix, IdentifiedSde, Provenance};
use cgabm_core::km::Measurement;
use cgabm_core::prey::{Breed, CountState, PpmState};
use cgabm_core::sde::EnsembleStats;
use cgabm_core::voter::Network;
use cgabm_core::{JumpModel, Trajectory, TransitionRule};
use serde::{Deserialize, Serialize};

use crate::error::{CgError, Result};

pub const MODEL_SCHEMA: &str = "cgabm-sde/1";
pub const JUMP_MODEL_SCHEMA: &str = "cgabm-jump/1";

/// Shortest decimal that parses back to `v`, in exponent form when very small or large.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CgError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| CgError::format(path, e))
}

/// Writes a table; every row must match the header length.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| CgError::format(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CgError::format(path, e))?;
    }
    w.flush().map_err(|e| CgError::io(path, e))
}

/// Header and rows of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CgError::format(path, e))?;
    let header = r.headers().map_err(|e| CgError::format(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| CgError::format(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| CgError::format(path, format!("cannot parse `{s}`: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CgError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CgError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CgError::io(path, e))
}

// Measurements -----------------------------------------------------------

fn measurement_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    h.extend((1..=d).map(|i| format!("b{i}")));
    for i in 1..=d {
        for j in i..=d {
            h.push(format!("a{i}_{j}"));
        }
    }
    h.push("k".into());
    h.push("tau".into());
    h
}

/// One row per measurement: point, drift, upper-triangular diffusion, `k`, `tau`.
pub fn write_measurements(path: &Path, measurements: &[Measurement]) -> Result<()> {
    let d = measurements.first().map_or(0, Measurement::dim);
    let rows = measurements.iter().map(|m| {
        let mut row: Vec<String> = m.point.iter().chain(&m.drift).map(|&v| num(v)).collect();
        for i in 0..d {
            for j in i..d {
                row.push(num(m.diffusion_entry(i, j)));
            }
        }
        row.push(m.sample_count.to_string());
        row.push(num(m.lag));
        row
    });
    write_table(path, &measurement_header(d), rows)
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let (header, rows) = read_table(path)?;
    let d = (1..=header.len()).find(|&d| measurement_header(d).len() == header.len());
    let d = d.filter(|&d| measurement_header(d) == header).ok_or_else(|| CgError::format(path, "not a measurement table"))?;
    rows.iter()
        .map(|row| {
            let v = |k: usize| parse::<f64>(path, &row[k]);
            let point = (0..d).map(v).collect::<Result<Vec<_>>>()?;
            let drift = (d..2 * d).map(v).collect::<Result<Vec<_>>>()?;
            let mut diffusion = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    let a = v(2 * d + upper_index(d, i, j))?;
                    diffusion[i * d + j] = a;
                    diffusion[j * d + i] = a;
                }
            }
            let n = row.len();
            Ok(Measurement { point, drift, diffusion, sample_count: parse(path, &row[n - 2])?, lag: v(n - 1)? })
        })
        .collect()
}

// Model files ------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema: String,
    dim: usize,
    max_degree: u32,
    population_size: u64,
    /// Exponent vectors in dictionary order.
    monomials: Vec<Vec<u32>>,
    /// One coefficient row per drift component.
    drift: Vec<Vec<f64>>,
    /// One coefficient row per upper-triangular diffusion entry `(0,0), (0,1), ..`.
    diffusion: Vec<Vec<f64>>,
    provenance: Option<ProvenanceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceFile {
    num_points: usize,
    samples_per_point: usize,
    lag: f64,
    seed: u64,
    source: String,
}

pub fn model_to_string(sde: &IdentifiedSde) -> String {
    let dict = sde.dictionary();
    let file = ModelFile {
        schema: MODEL_SCHEMA.into(),
        dim: sde.dim(),
        max_degree: dict.max_degree(),
        population_size: sde.population_size,
        monomials: dict.indices().to_vec(),
        drift: sde.drift.coefficients().to_vec(),
        diffusion: sde.diffusion.entries().coefficients().to_vec(),
        provenance: sde.provenance.as_ref().map(|p| ProvenanceFile {
            num_points: p.num_points,
            samples_per_point: p.samples_per_point,
            lag: p.lag,
            seed: p.seed,
            source: p.source.clone(),
        }),
    };
    toml::to_string(&file).expect("model serializes")
}

pub fn model_from_str(text: &str) -> std::result::Result<IdentifiedSde, String> {
    let file: ModelFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.schema != MODEL_SCHEMA {
        return Err(format!("unsupported schema `{}`, expected `{MODEL_SCHEMA}`", file.schema));
    }
    let dict = MonomialDictionary::from_indices(file.dim, file.monomials).map_err(|e| e.to_string())?;
    if dict.max_degree() != file.max_degree {
        return Err("max_degree does not match the monomial list".into());
    }
    let drift = PolynomialField::new(dict.clone(), file.drift).map_err(|e| e.to_string())?;
    let entries = PolynomialField::new(dict, file.diffusion).map_err(|e| e.to_string())?;
    let diffusion = DiffusionField::new(file.dim, entries).map_err(|e| e.to_string())?;
    let mut sde = IdentifiedSde::new(drift, diffusion, file.population_size).map_err(|e| e.to_string())?;
    sde.provenance = file.provenance.map(|p| Provenance {
        num_points: p.num_points,
        samples_per_point: p.samples_per_point,
        lag: p.lag,
        seed: p.seed,
        source: p.source,
    });
    Ok(sde)
}

pub fn write_model(path: &Path, sde: &IdentifiedSde) -> Result<()> {
    write_text(path, &model_to_string(sde))
}

pub fn read_model(path: &Path) -> Result<IdentifiedSde> {
    model_from_str(&read_text(path)?).map_err(|e| CgError::format(path, e))
}

/// Generator matrix with row and column labels; column `k` holds `L psi_k`.
pub fn write_generator(path: &Path, generator: &GeneratorMatrix) -> Result<()> {
    let dict = generator.dictionary();
    let n = dict.len();
    let mut header = vec!["psi".to_string()];
    header.extend((0..n).map(|k| format!("L[{}]", dict.name(k))));
    let rows = (0..n).map(|i| {
        let mut row = vec![dict.name(i)];
        row.extend((0..n).map(|k| num(generator.entry(i, k))));
        row
    });
    write_table(path, &header, rows)
}

/// Ensemble mean and standard deviation per saved time.
pub fn write_stats(path: &Path, stats: &EnsembleStats) -> Result<()> {
    let d = stats.mean.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("mean_{i}")));
    header.extend((1..=d).map(|i| format!("std_{i}")));
    let rows = (0..stats.times.len()).map(|t| {
        let mut row = vec![num(stats.times[t])];
        row.extend(stats.mean[t].iter().chain(&stats.std[t]).map(|&v| num(v)));
        row
    });
    write_table(path, &header, rows)
}

// Jump models ------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpModelFile {
    schema: String,
    num_types: usize,
    population_size: u64,
    rules: Vec<RuleFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    reactants: Vec<u32>,
    products: Vec<u32>,
    rate: f64,
}

pub fn jump_model_to_string(model: &JumpModel) -> String {
    let file = JumpModelFile {
        schema: JUMP_MODEL_SCHEMA.into(),
        num_types: model.num_types(),
        population_size: model.population_size(),
        rules: model
            .rules()
            .iter()
            .map(|r| RuleFile { reactants: r.reactants().to_vec(), products: r.products().to_vec(), rate: r.rate() })
            .collect(),
    };
    toml::to_string(&file).expect("jump model serializes")
}

pub fn jump_model_from_str(text: &str) -> std::result::Result<JumpModel, String> {
    let file: JumpModelFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.schema != JUMP_MODEL_SCHEMA {
        return Err(format!("unsupported schema `{}`, expected `{JUMP_MODEL_SCHEMA}`", file.schema));
    }
    let rules = file
        .rules
        .into_iter()
        .map(|r| TransitionRule::new(r.reactants, r.products, r.rate))
        .collect::<cgabm_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    JumpModel::new(file.num_types, rules, file.population_size).map_err(|e| e.to_string())
}

pub fn read_jump_model(path: &Path) -> Result<JumpModel> {
    jump_model_from_str(&read_text(path)?).map_err(|e| CgError::format(path, e))
}

pub fn write_jump_model(path: &Path, model: &JumpModel) -> Result<()> {
    write_text(path, &jump_model_to_string(model))
}

// Networks ---------------------------------------------------------------

/// `edges.csv` (`source,target`) and `clusters.csv` (`agent,cluster`), 1-based.
pub fn write_network(dir: &Path, network: &Network) -> Result<()> {
    let edges = network.edges().into_iter().map(|(a, b)| vec![(a + 1).to_string(), (b + 1).to_string()]);
    write_table(&dir.join("edges.csv"), &["source".into(), "target".into()], edges)?;
    let clusters =
        (0..network.num_agents()).map(|a| vec![(a + 1).to_string(), (network.cluster_of(a) + 1).to_string()]);
    write_table(&dir.join("clusters.csv"), &["agent".into(), "cluster".into()], clusters)
}

pub fn read_network(dir: &Path) -> Result<Network> {
    let cpath = dir.join("clusters.csv");
    let (_, crows) = read_table(&cpath)?;
    let mut cluster_of = vec![0usize; crows.len()];
    for row in &crows {
        let agent: usize = parse(&cpath, &row[0])?;
        let cluster: usize = parse(&cpath, &row[1])?;
        if agent == 0 || agent > crows.len() || cluster == 0 {
            return Err(CgError::format(&cpath, "agent and cluster ids are 1-based"));
        }
        cluster_of[agent - 1] = cluster - 1;
    }
    let epath = dir.join("edges.csv");
    let (_, erows) = read_table(&epath)?;
    let edges = erows
        .iter()
        .map(|r| {
            let a: usize = parse(&epath, &r[0])?;
            let b: usize = parse(&epath, &r[1])?;
            if a == 0 || b == 0 {
                return Err(CgError::format(&epath, "agent ids are 1-based"));
            }
            Ok((a - 1, b - 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_edges(cluster_of.len(), &edges, cluster_of).map_err(|e| CgError::format(dir, e))
}

/// Dense 0/1 adjacency matrix with an `agent` column and one column per agent.
pub fn write_adjacency(path: &Path, network: &Network) -> Result<()> {
    let n = network.num_agents();
    let mut header = vec!["agent".to_string()];
    header.extend((1..=n).map(|j| j.to_string()));
    let adj = network.dense_adjacency();
    let rows = adj.into_iter().enumerate().map(|(i, row)| {
        let mut r = vec![(i + 1).to_string()];
        r.extend(row.into_iter().map(|v| v.to_string()));
        r
    });
    write_table(path, &header, rows)
}

// Trajectories -----------------------------------------------------------

/// Jump-process paths as `path,time,x1,..` rows, every jump included.
pub fn write_jump_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let d = trajectories.first().and_then(|t| t.states.first()).map_or(0, |s| s.counts.len());
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    let rows = trajectories.iter().enumerate().flat_map(|(p, traj)| {
        traj.times.iter().zip(&traj.states).map(move |(t, s)| {
            let mut row = vec![p.to_string(), num(*t)];
            row.extend(s.counts.iter().map(u32::to_string));
            row
        })
    });
    write_table(path, &header, rows)
}

/// Real-valued series `path,time,<columns>`.
pub fn write_series(path: &Path, columns: &[String], series: &[(Vec<f64>, Vec<Vec<f64>>)]) -> Result<()> {
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend(columns.iter().cloned());
    let rows = series.iter().enumerate().flat_map(|(p, (times, states))| {
        times.iter().zip(states).map(move |(t, s)| {
            let mut row = vec![p.to_string(), num(*t)];
            row.extend(s.iter().map(|&v| num(v)));
            row
        })
    });
    write_table(path, &header, rows)
}

/// Predator-prey counts per step, `path,step,prey,predators`.
pub fn write_counts(path: &Path, runs: &[Vec<CountState>]) -> Result<()> {
    let header = ["path", "step", "prey", "predators"].map(String::from);
    let rows = runs.iter().enumerate().flat_map(|(p, run)| {
        run.iter().enumerate().map(move |(s, c)| vec![p.to_string(), s.to_string(), c.prey.to_string(), c.predators.to_string()])
    });
    write_table(path, &header, rows)
}

/// Agent positions and breeds, `x,y,breed`.
pub fn write_ppm_snapshot(path: &Path, state: &PpmState) -> Result<()> {
    let header = ["x", "y", "breed"].map(String::from);
    let rows = state.agents.iter().map(|a| {
        let breed = match a.breed {
            Breed::Prey => "prey",
            Breed::Predator => "predator",
        };
        vec![num(a.x), num(a.y), breed.to_string()]
    });
    write_table(path, &header, rows)
}

// Manifests --------------------------------------------------------------

pub const MANIFEST_SCHEMA: &str = "cgabm-manifest/1";

/// Record of a pipeline run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config_hash: String,
    pub kind: String,
    pub seed: u64,
    /// Derived seeds per random stream.
    pub seeds: std::collections::BTreeMap<String, u64>,
    pub num_points: usize,
    pub samples_per_point: usize,
    pub lag: f64,
    pub population_size: u64,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// Wall-clock seconds per stage.
    pub timings: std::collections::BTreeMap<String, f64>,
    pub generator_rank: Option<usize>,
    pub rank_deficient: Option<bool>,
    pub underdetermined: Option<bool>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_text(path, &toml::to_string(manifest).expect("manifest serializes"))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    toml::from_str(&read_text(path)?).map_err(|e| CgError::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgabm_core::mjp::limit_sde;
    use cgabm_core::voter::{evm_jump_model, make_clustered_network, VoterRates};
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO | prop::num::f64::NEGATIVE
    }

    proptest! {
        #[test]
        fn model_files_round_trip_bit_exactly(coefs in prop::collection::vec(finite(), 50), n in 1u64..100_000) {
            let dict = MonomialDictionary::new(2, 3);
            let drift = PolynomialField::new(dict.clone(), vec![coefs[..10].to_vec(), coefs[10..20].to_vec()]).unwrap();
            let rows = (0..3).map(|r| coefs[20 + 10 * r..30 + 10 * r].to_vec()).collect();
            let diffusion = DiffusionField::new(2, PolynomialField::new(dict, rows).unwrap()).unwrap();
            let sde = IdentifiedSde::new(drift, diffusion, n).unwrap().with_provenance(Provenance {
                num_points: 7, samples_per_point: 100, lag: coefs[49].abs(), seed: 3, source: "test".into(),
            });
            let back = model_from_str(&model_to_string(&sde)).unwrap();
            prop_assert_eq!(back.dictionary(), sde.dictionary());
            for (a, b) in back.drift.coefficients().iter().flatten().zip(sde.drift.coefficients().iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let (x, y) = (back.diffusion.entries().coefficients(), sde.diffusion.entries().coefficients());
            for (a, b) in x.iter().flatten().zip(y.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, sde);
        }

        #[test]
        fn measurement_tables_round_trip(values in prop::collection::vec(finite(), 11)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            let m = Measurement {
                point: values[0..2].to_vec(),
                drift: values[2..4].to_vec(),
                diffusion: vec![values[4], values[5], values[5], values[6]],
                sample_count: 12,
                lag: 0.01,
            };
            write_measurements(&path, &[m.clone(), m.clone()]).unwrap();
            prop_assert_eq!(read_measurements(&path).unwrap(), vec![m.clone(), m]);
        }
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let dict = MonomialDictionary::new(2, 3);
        let model = evm_jump_model(&VoterRates::reference(), 10).unwrap();
        let (b, a) = limit_sde(&model, &dict).unwrap();
        let text = model_to_string(&IdentifiedSde::new(b, a, 10).unwrap()).replace(MODEL_SCHEMA, "other/2");
        assert!(model_from_str(&text).unwrap_err().contains("schema"));
    }

    #[test]
    fn jump_models_and_networks_round_trip() {
        let model = evm_jump_model(&VoterRates::reference(), 10).unwrap();
        assert_eq!(jump_model_from_str(&jump_model_to_string(&model)).unwrap(), model);
        let dir = tempfile::tempdir().unwrap();
        let net = make_clustered_network(&[5, 4], 0.3, 2).unwrap();
        write_network(dir.path(), &net).unwrap();
        assert_eq!(read_network(dir.path()).unwrap(), net);
        let (header, rows) = read_table(&dir.path().join("clusters.csv")).unwrap();
        assert_eq!(header, ["agent", "cluster"]);
        assert_eq!(rows[0], ["1", "1"]);
        assert_eq!(rows[8], ["9", "2"]);
    }
}
