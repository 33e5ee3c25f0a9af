//! Extended voter model on interaction networks.
//!
//! Agents carry one of `d` types and switch either by imitating a neighbor
//! (rate `gamma_ij` scaled by the fraction of type-`j` neighbors) or by
//! exploration (rate `gamma'_ij`). On a complete network this is the jump
//! model built by [`evm_jump_model`]; on general networks agents are updated
//! in discrete time by [`DtEvm`]. Type and cluster indices are zero-based.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dictionary::{DiffusionField, MonomialDictionary, PolynomialField};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mjp::{JumpModel, LangevinPolynomials, TransitionRule};
use crate::poly::Polynomial;
use crate::rng::{rng_for, SimRng};

/// Undirected simple graph whose nodes are partitioned into clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    neighbors: Vec<Vec<u32>>,
    cluster_of: Vec<usize>,
    num_clusters: usize,
}

impl Network {
    /// Builds a network from an undirected edge list. Duplicate edges are merged.
    pub fn from_edges(num_agents: usize, edges: &[(usize, usize)], cluster_of: Vec<usize>) -> Result<Self> {
        if cluster_of.len() != num_agents {
            return Err(Error::Contract(format!(
                "{} cluster labels for {num_agents} agents",
                cluster_of.len()
            )));
        }
        let num_clusters = cluster_of.iter().max().map_or(0, |&m| m + 1);
        let mut present = vec![false; num_clusters];
        for &q in &cluster_of {
            present[q] = true;
        }
        if let Some(q) = present.iter().position(|&p| !p) {
            return Err(Error::Data(format!("cluster ids are not contiguous: cluster {q} is empty")));
        }
        let mut neighbors = vec![Vec::new(); num_agents];
        for &(a, b) in edges {
            if a >= num_agents || b >= num_agents {
                return Err(Error::Index { index: a.max(b), len: num_agents });
            }
            if a == b {
                return Err(Error::Data(format!("self-loop at agent {a}")));
            }
            neighbors[a].push(b as u32);
            neighbors[b].push(a as u32);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors, cluster_of, num_clusters })
    }

    pub fn complete(num_agents: usize) -> Self {
        let neighbors = (0..num_agents)
            .map(|a| (0..num_agents as u32).filter(|&b| b as usize != a).collect())
            .collect();
        Self { neighbors, cluster_of: vec![0; num_agents], num_clusters: usize::from(num_agents > 0) }
    }

    /// Erdős–Rényi graph `G(n, p)` as a single cluster.
    pub fn erdos_renyi(num_agents: usize, p: f64, seed: u64) -> Result<Self> {
        check_probability(p)?;
        let mut rng = rng_for(seed, &[]);
        let mut edges = Vec::new();
        for a in 0..num_agents {
            for b in a + 1..num_agents {
                if rng.random::<f64>() < p {
                    edges.push((a, b));
                }
            }
        }
        Self::from_edges(num_agents, &edges, vec![0; num_agents])
    }

    pub fn num_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cluster_of(&self, agent: usize) -> usize {
        self.cluster_of[agent]
    }

    pub fn cluster_labels(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &q in &self.cluster_of {
            sizes[q] += 1;
        }
        sizes
    }

    pub fn neighbors(&self, agent: usize) -> &[u32] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (a, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().map(|&b| b as usize).filter(|&b| b > a).map(|b| (a, b)));
        }
        out
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&(b as u32)).is_ok()
    }

    /// Dense 0/1 adjacency matrix.
    pub fn dense_adjacency(&self) -> Vec<Vec<u8>> {
        let n = self.num_agents();
        let mut m = vec![vec![0u8; n]; n];
        for (a, list) in self.neighbors.iter().enumerate() {
            for &b in list {
                m[a][b as usize] = 1;
            }
        }
        m
    }

    /// Number of edges joining clusters `q` and `r`.
    pub fn edges_between(&self, q: usize, r: usize) -> usize {
        self.edges()
            .into_iter()
            .filter(|&(a, b)| {
                let (ca, cb) = (self.cluster_of[a], self.cluster_of[b]);
                (ca == q && cb == r) || (ca == r && cb == q)
            })
            .count()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("probability must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Complete clusters of the given sizes, with every inter-cluster pair joined
/// independently with probability `p`.
pub fn make_clustered_network(sizes: &[usize], p: f64, seed: u64) -> Result<Network> {
    check_probability(p)?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Contract("every cluster needs at least one agent".into()));
    }
    let cluster_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(q, &s)| core::iter::repeat_n(q, s)).collect();
    let n = cluster_of.len();
    let mut rng = rng_for(seed, &[]);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if cluster_of[a] == cluster_of[b] || rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Network::from_edges(n, &edges, cluster_of)
}

/// Rate constants of the extended voter model, as `d x d` matrices with zero diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct VoterRates {
    imitation: Vec<Vec<f64>>,
    exploration: Vec<Vec<f64>>,
    inter_cluster_imitation: Option<Vec<Vec<f64>>>,
    step_size: f64,
}

impl VoterRates {
    pub fn new(
        imitation: Vec<Vec<f64>>,
        exploration: Vec<Vec<f64>>,
        inter_cluster_imitation: Option<Vec<Vec<f64>>>,
        step_size: f64,
    ) -> Result<Self> {
        let d = imitation.len();
        if d < 2 {
            return Err(Error::InvalidModel("at least two types are required".into()));
        }
        let check = |m: &Vec<Vec<f64>>, what: &str| -> Result<()> {
            if m.len() != d || m.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidModel(format!("{what} matrix is not {d}x{d}")));
            }
            for (i, row) in m.iter().enumerate() {
                if row[i] != 0.0 {
                    return Err(Error::InvalidModel(format!("{what} matrix has a nonzero diagonal")));
                }
                if row.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidModel(format!("{what} rates must be finite and nonnegative")));
                }
            }
            Ok(())
        };
        check(&imitation, "imitation")?;
        check(&exploration, "exploration")?;
        if let Some(beta) = &inter_cluster_imitation {
            check(beta, "inter-cluster imitation")?;
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidModel(format!("step size must be positive, got {step_size}")));
        }
        Ok(Self { imitation, exploration, inter_cluster_imitation, step_size })
    }

    /// Three types with cyclic dominance: `gamma_12 = gamma_23 = gamma_31 = 2`,
    /// `gamma_13 = gamma_21 = gamma_32 = 1`, `gamma'_ij = 0.01`, `t_step = 0.01`.
    pub fn reference() -> Self {
        let imitation = vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 2.0], vec![2.0, 1.0, 0.0]];
        let exploration = vec![vec![0.0, 0.01, 0.01], vec![0.01, 0.0, 0.01], vec![0.01, 0.01, 0.0]];
        Self { imitation, exploration, inter_cluster_imitation: None, step_size: 0.01 }
    }

    pub fn with_exploration(mut self, exploration: Vec<Vec<f64>>) -> Result<Self> {
        self.exploration = exploration;
        Self::new(self.imitation, self.exploration, self.inter_cluster_imitation, self.step_size)
    }

    pub fn with_step_size(mut self, step_size: f64) -> Result<Self> {
        self.step_size = step_size;
        Self::new(self.imitation, self.exploration, self.inter_cluster_imitation, self.step_size)
    }

    pub fn num_types(&self) -> usize {
        self.imitation.len()
    }

    pub fn imitation(&self) -> &[Vec<f64>] {
        &self.imitation
    }

    pub fn exploration(&self) -> &[Vec<f64>] {
        &self.exploration
    }

    pub fn inter_cluster_imitation(&self) -> Option<&[Vec<f64>]> {
        self.inter_cluster_imitation.as_deref()
    }

    /// Inter-cluster imitation rates, defaulting to the intra-cluster ones.
    pub fn beta(&self) -> &[Vec<f64>] {
        self.inter_cluster_imitation.as_deref().unwrap_or(&self.imitation)
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }
}

/// Ordered type pairs `(i, j)`, `i != j`: `(0,1), (0,2), (1,0), ...`.
pub fn type_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// Population-level jump model on a complete network: imitation
/// `S_i + S_j -> 2 S_j` for every pair, then exploration `S_i -> S_j`.
/// Rules with zero rate are omitted.
pub fn evm_jump_model(rates: &VoterRates, population_size: u64) -> Result<JumpModel> {
    let d = rates.num_types();
    let mut rules = Vec::new();
    for (i, j) in type_pairs(d) {
        let g = rates.imitation[i][j];
        if g > 0.0 {
            let mut reactants = vec![0; d];
            reactants[i] += 1;
            reactants[j] += 1;
            let mut products = vec![0; d];
            products[j] = 2;
            rules.push(TransitionRule::new(reactants, products, g)?);
        }
    }
    for (i, j) in type_pairs(d) {
        let g = rates.exploration[i][j];
        if g > 0.0 {
            let mut reactants = vec![0; d];
            reactants[i] = 1;
            let mut products = vec![0; d];
            products[j] = 1;
            rules.push(TransitionRule::new(reactants, products, g)?);
        }
    }
    JumpModel::new(d, rules, population_size)
}

/// Type of every agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentTypeState {
    pub types: Vec<u32>,
}

impl AgentTypeState {
    pub fn new(types: Vec<u32>) -> Self {
        Self { types }
    }

    /// Places the given per-cluster type counts on randomly chosen agents of each cluster.
    /// `counts[q][i]` agents of cluster `q` receive type `i`.
    pub fn from_cluster_counts<R: Rng + ?Sized>(network: &Network, counts: &[Vec<u32>], rng: &mut R) -> Result<Self> {
        let sizes = network.cluster_sizes();
        if counts.len() != sizes.len() {
            return Err(Error::Contract(format!("{} count blocks for {} clusters", counts.len(), sizes.len())));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
        for (a, &q) in network.cluster_labels().iter().enumerate() {
            members[q].push(a);
        }
        let mut types = vec![0; network.num_agents()];
        for (q, block) in counts.iter().enumerate() {
            if block.iter().map(|&c| c as usize).sum::<usize>() != sizes[q] {
                return Err(Error::Contract(format!("counts of cluster {q} do not add up to its size {}", sizes[q])));
            }
            members[q].shuffle(rng);
            let mut slot = members[q].iter();
            for (i, &c) in block.iter().enumerate() {
                for _ in 0..c {
                    types[*slot.next().expect("sizes checked")] = i as u32;
                }
            }
        }
        Ok(Self { types })
    }
}

/// Per-cluster type frequencies stacked cluster by cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterFrequencyState {
    pub freqs: Vec<f64>,
    pub num_types: usize,
}

impl ClusterFrequencyState {
    pub fn num_clusters(&self) -> usize {
        self.freqs.len() / self.num_types
    }

    pub fn block(&self, q: usize) -> &[f64] {
        &self.freqs[q * self.num_types..(q + 1) * self.num_types]
    }
}

pub fn aggregate(network: &Network, state: &AgentTypeState, num_types: usize) -> Result<ClusterFrequencyState> {
    if state.types.len() != network.num_agents() {
        return Err(Error::Contract(format!(
            "state has {} agents, network has {}",
            state.types.len(),
            network.num_agents()
        )));
    }
    let sizes = network.cluster_sizes();
    if let Some(q) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Domain(format!("cluster {q} is empty")));
    }
    let mut counts = vec![0u64; sizes.len() * num_types];
    for (a, &t) in state.types.iter().enumerate() {
        if t as usize >= num_types {
            return Err(Error::Index { index: t as usize, len: num_types });
        }
        counts[network.cluster_of(a) * num_types + t as usize] += 1;
    }
    let freqs = counts.iter().enumerate().map(|(k, &c)| c as f64 / sizes[k / num_types] as f64).collect();
    Ok(ClusterFrequencyState { freqs, num_types })
}

/// One-step transition matrix `exp(t_step G)` (row-major) of an agent whose
/// neighborhood holds `neighbor_counts[j]` agents of type `j`.
pub fn transition_matrix(rates: &VoterRates, neighbor_counts: &[u32]) -> Vec<f64> {
    let d = rates.num_types();
    let deg: u32 = neighbor_counts.iter().sum();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for (i, j) in type_pairs(d) {
        let imitate = if deg > 0 { rates.imitation[i][j] * neighbor_counts[j] as f64 / deg as f64 } else { 0.0 };
        g[(i, j)] = imitate + rates.exploration[i][j];
        g[(i, i)] -= g[(i, j)];
    }
    let p = linalg::expm(&(g * rates.step_size));
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            // Round-off can leave tiny negative entries.
            out.push(p[(i, j)].max(0.0));
        }
    }
    out
}

const CACHE_LIMIT: usize = 1 << 16;

/// Discrete-time agent-level simulator. Each step visits all agents in a
/// fresh random order and updates them in place.
#[derive(Clone, Debug)]
pub struct DtEvm<'a> {
    network: &'a Network,
    rates: &'a VoterRates,
    state: AgentTypeState,
    neighbor_counts: Vec<u32>,
    order: Vec<usize>,
    cache: BTreeMap<Vec<u32>, Vec<f64>>,
}

impl<'a> DtEvm<'a> {
    pub fn new(network: &'a Network, rates: &'a VoterRates, state: AgentTypeState) -> Result<Self> {
        let d = rates.num_types();
        if state.types.len() != network.num_agents() {
            return Err(Error::Contract(format!(
                "state has {} agents, network has {}",
                state.types.len(),
                network.num_agents()
            )));
        }
        if let Some(&t) = state.types.iter().find(|&&t| t as usize >= d) {
            return Err(Error::Index { index: t as usize, len: d });
        }
        let mut neighbor_counts = vec![0u32; network.num_agents() * d];
        for a in 0..network.num_agents() {
            for &b in network.neighbors(a) {
                neighbor_counts[a * d + state.types[b as usize] as usize] += 1;
            }
        }
        Ok(Self {
            network,
            rates,
            state,
            neighbor_counts,
            order: (0..network.num_agents()).collect(),
            cache: BTreeMap::new(),
        })
    }

    pub fn state(&self) -> &AgentTypeState {
        &self.state
    }

    pub fn into_state(self) -> AgentTypeState {
        self.state
    }

    pub fn aggregate(&self) -> ClusterFrequencyState {
        aggregate(self.network, &self.state, self.rates.num_types()).expect("clusters are nonempty")
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let d = self.rates.num_types();
        self.order.shuffle(rng);
        if self.cache.len() > CACHE_LIMIT {
            self.cache.clear();
        }
        for idx in 0..self.order.len() {
            let a = self.order[idx];
            let counts = &self.neighbor_counts[a * d..(a + 1) * d];
            let rates = self.rates;
            let p = self.cache.entry(counts.to_vec()).or_insert_with(|| transition_matrix(rates, counts));
            let from = self.state.types[a] as usize;
            let row = &p[from * d..(from + 1) * d];
            let mut u = rng.random::<f64>() * row.iter().sum::<f64>();
            let mut to = from;
            for (j, &pj) in row.iter().enumerate() {
                if u < pj {
                    to = j;
                    break;
                }
                u -= pj;
            }
            if to != from {
                self.state.types[a] = to as u32;
                for &b in self.network.neighbors(a) {
                    let b = b as usize;
                    self.neighbor_counts[b * d + from] -= 1;
                    self.neighbor_counts[b * d + to] += 1;
                }
            }
        }
    }

    /// Number of whole steps covering a time span.
    pub fn steps_for(&self, t: f64) -> usize {
        libm::round(t / self.rates.step_size) as usize
    }

    /// Advances by `steps_for(t)` steps.
    pub fn run_for<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        for _ in 0..self.steps_for(t) {
            self.step(rng);
        }
    }
}

/// One discrete-time update of every agent.
pub fn dt_evm_step(network: &Network, rates: &VoterRates, state: &AgentTypeState, seed: u64) -> Result<AgentTypeState> {
    let mut sim = DtEvm::new(network, rates, state.clone())?;
    let mut rng: SimRng = rng_for(seed, &[]);
    sim.step(&mut rng);
    Ok(sim.into_state())
}

/// Chemical-Langevin polynomials for two equally sized clusters of `n` agents
/// each in the stacked coordinates `(c_1, c_2)`.
pub fn two_cluster_langevin(rates: &VoterRates, p: f64, n: u64) -> Result<LangevinPolynomials> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::Contract("cluster size must be positive".into()));
    }
    let d = rates.num_types();
    let dim = 2 * d;
    let var = |q: usize, i: usize| Polynomial::variable(dim, q * d + i);
    let intra = 1.0 / (p + 1.0);
    let inter = p / (p + 1.0);
    let beta = rates.beta();
    let mut channels = Vec::new();
    for q in 0..2 {
        let other = 1 - q;
        for (i, j) in type_pairs(d) {
            // Every channel moves one agent of cluster q from type i to type j.
            let mut nu = vec![0.0; dim];
            nu[q * d + i] = -1.0;
            nu[q * d + j] = 1.0;
            if rates.imitation[i][j] > 0.0 {
                let rate = (&var(q, i) * &var(q, j)).scale(intra * rates.imitation[i][j]);
                channels.push((rate, nu.clone()));
            }
            if rates.exploration[i][j] > 0.0 {
                channels.push((var(q, i).scale(rates.exploration[i][j]), nu.clone()));
            }
            if beta[i][j] > 0.0 && inter > 0.0 {
                let rate = (&var(q, i) * &var(other, j)).scale(inter * beta[i][j]);
                channels.push((rate, nu));
            }
        }
    }
    Ok(LangevinPolynomials::from_channels(dim, &channels, n as f64))
}

/// Two-cluster limit SDE over `dictionary`, in the full `2d` coordinates or,
/// for a `2d - 2` dimensional dictionary, reduced by one conservation law per cluster.
pub fn two_cluster_limit_sde(
    rates: &VoterRates,
    p: f64,
    n: u64,
    dictionary: &MonomialDictionary,
) -> Result<(PolynomialField, DiffusionField)> {
    let full = two_cluster_langevin(rates, p, n)?;
    let d = rates.num_types();
    if dictionary.dim() == 2 * d {
        full.into_fields(dictionary)
    } else if dictionary.dim() == 2 * d - 2 {
        full.reduce_blocks(&[d, d])?.into_fields(dictionary)
    } else {
        Err(Error::Contract(format!("dictionary has {} coordinates, expected {} or {}", dictionary.dim(), 2 * d, 2 * d - 2)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::mjp::limit_sde_polynomials;

    #[test]
    fn clustered_network_extremes() {
        let block = make_clustered_network(&[5, 7], 0.0, 3).unwrap();
        assert_eq!(block.edges_between(0, 1), 0);
        assert_eq!(block.num_edges(), 10 + 21);
        let full = make_clustered_network(&[5, 7], 1.0, 3).unwrap();
        assert_eq!(full.num_edges(), 12 * 11 / 2);
        assert!(make_clustered_network(&[5, 0], 0.5, 1).is_err());
        assert!(make_clustered_network(&[5], 1.5, 1).is_err());
    }

    #[test]
    fn network_is_symmetric_without_loops() {
        let net = make_clustered_network(&[20, 30], 0.1, 11).unwrap();
        let adj = net.dense_adjacency();
        for a in 0..50 {
            assert_eq!(adj[a][a], 0);
            for b in 0..50 {
                assert_eq!(adj[a][b], adj[b][a]);
            }
        }
        assert!(Network::from_edges(2, &[(0, 0)], vec![0, 0]).is_err());
        assert!(Network::from_edges(2, &[(0, 1)], vec![0, 2]).is_err());
    }

    #[test]
    fn transition_matrix_one_way_switch() {
        let rates = VoterRates::new(
            vec![vec![0.0, 2.0], vec![1.0, 0.0]],
            vec![vec![0.0; 2]; 2],
            None,
            0.01,
        )
        .unwrap();
        // Type 0 agent with every neighbor of type 1.
        let p = transition_matrix(&rates, &[0, 8]);
        assert!((p[1] - (1.0 - math::exp(-2.0 * 0.01))).abs() < 1e-14);
        // A type 1 agent among type 1 neighbors never moves.
        assert_eq!(p[2], 0.0);
        assert!((p[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transition_matrix_is_stochastic() {
        let rates = VoterRates::reference();
        for counts in [[0, 0, 0], [3, 4, 5], [0, 50, 1], [10, 0, 0]] {
            let p = transition_matrix(&rates, &counts);
            for i in 0..3 {
                let row = &p[i * 3..i * 3 + 3];
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_step_keeps_state() {
        let rates = VoterRates::reference();
        let p = transition_matrix(&VoterRates { step_size: 0.0, ..rates }, &[1, 2, 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[i * 3 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn consensus_without_exploration_is_absorbing() {
        let rates = VoterRates::reference().with_exploration(vec![vec![0.0; 3]; 3]).unwrap();
        let net = Network::complete(30);
        let state = AgentTypeState::new(vec![2; 30]);
        assert_eq!(dt_evm_step(&net, &rates, &state, 5).unwrap(), state);
    }

    #[test]
    fn step_preserves_agents_and_labels() {
        let rates = VoterRates::reference();
        let net = make_clustered_network(&[15, 15], 0.2, 2).unwrap();
        let mut rng = rng_for(1, &[]);
        let state = AgentTypeState::new((0..30).map(|_| rng.random_range(0..3)).collect());
        let mut sim = DtEvm::new(&net, &rates, state).unwrap();
        for _ in 0..50 {
            sim.step(&mut rng);
        }
        assert_eq!(sim.state().types.len(), 30);
        assert!(sim.state().types.iter().all(|&t| t < 3));
        // Incremental neighbor counts stay in sync with a recount.
        let fresh = DtEvm::new(&net, &rates, sim.state().clone()).unwrap();
        assert_eq!(fresh.neighbor_counts, sim.neighbor_counts);
    }

    #[test]
    fn aggregate_counts_per_cluster() {
        let net = make_clustered_network(&[50, 50], 0.0, 0).unwrap();
        let mut types = Vec::new();
        for (t, c) in [(0, 40), (1, 7), (2, 3), (0, 10), (1, 25), (2, 15)] {
            types.extend(core::iter::repeat_n(t, c));
        }
        let agg = aggregate(&net, &AgentTypeState::new(types), 3).unwrap();
        let expected = [0.8, 0.14, 0.06, 0.2, 0.5, 0.3];
        for (a, b) in agg.freqs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(agg.block(1), &agg.freqs[3..]);
    }

    #[test]
    fn evm_jump_model_rule_layout() {
        let model = evm_jump_model(&VoterRates::reference(), 100).unwrap();
        assert_eq!(model.rules().len(), 12);
        assert_eq!(model.rules()[0].reactants(), &[1, 1, 0]);
        assert_eq!(model.rules()[0].products(), &[0, 2, 0]);
        assert_eq!(model.rules()[0].rate(), 2.0);
        assert_eq!(model.max_order(), 2);
        let no_explore = VoterRates::reference().with_exploration(vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(evm_jump_model(&no_explore, 100).unwrap().rules().len(), 6);
    }

    #[test]
    fn disconnected_clusters_match_complete_network_drift() {
        let rates = VoterRates::reference();
        let two = two_cluster_langevin(&rates, 0.0, 50).unwrap();
        let single = limit_sde_polynomials(&evm_jump_model(&rates, 50).unwrap());
        let c = [0.5, 0.3, 0.2, 0.1, 0.6, 0.3];
        for q in 0..2 {
            for i in 0..3 {
                let want = single.drift[i].eval(&c[q * 3..q * 3 + 3]);
                assert!((two.drift[q * 3 + i].eval(&c) - want).abs() < 1e-14);
                for j in 0..3 {
                    let want = single.diffusion[i][j].eval(&c[q * 3..q * 3 + 3]);
                    assert!((two.diffusion[q * 3 + i][q * 3 + j].eval(&c) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn full_connectivity_averages_the_clusters() {
        let rates = VoterRates::reference();
        let g = rates.imitation();
        let e = rates.exploration();
        let two = two_cluster_langevin(&rates, 1.0, 50).unwrap();
        let c = [0.45, 0.35, 0.2, 0.15, 0.25, 0.6];
        for q in 0..2 {
            let o = 1 - q;
            for i in 0..3 {
                let mut want = 0.0;
                for j in (0..3).filter(|&j| j != i) {
                    let mean_i = (c[q * 3 + i] + c[o * 3 + i]) / 2.0;
                    let mean_j = (c[q * 3 + j] + c[o * 3 + j]) / 2.0;
                    want += g[j][i] * c[q * 3 + j] * mean_i - g[i][j] * c[q * 3 + i] * mean_j;
                    want += e[j][i] * c[q * 3 + j] - e[i][j] * c[q * 3 + i];
                }
                assert!((two.drift[q * 3 + i].eval(&c) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reduced_two_cluster_fields_fit_cubic_dictionary() {
        let rates = VoterRates::reference();
        let dict = MonomialDictionary::new(4, 3);
        let (drift, diffusion) = two_cluster_limit_sde(&rates, 0.2, 50, &dict).unwrap();
        assert_eq!(drift.rows(), 4);
        assert_eq!(diffusion.dim(), 4);
        assert!(two_cluster_limit_sde(&rates, 0.2, 50, &MonomialDictionary::new(4, 1)).is_err());
    }
}
