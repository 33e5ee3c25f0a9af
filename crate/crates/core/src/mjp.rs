//! Population-level Markov jump processes.
//!
//! A [`JumpModel`] is a list of reaction-style transition rules
//! `a_1 S_1 + .. + a_d S_d -> b_1 S_1 + .. + b_d S_d` with rate constants and
//! a population size `N`. Propensities are mass-action in the binomial sense,
//! `gamma N prod_i C(x_i, a_i) / N^{a_i}`. The module provides exact path
//! simulation (Gillespie's direct method), the forward (master) equation on
//! small state spaces, and the chemical-Langevin limit in frequency coordinates.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::dictionary::{DiffusionField, MonomialDictionary, PolynomialField};
use crate::error::{Error, Result};
use crate::linalg;
use crate::math;
use crate::poly::Polynomial;
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRule {
    reactants: Vec<u32>,
    products: Vec<u32>,
    rate: f64,
}

impl TransitionRule {
    pub fn new(reactants: Vec<u32>, products: Vec<u32>, rate: f64) -> Result<Self> {
        if reactants.len() != products.len() {
            return Err(Error::InvalidModel("reactant and product vectors differ in length".into()));
        }
        if reactants == products {
            return Err(Error::InvalidModel("rule has zero net change".into()));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidModel(format!("rate constant must be positive, got {rate}")));
        }
        Ok(Self { reactants, products, rate })
    }

    pub fn reactants(&self) -> &[u32] {
        &self.reactants
    }

    pub fn products(&self) -> &[u32] {
        &self.products
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Net change `nu = products - reactants`.
    pub fn net_change(&self) -> Vec<i64> {
        self.products.iter().zip(&self.reactants).map(|(&b, &a)| b as i64 - a as i64).collect()
    }

    /// Order of the rule: total number of reactant agents.
    pub fn order(&self) -> u32 {
        self.reactants.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpModel {
    num_types: usize,
    rules: Vec<TransitionRule>,
    population_size: u64,
}

impl JumpModel {
    pub fn new(num_types: usize, rules: Vec<TransitionRule>, population_size: u64) -> Result<Self> {
        if num_types == 0 {
            return Err(Error::InvalidModel("at least one agent type is required".into()));
        }
        if rules.is_empty() {
            return Err(Error::InvalidModel("at least one transition rule is required".into()));
        }
        if population_size == 0 {
            return Err(Error::InvalidModel("population size must be positive".into()));
        }
        if let Some(k) = rules.iter().position(|r| r.reactants.len() != num_types) {
            return Err(Error::InvalidModel(format!("rule {k} does not have {num_types} components")));
        }
        Ok(Self { num_types, rules, population_size })
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn rules(&self) -> &[TransitionRule] {
        &self.rules
    }

    pub fn population_size(&self) -> u64 {
        self.population_size
    }

    /// Highest transition order `p`.
    pub fn max_order(&self) -> u32 {
        self.rules.iter().map(TransitionRule::order).max().unwrap_or(0)
    }

    /// True when every rule preserves the total number of agents.
    pub fn conserves_population(&self) -> bool {
        self.rules.iter().all(|r| r.net_change().iter().sum::<i64>() == 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PopulationState {
    pub counts: Vec<u32>,
}

impl PopulationState {
    pub fn new(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    fn shifted(&self, nu: &[i64]) -> Option<Self> {
        let counts = self
            .counts
            .iter()
            .zip(nu)
            .map(|(&c, &n)| u32::try_from(c as i64 + n).ok())
            .collect::<Option<Vec<u32>>>()?;
        Some(Self { counts })
    }
}

impl From<Vec<u32>> for PopulationState {
    fn from(counts: Vec<u32>) -> Self {
        Self { counts }
    }
}

/// Piecewise-constant sample path: `states[i]` holds on `[times[i], times[i+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PopulationState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at time `t` (the last state recorded at or before `t`).
    pub fn state_at(&self, t: f64) -> &PopulationState {
        let idx = self.times.partition_point(|&s| s <= t);
        &self.states[idx.saturating_sub(1)]
    }

    pub fn final_state(&self) -> &PopulationState {
        self.states.last().expect("trajectory is never empty")
    }
}

fn check_state(model: &JumpModel, x: &PopulationState) -> Result<()> {
    if x.counts.len() != model.num_types {
        return Err(Error::Contract(format!(
            "state has {} components, model has {} types",
            x.counts.len(),
            model.num_types
        )));
    }
    Ok(())
}

fn rule_propensity(rule: &TransitionRule, n: f64, x: &[u32]) -> f64 {
    let mut v = rule.rate * n;
    for (&xi, &a) in x.iter().zip(&rule.reactants) {
        if xi < a {
            return 0.0;
        }
        if a > 0 {
            v *= math::binomial(xi as u64, a as u64) / math::powi(n, a);
        }
    }
    v
}

/// Propensity `alpha_k(x)` of rule `rule_index`.
pub fn propensity(model: &JumpModel, rule_index: usize, x: &PopulationState) -> Result<f64> {
    let rule = model
        .rules
        .get(rule_index)
        .ok_or(Error::Index { index: rule_index, len: model.rules.len() })?;
    check_state(model, x)?;
    Ok(rule_propensity(rule, model.population_size as f64, &x.counts))
}

struct Stepper<'a> {
    model: &'a JumpModel,
    nus: Vec<Vec<i64>>,
    props: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a JumpModel) -> Self {
        Self { model, nus: model.rules.iter().map(TransitionRule::net_change).collect(), props: vec![0.0; model.rules.len()] }
    }

    /// Advances `x` from `t` by one jump if it happens before `t_end`.
    /// Returns the jump time, or `None` once `t_end` is reached or the state is absorbing.
    fn jump<R: Rng + ?Sized>(&mut self, x: &mut [u32], t: f64, t_end: f64, rng: &mut R) -> Option<f64> {
        let n = self.model.population_size as f64;
        let mut total = 0.0;
        for (p, rule) in self.props.iter_mut().zip(&self.model.rules) {
            *p = rule_propensity(rule, n, x);
            total += *p;
        }
        if total <= 0.0 {
            return None;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        let t_next = t + wait;
        if t_next >= t_end {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut k = self.props.len() - 1;
        for (i, &p) in self.props.iter().enumerate() {
            if target < p {
                k = i;
                break;
            }
            target -= p;
        }
        // Round-off can land on a rule with zero propensity; fall back to the last active one.
        if self.props[k] <= 0.0 {
            k = self.props.iter().rposition(|&p| p > 0.0).expect("total > 0");
        }
        for (xi, &nu) in x.iter_mut().zip(&self.nus[k]) {
            *xi = (*xi as i64 + nu) as u32;
        }
        Some(t_next)
    }
}

/// Exact SSA sample path on `[0, t_end]`, recording every jump, with a final
/// record at `t_end`.
pub fn gillespie_simulate(model: &JumpModel, x0: &PopulationState, t_end: f64, seed: u64) -> Result<Trajectory> {
    gillespie_simulate_with(model, x0, t_end, &mut rng_for(seed, &[]))
}

pub fn gillespie_simulate_with<R: Rng + ?Sized>(
    model: &JumpModel,
    x0: &PopulationState,
    t_end: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    check_state(model, x0)?;
    if !(t_end > 0.0) {
        return Err(Error::Contract(format!("t_end must be positive, got {t_end}")));
    }
    let mut stepper = Stepper::new(model);
    let mut x = x0.counts.clone();
    let mut t = 0.0;
    let mut traj = Trajectory { times: vec![0.0], states: vec![x0.clone()] };
    while let Some(t_next) = stepper.jump(&mut x, t, t_end, rng) {
        t = t_next;
        traj.times.push(t);
        traj.states.push(PopulationState::new(x.clone()));
    }
    traj.times.push(t_end);
    traj.states.push(PopulationState::new(x));
    Ok(traj)
}

/// `X_t` given `X_0 = x0`, without recording the path.
pub fn gillespie_state_at<R: Rng + ?Sized>(
    model: &JumpModel,
    x0: &PopulationState,
    t: f64,
    rng: &mut R,
) -> Result<PopulationState> {
    check_state(model, x0)?;
    let mut stepper = Stepper::new(model);
    let mut x = x0.counts.clone();
    let mut now = 0.0;
    while let Some(t_next) = stepper.jump(&mut x, now, t, rng) {
        now = t_next;
    }
    Ok(PopulationState::new(x))
}

/// Default upper bound on enumerated master-equation states.
pub const DEFAULT_STATE_CAP: usize = 20_000;

/// Lexicographically ordered set of states reachable from an initial support.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    states: Vec<PopulationState>,
    index: BTreeMap<PopulationState, usize>,
}

impl StateSpace {
    pub fn states(&self) -> &[PopulationState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, x: &PopulationState) -> Option<usize> {
        self.index.get(x).copied()
    }
}

/// Breadth-first closure of `support` under all transitions with positive propensity.
pub fn reachable_states(model: &JumpModel, support: &[PopulationState], cap: usize) -> Result<StateSpace> {
    let n = model.population_size as f64;
    let nus: Vec<Vec<i64>> = model.rules.iter().map(TransitionRule::net_change).collect();
    let mut seen: BTreeMap<PopulationState, ()> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for x in support {
        check_state(model, x)?;
        if seen.insert(x.clone(), ()).is_none() {
            queue.push_back(x.clone());
        }
    }
    while let Some(x) = queue.pop_front() {
        for (rule, nu) in model.rules.iter().zip(&nus) {
            if rule_propensity(rule, n, &x.counts) <= 0.0 {
                continue;
            }
            if let Some(y) = x.shifted(nu) {
                if !seen.contains_key(&y) {
                    if seen.len() >= cap {
                        return Err(Error::Capacity { cap });
                    }
                    seen.insert(y.clone(), ());
                    queue.push_back(y);
                }
            }
        }
    }
    let states: Vec<PopulationState> = seen.into_keys().collect();
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(StateSpace { states, index })
}

/// Sparse master-equation generator: `dp/dt = Q p`, columns summing to zero.
#[derive(Clone, Debug)]
pub struct RateMatrix {
    size: usize,
    /// `(to, from, rate)` for every off-diagonal transition.
    off_diagonal: Vec<(usize, usize, f64)>,
    /// Negative total exit rate of every state.
    diagonal: Vec<f64>,
}

impl RateMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.size, self.size);
        for (i, &d) in self.diagonal.iter().enumerate() {
            q[(i, i)] = d;
        }
        for &(to, from, r) in &self.off_diagonal {
            q[(to, from)] += r;
        }
        q
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = self.diagonal.clone();
        for &(_, from, r) in &self.off_diagonal {
            sums[from] += r;
        }
        sums
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, (&d, &x)) in out.iter_mut().zip(self.diagonal.iter().zip(v)) {
            *o = d * x;
        }
        for &(to, from, r) in &self.off_diagonal {
            out[to] += r * v[from];
        }
    }

    fn norm1(&self) -> f64 {
        // Every column holds -exit on the diagonal and +exit spread off it.
        self.diagonal.iter().map(|d| 2.0 * d.abs()).fold(0.0, f64::max)
    }
}

pub fn cme_rate_matrix(model: &JumpModel, space: &StateSpace) -> RateMatrix {
    let n = model.population_size as f64;
    let nus: Vec<Vec<i64>> = model.rules.iter().map(TransitionRule::net_change).collect();
    let mut off_diagonal = Vec::new();
    let mut diagonal = vec![0.0; space.len()];
    for (from, x) in space.states.iter().enumerate() {
        for (rule, nu) in model.rules.iter().zip(&nus) {
            let rate = rule_propensity(rule, n, &x.counts);
            if rate <= 0.0 {
                continue;
            }
            // States outside N_0^d carry no mass; the closure contains every other target.
            if let Some(to) = x.shifted(nu).and_then(|y| space.index_of(&y)) {
                off_diagonal.push((to, from, rate));
                diagonal[from] -= rate;
            }
        }
    }
    RateMatrix { size: space.len(), off_diagonal, diagonal }
}

/// Probability distribution over an enumerated state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub space: StateSpace,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn prob(&self, x: &PopulationState) -> f64 {
        self.space.index_of(x).map_or(0.0, |i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Total-variation distance to an empirical distribution given as state counts.
    pub fn tv_distance_to_counts(&self, counts: &BTreeMap<PopulationState, u64>) -> f64 {
        let total: u64 = counts.values().sum();
        let mut tv = 0.0;
        for (i, s) in self.space.states.iter().enumerate() {
            let emp = counts.get(s).copied().unwrap_or(0) as f64 / total as f64;
            tv += (self.probs[i] - emp).abs();
        }
        for (s, &c) in counts {
            if self.space.index_of(s).is_none() {
                tv += c as f64 / total as f64;
            }
        }
        0.5 * tv
    }
}

/// Above this many states the dense exponential is replaced by a sparse
/// series applied to the probability vector.
const DENSE_EXPM_LIMIT: usize = 1024;

/// Solves the master equation `dP/dt = Q P` from `p0` up to time `t`.
pub fn cme_solve(model: &JumpModel, p0: &[(PopulationState, f64)], t: f64, cap: usize) -> Result<Distribution> {
    if !(t >= 0.0) {
        return Err(Error::Contract(format!("time must be nonnegative, got {t}")));
    }
    let mass: f64 = p0.iter().map(|(_, p)| p).sum();
    if (mass - 1.0).abs() > 1e-9 || p0.iter().any(|(_, p)| *p < 0.0) {
        return Err(Error::Data(format!("initial distribution must be nonnegative and sum to 1 (sum = {mass})")));
    }
    let support: Vec<PopulationState> = p0.iter().map(|(s, _)| s.clone()).collect();
    let space = reachable_states(model, &support, cap)?;
    let mut p = vec![0.0; space.len()];
    for (s, w) in p0 {
        p[space.index_of(s).expect("support is in the closure")] += w;
    }
    if t == 0.0 {
        return Ok(Distribution { space, probs: p });
    }
    let q = cme_rate_matrix(model, &space);
    let probs = if space.len() <= DENSE_EXPM_LIMIT {
        let e = linalg::expm(&(q.to_dense() * t));
        (e * DVector::from_vec(p)).iter().copied().collect()
    } else {
        expm_action(&q, p, t)
    };
    Ok(Distribution { space, probs })
}

/// `exp(Q t) v` by substeps of norm at most one, each a truncated Taylor series.
fn expm_action(q: &RateMatrix, mut v: Vec<f64>, t: f64) -> Vec<f64> {
    let steps = math::ceil(q.norm1() * t).max(1.0) as usize;
    let h = t / steps as f64;
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..steps {
        term.copy_from_slice(&v);
        for k in 1..100 {
            q.apply(&term, &mut next);
            let scale = h / k as f64;
            let mut norm = 0.0;
            for ((tm, nx), vi) in term.iter_mut().zip(&next).zip(v.iter_mut()) {
                *tm = nx * scale;
                *vi += *tm;
                norm += tm.abs();
            }
            if norm < 1e-18 {
                break;
            }
        }
    }
    v
}

/// Rescaled propensity `alpha_k(cN) / N` as a polynomial in the frequencies
/// `c = x / N`, keeping the finite-`N` terms of the binomial coefficients.
pub fn rescaled_propensity(model: &JumpModel, rule_index: usize) -> Result<Polynomial> {
    let rule = model
        .rules
        .get(rule_index)
        .ok_or(Error::Index { index: rule_index, len: model.rules.len() })?;
    let d = model.num_types;
    let n = model.population_size as f64;
    let mut p = Polynomial::constant(d, rule.rate);
    // C(cN, a) / N^a = prod_{r < a} (c - r/N) / a!
    for (i, &a) in rule.reactants.iter().enumerate() {
        let mut factorial = 1.0;
        for r in 0..a {
            let factor = &Polynomial::variable(d, i) - &Polynomial::constant(d, r as f64 / n);
            p = &p * &factor;
            factorial *= (r + 1) as f64;
        }
        p = p.scale(1.0 / factorial);
    }
    Ok(p)
}

/// Drift and diffusion (`a = sigma sigma^T`) of a chemical-Langevin model as polynomials.
#[derive(Clone, Debug, PartialEq)]
pub struct LangevinPolynomials {
    pub drift: Vec<Polynomial>,
    pub diffusion: Vec<Vec<Polynomial>>,
}

impl LangevinPolynomials {
    /// Assembles `b = sum_k rate_k nu_k` and `a = (1/N) sum_k rate_k nu_k nu_k^T`
    /// from transition channels `(rate polynomial, net change)`.
    pub fn from_channels(dim: usize, channels: &[(Polynomial, Vec<f64>)], population: f64) -> Self {
        let mut drift = vec![Polynomial::zero(dim); dim];
        let mut diffusion = vec![vec![Polynomial::zero(dim); dim]; dim];
        for (rate, nu) in channels {
            for i in 0..dim {
                if nu[i] == 0.0 {
                    continue;
                }
                drift[i] = &drift[i] + &rate.scale(nu[i]);
                for j in 0..dim {
                    if nu[j] != 0.0 {
                        diffusion[i][j] = &diffusion[i][j] + &rate.scale(nu[i] * nu[j] / population);
                    }
                }
            }
        }
        Self { drift, diffusion }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Eliminates the last coordinate of every block of `block_sizes` using the
    /// block constraint `sum = 1`, dropping the matching drift row and
    /// diffusion row and column.
    pub fn reduce_blocks(&self, block_sizes: &[usize]) -> Result<Self> {
        if block_sizes.iter().sum::<usize>() != self.dim() || block_sizes.iter().any(|&s| s < 2) {
            return Err(Error::Contract("block sizes must partition the coordinates, each of size >= 2".into()));
        }
        let mut out = self.clone();
        let mut starts: Vec<usize> = Vec::with_capacity(block_sizes.len());
        let mut acc = 0;
        for &s in block_sizes {
            starts.push(acc);
            acc += s;
        }
        for (&start, &size) in starts.iter().zip(block_sizes).rev() {
            let last = start + size - 1;
            let dim = out.dim();
            let mut repl = Polynomial::constant(dim - 1, 1.0);
            for i in start..last {
                repl = &repl - &Polynomial::variable(dim - 1, i);
            }
            out.drift.remove(last);
            out.diffusion.remove(last);
            for row in &mut out.diffusion {
                row.remove(last);
            }
            out.drift = out.drift.iter().map(|p| p.eliminate(last, &repl)).collect();
            out.diffusion = out
                .diffusion
                .iter()
                .map(|row| row.iter().map(|p| p.eliminate(last, &repl)).collect())
                .collect();
        }
        Ok(out)
    }

    /// Projects onto `dictionary`, failing on any monomial it lacks.
    pub fn into_fields(self, dictionary: &MonomialDictionary) -> Result<(PolynomialField, DiffusionField)> {
        let drift = PolynomialField::from_polynomials(dictionary.clone(), &self.drift)?;
        let diffusion = DiffusionField::from_matrix(dictionary.clone(), &self.diffusion)?;
        Ok((drift, diffusion))
    }
}

/// Chemical-Langevin polynomials of `model` in the full frequency coordinates.
pub fn limit_sde_polynomials(model: &JumpModel) -> LangevinPolynomials {
    let channels: Vec<(Polynomial, Vec<f64>)> = (0..model.rules.len())
        .map(|k| {
            let rate = rescaled_propensity(model, k).expect("index in range");
            let nu = model.rules[k].net_change().iter().map(|&v| v as f64).collect();
            (rate, nu)
        })
        .collect();
    LangevinPolynomials::from_channels(model.num_types, &channels, model.population_size as f64)
}

/// Limit SDE over `dictionary`. A dictionary with `d` coordinates yields the
/// full model; one with `d - 1` coordinates yields the model reduced by the
/// conservation law `c_d = 1 - sum_{i<d} c_i`.
pub fn limit_sde(model: &JumpModel, dictionary: &MonomialDictionary) -> Result<(PolynomialField, DiffusionField)> {
    let full = limit_sde_polynomials(model);
    let d = model.num_types;
    if dictionary.dim() == d {
        full.into_fields(dictionary)
    } else if dictionary.dim() + 1 == d && model.conserves_population() {
        full.reduce_blocks(&[d])?.into_fields(dictionary)
    } else {
        Err(Error::Contract(format!(
            "dictionary has {} coordinates; model has {d} types{}",
            dictionary.dim(),
            if model.conserves_population() { "" } else { " and no conservation law" }
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, i: usize, k: u32) -> Vec<u32> {
        let mut v = vec![0; d];
        v[i] = k;
        v
    }

    fn imitation(d: usize, i: usize, j: usize, rate: f64) -> TransitionRule {
        let mut r = unit(d, i, 1);
        r[j] += 1;
        TransitionRule::new(r, unit(d, j, 2), rate).unwrap()
    }

    fn exploration(d: usize, i: usize, j: usize, rate: f64) -> TransitionRule {
        TransitionRule::new(unit(d, i, 1), unit(d, j, 1), rate).unwrap()
    }

    #[test]
    fn imitation_propensity_by_hand() {
        let model = JumpModel::new(3, vec![imitation(3, 0, 1, 2.0)], 10).unwrap();
        let p = propensity(&model, 0, &PopulationState::new(vec![2, 3, 5])).unwrap();
        assert!((p - 1.2).abs() < 1e-14);
    }

    #[test]
    fn exploration_propensity_is_linear() {
        let model = JumpModel::new(3, vec![exploration(3, 0, 1, 0.01)], 10).unwrap();
        let p = propensity(&model, 0, &PopulationState::new(vec![7, 3, 0])).unwrap();
        assert!((p - 0.07).abs() < 1e-15);
    }

    #[test]
    fn propensity_vanishes_without_reactants() {
        let model = JumpModel::new(3, vec![imitation(3, 0, 1, 2.0)], 10).unwrap();
        assert_eq!(propensity(&model, 0, &PopulationState::new(vec![0, 5, 5])).unwrap(), 0.0);
        assert_eq!(propensity(&model, 0, &PopulationState::new(vec![10, 0, 0])).unwrap(), 0.0);
        assert!(matches!(
            propensity(&model, 3, &PopulationState::new(vec![1, 1, 1])),
            Err(Error::Index { index: 3, len: 1 })
        ));
    }

    #[test]
    fn second_order_same_type_uses_binomial() {
        // 2 S1 -> S2 with x1 = 4, N = 10: gamma * N * C(4,2) / N^2.
        let rule = TransitionRule::new(vec![2, 0], vec![0, 1], 3.0).unwrap();
        let model = JumpModel::new(2, vec![rule], 10).unwrap();
        let p = propensity(&model, 0, &PopulationState::new(vec![4, 0])).unwrap();
        assert!((p - 3.0 * 10.0 * 6.0 / 100.0).abs() < 1e-13);
        // The rescaled polynomial gamma c (c - 1/N) / 2 agrees at c = x/N.
        let poly = rescaled_propensity(&model, 0).unwrap();
        assert!((poly.eval(&[0.4, 0.0]) - p / 10.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(TransitionRule::new(vec![1, 0], vec![1, 0], 1.0).is_err());
        assert!(TransitionRule::new(vec![1, 0], vec![0, 1], 0.0).is_err());
        assert!(TransitionRule::new(vec![1], vec![0, 1], 1.0).is_err());
        assert!(JumpModel::new(3, vec![exploration(2, 0, 1, 1.0)], 5).is_err());
        assert!(JumpModel::new(2, vec![], 5).is_err());
    }

    #[test]
    fn absorbing_initial_state_gives_constant_path() {
        let model = JumpModel::new(2, vec![exploration(2, 0, 1, 1.0)], 5).unwrap();
        let x0 = PopulationState::new(vec![0, 5]);
        let traj = gillespie_simulate(&model, &x0, 3.0, 1).unwrap();
        assert_eq!(traj.times, vec![0.0, 3.0]);
        assert_eq!(traj.states, vec![x0.clone(), x0]);
    }

    #[test]
    fn trajectory_is_increasing_and_conserves() {
        let mut rules = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    rules.push(imitation(3, i, j, 1.5));
                    rules.push(exploration(3, i, j, 0.1));
                }
            }
        }
        let model = JumpModel::new(3, rules, 30).unwrap();
        let traj = gillespie_simulate(&model, &PopulationState::new(vec![10, 10, 10]), 2.0, 9).unwrap();
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*traj.times.last().unwrap(), 2.0);
        assert!(traj.states.iter().all(|s| s.total() == 30));
        assert_eq!(traj.state_at(2.0), traj.final_state());
    }

    #[test]
    fn cme_identity_at_time_zero_and_two_state_closed_form() {
        let model = JumpModel::new(2, vec![exploration(2, 0, 1, 1.0), exploration(2, 1, 0, 1.0)], 1).unwrap();
        let s0 = PopulationState::new(vec![1, 0]);
        let s1 = PopulationState::new(vec![0, 1]);
        let p0 = [(s0.clone(), 1.0)];
        let at0 = cme_solve(&model, &p0, 0.0, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(at0.prob(&s0), 1.0);
        let p = cme_solve(&model, &p0, 1.0, DEFAULT_STATE_CAP).unwrap();
        let e = math::exp(-2.0);
        assert!((p.prob(&s0) - (1.0 + e) / 2.0).abs() < 1e-12);
        assert!((p.prob(&s1) - (1.0 - e) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cme_capacity_error() {
        let model = JumpModel::new(2, vec![exploration(2, 0, 1, 1.0)], 100).unwrap();
        let p0 = [(PopulationState::new(vec![100, 0]), 1.0)];
        assert_eq!(cme_solve(&model, &p0, 1.0, 50), Err(Error::Capacity { cap: 50 }));
    }

    #[test]
    fn sparse_action_agrees_with_dense_exponential() {
        let mut rules = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    rules.push(imitation(3, i, j, 1.0 + (i + 2 * j) as f64 * 0.3));
                    rules.push(exploration(3, i, j, 0.05));
                }
            }
        }
        let model = JumpModel::new(3, rules, 12).unwrap();
        let space = reachable_states(&model, &[PopulationState::new(vec![4, 4, 4])], 1000).unwrap();
        let q = cme_rate_matrix(&model, &space);
        let mut p = vec![0.0; space.len()];
        p[space.index_of(&PopulationState::new(vec![4, 4, 4])).unwrap()] = 1.0;
        let dense: Vec<f64> =
            (linalg::expm(&(q.to_dense() * 0.7)) * DVector::from_vec(p.clone())).iter().copied().collect();
        let sparse = expm_action(&q, p, 0.7);
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() < 1e-11);
        }
        assert!(q.column_sums().iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn langevin_reduction_matches_substitution() {
        let model =
            JumpModel::new(3, vec![imitation(3, 0, 2, 2.0), exploration(3, 2, 1, 0.5)], 20).unwrap();
        let full = limit_sde_polynomials(&model);
        let reduced = full.reduce_blocks(&[3]).unwrap();
        for &(c1, c2) in &[(0.2, 0.3), (0.5, 0.1), (0.05, 0.9)] {
            let c = [c1, c2, 1.0 - c1 - c2];
            for i in 0..2 {
                assert!((reduced.drift[i].eval(&[c1, c2]) - full.drift[i].eval(&c)).abs() < 1e-14);
                for j in 0..2 {
                    let r = reduced.diffusion[i][j].eval(&[c1, c2]);
                    assert!((r - full.diffusion[i][j].eval(&c)).abs() < 1e-14);
                }
            }
        }
    }
}
