//! Training data: measurement points and pointwise Kramers–Moyal estimates.
//!
//! For a macrostate `x` and lag `tau`, the drift and diffusion are estimated
//! from `k` independent short runs as
//! `b(x) = E[X_tau - x] / tau` and `a(x) = E[(X_tau - x)(X_tau - x)^T] / tau`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::mjp::PopulationState;
use crate::rng::{rng_for, SimRng};
use crate::voter::{AgentTypeState, Network};

/// Pointwise drift and diffusion estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub point: Vec<f64>,
    pub drift: Vec<f64>,
    /// Row-major `dim x dim`, symmetric.
    pub diffusion: Vec<f64>,
    pub sample_count: usize,
    pub lag: f64,
}

impl Measurement {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn diffusion_entry(&self, i: usize, j: usize) -> f64 {
        self.diffusion[i * self.dim() + j]
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.drift.len() != d || self.diffusion.len() != d * d {
            return Err(Error::Data("measurement dimensions are inconsistent".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Points drawn without replacement from the discrete simplex.
    UniformSimplex,
    /// Points collected along trajectories at multiples of the lag.
    OnTheFly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingPlan {
    pub num_points: usize,
    pub samples_per_point: usize,
    pub lag: f64,
    pub mode: SamplingMode,
}

impl SamplingPlan {
    pub fn new(num_points: usize, samples_per_point: usize, lag: f64, mode: SamplingMode) -> Result<Self> {
        if num_points == 0 || samples_per_point == 0 {
            return Err(Error::Contract("m and k must be at least 1".into()));
        }
        if !(lag > 0.0 && lag.is_finite()) {
            return Err(Error::Contract(format!("lag must be positive, got {lag}")));
        }
        Ok(Self { num_points, samples_per_point, lag, mode })
    }
}

/// Number of compositions of `n` into `d` nonnegative parts, `C(n + d - 1, d - 1)`.
pub fn simplex_size(n: u64, d: usize) -> u128 {
    if d == 0 {
        return u128::from(n == 0);
    }
    math::binomial_exact(n + d as u64 - 1, d as u64 - 1)
}

/// `min(round(0.1 C(N + d - 1, d - 1)), 10000)`.
pub fn default_measurement_count(n: u64, d: usize) -> usize {
    let size = simplex_size(n, d);
    if size >= 100_000 {
        return 10_000;
    }
    (math::round(size as f64 * 0.1) as usize).min(10_000)
}

/// All states with `d` nonnegative counts summing to `n`, in lexicographic order.
pub fn simplex_points(n: u64, d: usize, cap: usize) -> Result<Vec<PopulationState>> {
    if d < 1 {
        return Err(Error::Contract("at least one coordinate is required".into()));
    }
    if simplex_size(n, d) > cap as u128 {
        return Err(Error::Capacity { cap });
    }
    let mut out = Vec::new();
    let mut current = vec![0u32; d];
    fill(&mut current, 0, n as u32, &mut out);
    Ok(out)
}

fn fill(current: &mut [u32], i: usize, remaining: u32, out: &mut Vec<PopulationState>) {
    let d = current.len();
    if i == d - 1 {
        current[i] = remaining;
        out.push(PopulationState::new(current.to_vec()));
        return;
    }
    for v in 0..=remaining {
        current[i] = v;
        fill(current, i + 1, remaining - v, out);
    }
}

/// The `rank`-th state of [`simplex_points`] without enumerating the others.
pub fn unrank_simplex_point(n: u64, d: usize, mut rank: u128) -> Result<PopulationState> {
    let size = simplex_size(n, d);
    if rank >= size {
        return Err(Error::Index { index: usize::try_from(rank).unwrap_or(usize::MAX), len: usize::try_from(size).unwrap_or(usize::MAX) });
    }
    let mut counts = vec![0u32; d];
    let mut remaining = n;
    for i in 0..d - 1 {
        let mut v = 0;
        loop {
            let block = simplex_size(remaining - v, d - i - 1);
            if rank < block {
                break;
            }
            rank -= block;
            v += 1;
        }
        counts[i] = v as u32;
        remaining -= v;
    }
    counts[d - 1] = remaining as u32;
    Ok(PopulationState::new(counts))
}

/// `m` distinct simplex states drawn uniformly without replacement, returned in
/// lexicographic order.
pub fn sample_simplex_points<R: Rng + ?Sized>(n: u64, d: usize, m: usize, rng: &mut R) -> Result<Vec<PopulationState>> {
    let size = simplex_size(n, d);
    if m as u128 > size {
        return Err(Error::Contract(format!("{m} points requested from a simplex of {size}")));
    }
    // Floyd's algorithm: m draws, each from a growing range.
    let mut chosen = BTreeSet::new();
    for j in (size - m as u128)..size {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().map(|r| unrank_simplex_point(n, d, r)).collect()
}

/// Integer counts summing to `total` that are closest to `freqs * total`
/// (largest-remainder rounding, ties broken towards lower indices).
pub fn largest_remainder(freqs: &[f64], total: u32) -> Result<Vec<u32>> {
    let sum: f64 = freqs.iter().sum();
    if freqs.iter().any(|&f| !(f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("frequencies must be nonnegative and sum to 1 (sum = {sum})")));
    }
    let targets: Vec<f64> = freqs.iter().map(|&f| f * total as f64).collect();
    let mut counts: Vec<u32> = targets.iter().map(|&t| math::floor(t) as u32).collect();
    let assigned: u32 = counts.iter().sum();
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = targets[a] - counts[a] as f64;
        let rb = targets[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Random agent-level state whose per-cluster type counts round `freqs`
/// (stacked cluster blocks of length `d`).
pub fn lift_macro_to_micro(freqs: &[f64], network: &Network, d: usize, seed: u64) -> Result<AgentTypeState> {
    lift_macro_to_micro_with(freqs, network, d, &mut rng_for(seed, &[]))
}

pub fn lift_macro_to_micro_with<R: Rng + ?Sized>(
    freqs: &[f64],
    network: &Network,
    d: usize,
    rng: &mut R,
) -> Result<AgentTypeState> {
    let sizes = network.cluster_sizes();
    if freqs.len() != sizes.len() * d {
        return Err(Error::Contract(format!("{} frequencies for {} clusters of {d} types", freqs.len(), sizes.len())));
    }
    if let Some(q) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Domain(format!("cluster {q} is empty")));
    }
    let counts = freqs
        .chunks(d)
        .zip(&sizes)
        .map(|(block, &size)| largest_remainder(block, size as u32))
        .collect::<Result<Vec<_>>>()?;
    AgentTypeState::from_cluster_counts(network, &counts, rng)
}

/// Running sums for one measurement point.
#[derive(Clone, Debug, PartialEq)]
pub struct KmAccumulator {
    origin: Vec<f64>,
    sum: Vec<f64>,
    sum_outer: Vec<f64>,
    count: usize,
}

impl KmAccumulator {
    pub fn new(origin: &[f64]) -> Self {
        let d = origin.len();
        Self { origin: origin.to_vec(), sum: vec![0.0; d], sum_outer: vec![0.0; d * d], count: 0 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, end: &[f64]) {
        let d = self.origin.len();
        debug_assert_eq!(end.len(), d);
        for i in 0..d {
            let di = end[i] - self.origin[i];
            self.sum[i] += di;
            for j in i..d {
                self.sum_outer[i * d + j] += di * (end[j] - self.origin[j]);
            }
        }
        self.count += 1;
    }

    /// Adds the sums of `other`, which must share the origin.
    pub fn merge(&mut self, other: &KmAccumulator) {
        assert_eq!(self.origin, other.origin);
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_outer.iter_mut().zip(&other.sum_outer) {
            *a += b;
        }
        self.count += other.count;
    }

    pub fn finish(&self, lag: f64) -> Measurement {
        let d = self.origin.len();
        let k = self.count.max(1) as f64;
        let drift = self.sum.iter().map(|s| s / (k * lag)).collect();
        let mut diffusion = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = self.sum_outer[i * d + j] / (k * lag);
                diffusion[i * d + j] = v;
                diffusion[j * d + i] = v;
            }
        }
        Measurement { point: self.origin.clone(), drift, diffusion, sample_count: self.count, lag }
    }
}

/// Kramers–Moyal estimate at `point` from `samples` runs of `sampler`, which
/// returns `X_lag` given `X_0 = point`. Sample `i` draws from the stream
/// `rng_for(seed, [i])`.
pub fn km_estimate<F>(mut sampler: F, point: &[f64], samples: usize, lag: f64, seed: u64) -> Result<Measurement>
where
    F: FnMut(&[f64], f64, &mut SimRng) -> Result<Vec<f64>>,
{
    Ok(km_accumulate(&mut sampler, point, 0..samples, lag, seed)?.finish(lag))
}

/// Sums over the samples in `range`; chunks can be merged in any grouping.
pub fn km_accumulate<F>(
    sampler: &mut F,
    point: &[f64],
    range: core::ops::Range<usize>,
    lag: f64,
    seed: u64,
) -> Result<KmAccumulator>
where
    F: FnMut(&[f64], f64, &mut SimRng) -> Result<Vec<f64>>,
{
    let mut acc = KmAccumulator::new(point);
    for i in range {
        let mut rng = rng_for(seed, &[i as u64]);
        let end = sampler(point, lag, &mut rng)?;
        if end.len() != point.len() {
            return Err(Error::Contract("sampler returned a state of the wrong dimension".into()));
        }
        acc.add(&end);
    }
    Ok(acc)
}

/// Distinct states from trajectory snapshots; `m` of them drawn uniformly
/// without replacement when there are more than `m`. Sorted on return.
pub fn on_the_fly_points<R: Rng + ?Sized>(
    snapshots: impl IntoIterator<Item = Vec<u32>>,
    m: usize,
    rng: &mut R,
) -> Vec<Vec<u32>> {
    let distinct: BTreeSet<Vec<u32>> = snapshots.into_iter().collect();
    let mut all: Vec<Vec<u32>> = distinct.into_iter().collect();
    if all.len() > m {
        all.shuffle(rng);
        all.truncate(m);
        all.sort();
    }
    all
}

fn block_starts(blocks: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    blocks
        .iter()
        .map(|&s| {
            let start = acc;
            acc += s;
            start
        })
        .collect()
}

/// Coordinates kept after dropping the last coordinate of every block.
fn kept_coordinates(dim: usize, blocks: &[usize]) -> Vec<usize> {
    let dropped: Vec<usize> = block_starts(blocks).iter().zip(blocks).map(|(s, n)| s + n - 1).collect();
    (0..dim).filter(|i| !dropped.contains(i)).collect()
}

/// Drops the last coordinate of every block in `conserved_blocks` (each block
/// must sum to `block_total`) and, if `scale` is set, divides points and drift
/// by `block_total` and diffusion by its square. An empty block list skips the
/// reduction.
pub fn reduce_and_scale(
    measurements: &[Measurement],
    block_total: f64,
    conserved_blocks: &[usize],
    scale: bool,
) -> Result<Vec<Measurement>> {
    measurements.iter().map(|m| reduce_one(m, block_total, conserved_blocks, scale)).collect()
}

fn reduce_one(m: &Measurement, total: f64, blocks: &[usize], scale: bool) -> Result<Measurement> {
    m.validate()?;
    let d = m.dim();
    if !blocks.is_empty() && blocks.iter().sum::<usize>() != d {
        return Err(Error::Contract(format!("blocks {blocks:?} do not partition {d} coordinates")));
    }
    for (start, size) in block_starts(blocks).into_iter().zip(blocks) {
        let sum: f64 = m.point[start..start + size].iter().sum();
        if (sum - total).abs() > 1e-9 * total.abs().max(1.0) {
            return Err(Error::Data(format!("block sum {sum} violates the conservation law (expected {total})")));
        }
    }
    let keep = kept_coordinates(d, blocks);
    let s = if scale { total } else { 1.0 };
    let point = keep.iter().map(|&i| m.point[i] / s).collect();
    let drift = keep.iter().map(|&i| m.drift[i] / s).collect();
    let mut diffusion = Vec::with_capacity(keep.len() * keep.len());
    for &i in &keep {
        for &j in &keep {
            diffusion.push(m.diffusion[i * d + j] / (s * s));
        }
    }
    Ok(Measurement { point, drift, diffusion, sample_count: m.sample_count, lag: m.lag })
}

/// Inverse of [`reduce_and_scale`] on conserved data. The dropped
/// coordinate of each block is `total - sum`, its drift `-sum` of the block's
/// drifts, and its diffusion row follows from `Cov(., sum of block) = 0`.
/// `block_total` is in the units of the reduced data.
pub fn restore_conserved(m: &Measurement, block_total: f64, conserved_blocks: &[usize]) -> Result<Measurement> {
    m.validate()?;
    let reduced_blocks: Vec<usize> = conserved_blocks.iter().map(|&s| s - 1).collect();
    let full_dim = m.dim() + conserved_blocks.len();
    if reduced_blocks.iter().sum::<usize>() != m.dim() {
        return Err(Error::Contract("blocks do not match the reduced dimension".into()));
    }
    let keep = kept_coordinates(full_dim, conserved_blocks);
    let mut point = vec![0.0; full_dim];
    let mut drift = vec![0.0; full_dim];
    let mut a = vec![0.0; full_dim * full_dim];
    for (r, &i) in keep.iter().enumerate() {
        point[i] = m.point[r];
        drift[i] = m.drift[r];
        for (s, &j) in keep.iter().enumerate() {
            a[i * full_dim + j] = m.diffusion[r * m.dim() + s];
        }
    }
    let starts = block_starts(conserved_blocks);
    let dropped: Vec<usize> = starts.iter().zip(conserved_blocks).map(|(s, n)| s + n - 1).collect();
    for (&start, &last) in starts.iter().zip(&dropped) {
        let members = start..last;
        point[last] = block_total - members.clone().map(|i| point[i]).sum::<f64>();
        drift[last] = -members.clone().map(|i| drift[i]).sum::<f64>();
        for &i in &keep {
            let v = -members.clone().map(|j| a[i * full_dim + j]).sum::<f64>();
            a[i * full_dim + last] = v;
            a[last * full_dim + i] = v;
        }
    }
    // Entries between two dropped coordinates use the already restored columns.
    for (&start_p, &p) in starts.iter().zip(&dropped) {
        for &q in &dropped {
            let v = -(start_p..p).map(|i| a[i * full_dim + q]).sum::<f64>();
            a[p * full_dim + q] = v;
            a[q * full_dim + p] = v;
        }
    }
    Ok(Measurement { point, drift, diffusion: a, sample_count: m.sample_count, lag: m.lag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voter::{aggregate, make_clustered_network};

    #[test]
    fn simplex_sizes() {
        assert_eq!(simplex_points(10, 3, 1000).unwrap().len(), 66);
        assert_eq!(simplex_size(100, 3), 5151);
        let unit = simplex_points(1, 3, 10).unwrap();
        assert_eq!(unit.len(), 3);
        assert!(unit.iter().all(|s| s.total() == 1));
        assert_eq!(simplex_points(100, 3, 100), Err(Error::Capacity { cap: 100 }));
    }

    #[test]
    fn default_counts_follow_table() {
        assert_eq!(default_measurement_count(10, 3), 7);
        assert_eq!(default_measurement_count(100, 3), 515);
        assert_eq!(default_measurement_count(250, 3), 3163);
        assert_eq!(default_measurement_count(500, 3), 10_000);
        assert_eq!(default_measurement_count(5000, 3), 10_000);
    }

    #[test]
    fn unranking_matches_enumeration() {
        let all = simplex_points(7, 4, 1000).unwrap();
        for (r, s) in all.iter().enumerate() {
            assert_eq!(&unrank_simplex_point(7, 4, r as u128).unwrap(), s);
        }
        assert!(unrank_simplex_point(7, 4, all.len() as u128).is_err());
    }

    #[test]
    fn sampling_without_replacement() {
        let mut rng = rng_for(3, &[]);
        let pts = sample_simplex_points(100, 3, 515, &mut rng).unwrap();
        assert_eq!(pts.len(), 515);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts.iter().all(|p| p.total() == 100));
        assert_eq!(sample_simplex_points(2, 3, 6, &mut rng).unwrap().len(), 6);
        assert!(sample_simplex_points(2, 3, 7, &mut rng).is_err());
    }

    #[test]
    fn simplex_sampling_is_uniform() {
        // 10 states, 3 drawn per trial: each state appears with probability 0.3.
        let mut hits = [0u32; 10];
        let trials = 20_000;
        let mut rng = rng_for(9, &[]);
        let all = simplex_points(3, 3, 100).unwrap();
        for _ in 0..trials {
            for p in sample_simplex_points(3, 3, 3, &mut rng).unwrap() {
                hits[all.iter().position(|s| *s == p).unwrap()] += 1;
            }
        }
        let se = math::sqrt(0.3 * 0.7 / trials as f64);
        for h in hits {
            assert!((h as f64 / trials as f64 - 0.3).abs() < 4.0 * se);
        }
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10).unwrap(), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.85, 0.1, 0.05], 50).unwrap(), vec![43, 5, 2]);
        assert!(largest_remainder(&[0.5, 0.6], 10).is_err());
    }

    #[test]
    fn lifting_round_trips() {
        let net = make_clustered_network(&[50, 50], 0.1, 1).unwrap();
        let c = [0.85, 0.1, 0.05, 0.2, 0.5, 0.3];
        let mut perms = BTreeSet::new();
        for seed in 0..100 {
            let s = lift_macro_to_micro(&c, &net, 3, seed).unwrap();
            let agg = aggregate(&net, &s, 3).unwrap();
            for (a, b) in agg.freqs.iter().zip(c) {
                assert!((a - b).abs() <= 1.0 / 100.0 + 1e-12);
            }
            perms.insert(s.types);
        }
        assert_eq!(perms.len(), 100);
        let complete = Network::complete(20);
        let all_first = lift_macro_to_micro(&[1.0, 0.0, 0.0], &complete, 3, 0).unwrap();
        assert!(all_first.types.iter().all(|&t| t == 0));
    }

    #[test]
    fn constant_process_has_zero_moments() {
        let m = km_estimate(|x, _, _| Ok(x.to_vec()), &[1.0, 2.0], 10, 0.1, 0).unwrap();
        assert_eq!(m.drift, vec![0.0, 0.0]);
        assert_eq!(m.diffusion, vec![0.0; 4]);
        assert_eq!(m.sample_count, 10);
    }

    #[test]
    fn accumulator_chunks_merge_to_whole() {
        let mut sampler = |x: &[f64], t: f64, rng: &mut SimRng| -> Result<Vec<f64>> {
            Ok(x.iter().map(|v| v + t * rng.random::<f64>()).collect())
        };
        let whole = km_accumulate(&mut sampler, &[0.5, 0.25], 0..100, 0.1, 5).unwrap();
        let mut parts = km_accumulate(&mut sampler, &[0.5, 0.25], 0..40, 0.1, 5).unwrap();
        parts.merge(&km_accumulate(&mut sampler, &[0.5, 0.25], 40..100, 0.1, 5).unwrap());
        let (a, b) = (whole.finish(0.1), parts.finish(0.1));
        for (x, y) in a.drift.iter().zip(&b.drift).chain(a.diffusion.iter().zip(&b.diffusion)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_and_scale_examples() {
        let m = Measurement {
            point: vec![2.0, 3.0, 5.0],
            drift: vec![1.0, -2.0, 1.0],
            diffusion: vec![2.0, -1.0, -1.0, -1.0, 3.0, -2.0, -1.0, -2.0, 3.0],
            sample_count: 4,
            lag: 0.01,
        };
        let r = &reduce_and_scale(core::slice::from_ref(&m), 10.0, &[3], true).unwrap()[0];
        assert_eq!(r.point, vec![0.2, 0.3]);
        assert_eq!(r.drift, vec![0.1, -0.2]);
        assert_eq!(r.diffusion, vec![0.02, -0.01, -0.01, 0.03]);
        let back = restore_conserved(r, 1.0, &[3]).unwrap();
        for (x, y) in back.point.iter().zip(&m.point) {
            assert!((x * 10.0 - y).abs() < 1e-12);
        }
        for (x, y) in back.drift.iter().zip(&m.drift) {
            assert!((x * 10.0 - y).abs() < 1e-12);
        }
        for (x, y) in back.diffusion.iter().zip(&m.diffusion) {
            assert!((x * 100.0 - y).abs() < 1e-12);
        }
        let broken = Measurement { point: vec![2.0, 3.0, 4.0], ..m };
        assert!(matches!(reduce_and_scale(&[broken], 10.0, &[3], true), Err(Error::Data(_))));
    }

    #[test]
    fn restore_two_blocks() {
        // Conserved two-cluster data: each block's increments sum to zero.
        let v = [[1.0, -1.0, 0.0, 0.5, 0.0, -0.5], [0.0, 2.0, -2.0, 0.0, 1.0, -1.0], [-1.0, 0.0, 1.0, 3.0, -3.0, 0.0]];
        let mut a = vec![0.0; 36];
        for x in &v {
            for i in 0..6 {
                for j in 0..6 {
                    a[i * 6 + j] += x[i] * x[j];
                }
            }
        }
        let m = Measurement {
            point: vec![0.5, 0.3, 0.2, 0.1, 0.1, 0.8],
            drift: vec![0.1, 0.2, -0.3, -0.4, 0.1, 0.3],
            diffusion: a.clone(),
            sample_count: 3,
            lag: 1.0,
        };
        let r = &reduce_and_scale(core::slice::from_ref(&m), 1.0, &[3, 3], false).unwrap()[0];
        assert_eq!(r.dim(), 4);
        let back = restore_conserved(r, 1.0, &[3, 3]).unwrap();
        for (x, y) in back.diffusion.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in back.drift.iter().zip(&m.drift) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
