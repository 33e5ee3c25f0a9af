//! Euler–Maruyama simulation of polynomial SDEs and ensemble statistics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gedmd::{psd_sigma_into, IdentifiedSde};
use crate::math;
use crate::rng::rng_for;

/// Drift `b(x)` and diffusion `a(x) = sigma sigma^T` (row-major).
pub trait SdeModel {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], drift: &mut [f64], diffusion: &mut [f64]);
}

impl SdeModel for IdentifiedSde {
    fn dim(&self) -> usize {
        IdentifiedSde::dim(self)
    }

    fn eval(&self, x: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        let psi = self.dictionary().eval(x);
        drift.copy_from_slice(&self.drift.eval_with(&psi));
        diffusion.copy_from_slice(&self.diffusion.eval_matrix_with(&psi));
    }
}

/// What to do with states that leave the admissible region.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    None,
    /// Negative components are set to zero.
    ClipNonnegative,
    /// Each block is clipped to nonnegative values and rescaled onto the
    /// simplex. With `reduced`, the block omits its last coordinate, so the
    /// block sum is only capped at 1.
    Simplex { blocks: Vec<usize>, reduced: bool },
}

impl Projection {
    pub fn apply(&self, x: &mut [f64]) {
        match self {
            Projection::None => {}
            Projection::ClipNonnegative => {
                for v in x.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            Projection::Simplex { blocks, reduced } => {
                let mut start = 0;
                for &len in blocks {
                    let block = &mut x[start..start + len];
                    for v in block.iter_mut() {
                        *v = v.max(0.0);
                    }
                    let sum: f64 = block.iter().sum();
                    if sum > 0.0 && (!reduced || sum > 1.0) {
                        for v in block.iter_mut() {
                            *v /= sum;
                        }
                    }
                    start += len;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub dt: f64,
    pub t_end: f64,
    pub num_paths: usize,
    pub seed: u64,
    pub projection: Projection,
    /// States are recorded every `save_stride` steps.
    pub save_stride: usize,
}

impl EmConfig {
    pub fn new(dt: f64, t_end: f64, num_paths: usize, seed: u64) -> Result<Self> {
        let cfg = Self { dt, t_end, num_paths, seed, projection: Projection::None, save_stride: 1 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = projection;
        self
    }

    pub fn with_save_stride(mut self, stride: usize) -> Self {
        self.save_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= self.t_end && self.t_end.is_finite()) {
            return Err(Error::Contract(format!("need 0 < dt <= t_end, got dt = {}, t_end = {}", self.dt, self.t_end)));
        }
        if self.num_paths == 0 || self.save_stride == 0 {
            return Err(Error::Contract("num_paths and save_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        math::round(self.t_end / self.dt) as usize
    }

    /// Recorded times: `0, stride dt, 2 stride dt, ...` up to `t_end`.
    pub fn save_times(&self) -> Vec<f64> {
        (0..=self.num_steps()).step_by(self.save_stride).map(|s| s as f64 * self.dt).collect()
    }
}

/// Recorded states of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

struct Workspace {
    drift: Vec<f64>,
    a: Vec<f64>,
    sigma: Vec<f64>,
    xi: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self { drift: vec![0.0; d], a: vec![0.0; d * d], sigma: vec![0.0; d * d], xi: vec![0.0; d] }
    }
}

fn em_step<M: SdeModel + ?Sized, R: Rng + ?Sized>(
    sde: &M,
    x: &mut [f64],
    dt: f64,
    projection: &Projection,
    ws: &mut Workspace,
    rng: &mut R,
) {
    let d = x.len();
    sde.eval(x, &mut ws.drift, &mut ws.a);
    psd_sigma_into(&ws.a, d, &mut ws.sigma);
    for v in ws.xi.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let sq = math::sqrt(dt);
    for i in 0..d {
        let noise: f64 = (0..d).map(|k| ws.sigma[i * d + k] * ws.xi[k]).sum();
        x[i] += ws.drift[i] * dt + sq * noise;
    }
    projection.apply(x);
}

fn check_start<M: SdeModel + ?Sized>(sde: &M, c0: &[f64]) -> Result<()> {
    if c0.len() != sde.dim() {
        return Err(Error::Contract(format!("initial state has {} components, model has {}", c0.len(), sde.dim())));
    }
    Ok(())
}

/// Path `path_index` of the ensemble described by `cfg`, drawn from the
/// stream `rng_for(cfg.seed, [path_index])`.
pub fn euler_maruyama<M: SdeModel + ?Sized>(sde: &M, c0: &[f64], cfg: &EmConfig, path_index: u64) -> Result<Path> {
    cfg.validate()?;
    check_start(sde, c0)?;
    let mut rng = rng_for(cfg.seed, &[path_index]);
    let mut ws = Workspace::new(c0.len());
    let mut x = c0.to_vec();
    let mut path = Path { times: vec![0.0], states: vec![x.clone()] };
    for step in 1..=cfg.num_steps() {
        em_step(sde, &mut x, cfg.dt, &cfg.projection, &mut ws, &mut rng);
        let t = step as f64 * cfg.dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { time: t });
        }
        if step % cfg.save_stride == 0 {
            path.times.push(t);
            path.states.push(x.clone());
        }
    }
    Ok(path)
}

/// Streaming mean and variance per saved time and component.
#[derive(Clone, Debug, PartialEq)]
pub struct WelfordGrid {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordGrid {
    pub fn new(num_times: usize, dim: usize) -> Self {
        Self { dim, count: 0, mean: vec![0.0; num_times * dim], m2: vec![0.0; num_times * dim] }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, states: &[Vec<f64>]) {
        assert_eq!(states.len() * self.dim, self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for (t, s) in states.iter().enumerate() {
            for (i, &v) in s.iter().enumerate() {
                let k = t * self.dim + i;
                let delta = v - self.mean[k];
                self.mean[k] += delta / n;
                self.m2[k] += delta * (v - self.mean[k]);
            }
        }
    }

    /// Pairwise combination; merging in a fixed order gives reproducible sums.
    pub fn merge(&mut self, other: &WelfordGrid) {
        assert_eq!(self.mean.len(), other.mean.len());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn finish(&self, times: Vec<f64>) -> EnsembleStats {
        let denom = (self.count.max(2) - 1) as f64;
        let to_rows = |v: Vec<f64>| v.chunks(self.dim).map(<[f64]>::to_vec).collect();
        let std = self.m2.iter().map(|m| math::sqrt((m / denom).max(0.0))).collect();
        EnsembleStats { times, mean: to_rows(self.mean.clone()), std: to_rows(std), num_paths: self.count as usize }
    }
}

/// Pointwise sample mean and standard deviation (divisor `n - 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub num_paths: usize,
}

pub fn ensemble_moments(paths: &[Path]) -> Result<EnsembleStats> {
    let first = paths.first().ok_or_else(|| Error::Data("no paths".into()))?;
    let dim = first.states.first().map_or(0, Vec::len);
    let mut grid = WelfordGrid::new(first.states.len(), dim);
    for p in paths {
        if p.states.len() != first.states.len() {
            return Err(Error::Contract("paths have different lengths".into()));
        }
        grid.push(&p.states);
    }
    Ok(grid.finish(first.times.clone()))
}

/// Paths per work unit of an ensemble. Results do not depend on how the
/// units are scheduled, since they are merged in index order.
pub const PATH_CHUNK: usize = 32;

/// Statistics of paths `range` of the ensemble.
pub fn ensemble_chunk<M: SdeModel + ?Sized>(
    sde: &M,
    c0: &[f64],
    cfg: &EmConfig,
    range: core::ops::Range<usize>,
) -> Result<WelfordGrid> {
    let mut grid = WelfordGrid::new(cfg.save_times().len(), c0.len());
    for p in range {
        grid.push(&euler_maruyama(sde, c0, cfg, p as u64)?.states);
    }
    Ok(grid)
}

/// Ranges of [`PATH_CHUNK`] paths covering the ensemble.
pub fn path_chunks(num_paths: usize) -> Vec<core::ops::Range<usize>> {
    (0..num_paths).step_by(PATH_CHUNK).map(|s| s..(s + PATH_CHUNK).min(num_paths)).collect()
}

/// Ensemble moments of `cfg.num_paths` Euler–Maruyama paths.
pub fn euler_maruyama_ensemble<M: SdeModel + ?Sized>(sde: &M, c0: &[f64], cfg: &EmConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    check_start(sde, c0)?;
    let mut total = WelfordGrid::new(cfg.save_times().len(), c0.len());
    for range in path_chunks(cfg.num_paths) {
        total.merge(&ensemble_chunk(sde, c0, cfg, range)?);
    }
    Ok(total.finish(cfg.save_times()))
}

/// Deterministic part `dx/dt = b(x)` by classical Runge–Kutta.
pub fn integrate_drift<M: SdeModel + ?Sized>(sde: &M, c0: &[f64], dt: f64, t_end: f64, save_stride: usize) -> Result<Path> {
    check_start(sde, c0)?;
    let d = c0.len();
    let mut a = vec![0.0; d * d];
    let mut f = |x: &[f64]| {
        let mut b = vec![0.0; d];
        sde.eval(x, &mut b, &mut a);
        b
    };
    let steps = math::round(t_end / dt) as usize;
    let mut x = c0.to_vec();
    let mut path = Path { times: vec![0.0], states: vec![x.clone()] };
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    for step in 1..=steps {
        let k1 = f(&x);
        let k2 = f(&axpy(&x, &k1, dt / 2.0));
        let k3 = f(&axpy(&x, &k2, dt / 2.0));
        let k4 = f(&axpy(&x, &k3, dt));
        for i in 0..d {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { time: step as f64 * dt });
        }
        if step % save_stride.max(1) == 0 {
            path.times.push(step as f64 * dt);
            path.states.push(x.clone());
        }
    }
    Ok(path)
}

/// Root mean square difference over all components of two equally long sequences.
pub fn rmse(predicted: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::Contract(format!("sequence lengths {} and {} must match and be nonzero", predicted.len(), reference.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, r) in predicted.iter().zip(reference) {
        if p.len() != r.len() {
            return Err(Error::Contract("element dimensions differ".into()));
        }
        for (a, b) in p.iter().zip(r) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(math::sqrt(sum / count.max(1) as f64))
}

/// RMSE of drift and of `N`-rescaled diffusion coefficients over the
/// monomials of degree below the dictionary's maximum.
pub fn coefficient_error(identified: &IdentifiedSde, reference: &IdentifiedSde) -> Result<(f64, f64)> {
    let dict = identified.dictionary();
    if dict != reference.dictionary() {
        return Err(Error::Contract("models use different dictionaries".into()));
    }
    let keep: Vec<usize> = dict
        .indices()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.iter().sum::<u32>() < dict.max_degree())
        .map(|(k, _)| k)
        .collect();
    let pick = |rows: &[Vec<f64>], scale: f64| -> Vec<Vec<f64>> {
        rows.iter().map(|r| keep.iter().map(|&k| r[k] * scale).collect()).collect()
    };
    let drift = rmse(&pick(identified.drift.coefficients(), 1.0), &pick(reference.drift.coefficients(), 1.0))?;
    let diffusion = rmse(
        &pick(identified.diffusion.entries().coefficients(), identified.population_size as f64),
        &pick(reference.diffusion.entries().coefficients(), reference.population_size as f64),
    )?;
    Ok((drift, diffusion))
}
