//! Spatial predator-prey model on a periodic rectangle.
//!
//! Agents random-walk with Gaussian steps. Prey reproduce with a fixed
//! probability; predators kill a random prey within their radius of vision and
//! may then reproduce, otherwise they may die. Offspring are placed uniformly.
//! The macrostate is the pair (prey, predators).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Breed {
    Prey,
    Predator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub x: f64,
    pub y: f64,
    pub breed: Breed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpmParams {
    pub width: f64,
    pub height: f64,
    /// Variance `h` of each coordinate of a step.
    pub step_variance: f64,
    pub p_rep: f64,
    /// Reproduction probability of a predator after a kill.
    pub p_rep_pred: f64,
    /// Death probability of a predator that found no prey.
    pub p_death: f64,
    pub vision: f64,
    /// Steps abort with a capacity error beyond this many agents.
    pub max_agents: usize,
}

impl PpmParams {
    /// 100 x 100 domain, `h = 1`, `p_rep = 0.03`, `p'_rep = 0.5`,
    /// `p_death = 0.02`, `v = 3`.
    pub fn table2() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            step_variance: 1.0,
            p_rep: 0.03,
            p_rep_pred: 0.5,
            p_death: 0.02,
            vision: 3.0,
            max_agents: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("width", self.width), ("height", self.height), ("step variance", self.step_variance), ("vision", self.vision)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, p) in [("p_rep", self.p_rep), ("p_rep_pred", self.p_rep_pred), ("p_death", self.p_death)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidModel(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.vision >= self.width.min(self.height) / 2.0 {
            return Err(Error::InvalidModel("vision must be below half the domain size".into()));
        }
        Ok(())
    }
}

impl Default for PpmParams {
    fn default() -> Self {
        Self::table2()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PpmState {
    pub agents: Vec<Agent>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CountState {
    pub prey: u64,
    pub predators: u64,
}

impl CountState {
    pub fn as_f64(&self) -> [f64; 2] {
        [self.prey as f64, self.predators as f64]
    }
}

/// Tally of what happened during one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub prey_births: u64,
    pub kills: u64,
    pub predator_births: u64,
    pub predator_deaths: u64,
}

/// Position wrapped into `[0, size)`.
pub fn wrap(x: f64, size: f64) -> f64 {
    let r = libm::fmod(x, size);
    let r = if r < 0.0 { r + size } else { r };
    if r >= size {
        0.0
    } else {
        r
    }
}

fn wrapped_delta(a: f64, b: f64, size: f64) -> f64 {
    let d = (a - b).abs() % size;
    d.min(size - d)
}

/// Minimal-image Euclidean distance on the torus.
pub fn torus_distance(a: (f64, f64), b: (f64, f64), params: &PpmParams) -> f64 {
    let dx = wrapped_delta(a.0, b.0, params.width);
    let dy = wrapped_delta(a.1, b.1, params.height);
    math::sqrt(dx * dx + dy * dy)
}

pub fn ppm_counts(state: &PpmState) -> CountState {
    let prey = state.agents.iter().filter(|a| a.breed == Breed::Prey).count() as u64;
    CountState { prey, predators: state.agents.len() as u64 - prey }
}

/// Places the given numbers of prey and predators uniformly at random.
pub fn random_state<R: Rng + ?Sized>(counts: CountState, params: &PpmParams, rng: &mut R) -> PpmState {
    let mut agents = Vec::with_capacity((counts.prey + counts.predators) as usize);
    for (breed, n) in [(Breed::Prey, counts.prey), (Breed::Predator, counts.predators)] {
        for _ in 0..n {
            let (x, y) = uniform_position(params, rng);
            agents.push(Agent { x, y, breed });
        }
    }
    PpmState { agents }
}

fn uniform_position<R: Rng + ?Sized>(params: &PpmParams, rng: &mut R) -> (f64, f64) {
    (wrap(rng.random::<f64>() * params.width, params.width), wrap(rng.random::<f64>() * params.height, params.height))
}

/// Uniform binning of live prey with cells at least `vision` wide.
struct PreyGrid {
    nx: usize,
    ny: usize,
    cell_w: f64,
    cell_h: f64,
    cells: Vec<Vec<usize>>,
    /// `(cell, slot)` of every binned agent.
    place: Vec<Option<(usize, usize)>>,
}

impl PreyGrid {
    fn new(params: &PpmParams, capacity: usize) -> Self {
        let nx = (math::floor(params.width / params.vision) as usize).max(1);
        let ny = (math::floor(params.height / params.vision) as usize).max(1);
        Self {
            nx,
            ny,
            cell_w: params.width / nx as f64,
            cell_h: params.height / ny as f64,
            cells: vec![Vec::new(); nx * ny],
            place: Vec::with_capacity(capacity),
        }
    }

    fn cell_coords(&self, x: f64, y: f64) -> (usize, usize) {
        (((x / self.cell_w) as usize).min(self.nx - 1), ((y / self.cell_h) as usize).min(self.ny - 1))
    }

    fn insert(&mut self, id: usize, x: f64, y: f64) {
        if self.place.len() <= id {
            self.place.resize(id + 1, None);
        }
        let (cx, cy) = self.cell_coords(x, y);
        let cell = cy * self.nx + cx;
        self.place[id] = Some((cell, self.cells[cell].len()));
        self.cells[cell].push(id);
    }

    fn remove(&mut self, id: usize) {
        if let Some((cell, slot)) = self.place[id].take() {
            self.cells[cell].swap_remove(slot);
            if let Some(&moved) = self.cells[cell].get(slot) {
                self.place[moved] = Some((cell, slot));
            }
        }
    }

    /// Distinct cells of the wrapped 3 x 3 block around `(x, y)`.
    fn neighborhood(&self, x: f64, y: f64) -> Vec<usize> {
        let (cx, cy) = self.cell_coords(x, y);
        let mut out = Vec::with_capacity(9);
        for dy in [self.ny - 1, 0, 1] {
            for dx in [self.nx - 1, 0, 1] {
                let cell = ((cy + dy) % self.ny) * self.nx + (cx + dx) % self.nx;
                if !out.contains(&cell) {
                    out.push(cell);
                }
            }
        }
        out
    }
}

/// One time step from a seed.
pub fn ppm_step(state: &PpmState, params: &PpmParams, seed: u64) -> Result<PpmState> {
    let mut next = state.clone();
    ppm_step_with(&mut next, params, &mut rng_for(seed, &[]))?;
    Ok(next)
}

/// Advances `state` by one step in place. All agents present at the start
/// act once, in a uniformly random joint order; offspring wait for the next
/// step but may be killed in this one.
pub fn ppm_step_with<R: Rng + ?Sized>(state: &mut PpmState, params: &PpmParams, rng: &mut R) -> Result<StepEvents> {
    params.validate()?;
    let agents = &mut state.agents;
    let initial = agents.len();
    let mut alive = vec![true; initial];
    let mut grid = PreyGrid::new(params, initial);
    for (id, a) in agents.iter().enumerate() {
        if a.breed == Breed::Prey {
            grid.insert(id, a.x, a.y);
        }
    }
    let mut order: Vec<usize> = (0..initial).collect();
    order.shuffle(rng);
    let sd = math::sqrt(params.step_variance);
    let mut events = StepEvents::default();
    let mut candidates = Vec::new();
    for id in order {
        if !alive[id] {
            continue;
        }
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let a = &mut agents[id];
        a.x = wrap(a.x + sd * dx, params.width);
        a.y = wrap(a.y + sd * dy, params.height);
        let (x, y) = (a.x, a.y);
        match a.breed {
            Breed::Prey => {
                grid.remove(id);
                grid.insert(id, x, y);
                if rng.random::<f64>() < params.p_rep {
                    let (nx, ny) = uniform_position(params, rng);
                    grid.insert(agents.len(), nx, ny);
                    agents.push(Agent { x: nx, y: ny, breed: Breed::Prey });
                    alive.push(true);
                    events.prey_births += 1;
                }
            }
            Breed::Predator => {
                candidates.clear();
                for cell in grid.neighborhood(x, y) {
                    for &prey in &grid.cells[cell] {
                        let p = &agents[prey];
                        if torus_distance((x, y), (p.x, p.y), params) <= params.vision {
                            candidates.push(prey);
                        }
                    }
                }
                if candidates.is_empty() {
                    if rng.random::<f64>() < params.p_death {
                        alive[id] = false;
                        events.predator_deaths += 1;
                    }
                } else {
                    // Cell contents are reordered by removals; sort for a
                    // choice that depends only on the random stream.
                    candidates.sort_unstable();
                    let victim = candidates[rng.random_range(0..candidates.len())];
                    grid.remove(victim);
                    alive[victim] = false;
                    events.kills += 1;
                    if rng.random::<f64>() < params.p_rep_pred {
                        let (nx, ny) = uniform_position(params, rng);
                        agents.push(Agent { x: nx, y: ny, breed: Breed::Predator });
                        alive.push(true);
                        events.predator_births += 1;
                    }
                }
            }
        }
    }
    let mut keep = alive.into_iter();
    agents.retain(|_| keep.next().expect("one flag per agent"));
    if agents.len() > params.max_agents {
        return Err(Error::Capacity { cap: params.max_agents });
    }
    Ok(events)
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtinctionOutcome {
    /// Predators vanished while prey remained.
    PredatorsFirst { step: usize },
    /// Prey vanished (predators then starve).
    PreyFirst { step: usize },
    /// Both breeds present after the last step.
    Coexistence,
}

/// Steps until one breed dies out or `max_steps` is reached. Returns the
/// outcome and the count series including the initial state.
pub fn run_until_extinction<R: Rng + ?Sized>(
    state: &mut PpmState,
    params: &PpmParams,
    max_steps: usize,
    rng: &mut R,
) -> Result<(ExtinctionOutcome, Vec<CountState>)> {
    let mut series = vec![ppm_counts(state)];
    for step in 1..=max_steps {
        ppm_step_with(state, params, rng)?;
        let c = ppm_counts(state);
        series.push(c);
        if c.prey == 0 {
            return Ok((ExtinctionOutcome::PreyFirst { step }, series));
        }
        if c.predators == 0 {
            return Ok((ExtinctionOutcome::PredatorsFirst { step }, series));
        }
    }
    Ok((ExtinctionOutcome::Coexistence, series))
}
