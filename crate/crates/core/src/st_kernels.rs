//! Simulated tempering kernels on the lifted space `𝒳 × {0..N} × {−1,+1}`.
//!
//! [`nrst_step`] is the non-reversible kernel: the tempering proposal follows
//! the current direction and the direction flips only on rejection.
//! [`st_step`] is the reversible baseline with a fair-coin proposal.
//! [`run_tour`] runs either kernel from the regeneration measure until the
//! atom is hit. The second half of the module holds the idealized index
//! process, where exploration is assumed to refresh `V` perfectly, together
//! with its closed-form tour effectiveness.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::explore::{compose, Kernel, SliceConfig, SliceGibbs};
use crate::model::{acceptance_unchecked, Schedule, TemperedModel};

/// Default bound on the number of kernel steps in a tour.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Nrst,
    St,
}

impl std::str::FromStr for Variant {
    type Err = NrstError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nrst" => Ok(Variant::Nrst),
            "st" => Ok(Variant::St),
            other => Err(invalid(format!("variant: expected `nrst` or `st`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Nrst => "nrst",
            Variant::St => "st",
        })
    }
}

/// Test hook that replaces the acceptance draw of interior tempering moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemperingOverride {
    #[default]
    Sample,
    ForceAccept,
    ForceReject,
}

/// Exact sampler for `π^(β)`; used to emulate perfectly mixing explorers.
pub trait LevelSampler: Send + Sync {
    fn sample(&self, beta: f64, rng: &mut dyn RngCore) -> Vec<f64>;
}

#[derive(Clone)]
pub enum ExplorerKind {
    Slice(SliceConfig),
    Exact(Arc<dyn LevelSampler>),
}

/// Exploration configuration shared by all levels.
#[derive(Clone)]
pub struct Explorers {
    pub kind: ExplorerKind,
    pub tempering: TemperingOverride,
}

impl Default for Explorers {
    fn default() -> Self {
        Self::slice(SliceConfig::default())
    }
}

impl Explorers {
    pub fn slice(cfg: SliceConfig) -> Self {
        Self {
            kind: ExplorerKind::Slice(cfg),
            tempering: TemperingOverride::Sample,
        }
    }

    pub fn exact(sampler: Arc<dyn LevelSampler>) -> Self {
        Self {
            kind: ExplorerKind::Exact(sampler),
            tempering: TemperingOverride::Sample,
        }
    }

    pub fn with_override(mut self, tempering: TemperingOverride) -> Self {
        self.tempering = tempering;
        self
    }
}

/// Lifted state. `v` caches `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub v: f64,
    pub level: usize,
    pub direction: i8,
}

impl ChainState {
    /// A draw from the regeneration measure: `x ~ π₀`, level 0, heading up.
    pub fn regenerate(model: &TemperedModel, rng: &mut dyn RngCore) -> Result<Self> {
        let x = model.sample_reference(rng);
        let v = model.checked_potential(&x)?;
        Ok(Self {
            x,
            v,
            level: 0,
            direction: 1,
        })
    }

    /// Membership in the NRST atom `𝒳 × {0} × {−1}`.
    pub fn in_atom(&self) -> bool {
        self.level == 0 && self.direction == -1
    }
}

fn check_state(state: &ChainState, schedule: &Schedule) -> Result<()> {
    if state.level > schedule.top() {
        return Err(invalid(format!(
            "state level {} exceeds top level {}",
            state.level,
            schedule.top()
        )));
    }
    if state.direction != 1 && state.direction != -1 {
        return Err(invalid("state direction must be +1 or -1"));
    }
    Ok(())
}

fn accept_move(
    state: &ChainState,
    target: usize,
    schedule: &Schedule,
    tempering: TemperingOverride,
    rng: &mut dyn RngCore,
) -> bool {
    match tempering {
        TemperingOverride::ForceAccept => true,
        TemperingOverride::ForceReject => false,
        TemperingOverride::Sample => {
            let i = state.level;
            let a = acceptance_unchecked(
                state.v,
                schedule.betas[target] - schedule.betas[i],
                schedule.affinities[target] - schedule.affinities[i],
            );
            rng.random::<f64>() < a
        }
    }
}

fn explore(
    state: &mut ChainState,
    model: &TemperedModel,
    schedule: &Schedule,
    explorers: &Explorers,
    rng: &mut dyn RngCore,
) -> Result<()> {
    let i = state.level;
    if i == 0 {
        state.x = model.sample_reference(rng);
        state.v = model.checked_potential(&state.x)?;
        return Ok(());
    }
    match &explorers.kind {
        ExplorerKind::Slice(cfg) => {
            let k = compose(SliceGibbs::new(schedule.betas[i], *cfg), schedule.steps_at(i))?;
            k.apply(model, &mut state.x, &mut state.v, rng)
        }
        ExplorerKind::Exact(sampler) => {
            state.x = sampler.sample(schedule.betas[i], rng);
            state.v = model.checked_potential(&state.x)?;
            Ok(())
        }
    }
}

/// One NRST step: deterministic tempering proposal along the current
/// direction (bouncing at the ends), then exploration at the new level.
pub fn nrst_step(
    state: &mut ChainState,
    model: &TemperedModel,
    schedule: &Schedule,
    explorers: &Explorers,
    rng: &mut dyn RngCore,
) -> Result<()> {
    check_state(state, schedule)?;
    let top = schedule.top();
    let proposal = state.level as i64 + state.direction as i64;
    if proposal > top as i64 {
        state.direction = -1;
    } else if proposal < 0 {
        state.direction = 1;
    } else if accept_move(state, proposal as usize, schedule, explorers.tempering, rng) {
        state.level = proposal as usize;
    } else {
        state.direction = -state.direction;
    }
    explore(state, model, schedule, explorers, rng)
}

/// One reversible ST step. The drawn proposal direction is stored in
/// `state.direction`; out-of-range proposals are rejected.
pub fn st_step(
    state: &mut ChainState,
    model: &TemperedModel,
    schedule: &Schedule,
    explorers: &Explorers,
    rng: &mut dyn RngCore,
) -> Result<()> {
    check_state(state, schedule)?;
    let dir: i8 = if rng.random::<bool>() { 1 } else { -1 };
    state.direction = dir;
    let proposal = state.level as i64 + dir as i64;
    if (0..=schedule.top() as i64).contains(&proposal)
        && accept_move(state, proposal as usize, schedule, explorers.tempering, rng)
    {
        state.level = proposal as usize;
    }
    explore(state, model, schedule, explorers, rng)
}

pub type TestFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One lifted state of a tour. `h` holds the test-function values and is
/// only filled at the top level, the only place they enter the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub level: usize,
    pub direction: i8,
    pub v: f64,
    pub h: Vec<f64>,
}

/// Trace of one regeneration tour.
///
/// `steps[0]` is the regeneration state `(0, +1)`; every following record is
/// the state after one kernel step. `tau` is the regenerative tour length:
/// the number of chain states charged to the tour when consecutive tours are
/// concatenated. For NRST this counts every record (the regeneration state
/// is produced by the bounce out of the atom); for ST the starting state is
/// the previous tour's terminal visit to level 0, so it is not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourTrace {
    pub variant: Variant,
    pub steps: Vec<StepRecord>,
    pub tau: usize,
    pub visits_top: usize,
    /// Sum of each test function over the top-level states.
    pub h_sums: Vec<f64>,
    pub v_evals: u64,
    pub cpu_seconds: f64,
}

impl TourTrace {
    pub fn kernel_steps(&self) -> usize {
        self.steps.len() - 1
    }

    /// Checks the structural invariants of a complete tour.
    pub fn check_invariants(&self, top: usize) -> std::result::Result<(), String> {
        let first = self.steps.first().ok_or("empty trace")?;
        if first.level != 0 || first.direction != 1 {
            return Err("first state is not (0, +1)".into());
        }
        let last = self.steps.last().unwrap();
        match self.variant {
            Variant::Nrst => {
                if !(last.level == 0 && last.direction == -1) {
                    return Err("last state is not the atom".into());
                }
                let atoms = self.steps.iter().filter(|s| s.level == 0 && s.direction == -1).count();
                if atoms != 1 {
                    return Err(format!("{atoms} atom visits"));
                }
            }
            Variant::St => {
                if self.steps.len() < 2 || last.level != 0 {
                    return Err("last state is not at level 0".into());
                }
                if self.steps[1..self.steps.len() - 1].iter().any(|s| s.level == 0) {
                    return Err("intermediate visit to level 0".into());
                }
            }
        }
        let tops = self.steps.iter().filter(|s| s.level == top).count();
        if tops != self.visits_top {
            return Err(format!("visits_top {} but {tops} top-level states", self.visits_top));
        }
        Ok(())
    }
}

fn record(state: &ChainState, top: usize, test_fns: &[TestFn], h_sums: &mut [f64]) -> StepRecord {
    let h = if state.level == top {
        let vals: Vec<f64> = test_fns.iter().map(|f| f(&state.x)).collect();
        for (s, v) in h_sums.iter_mut().zip(&vals) {
            *s += v;
        }
        vals
    } else {
        Vec::new()
    };
    StepRecord {
        level: state.level,
        direction: state.direction,
        v: state.v,
        h,
    }
}

/// Runs one tour from the regeneration measure until the atom is reached
/// (for ST: until the chain returns to level 0).
pub fn run_tour(
    model: &TemperedModel,
    schedule: &Schedule,
    variant: Variant,
    explorers: &Explorers,
    test_fns: &[TestFn],
    max_steps: usize,
    rng: &mut dyn RngCore,
) -> Result<TourTrace> {
    if max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    schedule.validate()?;
    let start = Instant::now();
    let model = model.scoped();
    let top = schedule.top();
    let mut h_sums = vec![0.0; test_fns.len()];
    let mut state = ChainState::regenerate(&model, rng)?;
    let mut steps = vec![record(&state, top, test_fns, &mut h_sums)];

    let finished = |s: &ChainState| match variant {
        Variant::Nrst => s.in_atom(),
        Variant::St => s.level == 0,
    };
    let mut done = false;
    for _ in 0..max_steps {
        match variant {
            Variant::Nrst => nrst_step(&mut state, &model, schedule, explorers, rng)?,
            Variant::St => st_step(&mut state, &model, schedule, explorers, rng)?,
        }
        steps.push(record(&state, top, test_fns, &mut h_sums));
        if finished(&state) {
            done = true;
            break;
        }
    }

    let visits_top = steps.iter().filter(|s| s.level == top).count();
    let tau = match variant {
        Variant::Nrst => steps.len(),
        Variant::St => steps.len() - 1,
    };
    let trace = TourTrace {
        variant,
        steps,
        tau,
        visits_top,
        h_sums,
        v_evals: model.local_v_evals(),
        cpu_seconds: start.elapsed().as_secs_f64(),
    };
    if done {
        Ok(trace)
    } else {
        Err(NrstError::TourOverrun {
            tour: 0,
            max_steps,
            partial: Box::new(trace),
        })
    }
}

// ---------------------------------------------------------------------------
// Idealized index process

/// Index process under perfect `V` mixing, described by the per-level
/// directional rejection probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealIndexChain {
    /// `ρ_{i,i+1}` for `i = 0..N−1`.
    pub rej_up: Vec<f64>,
    /// `ρ_{i,i−1}` for `i = 1..N`.
    pub rej_down: Vec<f64>,
}

impl IdealIndexChain {
    pub fn new(rej_up: Vec<f64>, rej_down: Vec<f64>) -> Result<Self> {
        if rej_up.is_empty() || rej_up.len() != rej_down.len() {
            return Err(invalid("rej_up and rej_down must be non-empty and of equal length"));
        }
        if rej_up.iter().chain(&rej_down).any(|r| !(0.0..1.0).contains(r)) {
            return Err(invalid("rejection probabilities must lie in [0, 1)"));
        }
        Ok(Self { rej_up, rej_down })
    }

    /// Chain with `ρ_{i−1,i} = ρ_{i,i−1} = rho[i−1]`.
    pub fn symmetric(rho: Vec<f64>) -> Result<Self> {
        Self::new(rho.clone(), rho)
    }

    /// `N` levels above the reference, all with rejection `rho`.
    pub fn equi_rejection(n_levels: usize, rho: f64) -> Result<Self> {
        Self::symmetric(vec![rho; n_levels])
    }

    pub fn n_levels(&self) -> usize {
        self.rej_up.len()
    }

    /// `ρ_i = (ρ_{i−1,i} + ρ_{i,i−1}) / 2` for `i = 1..N`.
    pub fn symmetrized(&self) -> Vec<f64> {
        self.rej_up
            .iter()
            .zip(&self.rej_down)
            .map(|(u, d)| 0.5 * (u + d))
            .collect()
    }

    /// Rejection probability of moving from `level` towards `level + dir`;
    /// 1 outside the grid.
    pub fn rejection(&self, level: usize, dir: i8) -> f64 {
        let n = self.n_levels();
        if dir > 0 {
            if level >= n {
                1.0
            } else {
                self.rej_up[level]
            }
        } else if level == 0 {
            1.0
        } else {
            self.rej_down[level - 1]
        }
    }
}

/// Closed-form tour effectiveness under uniform levels and symmetric
/// rejections.
pub fn ideal_te(chain: &IdealIndexChain, variant: Variant) -> Result<f64> {
    let rho = chain.symmetrized();
    if rho.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(invalid("symmetrized rejections must lie in [0, 1)"));
    }
    let s: f64 = rho.iter().map(|r| r / (1.0 - r)).sum();
    let n = rho.len() as f64;
    Ok(match variant {
        Variant::Nrst => 1.0 / (1.0 + 2.0 * s),
        Variant::St => 1.0 / (4.0 * n - 1.0 + 4.0 * s),
    })
}

/// Position of `(level, dir)` in the flattened lifted index space.
pub fn lifted_index(level: usize, dir: i8) -> usize {
    2 * level + usize::from(dir > 0)
}

/// Row-stochastic transition matrix of the index process on
/// `{0..N} × {−1,+1}`, ordered by [`lifted_index`].
pub fn index_kernel(chain: &IdealIndexChain, variant: Variant) -> Vec<Vec<f64>> {
    let n = chain.n_levels();
    let size = 2 * (n + 1);
    let mut k = vec![vec![0.0; size]; size];
    for i in 0..=n {
        for dir in [-1i8, 1] {
            let row = &mut k[lifted_index(i, dir)];
            match variant {
                Variant::Nrst => {
                    let rej = chain.rejection(i, dir);
                    if rej < 1.0 {
                        let j = (i as i64 + dir as i64) as usize;
                        row[lifted_index(j, dir)] += 1.0 - rej;
                    }
                    row[lifted_index(i, -dir)] += rej;
                }
                Variant::St => {
                    for prop in [-1i8, 1] {
                        let rej = chain.rejection(i, prop);
                        if rej < 1.0 {
                            let j = (i as i64 + prop as i64) as usize;
                            row[lifted_index(j, prop)] += 0.5 * (1.0 - rej);
                        }
                        row[lifted_index(i, prop)] += 0.5 * rej;
                    }
                }
            }
        }
    }
    k
}

/// Length and number of top-level visits of one index-process tour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexTour {
    pub tau: usize,
    pub visits_top: usize,
}

/// Simulates one index-process tour. `on_top` is called at every top-level
/// visit with the 0-based visit ordinal and the direction, and its values
/// are summed.
pub fn index_tour_with<R, H>(chain: &IdealIndexChain, variant: Variant, rng: &mut R, mut on_top: H) -> (IndexTour, f64)
where
    R: Rng + ?Sized,
    H: FnMut(&mut R, usize, i8) -> f64,
{
    let top = chain.n_levels();
    let (mut level, mut dir) = (0usize, 1i8);
    let mut states = 1usize;
    let mut visits = 0usize;
    let mut h_sum = 0.0;
    loop {
        match variant {
            Variant::Nrst => {
                let rej = chain.rejection(level, dir);
                if rej < 1.0 && rng.random::<f64>() >= rej {
                    level = (level as i64 + dir as i64) as usize;
                } else {
                    dir = -dir;
                }
            }
            Variant::St => {
                dir = if rng.random::<bool>() { 1 } else { -1 };
                let rej = chain.rejection(level, dir);
                if rej < 1.0 && rng.random::<f64>() >= rej {
                    level = (level as i64 + dir as i64) as usize;
                }
            }
        }
        states += 1;
        if level == top {
            h_sum += on_top(rng, visits, dir);
            visits += 1;
        }
        let done = match variant {
            Variant::Nrst => level == 0 && dir == -1,
            Variant::St => level == 0,
        };
        if done {
            break;
        }
    }
    let tau = match variant {
        Variant::Nrst => states,
        Variant::St => states - 1,
    };
    (
        IndexTour {
            tau,
            visits_top: visits,
        },
        h_sum,
    )
}

/// Simulates `n_tours` independent tours of the index process.
pub fn simulate_index_tours<R: Rng + ?Sized>(
    chain: &IdealIndexChain,
    variant: Variant,
    n_tours: usize,
    rng: &mut R,
) -> Vec<IndexTour> {
    (0..n_tours)
        .map(|_| index_tour_with(chain, variant, rng, |_, _, _| 0.0).0)
        .collect()
}

/// Parallel variant of [`simulate_index_tours`]; the result depends only on
/// `seed`, not on the thread count.
pub fn simulate_index_tours_par(
    chain: &IdealIndexChain,
    variant: Variant,
    n_tours: usize,
    seed: u64,
) -> Vec<IndexTour> {
    const CHUNK: usize = 4096;
    let n_chunks = n_tours.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n_tours - c * CHUNK);
            simulate_index_tours(chain, variant, len, &mut rng)
        })
        .collect()
}
