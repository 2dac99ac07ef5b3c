//! Self-tuning of the tempering schedule.
//!
//! A run of non-reversible parallel tempering (NRPT) produces per-level
//! potential samples. From those the pipeline estimates log normalizing
//! constants (stepping stone), level affinities, interval rejection rates
//! and the tempering barrier `Λ̂(β)`, then moves the grid towards
//! equi-rejection. [`adapt`] iterates this with doubling scan counts until
//! the indicators settle, picks the number of levels from `Λ̂` and finally
//! chooses per-level exploration steps.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::explore::{tune_explore_steps, Kernel, SliceConfig, SliceGibbs};
use crate::model::{acceptance_unchecked, uniform_grid, Schedule, TemperedModel};

/// Per-level potential samples `V_n^(i)`, `i = 0..=N`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VDataset {
    pub levels: Vec<Vec<f64>>,
}

impl VDataset {
    pub fn new(levels: Vec<Vec<f64>>) -> Result<Self> {
        let d = Self { levels };
        d.validate()?;
        Ok(d)
    }

    /// Every level non-empty and every sample finite.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(invalid("dataset has no levels"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.is_empty() {
                return Err(invalid(format!("dataset level {i} is empty")));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("dataset level {i} holds a non-finite potential")));
            }
        }
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    fn check_grid(&self, betas: &[f64]) -> Result<()> {
        self.validate()?;
        if betas.len() != self.levels.len() {
            return Err(invalid(format!(
                "grid has {} points but the dataset has {} levels",
                betas.len(),
                self.levels.len()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// NRPT

struct Replica {
    x: Vec<f64>,
    v: f64,
    rng: ChaCha8Rng,
}

/// Parallel tempering with deterministic even/odd swap rounds. Replica
/// states persist across calls to [`Nrpt::run`], so consecutive runs act as
/// warm starts.
pub struct Nrpt {
    model: TemperedModel,
    betas: Vec<f64>,
    steps: Vec<usize>,
    cfg: SliceConfig,
    replicas: Vec<Replica>,
    swap_rng: ChaCha8Rng,
    seed: u64,
    generation: u64,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
}

impl std::fmt::Debug for Nrpt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nrpt")
            .field("betas", &self.betas)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

impl Nrpt {
    pub fn new(model: &TemperedModel, schedule: &Schedule, cfg: SliceConfig, rng: &mut dyn RngCore) -> Result<Self> {
        schedule.validate()?;
        let seed: u64 = rng.random();
        let mut nrpt = Self {
            model: model.clone(),
            betas: Vec::new(),
            steps: Vec::new(),
            cfg,
            replicas: Vec::new(),
            swap_rng: stream(seed, 0, 0),
            seed,
            generation: 0,
            swap_attempts: Vec::new(),
            swap_accepts: Vec::new(),
        };
        nrpt.set_schedule(schedule)?;
        Ok(nrpt)
    }

    /// Moves the replicas to a new grid. When the number of levels changes,
    /// each new level starts from the state of the old level nearest in `β`.
    pub fn set_schedule(&mut self, schedule: &Schedule) -> Result<()> {
        schedule.validate()?;
        let n = schedule.n_levels();
        self.generation += 1;
        let g = self.generation;
        let new: Vec<Replica> = if self.replicas.len() == n + 1 {
            std::mem::take(&mut self.replicas)
        } else if self.replicas.is_empty() {
            (0..=n)
                .map(|i| {
                    let mut rng = stream(self.seed, g, i as u64 + 1);
                    let x = self.model.sample_reference(&mut rng);
                    let v = self.model.checked_potential(&x)?;
                    Ok(Replica { x, v, rng })
                })
                .collect::<Result<_>>()?
        } else {
            schedule
                .betas
                .iter()
                .enumerate()
                .map(|(i, &b)| {
                    let src = nearest(&self.betas, b);
                    Replica {
                        x: self.replicas[src].x.clone(),
                        v: self.replicas[src].v,
                        rng: stream(self.seed, g, i as u64 + 1),
                    }
                })
                .collect()
        };
        self.replicas = new;
        self.betas = schedule.betas.clone();
        self.steps = schedule.explore_steps.clone();
        self.swap_attempts = vec![0; n];
        self.swap_accepts = vec![0; n];
        Ok(())
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Current point of every replica, indexed by level.
    pub fn states(&self) -> Vec<Vec<f64>> {
        self.replicas.iter().map(|r| r.x.clone()).collect()
    }

    /// Empirical swap acceptance rate per adjacent pair since the last
    /// schedule change.
    pub fn swap_acceptance(&self) -> Vec<f64> {
        self.swap_accepts
            .iter()
            .zip(&self.swap_attempts)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }

    /// Runs `n_scan` scans (exploration of every replica followed by one
    /// swap round; the first round of every call is even) and records the
    /// potential at every level after each scan.
    pub fn run(&mut self, n_scan: usize) -> Result<VDataset> {
        if n_scan == 0 {
            return Err(invalid("n_scan must be at least 1"));
        }
        let n = self.betas.len() - 1;
        let mut levels = vec![Vec::with_capacity(n_scan); n + 1];
        for scan in 0..n_scan {
            self.explore()?;
            self.swap_round(scan % 2);
            for (l, r) in levels.iter_mut().zip(&self.replicas) {
                l.push(r.v);
            }
        }
        Ok(VDataset { levels })
    }

    fn explore(&mut self) -> Result<()> {
        let model = &self.model;
        let betas = &self.betas;
        let steps = &self.steps;
        let cfg = self.cfg;
        self.replicas.par_iter_mut().enumerate().try_for_each(|(i, r)| {
            if i == 0 {
                r.x = model.sample_reference(&mut r.rng);
                r.v = model.checked_potential(&r.x)?;
                return Ok(());
            }
            let k = SliceGibbs::new(betas[i], cfg);
            for _ in 0..steps[i - 1] {
                k.apply(model, &mut r.x, &mut r.v, &mut r.rng)?;
            }
            Ok::<(), NrstError>(())
        })
    }

    fn swap_round(&mut self, parity: usize) {
        let n = self.betas.len() - 1;
        let mut i = parity;
        while i < n {
            let j = i + 1;
            let log_a = (self.betas[j] - self.betas[i]) * (self.replicas[j].v - self.replicas[i].v);
            let a = log_a.min(0.0).exp();
            self.swap_attempts[i] += 1;
            if self.swap_rng.random::<f64>() < a {
                self.swap_accepts[i] += 1;
                let (lo, hi) = self.replicas.split_at_mut(j);
                std::mem::swap(&mut lo[i].x, &mut hi[0].x);
                std::mem::swap(&mut lo[i].v, &mut hi[0].v);
            }
            i += 2;
        }
    }
}

fn stream(seed: u64, generation: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((generation << 32) | index);
    r
}

fn nearest(grid: &[f64], b: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| (*x - b).abs().total_cmp(&(*y - b).abs()))
        .map_or(0, |(i, _)| i)
}

/// A fresh NRPT run of `n_scan` scans on `schedule`.
pub fn run_nrpt(
    model: &TemperedModel,
    schedule: &Schedule,
    n_scan: usize,
    cfg: SliceConfig,
    rng: &mut dyn RngCore,
) -> Result<VDataset> {
    Nrpt::new(model, schedule, cfg, rng)?.run(n_scan)
}

// ---------------------------------------------------------------------------
// normalizing constants and affinities

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Stepping-stone estimate of `log 𝒵(β_i)`, the average of the forward and
/// backward estimators, anchored at `log 𝒵(0) = 0`.
pub fn stepping_stone_logz(data: &VDataset, betas: &[f64]) -> Result<Vec<f64>> {
    data.check_grid(betas)?;
    let mut out = vec![0.0; betas.len()];
    for i in 1..betas.len() {
        let db = betas[i] - betas[i - 1];
        let prev = &data.levels[i - 1];
        let cur = &data.levels[i];
        let fwd = log_sum_exp(prev.iter().map(|v| -db * v)) - (prev.len() as f64).ln();
        let bwd = (cur.len() as f64).ln() - log_sum_exp(cur.iter().map(|v| db * v));
        out[i] = out[i - 1] + 0.5 * (fwd + bwd);
    }
    Ok(out)
}

/// `c_i = −log 𝒵(β_i)`, anchored at `c_0 = 0`.
pub fn mean_energy_affinities(log_z: &[f64]) -> Vec<f64> {
    let z0 = log_z.first().copied().unwrap_or(0.0);
    log_z.iter().map(|z| z0 - z).collect()
}

fn lower_median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

/// Trapezoid integral of the per-level sample medians of `V`.
pub fn median_affinities(data: &VDataset, betas: &[f64]) -> Result<Vec<f64>> {
    data.check_grid(betas)?;
    let med: Vec<f64> = data.levels.iter().map(|l| lower_median(l)).collect();
    let mut c = vec![0.0; betas.len()];
    for i in 1..betas.len() {
        c[i] = c[i - 1] + 0.5 * (med[i - 1] + med[i]) * (betas[i] - betas[i - 1]);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for AffinityMode {
    type Err = NrstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(invalid(format!(
                "unknown affinity mode '{other}' (expected mean or median)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// rejections and barrier

/// Interval rejection estimates. Entry `k` refers to the interval
/// `[β_k, β_{k+1}]`: `up[k]` is the rejection of moving up from level `k`,
/// `down[k]` of moving down from level `k+1`, `sym[k]` their average.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rejections {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub sym: Vec<f64>,
}

pub fn estimate_rejections(data: &VDataset, betas: &[f64], affinities: &[f64]) -> Result<Rejections> {
    data.check_grid(betas)?;
    if affinities.len() != betas.len() || affinities.iter().any(|c| !c.is_finite()) {
        return Err(invalid("affinities must be finite and match the grid"));
    }
    let n = betas.len() - 1;
    let mut r = Rejections {
        up: Vec::with_capacity(n),
        down: Vec::with_capacity(n),
        sym: Vec::with_capacity(n),
    };
    let mean_rej = |vs: &[f64], db: f64, dc: f64| {
        let acc: f64 = vs.iter().map(|&v| acceptance_unchecked(v, db, dc)).sum::<f64>() / vs.len() as f64;
        (1.0 - acc).clamp(0.0, 1.0)
    };
    for k in 0..n {
        let db = betas[k + 1] - betas[k];
        let dc = affinities[k + 1] - affinities[k];
        let up = mean_rej(&data.levels[k], db, dc);
        let down = mean_rej(&data.levels[k + 1], -db, -dc);
        r.up.push(up);
        r.down.push(down);
        r.sym.push(0.5 * (up + down));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Fritsch–Carlson monotone cubic Hermite.
    Monotone,
    Linear,
}

/// Monotone interpolant of the cumulative rejection `Λ̂(β)` through
/// `(β_i, Σ_{j≤i} r_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierEstimate {
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
    pub interpolation: Interpolation,
    slopes: Vec<f64>,
}

impl BarrierEstimate {
    /// Interpolant through the given knots; `Monotone` silently becomes
    /// `Linear` with fewer than three knots.
    pub fn new(betas: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if betas.len() < 2 || betas.len() != values.len() {
            return Err(invalid("barrier needs at least two knots with matching lengths"));
        }
        if betas[0] != 0.0 || *betas.last().unwrap() != 1.0 || betas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("barrier abscissae must increase strictly from 0 to 1"));
        }
        if values[0] != 0.0 || values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("barrier values must start at 0 and be non-decreasing"));
        }
        let interpolation = if betas.len() < 3 {
            Interpolation::Linear
        } else {
            interpolation
        };
        let slopes = match interpolation {
            Interpolation::Monotone => fritsch_carlson(&betas, &values),
            Interpolation::Linear => Vec::new(),
        };
        Ok(Self {
            betas,
            values,
            interpolation,
            slopes,
        })
    }

    /// `Λ̂ = Λ̂(1)`.
    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `Λ̂(β)`; arguments outside `[0, 1]` are clamped.
    pub fn eval(&self, beta: f64) -> f64 {
        let b = beta.clamp(0.0, 1.0);
        let k = match self.betas.partition_point(|&x| x <= b) {
            0 => 0,
            p => (p - 1).min(self.betas.len() - 2),
        };
        let (x0, x1) = (self.betas[k], self.betas[k + 1]);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let h = x1 - x0;
        let t = (b - x0) / h;
        let y = match self.interpolation {
            Interpolation::Linear => y0 + t * (y1 - y0),
            Interpolation::Monotone => {
                let (t2, t3) = (t * t, t * t * t);
                (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * h * self.slopes[k + 1]
            }
        };
        y.clamp(y0, y1)
    }
}

fn fritsch_carlson(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    let mut m = vec![0.0; n];
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for k in 1..n - 1 {
        m[k] = if d[k - 1] * d[k] > 0.0 {
            0.5 * (d[k - 1] + d[k])
        } else {
            0.0
        };
    }
    for k in 0..n - 1 {
        if d[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / d[k];
        let b = m[k + 1] / d[k];
        let s = a * a + b * b;
        if s > 9.0 {
            let t = 3.0 / s.sqrt();
            m[k] = t * a * d[k];
            m[k + 1] = t * b * d[k];
        }
    }
    m
}

/// Barrier from symmetrized interval rejections on `betas`.
pub fn build_barrier(r_sym: &[f64], betas: &[f64]) -> Result<BarrierEstimate> {
    if r_sym.len() + 1 != betas.len() {
        return Err(invalid("need one rejection per grid interval"));
    }
    if r_sym.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(invalid("rejection estimates must lie in [0, 1]"));
    }
    let mut values = Vec::with_capacity(betas.len());
    values.push(0.0);
    let mut acc = 0.0;
    for r in r_sym {
        acc += r;
        values.push(acc);
    }
    BarrierEstimate::new(betas.to_vec(), values, Interpolation::Monotone)
}

const BISECTION_TOL: f64 = 1e-15;

/// Grid with `Λ̂(β_i) = (i/N)·Λ̂`, solved by bisection. A flat barrier
/// yields the uniform grid.
pub fn optimize_grid(barrier: &BarrierEstimate, n_levels: usize) -> Result<Vec<f64>> {
    if n_levels == 0 {
        return Err(invalid("n_levels must be at least 1"));
    }
    let total = barrier.total();
    if total == 0.0 {
        return Ok(uniform_grid(n_levels));
    }
    let mut grid = Vec::with_capacity(n_levels + 1);
    grid.push(0.0);
    for i in 1..n_levels {
        let target = total * i as f64 / n_levels as f64;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            if hi - lo <= BISECTION_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if barrier.eval(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        grid.push(0.5 * (lo + hi));
    }
    grid.push(1.0);
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(NrstError::NumericalFailure(
            "optimized grid is not strictly increasing".into(),
        ));
    }
    Ok(grid)
}

/// `N* = Λ(1 + √(1 + 1/(1+2Λ)))`, before any safety factor or rounding.
pub fn optimal_grid_size_raw(lambda_total: f64) -> f64 {
    lambda_total * (1.0 + (1.0 + 1.0 / (1.0 + 2.0 * lambda_total)).sqrt())
}

/// `max(2, ⌈γ·N*⌉)`.
pub fn optimal_grid_size(lambda_total: f64, gamma: f64) -> Result<usize> {
    if !(lambda_total > 0.0 && lambda_total.is_finite()) {
        return Err(invalid("lambda_total must be positive and finite"));
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(invalid("gamma must be at least 1"));
    }
    Ok(((gamma * optimal_grid_size_raw(lambda_total)).ceil() as usize).max(2))
}

// ---------------------------------------------------------------------------
// convergence

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceThresholds {
    pub l_r: f64,
    pub l_c: f64,
    pub l_lambda: f64,
    pub l_d: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self {
            l_r: 0.1,
            l_c: 0.005,
            l_lambda: 0.01,
            l_d: 0.05,
        }
    }
}

impl ConvergenceThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L_r", self.l_r),
            ("L_c", self.l_c),
            ("L_Lambda", self.l_lambda),
            ("L_d", self.l_d),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("threshold {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// The quantities compared across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningState {
    pub affinities: Vec<f64>,
    pub lambda: f64,
    pub rejections: Rejections,
}

/// `[std/mean of r_sym, relative change of c(1), relative change of Λ̂,
/// mean directional asymmetry / mean r_sym]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub rel_std_r: f64,
    pub rel_c: f64,
    pub rel_lambda: f64,
    pub asym: f64,
}

impl Indicators {
    pub fn as_array(&self) -> [f64; 4] {
        [self.rel_std_r, self.rel_c, self.rel_lambda, self.asym]
    }
}

/// `num/den` with `0/0 = 0` and `x/0 = ∞` for `x > 0`.
fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Evaluates the stopping rule. Without a previous round the relative
/// changes are infinite and the rule fails.
pub fn check_convergence(
    old: Option<&TuningState>,
    new: &TuningState,
    thresholds: &ConvergenceThresholds,
    mode: AffinityMode,
) -> (bool, Indicators) {
    let r = &new.rejections.sym;
    let (rel_std_r, asym) = if r.is_empty() {
        (0.0, 0.0)
    } else {
        let m = mean(r);
        let sd = (r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / r.len() as f64).sqrt();
        let gaps: Vec<f64> = new
            .rejections
            .up
            .iter()
            .zip(&new.rejections.down)
            .map(|(u, d)| (d - u).abs())
            .collect();
        (ratio(sd, m), ratio(mean(&gaps), m))
    };
    let (rel_c, rel_lambda) = match old {
        None => (f64::INFINITY, f64::INFINITY),
        Some(o) => {
            let c_old = o.affinities.last().copied().unwrap_or(0.0);
            let c_new = new.affinities.last().copied().unwrap_or(0.0);
            (
                ratio((c_new - c_old).abs(), c_old.abs()),
                ratio((new.lambda - o.lambda).abs(), o.lambda),
            )
        }
    };
    let ind = Indicators {
        rel_std_r,
        rel_c,
        rel_lambda,
        asym,
    };
    let ok = old.is_some()
        && rel_std_r < thresholds.l_r
        && rel_c < thresholds.l_c
        && rel_lambda < thresholds.l_lambda
        && (mode == AffinityMode::Median || asym < thresholds.l_d);
    (ok, ind)
}

// ---------------------------------------------------------------------------
// local rejection rates

/// `½·mean|V − c′|` over one level's samples.
pub fn local_rejection_rate(samples: &[f64], c_prime: f64) -> f64 {
    0.5 * samples.iter().map(|v| (v - c_prime).abs()).sum::<f64>() / samples.len() as f64
}

/// Finite-difference derivative of the affinities: central in the interior,
/// one-sided at the ends.
pub fn affinity_derivative(betas: &[f64], affinities: &[f64]) -> Vec<f64> {
    let n = betas.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (affinities[b] - affinities[a]) / (betas[b] - betas[a])
        })
        .collect()
}

/// Per-level estimates of the local rejection rate `ρ′(β_i)`.
pub fn local_rejection_rates(data: &VDataset, betas: &[f64], affinities: &[f64]) -> Result<Vec<f64>> {
    data.check_grid(betas)?;
    if affinities.len() != betas.len() {
        return Err(invalid("affinities must match the grid"));
    }
    let cp = affinity_derivative(betas, affinities);
    Ok(data
        .levels
        .iter()
        .zip(&cp)
        .map(|(l, &c)| local_rejection_rate(l, c))
        .collect())
}

// ---------------------------------------------------------------------------
// the adaptation loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub n_levels_initial: usize,
    pub max_rounds: usize,
    pub affinity_mode: AffinityMode,
    pub thresholds: ConvergenceThresholds,
    /// Safety factor on the optimal number of levels.
    pub gamma: f64,
    /// Autocorrelation target for the exploration steps.
    pub kappa_bar: f64,
    pub slice: SliceConfig,
    /// Scans in the first round; doubled every round.
    pub initial_scans: usize,
    /// Restart once with the optimal number of levels when it differs from
    /// the current one by more than a quarter.
    pub allow_resize: bool,
    /// Length of the chains used to pick exploration steps; by default
    /// `32·n_scan` of the final pass, clamped to `[1000, 10000]`.
    pub explore_chain_len: Option<usize>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_levels_initial: 8,
            max_rounds: 14,
            affinity_mode: AffinityMode::Mean,
            thresholds: ConvergenceThresholds::default(),
            gamma: 2.0,
            kappa_bar: 0.95,
            slice: SliceConfig::default(),
            initial_scans: 2,
            allow_resize: true,
            explore_chain_len: None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels_initial == 0 {
            return Err(invalid("n_levels_initial must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(invalid("max_rounds must be at least 1"));
        }
        if self.initial_scans == 0 {
            return Err(invalid("initial_scans must be at least 1"));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma must be at least 1"));
        }
        if !(self.kappa_bar > 0.0 && self.kappa_bar < 1.0) {
            return Err(invalid("kappa_bar must lie in (0, 1)"));
        }
        self.thresholds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 0 for the first pass, 1 after a grid-size restart.
    pub pass: usize,
    pub round: usize,
    pub n_levels: usize,
    pub n_scan: usize,
    pub lambda_hat: f64,
    pub log_z_top: f64,
    pub indicators: Indicators,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptResult {
    pub schedule: Schedule,
    pub barrier: BarrierEstimate,
    pub log_z: Vec<f64>,
    pub rejections: Rejections,
    pub lambda_hat: f64,
    pub converged: bool,
    /// Whether the number of levels was changed after a first convergence.
    pub restarted: bool,
    /// Number of tuning rounds, across both passes.
    pub rounds_used: usize,
    pub rounds: Vec<RoundLog>,
    pub n_scan_final: usize,
    /// Potential evaluations spent on tuning.
    pub v_evals: u64,
}

struct Estimates {
    log_z: Vec<f64>,
    affinities: Vec<f64>,
    rejections: Rejections,
    barrier: BarrierEstimate,
}

impl Estimates {
    fn state(&self) -> TuningState {
        TuningState {
            affinities: self.affinities.clone(),
            lambda: self.barrier.total(),
            rejections: self.rejections.clone(),
        }
    }
}

fn estimate_all(data: &VDataset, betas: &[f64], mode: AffinityMode) -> Result<Estimates> {
    let log_z = stepping_stone_logz(data, betas)?;
    let affinities = match mode {
        AffinityMode::Mean => mean_energy_affinities(&log_z),
        AffinityMode::Median => median_affinities(data, betas)?,
    };
    let rejections = estimate_rejections(data, betas, &affinities)?;
    let barrier = build_barrier(&rejections.sym, betas)?;
    Ok(Estimates {
        log_z,
        affinities,
        rejections,
        barrier,
    })
}

fn bare_schedule(betas: Vec<f64>) -> Result<Schedule> {
    let n = betas.len() - 1;
    Schedule::new(betas, vec![0.0; n + 1], vec![1; n])
}

/// Tunes grid, affinities, number of levels and exploration steps for
/// `model`.
///
/// Each round runs NRPT with twice the scans of the previous one, then
/// re-estimates affinities and barrier and re-optimizes the grid. Once the
/// stopping rule holds, a final NRPT pass on the new grid produces the
/// returned affinities and barrier. If the optimal number of levels differs
/// from the current one by more than a quarter, the grid is resized once and
/// the rounds continue from the same scan count.
pub fn adapt(model: &TemperedModel, cfg: &AdaptConfig, rng: &mut dyn RngCore) -> Result<AdaptResult> {
    cfg.validate()?;
    let model = model.scoped();
    let mut betas = uniform_grid(cfg.n_levels_initial);
    let mut nrpt = Nrpt::new(&model, &bare_schedule(betas.clone())?, cfg.slice, rng)?;
    let mut log = Vec::new();
    let mut prev: Option<TuningState> = None;
    let mut n_scan = cfg.initial_scans;
    let mut restarted = false;
    let mut round = 0;
    let (est, converged) = loop {
        round += 1;
        let n = betas.len() - 1;
        nrpt.set_schedule(&bare_schedule(betas.clone())?)?;
        let data = nrpt.run(n_scan)?;
        let est = estimate_all(&data, &betas, cfg.affinity_mode)?;
        let state = est.state();
        let (ok, indicators) = check_convergence(prev.as_ref(), &state, &cfg.thresholds, cfg.affinity_mode);
        log.push(RoundLog {
            pass: usize::from(restarted),
            round,
            n_levels: n,
            n_scan,
            lambda_hat: state.lambda,
            log_z_top: *est.log_z.last().unwrap(),
            indicators,
            converged: ok,
        });
        if est.barrier.total() > 0.0 {
            betas = optimize_grid(&est.barrier, n)?;
        }
        n_scan *= 2;
        prev = Some(state);
        if !ok && round < cfg.max_rounds {
            continue;
        }
        nrpt.set_schedule(&bare_schedule(betas.clone())?)?;
        let data = nrpt.run(n_scan)?;
        let fin = estimate_all(&data, &betas, cfg.affinity_mode)?;
        let lambda = fin.barrier.total();
        if ok && cfg.allow_resize && !restarted && round < cfg.max_rounds && lambda > 0.0 {
            let n_opt = optimal_grid_size(lambda, cfg.gamma)?;
            if (n as f64 - n_opt as f64).abs() / n as f64 > 0.25 {
                betas = optimize_grid(&fin.barrier, n_opt)?;
                prev = Some(fin.state());
                restarted = true;
                continue;
            }
        }
        break (fin, ok);
    };
    let n = betas.len() - 1;
    let chain_len = cfg
        .explore_chain_len
        .unwrap_or_else(|| (32 * n_scan).clamp(1000, 10_000));
    let provisional = Schedule::new(betas.clone(), est.affinities.clone(), vec![1; n])?;
    let starts = nrpt.states();
    let steps = tune_explore_steps(
        &model,
        &provisional,
        cfg.kappa_bar,
        chain_len,
        &cfg.slice,
        Some(&starts),
        rng,
    )?;
    let schedule = Schedule::new(betas, est.affinities, steps)?;
    Ok(AdaptResult {
        schedule,
        lambda_hat: est.barrier.total(),
        barrier: est.barrier,
        log_z: est.log_z,
        rejections: est.rejections,
        converged,
        restarted,
        rounds_used: round,
        rounds: log,
        n_scan_final: n_scan,
        v_evals: model.local_v_evals(),
    })
}
