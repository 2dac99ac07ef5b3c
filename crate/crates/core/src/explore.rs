//! Exploration kernels: slice sampling within Gibbs, kernel powers and the
//! autocorrelation rule used to pick the number of exploration steps per
//! level.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::model::{log_tempered_density, Schedule, TemperedModel};

/// Upper bound on the number of exploration steps per level.
pub const MAX_EXPLORE_STEPS: usize = 64;

const MIN_SLICE_WIDTH: f64 = 1e-300;
const MAX_SHRINKS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub initial_width: f64,
    /// Bound on the number of stepping-out expansions per coordinate update.
    pub max_doublings: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            initial_width: 1.0,
            max_doublings: 20,
        }
    }
}

impl SliceConfig {
    pub fn new(initial_width: f64, max_doublings: usize) -> Result<Self> {
        if !(initial_width > 0.0 && initial_width.is_finite()) {
            return Err(invalid("slice initial_width must be a positive finite number"));
        }
        if max_doublings == 0 {
            return Err(invalid("slice max_doublings must be at least 1"));
        }
        Ok(Self {
            initial_width,
            max_doublings,
        })
    }
}

/// Neal's univariate slice update (stepping out + shrinkage) on coordinate
/// `j`. `logp` is the log density at the current `x`; returns the log density
/// at the new point, which is left in `x`.
fn slice_coordinate<R, F>(x: &mut [f64], j: usize, logp: f64, f: &mut F, cfg: &SliceConfig, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    let x0 = x[j];
    let w = cfg.initial_width;
    let m = cfg.max_doublings;
    let level = logp + (1.0 - rng.random::<f64>()).ln();

    let eval_at = |x: &mut [f64], t: f64, f: &mut F| -> Result<f64> {
        x[j] = t;
        f(x)
    };

    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    let mut left = (m as f64 * rng.random::<f64>()).floor() as usize;
    let mut right = (m - 1).saturating_sub(left);
    while left > 0 && level < eval_at(x, lo, f)? {
        lo -= w;
        left -= 1;
    }
    while right > 0 && level < eval_at(x, hi, f)? {
        hi += w;
        right -= 1;
    }

    for _ in 0..MAX_SHRINKS {
        if !(hi - lo >= MIN_SLICE_WIDTH) {
            x[j] = x0;
            return Err(NrstError::NumericalFailure(format!(
                "shrinkage interval collapsed around x[{j}] = {x0}"
            )));
        }
        let t = lo + rng.random::<f64>() * (hi - lo);
        let lp = eval_at(x, t, f)?;
        if level < lp {
            return Ok(lp);
        }
        if t < x0 {
            lo = t;
        } else {
            hi = t;
        }
    }
    x[j] = x0;
    Err(NrstError::NumericalFailure(format!(
        "shrinkage did not terminate after {MAX_SHRINKS} proposals at x[{j}] = {x0}"
    )))
}

/// One Gibbs sweep of univariate slice updates over all coordinates in
/// ascending order. Returns the log density at the final point.
pub fn slice_sweep<R, F>(
    x: &mut [f64],
    mut logp: f64,
    mut log_density: F,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !logp.is_finite() {
        return Err(invalid("slice sweep started from a point with non-finite log density"));
    }
    for j in 0..x.len() {
        logp = slice_coordinate(x, j, logp, &mut log_density, cfg, rng)?;
    }
    Ok(logp)
}

/// Convenience wrapper over [`slice_sweep`] for a plain log-density.
pub fn slice_step<R, F>(x: &[f64], mut log_density: F, cfg: &SliceConfig, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let mut y = x.to_vec();
    let lp = log_density(&y);
    slice_sweep(&mut y, lp, |z| Ok(log_density(z)), cfg, rng)?;
    Ok(y)
}

/// A `π^(β)`-invariant Markov kernel acting on a point and its cached potential.
pub trait Kernel: Send + Sync {
    fn apply(&self, model: &TemperedModel, x: &mut [f64], v: &mut f64, rng: &mut dyn RngCore) -> Result<()>;
}

/// Slice sampling within Gibbs targeting `π^(β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceGibbs {
    pub beta: f64,
    pub cfg: SliceConfig,
}

impl SliceGibbs {
    pub fn new(beta: f64, cfg: SliceConfig) -> Self {
        Self { beta, cfg }
    }
}

impl Kernel for SliceGibbs {
    fn apply(&self, model: &TemperedModel, x: &mut [f64], v: &mut f64, rng: &mut dyn RngCore) -> Result<()> {
        let beta = self.beta;
        let logp = model.log_reference(x) - beta * *v;
        // The last potential evaluated is always the one at the accepted point.
        let mut last_v = *v;
        slice_sweep(
            x,
            logp,
            |z| {
                let lr = model.log_reference(z);
                if lr == f64::NEG_INFINITY {
                    return Ok(lr);
                }
                let vz = model.checked_potential(z)?;
                last_v = vz;
                Ok(lr - beta * vz)
            },
            &self.cfg,
            rng,
        )?;
        *v = last_v;
        Ok(())
    }
}

/// The kernel power `K^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Composed<K> {
    base: K,
    times: usize,
}

impl<K> Composed<K> {
    pub fn times(&self) -> usize {
        self.times
    }

    pub fn base(&self) -> &K {
        &self.base
    }
}

pub fn compose<K: Kernel>(kernel: K, n: usize) -> Result<Composed<K>> {
    if n == 0 {
        return Err(invalid("kernel power must be at least 1"));
    }
    Ok(Composed { base: kernel, times: n })
}

impl<K: Kernel> Kernel for Composed<K> {
    fn apply(&self, model: &TemperedModel, x: &mut [f64], v: &mut f64, rng: &mut dyn RngCore) -> Result<()> {
        for _ in 0..self.times {
            self.base.apply(model, x, v, rng)?;
        }
        Ok(())
    }
}

/// Biased sample autocorrelation at `lag`. Zero-variance series yield `None`.
pub fn autocorrelation(series: &[f64], lag: usize) -> Option<f64> {
    let n = series.len();
    if n == 0 || lag >= n {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(var > 0.0) {
        return None;
    }
    let cov: f64 = series[..n - lag]
        .iter()
        .zip(&series[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    Some(cov / var)
}

/// Smallest `n ∈ 1..=n_max` with `acf(n) ≤ kappa_bar`, negative values
/// truncated to zero; `n_max` when none qualifies.
pub fn first_lag_below<F: FnMut(usize) -> f64>(mut acf: F, kappa_bar: f64, n_max: usize) -> usize {
    (1..=n_max).find(|&n| acf(n).max(0.0) <= kappa_bar).unwrap_or(n_max)
}

/// Number of exploration steps implied by a single level's V-series.
pub fn steps_from_series(series: &[f64], kappa_bar: f64, n_max: usize) -> usize {
    if autocorrelation(series, 0).is_none() {
        return 1;
    }
    let n_max = n_max.min(series.len().saturating_sub(1)).max(1);
    first_lag_below(|n| autocorrelation(series, n).unwrap_or(0.0), kappa_bar, n_max)
}

/// Runs `chain_len` slice sweeps at `beta` from `start` and returns the
/// potential after every sweep.
pub fn potential_series(
    model: &TemperedModel,
    beta: f64,
    start: Vec<f64>,
    chain_len: usize,
    cfg: &SliceConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let kernel = SliceGibbs::new(beta, *cfg);
    let mut x = start;
    let mut v = if beta == 0.0 {
        model.potential(&x)
    } else {
        log_tempered_density(model, &x, beta)?;
        model.checked_potential(&x)?
    };
    let mut out = Vec::with_capacity(chain_len);
    for _ in 0..chain_len {
        kernel.apply(model, &mut x, &mut v, rng)?;
        out.push(v);
    }
    Ok(out)
}

/// Picks `n_i` for every level `i ≥ 1` as the first lag at which the
/// autocorrelation of the potential drops to `kappa_bar`.
///
/// `starts`, when given, holds one starting point per level `0..=N` (usually
/// the last NRPT state); otherwise chains start from reference draws.
pub fn tune_explore_steps(
    model: &TemperedModel,
    schedule: &Schedule,
    kappa_bar: f64,
    chain_len: usize,
    cfg: &SliceConfig,
    starts: Option<&[Vec<f64>]>,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    if !(kappa_bar > 0.0 && kappa_bar < 1.0) {
        return Err(invalid("kappa_bar must lie in (0, 1)"));
    }
    if chain_len < 2 {
        return Err(invalid("chain_len must be at least 2"));
    }
    let n = schedule.n_levels();
    if let Some(s) = starts {
        if s.len() != n + 1 {
            return Err(invalid("tune_explore_steps: one start point per level required"));
        }
    }
    let seed: u64 = rng.random();
    (1..=n)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            let start = match starts {
                Some(s) => s[i].clone(),
                None => model.sample_reference(&mut r),
            };
            let series = potential_series(model, schedule.betas[i], start, chain_len, cfg, &mut r)?;
            Ok(steps_from_series(&series, kappa_bar, MAX_EXPLORE_STEPS))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PathModel;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    /// KS statistic of a sample against a continuous CDF.
    fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sample.len() as f64;
        sample
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = cdf(x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    // Asymptotic two-sided critical value at level 0.01.
    fn ks_critical_001(n: usize) -> f64 {
        1.6276 / (n as f64).sqrt()
    }

    #[test]
    fn slice_standard_normal_passes_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = SliceConfig::default();
        let mut x = vec![0.0];
        let mut out = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            x = slice_step(&x, |z| -0.5 * z[0] * z[0], &cfg, &mut rng).unwrap();
            out.push(x[0]);
        }
        // Thin to cut serial correlation before applying an i.i.d. test.
        let mut thinned: Vec<f64> = out.iter().step_by(4).cloned().collect();
        let n = Normal::new(0.0, 1.0).unwrap();
        let d = ks_statistic(&mut thinned, |t| n.cdf(t));
        assert!(d < ks_critical_001(thinned.len()), "KS D = {d}");
    }

    #[test]
    fn slice_uniform_target_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SliceConfig::default();
        let flat = |z: &[f64]| {
            if (0.0..=1.0).contains(&z[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut x = vec![0.5];
        let mut sum = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            x = slice_step(&x, flat, &cfg, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&x[0]));
            sum += x[0];
        }
        let mean = sum / draws as f64;
        // uniform variance 1/12; draws are independent for a flat slice
        let sigma = (1.0 / 12.0 / draws as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn slice_spike_reports_numerical_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SliceConfig::default();
        let spike = |z: &[f64]| if z[0].abs() < 0.5e-310 { 0.0 } else { f64::NEG_INFINITY };
        let r = slice_step(&[0.0], spike, &cfg, &mut rng);
        assert!(matches!(r, Err(NrstError::NumericalFailure(_))), "{r:?}");
    }

    #[test]
    fn slice_config_validation() {
        assert!(SliceConfig::new(0.0, 3).is_err());
        assert!(SliceConfig::new(1.0, 0).is_err());
        assert!(SliceConfig::new(2.0, 5).is_ok());
    }

    struct StdNormal;
    impl PathModel for StdNormal {
        fn dim(&self) -> usize {
            1
        }
        fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
            vec![StandardNormal.sample(rng)]
        }
        fn log_reference(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0] - 0.5 * (2.0 * std::f64::consts::PI).ln()
        }
        fn potential(&self, x: &[f64]) -> f64 {
            // π^(1) = N(0, 1/2)
            0.5 * x[0] * x[0]
        }
    }

    fn run_kernel<K: Kernel>(k: &K, model: &TemperedModel, seed: u64, iters: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.3];
        let mut v = model.potential(&x);
        let mut out = Vec::new();
        for _ in 0..iters {
            k.apply(model, &mut x, &mut v, &mut rng).unwrap();
            assert_eq!(v, 0.5 * x[0] * x[0]);
            out.push(x[0]);
        }
        out
    }

    #[test]
    fn compose_identity_and_associativity() {
        let model = TemperedModel::new(StdNormal);
        let base = SliceGibbs::new(1.0, SliceConfig::default());
        let once = compose(base, 1).unwrap();
        assert_eq!(run_kernel(&base, &model, 3, 50), run_kernel(&once, &model, 3, 50));

        let nested = compose(compose(base, 2).unwrap(), 2).unwrap();
        let flat = compose(base, 4).unwrap();
        assert_eq!(run_kernel(&nested, &model, 9, 50), run_kernel(&flat, &model, 9, 50));
        assert!(compose(base, 0).is_err());
    }

    #[test]
    fn compose_scales_evaluations() {
        let base = SliceGibbs::new(1.0, SliceConfig::default());
        for n in [1usize, 3, 5] {
            let model = TemperedModel::new(StdNormal);
            let mut rng_a = ChaCha8Rng::seed_from_u64(42);
            let mut rng_b = ChaCha8Rng::seed_from_u64(42);
            let (mut xa, mut va) = (vec![0.1], 0.005);
            let (mut xb, mut vb) = (vec![0.1], 0.005);
            let single = model.scoped();
            for _ in 0..n {
                base.apply(&single, &mut xa, &mut va, &mut rng_a).unwrap();
            }
            let composed = model.scoped();
            compose(base, n)
                .unwrap()
                .apply(&composed, &mut xb, &mut vb, &mut rng_b)
                .unwrap();
            assert_eq!(single.local_v_evals(), composed.local_v_evals());
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn composed_kernel_keeps_target() {
        let model = TemperedModel::new(StdNormal);
        let k = compose(SliceGibbs::new(1.0, SliceConfig::default()), 3).unwrap();
        let mut draws: Vec<f64> = run_kernel(&k, &model, 17, 100_000).into_iter().step_by(2).collect();
        let n = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
        let d = ks_statistic(&mut draws, |t| n.cdf(t));
        assert!(d < ks_critical_001(draws.len()), "KS D = {d}");
    }

    #[test]
    fn ar1_selection_matches_analytic() {
        // Exact autocorrelation 0.99^n.
        assert_eq!(first_lag_below(|n| 0.99f64.powi(n as i32), 0.95, 64), 6);

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let phi: f64 = 0.99;
        let sd = (1.0 - phi * phi).sqrt();
        let mut y: f64 = StandardNormal.sample(&mut rng);
        let series: Vec<f64> = (0..10_000_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                y = phi * y + sd * e;
                y
            })
            .collect();
        assert_eq!(steps_from_series(&series, 0.95, 64), 6);
    }

    #[test]
    fn iid_and_constant_series_need_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let iid: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(steps_from_series(&iid, 0.95, 64), 1);
        assert_eq!(steps_from_series(&[3.0; 100], 0.95, 64), 1);
    }

    #[test]
    fn truncates_negative_autocorrelation() {
        // Alternating series: κ(1) = -1 is truncated to 0.
        let alt: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(steps_from_series(&alt, 0.5, 64), 1);
    }

    #[test]
    fn tuned_steps_monotone_in_kappa_bar() {
        let model = TemperedModel::new(StdNormal);
        let schedule = Schedule::uniform(3).unwrap();
        let cfg = SliceConfig {
            initial_width: 0.05,
            max_doublings: 2,
        };
        let mut prev = vec![usize::MAX; 3];
        for kb in [0.1, 0.3, 0.6, 0.9] {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let steps = tune_explore_steps(&model, &schedule, kb, 2_000, &cfg, None, &mut rng).unwrap();
            assert!(steps.iter().all(|&n| (1..=MAX_EXPLORE_STEPS).contains(&n)));
            assert!(steps.iter().zip(&prev).all(|(s, p)| s <= p), "{steps:?} vs {prev:?}");
            prev = steps;
        }
        assert!(prev[0] >= 1);
        assert!(tune_explore_steps(
            &model,
            &schedule,
            1.0,
            100,
            &cfg,
            None,
            &mut ChaCha8Rng::seed_from_u64(1)
        )
        .is_err());
    }
}
