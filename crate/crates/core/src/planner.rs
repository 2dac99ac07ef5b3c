//! Execution planning for tour-parallel runs: a bulk-tail model of per-tour
//! CPU time, greedy worker-pool simulation and HPC/cloud cost curves.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::runner::tour_rng;

/// Minimum number of CPU-time samples accepted by [`fit_cpu_model`].
pub const MIN_SAMPLES: usize = 10;

const THRESHOLD_QUANTILE: f64 = 0.8;
const TAIL_PROB: f64 = 0.2;
const NEWTON_TOL: f64 = 1e-8;

/// `1 / (1 + 2Λ)`.
pub fn te_infinity(lambda_hat: f64) -> Result<f64> {
    if !(lambda_hat >= 0.0) || !lambda_hat.is_finite() {
        return Err(invalid(format!(
            "lambda_hat must be finite and non-negative, got {lambda_hat}"
        )));
    }
    Ok(1.0 / (1.0 + 2.0 * lambda_hat))
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical bulk below an 80th-percentile threshold plus a Weibull tail
/// for the exceedances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuTimeModel {
    pub threshold: f64,
    pub bulk: Vec<f64>,
    pub tail_shape: f64,
    pub tail_scale: f64,
    pub tail_prob: f64,
}

impl CpuTimeModel {
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        if self.bulk.is_empty() || rng.random::<f64>() < self.tail_prob {
            let w = Weibull::new(self.tail_scale, self.tail_shape).expect("validated parameters");
            self.threshold + w.sample(rng)
        } else {
            self.bulk[rng.random_range(0..self.bulk.len())]
        }
    }

    pub fn sample_n(&self, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Maximum-likelihood Weibull fit `(shape, scale)`. Returns `None` when the
/// data carry no shape information (fewer than two points or no spread).
pub fn fit_weibull(x: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || x.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    let var_log = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / n;
    if var_log <= 1e-24 {
        return None;
    }
    // Profile score in the shape k; logs are centred for stability.
    let score = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &logs {
            let c = l - mean_log;
            let w = (k * c).exp();
            s0 += w;
            s1 += w * c;
            s2 += w * c * c;
        }
        let g = s1 / s0 - 1.0 / k;
        let dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
        (g, dg)
    };
    // g is increasing in k, negative near 0 and positive for large k.
    let (mut lo, mut hi) = (1e-6, 1.0);
    while score(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return None;
        }
    }
    let mut k = (1.2 / var_log.sqrt()).clamp(lo, hi);
    for _ in 0..200 {
        let (g, dg) = score(k);
        if g > 0.0 {
            hi = k;
        } else {
            lo = k;
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - k).abs() <= NEWTON_TOL * k.max(1.0);
        k = next;
        if done {
            break;
        }
    }
    let mean_pow = logs.iter().map(|l| (k * (l - mean_log)).exp()).sum::<f64>() / n;
    let scale = mean_log.exp() * mean_pow.powf(1.0 / k);
    Some((k, scale))
}

pub fn fit_cpu_model(times: &[f64]) -> Result<CpuTimeModel> {
    if times.len() < MIN_SAMPLES {
        return Err(NrstError::InsufficientData(format!(
            "need at least {MIN_SAMPLES} CPU-time samples, got {}",
            times.len()
        )));
    }
    if let Some(bad) = times.iter().find(|&&t| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid(format!("CPU times must be positive and finite, got {bad}")));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, THRESHOLD_QUANTILE);
    let bulk: Vec<f64> = sorted.iter().copied().filter(|&t| t <= threshold).collect();
    let exceed: Vec<f64> = sorted
        .iter()
        .filter(|&&t| t > threshold)
        .map(|t| t - threshold)
        .collect();
    let (tail_shape, tail_scale) = fit_weibull(&exceed).unwrap_or_else(|| {
        let mean = if exceed.is_empty() {
            0.0
        } else {
            exceed.iter().sum::<f64>() / exceed.len() as f64
        };
        (1.0, mean.max(threshold * f64::EPSILON))
    });
    Ok(CpuTimeModel {
        threshold,
        bulk,
        tail_shape,
        tail_scale,
        tail_prob: TAIL_PROB,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSimulation {
    pub makespan: f64,
    /// Step function `(time, active workers)`, each entry valid until the
    /// next one; ends with zero active workers at the makespan.
    pub busy_curve: Vec<(f64, usize)>,
    /// Worker index of every tour.
    pub assignments: Vec<usize>,
    pub start_times: Vec<f64>,
}

#[derive(PartialEq)]
struct Free(f64, usize);

impl Eq for Free {}

impl Ord for Free {
    // Reversed, so the max-heap pops the earliest-free, lowest-index worker.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Free {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy list scheduling: tours are dispatched in order (or longest
/// first) to the earliest-free worker.
pub fn simulate_pool(times: &[f64], pool_size: usize, longest_first: bool) -> Result<PoolSimulation> {
    if times.is_empty() {
        return Err(invalid("need at least one tour"));
    }
    if pool_size == 0 {
        return Err(invalid("pool_size must be at least 1"));
    }
    if let Some(bad) = times.iter().find(|&&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(invalid(format!(
            "tour times must be finite and non-negative, got {bad}"
        )));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    if longest_first {
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    }
    let mut heap: BinaryHeap<Free> = (0..pool_size).map(|w| Free(0.0, w)).collect();
    let mut assignments = vec![0; times.len()];
    let mut start_times = vec![0.0; times.len()];
    let mut events = Vec::with_capacity(2 * times.len());
    for &j in &order {
        let Free(t, w) = heap.pop().unwrap();
        assignments[j] = w;
        start_times[j] = t;
        events.push((t, 1i64));
        events.push((t + times[j], -1i64));
        heap.push(Free(t + times[j], w));
    }
    let makespan = heap.into_iter().map(|f| f.0).fold(0.0, f64::max);
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut busy_curve: Vec<(f64, usize)> = Vec::new();
    let mut active = 0i64;
    for (t, d) in events {
        active += d;
        match busy_curve.last_mut() {
            Some(last) if last.0 == t => last.1 = active as usize,
            _ => busy_curve.push((t, active as usize)),
        }
        let n = busy_curve.len();
        if n >= 2 && busy_curve[n - 2].1 == busy_curve[n - 1].1 {
            busy_curve.pop();
        }
    }
    Ok(PoolSimulation {
        makespan,
        busy_curve,
        assignments,
        start_times,
    })
}

/// Source of per-tour CPU times for the cost simulations.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSource {
    Model(CpuTimeModel),
    /// Fixed times, reused by every replication.
    Explicit(Vec<f64>),
}

impl TimeSource {
    fn draw(&self, k_tours: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            TimeSource::Model(m) => m.sample_n(k_tours, rng),
            TimeSource::Explicit(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// Mean and 10%/90% replication quantiles.
    fn from_samples(mut x: Vec<f64>) -> Self {
        x.sort_by(f64::total_cmp);
        Self {
            mean: x.iter().sum::<f64>() / x.len() as f64,
            lo: quantile_sorted(&x, 0.1),
            hi: quantile_sorted(&x, 0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub pool_size: usize,
    pub makespan: Band,
    pub hpc_cost: Band,
    pub cloud_cost: Band,
}

/// Per-replication makespans, indexed `[replication][pool]`, and the total
/// CPU time of every replication.
pub fn replicate_makespans(
    source: &TimeSource,
    k_tours: usize,
    pool_sizes: &[usize],
    replications: usize,
    longest_first: bool,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if replications == 0 {
        return Err(invalid("replications must be at least 1"));
    }
    if k_tours == 0 {
        return Err(invalid("k_tours must be at least 1"));
    }
    if let TimeSource::Explicit(t) = source {
        if t.len() != k_tours {
            return Err(invalid(format!("{} explicit times for {k_tours} tours", t.len())));
        }
    }
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let times = source.draw(k_tours, &mut tour_rng(seed, r));
            let total: f64 = times.iter().sum();
            let spans = pool_sizes
                .iter()
                .map(|&p| simulate_pool(&times, p, longest_first).map(|s| s.makespan))
                .collect::<Result<Vec<_>>>()?;
            Ok((spans, total))
        })
        .collect();
    let mut spans = Vec::with_capacity(replications);
    let mut totals = Vec::with_capacity(replications);
    for row in rows {
        let (s, t) = row?;
        spans.push(s);
        totals.push(t);
    }
    Ok((spans, totals))
}

/// Makespan, HPC cost (`makespan × pool size`) and cloud cost (total CPU
/// time) per pool size, with 80% replication bands. Every replication
/// draws one set of tour times shared by all pool sizes.
pub fn cost_curves(
    source: &TimeSource,
    k_tours: usize,
    pool_sizes: &[usize],
    replications: usize,
    longest_first: bool,
    seed: u64,
) -> Result<Vec<CostPoint>> {
    let (spans, totals) = replicate_makespans(source, k_tours, pool_sizes, replications, longest_first, seed)?;
    Ok(pool_sizes
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let m: Vec<f64> = spans.iter().map(|row| row[j]).collect();
            CostPoint {
                pool_size: p,
                hpc_cost: Band::from_samples(m.iter().map(|x| x * p as f64).collect()),
                makespan: Band::from_samples(m),
                cloud_cost: Band::from_samples(totals.clone()),
            }
        })
        .collect())
}

/// Equal-width histogram `(bin centre, count)`.
pub fn histogram(x: &[f64], bins: usize) -> Vec<(f64, usize)> {
    if x.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in x {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + (b as f64 + 0.5) * width, c))
        .collect()
}

/// Inputs for the tidy planning CSV.
pub struct PlanTables<'a> {
    pub histogram: &'a [(f64, usize)],
    pub busy: &'a [(usize, PoolSimulation)],
    pub curves: &'a [CostPoint],
}

/// Writes `panel,pool_size,x,y,lo,hi` rows. Panels: `histogram` (bin
/// centre, count), `busy` (time, active workers), `time`, `hpc_cost` and
/// `cloud_cost` (pool size, mean with band).
pub fn write_plan_csv<W: Write>(tables: &PlanTables<'_>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["panel", "pool_size", "x", "y", "lo", "hi"])?;
    for &(x, c) in tables.histogram {
        w.write_record(["histogram", "", &x.to_string(), &c.to_string(), "", ""])?;
    }
    for (p, sim) in tables.busy {
        for &(t, a) in &sim.busy_curve {
            w.write_record(["busy", &p.to_string(), &t.to_string(), &a.to_string(), "", ""])?;
        }
    }
    for c in tables.curves {
        let p = c.pool_size.to_string();
        for (panel, b) in [
            ("time", c.makespan),
            ("hpc_cost", c.hpc_cost),
            ("cloud_cost", c.cloud_cost),
        ] {
            w.write_record([panel, &p, &p, &b.mean.to_string(), &b.lo.to_string(), &b.hi.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::st_kernels::{simulate_index_tours_par, IdealIndexChain, Variant};
    use crate::stats::TourStatistics;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn te_infinity_examples() {
        assert_eq!(te_infinity(0.0).unwrap(), 1.0);
        assert!((te_infinity(1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((te_infinity(2.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(te_infinity(-0.1).is_err());
        assert!(te_infinity(f64::NAN).is_err());
    }

    #[test]
    fn te_infinity_matches_fine_equi_rejection_chain() {
        let chain = IdealIndexChain::equi_rejection(64, 2.0 / 64.0).unwrap();
        let tours = simulate_index_tours_par(&chain, Variant::Nrst, 1_000_000, 17);
        let visits = TourStatistics::from_index_tours(&tours).visits_top;
        let te = crate::stats::estimate_te(&visits).unwrap();
        assert!((0.18..=0.22).contains(&te), "{te}");
    }

    #[test]
    fn percentile_examples() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile_sorted(&x, 0.8) - 8.2).abs() < 1e-12);
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 10.0);
        let m = fit_cpu_model(&x).unwrap();
        assert!((m.threshold - 8.2).abs() < 1e-12);
        assert_eq!(m.bulk, (1..=8).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn constant_times_give_degenerate_fit() {
        let m = fit_cpu_model(&[5.0; 20]).unwrap();
        assert_eq!(m.threshold, 5.0);
        assert_eq!(m.tail_shape, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = m.sample(&mut rng);
            assert!((5.0..5.0 + 1e-9).contains(&t), "{t}");
        }
    }

    #[test]
    fn fit_needs_ten_positive_samples() {
        assert!(matches!(fit_cpu_model(&[1.0; 9]), Err(NrstError::InsufficientData(_))));
        let mut x = vec![1.0; 10];
        x[3] = 0.0;
        assert!(fit_cpu_model(&x).is_err());
    }

    #[test]
    fn weibull_mle_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Weibull::new(2.0, 1.5).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| w.sample(&mut rng)).collect();
        let (k, s) = fit_weibull(&x).unwrap();
        assert!((k - 1.5).abs() < 0.1, "{k}");
        assert!((s - 2.0).abs() < 0.1, "{s}");
    }

    #[test]
    fn weibull_mle_solves_score_equation() {
        let x = [0.3, 1.2, 0.7, 2.5, 1.9, 0.4, 3.1];
        let (k, s) = fit_weibull(&x).unwrap();
        let n = x.len() as f64;
        let sk: f64 = x.iter().map(|v: &f64| v.powf(k)).sum();
        let skl: f64 = x.iter().map(|v: &f64| v.powf(k) * v.ln()).sum();
        let ml: f64 = x.iter().map(|v: &f64| v.ln()).sum::<f64>() / n;
        assert!((skl / sk - 1.0 / k - ml).abs() < 1e-8);
        assert!((s - (sk / n).powf(1.0 / k)).abs() < 1e-10);
        assert!(fit_weibull(&[2.0, 2.0, 2.0]).is_none());
    }

    #[test]
    fn exceedance_tail_is_weibull_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Weibull::new(2.0, 1.5).unwrap();
        let times: Vec<f64> = (0..50_000).map(|_| 1.0 + w.sample(&mut rng)).collect();
        let m = fit_cpu_model(&times).unwrap();
        assert!(m.bulk.iter().all(|&b| b <= m.threshold));
        assert_eq!(m.tail_prob, 0.2);
        assert!(m.tail_shape > 0.0 && m.tail_scale > 0.0);
    }

    #[test]
    fn sampling_reproduces_threshold_percentile() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let source: Vec<f64> = (0..2000).map(|_| (rng.random::<f64>() * 2.0).exp()).collect();
        let m = fit_cpu_model(&source).unwrap();
        let mut draws = m.sample_n(100_000, &mut rng);
        draws.sort_by(f64::total_cmp);
        let p80 = quantile_sorted(&draws, 0.8);
        assert!((p80 / m.threshold - 1.0).abs() < 0.05, "{p80} vs {}", m.threshold);
        assert!(draws[0] > 0.0);
    }

    #[test]
    fn pool_hand_example() {
        let s = simulate_pool(&[4.0, 3.0, 2.0, 1.0], 2, false).unwrap();
        assert_eq!(s.makespan, 5.0);
        assert_eq!(s.assignments, vec![0, 1, 1, 0]);
        assert_eq!(s.start_times, vec![0.0, 0.0, 3.0, 4.0]);
        assert_eq!(s.busy_curve, vec![(0.0, 2), (5.0, 0)]);
    }

    #[test]
    fn pool_extremes() {
        let t = [2.0, 7.0, 1.0, 3.5];
        assert_eq!(simulate_pool(&t, 1, false).unwrap().makespan, 13.5);
        assert_eq!(simulate_pool(&t, 4, false).unwrap().makespan, 7.0);
        assert_eq!(simulate_pool(&t, 9, false).unwrap().makespan, 7.0);
        assert!(simulate_pool(&t, 0, false).is_err());
        assert!(simulate_pool(&[], 2, false).is_err());
    }

    #[test]
    fn longest_first_dispatch() {
        let s = simulate_pool(&[1.0, 1.0, 2.0], 2, true).unwrap();
        assert_eq!(s.assignments[2], 0);
        assert_eq!(s.makespan, 2.0);
        assert_eq!(simulate_pool(&[1.0, 1.0, 2.0], 2, false).unwrap().makespan, 3.0);
    }

    #[test]
    fn busy_curve_counts_workers() {
        let s = simulate_pool(&[3.0, 1.0, 1.0], 2, false).unwrap();
        assert_eq!(s.busy_curve, vec![(0.0, 2), (2.0, 1), (3.0, 0)]);
    }

    #[test]
    fn cost_curve_examples() {
        let src = TimeSource::Explicit(vec![4.0, 3.0, 2.0, 1.0]);
        let c = cost_curves(&src, 4, &[1, 2, 4, 8], 3, false, 0).unwrap();
        for p in &c {
            assert_eq!(p.cloud_cost.mean, 10.0);
        }
        assert_eq!(c[0].hpc_cost.mean, 10.0);
        assert_eq!(c[1].makespan.mean, 5.0);
        assert_eq!(c[2].hpc_cost.mean, 16.0);
        assert_eq!(c[3].hpc_cost.mean, 32.0);
        assert!(c[3].hpc_cost.mean >= c[3].cloud_cost.mean);
    }

    #[test]
    fn model_cost_curves_are_reproducible() {
        let m = fit_cpu_model(&(1..=40).map(|i| f64::from(i).sqrt()).collect::<Vec<_>>()).unwrap();
        let src = TimeSource::Model(m);
        let a = cost_curves(&src, 100, &[1, 4, 16], 20, false, 9).unwrap();
        let b = cost_curves(&src, 100, &[1, 4, 16], 20, false, 9).unwrap();
        assert_eq!(a, b);
        assert!(a[0].makespan.lo <= a[0].makespan.mean && a[0].makespan.mean <= a[0].makespan.hi);
        assert!((a[0].hpc_cost.mean - a[0].cloud_cost.mean).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = histogram(&[0.0, 0.1, 0.5, 1.0], 2);
        assert_eq!(h, vec![(0.25, 2), (0.75, 2)]);
        assert_eq!(histogram(&[3.0, 3.0], 4).iter().map(|b| b.1).sum::<usize>(), 2);
    }

    #[test]
    fn plan_csv_panels() {
        let sim = simulate_pool(&[4.0, 3.0, 2.0, 1.0], 2, false).unwrap();
        let curves = cost_curves(&TimeSource::Explicit(vec![4.0, 3.0, 2.0, 1.0]), 4, &[2], 1, false, 0).unwrap();
        let hist = histogram(&[4.0, 3.0, 2.0, 1.0], 2);
        let mut buf = Vec::new();
        write_plan_csv(
            &PlanTables {
                histogram: &hist,
                busy: &[(2, sim)],
                curves: &curves,
            },
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("panel,pool_size,x,y,lo,hi\n"));
        assert!(text.contains("time,2,2,5,5,5"));
        assert!(text.contains("cloud_cost,2,2,10,10,10"));
        assert_eq!(text.lines().filter(|l| l.starts_with("busy")).count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn makespan_monotone_and_bounded(times in prop::collection::vec(0.01f64..10.0, 1..40)) {
            let total: f64 = times.iter().sum();
            let max = times.iter().copied().fold(0.0, f64::max);
            let mut prev = f64::INFINITY;
            for p in 1..=times.len() + 2 {
                let m = simulate_pool(&times, p, false).unwrap().makespan;
                prop_assert!(m <= prev + 1e-12);
                prop_assert!(m >= max.max(total / p as f64) - 1e-9);
                prev = m;
            }
        }

        #[test]
        fn cloud_cost_pool_invariant(seed in 0u64..1000) {
            let m = fit_cpu_model(&(1..=30).map(f64::from).collect::<Vec<_>>()).unwrap();
            let (_, totals) = replicate_makespans(&TimeSource::Model(m.clone()), 50, &[1], 4, false, seed).unwrap();
            let c = cost_curves(&TimeSource::Model(m), 50, &[1, 3, 7, 50], 4, false, seed).unwrap();
            for p in &c {
                prop_assert_eq!(p.cloud_cost, c[0].cloud_cost);
            }
            let (spans, _) = replicate_makespans(&TimeSource::Explicit(vec![1.0; 50]), 50, &[1], 1, false, seed).unwrap();
            prop_assert_eq!(spans[0][0], 50.0);
            prop_assert!(totals.iter().all(|&t| t > 0.0));
        }
    }
}
