//! Regenerative estimators built from tour sums.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::st_kernels::{IndexTour, TourTrace};

/// Per-tour summaries needed by the estimators: tour length, number of
/// top-level visits and, for every test function `h`, the sum of `h` over
/// the top-level states of the tour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TourStatistics {
    pub tau: Vec<usize>,
    pub visits_top: Vec<usize>,
    /// `h_sums[j][k]`: sum of test function `k` over tour `j`.
    pub h_sums: Vec<Vec<f64>>,
}

impl TourStatistics {
    pub fn push(&mut self, tau: usize, visits_top: usize, h_sums: Vec<f64>) {
        self.tau.push(tau);
        self.visits_top.push(visits_top);
        self.h_sums.push(h_sums);
    }

    pub fn from_traces<'a, I: IntoIterator<Item = &'a TourTrace>>(traces: I) -> Self {
        let mut s = Self::default();
        for t in traces {
            s.push(t.tau, t.visits_top, t.h_sums.clone());
        }
        s
    }

    pub fn from_index_tours(tours: &[IndexTour]) -> Self {
        let mut s = Self::default();
        for t in tours {
            s.push(t.tau, t.visits_top, Vec::new());
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn n_test_functions(&self) -> usize {
        self.h_sums.first().map_or(0, Vec::len)
    }

    fn total_visits(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(invalid("no tours"));
        }
        let v: usize = self.visits_top.iter().sum();
        if v == 0 {
            return Err(NrstError::NoTopVisits);
        }
        Ok(v as f64)
    }

    fn h_column(&self, h: usize) -> Result<impl Iterator<Item = f64> + '_> {
        if h >= self.n_test_functions() || self.h_sums.iter().any(|r| r.len() <= h) {
            return Err(invalid(format!("test function index {h} out of range")));
        }
        Ok(self.h_sums.iter().map(move |r| r[h]))
    }
}

/// Ratio estimator of `π(h)`: top-level sums of `h` over top-level visits.
pub fn ratio_estimate(stats: &TourStatistics, h: usize) -> Result<f64> {
    let v = stats.total_visits()?;
    Ok(stats.h_column(h)?.sum::<f64>() / v)
}

/// Consistent estimate of the CLT variance of [`ratio_estimate`].
pub fn estimate_sigma2(stats: &TourStatistics, h: usize) -> Result<f64> {
    let v = stats.total_visits()?;
    let r = ratio_estimate(stats, h)?;
    let k = stats.len() as f64;
    let ss: f64 = stats
        .h_column(h)?
        .zip(&stats.visits_top)
        .map(|(s, &vj)| {
            let centered = s - r * vj as f64;
            centered * centered
        })
        .sum();
    Ok(k * ss / (v * v))
}

/// `estimate ± z_α σ̂ / √k`.
pub fn confidence_interval(estimate: f64, sigma2: f64, k: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(sigma2 >= 0.0) {
        return Err(invalid("sigma2 must be non-negative"));
    }
    let hw = z_alpha(alpha) * (sigma2 / k as f64).sqrt();
    Ok((estimate - hw, estimate + hw))
}

/// Tour effectiveness estimate `(Σv)² / (k Σv²)`; 0 when no tour reaches the top.
pub fn estimate_te(visits: &[usize]) -> Result<f64> {
    if visits.is_empty() {
        return Err(invalid("estimate_te needs at least one tour"));
    }
    let s1: f64 = visits.iter().map(|&v| v as f64).sum();
    if s1 == 0.0 {
        return Ok(0.0);
    }
    let s2: f64 = visits.iter().map(|&v| (v as f64) * (v as f64)).sum();
    Ok((s1 * s1 / (visits.len() as f64 * s2)).min(1.0))
}

/// Number of tours that guarantees an `alpha`-level interval of half-width
/// `delta` for every test function bounded by 1.
pub fn min_tours(alpha: f64, delta: f64, te: f64) -> Result<usize> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    if !(te > 0.0 && te <= 1.0) {
        return Err(invalid(format!("tour effectiveness must lie in (0, 1], got {te}")));
    }
    Ok(min_tours_raw(alpha, delta, te).ceil().max(1.0) as usize)
}

/// Pre-ceiling value of [`min_tours`].
pub fn min_tours_raw(alpha: f64, delta: f64, te: f64) -> f64 {
    let r = z_alpha(alpha) / delta;
    4.0 / te * r * r
}

/// Two-sided normal quantile `Φ⁻¹((1 + α) / 2)`.
pub fn z_alpha(alpha: f64) -> f64 {
    normal_quantile(0.5 * (1.0 + alpha))
}

/// Standard normal quantile function (Wichura's AS 241, PPND16).
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r + 6.726_577_092_700_87e4) * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_7e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 1.242_660_947_388_078_4e-3) * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Estimate, variance and interval for one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub sigma2: f64,
    pub ci: (f64, f64),
}

/// JSON-serializable diagnostics over a set of tours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub k: usize,
    pub te_hat: f64,
    pub estimates: Vec<Estimate>,
}

pub fn diagnostics(stats: &TourStatistics, names: &[String], alpha: f64) -> Result<Diagnostics> {
    let k = stats.len();
    let te_hat = estimate_te(&stats.visits_top)?;
    let mut estimates = Vec::with_capacity(names.len());
    for (h, name) in names.iter().enumerate() {
        let estimate = ratio_estimate(stats, h)?;
        let sigma2 = estimate_sigma2(stats, h)?;
        let ci = confidence_interval(estimate, sigma2, k, alpha)?;
        estimates.push(Estimate {
            name: name.clone(),
            estimate,
            sigma2,
            ci,
        });
    }
    Ok(Diagnostics { k, te_hat, estimates })
}
