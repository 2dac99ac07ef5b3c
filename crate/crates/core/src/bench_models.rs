//! Benchmark models: toy Gaussian, banana, funnel, hierarchical, mRNA
//! transfection, threshold Weibull and the XY lattice.
//!
//! Every model is a reference distribution `π₀` plus a potential `V`: the
//! negative log-likelihood, or, for models given as a target density `π`, the
//! negative log-density of the target's conditional factors plus the
//! reference's unnormalized log-kernel, so that `π₀e^{−V} ∝ π`. Parameters with bounded support are mapped to the real line by
//! logit transforms and positive scale parameters by logs; the reference
//! densities include the Jacobians, so `π₀` is always a proper density on
//! `ℝ^d`.

use std::collections::BTreeMap;
use std::f64::consts::{LN_10, PI};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::model::{PathModel, TemperedModel};
use crate::st_kernels::LevelSampler;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Names accepted by [`make_model`].
pub const MODEL_NAMES: [&str; 7] = [
    "toy_gaussian",
    "banana",
    "funnel",
    "hierarchical",
    "mrna",
    "threshold_weibull",
    "xy",
];

const DEFAULT_DATA_SEED: u64 = 20_240_601;

/// A model name with optional numeric parameters and a seed for synthetic data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub data_seed: Option<u64>,
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// The generator behind the model's dataset.
    pub fn data_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.data_seed.unwrap_or(DEFAULT_DATA_SEED))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(invalid(format!(
                    "model '{}' has no parameter '{}' (expected one of {:?})",
                    self.name, k, allowed
                )));
            }
        }
        Ok(())
    }

    fn real(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(invalid(format!("parameter '{key}' must be finite")));
        }
        Ok(v)
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.real(key, default)?;
        if v <= 0.0 {
            return Err(invalid(format!("parameter '{key}' must be positive")));
        }
        Ok(v)
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.real(key, default as f64)?;
        if v.fract() != 0.0 || v < min as f64 {
            return Err(invalid(format!("parameter '{key}' must be an integer ≥ {min}")));
        }
        Ok(v as usize)
    }
}

/// Builds a registered model.
pub fn make_model(spec: &ModelSpec) -> Result<TemperedModel> {
    Ok(match spec.name.as_str() {
        "toy_gaussian" => TemperedModel::new(ToyGaussian::from_spec(spec)?),
        "banana" => {
            spec.check_keys(&[])?;
            TemperedModel::new(Banana)
        }
        "funnel" => TemperedModel::new(Funnel::from_spec(spec)?),
        "hierarchical" => TemperedModel::new(Hierarchical::from_spec(spec, &mut spec.data_rng())?),
        "mrna" => TemperedModel::new(Mrna::from_spec(spec, &mut spec.data_rng())?),
        "threshold_weibull" => TemperedModel::new(ThresholdWeibull::from_spec(spec, &mut spec.data_rng())?),
        "xy" => TemperedModel::new(XyModel::from_spec(spec)?),
        other => {
            return Err(NrstError::UnknownModel {
                name: other.to_string(),
                available: MODEL_NAMES.join(", "),
            })
        }
    })
}

// ---------------------------------------------------------------------------
// shared densities and transforms

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// `log N(x; mean, e^{log_var})` without forming the variance.
fn log_normal_lv(x: f64, mean: f64, log_var: f64) -> f64 {
    -0.5 * (LN_2PI + log_var + (x - mean) * (x - mean) * (-log_var).exp())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log density of the standard logistic distribution, i.e. of `logit(U)`.
fn log_logistic(x: f64) -> f64 {
    -x.abs() - 2.0 * (-x.abs()).exp().ln_1p()
}

fn sample_logistic(rng: &mut dyn RngCore) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return (u / (1.0 - u)).ln();
        }
    }
}

/// Maps `x ∈ ℝ` to `(lo, hi)`.
fn to_interval(x: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(x)
}

/// Log density of `log s` when `s ~ InverseGamma(shape, scale)`.
fn log_inv_gamma_log_scale(u: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - shape * u - scale * (-u).exp()
}

fn sample_log_inv_gamma(shape: f64, scale: f64, rng: &mut dyn RngCore) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("valid gamma parameters");
    loop {
        let draw: f64 = g.sample(rng);
        if draw > 0.0 {
            return scale.ln() - draw.ln();
        }
    }
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn std_normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------------------
// toy Gaussian

/// `x ~ N_d(0, σ₀² I)`, `y | x ~ N_d(x, I)` observed at `y = m·1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGaussian {
    pub d: usize,
    pub m: f64,
    pub sigma0: f64,
}

impl ToyGaussian {
    pub fn new(d: usize, m: f64, sigma0: f64) -> Result<Self> {
        if d == 0 || !m.is_finite() || !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(invalid("toy_gaussian needs d ≥ 1, finite m and σ₀ > 0"));
        }
        Ok(Self { d, m, sigma0 })
    }

    fn from_spec(spec: &ModelSpec) -> Result<Self> {
        spec.check_keys(&["d", "m", "sigma0"])?;
        Self::new(
            spec.count("d", 3, 1)?,
            spec.real("m", 2.0)?,
            spec.positive("sigma0", 2.0)?,
        )
    }

    /// `(μ(β), σ(β)², log 𝒵(β))` of the tempered path.
    pub fn path(&self, beta: f64) -> GaussianPath {
        analytic_gaussian_path(self.d, self.m, self.sigma0, beta)
    }

    /// `E^{(β)}[V]`.
    pub fn mean_potential(&self, beta: f64) -> f64 {
        let p = self.path(beta);
        let d = self.d as f64;
        0.5 * d * (p.variance + (p.mean - self.m).powi(2)) + 0.5 * d * LN_2PI
    }
}

impl PathModel for ToyGaussian {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.d).map(|_| self.sigma0 * std_normal(rng)).collect()
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        let var = self.sigma0 * self.sigma0;
        x.iter().map(|&xi| log_normal(xi, 0.0, var)).sum()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&xi| 0.5 * (xi - self.m) * (xi - self.m) + 0.5 * LN_2PI)
            .sum()
    }

    fn name(&self) -> &str {
        "toy_gaussian"
    }
}

impl LevelSampler for ToyGaussian {
    fn sample(&self, beta: f64, rng: &mut dyn RngCore) -> Vec<f64> {
        let p = self.path(beta);
        let sd = p.variance.sqrt();
        (0..self.d).map(|_| p.mean + sd * std_normal(rng)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub mean: f64,
    pub variance: f64,
    pub log_z: f64,
}

/// Moments and log normalizing constant of the toy Gaussian path at `beta`;
/// `log 𝒵(β)` comes from Gauss–Hermite quadrature of `∫π₀e^{−βV}` in one
/// dimension, multiplied by `d`.
pub fn analytic_gaussian_path(d: usize, m: f64, sigma0: f64, beta: f64) -> GaussianPath {
    let variance = 1.0 / (beta + 1.0 / (sigma0 * sigma0));
    let mean = beta * m * variance;
    let (nodes, weights) = gauss_hermite(64);
    let s = std::f64::consts::SQRT_2 * sigma0;
    // ∫ N(x; 0, σ₀²) e^{−β(x−m)²/2} dx, then the (2π)^{−β/2} factor.
    let integral: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| {
            let x = s * t;
            w * (-0.5 * beta * (x - m) * (x - m)).exp()
        })
        .sum::<f64>()
        / PI.sqrt();
    let log_z = d as f64 * (integral.ln() - 0.5 * beta * LN_2PI);
    GaussianPath { mean, variance, log_z }
}

/// Gauss–Hermite nodes and weights for the weight `e^{−t²}`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

// ---------------------------------------------------------------------------
// banana and funnel

/// Target `x₁ ~ N(1, 10)`, `x₂ | x₁ ~ N(x₁², 0.1²)` against the reference
/// `x₁ ~ N(1, 10)`, `x₂ ~ N(11, 10²)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Banana;

impl PathModel for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![1.0 + 10f64.sqrt() * std_normal(rng), 11.0 + 10.0 * std_normal(rng)]
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        log_normal(x[0], 1.0, 10.0) + log_normal(x[1], 11.0, 100.0)
    }

    fn potential(&self, x: &[f64]) -> f64 {
        -(x[1] - 11.0).powi(2) / 200.0 - log_normal(x[1], x[0] * x[0], 0.01)
    }

    fn name(&self) -> &str {
        "banana"
    }
}

/// Target `x₁ ~ N(0, 3²)`, `x_i | x₁ ~ N(0, e^{x₁})` against the isotropic
/// reference `N(0, 3²)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Funnel {
    pub d: usize,
}

impl Funnel {
    fn from_spec(spec: &ModelSpec) -> Result<Self> {
        spec.check_keys(&["d"])?;
        Ok(Self {
            d: spec.count("d", 20, 2)?,
        })
    }
}

impl PathModel for Funnel {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.d).map(|_| 3.0 * std_normal(rng)).collect()
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| log_normal(xi, 0.0, 9.0)).sum()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        x[1..]
            .iter()
            .map(|&xi| -xi * xi / 18.0 - log_normal_lv(xi, 0.0, x[0]))
            .sum()
    }

    fn name(&self) -> &str {
        "funnel"
    }
}

// ---------------------------------------------------------------------------
// hierarchical

/// Normal hierarchical model with a Cauchy prior on `μ` and inverse-gamma
/// priors on both variances. State: `(μ, log τ², log σ², θ_1..θ_J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchical {
    /// `y[j]` holds the `M` observations of group `j`.
    pub y: Vec<Vec<f64>>,
}

const IG_SHAPE: f64 = 0.1;
const IG_SCALE: f64 = 0.1;

impl Hierarchical {
    pub fn new(y: Vec<Vec<f64>>) -> Result<Self> {
        if y.is_empty() || y.iter().any(|g| g.is_empty() || g.iter().any(|v| !v.is_finite())) {
            return Err(invalid("hierarchical data must have non-empty, finite groups"));
        }
        Ok(Self { y })
    }

    fn from_spec(spec: &ModelSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.check_keys(&["J", "M"])?;
        let j = spec.count("J", 8, 2)?;
        let m = spec.count("M", 20, 2)?;
        Self::new(hierarchical_data(j, m, rng)?)
    }
}

/// Between-group variance of the group means over the pooled within-group
/// variance.
pub fn variance_ratio(y: &[Vec<f64>]) -> f64 {
    let means: Vec<f64> = y.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    let within = y
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (g.len() - 1) as f64)
        .sum::<f64>()
        / y.len() as f64;
    between / within
}

/// Accepted band for the between/within variance ratio of generated data.
pub const VARIANCE_RATIO_BAND: (f64, f64) = (12.0, 20.0);
const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

fn hierarchical_data(j: usize, m: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let mu = (PI * (rng.random::<f64>() - 0.5)).tan();
        let tau = (0.5 * sample_log_inv_gamma(IG_SHAPE, IG_SCALE, rng)).exp();
        let sigma = (0.5 * sample_log_inv_gamma(IG_SHAPE, IG_SCALE, rng)).exp();
        let y: Vec<Vec<f64>> = (0..j)
            .map(|_| {
                let theta = mu + tau * std_normal(rng);
                (0..m).map(|_| theta + sigma * std_normal(rng)).collect()
            })
            .collect();
        if y.iter().flatten().any(|v| !v.is_finite()) {
            continue;
        }
        let r = variance_ratio(&y);
        if (VARIANCE_RATIO_BAND.0..=VARIANCE_RATIO_BAND.1).contains(&r) {
            return Ok(y);
        }
    }
    Err(NrstError::NumericalFailure(
        "hierarchical data generator exhausted its rejection budget".into(),
    ))
}

impl PathModel for Hierarchical {
    fn dim(&self) -> usize {
        3 + self.y.len()
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mu = (PI * (rng.random::<f64>() - 0.5)).tan();
        let ltau = sample_log_inv_gamma(IG_SHAPE, IG_SCALE, rng);
        let lsig = sample_log_inv_gamma(IG_SHAPE, IG_SCALE, rng);
        let tau = (0.5 * ltau).exp();
        let mut x = vec![mu, ltau, lsig];
        x.extend((0..self.y.len()).map(|_| mu + tau * std_normal(rng)));
        x
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        let (mu, ltau, lsig) = (x[0], x[1], x[2]);
        let cauchy = -(PI * (1.0 + mu * mu)).ln();
        cauchy
            + log_inv_gamma_log_scale(ltau, IG_SHAPE, IG_SCALE)
            + log_inv_gamma_log_scale(lsig, IG_SHAPE, IG_SCALE)
            + x[3..].iter().map(|&t| log_normal_lv(t, mu, ltau)).sum::<f64>()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let lsig = x[2];
        -self
            .y
            .iter()
            .zip(&x[3..])
            .map(|(g, &theta)| g.iter().map(|&v| log_normal_lv(v, theta, lsig)).sum::<f64>())
            .sum::<f64>()
    }

    fn name(&self) -> &str {
        "hierarchical"
    }
}

// ---------------------------------------------------------------------------
// mRNA transfection

/// Prior bounds of the `log10` parameters `(t₀, κ, β, δ, σ)`.
pub const MRNA_BOUNDS: [(f64, f64); 5] = [(-2.0, 1.0), (-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0), (-2.0, 5.0)];
/// Parameters used to synthesize the mRNA series.
pub const MRNA_TRUTH: [f64; 5] = [0.2, 1.0, 0.8, 1.2, 0.1];

/// Transfection time-series model; the state holds the logits of the
/// `log10` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mrna {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

/// `κ/(δ−β)·[e^{−β(t−t₀)} − e^{−δ(t−t₀)}]`, zero before `t₀`.
pub fn mrna_mean(t: f64, t0: f64, kappa: f64, beta: f64, delta: f64) -> f64 {
    let s = t - t0;
    if s <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = if beta <= delta { (beta, delta) } else { (delta, beta) };
    let gap = hi - lo;
    if gap == 0.0 {
        return kappa * s * (-lo * s).exp();
    }
    kappa * (-lo * s).exp() * -(-gap * s).exp_m1() / gap
}

impl Mrna {
    fn from_spec(spec: &ModelSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.check_keys(&["n_obs"])?;
        let n = spec.count("n_obs", 30, 2)?;
        let [t0, kappa, beta, delta, sigma] = MRNA_TRUTH;
        let noise = Normal::new(0.0, sigma).expect("valid noise scale");
        let t: Vec<f64> = (0..n).map(|i| 10.0 * i as f64 / (n - 1) as f64).collect();
        let y = t
            .iter()
            .map(|&ti| mrna_mean(ti, t0, kappa, beta, delta) + noise.sample(rng))
            .collect();
        Ok(Self { t, y })
    }

    fn params(x: &[f64]) -> [f64; 5] {
        let mut p = [0.0; 5];
        for (k, (lo, hi)) in MRNA_BOUNDS.iter().enumerate() {
            p[k] = (to_interval(x[k], *lo, *hi) * LN_10).exp();
        }
        p
    }
}

impl PathModel for Mrna {
    fn dim(&self) -> usize {
        5
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..5).map(|_| sample_logistic(rng)).collect()
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| log_logistic(v)).sum()
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let [t0, kappa, beta, delta, _] = Self::params(x);
        let log_var = 2.0 * to_interval(x[4], MRNA_BOUNDS[4].0, MRNA_BOUNDS[4].1) * LN_10;
        -self
            .t
            .iter()
            .zip(&self.y)
            .map(|(&t, &y)| log_normal_lv(y, mrna_mean(t, t0, kappa, beta, delta), log_var))
            .sum::<f64>()
    }

    fn name(&self) -> &str {
        "mrna"
    }
}

// ---------------------------------------------------------------------------
// threshold Weibull

/// Three-parameter Weibull likelihood with threshold `a`, scale `b` and
/// shape `c`. State: `(logit a/ȳ, log b, logit (c−0.1)/9.9)` where `ȳ` is the
/// smallest observation, so the reference keeps every observation inside
/// the support.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdWeibull {
    pub y: Vec<f64>,
    min_y: f64,
}

pub const WEIBULL_SHAPE_BOUNDS: (f64, f64) = (0.1, 10.0);

impl ThresholdWeibull {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() || y.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("threshold_weibull data must be positive and finite"));
        }
        let min_y = y.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { y, min_y })
    }

    fn from_spec(spec: &ModelSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.check_keys(&["n", "a", "b", "c"])?;
        let n = spec.count("n", 50, 1)?;
        let a = spec.positive("a", 10.0)?;
        let b = spec.positive("b", 2.0)?;
        let c = spec.positive("c", 1.5)?;
        Self::new(weibull_sample(n, a, b, c, rng))
    }
}

fn weibull_sample(n: usize, a: f64, b: f64, c: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                let y = a + b * (-u.ln()).powf(1.0 / c);
                if y > a {
                    break y;
                }
            }
        })
        .collect()
}

impl PathModel for ThresholdWeibull {
    fn dim(&self) -> usize {
        3
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![
            sample_logistic(rng),
            sample_log_inv_gamma(IG_SHAPE, IG_SCALE, rng),
            sample_logistic(rng),
        ]
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        log_logistic(x[0]) + log_inv_gamma_log_scale(x[1], IG_SHAPE, IG_SCALE) + log_logistic(x[2])
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let log_b = x[1];
        let c = to_interval(x[2], WEIBULL_SHAPE_BOUNDS.0, WEIBULL_SHAPE_BOUNDS.1);
        // y − a = (y − ȳ) + ȳ·σ(−x₀), kept in log form for the smallest point.
        let gap = sigmoid(-x[0]);
        let log_gap_min = self.min_y.ln() - softplus(x[0]);
        let ll: f64 = self
            .y
            .iter()
            .map(|&y| {
                let d = y - self.min_y;
                let log_z = if d == 0.0 {
                    log_gap_min
                } else {
                    (d + self.min_y * gap).ln()
                } - log_b;
                c.ln() - log_b + (c - 1.0) * log_z - (c * log_z).exp()
            })
            .sum();
        -ll
    }

    fn name(&self) -> &str {
        "threshold_weibull"
    }
}

// ---------------------------------------------------------------------------
// XY model

/// Nearest-neighbour XY model on an `n × n` torus with coupling `J`, and the
/// uniform reference on `[−π, π)^{n²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct XyModel {
    pub n: usize,
    pub coupling: f64,
    edges: Vec<(usize, usize)>,
}

impl XyModel {
    pub fn new(n: usize, coupling: f64) -> Result<Self> {
        if n < 3 || !coupling.is_finite() {
            return Err(invalid("xy model needs side length ≥ 3 and finite coupling"));
        }
        let mut edges = Vec::with_capacity(2 * n * n);
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                edges.push((i, r * n + (c + 1) % n));
                edges.push((i, ((r + 1) % n) * n + c));
            }
        }
        Ok(Self { n, coupling, edges })
    }

    fn from_spec(spec: &ModelSpec) -> Result<Self> {
        spec.check_keys(&["n", "J"])?;
        Self::new(spec.count("n", 8, 3)?, spec.real("J", 2.0)?)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

impl PathModel for XyModel {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dim()).map(|_| -PI + 2.0 * PI * rng.random::<f64>()).collect()
    }

    fn log_reference(&self, x: &[f64]) -> f64 {
        if x.iter().all(|v| (-PI..PI).contains(v)) {
            -(self.dim() as f64) * (2.0 * PI).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn potential(&self, x: &[f64]) -> f64 {
        -self.coupling * self.edges.iter().map(|&(i, j)| (x[i] - x[j]).cos()).sum::<f64>()
    }

    fn name(&self) -> &str {
        "xy"
    }
}

// ---------------------------------------------------------------------------
// synthetic data

/// A tidy table of generated observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws a dataset from the model's likelihood at its fixed parameters.
/// Models without data (banana, funnel, xy) return `None`.
pub fn generate_synthetic_data(spec: &ModelSpec, rng: &mut dyn RngCore) -> Result<Option<SyntheticData>> {
    let cols = |c: &[&str]| c.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(match spec.name.as_str() {
        "toy_gaussian" => {
            let g = ToyGaussian::from_spec(spec)?;
            Some(SyntheticData {
                columns: cols(&["y"]),
                rows: vec![vec![g.m]; g.d],
            })
        }
        "hierarchical" => {
            let h = Hierarchical::from_spec(spec, rng)?;
            let rows =
                h.y.iter()
                    .enumerate()
                    .flat_map(|(j, g)| g.iter().map(move |&v| vec![j as f64, v]))
                    .collect();
            Some(SyntheticData {
                columns: cols(&["group", "y"]),
                rows,
            })
        }
        "mrna" => {
            let m = Mrna::from_spec(spec, rng)?;
            Some(SyntheticData {
                columns: cols(&["t", "y"]),
                rows: m.t.iter().zip(&m.y).map(|(&t, &y)| vec![t, y]).collect(),
            })
        }
        "threshold_weibull" => {
            let w = ThresholdWeibull::from_spec(spec, rng)?;
            Some(SyntheticData {
                columns: cols(&["y"]),
                rows: w.y.iter().map(|&y| vec![y]).collect(),
            })
        }
        "banana" | "funnel" | "xy" => None,
        other => {
            return Err(NrstError::UnknownModel {
                name: other.to_string(),
                available: MODEL_NAMES.join(", "),
            })
        }
    })
}

/// The dataset a model built by [`make_model`] is conditioned on.
pub fn model_data(spec: &ModelSpec) -> Result<Option<SyntheticData>> {
    generate_synthetic_data(spec, &mut spec.data_rng())
}
