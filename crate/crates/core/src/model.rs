//! Tempered path of distributions between a reference and a target.
//!
//! A path is defined by a reference `π₀`, which can be sampled exactly and
//! evaluated pointwise, and a potential `V`, with the tempered densities
//! `π^(β)(x) ∝ π₀(x) exp(−β V(x))` for `β ∈ [0, 1]`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};

/// The three ingredients of a tempered path.
///
/// Implementations must be shareable read-only across threads.
pub trait PathModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Exact draw from the reference distribution.
    fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// `log π₀(x)`, normalized. `-inf` outside the reference support.
    fn log_reference(&self, x: &[f64]) -> f64;

    /// The potential `V(x)`, i.e. the negative log-likelihood.
    fn potential(&self, x: &[f64]) -> f64;

    fn name(&self) -> &str {
        "custom"
    }
}

/// Shared handle around a [`PathModel`] that counts potential evaluations.
///
/// Cloning shares both the model and the counters. [`TemperedModel::scoped`]
/// hands out a view with a fresh local counter that still feeds the shared
/// total, which is how per-tour costs are measured while tours run
/// concurrently.
#[derive(Clone)]
pub struct TemperedModel {
    inner: Arc<dyn PathModel>,
    total: Arc<AtomicU64>,
    local: Arc<AtomicU64>,
}

impl fmt::Debug for TemperedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemperedModel")
            .field("name", &self.inner.name())
            .field("dim", &self.inner.dim())
            .field("v_evals", &self.v_evals())
            .finish()
    }
}

impl TemperedModel {
    pub fn new<M: PathModel + 'static>(model: M) -> Self {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(inner: Arc<dyn PathModel>) -> Self {
        Self {
            inner,
            total: Arc::new(AtomicU64::new(0)),
            local: Arc::new(AtomicU64::new(0)),
        }
    }

    /// A view sharing the model and the global counter, with its own local
    /// counter starting at zero.
    pub fn scoped(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
            total: Arc::clone(&self.total),
            local: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn sample_reference(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner.sample_reference(rng)
    }

    pub fn log_reference(&self, x: &[f64]) -> f64 {
        self.inner.log_reference(x)
    }

    /// Evaluates `V(x)` and bumps both counters.
    pub fn potential(&self, x: &[f64]) -> f64 {
        self.total.fetch_add(1, Ordering::Relaxed);
        self.local.fetch_add(1, Ordering::Relaxed);
        self.inner.potential(x)
    }

    /// Like [`TemperedModel::potential`] but rejects non-finite values.
    pub fn checked_potential(&self, x: &[f64]) -> Result<f64> {
        let v = self.potential(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NrstError::DivergedPotential {
                x: x.to_vec(),
                value: v,
            })
        }
    }

    /// Potential evaluations across every view of this model.
    pub fn v_evals(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    /// Potential evaluations made through this view since it was scoped.
    pub fn local_v_evals(&self) -> u64 {
        self.local.load(Ordering::Relaxed)
    }
}

/// Grid, level affinities and per-level exploration steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub betas: Vec<f64>,
    pub affinities: Vec<f64>,
    pub explore_steps: Vec<usize>,
}

impl Schedule {
    pub fn new(betas: Vec<f64>, affinities: Vec<f64>, explore_steps: Vec<usize>) -> Result<Self> {
        let s = Self {
            betas,
            affinities,
            explore_steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// Uniform grid `{i/N}` with zero affinities and one exploration step per level.
    pub fn uniform(n_levels: usize) -> Result<Self> {
        if n_levels == 0 {
            return Err(invalid("a schedule needs at least one level above the reference"));
        }
        Self::new(uniform_grid(n_levels), vec![0.0; n_levels + 1], vec![1; n_levels])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.betas.len();
        if n < 2 {
            return Err(invalid("betas: need at least two grid points"));
        }
        if self.affinities.len() != n {
            return Err(invalid(format!(
                "affinities: expected {n} entries, got {}",
                self.affinities.len()
            )));
        }
        if self.explore_steps.len() != n - 1 {
            return Err(invalid(format!(
                "explore_steps: expected {} entries, got {}",
                n - 1,
                self.explore_steps.len()
            )));
        }
        if self.betas[0] != 0.0 || self.betas[n - 1] != 1.0 {
            return Err(invalid("betas: grid must start at 0 and end at 1"));
        }
        if self.betas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("betas: grid must be strictly increasing"));
        }
        if self.affinities.iter().any(|c| !c.is_finite()) {
            return Err(invalid("affinities: all entries must be finite"));
        }
        if self.explore_steps.contains(&0) {
            return Err(invalid("explore_steps: all entries must be positive"));
        }
        Ok(())
    }

    /// Index of the top level, `N`.
    pub fn top(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn n_levels(&self) -> usize {
        self.top()
    }

    /// Exploration steps at level `i > 0`.
    pub fn steps_at(&self, level: usize) -> usize {
        self.explore_steps[level - 1]
    }
}

pub fn uniform_grid(n_levels: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n_levels).map(|i| i as f64 / n_levels as f64).collect();
    g[n_levels] = 1.0;
    g
}

/// Probability of accepting a tempering move from `beta_from` to `beta_to`
/// for a state with potential `v`.
pub fn acceptance_probability(v: f64, beta_from: f64, beta_to: f64, c_from: f64, c_to: f64) -> Result<f64> {
    if !(v.is_finite() && beta_from.is_finite() && beta_to.is_finite() && c_from.is_finite() && c_to.is_finite()) {
        return Err(invalid("acceptance_probability: non-finite input"));
    }
    Ok(acceptance_unchecked(v, beta_to - beta_from, c_to - c_from))
}

#[inline]
pub(crate) fn acceptance_unchecked(v: f64, dbeta: f64, dc: f64) -> f64 {
    (-(dbeta * v - dc).max(0.0)).exp()
}

/// Unnormalized `log π^(β)(x)`. At `β = 0` the potential is not evaluated.
pub fn log_tempered_density(model: &TemperedModel, x: &[f64], beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let lr = model.log_reference(x);
    if beta == 0.0 || lr == f64::NEG_INFINITY {
        return Ok(lr);
    }
    let v = model.checked_potential(x)?;
    Ok(lr - beta * v)
}

/// Level probabilities `p_i ∝ 𝒵(β_i) e^{c_i}` from log-normalizing constants
/// and affinities.
pub fn pseudo_prior(log_z: &[f64], affinities: &[f64]) -> Result<Vec<f64>> {
    if log_z.is_empty() || log_z.len() != affinities.len() {
        return Err(invalid("pseudo_prior: inputs must be non-empty and of equal length"));
    }
    let e: Vec<f64> = log_z.iter().zip(affinities).map(|(z, c)| z + c).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(invalid("pseudo_prior: exponents must be finite"));
    }
    let w: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    struct Quadratic;
    impl PathModel for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn sample_reference(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
            vec![0.0]
        }
        fn log_reference(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn potential(&self, x: &[f64]) -> f64 {
            if x[0] > 100.0 {
                f64::INFINITY
            } else {
                x[0] * x[0]
            }
        }
    }

    #[test]
    fn acceptance_examples() {
        let a = acceptance_probability(2.0, 0.5, 1.0, 0.0, 0.0).unwrap();
        assert!((a - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(acceptance_probability(-3.0, 0.0, 0.5, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(acceptance_probability(2.0, 0.5, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(acceptance_probability(f64::NAN, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(acceptance_probability(1.0, 0.0, f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn tempered_density_endpoints() {
        let m = TemperedModel::new(Quadratic);
        let x = [1.5];
        assert_eq!(log_tempered_density(&m, &x, 0.0).unwrap(), -0.5 * 2.25);
        assert_eq!(m.v_evals(), 0);
        assert_eq!(log_tempered_density(&m, &x, 1.0).unwrap(), -0.5 * 2.25 - 2.25);
        assert_eq!(m.v_evals(), 1);
        assert!(log_tempered_density(&m, &x, 1.5).is_err());
        match log_tempered_density(&m, &[200.0], 0.5) {
            Err(NrstError::DivergedPotential { x, .. }) => assert_eq!(x, vec![200.0]),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn scoped_counters() {
        let m = TemperedModel::new(Quadratic);
        let a = m.scoped();
        let b = m.scoped();
        a.potential(&[1.0]);
        a.potential(&[1.0]);
        b.potential(&[1.0]);
        assert_eq!(a.local_v_evals(), 2);
        assert_eq!(b.local_v_evals(), 1);
        assert_eq!(m.v_evals(), 3);
    }

    #[test]
    fn pseudo_prior_examples() {
        let p = pseudo_prior(&[0.0, -2.0, -5.0], &[0.0, 2.0, 5.0]).unwrap();
        for pi in &p {
            assert!((pi - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = pseudo_prior(&[0.0, 0.0], &[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert_eq!(pseudo_prior(&[4.0], &[-1.0]).unwrap(), vec![1.0]);
        // no overflow for huge exponents
        let p = pseudo_prior(&[1000.0, 1000.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(pseudo_prior(&[], &[]).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::uniform(4).is_ok());
        assert!(Schedule::new(vec![0.0, 0.5, 0.5, 1.0], vec![0.0; 4], vec![1; 3]).is_err());
        assert!(Schedule::new(vec![0.0, 1.0], vec![0.0], vec![1]).is_err());
        assert!(Schedule::new(vec![0.0, 1.0], vec![0.0; 2], vec![0]).is_err());
        assert!(Schedule::new(vec![0.1, 1.0], vec![0.0; 2], vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn acceptance_factorizes(v in -50.0..50.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64,
                                 ca in -20.0..20.0f64, cb in -20.0..20.0f64) {
            let fwd = acceptance_probability(v, a, b, ca, cb).unwrap();
            let bwd = acceptance_probability(v, b, a, cb, ca).unwrap();
            let expect = (-((b - a) * v - (cb - ca)).abs()).exp();
            prop_assert!((fwd * bwd - expect).abs() < 1e-12);
        }

        #[test]
        fn acceptance_monotone_in_v(v1 in -50.0..50.0f64, dv in 0.0..10.0f64,
                                    a in 0.0..1.0f64, b in 0.0..1.0f64, dc in -5.0..5.0f64) {
            let lo = acceptance_probability(v1, a, b, 0.0, dc).unwrap();
            let hi = acceptance_probability(v1 + dv, a, b, 0.0, dc).unwrap();
            if b > a {
                prop_assert!(hi <= lo);
            } else if b < a {
                prop_assert!(hi >= lo);
            }
        }

        #[test]
        fn pseudo_prior_normalized_and_equivariant(
            pairs in proptest::collection::vec((-30.0..30.0f64, -30.0..30.0f64), 1..10),
            rot in 0usize..10,
        ) {
            let (z, c): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let p = pseudo_prior(&z, &c).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let k = rot % z.len();
            let mut zr = z.clone();
            let mut cr = c.clone();
            zr.rotate_left(k);
            cr.rotate_left(k);
            let mut pr = pseudo_prior(&zr, &cr).unwrap();
            pr.rotate_right(k);
            for (x, y) in p.iter().zip(&pr) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
