//! JSON run configuration, overridable from the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nrst::adapt::AffinityMode;
use nrst::bench_models::ModelSpec;
use nrst::Variant;
use serde::{Deserialize, Serialize};

/// An invalid or missing setting. Reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub affinity_mode: AffinityMode,
    pub gamma: f64,
    pub kappa_bar: f64,
    pub alpha: f64,
    pub delta: f64,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub levels: usize,
    pub max_rounds: usize,
    pub variant: Variant,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::named("toy_gaussian"),
            affinity_mode: AffinityMode::Mean,
            gamma: 2.0,
            kappa_bar: 0.95,
            alpha: 0.95,
            delta: 0.5,
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            out: PathBuf::from("."),
            levels: 8,
            max_rounds: 14,
            variant: Variant::Nrst,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("config: cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("config: {}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config_err(msg.to_string())) };
        check(self.gamma >= 1.0 && self.gamma.is_finite(), "gamma: must be at least 1")?;
        check(
            self.kappa_bar > 0.0 && self.kappa_bar < 1.0,
            "kappa_bar: must lie in (0, 1)",
        )?;
        check(self.alpha > 0.0 && self.alpha < 1.0, "alpha: must lie in (0, 1)")?;
        check(self.delta > 0.0 && self.delta.is_finite(), "delta: must be positive")?;
        check(self.workers >= 1, "workers: must be at least 1")?;
        check(self.levels >= 1, "levels: must be at least 1")?;
        check(self.max_rounds >= 1, "max_rounds: must be at least 1")?;
        check(!self.model.name.is_empty(), "model: name must not be empty")?;
        Ok(())
    }

    /// Caps the worker count by `NRST_THREADS` when set.
    pub fn apply_thread_cap(&mut self, cap: Option<usize>) {
        if let Some(cap) = cap {
            self.workers = self.workers.min(cap);
        }
    }
}

/// Parses `NRST_THREADS`.
pub fn thread_cap() -> anyhow::Result<Option<usize>> {
    match std::env::var("NRST_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(config_err(format!(
                "NRST_THREADS: expected a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `key=value` model parameters.
pub fn parse_params(items: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("param: expected key=value, got `{item}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| config_err(format!("param: `{k}` needs a numeric value, got `{v}`")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

/// Parses a comma-separated list of positive integers.
pub fn parse_list(field: &str, s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(config_err(format!("{field}: expected positive integers, got `{t}`"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig {
            gamma: 0.5,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().starts_with("gamma"));
        c.gamma = 2.0;
        c.kappa_bar = 1.0;
        assert!(c.validate().unwrap_err().to_string().starts_with("kappa_bar"));
        c.kappa_bar = 0.9;
        c.delta = 0.0;
        assert!(c.validate().unwrap_err().to_string().starts_with("delta"));
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"model": {"name": "banana"}, "alpha": 0.9}"#).unwrap();
        assert_eq!(c.model.name, "banana");
        assert_eq!(c.alpha, 0.9);
        assert_eq!(c.gamma, 2.0);
        assert!(serde_json::from_str::<RunConfig>(r#"{"gama": 2}"#).is_err());
    }

    #[test]
    fn params_and_lists() {
        let p = parse_params(&["d=4".into(), "m = 1.5".into()]).unwrap();
        assert_eq!(p["d"], 4.0);
        assert_eq!(p["m"], 1.5);
        assert!(parse_params(&["d".into()]).is_err());
        assert_eq!(parse_list("pools", "1,2, 8").unwrap(), vec![1, 2, 8]);
        assert!(parse_list("pools", "1,0").is_err());
    }

    #[test]
    fn thread_cap_lowers_workers() {
        let mut c = RunConfig {
            workers: 8,
            ..Default::default()
        };
        c.apply_thread_cap(Some(3));
        assert_eq!(c.workers, 3);
        c.apply_thread_cap(None);
        assert_eq!(c.workers, 3);
    }
}
