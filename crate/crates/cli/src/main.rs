//! `nrst` command-line driver: tune, run, plan, index-sim, bench.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use nrst::adapt::AffinityMode;
use nrst::bench_models::ModelSpec;
use nrst::{NrstError, Variant};

use crate::commands::{BenchArgs, PlanArgs};
use crate::config::{config_err, parse_params, thread_cap, ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "nrst",
    version,
    about = "Non-reversible simulated tempering: tuning, tour-parallel runs and execution planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark model name
    #[arg(long)]
    model: Option<String>,
    /// Model parameter as key=value (repeatable)
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Seed for the model's synthetic data
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct TuneFlags {
    /// Initial number of grid intervals
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// mean or median
    #[arg(long)]
    affinity_mode: Option<String>,
    /// Safety factor on the optimal number of levels
    #[arg(long)]
    gamma: Option<f64>,
    /// Autocorrelation target for the exploration steps
    #[arg(long)]
    kappa_bar: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct PrecisionFlags {
    /// Confidence level
    #[arg(long)]
    alpha: Option<f64>,
    /// Target CI half-width relative to the range of bounded test functions
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt grid, affinities, grid size and exploration steps; writes schedule.json and barrier.csv
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tune: TuneFlags,
    },
    /// Pilot run followed by the tours needed for the target precision; writes report.json and traces.csv
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        precision: PrecisionFlags,
        /// schedule.json produced by `tune`
        #[arg(long)]
        schedule: PathBuf,
        /// nrst or st
        #[arg(long)]
        variant: Option<String>,
        /// Barrier used to size the pilot; defaults to the schedule's estimate
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Worker-pool and cost planning from the CPU times of a pilot run; writes plan.csv
    Plan {
        #[command(flatten)]
        common: Common,
        /// report.json from `run`
        #[arg(long)]
        report: PathBuf,
        /// Number of tours to plan for; defaults to the tours in the report
        #[arg(long)]
        k_extra: Option<usize>,
        /// Comma-separated pool sizes; defaults to powers of two up to k_extra
        #[arg(long)]
        pools: Option<String>,
        #[arg(long, default_value_t = 100)]
        replications: usize,
        /// Dispatch the longest tours first instead of in sampling order
        #[arg(long)]
        longest_first: bool,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Tour effectiveness of the idealized index process: closed form against simulation
    IndexSim {
        /// Number of grid intervals
        #[arg(long = "N")]
        n: usize,
        /// Rejection probability of every interval
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 1_000_000)]
        tours: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// nrst or st; both when omitted
        #[arg(long)]
        variant: Option<String>,
        /// Directory receiving index_sim.csv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serial cost of NRST and ST runs of equal target precision on one schedule; writes bench.csv
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tune: TuneFlags,
        #[command(flatten)]
        precision: PrecisionFlags,
        /// Reuse a tuned schedule instead of tuning
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// nrst or st; both when omitted
        #[arg(long)]
        variant: Option<String>,
        /// Use the idealized index process (from --N/--rho or the schedule's rejections)
        #[arg(long)]
        ideal: bool,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
    },
}

fn parse_variant(s: &str) -> Result<Variant> {
    s.parse()
        .map_err(|_| config_err(format!("variant: expected `nrst` or `st`, got `{s}`")))
}

fn variants(s: Option<&str>) -> Result<Vec<Variant>> {
    match s {
        Some(s) => Ok(vec![parse_variant(s)?]),
        None => Ok(vec![Variant::Nrst, Variant::St]),
    }
}

/// Loads the config file and applies the shared flags. Returns the merged
/// config and whether a model was set explicitly.
fn base_config(c: &Common) -> Result<(RunConfig, bool)> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    let mut explicit_model = c.config.is_some();
    if let Some(name) = &c.model {
        cfg.model = ModelSpec::named(name);
        explicit_model = true;
    }
    if !c.params.is_empty() {
        cfg.model.params.extend(parse_params(&c.params)?);
        explicit_model = true;
    }
    if let Some(s) = c.data_seed {
        cfg.model.data_seed = Some(s);
        explicit_model = true;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.apply_thread_cap(thread_cap()?);
    Ok((cfg, explicit_model))
}

fn apply_tune(cfg: &mut RunConfig, t: &TuneFlags) -> Result<()> {
    if let Some(v) = t.levels {
        cfg.levels = v;
    }
    if let Some(v) = t.max_rounds {
        cfg.max_rounds = v;
    }
    if let Some(m) = &t.affinity_mode {
        cfg.affinity_mode = m
            .parse::<AffinityMode>()
            .map_err(|_| config_err(format!("affinity_mode: expected `mean` or `median`, got `{m}`")))?;
    }
    if let Some(v) = t.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = t.kappa_bar {
        cfg.kappa_bar = v;
    }
    Ok(())
}

fn apply_precision(cfg: &mut RunConfig, p: &PrecisionFlags) {
    if let Some(v) = p.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = p.delta {
        cfg.delta = v;
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = thread_cap()? {
        // Only fails if the global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Tune { common, tune } => {
            let (mut cfg, _) = base_config(&common)?;
            apply_tune(&mut cfg, &tune)?;
            cfg.validate()?;
            commands::tune(&cfg)?;
        }
        Command::Run {
            common,
            precision,
            schedule,
            variant,
            lambda,
        } => {
            let (mut cfg, explicit_model) = base_config(&common)?;
            apply_precision(&mut cfg, &precision);
            if let Some(v) = &variant {
                cfg.variant = parse_variant(v)?;
            }
            if let Some(l) = lambda {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(config_err("lambda: must be finite and non-negative"));
                }
            }
            cfg.validate()?;
            let model = explicit_model.then(|| cfg.model.clone());
            commands::run(&cfg, &schedule, model, lambda)?;
        }
        Command::Plan {
            common,
            report,
            k_extra,
            pools,
            replications,
            longest_first,
            bins,
        } => {
            let (cfg, _) = base_config(&common)?;
            cfg.validate()?;
            let args = PlanArgs {
                report,
                k_extra,
                pools,
                replications,
                longest_first,
                bins,
            };
            commands::plan(&cfg, &args)?;
        }
        Command::IndexSim {
            n,
            rho,
            tours,
            seed,
            variant,
            out,
        } => {
            commands::index_sim(n, rho, tours, seed, &variants(variant.as_deref())?, out.as_deref())?;
        }
        Command::Bench {
            common,
            tune,
            precision,
            schedule,
            variant,
            ideal,
            n,
            rho,
        } => {
            let (mut cfg, _) = base_config(&common)?;
            apply_tune(&mut cfg, &tune)?;
            apply_precision(&mut cfg, &precision);
            cfg.validate()?;
            let args = BenchArgs {
                schedule,
                ideal,
                n,
                rho,
                variants: variants(variant.as_deref())?,
            };
            commands::bench(&cfg, &args)?;
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<NrstError>() {
        Some(NrstError::InvalidArgument(_) | NrstError::UnknownModel { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
