use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nrst::adapt::{adapt, AdaptConfig, AffinityMode, BarrierEstimate};
use nrst::bench_models::{make_model, ModelSpec};
use nrst::planner::{cost_curves, fit_cpu_model, histogram, simulate_pool, write_plan_csv, PlanTables, TimeSource};
use nrst::runner::{pilot_then_run, write_traces_csv, IdealTours, ModelTours, RunOptions, RunReport, TourSource};
use nrst::st_kernels::{ideal_te, simulate_index_tours_par};
use nrst::stats::{estimate_te, TourStatistics};
use nrst::{IdealIndexChain, Schedule, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{config_err, parse_list, RunConfig};

/// Contents of `schedule.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub model: ModelSpec,
    pub betas: Vec<f64>,
    pub affinities: Vec<f64>,
    pub explore_steps: Vec<usize>,
    pub lambda_hat: f64,
    #[serde(default)]
    pub log_z: Vec<f64>,
    #[serde(default)]
    pub rejections_sym: Vec<f64>,
    #[serde(default)]
    pub converged: bool,
    #[serde(default)]
    pub restarted: bool,
    #[serde(default)]
    pub rounds_used: usize,
    #[serde(default)]
    pub affinity_mode: AffinityMode,
    #[serde(default)]
    pub rounds: serde_json::Value,
}

impl ScheduleFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("schedule: cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("schedule: {}: {e}", path.display())))
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.betas.clone(), self.affinities.clone(), self.explore_steps.clone())
            .map_err(|e| config_err(format!("schedule: {e}")))
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_barrier_csv(dir: &Path, barrier: &BarrierEstimate) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "barrier.csv")?);
    w.write_record(["kind", "beta", "barrier"])?;
    for (b, v) in barrier.betas.iter().zip(&barrier.values) {
        w.write_record(["knot", &b.to_string(), &v.to_string()])?;
    }
    const MESH: usize = 200;
    for k in 0..=MESH {
        let b = k as f64 / MESH as f64;
        w.write_record(["curve", &b.to_string(), &barrier.eval(b).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn tune(cfg: &RunConfig) -> Result<ScheduleFile> {
    let model = make_model(&cfg.model)?;
    let acfg = AdaptConfig {
        n_levels_initial: cfg.levels,
        max_rounds: cfg.max_rounds,
        affinity_mode: cfg.affinity_mode,
        gamma: cfg.gamma,
        kappa_bar: cfg.kappa_bar,
        ..AdaptConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let res = adapt(&model, &acfg, &mut rng)?;
    write_barrier_csv(&cfg.out, &res.barrier)?;
    let file = ScheduleFile {
        model: cfg.model.clone(),
        betas: res.schedule.betas.clone(),
        affinities: res.schedule.affinities.clone(),
        explore_steps: res.schedule.explore_steps.clone(),
        lambda_hat: res.lambda_hat,
        log_z: res.log_z.clone(),
        rejections_sym: res.rejections.sym.clone(),
        converged: res.converged,
        restarted: res.restarted,
        rounds_used: res.rounds_used,
        affinity_mode: cfg.affinity_mode,
        rounds: serde_json::to_value(&res.rounds)?,
    };
    write_json(&cfg.out, "schedule.json", &file)?;
    println!(
        "tuned {}: N = {}, lambda_hat = {:.4}, log Z(1) = {:.4}, converged = {} after {} rounds",
        cfg.model.name,
        file.betas.len() - 1,
        file.lambda_hat,
        file.log_z.last().copied().unwrap_or(0.0),
        file.converged,
        file.rounds_used
    );
    if !file.converged {
        eprintln!("warning: adaptation did not converge; the schedule is best effort");
    }
    Ok(file)
}

fn options(cfg: &RunConfig) -> RunOptions {
    RunOptions {
        alpha: cfg.alpha,
        delta: cfg.delta,
        workers: cfg.workers,
        seed: cfg.seed,
    }
}

fn print_report(rep: &RunReport) {
    println!(
        "{}: K = {} (pilot {}), TE_hat = {:.4}, serial cost = {}, parallel cost = {}",
        rep.variant,
        rep.k,
        rep.k_trial.map_or("-".to_string(), |k| k.to_string()),
        rep.te_hat,
        rep.serial_cost,
        rep.parallel_cost
    );
    for e in rep.estimates.iter().take(8) {
        println!(
            "  {:>6} = {:>10.5}  CI [{:.5}, {:.5}]",
            e.name, e.estimate, e.ci.0, e.ci.1
        );
    }
    if rep.estimates.len() > 8 {
        println!("  ... {} more in report.json", rep.estimates.len() - 8);
    }
}

pub fn run(cfg: &RunConfig, schedule_path: &Path, model: Option<ModelSpec>, lambda: Option<f64>) -> Result<RunReport> {
    let file = ScheduleFile::load(schedule_path)?;
    let schedule = file.schedule()?;
    let spec = model.unwrap_or_else(|| file.model.clone());
    let m = make_model(&spec)?;
    let lambda = lambda.unwrap_or(file.lambda_hat);
    let source = ModelTours::new(m, schedule, cfg.variant);
    let rep = pilot_then_run(&source, lambda, &options(cfg))?;
    let mut w = create(&cfg.out, "traces.csv")?;
    write_traces_csv(&rep.traces, &mut w)?;
    w.flush()?;
    write_json(&cfg.out, "report.json", &rep)?;
    print_report(&rep);
    Ok(rep)
}

pub struct PlanArgs {
    pub report: PathBuf,
    pub k_extra: Option<usize>,
    pub pools: Option<String>,
    pub replications: usize,
    pub longest_first: bool,
    pub bins: usize,
}

pub fn plan(cfg: &RunConfig, args: &PlanArgs) -> Result<()> {
    let rep = RunReport::read_json(&args.report)
        .map_err(|e| config_err(format!("report: cannot load {}: {e}", args.report.display())))?;
    let times = rep.cpu_times();
    let cpu = fit_cpu_model(&times)?;
    let k = args.k_extra.unwrap_or(rep.k);
    if k == 0 {
        return Err(config_err("k_extra: must be at least 1"));
    }
    let pools = match &args.pools {
        Some(s) => parse_list("pools", s)?,
        None => std::iter::successors(Some(1usize), |p| Some(p * 2))
            .take_while(|&p| p <= k)
            .collect(),
    };
    if args.replications == 0 {
        return Err(config_err("replications: must be at least 1"));
    }
    let source = TimeSource::Model(cpu.clone());
    let curves = cost_curves(&source, k, &pools, args.replications, args.longest_first, cfg.seed)?;
    let mut rng = nrst::runner::tour_rng(cfg.seed, 0);
    let sampled = cpu.sample_n(k, &mut rng);
    let busy = pools
        .iter()
        .map(|&p| simulate_pool(&sampled, p, args.longest_first).map(|s| (p, s)))
        .collect::<nrst::Result<Vec<_>>>()?;
    let hist = histogram(&times, args.bins);
    let mut w = create(&cfg.out, "plan.csv")?;
    write_plan_csv(
        &PlanTables {
            histogram: &hist,
            busy: &busy,
            curves: &curves,
        },
        &mut w,
    )?;
    w.flush()?;
    println!(
        "cpu model: threshold = {:.4e} s, tail shape = {:.3}, tail scale = {:.4e} s",
        cpu.threshold, cpu.tail_shape, cpu.tail_scale
    );
    println!(
        "{:>6} {:>14} {:>14} {:>14}",
        "pool", "makespan", "hpc_cost", "cloud_cost"
    );
    for c in &curves {
        println!(
            "{:>6} {:>14.4e} {:>14.4e} {:>14.4e}",
            c.pool_size, c.makespan.mean, c.hpc_cost.mean, c.cloud_cost.mean
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSimRow {
    pub variant: Variant,
    pub n: usize,
    pub rho: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub abs_err: f64,
}

pub fn index_sim(
    n: usize,
    rho: f64,
    tours: usize,
    seed: u64,
    variants: &[Variant],
    out: Option<&Path>,
) -> Result<Vec<IndexSimRow>> {
    if n == 0 {
        return Err(config_err("N: must be at least 1"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(config_err("rho: must lie in [0, 1)"));
    }
    if tours == 0 {
        return Err(config_err("tours: must be at least 1"));
    }
    let chain = IdealIndexChain::equi_rejection(n, rho)?;
    let mut rows = Vec::new();
    for &v in variants {
        let closed_form = ideal_te(&chain, v)?;
        let sims = simulate_index_tours_par(&chain, v, tours, seed);
        let monte_carlo = estimate_te(&TourStatistics::from_index_tours(&sims).visits_top)?;
        rows.push(IndexSimRow {
            variant: v,
            n,
            rho,
            closed_form,
            monte_carlo,
            abs_err: (closed_form - monte_carlo).abs(),
        });
    }
    println!("variant,N,rho,closed_form,monte_carlo,abs_err");
    for r in &rows {
        println!(
            "{},{},{},{:.6},{:.6},{:.6}",
            r.variant, r.n, r.rho, r.closed_form, r.monte_carlo, r.abs_err
        );
    }
    if let Some(dir) = out {
        let mut w = csv::Writer::from_writer(create(dir, "index_sim.csv")?);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub variant: Variant,
    pub k: usize,
    pub te_hat: f64,
    pub serial_cost: u64,
    pub parallel_cost: u64,
}

pub struct BenchArgs {
    pub schedule: Option<PathBuf>,
    pub ideal: bool,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub variants: Vec<Variant>,
}

/// Runs every variant on one schedule with its own tour count
/// `K_min(α, δ, TÊ)`, so all runs target the same precision.
pub fn bench(cfg: &RunConfig, args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let opts = options(cfg);
    let mut rows = Vec::new();
    let mut push = |name: &str, rep: RunReport| {
        rows.push(BenchRow {
            model: name.to_string(),
            variant: rep.variant,
            k: rep.k,
            te_hat: rep.te_hat,
            serial_cost: rep.serial_cost,
            parallel_cost: rep.parallel_cost,
        });
    };
    if args.ideal {
        let chain = match (args.n, args.rho, &args.schedule) {
            (Some(n), Some(rho), _) => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(config_err("rho: must lie in [0, 1)"));
                }
                IdealIndexChain::equi_rejection(n, rho)?
            }
            (None, None, Some(path)) => {
                let file = ScheduleFile::load(path)?;
                if file.rejections_sym.is_empty() {
                    return Err(config_err("schedule: no rejection estimates; re-run tune"));
                }
                IdealIndexChain::symmetric(file.rejections_sym)?
            }
            _ => return Err(config_err("ideal: needs either --N and --rho or --schedule")),
        };
        let lambda: f64 = chain.symmetrized().iter().sum();
        for &v in &args.variants {
            let rep = pilot_then_run(&IdealTours::new(chain.clone(), v), lambda, &opts)?;
            push("ideal", rep);
        }
    } else {
        let file = match &args.schedule {
            Some(p) => ScheduleFile::load(p)?,
            None => tune(cfg)?,
        };
        let schedule = file.schedule()?;
        let model = make_model(&file.model)?;
        for &v in &args.variants {
            let src = ModelTours::new(model.clone(), schedule.clone(), v);
            let rep = pilot_then_run(&src as &dyn TourSource, file.lambda_hat, &opts)?;
            push(&file.model.name, rep);
        }
    }
    println!("model,variant,k,te_hat,serial_cost,parallel_cost");
    for r in &rows {
        println!(
            "{},{},{},{:.5},{},{}",
            r.model, r.variant, r.k, r.te_hat, r.serial_cost, r.parallel_cost
        );
    }
    let mut w = csv::Writer::from_writer(create(&cfg.out, "bench.csv")?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
