//! Tour-parallel regenerative execution.
//!
//! Tour `k` draws its randomness from a ChaCha8 stream keyed by `(seed, k)`
//! and results are aggregated by tour index, so a run is reproducible for
//! any number of workers.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NrstError, Result};
use crate::model::{Schedule, TemperedModel};
use crate::planner::te_infinity;
use crate::st_kernels::{
    run_tour, Explorers, IdealIndexChain, StepRecord, TestFn, TourTrace, Variant, DEFAULT_MAX_STEPS,
};
use crate::stats::{diagnostics, estimate_te, min_tours, Estimate, TourStatistics};

/// Anything that can produce independent tours on demand.
pub trait TourSource: Sync {
    fn variant(&self) -> Variant;
    fn test_names(&self) -> Vec<String>;
    fn tour(&self, rng: &mut dyn RngCore) -> Result<TourTrace>;
}

/// Tours of the full sampler on a tempered model.
pub struct ModelTours {
    pub model: TemperedModel,
    pub schedule: Schedule,
    pub variant: Variant,
    pub explorers: Explorers,
    pub test_fns: Vec<(String, TestFn)>,
    pub max_steps: usize,
}

impl ModelTours {
    /// Slice-sampling tours with the coordinate projections as test
    /// functions.
    pub fn new(model: TemperedModel, schedule: Schedule, variant: Variant) -> Self {
        let test_fns = coordinate_test_fns(model.dim());
        Self {
            model,
            schedule,
            variant,
            explorers: Explorers::default(),
            test_fns,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_explorers(mut self, explorers: Explorers) -> Self {
        self.explorers = explorers;
        self
    }

    pub fn with_test_fns(mut self, test_fns: Vec<(String, TestFn)>) -> Self {
        self.test_fns = test_fns;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }
}

/// `x ↦ x_k` for every coordinate, named `x1, x2, ...`.
pub fn coordinate_test_fns(dim: usize) -> Vec<(String, TestFn)> {
    (0..dim)
        .map(|k| {
            let f: TestFn = Arc::new(move |x: &[f64]| x[k]);
            (format!("x{}", k + 1), f)
        })
        .collect()
}

impl TourSource for ModelTours {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn test_names(&self) -> Vec<String> {
        self.test_fns.iter().map(|(n, _)| n.clone()).collect()
    }

    fn tour(&self, rng: &mut dyn RngCore) -> Result<TourTrace> {
        let fns: Vec<TestFn> = self.test_fns.iter().map(|(_, f)| f.clone()).collect();
        run_tour(
            &self.model,
            &self.schedule,
            self.variant,
            &self.explorers,
            &fns,
            self.max_steps,
            rng,
        )
    }
}

/// Tours of the idealized index process. Recorded potentials are zero and
/// the single test function is the indicator of an upward top-level visit.
pub struct IdealTours {
    pub chain: IdealIndexChain,
    pub variant: Variant,
    pub max_steps: usize,
}

impl IdealTours {
    pub fn new(chain: IdealIndexChain, variant: Variant) -> Self {
        Self {
            chain,
            variant,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl TourSource for IdealTours {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn test_names(&self) -> Vec<String> {
        vec!["up".into()]
    }

    fn tour(&self, rng: &mut dyn RngCore) -> Result<TourTrace> {
        let top = self.chain.n_levels();
        let start = Instant::now();
        let (mut level, mut dir) = (0usize, 1i8);
        let mut h_sum = 0.0;
        let rec = |level: usize, dir: i8, h_sum: &mut f64| {
            let h = if level == top {
                let up = f64::from(u8::from(dir == 1));
                *h_sum += up;
                vec![up]
            } else {
                Vec::new()
            };
            StepRecord {
                level,
                direction: dir,
                v: 0.0,
                h,
            }
        };
        let mut steps = vec![rec(level, dir, &mut h_sum)];
        let mut done = false;
        for _ in 0..self.max_steps {
            if self.variant == Variant::St {
                dir = if rng.random::<bool>() { 1 } else { -1 };
            }
            let rej = self.chain.rejection(level, dir);
            if rej < 1.0 && rng.random::<f64>() >= rej {
                level = (level as i64 + dir as i64) as usize;
            } else if self.variant == Variant::Nrst {
                dir = -dir;
            }
            steps.push(rec(level, dir, &mut h_sum));
            done = match self.variant {
                Variant::Nrst => level == 0 && dir == -1,
                Variant::St => level == 0,
            };
            if done {
                break;
            }
        }
        let visits_top = steps.iter().filter(|s| s.level == top).count();
        let tau = match self.variant {
            Variant::Nrst => steps.len(),
            Variant::St => steps.len() - 1,
        };
        let trace = TourTrace {
            variant: self.variant,
            steps,
            tau,
            visits_top,
            h_sums: vec![h_sum],
            v_evals: 0,
            cpu_seconds: start.elapsed().as_secs_f64(),
        };
        if done {
            Ok(trace)
        } else {
            Err(NrstError::TourOverrun {
                tour: 0,
                max_steps: self.max_steps,
                partial: Box::new(trace),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourSummary {
    pub index: usize,
    pub tau: usize,
    pub visits_top: usize,
    pub v_evals: u64,
    pub cpu_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub alpha: f64,
    pub delta: f64,
    /// Number of tours executed.
    pub k: usize,
    /// TE value used to size the run.
    pub te_input: f64,
    /// TE estimated from the executed tours.
    pub te_hat: f64,
    /// Tours in the pilot phase, when the run had one.
    pub k_trial: Option<usize>,
    pub te_pilot: Option<f64>,
    pub serial_cost: u64,
    pub parallel_cost: u64,
    pub estimates: Vec<Estimate>,
    pub tours: Vec<TourSummary>,
    pub wall_seconds: f64,
    /// Full per-step traces; written to CSV, not to the JSON report.
    #[serde(skip)]
    pub traces: Vec<TourTrace>,
}

impl RunReport {
    pub fn cpu_times(&self) -> Vec<f64> {
        self.tours.iter().map(|t| t.cpu_seconds).collect()
    }

    pub fn statistics(&self) -> TourStatistics {
        TourStatistics::from_traces(&self.traces)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Writes one row per lifted state: `tour_id, step, level, direction, v`.
pub fn write_traces_csv<W: Write>(traces: &[TourTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tour_id", "step", "level", "direction", "v"])?;
    for (k, t) in traces.iter().enumerate() {
        for (s, r) in t.steps.iter().enumerate() {
            w.write_record(&[
                k.to_string(),
                s.to_string(),
                r.level.to_string(),
                r.direction.to_string(),
                format!("{:e}", r.v),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The rng of tour `index` under master seed `seed`.
pub fn tour_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(invalid("workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))
}

/// Runs tours `range` on `workers` threads, ordered by tour index. The
/// first failing tour (by index) aborts the run.
pub fn run_tours<S: TourSource + ?Sized>(
    source: &S,
    range: std::ops::Range<usize>,
    workers: usize,
    seed: u64,
) -> Result<Vec<TourTrace>> {
    let results: Vec<Result<TourTrace>> = pool(workers)?.install(|| {
        range
            .into_par_iter()
            .map(|k| {
                source.tour(&mut tour_rng(seed, k)).map_err(|e| match e {
                    NrstError::TourOverrun { max_steps, partial, .. } => NrstError::TourOverrun {
                        tour: k,
                        max_steps,
                        partial,
                    },
                    other => other,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub alpha: f64,
    pub delta: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            delta: 0.5,
            workers: 1,
            seed: 0,
        }
    }
}

fn report<S: TourSource + ?Sized>(
    source: &S,
    opts: &RunOptions,
    te_input: f64,
    traces: Vec<TourTrace>,
    started: Instant,
) -> Result<RunReport> {
    let stats = TourStatistics::from_traces(&traces);
    let diag = diagnostics(&stats, &source.test_names(), opts.alpha)?;
    let tours: Vec<TourSummary> = traces
        .iter()
        .enumerate()
        .map(|(index, t)| TourSummary {
            index,
            tau: t.tau,
            visits_top: t.visits_top,
            v_evals: t.v_evals,
            cpu_seconds: t.cpu_seconds,
        })
        .collect();
    Ok(RunReport {
        variant: source.variant(),
        seed: opts.seed,
        alpha: opts.alpha,
        delta: opts.delta,
        k: traces.len(),
        te_input,
        te_hat: diag.te_hat,
        k_trial: None,
        te_pilot: None,
        serial_cost: tours.iter().map(|t| t.v_evals).sum(),
        parallel_cost: tours.iter().map(|t| t.v_evals).max().unwrap_or(0),
        estimates: diag.estimates,
        tours,
        wall_seconds: started.elapsed().as_secs_f64(),
        traces,
    })
}

/// Runs `min_tours(alpha, delta, te_hat)` tours in parallel.
pub fn run_parallel<S: TourSource + ?Sized>(source: &S, te_hat: f64, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let k = min_tours(opts.alpha, opts.delta, te_hat)?;
    let traces = run_tours(source, 0..k, opts.workers, opts.seed)?;
    report(source, opts, te_hat, traces, started)
}

/// Two-phase run: a pilot sized by `1/(1 + 2Λ̂)`, then the extra tours
/// required by the TE measured on the pilot.
pub fn pilot_then_run<S: TourSource + ?Sized>(source: &S, lambda_hat: f64, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let te_inf = te_infinity(lambda_hat)?;
    let k_trial = min_tours(opts.alpha, opts.delta, te_inf)?;
    let mut traces = run_tours(source, 0..k_trial, opts.workers, opts.seed)?;
    let visits: Vec<usize> = traces.iter().map(|t| t.visits_top).collect();
    let te_pilot = estimate_te(&visits)?;
    let k = min_tours(opts.alpha, opts.delta, te_pilot)?;
    if k > k_trial {
        traces.extend(run_tours(source, k_trial..k, opts.workers, opts.seed)?);
    }
    let mut rep = report(source, opts, te_inf, traces, started)?;
    rep.k_trial = Some(k_trial);
    rep.te_pilot = Some(te_pilot);
    Ok(rep)
}
