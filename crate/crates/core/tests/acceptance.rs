//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nrst::adapt::{
    adapt, optimal_grid_size, optimal_grid_size_raw, run_nrpt, stepping_stone_logz, AdaptConfig, AdaptResult,
};
use nrst::bench_models::{make_model, ModelSpec};
use nrst::planner::{cost_curves, replicate_makespans, simulate_pool, TimeSource};
use nrst::runner::{pilot_then_run, run_parallel, write_traces_csv, ModelTours, RunOptions};
use nrst::st_kernels::{ideal_te, index_tour_with, simulate_index_tours_par, IdealIndexChain, Variant};
use nrst::stats::{estimate_sigma2, estimate_te, min_tours, min_tours_raw, TourStatistics};
use nrst::{Schedule, TemperedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

const CONFIGS: [(usize, f64); 3] = [(1, 0.5), (6, 0.2), (10, 0.05)];

fn toy() -> TemperedModel {
    make_model(&ModelSpec::named("toy_gaussian")).unwrap()
}

/// The toy Gaussian tuned once with default settings.
fn tuned_toy() -> &'static AdaptResult {
    static TUNED: OnceLock<AdaptResult> = OnceLock::new();
    TUNED.get_or_init(|| adapt(&toy(), &AdaptConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap())
}

/// `log 𝒵(β)` of the toy Gaussian (d = 3, m = 2, σ₀ = 2) by composite
/// Simpson quadrature of one coordinate.
fn toy_log_z(beta: f64) -> f64 {
    let (d, m, s0) = (3.0, 2.0, 2.0);
    let (a, b, n) = (-40.0, 40.0, 40_000usize);
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let log_ref = -0.5 * (x / s0) * (x / s0) - (s0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let v = 0.5 * (x - m) * (x - m) + 0.5 * (2.0 * std::f64::consts::PI).ln();
        (log_ref - beta * v).exp()
    };
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    d * (sum * h / 3.0).ln()
}

#[test]
fn c01_te_closed_forms() {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &(n, rho)) in CONFIGS.iter().enumerate() {
        let chain = IdealIndexChain::equi_rejection(n, rho).unwrap();
        let mut te = [0.0; 2];
        for (j, v) in [Variant::Nrst, Variant::St].into_iter().enumerate() {
            let tours = simulate_index_tours_par(&chain, v, 1_000_000, 100 + 10 * k as u64 + j as u64);
            let mc = estimate_te(&TourStatistics::from_index_tours(&tours).visits_top).unwrap();
            let exact = ideal_te(&chain, v).unwrap();
            pass &= (mc - exact).abs() <= 0.01;
            te[j] = mc;
            detail.push(format!("{v}(N={n},ρ={rho}) mc {mc:.4} exact {exact:.4}"));
        }
        pass &= te[0] > te[1];
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    report(1, pass, &format!("{} [{secs:.1}s]", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c02_regeneration_identities() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &(n, rho)) in CONFIGS.iter().enumerate() {
        let chain = IdealIndexChain::equi_rejection(n, rho).unwrap();
        let tours = simulate_index_tours_par(&chain, Variant::Nrst, 100_000, 200 + k as u64);
        let m = tours.len() as f64;
        let mean_sd = |x: &dyn Fn(usize) -> f64| {
            let mean = (0..tours.len()).map(x).sum::<f64>() / m;
            let var = (0..tours.len()).map(|i| (x(i) - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (mean, (var / m).sqrt())
        };
        let (tau, tau_se) = mean_sd(&|i| tours[i].tau as f64);
        let (v, v_se) = mean_sd(&|i| tours[i].visits_top as f64);
        let tau_ok = (tau - 2.0 * (n as f64 + 1.0)).abs() <= 3.0 * tau_se;
        let v_ok = (v - 2.0).abs() <= 3.0 * v_se;
        pass &= tau_ok && v_ok;
        detail.push(format!(
            "N={n}: E[τ] {tau:.3}±{tau_se:.3} (2(N+1)={}), E[v] {v:.4}±{v_se:.4}",
            2 * (n + 1)
        ));
    }
    report(2, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c03_te_infinity_limit() {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &lambda) in [0.5, 1.0, 2.0].iter().enumerate() {
        let limit = 1.0 / (1.0 + 2.0 * lambda);
        let mut gap = [0.0; 2];
        for (j, &n) in [16usize, 64].iter().enumerate() {
            let chain = IdealIndexChain::equi_rejection(n, lambda / n as f64).unwrap();
            let tours = simulate_index_tours_par(&chain, Variant::Nrst, 1_000_000, 300 + 10 * k as u64 + j as u64);
            let te = estimate_te(&TourStatistics::from_index_tours(&tours).visits_top).unwrap();
            gap[j] = (te - limit).abs();
            detail.push(format!("Λ={lambda} N={n}: TE {te:.4}"));
        }
        pass &= gap[1] <= 0.1 * limit && gap[0] > gap[1];
        detail.push(format!("limit {limit:.4}"));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(3, pass, &format!("{} [{secs:.1}s]", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c04_stepping_stone_accuracy() {
    let t = Instant::now();
    let model = toy();
    let cfg = AdaptConfig {
        n_levels_initial: 8,
        allow_resize: false,
        ..AdaptConfig::default()
    };
    let tuned = adapt(&model, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let betas = tuned.schedule.betas.clone();
    let n = betas.len() - 1;
    let schedule = Schedule::new(betas.clone(), vec![0.0; n + 1], vec![1; n]).unwrap();
    let data = run_nrpt(&model, &schedule, 10_000, cfg.slice, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let log_z = stepping_stone_logz(&data, &betas).unwrap();
    let truth = toy_log_z(1.0);
    let err = (log_z[n] - truth).abs();
    let secs = t.elapsed().as_secs_f64();
    let pass = n == 8 && err <= 0.05 && secs < 120.0;
    report(
        4,
        pass,
        &format!(
            "N={n}, log Ẑ(1) {:.4}, quadrature {truth:.4}, |err| {err:.4} [{secs:.1}s]",
            log_z[n]
        ),
    );
    assert!(pass);
}

#[test]
fn c05_equi_rejection_after_adaptation() {
    let t = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["toy_gaussian", "banana"] {
        let model = make_model(&ModelSpec::named(name)).unwrap();
        let cfg = AdaptConfig {
            max_rounds: 12,
            ..AdaptConfig::default()
        };
        let res = adapt(&model, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = &res.rejections;
        let n = r.sym.len() as f64;
        let mean = r.sym.iter().sum::<f64>() / n;
        let std = (r.sym.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let asym = r.up.iter().zip(&r.down).map(|(u, d)| (u - d).abs()).sum::<f64>() / n / mean;
        let ok = res.converged && res.rounds_used <= 12 && std / mean < 0.1 && asym < 0.05;
        pass &= ok;
        detail.push(format!(
            "{name}: converged {} in {} rounds, N={}, Λ̂ {:.3}, std/mean(r) {:.3}, asym {:.3}",
            res.converged,
            res.rounds_used,
            r.sym.len(),
            res.lambda_hat,
            std / mean,
            asym
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    report(5, pass, &format!("{} [{secs:.1}s]", detail.join("; ")));
    assert!(pass);
}

#[test]
fn c06_posterior_mean_coverage() {
    let t = Instant::now();
    let tuned = tuned_toy();
    let truth = 1.6;
    let source = ModelTours::new(toy(), tuned.schedule.clone(), Variant::Nrst);
    let mut covered = 0;
    for seed in 0..100u64 {
        let opts = RunOptions {
            seed: 1000 + seed,
            workers: 4,
            ..RunOptions::default()
        };
        let rep = pilot_then_run(&source, tuned.lambda_hat, &opts).unwrap();
        let (lo, hi) = rep.estimates[0].ci;
        if lo <= truth && truth <= hi {
            covered += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = covered >= 90 && secs < 900.0;
    report(
        6,
        pass,
        &format!("{covered}/100 intervals cover μ(1) = 1.6 [{secs:.1}s]"),
    );
    assert!(pass);
}

#[test]
fn c07_optimal_grid_size() {
    let mut pass = true;
    let mut detail = Vec::new();
    for lambda in [0.5, 1.0, 3.0] {
        let cost = |n: f64| 2.0 * (n + 1.0) * (n * (1.0 + 2.0 * lambda) - lambda) / (n - lambda);
        let mut best = (f64::INFINITY, 0.0);
        let mut k = 1u64;
        loop {
            let n = lambda + k as f64 * 1e-4;
            if n > 100.0 {
                break;
            }
            let c = cost(n);
            if c < best.0 {
                best = (c, n);
            }
            k += 1;
        }
        let raw = optimal_grid_size_raw(lambda);
        let ok = (raw - best.1).abs() <= 1e-3
            && raw > 2.0 * lambda
            && raw < (1.0 + 2f64.sqrt()) * lambda
            && optimal_grid_size(lambda, 1.0).unwrap() == (raw.ceil() as usize).max(2);
        pass &= ok;
        detail.push(format!("Λ={lambda}: N* {raw:.5}, brute force {:.4}", best.1));
    }
    report(7, pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c08_min_tours() {
    let a = min_tours(0.95, 0.5, 1.0).unwrap();
    let b = min_tours(0.95, 0.5, 0.25).unwrap();
    let mut monotone = true;
    for i in 0..100 {
        let s = i as f64 / 99.0;
        let alpha = 0.5 + 0.49 * s;
        let delta = 0.05 + 0.95 * s;
        let te = 0.01 + 0.99 * s;
        let next = (i + 1) as f64 / 99.0;
        // Non-increasing in TE and δ, non-decreasing in α.
        monotone &= min_tours(0.95, 0.5, te).unwrap() >= min_tours(0.95, 0.5, 0.01 + 0.99 * next.min(1.0)).unwrap();
        monotone &= min_tours(0.95, delta, 0.5).unwrap() >= min_tours(0.95, 0.05 + 0.95 * next.min(1.0), 0.5).unwrap();
        monotone &= min_tours(alpha, 0.5, 0.5).unwrap() <= min_tours(0.5 + 0.49 * next.min(1.0), 0.5, 0.5).unwrap();
        monotone &= min_tours(alpha, delta, te).unwrap() as f64 >= min_tours_raw(alpha, delta, te);
    }
    let pass = a == 62 && b == 246 && monotone;
    report(
        8,
        pass,
        &format!("K(0.95,0.5,1) = {a}, K(0.95,0.5,0.25) = {b}, monotone over sweep: {monotone}"),
    );
    assert!(pass);
}

#[test]
fn c09_planner_invariants() {
    let hand = simulate_pool(&[4.0, 3.0, 2.0, 1.0], 2, false).unwrap();
    let mut pass = hand.makespan == 5.0;
    let pools = [1usize, 2, 3, 5, 8, 13, 40, 100];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let times: Vec<f64> = (0..60).map(|_| rng.random::<f64>().powi(3) * 10.0 + 0.01).collect();
    let src = TimeSource::Explicit(times.clone());
    let (spans, totals) = replicate_makespans(&src, times.len(), &pools, 1, false, 0).unwrap();
    let max = times.iter().copied().fold(0.0, f64::max);
    for (j, &p) in pools.iter().enumerate() {
        pass &= spans[0][j] >= max.max(totals[0] / p as f64) - 1e-12;
        if j > 0 {
            pass &= spans[0][j] <= spans[0][j - 1];
        }
    }
    let model = nrst::planner::fit_cpu_model(&times).unwrap();
    let curves = cost_curves(&TimeSource::Model(model), 200, &pools, 20, false, 1).unwrap();
    for c in &curves {
        pass &= c.cloud_cost == curves[0].cloud_cost;
    }
    let explicit = cost_curves(
        &TimeSource::Explicit(vec![4.0, 3.0, 2.0, 1.0]),
        4,
        &[1, 2, 4],
        1,
        false,
        0,
    )
    .unwrap();
    pass &= explicit.iter().all(|c| c.cloud_cost.mean == 10.0);
    report(
        9,
        pass,
        &format!(
            "hand example makespan {}; monotone, bounded and cloud-invariant over {} pool sizes",
            hand.makespan,
            pools.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c10_determinism_across_workers() {
    let t = Instant::now();
    let tuned = tuned_toy();
    let source = ModelTours::new(toy(), tuned.schedule.clone(), Variant::Nrst);
    let mut csvs = Vec::new();
    for workers in [1usize, 4, 8] {
        let opts = RunOptions {
            seed: 77,
            workers,
            ..RunOptions::default()
        };
        let rep = run_parallel(&source, 0.25, &opts).unwrap();
        let mut buf = Vec::new();
        write_traces_csv(&rep.traces, &mut buf).unwrap();
        csvs.push(buf);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = csvs[0] == csvs[1] && csvs[0] == csvs[2] && secs < 60.0;
    report(
        10,
        pass,
        &format!(
            "traces.csv identical for workers 1/4/8 ({} bytes) [{secs:.1}s]",
            csvs[0].len()
        ),
    );
    assert!(pass);
}

#[test]
fn c11_nrst_vs_st_serial_cost() {
    let t = Instant::now();
    let tuned = tuned_toy();
    let nrst_src = ModelTours::new(toy(), tuned.schedule.clone(), Variant::Nrst);
    let st_src = ModelTours::new(toy(), tuned.schedule.clone(), Variant::St);
    let mut wins = 0;
    let (mut cn, mut cs) = (0u64, 0u64);
    for seed in 0..30u64 {
        let opts = RunOptions {
            seed: 5000 + seed,
            workers: 4,
            ..RunOptions::default()
        };
        let a = pilot_then_run(&nrst_src, tuned.lambda_hat, &opts).unwrap();
        let b = pilot_then_run(&st_src, tuned.lambda_hat, &opts).unwrap();
        cn += a.serial_cost;
        cs += b.serial_cost;
        if b.serial_cost > a.serial_cost {
            wins += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = wins >= 25 && secs < 1200.0;
    report(
        11,
        pass,
        &format!(
            "ST costlier in {wins}/30 replicates; mean serial cost NRST {:.0}, ST {:.0} [{secs:.1}s]",
            cn as f64 / 30.0,
            cs as f64 / 30.0
        ),
    );
    assert!(pass);
}

#[test]
fn c12_variance_bound() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &(n, rho)) in CONFIGS.iter().enumerate() {
        let chain = IdealIndexChain::equi_rejection(n, rho).unwrap();
        for variant in [Variant::Nrst, Variant::St] {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + k as u64);
            let mut stats = TourStatistics::default();
            for _ in 0..100_000 {
                let mut sums = [0.0; 3];
                let (tour, _) = index_tour_with(&chain, variant, &mut rng, |rng, ordinal, dir| {
                    sums[0] += f64::from(dir);
                    sums[1] += if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sums[2] += if ordinal % 2 == 0 { 1.0 } else { -1.0 };
                    0.0
                });
                stats.push(tour.tau, tour.visits_top, sums.to_vec());
            }
            let te = estimate_te(&stats.visits_top).unwrap();
            let bound = 4.0 / te * 1.05;
            let worst = (0..3).map(|h| estimate_sigma2(&stats, h).unwrap()).fold(0.0, f64::max);
            pass &= worst <= bound;
            detail.push(format!("{variant}(N={n}): max σ̂² {worst:.2} ≤ {bound:.2}"));
        }
    }
    report(12, pass, &detail.join("; "));
    assert!(pass);
}
