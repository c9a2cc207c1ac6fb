//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Arguments select criteria by name. The
//! recovery and corruption criteria fit 30 full-size models and take a few
//! hours on one core.

use std::time::Instant;

use glass::config::RunConfig;
use glass::io::tables::{self, SensitivityRow};
use glass::pipeline;
use glass_core::eval::{bci_utility, AccuracyCurve};
use glass_core::grad::{check_gradient, GradConfig};
use glass_core::ingest::{window_samples, Endpoint};
use glass_core::math::{log_sum_exp, softmax_in_place};
use glass_core::model::{project_to_sphere, soft_threshold, Hyperparams, Orientation, TimingConfig, STIMULI};
use glass_core::predict::{fuse_halfsequences, PredictiveDist};
use glass_core::rng;
use glass_core::simulate::{toy_dataset, RecoveryMetrics};
use glass_core::variational::VariationalParams;
use rand::RngExt;
use rayon::prelude::*;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

fn median(values: &[f64]) -> f64 {
    glass_core::math::median(values)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn toy_xi(channels: usize, samples: usize, seed: u64) -> VariationalParams {
    let mut rng = rng::stream(seed, 99);
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    VariationalParams {
        beta_mean: (0..samples).map(|_| u(-1.0, 1.0)).collect(),
        beta_rawscale: (0..samples).map(|_| u(-2.0, 0.0)).collect(),
        sigma_mean: u(-1.0, 0.5),
        sigma_rawscale: u(-2.0, -0.5),
        delta_logit: (0..channels).map(|_| u(-1.5, 1.5)).collect(),
        alpha_mean: (0..channels).map(|_| u(-1.0, 1.0)).collect(),
        alpha_rawscale: (0..channels).map(|_| u(-2.0, -0.5)).collect(),
    }
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    let mut failed = None;
    for case in 0..20u64 {
        let mut rng = rng::stream(rng::derive(case, 0xac), 0);
        let e = rng.random_range(1..=4);
        let m = rng.random_range(1..=8);
        let n = rng.random_range(2..=12);
        let tau = if case % 2 == 0 { 0.0 } else { 0.3 };
        let data = toy_dataset(e, m, n, case).unwrap();
        let xi = toy_xi(e, m, case);
        let hyper = Hyperparams::default().with_tau(tau);
        let cfg = GradConfig {
            mc_samples: 3,
            seed: 1000 + case,
            ..GradConfig::default()
        };
        match check_gradient(&xi, &data, &hyper, &cfg, 1e-5) {
            Ok(check) => {
                worst = worst.max(check.max_rel_error);
                kinks += check.kink_coordinates.len();
            }
            Err(err) => failed = Some(format!("case {case}: {err}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_none() && worst <= 1e-4 && secs < 30.0;
    outcome(
        "gradient correctness",
        pass,
        format!(
            "20 instances, max relative error {worst:.2e} (<= 1e-4), {kinks} kink coordinates excluded, {secs:.1}s (< 30s){}",
            failed.map_or(String::new(), |f| format!(", error {f}"))
        ),
    )
}

fn dist(probs: [f64; STIMULI]) -> PredictiveDist {
    PredictiveDist {
        probs,
        ess: 1.0,
        degenerate: false,
        orientation: Orientation::Row,
    }
}

fn invariants() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let mut rng = rng::stream(42, 0);
    for _ in 0..200 {
        let v: Vec<f64> = (0..STIMULI).map(|_| rng.random_range(-30.0..30.0)).collect();
        let mut p = v.clone();
        softmax_in_place(&mut p);
        check("softmax sums to one", (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shift = rng.random_range(-500.0..500.0);
        let mut q: Vec<f64> = v.iter().map(|x| x + shift).collect();
        softmax_in_place(&mut q);
        check("softmax translation", p.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12));
        check(
            "log-sum-exp translation",
            (log_sum_exp(&v) + shift - log_sum_exp(&v.iter().map(|x| x + shift).collect::<Vec<_>>())).abs() <= 1e-9,
        );

        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = rng.random_range(0.01..100.0);
        let pa = project_to_sphere(&a).unwrap();
        let pc = project_to_sphere(&a.iter().map(|x| c * x).collect::<Vec<_>>()).unwrap();
        check("projection scale", pa.iter().zip(&pc).all(|(x, y)| (x - y).abs() <= 1e-12));
        check("projection norm", (glass_core::math::norm2(&pa) - 1.0).abs() <= 1e-12);

        let (x, y, tau) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0));
        let (sx, sy) = (soft_threshold(x, tau), soft_threshold(y, tau));
        check("soft-threshold contraction", (sx - sy).abs() <= (x - y).abs() + 1e-15);
        check("soft-threshold shrinks", sx.abs() <= x.abs() && (x.abs() <= tau) == (sx == 0.0));

        let mut simplex = || {
            let mut w: [f64; STIMULI] = std::array::from_fn(|_| rng.random_range(0.01..1.0));
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            w
        };
        let (d1, d2, d3) = (dist(simplex()), dist(simplex()), dist(simplex()));
        let single = fuse_halfsequences(std::slice::from_ref(&d1)).unwrap();
        check("fusion identity", single.iter().zip(&d1.probs).all(|(a, b)| (a - b).abs() <= 1e-12));
        let uniform = dist([1.0 / STIMULI as f64; STIMULI]);
        let with_uniform = fuse_halfsequences(&[d1, uniform]).unwrap();
        check("fusion neutral element", with_uniform.iter().zip(&d1.probs).all(|(a, b)| (a - b).abs() <= 1e-12));
        let all = fuse_halfsequences(&[d1, d2, d3]).unwrap();
        let left = fuse_halfsequences(&[dist(fuse_halfsequences(&[d1, d2]).unwrap()), d3]).unwrap();
        let right = fuse_halfsequences(&[d1, dist(fuse_halfsequences(&[d2, d3]).unwrap())]).unwrap();
        check(
            "fusion associativity",
            all.iter().zip(&left).zip(&right).all(|((a, b), c)| (a - b).abs() <= 1e-9 && (a - c).abs() <= 1e-9),
        );

        let p = rng.random_range(0.0..=0.5);
        check("utility clamp", bci_utility(p, rng.random_range(1..10), &TimingConfig::default(), 36) == 0.0);
    }

    let wide = toy_dataset(16, 205, 4, 1).unwrap();
    let flagged = pipeline::identifiability_warning(&wide);
    check("5N < EM flagged", flagged.as_deref().is_some_and(|m| m.contains("5N = 20 < EM = 3280")));
    let full = pipeline::identifiability(&wide);
    check("rank report flags deficiency", !full.full_column_rank && full.message.is_some());
    let tall = toy_dataset(2, 3, 4, 2).unwrap();
    check("5N >= EM not flagged", pipeline::identifiability_warning(&tall).is_none());
    check("205 samples at 256 Hz", window_samples(800.0, 256.0, Endpoint::Inclusive) == 205);
    check("26 samples at 32 Hz", window_samples(800.0, 32.0, Endpoint::Inclusive) == 26);
    check("25 samples exclusive", window_samples(800.0, 32.0, Endpoint::Exclusive) == 25);

    failures.sort();
    failures.dedup();
    outcome(
        "analytic invariants",
        failures.is_empty(),
        if failures.is_empty() {
            "softmax, projection, soft-threshold, fusion, utility clamp, rank check and window lengths all exact or <= 1e-9"
                .into()
        } else {
            format!("violated: {}", failures.join(", "))
        },
    )
}

fn preset(name: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(name).unwrap();
    cfg.seed = seed;
    cfg.resolve().unwrap()
}

fn sensitivity() -> Outcome {
    let cfg = preset("sim2-moderate", 3);
    let sim = pipeline::simulate(&cfg).unwrap();
    let ratios = [0.0, 0.5, 1.0, 2.0];
    match pipeline::sensitivity(&sim.train, &sim.test, &cfg, &ratios) {
        Ok(rows) => {
            let rows: Vec<SensitivityRow> = rows.into_iter().map(|(r, _)| r).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("sensitivity.csv");
            let written = tables::write_sensitivity(&path, &rows).is_ok()
                && std::fs::read_to_string(&path).map(|t| t.lines().count() == 1 + ratios.len()).unwrap_or(false);
            let taus: Vec<f64> = rows.iter().map(|r| r.tau).collect();
            let monotone = taus[0] == 0.0 && taus.windows(2).all(|w| w[0] < w[1]);
            let summary: Vec<String> = rows
                .iter()
                .map(|r| format!("r={} tau={:.4} acc5={:.2}", r.ratio, r.tau, r.accuracy.last().copied().unwrap_or(f64::NAN)))
                .collect();
            outcome(
                "sensitivity harness",
                written && monotone,
                format!("table written: {written}; tau increasing in ratio: {monotone}; {}", summary.join("; ")),
            )
        }
        Err(e) => outcome("sensitivity harness", false, format!("error: {e}")),
    }
}

fn determinism() -> Outcome {
    let text = "seed = 9\n[generator]\nchannels = 3\nsamples = 8\ncharacters = 3\nsequences = 3\n[fit]\niterations = 60\n[predict]\ndraws = 96\n";
    let cfg = RunConfig::from_toml_str(text, "determinism").unwrap().resolve().unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let sim = pipeline::simulate(&cfg).unwrap();
            let cp = pipeline::train(&sim.train, &cfg).unwrap();
            let pred = pipeline::predict(&cp, &sim.test, &cfg.predict).unwrap();
            let summary = pipeline::summarize(&cp).unwrap();
            let ev = pipeline::evaluate(&cp, std::slice::from_ref(&sim.test), &cfg.predict).unwrap();
            let grid = pipeline::train_grid(&sim.train, &cfg, &[0.0, 1.0]).unwrap();
            (
                glass::io::dataset::encode(&sim.train),
                glass::io::dataset::encode(&sim.test),
                serde_json::to_string(&sim.truth).unwrap(),
                cp.to_json(),
                format!("{:?}", pred.decodings),
                format!("{:?}{:?}", summary.effects, summary.channels),
                format!("{:?}", ev.curve),
                grid.iter().map(|c| c.to_json()).collect::<String>(),
            )
        })
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    let pass = a == b && a == c;
    outcome(
        "determinism",
        pass,
        format!(
            "simulate, fit, predict, summarize, evaluate and grid fits identical on rerun: {}; identical across 1 and 3 threads: {}",
            a == b,
            a == c
        ),
    )
}

fn accuracy_curve(name: &str, reps: u64) -> Vec<AccuracyCurve> {
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cfg = preset(name, 100 + rep);
            let sim = pipeline::simulate(&cfg).unwrap();
            let cp = pipeline::train(&sim.train, &cfg).unwrap();
            pipeline::evaluate(&cp, std::slice::from_ref(&sim.test), &cfg.predict).unwrap().curve
        })
        .collect()
}

fn mean_accuracy(curves: &[AccuracyCurve]) -> Vec<f64> {
    let depth = curves[0].points.len();
    (0..depth).map(|n| mean(&curves.iter().map(|c| c.points[n].mean).collect::<Vec<_>>())).collect()
}

fn prediction() -> Outcome {
    let start = Instant::now();
    let moderate = mean_accuracy(&accuracy_curve("sim2-moderate", 50));
    let high = mean_accuracy(&accuracy_curve("sim2-high", 50));
    let (m3, m4, m5) = (moderate[2], moderate[3], moderate[4]);
    let pass = m3 <= m4 && m4 <= m5 && m5 >= 0.85 && high[4] < m5;
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        "prediction behavior",
        pass,
        format!(
            "50 replicates each; moderate accuracy by n_seq [{}], high [{}]; nondecreasing over 3..5, n5 >= 0.85, high n5 < moderate n5 ({:.0}s)",
            fmt(&moderate),
            fmt(&high),
            start.elapsed().as_secs_f64()
        ),
    )
}

struct RecoveryRun {
    metrics: Vec<RecoveryMetrics>,
    max_fit_secs: f64,
}

fn recovery_runs(name: &str, reps: u64) -> RecoveryRun {
    let runs: Vec<(RecoveryMetrics, f64)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cfg = preset(name, 1 + rep);
            let sim = pipeline::simulate(&cfg).unwrap();
            let start = Instant::now();
            let cp = pipeline::train(&sim.train, &cfg).unwrap();
            let secs = start.elapsed().as_secs_f64();
            (pipeline::recovery(&sim.truth, &cp).unwrap(), secs)
        })
        .collect();
    RecoveryRun {
        max_fit_secs: runs.iter().map(|r| r.1).fold(0.0, f64::max),
        metrics: runs.into_iter().map(|r| r.0).collect(),
    }
}

struct RecoverySummary {
    rmse: f64,
    angle: f64,
    signal: f64,
    noise: f64,
}

fn summarize(run: &RecoveryRun) -> RecoverySummary {
    let m = &run.metrics;
    RecoverySummary {
        rmse: median(&m.iter().map(|x| x.rmse).collect::<Vec<_>>()),
        angle: median(&m.iter().map(|x| x.error_angle_deg).collect::<Vec<_>>()),
        signal: mean(&m.iter().map(|x| x.mean_delta_signal).collect::<Vec<_>>()),
        noise: mean(&m.iter().map(|x| x.mean_delta_noise).collect::<Vec<_>>()),
    }
}

fn recovery() -> Outcome {
    let run = recovery_runs("standard", 10);
    let s = summarize(&run);
    let pass = s.rmse <= 0.20 && s.angle <= 12.0 && s.signal >= 0.80 && s.noise <= 0.60 && run.max_fit_secs < 900.0;
    outcome(
        "parameter recovery",
        pass,
        format!(
            "10 replicates: median RMSE {:.3} (<= 0.20), median angle {:.2} deg (<= 12), mean selection signal {:.3} (>= 0.80), noise {:.3} (<= 0.60), slowest fit {:.0}s (< 900s)",
            s.rmse, s.angle, s.signal, s.noise, run.max_fit_secs
        ),
    )
}

fn corruption() -> Outcome {
    let drift = summarize(&recovery_runs("attention-drift", 10));
    let noisy = summarize(&recovery_runs("noisy-eeg", 10));
    let ok = |s: &RecoverySummary| s.rmse <= 0.35 && s.signal >= 0.75;
    outcome(
        "corruption robustness",
        ok(&drift) && ok(&noisy),
        format!(
            "10 replicates each: attention drift median RMSE {:.3}, selection signal {:.3}, angle {:.2} deg; noisy EEG median RMSE {:.3}, selection signal {:.3}, angle {:.2} deg (RMSE <= 0.35, signal >= 0.75)",
            drift.rmse, drift.signal, drift.angle, noisy.rmse, noisy.signal, noisy.angle
        ),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        ("gradient", gradient),
        ("invariants", invariants),
        ("determinism", determinism),
        ("sensitivity", sensitivity),
        ("prediction", prediction),
        ("recovery", recovery),
        ("corruption", corruption),
    ];
    let results: Vec<Outcome> = criteria
        .iter()
        .filter(|(key, _)| filters.is_empty() || filters.iter().any(|f| key.contains(f.as_str())))
        .map(|(_, run)| run())
        .collect();
    println!();
    println!("acceptance summary");
    for r in &results {
        println!("  {} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
