//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use statrs::function::gamma::gamma;
use std::time::Instant;
use volterra_core::config::ModelConfig;
use volterra_core::experiments::{chaos_study, moment_study, strong_rate_study, Reference, StudyConfig, StudyParams, StudyReport};
use volterra_core::kernel::{constant_kernel, fbm_kernel, hoelder_probe, power_kernel, HoelderMode};
use volterra_core::measure::{w2, w2_bruteforce, w2_matching, EmpiricalMeasure};
use volterra_core::model::{mean_field_ou, separable_model, CoefficientMap, InitialCondition};
use volterra_core::resolvent::{kernel_powers, resolvent_sum, verify_resolvent_identity, TriGrid};
use volterra_core::rng::{coarsen, make_brownian};
use volterra_core::scheme::{coupled_error, euler_simulate, picard_sweeps, sup_gap};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn resolvent_closed_form() -> Outcome {
    let start = Instant::now();
    let grid = TriGrid::dyadic(10, 1.0).unwrap();
    let k = constant_kernel(1.0).unwrap();
    let r = match resolvent_sum(&k, &grid, 1e-12, 200) {
        Ok(r) => r,
        Err(e) => return check(false, format!("resolvent_sum failed: {e}")),
    };
    let max_err = r
        .table
        .cells()
        .into_iter()
        .map(|(t, s, v)| (v - (t - s).exp()).abs())
        .fold(0.0, f64::max);
    let id = verify_resolvent_identity(&k, &r).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        max_err <= 1e-4 && id.left <= 1e-3 && id.right <= 1e-3 && secs < 10.0,
        format!("max error {max_err:.3e}, residuals {:.3e} / {:.3e}, {secs:.2} s", id.left, id.right),
    )
}

fn resolvent_singular_kernel() -> Outcome {
    let alpha = 0.25;
    let level = 8;
    let grid = TriGrid::dyadic(level, 1.0).unwrap();
    let powers = kernel_powers(&power_kernel(alpha).unwrap(), &grid, 3).unwrap();
    let beta = 1.0 - alpha;
    let oracle = |n: usize, lag: f64| {
        let nf = n as f64;
        gamma(beta).powf(nf) * lag.powf(nf * beta - 1.0) / gamma(nf * beta)
    };
    let mut rng = StdRng::seed_from_u64(2);
    let m = grid.cells();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = rng.random_range(1..=m);
        let j = rng.random_range(0..i);
        let (t, s) = (grid.nodes()[i], grid.nodes()[j]);
        for n in [2, 3] {
            worst = worst.max((powers[n - 1].get(i, j) - oracle(n, t - s)).abs());
        }
    }
    check(worst <= 1e-5, format!("level {level}, max |R_n - oracle| over 20 cells {worst:.3e}"))
}

fn random_measure(rng: &mut StdRng, n: usize, d: usize) -> EmpiricalMeasure {
    let coords = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    EmpiricalMeasure::from_flat(d, coords).unwrap()
}

fn wasserstein_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    let mut brute: f64 = 0.0;
    for k in 0..200 {
        let d = 1 + k % 3;
        let n = rng.random_range(1..=6);
        let (mu, nu) = (random_measure(&mut rng, n, d), random_measure(&mut rng, n, d));
        brute = brute.max((w2(&mu, &nu).unwrap() - w2_bruteforce(&mu, &nu).unwrap()).abs());
    }
    let mut sorted: f64 = 0.0;
    for k in 0..50 {
        let n = if k % 10 == 0 { 1024 } else { rng.random_range(1..=1024) };
        let (mu, nu) = (random_measure(&mut rng, n, 1), random_measure(&mut rng, n, 1));
        sorted = sorted.max((w2(&mu, &nu).unwrap() - w2_matching(&mu, &nu).unwrap()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        brute <= 1e-12 && sorted <= 1e-12 && secs < 30.0,
        format!("brute-force gap {brute:.2e}, sorted-vs-matching gap {sorted:.2e}, {secs:.2} s"),
    )
}

fn scheme_exactness() -> Outcome {
    let one = constant_kernel(1.0).unwrap();
    let model = separable_model(
        one.clone(),
        one,
        CoefficientMap::constant(vec![0.0]).unwrap(),
        CoefficientMap::constant(vec![1.0]).unwrap(),
        InitialCondition::deterministic(vec![0.3]).unwrap(),
    )
    .unwrap();
    let particles = 16;
    let store = make_brownian(4, particles, 1, 10).unwrap();
    let mut worst: f64 = 0.0;
    for n in 3..=10 {
        let e = euler_simulate(&model, n, particles, &store).unwrap();
        let incr = coarsen(&store, n).unwrap();
        for i in 0..particles {
            for (k, w) in incr.path(i).iter().enumerate() {
                worst = worst.max((e.state(i, k)[0] - (0.3 + w[0])).abs());
            }
        }
    }
    let mut coupled: f64 = 0.0;
    for nc in 3..10 {
        for nf in nc + 1..=10 {
            coupled = coupled.max(coupled_error(&model, particles, nc, nf, &store, 2.0).unwrap());
        }
    }
    check(
        worst <= 1e-12 && coupled == 0.0,
        format!("max |X - (X0 + W)| {worst:.2e} on levels 3..10, max coupled error {coupled:e}"),
    )
}

fn hoelder_recovery() -> Outcome {
    let start = Instant::now();
    let lags: Vec<f64> = (4..=10).map(|e| (-(e as f64)).exp2()).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for h in [0.3, 0.7] {
        let k = fbm_kernel(h, 1e-10).unwrap();
        match hoelder_probe(&k, HoelderMode::L2Tail, 0.5, &lags) {
            Ok(rep) => {
                let est = rep.exponent_estimate.unwrap_or(f64::NAN);
                pass &= (est - 2.0 * h).abs() <= 0.2;
                parts.push(format!("H={h}: {est:.4}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("H={h}: {e}"));
            }
        }
    }
    let rep = hoelder_probe(&power_kernel(0.25).unwrap(), HoelderMode::L2Tail, 0.5, &lags).unwrap();
    let est = rep.exponent_estimate.unwrap_or(f64::NAN);
    pass &= (est - 0.5).abs() <= 0.1;
    parts.push(format!("power(0.25): {est:.4}"));
    let secs = start.elapsed().as_secs_f64();
    check(pass && secs < 60.0, format!("{}, {secs:.2} s", parts.join(", ")))
}

fn ou_config(xi: f64) -> ModelConfig {
    ModelConfig::MeanFieldOu { a: 1.0, sigma0: 1.0, x0: InitialCondition::Deterministic { value: vec![xi] } }
}

fn strong_config() -> StudyConfig {
    StudyConfig {
        model: ou_config(1.0),
        study: StudyParams {
            seed: 20240601,
            p: 2.0,
            levels: (3..=7).collect(),
            ns: vec![],
            particles: 256,
            n_max: 10,
            reference: Reference::FinestLevel,
            n_ref: None,
            replications: 16,
        },
    }
}

fn strictly_decreasing(r: &StudyReport) -> bool {
    r.rows.windows(2).all(|w| w[1].error < w[0].error)
}

fn strong_self_convergence(report: &StudyReport, secs: f64) -> Outcome {
    // Rows are keyed by 2^-n, so the slope of log2(error) against n is the
    // negated log-log slope.
    let slope_n = -report.fitted_slope.unwrap_or(f64::NAN);
    let errs: Vec<String> = report.rows.iter().map(|r| format!("{:.3e}", r.error)).collect();
    check(
        strictly_decreasing(report) && slope_n <= -0.4 && secs < 600.0,
        format!("errors [{}], slope of log2(error) vs n {slope_n:.3}, {secs:.1} s", errs.join(", ")),
    )
}

fn chaos() -> Outcome {
    let start = Instant::now();
    let cfg = StudyConfig {
        model: ou_config(0.0),
        study: StudyParams {
            seed: 20240602,
            p: 2.0,
            levels: vec![],
            ns: vec![8, 32, 128, 512],
            particles: 0,
            n_max: 10,
            reference: Reference::OuOracle,
            n_ref: None,
            replications: 16,
        },
    };
    let report = match chaos_study(&cfg) {
        Ok(r) => r,
        Err(e) => return check(false, format!("chaos_study failed: {e}")),
    };
    let slope = report.fitted_slope.unwrap_or(f64::NAN);
    let secs = start.elapsed().as_secs_f64();
    let errs: Vec<String> = report.rows.iter().map(|r| format!("{:.3e}", r.error)).collect();
    check(
        strictly_decreasing(&report) && slope <= -0.3 && secs < 600.0,
        format!("errors [{}], fitted slope {slope:.3}, {secs:.1} s", errs.join(", ")),
    )
}

fn moments() -> Outcome {
    let model = mean_field_ou(1.0, 1.0, InitialCondition::deterministic(vec![1.0]).unwrap()).unwrap();
    let store = make_brownian(5, 256, 1, 8).unwrap();
    let report = moment_study(&model, &(3..=8).collect::<Vec<_>>(), 256, 4.0, &store).unwrap();
    let ratio = report.ratio.unwrap();
    check(ratio < 4.0, format!("max/min of sup-time 4th moments over levels 3..8: {ratio:.4}"))
}

fn determinism(reference: &StudyReport) -> Outcome {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| strong_rate_study(&strong_config()).unwrap())
    };
    let (one, eight) = (run(1), run(8));
    let bits = |r: &StudyReport| -> Vec<(u64, u64, u64)> {
        r.rows.iter().map(|x| (x.size.to_bits(), x.error.to_bits(), x.stderr.to_bits())).collect()
    };
    check(
        bits(&one) == bits(&eight) && bits(&one) == bits(reference),
        "1-thread and 8-thread report rows compared bit for bit".into(),
    )
}

fn picard() -> Outcome {
    let model = mean_field_ou(1.0, 1.0, InitialCondition::deterministic(vec![1.0]).unwrap()).unwrap();
    let store = make_brownian(6, 128, 1, 8).unwrap();
    let sweeps = picard_sweeps(&model, 8, 128, &store, 8).unwrap();
    // gaps[r - 1] is the distance between sweeps r and r + 1.
    let gaps: Vec<f64> = sweeps.windows(2).map(|w| sup_gap(&w[0], &w[1]).unwrap()).collect();
    let monotone = (2..6).all(|r| gaps[r] < gaps[r - 1]);
    let euler = euler_simulate(&model, 8, 128, &store).unwrap();
    let fixed = sup_gap(&sweeps[7], &euler).unwrap();
    let bound = gaps[6];
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
    check(
        monotone && fixed <= bound,
        format!("gaps [{}], |sweep 8 - explicit| {fixed:.2e} <= {bound:.2e}", shown.join(", ")),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "resolvent closed form", resolvent_closed_form()));
    results.push((2, "resolvent singular kernel", resolvent_singular_kernel()));
    results.push((3, "wasserstein oracles", wasserstein_oracles()));
    results.push((4, "scheme exactness", scheme_exactness()));
    results.push((5, "hoelder exponent recovery", hoelder_recovery()));
    let start = Instant::now();
    let strong = strong_rate_study(&strong_config());
    let secs = start.elapsed().as_secs_f64();
    match &strong {
        Ok(r) => results.push((6, "strong self-convergence", strong_self_convergence(r, secs))),
        Err(e) => results.push((6, "strong self-convergence", check(false, format!("study failed: {e}")))),
    }
    results.push((7, "propagation of chaos", chaos()));
    results.push((8, "moment boundedness", moments()));
    match &strong {
        Ok(r) => results.push((9, "determinism", determinism(r))),
        Err(_) => results.push((9, "determinism", check(false, "strong study failed".into()))),
    }
    results.push((10, "picard contraction", picard()));
    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{} [{id}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
