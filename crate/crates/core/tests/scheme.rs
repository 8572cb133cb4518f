use std::sync::{Arc, Mutex};
use volterra_core::kernel::{constant_kernel, custom_kernel, fbm_kernel, power_kernel, KernelMeta};
use volterra_core::model::{mean_field_ou, separable_model, CoefficientMap, InitialCondition};
use volterra_core::rng::{coarsen, make_brownian};
use volterra_core::scheme::*;
use volterra_core::stats::ols;

fn additive(x0: f64) -> volterra_core::model::Model {
    let one = constant_kernel(1.0).unwrap();
    separable_model(
        one.clone(),
        one,
        CoefficientMap::constant(vec![0.0]).unwrap(),
        CoefficientMap::constant(vec![1.0]).unwrap(),
        InitialCondition::deterministic(vec![x0]).unwrap(),
    )
    .unwrap()
}

fn ou(xi: f64) -> volterra_core::model::Model {
    mean_field_ou(1.0, 1.0, InitialCondition::deterministic(vec![xi]).unwrap()).unwrap()
}

#[test]
fn pure_noise_is_reproduced_exactly() {
    let store = make_brownian(11, 8, 1, 10).unwrap();
    let model = additive(0.5);
    for n in 3..=10 {
        let e = euler_simulate(&model, n, 8, &store).unwrap();
        let incr = coarsen(&store, n).unwrap();
        for i in 0..8 {
            for (k, w) in incr.path(i).iter().enumerate() {
                assert!((e.state(i, k)[0] - (0.5 + w[0])).abs() < 1e-12);
            }
        }
    }
    assert_eq!(coupled_error(&model, 8, 3, 9, &store, 2.0).unwrap(), 0.0);
    assert!(coupled_error(&model, 8, 5, 5, &store, 2.0).is_err());
}

#[test]
fn unit_drift_reaches_one() {
    let store = make_brownian(1, 1, 1, 8).unwrap();
    let one = constant_kernel(1.0).unwrap();
    let model = separable_model(
        one.clone(),
        one,
        CoefficientMap::constant(vec![1.0]).unwrap(),
        CoefficientMap::constant(vec![0.0]).unwrap(),
        InitialCondition::deterministic(vec![0.25]).unwrap(),
    )
    .unwrap();
    for n in 0..=8 {
        let e = euler_simulate(&model, n, 1, &store).unwrap();
        assert_eq!(e.state(0, 1 << n)[0], 1.25);
    }
}

#[test]
fn ou_mean_is_close_to_oracle() {
    let n_part = 2048;
    let store = make_brownian(5, n_part, 1, 6).unwrap();
    let e = euler_simulate(&ou(0.7), 6, n_part, &store).unwrap();
    let mean = e.measure(64).mean()[0];
    // The particle mean is a Brownian average with variance 1/N at t = 1.
    assert!((mean - 0.7).abs() < 4.0 / (n_part as f64).sqrt(), "{mean}");
}

#[test]
fn thread_count_does_not_change_bits() {
    let store = make_brownian(3, 64, 1, 7).unwrap();
    let model = ou(1.0);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| euler_simulate(&model, 7, 64, &store).unwrap())
    };
    assert_eq!(run(1), run(5));
}

#[test]
fn kernel_is_never_sampled_near_the_diagonal() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let rec = seen.clone();
    let meta = power_kernel(0.25).unwrap().meta().clone();
    let k = custom_kernel(
        move |t, s| {
            rec.lock().unwrap().push((t, s));
            (t - s).powf(-0.25)
        },
        KernelMeta { ..meta },
    )
    .unwrap();
    let model = separable_model(
        k.clone(),
        k,
        CoefficientMap::affine(-1.0, 0.5, 0.0).unwrap(),
        CoefficientMap::constant(vec![0.3]).unwrap(),
        InitialCondition::deterministic(vec![1.0]).unwrap(),
    )
    .unwrap();
    let store = make_brownian(9, 4, 1, 6).unwrap();
    for n in [1, 4, 6] {
        seen.lock().unwrap().clear();
        euler_simulate(&model, n, 4, &store).unwrap();
        let calls = seen.lock().unwrap();
        assert!(!calls.is_empty());
        let h = (-(n as f64)).exp2();
        assert!(calls.iter().all(|(t, s)| t - s >= 0.5 * h));
    }
}

#[test]
fn picard_sweeps_contract() {
    let store = make_brownian(21, 32, 1, 6).unwrap();
    let model = ou(1.0);
    let sweeps = picard_sweeps(&model, 6, 32, &store, 8).unwrap();
    assert!(sweeps[0].measures().iter().all(|c| c.coords().iter().all(|x| *x == 1.0)));
    let gaps: Vec<f64> = sweeps.windows(2).map(|w| sup_gap(&w[0], &w[1]).unwrap()).collect();
    for r in 1..5 {
        assert!(gaps[r] < gaps[r - 1], "{gaps:?}");
    }
    let euler = euler_simulate(&model, 6, 32, &store).unwrap();
    assert!(sup_gap(&sweeps[7], &euler).unwrap() <= gaps[6]);

    let pure = additive(0.0);
    let p = picard_sweeps(&pure, 5, 4, &store, 4).unwrap();
    let e = euler_simulate(&pure, 5, 4, &store).unwrap();
    assert_eq!(sup_gap(&p[1], &e).unwrap(), 0.0);
    assert_eq!(sup_gap(&p[2], &p[1]).unwrap(), 0.0);
    assert!(picard_simulate(&pure, 5, 4, &store, 0).is_err());
}

#[test]
fn ou_self_convergence_decreases() {
    let store = make_brownian(8, 64, 1, 10).unwrap();
    let model = ou(1.0);
    let errs: Vec<f64> = (4..=7)
        .map(|n| coupled_error(&model, 64, n, 10, &store, 2.0).unwrap())
        .collect();
    assert!(errs[0] > 0.0);
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn fbm_model_has_positive_time_regularity() {
    let k = fbm_kernel(0.7, 1e-10).unwrap();
    let model = separable_model(
        k.clone(),
        k,
        CoefficientMap::affine(-1.0, 0.5, 0.0).unwrap(),
        CoefficientMap::constant(vec![1.0]).unwrap(),
        InitialCondition::deterministic(vec![1.0]).unwrap(),
    )
    .unwrap();
    let store = make_brownian(4, 128, 1, 6).unwrap();
    let e = euler_simulate(&model, 6, 128, &store).unwrap();
    let pts: Vec<(f64, f64)> = (0..4)
        .map(|l| {
            let lag = 1usize << l;
            let mut acc = 0.0;
            let mut count = 0.0;
            for k in (0..=64 - lag).step_by(lag) {
                for i in 0..128 {
                    let dx = e.state(i, k + lag)[0] - e.state(i, k)[0];
                    acc += dx * dx;
                    count += 1.0;
                }
            }
            ((lag as f64 / 64.0).ln(), (acc / count).ln())
        })
        .collect();
    assert!(ols(&pts).unwrap().slope > 0.0);
}

#[test]
fn input_validation() {
    let store = make_brownian(1, 4, 1, 5).unwrap();
    let model = ou(0.0);
    assert!(euler_simulate(&model, 6, 4, &store).is_err());
    assert!(euler_simulate(&model, 5, 5, &store).is_err());
    assert!(euler_simulate(&model, 5, 0, &store).is_err());
    let two = make_brownian(1, 4, 2, 5).unwrap();
    assert!(euler_simulate(&model, 5, 4, &two).is_err());
}

#[test]
fn blow_up_is_reported() {
    let one = constant_kernel(1.0).unwrap();
    let model = separable_model(
        one.clone(),
        one,
        CoefficientMap::new(1, 0.0, 0.0, |x, _, out| out[0] = x[0].exp()).unwrap(),
        CoefficientMap::constant(vec![0.0]).unwrap(),
        InitialCondition::deterministic(vec![700.0]).unwrap(),
    )
    .unwrap();
    let store = make_brownian(1, 2, 1, 4).unwrap();
    assert!(matches!(euler_simulate(&model, 4, 2, &store), Err(SchemeError::BlowUp { step: 2, .. })));
}

#[test]
fn level_ten_cost() {
    let store = make_brownian(2, 256, 1, 10).unwrap();
    let t = std::time::Instant::now();
    euler_simulate(&ou(1.0), 10, 256, &store).unwrap();
    println!("level 10, N = 256: {:?}", t.elapsed());
}
