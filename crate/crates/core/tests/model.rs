use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use volterra_core::kernel::{fbm_kernel, power_kernel};
use volterra_core::measure::{w2_to_dirac0, EmpiricalMeasure};
use volterra_core::model::*;

fn probe_model() -> Model {
    separable_model(
        power_kernel(0.25).unwrap(),
        fbm_kernel(0.7, 1e-10).unwrap(),
        CoefficientMap::affine(-1.5, 0.75, 0.2).unwrap(),
        CoefficientMap::affine(0.3, -0.1, 1.0).unwrap(),
        InitialCondition::deterministic(vec![0.0]).unwrap(),
    )
    .unwrap()
}

fn random_measure(rng: &mut StdRng) -> EmpiricalMeasure {
    let n = rng.random_range(1..=8);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    EmpiricalMeasure::from_scalars(&xs).unwrap()
}

#[test]
fn lipschitz_quotients_respect_declaration() {
    let model = probe_model();
    let l = model.regularity().lipschitz_f;
    let kb = power_kernel(0.25).unwrap();
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..1000 {
        let t = rng.random_range(0.01..1.0);
        let s = rng.random_range(0.0..t);
        let (x, y) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mu = random_measure(&mut rng);
        let nu = random_measure(&mut rng);
        let bound = l * kb.eval(t, s) * (1.0 + 1e-9);
        let dx = (model.drift(t, s, &[x], &mu)[0] - model.drift(t, s, &[y], &mu)[0]).abs();
        if x != y {
            assert!(dx / (x - y).abs() <= bound);
        }
        let (ma, mb) = (mu.mean()[0], nu.mean()[0]);
        let dm = (model.drift(t, s, &[x], &mu)[0] - model.drift(t, s, &[x], &nu)[0]).abs();
        if ma != mb {
            assert!(dm / (ma - mb).abs() <= bound);
        }
        // K1 carries the same bound.
        assert!((model.regularity().k1.eval(t, s) * (1.0 + 1e-9) - bound).abs() <= 1e-12 * bound);
    }
}

#[test]
fn linear_growth_respects_k3() {
    let model = probe_model();
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..1000 {
        let t = rng.random_range(0.01..1.0);
        let s = rng.random_range(0.0..t);
        let x = rng.random_range(-5.0..5.0);
        let mu = random_measure(&mut rng);
        let b = model.drift(t, s, &[x], &mu)[0].abs();
        let k3 = model.regularity().k3.eval(t, s);
        assert!(b <= k3 * (1.0 + x.abs() + w2_to_dirac0(&mu)) * (1.0 + 1e-12));
    }
}

#[test]
fn declared_exponents_come_from_kernels() {
    let r = probe_model().regularity().clone();
    assert_eq!(r.gamma, Some(0.25));
    assert_eq!(r.delta, Some(0.25));
    assert!(r.lipschitz_f >= 1.5 && r.growth_f >= 1.5);
}

#[test]
fn gaussian_initial_condition_is_seeded() {
    let ic = InitialCondition::gaussian(vec![1.0, -1.0], 0.5).unwrap();
    assert_eq!(ic.sample(3, 7), ic.sample(3, 7));
    assert_ne!(ic.sample(3, 7), ic.sample(3, 8));
    assert_eq!(ic.moments(), (1.0, 0.25));
    let det = InitialCondition::deterministic(vec![2.0]).unwrap();
    assert_eq!(det.sample(0, 5), vec![2.0]);
}

proptest! {
    #[test]
    fn oracle_mean_is_invariant(a in -3.0f64..3.0, s in 0.0f64..3.0, m0 in -5.0f64..5.0, v0 in 0.0f64..4.0, t in 0.0f64..5.0) {
        let (m, v) = ou_oracle(a, s, m0, v0, t).unwrap();
        prop_assert_eq!(m, m0);
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn oracle_variance_solves_the_ode(a in 0.1f64..3.0, s in 0.1f64..2.0, v0 in 0.0f64..4.0, t in 0.1f64..2.0) {
        let h = 1e-5;
        let (_, v) = ou_oracle(a, s, 0.0, v0, t).unwrap();
        let (_, vp) = ou_oracle(a, s, 0.0, v0, t + h).unwrap();
        let (_, vm) = ou_oracle(a, s, 0.0, v0, t - h).unwrap();
        let dv = (vp - vm) / (2.0 * h);
        prop_assert!((dv - (-2.0 * a * v + s * s)).abs() < 1e-6);
    }
}
