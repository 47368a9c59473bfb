use super::*;
use crate::piecewise::PiecewiseC2;
use crate::transforms::{ClassBounds, FamilySpec};
use approx::assert_relative_eq;

fn zero() -> ScalarCoefficient {
    ScalarCoefficient::constant(0.0)
}

fn one() -> ScalarCoefficient {
    ScalarCoefficient::constant(1.0)
}

fn grid(t: f64, n: usize) -> TimeGrid {
    TimeGrid::new(t, n).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn grid_reaches_horizon() {
    let g = grid(0.3, 7);
    assert_eq!(g.time(7), 0.3);
    assert_relative_eq!(g.time(3), 3.0 * 0.3 / 7.0);
    assert!(TimeGrid::new(0.0, 3).is_err());
    assert!(TimeGrid::new(1.0, 0).is_err());
}

#[test]
fn noise_is_reproducible() {
    let a = gen_noise(7, grid(1.0, 4), 2).unwrap();
    let b = gen_noise(7, grid(1.0, 4), 2).unwrap();
    for p in 0..2 {
        assert_eq!(a.increments(p), b.increments(p));
    }
    assert_ne!(a.increments(0), a.increments(1));
    let c = gen_noise(8, grid(1.0, 4), 2).unwrap();
    assert_ne!(a.increments(0), c.increments(0));
}

#[test]
fn noise_moments() {
    // 10^6 draws with dt = 0.01: mean within 3·0.1/1000, variance within 1%
    let noise = gen_noise(11, grid(10_000.0, 1_000_000), 1).unwrap();
    let inc = noise.increments(0);
    assert!(mean(&inc).abs() < 3e-4, "mean {}", mean(&inc));
    assert_relative_eq!(variance(&inc), 0.01, max_relative = 0.01);
}

#[test]
fn coarsening_sums_fine_draws() {
    let fine = gen_noise(3, grid(1.0, 12), 3).unwrap();
    let coarse = fine.coarsen(4).unwrap();
    assert_eq!(coarse.grid().n_steps(), 3);
    for p in 0..3 {
        let f = fine.increments(p);
        let c = coarse.increments(p);
        for (j, cj) in c.iter().enumerate() {
            let s: f64 = f[4 * j..4 * j + 4].iter().sum();
            assert_relative_eq!(*cj, s, max_relative = 1e-12, epsilon = 1e-14);
        }
    }
    assert!(fine.coarsen(5).is_err());
}

#[test]
fn record_steps() {
    assert_eq!(Record::All.steps(3), vec![0, 1, 2, 3]);
    assert_eq!(Record::Every(4).steps(10), vec![0, 4, 8, 10]);
    assert_eq!(Record::Terminal.steps(5), vec![0, 5]);
    assert_eq!(Record::Steps(vec![3, 9, 1, 3]).steps(5), vec![0, 1, 3]);
}

#[test]
fn no_dynamics_keeps_initial_state() {
    let g = grid(1.0, 10);
    let noise = gen_noise(1, g, 3).unwrap();
    let e = euler_maruyama(&zero(), &zero(), 0.7, &g, &noise).unwrap();
    assert!(e.values.iter().flatten().all(|&x| x == 0.7));
}

#[test]
fn unit_drift_is_exact() {
    let g = grid(1.0, 8);
    let noise = gen_noise(1, g, 2).unwrap();
    let e = euler_maruyama(&one(), &zero(), 0.25, &g, &noise).unwrap();
    for x in e.terminal().unwrap() {
        assert_eq!(x, 1.25);
    }
    assert!(e.values.iter().all(|p| p[0] == 0.25));
}

#[test]
fn brownian_terminal_variance() {
    let g = grid(1.0, 1);
    let noise = gen_noise(5, g, 100_000).unwrap();
    let e = euler_maruyama(&zero(), &one(), 0.0, &g, &noise).unwrap();
    assert_relative_eq!(variance(&e.terminal().unwrap()), 1.0, max_relative = 0.02);
}

#[test]
fn grid_mismatch_is_rejected() {
    let noise = gen_noise(1, grid(1.0, 10), 1).unwrap();
    assert!(euler_maruyama(&zero(), &one(), 0.0, &grid(1.0, 11), &noise).is_err());
}

#[test]
fn blow_up_is_reported() {
    let g = grid(1.0, 200);
    let noise = gen_noise(1, g, 1).unwrap();
    let drift = ScalarCoefficient::state("x^3", |x| x * x * x * 1e3);
    let r = euler_maruyama(&drift, &zero(), 1.0, &g, &noise);
    assert!(matches!(r, Err(Error::NonFiniteState { path: 0, .. })));
}

#[test]
fn eps_dependent_coefficient_needs_binding() {
    let g = grid(1.0, 4);
    let noise = gen_noise(1, g, 1).unwrap();
    let fam = ScalarCoefficient::family("b", |x, e| x * e);
    assert!(matches!(
        euler_maruyama(&fam, &one(), 0.0, &g, &noise),
        Err(Error::UnboundEps(_))
    ));
}

#[test]
fn parallel_matches_sequential() {
    let g = grid(1.0, 50);
    let noise = gen_noise(9, g, 64).unwrap();
    let drift = ScalarCoefficient::state("-x", |x| -x);
    let sig = ScalarCoefficient::state("1+x^2/(1+x^2)", |x| 1.0 + x * x / (1.0 + x * x));
    let e = euler_maruyama(&drift, &sig, 0.3, &g, &noise).unwrap();
    for p in [0, 17, 63] {
        let mut x = 0.3;
        let mut seq = vec![x];
        for dw in noise.increments(p) {
            x = x + drift.value(x) * g.dt() + sig.value(x) * dw;
            seq.push(x);
        }
        assert_eq!(e.values[p], seq);
    }
}

#[test]
fn skew_with_zero_beta_is_plain_euler() {
    let g = grid(1.0, 100);
    let noise = gen_noise(2, g, 20).unwrap();
    let drift = ScalarCoefficient::state("sin", f64::sin);
    let sig = ScalarCoefficient::state("2+cos", |x| 2.0 + x.cos());
    let beta = SkewParam::new(0.0).unwrap();
    let a = simulate_skew_sde(beta, &drift, &sig, 0.1, &g, &noise).unwrap();
    let b = euler_maruyama(&drift, &sig, 0.1, &g, &noise).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn skew_sign_law() {
    // P(ξ(1) > 0) = (1+β)/2 for skew Brownian motion from 0
    let g = grid(1.0, 1000);
    let noise = gen_noise(21, g, 40_000).unwrap();
    let beta = SkewParam::new(0.5).unwrap();
    let e = simulate_skew_recorded(beta, &zero(), &one(), 0.0, &noise, &Record::Terminal).unwrap();
    let term = e.terminal().unwrap();
    let p = term.iter().filter(|&&x| x > 0.0).count() as f64 / term.len() as f64;
    assert!((p - 0.75).abs() < 0.01, "P(ξ>0) = {p}");
}

fn constant_path(x: f64, n: usize) -> PathEnsemble {
    let g = grid(1.0, n);
    PathEnsemble {
        grid: g,
        steps: (0..=n).collect(),
        values: vec![vec![x; n + 1]],
        noise: gen_noise(0, g, 1).unwrap(),
        label: "const".into(),
    }
}

#[test]
fn local_time_of_distant_path_is_zero() {
    let e = constant_path(5.0, 100);
    let lt = estimate_local_time(&e, &one(), 0.2).unwrap();
    assert!(lt.values[0].iter().all(|&v| v == 0.0));
}

#[test]
fn local_time_of_resting_path() {
    let e = constant_path(0.0, 100);
    let delta = 0.2;
    let lt = estimate_local_time(&e, &one(), delta).unwrap();
    assert_relative_eq!(lt.values[0][100], 1.0 / (2.0 * delta), max_relative = 1e-12);
    assert_eq!(lt.values[0][0], 0.0);
    assert_eq!(lt.times.len(), 101);
}

#[test]
fn local_time_bandwidth_floor() {
    let e = constant_path(0.0, 100);
    let r = estimate_local_time(&e, &ScalarCoefficient::constant(3.0), 0.2);
    assert!(matches!(r, Err(Error::BandwidthTooSmall { .. })));
    let ok = estimate_local_time(&e, &ScalarCoefficient::constant(3.0), 0.31);
    assert!(ok.is_ok());
}

#[test]
fn local_time_needs_full_recording() {
    let g = grid(1.0, 10);
    let noise = gen_noise(0, g, 2).unwrap();
    let e = euler_maruyama_recorded(&zero(), &one(), 0.0, &noise, &Record::Terminal).unwrap();
    assert_eq!(estimate_local_time(&e, &one(), 1.0), Err(Error::IncompleteRecording));
}

#[test]
fn occupation_identity() {
    let g = grid(1.0, 400);
    let noise = gen_noise(13, g, 50).unwrap();
    let e = euler_maruyama(&zero(), &one(), 0.0, &g, &noise).unwrap();
    let sigma = ScalarCoefficient::constant(1.5);
    let delta = 0.2;
    let lt = estimate_local_time(&e, &sigma, delta).unwrap();
    for (path, l) in e.values.iter().zip(&lt.values) {
        let occ = path[..400].iter().filter(|x| x.abs() < delta).count() as f64 * g.dt();
        assert_relative_eq!(occ, 2.0 * delta * l[400] / 2.25, max_relative = 1e-12, epsilon = 1e-15);
        assert!(l.windows(2).all(|w| w[1] >= w[0]));
    }
}

fn indicator_family(c: f64) -> CoefficientFamily {
    let spec = FamilySpec {
        b_eps: ScalarCoefficient::family("b", move |x, e| if x.abs() <= e { c / (2.0 * e) } else { 0.0 })
            .with_breakpoints(|e| vec![-e, e]),
        g_eps: zero(),
        sigma_eps: one(),
        limit_g: zero(),
        limit_sigma: one(),
        limit_f: PiecewiseC2::linear(c.exp(), (-c).exp()).unwrap(),
        bounds: ClassBounds {
            lambda: 0.5,
            big_lambda: 2.0,
        },
    };
    CoefficientFamily::new(spec, &[0.2, 0.1]).unwrap()
}

#[test]
fn eps_family_step_rule() {
    let fam = indicator_family(1.0);
    let coarse = gen_noise(1, grid(1.0, 100), 4).unwrap();
    assert!(matches!(
        simulate_eps_recorded(&fam, 0.1, 0.0, &coarse, &Record::Terminal),
        Err(Error::StepTooCoarse { .. })
    ));
    let g = grid(1.0, 1000);
    let fine = gen_noise(1, g, 4).unwrap();
    assert!(simulate_eps_family(&fam, 0.1, 0.0, &g, &fine).is_ok());
}

#[test]
fn eps_family_without_drift_is_brownian() {
    let fam = indicator_family(0.0);
    let g = grid(1.0, 1000);
    let noise = gen_noise(3, g, 8).unwrap();
    let a = simulate_eps_family(&fam, 0.1, 0.0, &g, &noise).unwrap();
    let b = euler_maruyama(&zero(), &one(), 0.0, &g, &noise).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn transforms_preserve_noise() {
    let g = grid(1.0, 20);
    let noise = gen_noise(6, g, 3).unwrap();
    let e = euler_maruyama(&zero(), &one(), 0.0, &g, &noise).unwrap();
    let same = transform_ensemble(&e, |x| x, "id").unwrap();
    assert_eq!(same.values, e.values);
    assert_eq!(same.noise, e.noise);
    let beta = SkewParam::new(0.5).unwrap();
    let k = transform_ensemble(&e, |x| beta.kappa(x), "k").unwrap();
    let back = transform_ensemble(&k, |x| beta.phi(x), "back").unwrap();
    for (p, q) in back.values.iter().flatten().zip(e.values.iter().flatten()) {
        assert_relative_eq!(p, q, max_relative = 1e-15);
    }
    let u = PiecewiseC2::linear(1.0, 2.0).unwrap();
    let c = transform_ensemble(&constant_path(1.0, 5), |x| u.eval(x), "u").unwrap();
    assert!(c.values[0].iter().all(|&y| y == 2.0));
    let bad = transform_ensemble(&e, |_| f64::NAN, "nan");
    assert!(matches!(bad, Err(Error::NonFiniteState { .. })));
}

#[test]
fn csv_layout() {
    let e = constant_path(0.5, 2);
    let mut buf = Vec::new();
    e.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,path_0");
    assert_eq!(lines.len(), 4);
    let row: Vec<f64> = lines[2].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row, vec![0.5, 0.5]);
}
