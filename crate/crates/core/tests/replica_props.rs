use mtcs_core::regularizers::RegularizerSpec;
use mtcs_core::replica::{
    decouple, rs_expectations, rs_solve, tune_regularizer, ExpectationMethod, FreeParam, FreeVar, RsOptions, RsProblem,
    TerminalParams, TuneOptions,
};
use mtcs_core::signal_model::{DistortionKind, JointSparsityPrior};
use mtcs_core::spectra::{EnsembleSpec, SpectralLaw};
use proptest::prelude::*;

fn lasso(law: SpectralLaw, mu: f64, lambda: f64, sigma2: f64, spec: RegularizerSpec) -> RsProblem {
    RsProblem::new(
        JointSparsityPrior::bernoulli(mu, Default::default()).unwrap(),
        spec,
        vec![TerminalParams { law, lambda, sigma2 }],
        DistortionKind::Mse,
    )
    .unwrap()
}

fn mp(rho: f64) -> SpectralLaw {
    EnsembleSpec::iid_gaussian(rho).unwrap().law().unwrap()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `E[(η(x+z) - x)²]` for `x ~ (1-μ)δ₀ + μ N(0,1)`, `z ~ N(0, s2)`, with the
/// estimate `η` smooth between the given kinks.
fn scalar_mse(eta: &dyn Fn(f64) -> f64, kinks: &[f64], mu: f64, s2: f64) -> f64 {
    let pdf = |y: f64, v: f64| (-y * y / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let v1 = 1.0 + s2;
    // given y, x is N(y/v1, s2/v1) on the nonzero branch
    let zero = |y: f64| eta(y).powi(2) * pdf(y, s2);
    let active = |y: f64| ((eta(y) - y / v1).powi(2) + s2 / v1) * pdf(y, v1);
    let integrate = |f: &dyn Fn(f64) -> f64, half: f64| {
        let mut pts = vec![-half];
        pts.extend(kinks.iter().copied().filter(|k| k.abs() < half));
        pts.push(half);
        pts.windows(2).map(|w| simpson(f, w[0], w[1], 20_000)).sum::<f64>()
    };
    (1.0 - mu) * integrate(&zero, 14.0 * s2.sqrt()) + mu * integrate(&active, 14.0 * v1.sqrt())
}

#[test]
fn identity_sensing_reduces_to_the_scalar_channel() {
    let (lambda, s2, mu, w) = (0.4, 0.05, 0.2, 1.3);
    let t = w * lambda;
    for (spec, bound) in [(RegularizerSpec::l1(w), None), (RegularizerSpec::l1(w).with_box(0.8), Some(0.8))] {
        let sol = rs_solve(&lasso(SpectralLaw::identity(), mu, lambda, s2, spec), None, &RsOptions::default()).unwrap();
        assert!(sol.converged);
        let eta = |y: f64| {
            let v = y.signum() * (y.abs() - t).max(0.0);
            bound.map_or(v, |b: f64| v.clamp(-b, b))
        };
        let mut kinks = vec![-t, t];
        if let Some(b) = bound {
            kinks.extend([-(b + t), b + t]);
        }
        kinks.sort_by(f64::total_cmp);
        let oracle = scalar_mse(&eta, &kinks, mu, s2);
        assert!((sol.d - oracle).abs() <= 1e-8, "{spec:?}: {} vs {oracle}", sol.d);
        assert!((sol.system.tau[0] - lambda).abs() < 1e-12 && (sol.system.xi2[0] - s2).abs() < 1e-12);
    }
}

#[test]
fn one_more_iteration_stays_put() {
    let p = lasso(mp(0.5), 0.1, 0.1, 0.01, RegularizerSpec::l1(1.0));
    let opts = RsOptions::default();
    let sol = rs_solve(&p, None, &opts).unwrap();
    assert!(sol.converged);
    let sys = decouple(&sol.state, &p).unwrap();
    let e = rs_expectations(&sys, &p, opts.method).unwrap();
    let scale = (sol.state.q[0] + sol.state.chi[0]).max(1.0);
    let change = ((e.q[0] - sol.state.q[0]).abs() + (e.chi[0] - sol.state.chi[0]).abs()) / scale;
    assert!(change < 10.0 * opts.tol, "{change}");
}

#[test]
fn damping_does_not_move_the_fixed_point() {
    let p = lasso(mp(0.5), 0.1, 0.1, 0.01, RegularizerSpec::l1(1.0));
    let sols: Vec<_> = [0.3, 0.5, 1.0]
        .iter()
        .map(|g| rs_solve(&p, None, &RsOptions { damping: *g, max_iter: 5000, ..Default::default() }).unwrap())
        .filter(|s| s.converged)
        .collect();
    assert!(sols.len() >= 2);
    let tol = RsOptions::default().tol;
    for s in &sols[1..] {
        assert!((s.state.q[0] - sols[0].state.q[0]).abs() < 10.0 * tol);
        assert!((s.state.chi[0] - sols[0].state.chi[0]).abs() < 10.0 * tol);
    }
}

#[test]
fn distortion_grows_with_noise() {
    let d: Vec<f64> = [0.001, 0.01, 0.1]
        .iter()
        .map(|s2| rs_solve(&lasso(mp(0.5), 0.1, 0.1, *s2, RegularizerSpec::l1(1.0)), None, &RsOptions::default()).unwrap().d)
        .collect();
    assert!(d[0] <= d[1] && d[1] <= d[2], "{d:?}");
}

#[test]
fn quadrature_agrees_with_ten_million_draws() {
    let p = lasso(mp(0.5), 0.1, 0.1, 0.01, RegularizerSpec::l1(1.0));
    let sol = rs_solve(&p, None, &RsOptions::default()).unwrap();
    let sys = decouple(&sol.state, &p).unwrap();
    let quad = rs_expectations(&sys, &p, ExpectationMethod::default()).unwrap();
    let mc = rs_expectations(&sys, &p, ExpectationMethod::MonteCarlo { draws: 10_000_000, seed: 17 }).unwrap();
    let se = mc.std_error.unwrap();
    assert!((quad.q[0] - mc.q[0]).abs() < 3.0 * se.q[0], "q {} vs {} ± {}", quad.q[0], mc.q[0], se.q[0]);
    assert!((quad.chi[0] - mc.chi[0]).abs() < 3.0 * se.chi[0], "chi {} vs {} ± {}", quad.chi[0], mc.chi[0], se.chi[0]);
    assert!((quad.d - mc.d).abs() < 3.0 * se.d, "d {} vs {} ± {}", quad.d, mc.d, se.d);
}

#[test]
fn tuned_lambda_beats_random_probes() {
    let p = lasso(mp(0.5), 0.1, 0.1, 0.01, RegularizerSpec::l1(1.0));
    let free = [FreeParam { var: FreeVar::LambdaAll, lo: 1e-3, hi: 10.0 }];
    let best = tune_regularizer(&p, &free, &TuneOptions::default()).unwrap();
    let mut rng = mtcs_core::rng::from_seed(8);
    for _ in 0..20 {
        let lam = 1e-3 * 1e4f64.powf(rand::Rng::random::<f64>(&mut rng));
        let mut q = p.clone();
        q.terminals[0].lambda = lam;
        if let Ok(s) = rs_solve(&q, None, &RsOptions::default()) {
            if s.converged {
                assert!(best.d <= s.d + 1e-12, "λ*={:?} D={} vs λ={lam} D={}", best.values, best.d, s.d);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_solutions_are_finite_and_nonnegative(
        rho in 0.3f64..1.0,
        mu in 0.02f64..0.3,
        lambda in 0.01f64..2.0,
        sigma2 in 0.0f64..0.2,
    ) {
        let sol = rs_solve(&lasso(mp(rho), mu, lambda, sigma2, RegularizerSpec::l1(1.0)), None, &RsOptions::default());
        if let Ok(s) = sol {
            if s.converged {
                prop_assert!(s.d >= 0.0 && s.d.is_finite());
                prop_assert!(s.state.q[0] >= 0.0 && s.state.chi[0] >= 0.0);
                prop_assert!(s.residual < RsOptions::default().tol);
                prop_assert!((s.system.tau[0] - lambda / mp(rho).r_transform(-s.state.chi[0] / lambda).unwrap()).abs() < 1e-12 * s.system.tau[0].max(1.0));
            }
        }
    }
}
