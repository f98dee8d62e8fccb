mod common;

use arm_mm::simulate::{generate, Scenario};
use arm_mm::solver::{
    curvature_beta, curvature_eta, fit_design, score_beta, score_eta, surrogate_eta_derivative, sweep,
};
use arm_mm::{canonicalize, loglik, Design, ModelParams, RawRow, SolverConfig};
use proptest::prelude::*;
use rayon::prelude::*;

fn raw(left: f64, right: f64, d: (u8, u8, u8), x: f64) -> RawRow {
    RawRow { left, right, delta_l: d.0, delta_i: d.1, delta_r: d.2, covariates: vec![x] }
}

fn ll_at(design: &Design, theta: &[f64]) -> f64 {
    let m = design.m();
    loglik(design, &ModelParams::new(theta[..m].to_vec(), theta[m..].to_vec())).unwrap().total()
}

#[test]
fn single_right_censored_hand_values() {
    let data = canonicalize(&[raw(2.0, f64::INFINITY, (0, 0, 1), 1.5), raw(0.0, 1.0, (1, 0, 0), 0.0)]).unwrap();
    let design = common::design(&data);
    let p = ModelParams::new(vec![-0.4, 0.3], vec![0.2]);
    // the left-censored row only touches k = 0, so k = 1 sees the right-censored row alone
    assert!((score_eta(1, &design, &p).unwrap() + 0.3f64.exp()).abs() < 1e-15);
    assert!((curvature_eta(1, &design, &p).unwrap() + 0.3f64.exp()).abs() < 1e-15);

    let data = canonicalize(&[raw(2.0, f64::INFINITY, (0, 0, 1), 1.5)]).unwrap();
    let design = common::design(&data);
    let p = ModelParams::new(vec![-0.4], vec![0.2]);
    assert_eq!(score_beta(&design, &p).unwrap(), vec![-3.0]);
}

#[test]
fn scalar_beta_curvature_closed_form() {
    // left-censored at 1, lambda = 0.3, beta = 0.5, x = 1: u = 0.8, Z = 1
    let data = canonicalize(&[raw(0.0, 1.0, (1, 0, 0), 1.0)]).unwrap();
    let design = common::design(&data);
    let p = ModelParams::new(vec![0.3f64.ln()], vec![0.5]);
    let s22 = curvature_beta(&design, &p).unwrap();
    assert!((s22[(0, 0)] - (-7.370_827_351_347_498)).abs() < 1e-13, "{}", s22[(0, 0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Scores at the anchor equal the gradient of the log-likelihood.
    #[test]
    fn scores_match_finite_differences((design, theta, _) in common::dataset_with_states(2)) {
        let x: Vec<f64> = theta.eta.iter().chain(&theta.beta).copied().collect();
        let m = design.m();
        let f = |y: &[f64]| ll_at(&design, y);
        for k in 0..m {
            let fd = common::central_diff(f, &x, k);
            let s = score_eta(k, &design, &theta).unwrap();
            prop_assert!((fd - s).abs() <= 1e-5 * (1.0 + s.abs()), "k={k}: {fd} vs {s}");
        }
        let s2 = score_beta(&design, &theta).unwrap();
        for j in 0..design.p() {
            let fd = common::central_diff(f, &x, m + j);
            prop_assert!((fd - s2[j]).abs() <= 1e-5 * (1.0 + s2[j].abs()), "j={j}: {fd} vs {}", s2[j]);
        }
    }

    #[test]
    fn eta_curvature_is_surrogate_second_derivative((design, theta, _) in common::dataset_with_states(1)) {
        for k in 0..design.m() {
            let e = theta.eta[k];
            let h = 1e-5;
            let fd = (surrogate_eta_derivative(k, e + h, &design, &theta).unwrap()
                - surrogate_eta_derivative(k, e - h, &design, &theta).unwrap()) / (2.0 * h);
            let c = curvature_eta(k, &design, &theta).unwrap();
            prop_assert!((fd - c).abs() <= 1e-4 * (1.0 + c.abs()), "k={k}: {fd} vs {c}");
            let s = surrogate_eta_derivative(k, e, &design, &theta).unwrap();
            let s1 = score_eta(k, &design, &theta).unwrap();
            prop_assert!((s - s1).abs() <= 1e-12 * (1.0 + s1.abs()));
            // every dataset row inspects at some t >= t_1, so k = 0 always has contributions
            if k == 0 {
                prop_assert!(c < 0.0);
            }
        }
    }

    #[test]
    fn beta_curvature_symmetric_nsd((design, theta, _) in common::dataset_with_states(2)) {
        let s22 = curvature_beta(&design, &theta).unwrap();
        prop_assert!((&s22 - s22.transpose()).amax() == 0.0);
        let eig = s22.symmetric_eigen();
        let scale = 1.0 + eig.eigenvalues.amax();
        prop_assert!(eig.eigenvalues.iter().all(|&v| v <= 1e-12 * scale), "{:?}", eig.eigenvalues);
    }
}

#[test]
fn ascent_on_simulated_fits() {
    let worst: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let (data, process) = generate(&Scenario::time_independent(0.5, 100, 300 + seed)).unwrap();
            let design = Design::new(&data, &process).unwrap();
            let fit = fit_design(&design, &SolverConfig::default()).unwrap();
            assert!(fit.converged, "seed {seed}");
            fit.loglik_trace.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min = worst.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min >= -1e-8, "largest decrease {min}");
}

#[test]
fn first_sweep_on_bcos_increases_loglik() {
    let design = common::design(&common::bcos());
    let init = ModelParams::initial(design.m(), design.p());
    let ll0 = loglik(&design, &init).unwrap().total();
    let s = sweep(&design, &init, ll0, &SolverConfig::default(), 1).unwrap();
    assert!(s.loglik > ll0, "{} <= {ll0}", s.loglik);
}

#[test]
fn converged_fit_is_stationary() {
    let mut designs = vec![common::design(&common::bcos())];
    for seed in 0..4 {
        let (data, process) = generate(&Scenario::two_covariate([0.5, 1.0], 150, 60 + seed)).unwrap();
        designs.push(Design::new(&data, &process).unwrap());
    }
    for design in &designs {
        let fit = fit_design(design, &SolverConfig::default()).unwrap();
        assert!(fit.converged);
        let n = design.n() as f64;
        let s1 = (0..design.m()).map(|k| score_eta(k, design, &fit.params).unwrap().abs()).fold(0.0, f64::max);
        let s2 = score_beta(design, &fit.params).unwrap().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(s1 < 1e-4 * n && s2 < 1e-4 * n, "S1 {s1}, S2 {s2}");
    }
}

/// `l(lambda_1, lambda_2)` of the toy data below, written out by hand.
fn toy_loglik(l1: f64, l2: f64) -> f64 {
    let lme = |u: f64| (-(-u).exp_m1()).ln();
    2.0 * lme(l1) + 3.0 * (-l1 + lme(l2)) - (l1 + l2) + lme(l1 + l2)
}

#[test]
fn frozen_beta_matches_grid_search() {
    let rows = [
        raw(0.0, 1.0, (1, 0, 0), 0.0),
        raw(0.0, 1.0, (1, 0, 0), 0.0),
        raw(1.0, 2.0, (0, 1, 0), 0.0),
        raw(1.0, 2.0, (0, 1, 0), 0.0),
        raw(1.0, 2.0, (0, 1, 0), 0.0),
        raw(2.0, f64::INFINITY, (0, 0, 1), 0.0),
        raw(0.0, 2.0, (1, 0, 0), 0.0),
    ];
    let design = common::design(&canonicalize(&rows).unwrap());
    assert_eq!(design.m(), 2);
    let config = SolverConfig { freeze_beta: true, init_beta: Some(vec![0.0]), tol: 1e-12, ..Default::default() };
    let fit = fit_design(&design, &config).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.params.beta, vec![0.0]);

    // coarse-to-fine search in log space
    let (mut c1, mut c2, mut width) = (0.0f64, 0.0f64, 4.0f64);
    for _ in 0..8 {
        let mut best = (f64::NEG_INFINITY, c1, c2);
        for i in -50..=50 {
            for j in -50..=50 {
                let (e1, e2) = (c1 + width * f64::from(i) / 50.0, c2 + width * f64::from(j) / 50.0);
                let v = toy_loglik(e1.exp(), e2.exp());
                if v > best.0 {
                    best = (v, e1, e2);
                }
            }
        }
        (c1, c2) = (best.1, best.2);
        width /= 10.0;
    }
    assert!((fit.params.eta[0] - c1).abs() < 1e-5, "{} vs {c1}", fit.params.eta[0]);
    assert!((fit.params.eta[1] - c2).abs() < 1e-5, "{} vs {c2}", fit.params.eta[1]);
    assert!((fit.loglik - toy_loglik(c1.exp(), c2.exp())).abs() < 1e-10);
}

#[test]
fn invalid_configs_rejected() {
    let design = common::design(&common::bcos());
    for bad in [
        SolverConfig { tol: 0.0, ..Default::default() },
        SolverConfig { max_iter: 0, ..Default::default() },
        SolverConfig { init_beta: Some(vec![0.1, 0.2]), ..Default::default() },
    ] {
        assert!(fit_design(&design, &bad).is_err());
    }
}
