use arm_mm::simulate::{draw_event_time, generate, HazardKind, Scenario};
use arm_mm::Censoring;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
fn ks_pvalue(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * f64::from(k * k) * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

fn draws(kind: HazardKind, bx: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_event_time(kind, bx, 1.0 - rng.random::<f64>()).unwrap()).collect()
}

#[test]
fn constant_hazard_times_are_exponential() {
    let p = ks_pvalue(draws(HazardKind::Constant, 0.5, 10_000, 17), |t| -(-0.7 * t).exp_m1());
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn numeric_inversion_has_the_right_law() {
    for kind in [HazardKind::TimeDependent, HazardKind::SqrtBaseline] {
        let p = ks_pvalue(draws(kind, 0.8, 10_000, 23), |t| -(-kind.cumulative(0.8, t)).exp_m1());
        assert!(p > 0.01, "{kind:?}: KS p = {p}");
    }
}

#[test]
fn time_dependent_root() {
    // 0.2 T + e^T - 1 = log 2, from a 40-digit root finder
    let t = draw_event_time(HazardKind::TimeDependent, 1.0, 0.5).unwrap();
    assert!((t - 0.469_529_337_455_226_84).abs() < 1e-9, "{t}");
}

#[test]
fn bracket_failure_is_reported() {
    assert!(draw_event_time(HazardKind::TimeDependent, 0.0, f64::MIN_POSITIVE).is_ok());
    assert!(draw_event_time(HazardKind::Constant, -0.5, 0.5).is_err());
}

fn fractions(s: &Scenario) -> [f64; 3] {
    let (d, _) = generate(s).unwrap();
    let n = d.len() as f64;
    [Censoring::Left, Censoring::Interval, Censoring::Right].map(|k| d.count(k) as f64 / n)
}

#[test]
fn scalar_design_censoring_fractions() {
    // P(left) and P(right) by numerical integration over the design
    let [l, _, r] = fractions(&Scenario::time_independent(0.5, 10_000, 5));
    let sd = |p: f64| (p * (1.0 - p) / 10_000.0).sqrt();
    assert!((l - 0.3344).abs() < 3.0 * sd(0.3344), "left {l}");
    assert!((r - 0.3742).abs() < 3.0 * sd(0.3742), "right {r}");
    let [l, _, r] = fractions(&Scenario::time_independent(1.0, 10_000, 6));
    assert!((0.30..=0.50).contains(&l), "left {l}");
    assert!((0.25..=0.35).contains(&r), "right {r}");
}

#[test]
fn two_covariate_censoring_fractions() {
    let f = fractions(&Scenario::two_covariate([0.5, 1.0], 10_000, 7));
    for (got, want) in f.iter().zip([0.42, 0.42, 0.16]) {
        assert!((got - want).abs() <= 0.03, "{f:?}");
    }
}

#[test]
fn covariate_frequencies() {
    let (d, _) = generate(&Scenario::three_covariate([0.2, 0.3, 0.4], 10_000, 8)).unwrap();
    for (j, p) in [0.5, 0.4, 0.3].into_iter().enumerate() {
        let mean = d.observations().iter().map(|o| o.covariates[j]).sum::<f64>() / 10_000.0;
        assert!((mean - p).abs() < 3.0 * (p * (1.0 - p) / 10_000.0f64).sqrt(), "covariate {j}: {mean}");
        assert!(d.observations().iter().all(|o| o.covariates[j] == 0.0 || o.covariates[j] == 1.0));
    }
}

#[test]
fn rows_are_valid_for_every_scenario() {
    for s in [
        Scenario::time_independent(0.5, 2000, 1),
        Scenario::time_dependent(1.0, 2000, 2),
        Scenario::two_covariate([0.5, 1.0], 2000, 3),
    ] {
        let (d, _) = generate(&s).unwrap();
        for o in d.observations() {
            let (a, b, c) = o.censoring.indicators();
            assert_eq!(a + b + c, 1);
            match o.censoring {
                Censoring::Left => assert!(o.left == 0.0 && o.right > 0.0),
                Censoring::Interval => assert!(0.0 < o.left && o.left < o.right && o.right < 4.0),
                Censoring::Right => assert!(o.left > 0.0 && o.right == f64::INFINITY),
            }
        }
    }
}

#[test]
fn bad_scenarios_rejected() {
    let mut s = Scenario::time_independent(0.5, 10, 1);
    s.covariate_probs = vec![1.5];
    assert!(generate(&s).is_err());
    let mut s = Scenario::time_independent(0.5, 10, 1);
    s.beta = vec![0.5, 0.5];
    assert!(generate(&s).is_err());
}
