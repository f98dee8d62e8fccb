//! Synthetic case-II interval-censored data from additive hazards.
//!
//! Event times are drawn by inverting the conditional cumulative hazard at
//! `-log U`; the inspection window is `L ~ U(a, b)`, `R ~ U(L + gap, c)`.
//! A subject with `T < L` is left-censored at `L`, one with `T > R` is
//! right-censored at `R`, and the rest are censored into `(L, R]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Censoring, CovariateProcess, Dataset, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    /// `h = 0.2 + beta'x`
    Constant,
    /// `h = 0.2 + beta'x e^t`
    TimeDependent,
    /// `h = 0.2 t^{1/2} + beta'x`
    SqrtBaseline,
}

impl HazardKind {
    /// Conditional cumulative hazard `H(t | x)` given `bx = beta'x`.
    pub fn cumulative(self, bx: f64, t: f64) -> f64 {
        match self {
            HazardKind::Constant => (0.2 + bx) * t,
            HazardKind::TimeDependent => 0.2 * t + bx * t.exp_m1(),
            HazardKind::SqrtBaseline => 0.4 / 3.0 * t.powf(1.5) + bx * t,
        }
    }

    /// The covariate process the model should be fitted with.
    pub fn process(self) -> CovariateProcess {
        match self {
            HazardKind::TimeDependent => CovariateProcess::exponential(),
            _ => CovariateProcess::TimeIndependent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoringWindow {
    pub left_lo: f64,
    pub left_hi: f64,
    pub gap: f64,
    pub right_hi: f64,
}

impl CensoringWindow {
    /// `L ~ U(0.1, 2)`, `R ~ U(L + 0.5, 4)`.
    pub const SCALAR: CensoringWindow = CensoringWindow { left_lo: 0.1, left_hi: 2.0, gap: 0.5, right_hi: 4.0 };
    /// `L ~ U(0.1, 1.5)`, `R ~ U(L + 1.5, 4)`.
    pub const WIDE: CensoringWindow = CensoringWindow { left_lo: 0.1, left_hi: 1.5, gap: 1.5, right_hi: 4.0 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: HazardKind,
    pub beta: Vec<f64>,
    /// Bernoulli success probability of each covariate.
    pub covariate_probs: Vec<f64>,
    pub window: CensoringWindow,
    pub n: usize,
    pub seed: u64,
}

impl Scenario {
    /// Scalar `X ~ Bernoulli(0.5)` with `h = 0.2 + beta X`.
    pub fn time_independent(beta: f64, n: usize, seed: u64) -> Self {
        Scenario {
            kind: HazardKind::Constant,
            beta: vec![beta],
            covariate_probs: vec![0.5],
            window: CensoringWindow::SCALAR,
            n,
            seed,
        }
    }

    /// Scalar `X ~ Bernoulli(0.5)` with `h = 0.2 + beta X e^t`.
    pub fn time_dependent(beta: f64, n: usize, seed: u64) -> Self {
        Scenario { kind: HazardKind::TimeDependent, ..Self::time_independent(beta, n, seed) }
    }

    /// Two `Bernoulli(0.5)` covariates with `h = 0.2 t^{1/2} + b1 X1 + b2 X2`.
    pub fn two_covariate(beta: [f64; 2], n: usize, seed: u64) -> Self {
        Scenario {
            kind: HazardKind::SqrtBaseline,
            beta: beta.to_vec(),
            covariate_probs: vec![0.5, 0.5],
            window: CensoringWindow::WIDE,
            n,
            seed,
        }
    }

    /// Three covariates with probabilities 0.5, 0.4, 0.3 and constant baseline 0.2.
    pub fn three_covariate(beta: [f64; 3], n: usize, seed: u64) -> Self {
        Scenario {
            kind: HazardKind::Constant,
            beta: beta.to_vec(),
            covariate_probs: vec![0.5, 0.4, 0.3],
            window: CensoringWindow::WIDE,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.covariate_probs.len() {
            return Err(Error::Config(format!(
                "{} coefficients for {} covariates",
                self.beta.len(),
                self.covariate_probs.len()
            )));
        }
        if let Some(p) = self.covariate_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("covariate probability {p} outside [0, 1]")));
        }
        let w = self.window;
        if !(0.0 < w.left_lo && w.left_lo < w.left_hi && w.gap > 0.0 && w.left_hi + w.gap < w.right_hi) {
            return Err(Error::Config(format!("censoring window {w:?} does not give 0 < L < R")));
        }
        Ok(())
    }
}

/// Solves `H(T | x) = -log u` for the scenario's cumulative hazard.
///
/// The constant-baseline case is closed form. Otherwise the root is bracketed
/// by doubling and refined by bisection until `|H(T) - target| <= 1e-10` or
/// the bracket collapses to adjacent floats.
pub fn draw_event_time(kind: HazardKind, beta_x: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain { what: "uniform draw", value: u });
    }
    let target = -u.ln();
    if let HazardKind::Constant = kind {
        let rate = 0.2 + beta_x;
        if !(rate > 0.0) {
            return Err(Error::Domain { what: "hazard rate", value: rate });
        }
        return Ok(target / rate);
    }
    let h = |t: f64| kind.cumulative(beta_x, t);
    let mut hi = 1.0;
    let mut doublings = 0;
    while h(hi) < target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1000 || !hi.is_finite() {
            return Err(Error::BracketFailure { target });
        }
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if (v - target).abs() <= 1e-10 || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Draws a dataset. The same scenario (including seed) always gives the
/// same rows.
pub fn generate(scenario: &Scenario) -> Result<(Dataset, CovariateProcess)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let w = scenario.window;
    let mut rows = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let x: Vec<f64> = scenario.covariate_probs.iter().map(|&p| f64::from(u8::from(rng.random_bool(p)))).collect();
        let bx: f64 = scenario.beta.iter().zip(&x).map(|(b, v)| b * v).sum();
        // (0, 1]: exclude zero so that -log u is finite
        let u = 1.0 - rng.random::<f64>();
        let t = draw_event_time(scenario.kind, bx, u.min(1.0 - f64::EPSILON / 2.0))?;
        let l = rng.random_range(w.left_lo..w.left_hi);
        let r = rng.random_range(l + w.gap..w.right_hi);
        let obs = if t < l {
            Observation { left: 0.0, right: l, censoring: Censoring::Left, covariates: x }
        } else if t > r {
            Observation { left: r, right: f64::INFINITY, censoring: Censoring::Right, covariates: x }
        } else {
            Observation { left: l, right: r, censoring: Censoring::Interval, covariates: x }
        };
        rows.push(obs);
    }
    Ok((Dataset::new(rows)?, scenario.kind.process()))
}
