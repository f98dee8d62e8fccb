//! Gradient MM fitting.
//!
//! Each sweep takes one Newton step on the minorizer: a scalar step
//! `eta_k - S1k / S1kk` for every baseline coordinate, all evaluated at the
//! previous state, and a `p`-dimensional step `beta - S22^{-1} S2`. The joint
//! step is accepted when it keeps the state valid and does not lower the
//! log-likelihood; otherwise the `eta` block and then the `beta` block are
//! halved toward the previous state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{a1_unchecked, a2_unchecked, loglik_from_terms, u_terms, UTerms};
use crate::model::{dot, Censoring, CovariateProcess, Dataset, Design, FitResult, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when the per-sweep change measured by `stop_rule` falls below this.
    pub tol: f64,
    /// Largest tolerated decrease of the log-likelihood in one sweep.
    pub ascent_tol: f64,
    pub init_beta: Option<Vec<f64>>,
    pub init_eta: Option<Vec<f64>>,
    pub step_halving_max: usize,
    /// Lower bound for every `eta_k`. Masses the MLE sends to zero otherwise
    /// keep drifting by O(1) per sweep and the stopping rule never fires.
    pub eta_floor: f64,
    /// Hold `beta` at its initial value and update `eta` only.
    pub freeze_beta: bool,
    pub stop_rule: StopRule,
}

/// What the per-sweep change compared against `tol` is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `sum_k |d S0(t_k)| + sum_j |d beta_j|` with `S0 = exp(-Lambda)`.
    ///
    /// Insensitive to masses the MLE puts at zero or infinity, which move
    /// by ever smaller amounts in `eta` without ever settling.
    #[default]
    Survival,
    /// `sum_k |d eta_k| + sum_j |d beta_j|`.
    Parameter,
}

impl StopRule {
    pub fn change(self, old: &ModelParams, new: &ModelParams) -> f64 {
        let beta: f64 = old.beta.iter().zip(&new.beta).map(|(a, b)| (a - b).abs()).sum();
        let base: f64 = match self {
            StopRule::Parameter => old.eta.iter().zip(&new.eta).map(|(a, b)| (a - b).abs()).sum(),
            StopRule::Survival => {
                let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
                for (a, b) in old.eta.iter().zip(&new.eta) {
                    ca += a.exp();
                    cb += b.exp();
                    acc += ((-ca).exp() - (-cb).exp()).abs();
                }
                acc
            }
        };
        base + beta
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 100_000,
            tol: 1e-7,
            ascent_tol: 1e-8,
            init_beta: None,
            init_eta: None,
            step_halving_max: 30,
            eta_floor: -30.0,
            freeze_beta: false,
            stop_rule: StopRule::Survival,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.ascent_tol >= 0.0) {
            return Err(Error::Config(format!("ascent_tol must be nonnegative, got {}", self.ascent_tol)));
        }
        Ok(())
    }
}

/// Per-coordinate sums behind `S1k` and `S1kk`, without the `lambda_k` factor.
struct EtaSums {
    g: Vec<f64>,
    h: Vec<f64>,
}

/// Curvature coefficient of a `log(1 - e^{-u})` term in `eta_k`.
#[inline]
fn log_term_curvature(u: f64) -> f64 {
    a1_unchecked(u) - 2.0 * a2_unchecked(u) * u - 2.0 / u
}

/// O(n + m) accumulation of the score and curvature sums by difference arrays.
fn eta_sums(design: &Design, terms: &[UTerms]) -> EtaSums {
    let m = design.m();
    let grid = design.grid();
    let mut dg = vec![0.0; m + 1];
    let mut dh = vec![0.0; m + 1];
    let mut add = |range: std::ops::Range<usize>, g: f64, h: f64| {
        dg[range.start] += g;
        dg[range.end] -= g;
        dh[range.start] += h;
        dh[range.end] -= h;
    };
    for (i, t) in terms.iter().enumerate() {
        match design.kind(i) {
            Censoring::Left => {
                let u = t.ul.expect("left term");
                add(grid.at_or_below_lower(i), a1_unchecked(u), log_term_curvature(u));
            }
            Censoring::Interval => {
                let u = t.ulr.expect("interval term");
                add(grid.at_or_below_lower(i), -1.0, -1.0);
                add(grid.between(i), a1_unchecked(u), log_term_curvature(u));
            }
            Censoring::Right => add(grid.at_or_below_upper(i), -1.0, -1.0),
        }
    }
    let (mut g, mut h) = (Vec::with_capacity(m), Vec::with_capacity(m));
    let (mut sg, mut sh) = (0.0, 0.0);
    for k in 0..m {
        sg += dg[k];
        sh += dh[k];
        g.push(sg);
        h.push(sh);
    }
    EtaSums { g, h }
}

/// `S1k` at the current state, summed observation by observation.
pub fn score_eta(k: usize, design: &Design, params: &ModelParams) -> Result<f64> {
    let terms = u_terms(design, params)?;
    let grid = design.grid();
    let mut s = 0.0;
    for (i, t) in terms.iter().enumerate() {
        let span = grid.span(i);
        s += match design.kind(i) {
            Censoring::Left if k < span.lower => a1_unchecked(t.ul.unwrap()),
            Censoring::Interval if k < span.lower => -1.0,
            Censoring::Interval if k < span.upper => a1_unchecked(t.ulr.unwrap()),
            Censoring::Right if k < span.upper => -1.0,
            _ => 0.0,
        };
    }
    Ok(params.eta[k].exp() * s)
}

/// `S1kk` at the current state, summed observation by observation.
pub fn curvature_eta(k: usize, design: &Design, params: &ModelParams) -> Result<f64> {
    let terms = u_terms(design, params)?;
    let grid = design.grid();
    let mut s = 0.0;
    for (i, t) in terms.iter().enumerate() {
        let span = grid.span(i);
        s += match design.kind(i) {
            Censoring::Left if k < span.lower => log_term_curvature(t.ul.unwrap()),
            Censoring::Interval if k < span.lower => -1.0,
            Censoring::Interval if k < span.upper => log_term_curvature(t.ulr.unwrap()),
            Censoring::Right if k < span.upper => -1.0,
            _ => 0.0,
        };
    }
    Ok(params.eta[k].exp() * s)
}

/// All `S1k` and `S1kk` at once.
pub fn eta_score_and_curvature(design: &Design, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let terms = u_terms(design, params)?;
    let sums = eta_sums(design, &terms);
    let lam = params.lambda();
    Ok((
        sums.g.iter().zip(&lam).map(|(g, l)| g * l).collect(),
        sums.h.iter().zip(&lam).map(|(h, l)| h * l).collect(),
    ))
}

/// Derivative in `eta_k` of the coordinate-`k` surrogate `M1k` anchored at
/// `anchor`, evaluated at `eta_k` with every other coordinate at the anchor.
///
/// At `eta_k = anchor.eta[k]` this is `S1k`, and its derivative there is `S1kk`.
pub fn surrogate_eta_derivative(k: usize, eta_k: f64, design: &Design, anchor: &ModelParams) -> Result<f64> {
    let terms = u_terms(design, anchor)?;
    let grid = design.grid();
    // M1k = -c1 lam0^2/lam + c2 lam - c3 lam^2/lam0 (+ const)
    let (mut c1, mut c2, mut c3) = (0.0, 0.0, 0.0);
    for (i, t) in terms.iter().enumerate() {
        let span = grid.span(i);
        let u = match design.kind(i) {
            Censoring::Left if k < span.lower => t.ul.unwrap(),
            Censoring::Interval if k < span.lower => {
                c2 -= 1.0;
                continue;
            }
            Censoring::Interval if k < span.upper => t.ulr.unwrap(),
            Censoring::Right if k < span.upper => {
                c2 -= 1.0;
                continue;
            }
            _ => continue,
        };
        c1 += 1.0 / u;
        c2 += a1_unchecked(u) + 2.0 * a2_unchecked(u) * u - 1.0 / u;
        c3 += a2_unchecked(u) * u;
    }
    let lam0 = anchor.eta[k].exp();
    let lam = eta_k.exp();
    Ok(c1 * lam0 * lam0 / lam + c2 * lam - 2.0 * c3 * lam * lam / lam0)
}

fn score_beta_terms(design: &Design, terms: &[UTerms]) -> DVector<f64> {
    let mut s = DVector::zeros(design.p());
    for (i, t) in terms.iter().enumerate() {
        let (z, w): (&[f64], f64) = match design.kind(i) {
            Censoring::Left => (design.z_lower(i), a1_unchecked(t.ul.unwrap())),
            Censoring::Interval => {
                for (sj, zj) in s.iter_mut().zip(design.z_between(i)) {
                    *sj += a1_unchecked(t.ulr.unwrap()) * zj;
                }
                (design.z_lower(i), -1.0)
            }
            Censoring::Right => (design.z_upper(i), -1.0),
        };
        for (sj, zj) in s.iter_mut().zip(z) {
            *sj += w * zj;
        }
    }
    s
}

/// `S2`, the gradient of the log-likelihood in `beta`.
pub fn score_beta(design: &Design, params: &ModelParams) -> Result<Vec<f64>> {
    let terms = u_terms(design, params)?;
    Ok(score_beta_terms(design, &terms).as_slice().to_vec())
}

/// The covariate vector that enters a `log(1 - e^{-u})` term, with its `u`.
fn log_term_covariates<'a>(design: &'a Design, i: usize, t: &UTerms) -> Option<(&'a [f64], f64)> {
    match design.kind(i) {
        Censoring::Left => Some((design.z_lower(i), t.ul.unwrap())),
        Censoring::Interval => Some((design.z_between(i), t.ulr.unwrap())),
        Censoring::Right => None,
    }
}

/// Whether every nonzero `Z` in a minorizer denominator has `beta' Z > 0`.
pub fn beta_denominators_valid(design: &Design, beta: &[f64]) -> bool {
    (0..design.n()).all(|i| {
        let z = match design.kind(i) {
            Censoring::Left => design.z_lower(i),
            Censoring::Interval => design.z_between(i),
            Censoring::Right => return true,
        };
        z.iter().all(|&v| v == 0.0) || dot(beta, z) > 0.0
    })
}

fn curvature_beta_terms(design: &Design, terms: &[UTerms], beta: &[f64]) -> Result<DMatrix<f64>> {
    let p = design.p();
    let mut s = DMatrix::zeros(p, p);
    for (i, t) in terms.iter().enumerate() {
        let Some((z, u)) = log_term_covariates(design, i, t) else { continue };
        if z.iter().all(|&v| v == 0.0) {
            continue;
        }
        let b = dot(beta, z);
        if !(b > 0.0) {
            return Err(Error::InvalidState(format!("observation {i}: beta'Z = {b} in a curvature denominator")));
        }
        let w = -2.0 * (a2_unchecked(u) * u + 1.0 / u) / b;
        for r in 0..p {
            for c in r..p {
                s[(r, c)] += w * z[r] * z[c];
            }
        }
    }
    s.fill_lower_triangle_with_upper_triangle();
    Ok(s)
}

/// `S22`, the minorizer curvature in `beta` at the current state.
pub fn curvature_beta(design: &Design, params: &ModelParams) -> Result<DMatrix<f64>> {
    let terms = u_terms(design, params)?;
    curvature_beta_terms(design, &terms, &params.beta)
}

/// Solves `(-S22) x = S2`, adding a ridge of `1e-8 tr(-S22)/p` once if needed.
fn newton_beta_step(s22: &DMatrix<f64>, s2: &DVector<f64>) -> Result<DVector<f64>> {
    let neg = -s22;
    if let Some(ch) = neg.clone().cholesky() {
        return Ok(ch.solve(s2));
    }
    let p = neg.nrows();
    let ridge = 1e-8 * neg.trace() / p as f64;
    if ridge > 0.0 {
        let adjusted = neg + DMatrix::identity(p, p) * ridge;
        if let Some(ch) = adjusted.cholesky() {
            return Ok(ch.solve(s2));
        }
    }
    Err(Error::SingularCurvature)
}

/// Outcome of one sweep.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub params: ModelParams,
    pub loglik: f64,
    /// Coordinates left unchanged because `S1kk` was zero.
    pub zero_curvature: usize,
    /// Whether the joint Newton step was taken without halving.
    pub full_step: bool,
}

fn evaluate(design: &Design, params: &ModelParams, check_beta: bool) -> Option<f64> {
    if check_beta && !beta_denominators_valid(design, &params.beta) {
        return None;
    }
    let ll = loglik_from_terms(&u_terms(design, params).ok()?).total();
    ll.is_finite().then_some(ll)
}

fn blend(old: &[f64], new: &[f64], frac: f64) -> Vec<f64> {
    old.iter().zip(new).map(|(o, n)| o + frac * (n - o)).collect()
}

/// One MM sweep from `state`, whose log-likelihood is `ll`.
pub fn sweep(design: &Design, state: &ModelParams, ll: f64, config: &SolverConfig, iteration: usize) -> Result<Sweep> {
    let terms = u_terms(design, state)?;
    let sums = eta_sums(design, &terms);
    let mut zero_curvature = 0;
    let eta_new: Vec<f64> = state
        .eta
        .iter()
        .zip(sums.g.iter().zip(&sums.h))
        .map(|(&e, (&g, &h))| {
            // lambda_k cancels in S1k / S1kk
            let step = if h == 0.0 {
                if g != 0.0 {
                    zero_curvature += 1;
                }
                0.0
            } else {
                -g / h
            };
            let target = e + step;
            if target < config.eta_floor {
                config.eta_floor.min(e)
            } else {
                target
            }
        })
        .collect();

    let update_beta = !config.freeze_beta && design.p() > 0;
    let beta_new = if update_beta {
        let s2 = score_beta_terms(design, &terms);
        let s22 = curvature_beta_terms(design, &terms, &state.beta)?;
        let step = newton_beta_step(&s22, &s2)?;
        state.beta.iter().zip(step.iter()).map(|(b, d)| b + d).collect()
    } else {
        state.beta.clone()
    };

    let accept = |v: Option<f64>| v.filter(|&x| x >= ll - config.ascent_tol);
    let joint = ModelParams::new(eta_new.clone(), beta_new.clone());
    if let Some(v) = accept(evaluate(design, &joint, update_beta)) {
        return Ok(Sweep { params: joint, loglik: v, zero_curvature, full_step: true });
    }

    let exhausted = || Error::StepHalvingExhausted { iteration, trace: Vec::new() };
    let mut frac = 1.0;
    let mut eta_ok = None;
    for _ in 0..=config.step_halving_max {
        let cand = ModelParams::new(blend(&state.eta, &eta_new, frac), state.beta.clone());
        if let Some(v) = accept(evaluate(design, &cand, false)) {
            eta_ok = Some((cand, v));
            break;
        }
        frac *= 0.5;
    }
    let (mut current, mut current_ll) = eta_ok.ok_or_else(exhausted)?;
    if update_beta {
        let floor = current_ll;
        let mut frac = 1.0;
        let mut found = false;
        for _ in 0..=config.step_halving_max {
            let cand = ModelParams::new(current.eta.clone(), blend(&state.beta, &beta_new, frac));
            if let Some(v) = evaluate(design, &cand, true).filter(|&x| x >= floor - config.ascent_tol) {
                current = cand;
                current_ll = v;
                found = true;
                break;
            }
            frac *= 0.5;
        }
        if !found {
            return Err(exhausted());
        }
    }
    Ok(Sweep { params: current, loglik: current_ll, zero_curvature, full_step: false })
}

fn initial_state(design: &Design, config: &SolverConfig) -> Result<ModelParams> {
    let mut init = ModelParams::<f64>::initial(design.m(), design.p());
    if let Some(eta) = &config.init_eta {
        if eta.len() != design.m() {
            return Err(Error::Dimension(format!("init_eta has {} entries, grid has {}", eta.len(), design.m())));
        }
        init.eta = eta.clone();
    }
    if let Some(beta) = &config.init_beta {
        if beta.len() != design.p() {
            return Err(Error::Dimension(format!("init_beta has {} entries, data has {} covariates", beta.len(), design.p())));
        }
        init.beta = beta.clone();
    }
    Ok(init)
}

/// Fits on a prebuilt design.
pub fn fit_design(design: &Design, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    if (0..design.n()).all(|i| design.kind(i) == Censoring::Right) {
        return Err(Error::Degenerate("every observation is right-censored; the likelihood has no maximum".into()));
    }
    let mut state = initial_state(design, config)?;
    let update_beta = !config.freeze_beta && design.p() > 0;
    if update_beta && !beta_denominators_valid(design, &state.beta) {
        return Err(Error::InvalidState("initial beta gives beta'Z <= 0 for a nonzero covariate".into()));
    }
    let mut ll = loglik_from_terms(&u_terms(design, &state)?).total();
    let mut trace = vec![ll];
    let mut converged = false;
    let mut zero_curvature_skips = 0;
    let mut n_iter = 0;
    while n_iter < config.max_iter {
        n_iter += 1;
        let step = sweep(design, &state, ll, config, n_iter).map_err(|e| match e {
            Error::StepHalvingExhausted { iteration, .. } => Error::StepHalvingExhausted { iteration, trace: trace.clone() },
            other => other,
        })?;
        let change = config.stop_rule.change(&state, &step.params);
        zero_curvature_skips += step.zero_curvature;
        state = step.params;
        ll = step.loglik;
        trace.push(ll);
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params: state,
        loglik: ll,
        n_iter,
        converged,
        grid: design.grid().times().to_vec(),
        loglik_trace: trace,
        zero_curvature_skips,
    })
}

/// Builds the design and fits.
pub fn fit(data: &Dataset, process: &CovariateProcess, config: &SolverConfig) -> Result<FitResult> {
    let design = Design::new(data, process)?;
    fit_design(&design, config)
}
