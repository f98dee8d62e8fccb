//! Direct quasi-Newton maximization of the log-likelihood over all
//! `m + p` parameters, used as a reference for the MM fit and for timing.
//!
//! BFGS runs on `(eta, beta)` with an analytic gradient and a backtracking
//! line search that rejects points where a cumulative term is not positive.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{profile_covariance, ProfileConfig};
use crate::likelihood::{loglik, prefix_sums};
use crate::model::{dot, Censoring, Design, FitResult, ModelParams};
use crate::simulate::{generate, Scenario};
use crate::solver::{fit_design, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectConfig {
    pub max_iter: usize,
    /// Stop when `max |d l / d theta|` falls below this.
    pub gtol: f64,
    /// Or when an accepted step improves `l` by less than `ftol (1 + |l|)`
    /// several times in a row.
    pub ftol: f64,
    pub max_backtracks: usize,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
    /// `eta` is clamped from below here so that masses heading to zero stay
    /// recoverable.
    pub eta_floor: f64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig { max_iter: 20_000, gtol: 1e-6, ftol: 1e-13, max_backtracks: 60, max_step: 5.0, eta_floor: -30.0 }
    }
}

fn split(design: &Design, theta: &[f64]) -> ModelParams {
    ModelParams::new(theta[..design.m()].to_vec(), theta[design.m()..].to_vec())
}

fn value(design: &Design, theta: &[f64]) -> Option<f64> {
    loglik(design, &split(design, theta)).ok().map(|l| l.total()).filter(|v| v.is_finite())
}

/// `d l / d(eta, beta)`, from `d l / d u` for each cumulative term and the
/// chain rule `d u / d eta_k = lambda_k`, `d u / d beta = Z`.
pub fn gradient(design: &Design, params: &ModelParams) -> Result<Vec<f64>> {
    design.check_params(params)?;
    let (m, p) = (design.m(), design.p());
    let lam = params.lambda();
    let cum = prefix_sums(&lam);
    let grid = design.grid();
    // d/du log(1 - e^{-u}) = 1 / (e^u - 1)
    let dlog = |u: f64, i: usize| {
        if u > 0.0 {
            Ok(1.0 / u.exp_m1())
        } else {
            Err(Error::NonPositiveHazard { obs: i, value: u })
        }
    };
    let mut diff = vec![0.0; m + 1];
    let mut gb = vec![0.0; p];
    let mut push = |range: std::ops::Range<usize>, w: f64, z: &[f64], diff: &mut Vec<f64>| {
        diff[range.start] += w;
        diff[range.end] -= w;
        for (g, zj) in gb.iter_mut().zip(z) {
            *g += w * zj;
        }
    };
    for i in 0..design.n() {
        let s = grid.span(i);
        match design.kind(i) {
            Censoring::Left => {
                let u = cum[s.lower] + dot(&params.beta, design.z_lower(i));
                push(0..s.lower, dlog(u, i)?, design.z_lower(i), &mut diff);
            }
            Censoring::Interval => {
                let u = lam[s.lower..s.upper].iter().sum::<f64>() + dot(&params.beta, design.z_between(i));
                push(0..s.lower, -1.0, design.z_lower(i), &mut diff);
                push(s.lower..s.upper, dlog(u, i)?, design.z_between(i), &mut diff);
            }
            Censoring::Right => push(0..s.upper, -1.0, design.z_upper(i), &mut diff),
        }
    }
    let mut out = Vec::with_capacity(m + p);
    let mut acc = 0.0;
    for k in 0..m {
        acc += diff[k];
        out.push(acc * lam[k]);
    }
    out.extend(gb);
    Ok(out)
}

fn grad_theta(design: &Design, theta: &[f64]) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(gradient(design, &split(design, theta))?))
}

/// BFGS ascent from `init`. Returns a non-converged result if the line
/// search fails or `max_iter` is reached.
pub fn direct_fit(design: &Design, init: &ModelParams, config: &DirectConfig) -> Result<FitResult> {
    design.check_params(init)?;
    let m = design.m();
    let d = m + design.p();
    let mut x = DVector::from_iterator(d, init.eta.iter().chain(&init.beta).copied());
    let mut f = value(design, x.as_slice()).ok_or_else(|| Error::InvalidState("initial point outside the domain".into()))?;
    let mut g = grad_theta(design, x.as_slice())?;
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut trace = vec![f];
    let mut converged = false;
    let mut small_steps = 0;
    let mut since_reset = 0;
    let mut iter = 0;
    while iter < config.max_iter {
        // Some(true): stationary, Some(false): line search failed from a reset
        let mut stop = None;
        if g.amax() < config.gtol {
            stop = Some(true);
        } else {
            iter += 1;
            let mut dir = &hinv * &g;
            let mut slope = g.dot(&dir);
            if !(slope > 0.0) {
                hinv = DMatrix::identity(d, d);
                dir = g.clone();
                slope = g.dot(&g);
            }
            let mut step = (config.max_step / dir.amax()).min(1.0);
            let mut accepted = None;
            for _ in 0..config.max_backtracks {
                let mut cand = &x + &dir * step;
                for e in cand.rows_mut(0, m).iter_mut() {
                    *e = e.max(config.eta_floor);
                }
                if let Some(fc) = value(design, cand.as_slice()) {
                    if fc >= f + 1e-4 * step * slope {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                None if since_reset == 0 => stop = Some(false),
                None => {
                    hinv = DMatrix::identity(d, d);
                    since_reset = 0;
                    continue;
                }
                Some((x_new, f_new)) => {
                    since_reset += 1;
                    let g_new = grad_theta(design, x_new.as_slice())?;
                    // BFGS on the negated objective: s = dx, y = -(g_new - g)
                    let s = &x_new - &x;
                    let y = &g - &g_new;
                    let sy = s.dot(&y);
                    if sy > 1e-12 * s.norm() * y.norm() {
                        if iter == 1 {
                            hinv *= sy / y.dot(&y);
                        }
                        let rho = 1.0 / sy;
                        let hy = &hinv * &y;
                        let yhy = y.dot(&hy);
                        // H' = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
                        hinv.ger(-rho, &s, &hy, 1.0);
                        hinv.ger(-rho, &hy, &s, 1.0);
                        hinv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
                    }
                    let gain = f_new - f;
                    small_steps = if gain < config.ftol * (1.0 + f.abs()) { small_steps + 1 } else { 0 };
                    x = x_new;
                    f = f_new;
                    g = g_new;
                    trace.push(f);
                    if small_steps >= 5 {
                        small_steps = 0;
                        // a stall right after a reset is a genuine stop;
                        // otherwise the curvature estimate may be stale
                        if since_reset <= 5 {
                            stop = Some(true);
                        } else {
                            hinv = DMatrix::identity(d, d);
                            since_reset = 0;
                        }
                    }
                }
            }
        }
        let Some(stationary) = stop else { continue };
        // the gradient in eta carries a factor lambda_k, so a vanishing mass
        // looks stationary even when l wants it back
        if release_floored(design, &mut x, &mut f, config)? {
            g = grad_theta(design, x.as_slice())?;
            hinv = DMatrix::identity(d, d);
            since_reset = 0;
            small_steps = 0;
            trace.push(f);
            continue;
        }
        converged = stationary;
        break;
    }
    Ok(FitResult {
        params: split(design, x.as_slice()),
        loglik: f,
        n_iter: iter,
        converged,
        grid: design.grid().times().to_vec(),
        loglik_trace: trace,
        zero_curvature_skips: 0,
    })
}

/// Re-seeds every mass whose unscaled score is clearly positive,
/// choosing `lambda_k` from a decade grid. Returns whether `l` improved.
fn release_floored(design: &Design, x: &mut DVector<f64>, f: &mut f64, config: &DirectConfig) -> Result<bool> {
    let m = design.m();
    let g = grad_theta(design, x.as_slice())?;
    let stuck: Vec<usize> = (0..m)
        .filter(|&k| g[k] / x[k].exp() > config.gtol.sqrt())
        .collect();
    let mut improved = false;
    for k in stuck {
        let keep = x[k];
        let mut best = (keep, *f);
        for j in 1..=12 {
            x[k] = -(j as f64) * std::f64::consts::LN_10;
            if let Some(v) = value(design, x.as_slice()) {
                if v > best.1 {
                    best = (x[k], v);
                }
            }
        }
        x[k] = best.0;
        if best.1 > *f {
            *f = best.1;
            improved = true;
        }
    }
    Ok(improved)
}

/// SEs of `beta` from the inverse negative Hessian, built by central
/// differences of the analytic gradient. A pseudo-inverse absorbs the flat
/// directions of masses sitting at zero.
pub fn hessian_se(design: &Design, params: &ModelParams) -> Result<Vec<f64>> {
    let (m, p) = (design.m(), design.p());
    let d = m + p;
    let theta: Vec<f64> = params.eta.iter().chain(&params.beta).copied().collect();
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let h = 1e-5 * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        let gp = grad_theta(design, &tp)?;
        let gm = grad_theta(design, &tm)?;
        for i in 0..d {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let neg = -(&hess + hess.transpose()) * 0.5;
    let eig = neg.symmetric_eigen();
    let cutoff = eig.eigenvalues.amax() * 1e-10;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cutoff {
            let v = eig.eigenvectors.column(k);
            cov += v * v.transpose() / ev;
        }
    }
    Ok((m..d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mm,
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Median wall time of the estimate alone.
    pub time_estimate_s: f64,
    /// Median wall time of the estimate plus its standard errors; NaN if
    /// any standard-error computation failed.
    pub time_se_s: f64,
    pub loglik: f64,
}

fn median(mut x: Vec<f64>) -> f64 {
    if x.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// Times both methods on one simulated dataset per sample size.
///
/// Repetition `r` of every size reuses the same dataset, so each median is
/// taken over identical work. Runs on a single thread.
pub fn bench(
    sizes: &[usize],
    scenario: impl Fn(usize) -> Scenario + Sync,
    reps: usize,
    solver: &SolverConfig,
    direct: &DirectConfig,
) -> Result<Vec<BenchRecord>> {
    if reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n < 50) {
        return Err(Error::Config(format!("benchmark sizes must be at least 50, got {n}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot start benchmark thread: {e}")))?;
    pool.install(|| {
        let mut out = Vec::new();
        for &n in sizes {
            let (data, process) = generate(&scenario(n))?;
            let design = Design::new(&data, &process)?;
            let init = ModelParams::<f64>::initial(design.m(), design.p());
            let profile = ProfileConfig::for_solver(1.5, solver);
            let (mut mm_est, mut mm_se, mut dir_est, mut dir_se) = (vec![], vec![], vec![], vec![]);
            let (mut mm_ll, mut dir_ll) = (f64::NAN, f64::NAN);
            for _ in 0..reps {
                let (fit, t) = timed(|| fit_design(&design, solver))?;
                mm_est.push(t);
                mm_ll = fit.loglik;
                mm_se.push(timed(|| {
                    let fit = fit_design(&design, solver)?;
                    profile_covariance(&design, &fit, &profile)
                })
                .map_or(f64::NAN, |(_, t)| t));
                let (fit, t) = timed(|| direct_fit(&design, &init, direct))?;
                dir_est.push(t);
                dir_ll = fit.loglik;
                dir_se.push(
                    timed(|| {
                        let fit = direct_fit(&design, &init, direct)?;
                        hessian_se(&design, &fit.params)
                    })
                    .map_or(f64::NAN, |(_, t)| t),
                );
            }
            let (m, p) = (design.m(), design.p());
            out.push(BenchRecord { method: Method::Mm, n, m, p, time_estimate_s: median(mm_est), time_se_s: median(mm_se), loglik: mm_ll });
            out.push(BenchRecord {
                method: Method::Direct,
                n,
                m,
                p,
                time_estimate_s: median(dir_est),
                time_se_s: median(dir_se),
                loglik: dir_ll,
            });
        }
        Ok(out)
    })
}

/// CSV with columns `method,n,m,p,ATE_s,ATS_s`.
pub fn write_bench_csv<W: std::io::Write>(records: &[BenchRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n", "m", "p", "ATE_s", "ATS_s"])?;
    for r in records {
        let method = match r.method {
            Method::Mm => "mm",
            Method::Direct => "direct",
        };
        w.write_record([
            method.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.p.to_string(),
            format!("{:.6}", r.time_estimate_s),
            format!("{:.6}", r.time_se_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fits both methods on many datasets in parallel; used by equivalence checks.
pub fn compare_many(datasets: &[Design], solver: &SolverConfig, direct: &DirectConfig) -> Vec<Result<(FitResult, FitResult)>> {
    datasets
        .par_iter()
        .map(|design| {
            let mm = fit_design(design, solver)?;
            let init = ModelParams::<f64>::initial(design.m(), design.p());
            let dir = direct_fit(design, &init, direct)?;
            Ok((mm, dir))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovariateProcess;

    #[test]
    fn gradient_matches_central_differences() {
        let (data, _) = generate(&Scenario::time_independent(0.5, 40, 4)).unwrap();
        let design = Design::new(&data, &CovariateProcess::TimeIndependent).unwrap();
        let mut p = ModelParams::<f64>::initial(design.m(), design.p());
        p.beta = vec![0.3];
        let g = gradient(&design, &p).unwrap();
        let theta: Vec<f64> = p.eta.iter().chain(&p.beta).copied().collect();
        for j in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[j].abs());
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (value(&design, &a).unwrap() - value(&design, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()), "j={j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn csv_shape() {
        let rec = BenchRecord { method: Method::Mm, n: 100, m: 90, p: 1, time_estimate_s: 0.5, time_se_s: 1.0, loglik: -1.0 };
        let mut buf = Vec::new();
        write_bench_csv(&[rec], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("method,n,m,p,ATE_s,ATS_s\nmm,100,90,1,"));
    }
}
