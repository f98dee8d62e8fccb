//! Profile-likelihood covariance of `beta`.
//!
//! With `pl(beta) = max_eta l(eta, beta)` and step `h = c / sqrt(n)`,
//!
//! ```text
//! D_rs = {pl(b) - pl(b + h e_r) - pl(b + h e_s) + pl(b + h e_r + h e_s)} / h^2
//! ```
//!
//! and the covariance estimate is `-D^{-1}`. The result depends on `c`; the
//! default 1.5 is a convention rather than a tuned value, so bootstrap SEs
//! are a useful cross-check.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Design, FitResult};
use crate::solver::{fit_design, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// `c` in `h_n = c n^{-1/2}`.
    pub hn_multiplier: f64,
    /// Settings of the inner solves for `eta` at fixed `beta`.
    pub solver: SolverConfig,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self::for_solver(1.5, &SolverConfig::default())
    }
}

impl ProfileConfig {
    /// Inner solves at `outer.tol * min(1, c^2)`, but no tighter than 1e-10
    /// unless `outer` is: the second differences are of order `h^2 D`, so
    /// small `c` needs proportionally tighter solves.
    pub fn for_solver(hn_multiplier: f64, outer: &SolverConfig) -> Self {
        let scaled = outer.tol * hn_multiplier.min(1.0).powi(2);
        let tol = scaled.max(outer.tol.min(1e-10));
        ProfileConfig { hn_multiplier, solver: SolverConfig { tol, ..outer.clone() } }
    }
}

/// `eta` maximizing `l(., beta)`, started from `warm_start`, with its
/// log-likelihood.
pub fn profile_eta(design: &Design, beta: &[f64], warm_start: &[f64], solver: &SolverConfig) -> Result<(Vec<f64>, f64)> {
    let config = SolverConfig {
        init_beta: Some(beta.to_vec()),
        init_eta: Some(warm_start.to_vec()),
        freeze_beta: true,
        ..solver.clone()
    };
    let fit = fit_design(design, &config)?;
    if !fit.converged {
        return Err(Error::InnerNonConvergence { beta: beta.to_vec(), trace: fit.loglik_trace });
    }
    Ok((fit.params.eta, fit.loglik))
}

/// `pl(beta)`.
pub fn profile_loglik(design: &Design, beta: &[f64], warm_start: &[f64], solver: &SolverConfig) -> Result<f64> {
    profile_eta(design, beta, warm_start, solver).map(|(_, ll)| ll)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileCovariance {
    pub hn: f64,
    /// Second-difference matrix, row-major.
    pub d: Vec<Vec<f64>>,
    pub cov: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// Distinct profile evaluations performed.
    pub pl_calls: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Computes `-D^{-1}` around a converged fit.
///
/// The `1 + p + p(p+1)/2` profile evaluations run in parallel, each warm
/// started at the fitted `eta`.
pub fn profile_covariance(design: &Design, fit: &FitResult, config: &ProfileConfig) -> Result<ProfileCovariance> {
    if !(config.hn_multiplier > 0.0) {
        return Err(Error::Config(format!("hn multiplier must be positive, got {}", config.hn_multiplier)));
    }
    if !fit.converged {
        return Err(Error::InvalidState("profile covariance needs a converged fit".into()));
    }
    design.check_params(&fit.params)?;
    let p = design.p();
    let h = config.hn_multiplier / (design.n() as f64).sqrt();
    let beta = &fit.params.beta;

    // Offsets in units of h: the origin, each e_r, each e_r + e_s with r <= s.
    let mut offsets: Vec<Vec<usize>> = vec![vec![]];
    offsets.extend((0..p).map(|r| vec![r]));
    for r in 0..p {
        for s in r..p {
            offsets.push(vec![r, s]);
        }
    }
    let pl: Vec<f64> = offsets
        .par_iter()
        .map(|idx| {
            let mut b = beta.clone();
            for &j in idx {
                b[j] += h;
            }
            profile_loglik(design, &b, &fit.params.eta, &config.solver)
        })
        .collect::<Result<_>>()?;

    let single = |r: usize| pl[1 + r];
    let pair = |r: usize, s: usize| {
        let (r, s) = (r.min(s), r.max(s));
        // position of (r, s) among the upper-triangle pairs
        pl[1 + p + r * p - r * (r + 1) / 2 + s]
    };
    let d = DMatrix::from_fn(p, p, |r, s| (pl[0] - single(r) - single(s) + pair(r, s)) / (h * h));
    let eig = d.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| !(e < 0.0)) {
        return Err(Error::NotPositiveDefinite { eigenvalues: eig.eigenvalues.iter().copied().collect() });
    }
    let cov = -d.clone().try_inverse().ok_or(Error::SingularCurvature)?;
    let se = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    Ok(ProfileCovariance { hn: h, d: rows(&d), cov: rows(&cov), se, pl_calls: pl.len() })
}
