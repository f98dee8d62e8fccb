//! Domain types for the additive risks model: observations, the inspection
//! grid, covariate processes, parameters and the step-function cumulative
//! baseline hazard.
//!
//! Observations follow the six-column file layout `left, right, L, I, R, x...`:
//! a left-censored subject stores `left = 0` and its inspection time in
//! `right`; a right-censored subject stores its last inspection time in `left`
//! and `right = +inf`.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point type the likelihood kernels are written against.
pub trait Scalar: Float + fmt::Debug + fmt::Display + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from(v).expect("literal representable in every Scalar")
}

#[inline]
pub(crate) fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Censoring {
    /// Event in `(0, L]`.
    Left,
    /// Event in `(L, R]`.
    Interval,
    /// Event after `R`.
    Right,
}

impl Censoring {
    pub fn from_indicators(delta_l: u8, delta_i: u8, delta_r: u8) -> Option<Self> {
        match (delta_l, delta_i, delta_r) {
            (1, 0, 0) => Some(Censoring::Left),
            (0, 1, 0) => Some(Censoring::Interval),
            (0, 0, 1) => Some(Censoring::Right),
            _ => None,
        }
    }

    pub fn indicators(self) -> (u8, u8, u8) {
        match self {
            Censoring::Left => (1, 0, 0),
            Censoring::Interval => (0, 1, 0),
            Censoring::Right => (0, 0, 1),
        }
    }
}

/// One subject: censoring window, censoring type and covariate row.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T = f64> {
    pub left: T,
    pub right: T,
    pub censoring: Censoring,
    pub covariates: Vec<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn left_censored(at: T, covariates: Vec<T>) -> Result<Self> {
        Self::from_row(T::zero(), at, Censoring::Left, covariates).map_err(|m| Error::Ingest { row: 0, message: m })
    }

    pub fn interval_censored(left: T, right: T, covariates: Vec<T>) -> Result<Self> {
        Self::from_row(left, right, Censoring::Interval, covariates).map_err(|m| Error::Ingest { row: 0, message: m })
    }

    pub fn right_censored(at: T, covariates: Vec<T>) -> Result<Self> {
        Self::from_row(at, T::infinity(), Censoring::Right, covariates).map_err(|m| Error::Ingest { row: 0, message: m })
    }

    /// Validates a raw row and resolves placeholders into the canonical layout.
    fn from_row(left: T, right: T, censoring: Censoring, covariates: Vec<T>) -> std::result::Result<Self, String> {
        if left.is_nan() || right.is_nan() {
            return Err("time is NaN".into());
        }
        if left < T::zero() || right < T::zero() {
            return Err("negative time".into());
        }
        if let Some(j) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(format!("covariate {} is not a finite number", j + 1));
        }
        let (left, right) = match censoring {
            Censoring::Left => {
                if !right.is_finite() || right <= T::zero() {
                    return Err(format!("left-censored row needs a finite positive inspection time, got {right}"));
                }
                (T::zero(), right)
            }
            Censoring::Interval => {
                if !right.is_finite() {
                    return Err("interval-censored row with infinite right endpoint".into());
                }
                if !(T::zero() < left && left < right) {
                    return Err(format!("interval-censored row needs 0 < left < right, got ({left}, {right}]"));
                }
                (left, right)
            }
            Censoring::Right => {
                if !left.is_finite() || left <= T::zero() {
                    return Err(format!("right-censored row needs a finite positive inspection time, got {left}"));
                }
                (left, T::infinity())
            }
        };
        Ok(Observation { left, right, censoring, covariates })
    }

    /// Inspection time `L` entering `u(L, X)`; absent for right-censored rows.
    pub fn lower(&self) -> Option<T> {
        match self.censoring {
            Censoring::Left => Some(self.right),
            Censoring::Interval => Some(self.left),
            Censoring::Right => None,
        }
    }

    /// Inspection time `R` entering `u(R, X)`; absent for left-censored rows.
    pub fn upper(&self) -> Option<T> {
        match self.censoring {
            Censoring::Left => None,
            Censoring::Interval => Some(self.right),
            Censoring::Right => Some(self.left),
        }
    }
}

/// A row as read from a table, before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow<T = f64> {
    pub left: T,
    pub right: T,
    pub delta_l: u8,
    pub delta_i: u8,
    pub delta_r: u8,
    pub covariates: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f64> {
    observations: Vec<Observation<T>>,
    n_covariates: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(observations: Vec<Observation<T>>) -> Result<Self> {
        let n_covariates = observations.first().map(|o| o.covariates.len()).ok_or(Error::EmptyDataset)?;
        for (i, o) in observations.iter().enumerate() {
            if o.covariates.len() != n_covariates {
                return Err(Error::Ingest {
                    row: i + 1,
                    message: format!("expected {n_covariates} covariates, found {}", o.covariates.len()),
                });
            }
        }
        Ok(Dataset { observations, n_covariates })
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// New dataset made of the given rows, repeats allowed.
    pub fn select(&self, indices: &[usize]) -> Dataset<T> {
        Dataset {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            n_covariates: self.n_covariates,
        }
    }

    pub fn count(&self, kind: Censoring) -> usize {
        self.observations.iter().filter(|o| o.censoring == kind).count()
    }
}

/// Validates raw rows and resolves the placeholder endpoints.
///
/// Errors carry the 1-based index of the first offending row.
pub fn canonicalize<T: Scalar>(rows: &[RawRow<T>]) -> Result<Dataset<T>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let censoring = Censoring::from_indicators(r.delta_l, r.delta_i, r.delta_r).ok_or_else(|| Error::Ingest {
            row,
            message: format!(
                "censoring indicators ({}, {}, {}) must be 0/1 and sum to one",
                r.delta_l, r.delta_i, r.delta_r
            ),
        })?;
        let obs = Observation::from_row(r.left, r.right, censoring, r.covariates.clone())
            .map_err(|message| Error::Ingest { row, message })?;
        out.push(obs);
    }
    Dataset::new(out)
}

/// Number of grid points lying at or below `L` and `R` for one observation.
///
/// For a left-censored row `upper == lower`; for a right-censored row
/// `lower == 0`. Both are unused by the likelihood in those cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsSpan {
    pub lower: usize,
    pub upper: usize,
}

/// Sorted distinct finite inspection times with per-observation index ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct InspectionGrid<T = f64> {
    times: Vec<T>,
    spans: Vec<ObsSpan>,
}

impl<T: Scalar> InspectionGrid<T> {
    pub fn build(data: &Dataset<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut times: Vec<T> = data
            .observations()
            .iter()
            .flat_map(|o| [o.lower(), o.upper()])
            .flatten()
            .filter(|t| t.is_finite())
            .collect();
        if times.is_empty() {
            return Err(Error::NoFiniteEndpoint);
        }
        // Exact equality: values come from recorded visit times.
        times.sort_by(|a, b| a.partial_cmp(b).expect("times validated as non-NaN"));
        times.dedup();

        let count_le = |t: T| times.partition_point(|&x| x <= t);
        let spans = data
            .observations()
            .iter()
            .map(|o| match o.censoring {
                Censoring::Left => {
                    let l = count_le(o.right);
                    ObsSpan { lower: l, upper: l }
                }
                Censoring::Interval => ObsSpan { lower: count_le(o.left), upper: count_le(o.right) },
                Censoring::Right => ObsSpan { lower: 0, upper: count_le(o.left) },
            })
            .collect();
        Ok(InspectionGrid { times, spans })
    }

    /// A grid for evaluating `Lambda` only, without observation spans.
    pub fn from_times(mut times: Vec<T>) -> Self {
        times.retain(|t| t.is_finite());
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        InspectionGrid { times, spans: Vec::new() }
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn m(&self) -> usize {
        self.times.len()
    }

    pub fn span(&self, obs: usize) -> ObsSpan {
        self.spans[obs]
    }

    /// `{k : t_k <= L_i}`
    pub fn at_or_below_lower(&self, obs: usize) -> Range<usize> {
        0..self.spans[obs].lower
    }

    /// `{k : L_i < t_k <= R_i}`
    pub fn between(&self, obs: usize) -> Range<usize> {
        let s = self.spans[obs];
        s.lower..s.upper
    }

    /// `{k : t_k <= R_i}`
    pub fn at_or_below_upper(&self, obs: usize) -> Range<usize> {
        0..self.spans[obs].upper
    }

    /// Number of grid points `<= t`.
    pub fn count_le(&self, t: T) -> usize {
        self.times.partition_point(|&x| x <= t)
    }
}

/// `Lambda(t) = sum_{k: t_k <= t} exp(eta_k)`.
pub fn cumulative_hazard<T: Scalar>(grid: &InspectionGrid<T>, eta: &[T], t: T) -> T {
    eta[..grid.count_le(t)].iter().fold(T::zero(), |acc, &e| acc + e.exp())
}

type CumulativeFn<T> = dyn Fn(&[T], T) -> Vec<T> + Send + Sync;

/// The cumulative covariate integral `Z_x(t) = int_0^t X(s) ds`.
#[derive(Clone)]
pub enum CovariateProcess<T = f64> {
    /// `Z_x(t) = X t`.
    TimeIndependent,
    /// Arbitrary cumulative integral, called as `f(x, t)`.
    UserSupplied(Arc<CumulativeFn<T>>),
}

impl<T> fmt::Debug for CovariateProcess<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateProcess::TimeIndependent => f.write_str("TimeIndependent"),
            CovariateProcess::UserSupplied(_) => f.write_str("UserSupplied(..)"),
        }
    }
}

impl<T: Scalar> CovariateProcess<T> {
    pub fn user<F>(f: F) -> Self
    where
        F: Fn(&[T], T) -> Vec<T> + Send + Sync + 'static,
    {
        CovariateProcess::UserSupplied(Arc::new(f))
    }

    /// `X(t) = x e^t`, so `Z_x(t) = x (e^t - 1)`.
    pub fn exponential() -> Self {
        Self::user(|x: &[T], t: T| {
            let g = t.exp_m1();
            x.iter().map(|&v| v * g).collect()
        })
    }

    pub fn cumulative(&self, x: &[T], t: T) -> Vec<T> {
        match self {
            CovariateProcess::TimeIndependent => x.iter().map(|&v| v * t).collect(),
            CovariateProcess::UserSupplied(f) => f(x, t),
        }
    }
}

/// Parameter state `(eta, beta)` with `lambda = exp(eta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f64> {
    pub eta: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(eta: Vec<T>, beta: Vec<T>) -> Self {
        ModelParams { eta, beta }
    }

    /// `eta_k = log(1/m)` and `beta_j = 0.01`.
    pub fn initial(m: usize, p: usize) -> Self {
        let e = (T::one() / lit::<T>(m as f64)).ln();
        ModelParams { eta: vec![e; m], beta: vec![lit(0.01); p] }
    }

    pub fn lambda(&self) -> Vec<T> {
        self.eta.iter().map(|e| e.exp()).collect()
    }
}

/// `S(t; x) = exp(-(Lambda(t) + beta' Z_x(t)))`.
pub fn survival<T: Scalar>(
    grid: &InspectionGrid<T>,
    params: &ModelParams<T>,
    process: &CovariateProcess<T>,
    x: &[T],
    t: T,
) -> Result<T> {
    if x.len() != params.beta.len() {
        return Err(Error::Dimension(format!("{} covariates for {} coefficients", x.len(), params.beta.len())));
    }
    let z = process.cumulative(x, t);
    let h = cumulative_hazard(grid, &params.eta, t) + dot(&params.beta, &z);
    if h < T::zero() {
        return Err(Error::NegativeCumulativeHazard { time: to_f64(t), value: to_f64(h) });
    }
    Ok((-h).exp())
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Dataset, grid and the covariate integrals at each observation's
/// inspection times, precomputed once per fit.
#[derive(Clone, Debug)]
pub struct Design<T = f64> {
    grid: InspectionGrid<T>,
    kinds: Vec<Censoring>,
    p: usize,
    z_lower: Vec<T>,
    z_upper: Vec<T>,
    z_between: Vec<T>,
}

impl<T: Scalar> Design<T> {
    pub fn new(data: &Dataset<T>, process: &CovariateProcess<T>) -> Result<Self> {
        let grid = InspectionGrid::build(data)?;
        let p = data.n_covariates();
        let n = data.len();
        let mut z_lower = vec![T::zero(); n * p];
        let mut z_upper = vec![T::zero(); n * p];
        let mut z_between = vec![T::zero(); n * p];
        for (i, o) in data.observations().iter().enumerate() {
            let zl = o.lower().map(|l| process.cumulative(&o.covariates, l));
            let zr = o.upper().map(|r| process.cumulative(&o.covariates, r));
            for z in [&zl, &zr].into_iter().flatten() {
                if z.len() != p {
                    return Err(Error::Dimension(format!("covariate process returned {} values, expected {p}", z.len())));
                }
            }
            let row = i * p..(i + 1) * p;
            if let Some(zl) = &zl {
                z_lower[row.clone()].copy_from_slice(zl);
            }
            if let Some(zr) = &zr {
                z_upper[row.clone()].copy_from_slice(zr);
            }
            if let (Some(zl), Some(zr)) = (&zl, &zr) {
                for (dst, (&a, &b)) in z_between[row].iter_mut().zip(zl.iter().zip(zr)) {
                    *dst = b - a;
                }
            }
        }
        Ok(Design { grid, kinds: data.observations().iter().map(|o| o.censoring).collect(), p, z_lower, z_upper, z_between })
    }

    pub fn grid(&self) -> &InspectionGrid<T> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.kinds.len()
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self, obs: usize) -> Censoring {
        self.kinds[obs]
    }

    /// `Z_x(L_i)`
    pub fn z_lower(&self, obs: usize) -> &[T] {
        &self.z_lower[obs * self.p..(obs + 1) * self.p]
    }

    /// `Z_x(R_i)`
    pub fn z_upper(&self, obs: usize) -> &[T] {
        &self.z_upper[obs * self.p..(obs + 1) * self.p]
    }

    /// `Z_x(R_i) - Z_x(L_i)`
    pub fn z_between(&self, obs: usize) -> &[T] {
        &self.z_between[obs * self.p..(obs + 1) * self.p]
    }

    pub fn check_params(&self, params: &ModelParams<T>) -> Result<()> {
        if params.eta.len() != self.m() || params.beta.len() != self.p {
            return Err(Error::Dimension(format!(
                "params have {} baseline jumps and {} coefficients; design has m = {}, p = {}",
                params.eta.len(),
                params.beta.len(),
                self.m(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Output of a fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams<f64>,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Inspection times the baseline jumps sit on.
    pub grid: Vec<f64>,
    /// Log-likelihood after each sweep (index 0 is the starting value).
    pub loglik_trace: Vec<f64>,
    /// Coordinate updates skipped because the curvature was zero.
    #[serde(default)]
    pub zero_curvature_skips: usize,
}
