//! Nonparametric bootstrap over subjects.
//!
//! Replicate `r` draws its resample from a ChaCha8 stream keyed by
//! `(seed, r)`, so results do not depend on the number of worker threads.
//! Replicates whose fit fails or does not converge are dropped and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{cumulative_hazard, dot, CovariateProcess, Dataset, FitResult, InspectionGrid};
use crate::solver::{fit, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CiType {
    #[serde(rename = "norm")]
    Normal,
    #[serde(rename = "basic")]
    Basic,
    #[serde(rename = "perc")]
    Percentile,
    #[serde(rename = "bca")]
    Bca,
}

impl CiType {
    pub const ALL: [CiType; 4] = [CiType::Normal, CiType::Basic, CiType::Percentile, CiType::Bca];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "norm" | "normal" => Some(CiType::Normal),
            "basic" => Some(CiType::Basic),
            "perc" | "percentile" => Some(CiType::Percentile),
            "bca" => Some(CiType::Bca),
            _ => None,
        }
    }
}

/// Survival probabilities `S(t; x)` to bootstrap for one covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTarget {
    pub label: String,
    pub times: Vec<f64>,
    pub covariates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootConfig {
    pub boot_num: usize,
    pub conf: f64,
    pub ci_types: Vec<CiType>,
    pub survival: Vec<SurvivalTarget>,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for BootConfig {
    fn default() -> Self {
        BootConfig { boot_num: 200, conf: 0.95, ci_types: CiType::ALL.to_vec(), survival: Vec::new(), seed: 1, threads: None }
    }
}

impl BootConfig {
    pub fn validate(&self) -> Result<()> {
        if self.boot_num < 2 {
            return Err(Error::Config(format!("boot_num must be at least 2, got {}", self.boot_num)));
        }
        if !(self.conf > 0.0 && self.conf < 1.0) {
            return Err(Error::Config(format!("conf must lie in (0, 1), got {}", self.conf)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

/// Interval bounds per coordinate for one CI family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiSet {
    pub kind: CiType,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalBoot {
    pub label: String,
    pub times: Vec<f64>,
    pub covariates: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    /// Bounds are clamped to `[0, 1]`.
    pub ci: Vec<CiSet>,
    /// One row per successful replicate.
    pub replicates: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: Vec<f64>,
    /// One row per successful replicate, in replicate order.
    pub replicate_betas: Vec<Vec<f64>>,
    pub boot_se: Vec<f64>,
    pub ci: Vec<CiSet>,
    pub survival: Vec<SurvivalBoot>,
    pub n_failed: usize,
    pub boot_num: usize,
    pub conf: f64,
    pub seed: u64,
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Indices of a size-`n` resample with replacement.
pub fn resample_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn resample<R: Rng>(data: &Dataset, rng: &mut R) -> Dataset {
    data.select(&resample_indices(data.len(), rng))
}

/// `S(t; x)` at several times from a fit, clamped to `[0, 1]`. Times past
/// the last grid point use the last step.
pub fn survival_curve(fit: &FitResult, process: &CovariateProcess, x: &[f64], times: &[f64]) -> Result<Vec<f64>> {
    if x.len() != fit.params.beta.len() {
        return Err(Error::Dimension(format!("{} covariates for {} coefficients", x.len(), fit.params.beta.len())));
    }
    let grid = InspectionGrid::from_times(fit.grid.clone());
    Ok(times
        .iter()
        .map(|&t| {
            let h = cumulative_hazard(&grid, &fit.params.eta, t) + dot(&fit.params.beta, &process.cumulative(x, t));
            (-h).exp().clamp(0.0, 1.0)
        })
        .collect())
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

/// Jackknife acceleration `sum d^3 / (6 (sum d^2)^{3/2})`, `d = mean - theta_(i)`.
pub fn jackknife_acceleration(jack: &[f64]) -> f64 {
    if jack.len() < 2 {
        return 0.0;
    }
    let m = mean(jack);
    let (s2, s3) = jack.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = m - v;
        (a + d * d, b + d * d * d)
    });
    if s2 == 0.0 {
        0.0
    } else {
        s3 / (6.0 * s2.powf(1.5))
    }
}

/// One confidence interval from replicate values.
///
/// `accel` is only used by BCa. The normal interval is bias corrected:
/// `2 est - mean* +- z se`.
pub fn ci_from_replicates(kind: CiType, estimate: f64, replicates: &[f64], conf: f64, accel: f64) -> (f64, f64) {
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let alpha = 1.0 - conf;
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| quantile_sorted(&sorted, p);
    match kind {
        CiType::Normal => {
            let z = std_normal.inverse_cdf(1.0 - alpha / 2.0);
            let center = 2.0 * estimate - mean(replicates);
            let half = z * sample_sd(replicates);
            (center - half, center + half)
        }
        CiType::Basic => (2.0 * estimate - q(1.0 - alpha / 2.0), 2.0 * estimate - q(alpha / 2.0)),
        CiType::Percentile => (q(alpha / 2.0), q(1.0 - alpha / 2.0)),
        CiType::Bca => {
            let b = replicates.len() as f64;
            let below = replicates.iter().filter(|&&v| v < estimate).count() as f64;
            let prop = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
            let z0 = std_normal.inverse_cdf(prop);
            let adjust = |p: f64| {
                let z = std_normal.inverse_cdf(p);
                std_normal.cdf(z0 + (z0 + z) / (1.0 - accel * (z0 + z)))
            };
            (q(adjust(alpha / 2.0)), q(adjust(1.0 - alpha / 2.0)))
        }
    }
}

fn pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    threads
        .map(|t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {t} worker threads: {e}")))
        })
        .transpose()
}

fn run<T: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

struct Replicate {
    beta: Vec<f64>,
    survival: Vec<Vec<f64>>,
}

fn fit_replicate(
    data: &Dataset,
    process: &CovariateProcess,
    solver: &SolverConfig,
    targets: &[SurvivalTarget],
) -> Option<Replicate> {
    let f = fit(data, process, solver).ok().filter(|f| f.converged)?;
    let survival = targets
        .iter()
        .map(|t| survival_curve(&f, process, &t.covariates, &t.times))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    Some(Replicate { beta: f.params.beta, survival })
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn ci_sets(kinds: &[CiType], est: &[f64], reps: &[Vec<f64>], conf: f64, accel: &[f64], clamp: bool) -> Vec<CiSet> {
    kinds
        .iter()
        .map(|&kind| {
            let (lower, upper) = (0..est.len())
                .map(|j| {
                    let (lo, hi) = ci_from_replicates(kind, est[j], &column(reps, j), conf, accel[j]);
                    if clamp {
                        (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
                    } else {
                        (lo, hi)
                    }
                })
                .unzip();
            CiSet { kind, lower, upper }
        })
        .collect()
}

/// Bootstrap SEs and confidence intervals for `beta` and the requested
/// survival probabilities.
///
/// BCa acceleration comes from leave-one-out refits. More than 20% failed
/// replicates is an error.
pub fn boot_analyze(
    data: &Dataset,
    process: &CovariateProcess,
    config: &BootConfig,
    solver: &SolverConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::Config("bootstrap needs at least two observations".into()));
    }
    for t in &config.survival {
        if t.covariates.len() != data.n_covariates() {
            return Err(Error::Dimension(format!(
                "survival target {:?} has {} covariates, data has {}",
                t.label,
                t.covariates.len(),
                data.n_covariates()
            )));
        }
    }
    let base = fit(data, process, solver)?;
    if !base.converged {
        return Err(Error::InvalidState("the fit on the full data did not converge".into()));
    }
    let est_surv = config
        .survival
        .iter()
        .map(|t| survival_curve(&base, process, &t.covariates, &t.times))
        .collect::<Result<Vec<_>>>()?;

    let pool = pool(config.threads)?;
    let reps: Vec<Option<Replicate>> = run(&pool, || {
        (0..config.boot_num)
            .into_par_iter()
            .map(|r| {
                let sample = resample(data, &mut replicate_rng(config.seed, r));
                fit_replicate(&sample, process, solver, &config.survival)
            })
            .collect()
    });
    let n_failed = reps.iter().filter(|r| r.is_none()).count();
    if n_failed * 5 > config.boot_num {
        return Err(Error::UnstableResampling { failed: n_failed, total: config.boot_num });
    }
    let ok: Vec<Replicate> = reps.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::UnstableResampling { failed: n_failed, total: config.boot_num });
    }

    let p = base.params.beta.len();
    let n_targets = config.survival.len();
    let (accel_beta, accel_surv) = if config.ci_types.contains(&CiType::Bca) {
        let jack: Vec<Replicate> = run(&pool, || {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                    fit_replicate(&data.select(&keep), process, solver, &config.survival)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let beta: Vec<f64> = (0..p).map(|j| jackknife_acceleration(&jack.iter().map(|r| r.beta[j]).collect::<Vec<_>>())).collect();
        let surv: Vec<Vec<f64>> = (0..n_targets)
            .map(|t| {
                (0..config.survival[t].times.len())
                    .map(|k| jackknife_acceleration(&jack.iter().map(|r| r.survival[t][k]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        (beta, surv)
    } else {
        (vec![0.0; p], config.survival.iter().map(|t| vec![0.0; t.times.len()]).collect())
    };

    let replicate_betas: Vec<Vec<f64>> = ok.iter().map(|r| r.beta.clone()).collect();
    let boot_se = (0..p).map(|j| sample_sd(&column(&replicate_betas, j))).collect();
    let ci = ci_sets(&config.ci_types, &base.params.beta, &replicate_betas, config.conf, &accel_beta, false);

    let survival = config
        .survival
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let rows: Vec<Vec<f64>> = ok.iter().map(|r| r.survival[t].clone()).collect();
            SurvivalBoot {
                label: target.label.clone(),
                times: target.times.clone(),
                covariates: target.covariates.clone(),
                estimate: est_surv[t].clone(),
                se: (0..target.times.len()).map(|k| sample_sd(&column(&rows, k))).collect(),
                ci: ci_sets(&config.ci_types, &est_surv[t], &rows, config.conf, &accel_surv[t], true),
                replicates: rows,
            }
        })
        .collect();

    Ok(BootstrapResult {
        estimate: base.params.beta,
        replicate_betas,
        boot_se,
        ci,
        survival,
        n_failed,
        boot_num: config.boot_num,
        conf: config.conf,
        seed: config.seed,
    })
}

/// One row of a survival-band table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub time: f64,
    pub group: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Rows `(time, group, estimate, lower, upper)` for one CI family.
pub fn survival_band(result: &BootstrapResult, kind: CiType) -> Vec<BandRow> {
    let mut out = Vec::new();
    for s in &result.survival {
        let Some(ci) = s.ci.iter().find(|c| c.kind == kind) else { continue };
        for (k, &time) in s.times.iter().enumerate() {
            out.push(BandRow { time, group: s.label.clone(), estimate: s.estimate[k], lower: ci.lower[k], upper: ci.upper[k] });
        }
    }
    out
}

pub fn write_band_csv<W: std::io::Write>(rows: &[BandRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
