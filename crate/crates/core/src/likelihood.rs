//! Observed-data log-likelihood, the `A1`/`A2` helpers and the MM minorizer.
//!
//! With `S(t; x) = exp(-u(t, x))` the log-likelihood of one subject is
//!
//! ```text
//! dL log(1 - e^{-uL}) - dI uL + dI log(1 - e^{-uLR}) - dR uR
//! ```
//!
//! and these four sums are reported separately as `l1..l4`.

use crate::error::{Error, Result};
use crate::model::{dot, lit, to_f64, Censoring, Design, ModelParams, Scalar};

/// `A1(u) = e^{-u} / (1 - e^{-u})`.
pub fn a1<T: Scalar>(u: T) -> Result<T> {
    positive_arg("a1", u)?;
    Ok(a1_unchecked(u))
}

/// `A2(u) = e^{-u} / (2 (1 - e^{-u})^2)`.
pub fn a2<T: Scalar>(u: T) -> Result<T> {
    positive_arg("a2", u)?;
    Ok(a2_unchecked(u))
}

/// `log(1 - e^{-u})` for `u > 0`, accurate for tiny `u`.
pub fn log1mexp<T: Scalar>(u: T) -> Result<T> {
    positive_arg("log1mexp", u)?;
    Ok(log1mexp_unchecked(u))
}

fn positive_arg<T: Scalar>(what: &'static str, u: T) -> Result<()> {
    if u > T::zero() {
        Ok(())
    } else {
        Err(Error::Domain { what, value: to_f64(u) })
    }
}

#[inline]
pub(crate) fn a1_unchecked<T: Scalar>(u: T) -> T {
    u.exp_m1().recip()
}

#[inline]
pub(crate) fn a2_unchecked<T: Scalar>(u: T) -> T {
    // e^{-u}/(1-e^{-u})^2 = 1/((e^u - 1)(1 - e^{-u}))
    let d = u.exp_m1() * -(-u).exp_m1();
    (lit::<T>(2.0) * d).recip()
}

#[inline]
pub(crate) fn log1mexp_unchecked<T: Scalar>(u: T) -> T {
    if u > lit(745.0) {
        T::zero()
    } else if u < lit(std::f64::consts::LN_2) {
        (-(-u).exp_m1()).ln()
    } else {
        (-(-u).exp()).ln_1p()
    }
}

/// `num / den`, with `0/0` defined as 0. A zero denominator with a nonzero
/// numerator is a domain error.
pub fn ratio0<T: Scalar>(num: T, den: T) -> Result<T> {
    if den == T::zero() {
        if num == T::zero() {
            Ok(T::zero())
        } else {
            Err(Error::Domain { what: "ratio with zero denominator", value: to_f64(num) })
        }
    } else {
        Ok(num / den)
    }
}

/// The cumulative terms of one observation. Entries not used by its censoring
/// type are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UTerms<T = f64> {
    /// `u(L, X) = Lambda(L) + beta' Z(L)`
    pub ul: Option<T>,
    /// `u(L, R, X) = Lambda(R) - Lambda(L) + beta' (Z(R) - Z(L))`
    pub ulr: Option<T>,
    /// `u(R, X) = Lambda(R) + beta' Z(R)`
    pub ur: Option<T>,
}

pub(crate) fn prefix_sums<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len() + 1);
    let mut acc = T::zero();
    out.push(acc);
    for &v in x {
        acc = acc + v;
        out.push(acc);
    }
    out
}

/// Evaluates the cumulative terms of every observation.
///
/// A term entering `log(1 - e^{-u})` must be strictly positive and a term
/// entering linearly must be nonnegative, otherwise
/// [`Error::NonPositiveHazard`] names the observation (0-based).
pub fn u_terms<T: Scalar>(design: &Design<T>, params: &ModelParams<T>) -> Result<Vec<UTerms<T>>> {
    design.check_params(params)?;
    let lam = params.lambda();
    let cum = prefix_sums(&lam);
    let beta = &params.beta;
    let grid = design.grid();
    let bad = |obs: usize, v: T| Error::NonPositiveHazard { obs, value: to_f64(v) };
    let mut out = Vec::with_capacity(design.n());
    for i in 0..design.n() {
        let span = grid.span(i);
        let terms = match design.kind(i) {
            Censoring::Left => {
                let ul = cum[span.lower] + dot(beta, design.z_lower(i));
                if !(ul > T::zero() && ul.is_finite()) {
                    return Err(bad(i, ul));
                }
                UTerms { ul: Some(ul), ulr: None, ur: None }
            }
            Censoring::Interval => {
                let ul = cum[span.lower] + dot(beta, design.z_lower(i));
                // Summed directly: a difference of prefix sums loses the
                // small masses that matter inside log(1 - e^{-u}).
                let mass = lam[span.lower..span.upper].iter().fold(T::zero(), |a, &v| a + v);
                let ulr = mass + dot(beta, design.z_between(i));
                if !(ul >= T::zero() && ul.is_finite()) {
                    return Err(bad(i, ul));
                }
                if !(ulr > T::zero() && ulr.is_finite()) {
                    return Err(bad(i, ulr));
                }
                UTerms { ul: Some(ul), ulr: Some(ulr), ur: Some(ul + ulr) }
            }
            Censoring::Right => {
                let ur = cum[span.upper] + dot(beta, design.z_upper(i));
                if !(ur >= T::zero() && ur.is_finite()) {
                    return Err(bad(i, ur));
                }
                UTerms { ul: None, ulr: None, ur: Some(ur) }
            }
        };
        out.push(terms);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLik<T = f64> {
    /// `sum dL log(1 - e^{-uL})`
    pub l1: T,
    /// `-sum dI uL`
    pub l2: T,
    /// `sum dI log(1 - e^{-uLR})`
    pub l3: T,
    /// `-sum dR uR`
    pub l4: T,
}

impl<T: Scalar> LogLik<T> {
    pub fn total(&self) -> T {
        self.l1 + self.l2 + self.l3 + self.l4
    }
}

pub(crate) fn loglik_from_terms<T: Scalar>(terms: &[UTerms<T>]) -> LogLik<T> {
    let mut ll = LogLik { l1: T::zero(), l2: T::zero(), l3: T::zero(), l4: T::zero() };
    for t in terms {
        match (t.ul, t.ulr, t.ur) {
            (Some(ul), None, None) => ll.l1 = ll.l1 + log1mexp_unchecked(ul),
            (Some(ul), Some(ulr), _) => {
                ll.l2 = ll.l2 - ul;
                ll.l3 = ll.l3 + log1mexp_unchecked(ulr);
            }
            (None, None, Some(ur)) => ll.l4 = ll.l4 - ur,
            _ => unreachable!("u_terms always fills a censoring-consistent pattern"),
        }
    }
    ll
}

pub fn loglik<T: Scalar>(design: &Design<T>, params: &ModelParams<T>) -> Result<LogLik<T>> {
    Ok(loglik_from_terms(&u_terms(design, params)?))
}

/// One `log(1 - e^{-u})` term minorized at the anchor.
///
/// `lam`/`lam0` are the baseline masses entering `u`, `b`/`b0` the covariate
/// parts `beta' Z`. The baseline masses and `beta' Z` are treated as the
/// components of `u` for the Jensen steps.
fn minorize_log_term<T: Scalar>(lam: &[T], lam0: &[T], b: T, b0: T) -> Result<T> {
    let s = lam.iter().fold(T::zero(), |a, &v| a + v);
    let s0 = lam0.iter().fold(T::zero(), |a, &v| a + v);
    let u = s + b;
    let u0 = s0 + b0;
    if !(u0 > T::zero()) {
        return Err(Error::Domain { what: "minorizer anchor u0", value: to_f64(u0) });
    }
    let two = lit::<T>(2.0);
    let (a1v, a2v) = (a1_unchecked(u0), a2_unchecked(u0));
    let mut q = T::zero();
    let mut v = T::zero();
    for (&l, &l0) in lam.iter().zip(lam0) {
        q = q + u0 / l0 * l * l;
        v = v + l0 * l0 / (u0 * l);
    }
    if b != T::zero() || b0 != T::zero() {
        if !(b0 > T::zero()) {
            return Err(Error::Domain { what: "minorizer anchor beta'Z", value: to_f64(b0) });
        }
        if !(b > T::zero()) {
            return Err(Error::Domain { what: "minorizer beta'Z", value: to_f64(b) });
        }
    }
    q = q + u0 * ratio0(b * b, b0)?;
    v = v + ratio0(b0 * b0, u0 * b)?;
    Ok(log1mexp_unchecked(u0) - a1v * u0 - a2v * u0 * u0 + two + (a1v + two * a2v * u0) * u - a2v * q - u / u0 - v)
}

/// The MM surrogate `l_dagger(params | anchor)`.
///
/// Equals the log-likelihood at `params == anchor` and lies below it
/// elsewhere on the valid domain. Every `beta' Z` in a denominator must be
/// positive unless `Z = 0`.
pub fn minorizer<T: Scalar>(design: &Design<T>, params: &ModelParams<T>, anchor: &ModelParams<T>) -> Result<T> {
    design.check_params(params)?;
    design.check_params(anchor)?;
    // Anchor validity (positive u0) is checked through the likelihood.
    let anchor_terms = u_terms(design, anchor)?;
    let lam = params.lambda();
    let lam0 = anchor.lambda();
    let cum = prefix_sums(&lam);
    let grid = design.grid();
    let mut total = T::zero();
    for (i, _) in anchor_terms.iter().enumerate() {
        let span = grid.span(i);
        match design.kind(i) {
            Censoring::Left => {
                let r = span.lower;
                let z = design.z_lower(i);
                total = total + minorize_log_term(&lam[..r], &lam0[..r], dot(&params.beta, z), dot(&anchor.beta, z))?;
            }
            Censoring::Interval => {
                total = total - (cum[span.lower] + dot(&params.beta, design.z_lower(i)));
                let r = span.lower..span.upper;
                let z = design.z_between(i);
                total = total
                    + minorize_log_term(&lam[r.clone()], &lam0[r], dot(&params.beta, z), dot(&anchor.beta, z))?;
            }
            Censoring::Right => {
                total = total - (cum[span.upper] + dot(&params.beta, design.z_upper(i)));
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{canonicalize, CovariateProcess, RawRow};

    fn one_obs(left: f64, right: f64, d: (u8, u8, u8), x: f64) -> Design {
        let data = canonicalize(&[RawRow { left, right, delta_l: d.0, delta_i: d.1, delta_r: d.2, covariates: vec![x] }])
            .unwrap();
        Design::new(&data, &CovariateProcess::TimeIndependent).unwrap()
    }

    #[test]
    fn a1_a2_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((a1(ln2).unwrap() - 1.0).abs() < 1e-15);
        assert!((a2(ln2).unwrap() - 1.0).abs() < 1e-14);
        assert!(a1(50.0).unwrap() < 1e-20);
        assert!(a2(50.0).unwrap() < 1e-20);
        // high-precision reference values
        assert!((a1(0.7f64).unwrap() - 0.986_433_863_634_463).abs() < 1e-14);
        assert!((a2(0.7f64).unwrap() - 0.979_742_815_479_639).abs() < 1e-14);
        assert!(matches!(a1(0.0), Err(Error::Domain { .. })));
        assert!(matches!(a2(-1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn log1mexp_regimes() {
        assert_eq!(log1mexp(800.0).unwrap(), 0.0);
        let u = 1e-10f64;
        // log(1 - e^{-u}) = log u - u/2 + u^2/24 + ...
        assert!((log1mexp(u).unwrap() - (u.ln() - u / 2.0)).abs() < 1e-15);
        assert!((log1mexp(2.0f64).unwrap() - (1.0 - (-2.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn ratio0_rules() {
        assert_eq!(ratio0(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(ratio0(1.0, 2.0).unwrap(), 0.5);
        assert!(ratio0(1.0, 0.0).is_err());
    }

    #[test]
    fn interval_example() {
        let d = one_obs(1.0, 2.0, (0, 1, 0), 1.0);
        let p = ModelParams::new(vec![0.1f64.ln(), 0.2f64.ln()], vec![0.5]);
        let t = u_terms(&d, &p).unwrap()[0];
        assert!((t.ul.unwrap() - 0.6).abs() < 1e-14);
        assert!((t.ulr.unwrap() - 0.7).abs() < 1e-14);
        assert!((t.ur.unwrap() - t.ul.unwrap() - t.ulr.unwrap()).abs() < 1e-15);
        let ll = loglik(&d, &p).unwrap();
        assert!((ll.total() - (-1.286_341_002_808_385)).abs() < 1e-14);
        assert_eq!(ll.l1, 0.0);
        assert_eq!(ll.l4, 0.0);

        let p0 = ModelParams::new(p.eta.clone(), vec![0.0]);
        let t = u_terms(&d, &p0).unwrap()[0];
        assert!((t.ul.unwrap() - 0.1).abs() < 1e-15);
        assert!((t.ulr.unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_component_cases() {
        // right-censored at 1 with lambda_1 = 0.5, beta = 0 -> l = -0.5
        let d = one_obs(1.0, f64::INFINITY, (0, 0, 1), 0.0);
        let p = ModelParams::new(vec![0.5f64.ln()], vec![0.0]);
        assert!((loglik(&d, &p).unwrap().total() + 0.5).abs() < 1e-15);
        // left-censored with uL = ln 2 -> log(1/2)
        let d = one_obs(0.0, 1.0, (1, 0, 0), 0.0);
        let p = ModelParams::new(vec![std::f64::consts::LN_2.ln()], vec![0.3]);
        let ll = loglik(&d, &p).unwrap();
        assert!((ll.total() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(ll.l2 + ll.l3 + ll.l4, 0.0);
    }

    #[test]
    fn positivity_violation_is_reported() {
        let d = one_obs(1.0, 2.0, (0, 1, 0), 1.0);
        let p = ModelParams::new(vec![0.1f64.ln(), 0.2f64.ln()], vec![-0.5]);
        assert!(matches!(u_terms(&d, &p), Err(Error::NonPositiveHazard { obs: 0, .. })));
    }

    #[test]
    fn minorizer_touches_at_anchor() {
        let d = one_obs(1.0, 2.0, (0, 1, 0), 1.0);
        let p = ModelParams::new(vec![0.1f64.ln(), 0.2f64.ln()], vec![0.5]);
        let m = minorizer(&d, &p, &p).unwrap();
        let l = loglik(&d, &p).unwrap().total();
        assert!((m - l).abs() < 1e-12, "{m} vs {l}");
    }

    #[test]
    fn generic_kernels_in_f32() {
        let data = canonicalize(&[RawRow::<f32> {
            left: 1.0,
            right: 2.0,
            delta_l: 0,
            delta_i: 1,
            delta_r: 0,
            covariates: vec![1.0],
        }])
        .unwrap();
        let d = Design::new(&data, &CovariateProcess::TimeIndependent).unwrap();
        let p = ModelParams::new(vec![0.1f32.ln(), 0.2f32.ln()], vec![0.5]);
        assert!((loglik(&d, &p).unwrap().total() + 1.286_341).abs() < 1e-5);
    }
}
