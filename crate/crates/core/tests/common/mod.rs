#![allow(dead_code)]

use arm_mm::{canonicalize, CovariateProcess, Dataset, Design, ModelParams, RawRow};
use proptest::prelude::*;

/// Times on a coarse lattice so that ties between endpoints are common.
fn lattice_time() -> impl Strategy<Value = f64> {
    (1u32..=12).prop_map(|k| f64::from(k) * 0.25)
}

fn row(p: usize) -> impl Strategy<Value = RawRow> {
    (0u8..3, lattice_time(), lattice_time(), prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..2.0f64], p)).prop_map(
        |(kind, a, b, covariates)| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            match kind {
                0 => RawRow { left: 0.0, right: hi, delta_l: 1, delta_i: 0, delta_r: 0, covariates },
                1 if lo < hi => RawRow { left: lo, right: hi, delta_l: 0, delta_i: 1, delta_r: 0, covariates },
                _ => RawRow { left: lo, right: f64::INFINITY, delta_l: 0, delta_i: 0, delta_r: 1, covariates },
            }
        },
    )
}

/// Small case-II datasets with `p` nonnegative covariates.
pub fn dataset(p: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(row(p), n).prop_map(|rows| canonicalize(&rows).expect("generated rows are valid"))
}

pub fn design(data: &Dataset) -> Design {
    Design::new(data, &CovariateProcess::TimeIndependent).unwrap()
}

/// A valid state: every mass positive, every coefficient positive.
pub fn params(m: usize, p: usize) -> impl Strategy<Value = ModelParams> {
    (prop::collection::vec(-3.0..1.0f64, m), prop::collection::vec(0.01..1.5f64, p)).prop_map(|(eta, beta)| ModelParams::new(eta, beta))
}

/// A dataset with its design and two independent valid states.
pub fn dataset_with_states(p: usize) -> impl Strategy<Value = (Design, ModelParams, ModelParams)> {
    dataset(p, 3..14).prop_flat_map(move |data| {
        let d = design(&data);
        let m = d.m();
        (Just(d), params(m, p), params(m, p))
    })
}

/// The path also resolves from the acceptance crate.
pub fn bcos() -> Dataset {
    arm_mm::ingest::read_csv_path(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/bcos.csv")).unwrap()
}

/// Central difference of `f` in coordinate `j` with step `1e-6 (1 + |x_j|)`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
    let h = 1e-6 * (1.0 + x[j].abs());
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[j] += h;
    b[j] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}
