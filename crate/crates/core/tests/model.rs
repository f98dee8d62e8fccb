mod common;

use arm_mm::{canonicalize, cumulative_hazard, survival, Censoring, CovariateProcess, Error, InspectionGrid, ModelParams, RawRow};
use proptest::prelude::*;

fn raw(left: f64, right: f64, d: (u8, u8, u8), x: f64) -> RawRow {
    RawRow { left, right, delta_l: d.0, delta_i: d.1, delta_r: d.2, covariates: vec![x] }
}

#[test]
fn bcos_listing_rows() {
    let data = canonicalize(&[raw(45.0, f64::INFINITY, (0, 0, 1), 0.0), raw(6.0, 10.0, (0, 1, 0), 0.0), raw(0.0, 7.0, (1, 0, 0), 0.0)]).unwrap();
    let o = data.observations();
    assert_eq!(o[0].censoring, Censoring::Right);
    assert_eq!((o[0].lower(), o[0].upper()), (None, Some(45.0)));
    assert_eq!(o[1].censoring, Censoring::Interval);
    assert_eq!((o[1].lower(), o[1].upper()), (Some(6.0), Some(10.0)));
    assert_eq!(o[2].censoring, Censoring::Left);
    assert_eq!((o[2].lower(), o[2].upper()), (Some(7.0), None));
    assert_eq!(o[0].covariates, vec![0.0]);
}

#[test]
fn rejections_name_the_row() {
    let bad = [raw(1.0, 2.0, (0, 1, 0), 0.0), raw(3.0, 2.0, (0, 1, 0), 0.0)];
    assert!(matches!(canonicalize(&bad), Err(Error::Ingest { row: 2, .. })));
    let bad = [raw(0.0, 2.0, (1, 1, 0), 0.0)];
    assert!(matches!(canonicalize(&bad), Err(Error::Ingest { row: 1, .. })));
    let bad = [raw(-1.0, 2.0, (0, 1, 0), 0.0)];
    assert!(matches!(canonicalize(&bad), Err(Error::Ingest { row: 1, .. })));
}

fn example1() -> InspectionGrid {
    let rows = [
        raw(0.0, 0.5, (1, 0, 0), 0.0),
        raw(0.0, 5.0, (1, 0, 0), 0.0),
        raw(2.0, 5.0, (0, 1, 0), 0.0),
        raw(1.0, 2.5, (0, 1, 0), 0.0),
        raw(1.5, 2.25, (0, 1, 0), 0.0),
        raw(3.0, 4.2, (0, 1, 0), 0.0),
        raw(2.0, f64::INFINITY, (0, 0, 1), 0.0),
        raw(3.2, f64::INFINITY, (0, 0, 1), 0.0),
    ];
    InspectionGrid::build(&canonicalize(&rows).unwrap()).unwrap()
}

#[test]
fn example_grid_and_cumulative_hazard() {
    let g = example1();
    assert_eq!(g.times(), &[0.5, 1.0, 1.5, 2.0, 2.25, 2.5, 3.0, 3.2, 4.2, 5.0]);
    assert_eq!(g.m(), 10);
    let eta: Vec<f64> = (1..=10).map(|k| f64::from(k).ln()).collect();
    // lambda_k = k
    assert_eq!(cumulative_hazard(&g, &eta, 1.75), 1.0 + 2.0 + 3.0);
    assert_eq!(cumulative_hazard(&g, &eta, 3.5), (1..=8).sum::<i32>() as f64);
    assert_eq!(cumulative_hazard(&g, &eta, 0.25), 0.0);
}

#[test]
fn survival_example() {
    let g = InspectionGrid::from_times(vec![1.0, 2.0]);
    let p = ModelParams::new(vec![0.1f64.ln(), 0.2f64.ln()], vec![0.5]);
    let s = survival(&g, &p, &CovariateProcess::TimeIndependent, &[1.0], 1.0).unwrap();
    assert!((s - (-0.6f64).exp()).abs() < 1e-15);
    let neg = ModelParams::new(p.eta.clone(), vec![-5.0]);
    assert!(matches!(survival(&g, &neg, &CovariateProcess::TimeIndependent, &[1.0], 1.0), Err(Error::NegativeCumulativeHazard { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Index ranges agree with direct comparison against the grid times.
    #[test]
    fn masks_match_direct_comparison(data in common::dataset(1, 1..25)) {
        let g = InspectionGrid::build(&data).unwrap();
        let t = g.times();
        prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
        for (i, o) in data.observations().iter().enumerate() {
            for e in [o.lower(), o.upper()].into_iter().flatten() {
                prop_assert!(t.contains(&e));
            }
            let direct = |pred: &dyn Fn(f64) -> bool| (0..t.len()).filter(|&k| pred(t[k])).collect::<Vec<_>>();
            if let Some(l) = o.lower() {
                prop_assert_eq!(g.at_or_below_lower(i).collect::<Vec<_>>(), direct(&|x| x <= l));
            }
            if let Some(r) = o.upper() {
                prop_assert_eq!(g.at_or_below_upper(i).collect::<Vec<_>>(), direct(&|x| x <= r));
            }
            if o.censoring == Censoring::Interval {
                let (l, r) = (o.left, o.right);
                prop_assert_eq!(g.between(i).collect::<Vec<_>>(), direct(&|x| l < x && x <= r));
            }
        }
    }

    #[test]
    fn grid_is_idempotent(data in common::dataset(1, 1..25)) {
        let g = InspectionGrid::build(&data).unwrap();
        let again = canonicalize(&data.observations().iter().map(|o| {
            let (dl, di, dr) = o.censoring.indicators();
            RawRow { left: o.left, right: o.right, delta_l: dl, delta_i: di, delta_r: dr, covariates: o.covariates.clone() }
        }).collect::<Vec<_>>()).unwrap();
        let rebuilt = InspectionGrid::build(&again).unwrap();
        prop_assert_eq!(rebuilt.times(), g.times());
    }

    #[test]
    fn survival_is_nonincreasing(
        eta in prop::collection::vec(-4.0..1.0f64, 6),
        beta in 0.0..2.0f64,
        x in 0.0..3.0f64,
        mut ts in prop::collection::vec(0.0..5.0f64, 2..20),
    ) {
        let g = InspectionGrid::from_times(vec![0.3, 0.9, 1.4, 2.0, 3.1, 4.4]);
        let p = ModelParams::new(eta, vec![beta]);
        ts.sort_by(f64::total_cmp);
        let s: Vec<f64> = ts.iter().map(|&t| survival(&g, &p, &CovariateProcess::TimeIndependent, &[x], t).unwrap()).collect();
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        let h: Vec<f64> = ts.iter().map(|&t| cumulative_hazard(&g, &p.eta, t)).collect();
        prop_assert!(h.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn generic_f32_aliases() {
    let rows = [RawRow::<f32> { left: 1.0, right: 2.0, delta_l: 0, delta_i: 1, delta_r: 0, covariates: vec![1.0] }];
    let data: arm_mm::DatasetF32 = canonicalize(&rows).unwrap();
    let grid: arm_mm::GridF32 = InspectionGrid::build(&data).unwrap();
    assert_eq!(grid.times(), &[1.0f32, 2.0]);
}
