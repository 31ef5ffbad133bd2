mod common;

use common::*;
use kerule_core::evaluate::*;
use kerule_core::exec::Sequential;
use kerule_core::filters::{CanonicalKf, Task};
use kerule_core::simulators::{gen_lidar, LidarSimSpec};
use kerule_core::statespace::{CovMat, ModelFamily};

fn series(name: &str, errors: Vec<Vec<f64>>) -> ErrorSeries {
    let ids = (0..errors.len() as u64).collect();
    ErrorSeries::new(name, Task::Se, "synthetic", ids, errors).unwrap()
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&series("a", vec![vec![0.0; 5]; 3])), 0.0);
    let v = rmse(&series("a", vec![vec![3.0, 4.0]]));
    assert!((v - 12.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn rmse_matches_two_pass_oracle() {
    let mut r = rng(1);
    for _ in 0..50 {
        let errs: Vec<Vec<f64>> = (0..12).map(|_| (0..30).map(|_| normal(&mut r).abs() * 5.0).collect()).collect();
        let s = series("a", errs.clone());
        // first pass counts, second accumulates
        let n: usize = errs.iter().map(Vec::len).sum();
        let ss: f64 = errs.iter().flatten().map(|e| e * e).sum();
        let oracle = (ss / n as f64).sqrt();
        assert!((rmse(&s) - oracle).abs() <= 1e-12 * oracle);
    }
}

#[test]
fn rmse_is_order_invariant() {
    let errs = vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0], vec![0.5]];
    let mut rev = errs.clone();
    rev.reverse();
    assert!((rmse(&series("a", errs)) - rmse(&series("a", rev))).abs() < 1e-15);
}

#[test]
fn invalid_errors_are_rejected() {
    assert_eq!(ErrorSeries::new("a", Task::Se, "d", vec![0], vec![vec![-1.0]]), Err(EvalError::InvalidErrors));
    assert_eq!(ErrorSeries::new("a", Task::Se, "d", vec![0], vec![vec![f64::NAN]]), Err(EvalError::InvalidErrors));
}

fn z_oracle(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    mean / var.sqrt() * n.sqrt()
}

#[test]
fn z_test_matches_oracle_and_is_antisymmetric() {
    let mut r = rng(2);
    for _ in 0..100 {
        let a: Vec<Vec<f64>> = (0..40).map(|_| vec![normal(&mut r).abs() + 1.0; 3]).collect();
        let b: Vec<Vec<f64>> = (0..40).map(|_| vec![normal(&mut r).abs(); 3]).collect();
        let (sa, sb) = (series("a", a.clone()), series("b", b.clone()));
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x[0] * x[0] - y[0] * y[0]).collect();
        let ab = z_test(&sa, &sb).unwrap();
        let ba = z_test(&sb, &sa).unwrap();
        assert!((ab.z - z_oracle(&d)).abs() <= 1e-12 * ab.z.abs().max(1.0));
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p, ba.p);
    }
}

#[test]
fn z_test_examples() {
    let a = series("a", vec![vec![1.0, 2.0]; 5]);
    assert_eq!(z_test(&a, &a), Err(EvalError::ZeroVariance));

    let d = [2.0 + 1e-3, 2.0 - 1e-3, 2.0 + 1e-3, 2.0 - 1e-3];
    let z = z_from_deltas(&d).unwrap();
    let sd = (4.0e-6f64 / 3.0).sqrt();
    assert!((z.z - 2.0 / sd * 2.0).abs() < 1e-6 * z.z);
    assert!(z.z > 3000.0);

    for seed in 0..20 {
        let mut r = rng(seed);
        let d: Vec<f64> = (0..100).map(|_| 1.0 + normal(&mut r)).collect();
        let z = z_from_deltas(&d).unwrap().z;
        assert!((7.0..=13.0).contains(&z), "seed {seed}: z {z}");
    }
}

#[test]
fn z_test_pairs_by_id() {
    let a = ErrorSeries::new("a", Task::Se, "d", vec![2, 0, 1], vec![vec![3.0], vec![1.0], vec![2.5]]).unwrap();
    let b = ErrorSeries::new("b", Task::Se, "d", vec![0, 1, 2], vec![vec![0.5], vec![2.0], vec![1.0]]).unwrap();
    let z = z_test(&a, &b).unwrap();
    assert!((z.z - z_oracle(&[1.0 - 0.25, 6.25 - 4.0, 9.0 - 1.0])).abs() < 1e-12);
    let c = ErrorSeries::new("c", Task::Se, "d", vec![0, 1, 5], vec![vec![1.0]; 3]).unwrap();
    assert!(matches!(z_test(&a, &c), Err(EvalError::Unpaired(_))));
    let short = ErrorSeries::new("s", Task::Se, "d", vec![0], vec![vec![1.0]]).unwrap();
    assert!(matches!(z_test(&short, &short), Err(EvalError::TooFewTrajectories(_))));
}

#[test]
fn quantile_curve_properties() {
    let s = series("a", vec![vec![3.0, 1.0], vec![2.0, 5.0, 4.0]]);
    let qs: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let curve = quantile_curve(&s, &qs).unwrap();
    assert_eq!(curve[0].1, 1.0);
    assert_eq!(curve[20].1, 25.0);
    assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    assert_eq!(quantile_curve(&s, &[1.5]), Err(EvalError::BadQuantile(1.5)));
}

#[test]
fn error_series_from_filter_runs() {
    let data = gen_lidar(&LidarSimSpec::default().with_splits(5, 0, 0), 1).unwrap().train;
    let model = ModelFamily::Lidar.model(CovMat::identity(4), CovMat::identity(2)).unwrap();
    let s = error_series("kf", "lidar", &data, &model, &CanonicalKf, Task::Se, &Sequential).unwrap();
    assert_eq!(s.len(), 5);
    assert_eq!(s.step_count(), 5 * 100);
    assert_eq!(s.ids(), &[0, 1, 2, 3, 4]);
    assert!(rmse(&s) > 0.0);
}
