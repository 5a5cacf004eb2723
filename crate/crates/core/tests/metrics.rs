use proptest::prelude::*;
use softsense_core::metrics::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn perfect_prediction() {
    let y = [3.0, -1.0, 7.5, 2.0];
    let r = compute_metrics(&y, &y).unwrap();
    assert_eq!((r.mae, r.rmse, r.r2, r.smape_pct), (0.0, 0.0, 1.0, 0.0));
    assert_eq!(r.mape_pct, Some(0.0));
}

#[test]
fn hand_worked_example() {
    let r = compute_metrics(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 2.0, 4.0]).unwrap();
    assert!(close(r.mae, 0.5, 1e-12));
    assert!(close(r.rmse, 0.5f64.sqrt(), 1e-12));
    assert!(close(r.r2, 0.6, 1e-12));
    // (1/1.5 + 0 + 1/2.5 + 0) / 4
    assert!(close(r.smape_pct, 100.0 * (1.0 / 1.5 + 1.0 / 2.5) / 4.0, 1e-12));
    assert!(close(r.smape_pct, 26.666666666666668, 1e-9));
    assert!(close(r.mape_pct.unwrap(), 100.0 * (1.0 + 1.0 / 3.0) / 4.0, 1e-12));
    assert_eq!((r.count, r.label_mean), (4, 2.5));
}

#[test]
fn degenerate_inputs() {
    let r = compute_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
    assert!(!r.r2_defined);
    assert!(r.r2 <= 0.0);
    let z = compute_metrics(&[0.0, 1.0], &[0.5, 1.0]).unwrap();
    assert_eq!(z.mape_pct, None);
    assert!(z.mae > 0.0);
    assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    assert!(compute_metrics(&[], &[]).is_err());
}

#[test]
fn confusion_examples() {
    let truth = [true, true, true, false, false, false, false, false, false, false];
    let pred = [true, true, false, true, false, false, false, false, false, false];
    let c = Confusion::from_labels(&pred, &truth).unwrap();
    assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 1, tn: 6 });
    let r = c.report();
    assert!(close(r.accuracy, 0.8, 1e-12));
    for v in [r.precision, r.recall, r.f1] {
        assert!(close(v, 2.0 / 3.0, 1e-12));
    }
    let all = classification_metrics(&truth, &truth).unwrap();
    assert_eq!((all.accuracy, all.precision, all.recall, all.f1), (1.0, 1.0, 1.0, 1.0));
    let none = classification_metrics(&[false; 10], &truth).unwrap();
    assert_eq!((none.precision, none.f1, none.recall), (0.0, 0.0, 0.0));
    assert!(classification_metrics(&[true], &[true, false]).is_err());
}

#[test]
fn per_variable_reports_split_interleaved_grid() {
    // two variables, three steps, step-major
    let truth = [true, false, false, false, true, true];
    let pred = [true, false, false, true, false, true];
    let reps = per_variable(&pred, &truth, 2).unwrap();
    assert_eq!(reps[0], classification_metrics(&[true, false, false], &[true, false, true]).unwrap());
    assert_eq!(reps[1], classification_metrics(&[false, true, true], &[false, false, true]).unwrap());
    let avg = macro_average(&reps).unwrap();
    assert!(close(avg.f1, (reps[0].f1 + reps[1].f1) / 2.0, 1e-15));
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(-100.0f64..100.0, n), prop::collection::vec(-100.0f64..100.0, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rmse_dominates_mae_and_smape_is_bounded((y, p) in pairs()) {
        let r = compute_metrics(&y, &p).unwrap();
        prop_assert!(r.rmse >= r.mae - 1e-12);
        prop_assert!(r.mae >= 0.0);
        prop_assert!((0.0..=200.0).contains(&r.smape_pct));
        if r.r2_defined {
            prop_assert!(r.r2 <= 1.0);
        }
    }
}

proptest! {
    #[test]
    fn r2_is_affine_invariant((y, p) in pairs(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let a = compute_metrics(&y, &p).unwrap();
        prop_assume!(a.r2_defined);
        let ty: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
        let tp: Vec<f64> = p.iter().map(|v| v * scale + shift).collect();
        let b = compute_metrics(&ty, &tp).unwrap();
        prop_assert!((a.r2 - b.r2).abs() < 1e-9 * (1.0 + a.r2.abs()));
    }

    #[test]
    fn joint_permutation_leaves_metrics_unchanged((y, p) in pairs(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..y.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = compute_metrics(&y, &p).unwrap();
        let b = compute_metrics(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>(), &idx.iter().map(|&i| p[i]).collect::<Vec<_>>()).unwrap();
        prop_assert!((a.mae - b.mae).abs() < 1e-9);
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
        prop_assert!((a.smape_pct - b.smape_pct).abs() < 1e-9);
        prop_assert!((a.r2 - b.r2).abs() < 1e-9 || !a.r2_defined);
    }
}
