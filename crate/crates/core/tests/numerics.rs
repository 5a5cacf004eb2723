use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softsense_core::adam::{Adam, AdamConfig};
use softsense_core::ops;
use softsense_core::*;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_examples() {
    let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let b = t(&[&[2.0, 3.0], &[4.0, 5.0]]);
    assert_eq!(ops::matmul(&eye, &b).unwrap(), b);
    assert_eq!(ops::matmul(&t(&[&[1.0, 2.0]]), &t(&[&[3.0], &[4.0]])).unwrap().data(), &[11.0]);
    assert!(matches!(ops::matmul(&b, &t(&[&[1.0, 2.0, 3.0]])), Err(Error::Dimension { .. })));

    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::randn(&[7, 5], 1.0, &mut r);
    let c = Tensor::randn(&[5, 3], 1.0, &mut r);
    let got = ops::matmul(&a, &c).unwrap();
    for i in 0..7 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..5 {
                s += a.get2(i, k) * c.get2(k, j);
            }
            assert!((got.get2(i, j) - s).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_examples() {
    let s = ops::softmax_rows(&t(&[&[0.0, 0.0], &[0.0, 3f64.ln()], &[1000.0, 1001.0]])).unwrap();
    assert_eq!(s.row(0), &[0.5, 0.5]);
    assert!((s.get2(1, 0) - 0.25).abs() < 1e-12 && (s.get2(1, 1) - 0.75).abs() < 1e-12);
    let reference = ops::softmax_rows(&t(&[&[0.0, 1.0]])).unwrap();
    for j in 0..2 {
        assert!((s.get2(2, j) - reference.get2(0, j)).abs() < 1e-12);
    }
    assert!(matches!(ops::softmax_rows(&t(&[&[f64::NAN, 0.0]])), Err(Error::NumericDomain(_))));
}

#[test]
fn layer_norm_examples() {
    let ones = Tensor::ones(&[3]);
    let zeros = Tensor::zeros(&[3]);
    let c = ops::layer_norm(&t(&[&[4.0, 4.0, 4.0]]), &ones, &zeros, 1e-5).unwrap();
    assert_eq!(c.data(), &[0.0, 0.0, 0.0]);
    let x = ops::layer_norm(&t(&[&[1.0, 2.0, 3.0]]), &ones, &zeros, 0.0).unwrap();
    let expect = [-1.224744871391589, 0.0, 1.224744871391589];
    for (a, b) in x.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    let beta = t(&[&[0.5, -1.0, 2.0]]).reshape(&[3]).unwrap();
    let y = ops::layer_norm(&t(&[&[9.0, -3.0, 0.1]]), &zeros, &beta, 1e-5).unwrap();
    assert_eq!(y.data(), beta.data());
    assert!(ops::layer_norm(&t(&[&[1.0, 2.0]]), &ones, &zeros, 1e-5).is_err());
}

#[test]
fn gelu_examples() {
    assert_eq!(ops::gelu_scalar(0.0), 0.0);
    assert!((ops::gelu_scalar(1.0) - 0.8413447460685429).abs() < 1e-12);
    for x in [-3.0, -0.7, 0.2, 1.5, 6.0] {
        assert!((ops::gelu_scalar(x) - ops::gelu_scalar(-x) - x).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_shift_invariant_distributions(row in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
        let n = row.len();
        let a = ops::softmax_rows(&Tensor::new(vec![1, n], row.clone()).unwrap()).unwrap();
        let b = ops::softmax_rows(&Tensor::new(vec![1, n], row.iter().map(|v| v + shift).collect()).unwrap()).unwrap();
        prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.data().iter().all(|&p| p >= 0.0));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_odd_part_is_identity(x in -20.0f64..20.0) {
        prop_assert!((ops::gelu_scalar(x) - ops::gelu_scalar(-x) - x).abs() < 1e-12);
    }
}

fn store() -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("theta", Tensor::zeros(&[2, 2])).unwrap();
    s.insert("frozen", Tensor::ones(&[3])).unwrap();
    s.set_trainable("frozen", false).unwrap();
    s
}

#[test]
fn adam_zero_grads_leave_params_unchanged() {
    let mut s = store();
    s.get_mut("theta").unwrap().data_mut().copy_from_slice(&[0.3, -1.0, 2.0, 0.0]);
    let before = s.clone();
    let mut opt = Adam::new(AdamConfig::default());
    let grads = BTreeMap::from([("theta".to_string(), Tensor::zeros(&[2, 2]))]);
    for _ in 0..3 {
        opt.step(&mut s, &grads).unwrap();
    }
    assert_eq!(s, before);
    assert_eq!(opt.steps_taken(), 3);
}

#[test]
fn adam_first_step_and_determinism() {
    let run = || {
        let mut s = store();
        let mut opt = Adam::new(AdamConfig { lr: 1e-4, ..AdamConfig::default() });
        let grads = BTreeMap::from([("theta".to_string(), Tensor::ones(&[2, 2]))]);
        opt.step(&mut s, &grads).unwrap();
        s
    };
    let s = run();
    for &v in s.get("theta").unwrap().data() {
        assert!((v + 1e-4).abs() < 1e-10);
    }
    assert_eq!(s.get("frozen").unwrap().data(), &[1.0; 3]);
    assert_eq!(s, run());
}

#[test]
fn adam_requires_every_trainable_grad() {
    let mut s = store();
    let mut opt = Adam::new(AdamConfig::default());
    assert!(matches!(opt.step(&mut s, &BTreeMap::new()), Err(Error::MissingGradient(n)) if n == "theta"));
}

#[test]
fn gradients_are_deterministic() {
    let mut s = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    s.insert("w", Tensor::randn(&[6, 4], 1.0, &mut r)).unwrap();
    let x = Tensor::randn(&[5, 6], 1.0, &mut r);
    let run = || {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.param(&s, "w").unwrap();
        let y = g.matmul(xv, w).unwrap();
        let y = g.gelu(y);
        let y = g.softmax_rows(y).unwrap();
        let l = g.sum_squares(y);
        g.backward(l).unwrap();
        g.param_grads()
    };
    assert_eq!(run(), run());
}
