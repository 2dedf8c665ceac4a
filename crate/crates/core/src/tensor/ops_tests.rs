use proptest::prelude::*;

use super::*;
use crate::gradcheck::{self, random_projection};

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn t1(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_identity_and_dot() {
    let mut g = Graph::new();
    let a = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = g.constant(t2(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = g.constant(t2(&[&[1.0, 2.0]]));
    let b = g.constant(t2(&[&[3.0], &[4.0]]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[1, 1]);
    assert_eq!(g.value(c).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
    let b = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let mut rng = RngState::new(3);
    let a0 = Tensor::randn(vec![3, 4], 1.0, &mut rng).unwrap();
    let b0 = Tensor::randn(vec![4, 2], 1.0, &mut rng).unwrap();
    let mut g = Graph::new();
    let a = g.leaf(a0.clone());
    let b = g.constant(b0.clone());
    let c = g.matmul(a, b).unwrap();
    let loss = g.sum_all(c);
    g.backward(loss).unwrap();
    let grad = g.grad(a).unwrap().to_vec();

    // ones(3,2) . b^T: every row equals the row sums of b
    for i in 0..3 {
        for j in 0..4 {
            let expected = b0.get(&[j, 0]) + b0.get(&[j, 1]);
            assert!((grad[i * 4 + j] - expected).abs() < 1e-12);
        }
    }

    // central differences, h = 1e-5
    let h = 1e-5;
    let f = |a: &Tensor| -> f64 {
        let mut g = Graph::new();
        let a = g.constant(a.clone());
        let b = g.constant(b0.clone());
        let c = g.matmul(a, b).unwrap();
        g.value(c).data().iter().sum()
    };
    for k in 0..12 {
        let mut plus = a0.clone();
        plus.data_mut()[k] += h;
        let mut minus = a0.clone();
        minus.data_mut()[k] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        assert!(gradcheck::relative_error(grad[k], numeric) < 1e-6);
    }
}

#[test]
fn batched_matmul_broadcasts_leading_dims() {
    let mut rng = RngState::new(4);
    let a0 = Tensor::randn(vec![2, 3, 4], 1.0, &mut rng).unwrap();
    let b0 = Tensor::randn(vec![4, 5], 1.0, &mut rng).unwrap();
    let mut g = Graph::new();
    let a = g.constant(a0.clone());
    let b = g.constant(b0.clone());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 3, 5]);
    for bi in 0..2 {
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| a0.get(&[bi, i, k]) * b0.get(&[k, j])).sum();
                assert!((g.value(c).get(&[bi, i, j]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t1(&[0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert!(close(g.value(y).data(), &[0.5, 0.5], 1e-15));

    let x = g.constant(t1(&[2f64.ln(), 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert!(close(g.value(y).data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12));

    let x = g.constant(t1(&[1000.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert!(close(g.value(y).data(), &[1.0, 0.0], 1e-12));
}

#[test]
fn softmax_rejects_nan_and_bad_axis() {
    let mut g = Graph::new();
    let x = g.constant(t1(&[f64::NAN, 0.0]));
    assert!(matches!(g.softmax(x, 0), Err(TensorError::NonFinite { .. })));
    let x = g.constant(t1(&[1.0, 0.0]));
    assert!(matches!(g.softmax(x, 1), Err(TensorError::AxisOutOfRange { .. })));
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let a = g.constant(t1(&[1.0, 2.0, 3.0]));
    let b = g.constant(t1(&[2.0, 2.0, 2.0]));
    let c = g.mul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[2.0, 4.0, 6.0]);

    let a = g.constant(Tensor::ones(vec![3, 1, 4]).unwrap());
    let b = g.constant(Tensor::ones(vec![1, 5, 4]).unwrap());
    let c = g.mul(a, b).unwrap();
    assert_eq!(g.shape(c), &[3, 5, 4]);

    let mut rng = RngState::new(0);
    let a0 = Tensor::randn(vec![2, 3], 1.0, &mut rng).unwrap();
    let a = g.constant(a0.clone());
    let z = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
    let c = g.add(a, z).unwrap();
    assert_eq!(g.value(c), &a0);

    let a = g.constant(Tensor::ones(vec![3]).unwrap());
    let b = g.constant(Tensor::ones(vec![4]).unwrap());
    assert!(g.add(a, b).is_err());
}

#[test]
fn broadcast_gradients_reduce_over_expanded_axes() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::ones(vec![3, 1, 2]).unwrap());
    let b = g.leaf(Tensor::full(vec![1, 4, 2], 2.0).unwrap());
    let c = g.mul(a, b).unwrap();
    let loss = g.sum_all(c);
    g.backward(loss).unwrap();
    assert!(g.grad(a).unwrap().iter().all(|&v| v == 8.0));
    assert!(g.grad(b).unwrap().iter().all(|&v| v == 3.0));
}

#[test]
fn layer_norm_dropout_concat_examples() {
    let mut g = Graph::new();
    let x = g.constant(t2(&[&[1.0, 3.0]]));
    let gain = g.constant(Tensor::ones(vec![2]).unwrap());
    let bias = g.constant(Tensor::zeros(vec![2]).unwrap());
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert!(close(g.value(y).data(), &[-1.0, 1.0], 1e-5));
    assert!(g.layer_norm(x, gain, bias, 0.0).is_err());

    let mut rng = RngState::new(9);
    let x0 = Tensor::randn(vec![4, 5], 1.0, &mut rng).unwrap();
    let x = g.constant(x0.clone());
    let y = g.dropout(x, 0.3, &mut rng, false).unwrap();
    assert_eq!(g.value(y), &x0);
    assert!(g.dropout(x, 1.0, &mut rng, true).is_err());

    let a = g.constant(Tensor::zeros(vec![3, 8]).unwrap());
    let b = g.constant(Tensor::ones(vec![3, 8]).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[3, 16]);
    assert_eq!(g.value(c).row(1)[7..9], [0.0, 1.0]);
}

#[test]
fn dropout_training_is_seed_deterministic_and_scaled() {
    let run = |seed| {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(vec![200]).unwrap());
        let mut rng = RngState::new(seed);
        let y = g.dropout(x, 0.3, &mut rng, true).unwrap();
        g.value(y).clone()
    };
    let a = run(5);
    assert_eq!(a, run(5));
    let keep = 1.0 / 0.7;
    assert!(a.data().iter().all(|&v| v == 0.0 || (v - keep).abs() < 1e-15));
    let zeros = a.data().iter().filter(|&&v| v == 0.0).count();
    assert!((30..=90).contains(&zeros), "{zeros} dropped out of 200");
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let input = g.constant(t2(&[&[1.0, 2.0, 3.0, 4.0]]));
    let f = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
    let b = g.constant(Tensor::zeros(vec![1, 1]).unwrap());
    let y = g.conv1d_dynamic(input, f, b, 2, ConvPairing::AllGroups).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2]);
    assert_eq!(g.value(y).data(), &[3.0, 7.0]);

    let f = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap());
    let b = g.constant(Tensor::zeros(vec![1, 2]).unwrap());
    let y = g.conv1d_dynamic(input, f, b, 2, ConvPairing::AllGroups).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 7.0, -1.0, -1.0]);

    let input = g.constant(Tensor::ones(vec![3, 16]).unwrap());
    let f = g.constant(Tensor::ones(vec![2, 4, 4]).unwrap());
    let b = g.constant(Tensor::zeros(vec![2, 1]).unwrap());
    let y = g.conv1d_dynamic(input, f, b, 4, ConvPairing::AllGroups).unwrap();
    assert_eq!(g.shape(y), &[3, 2, 16]);
}

#[test]
fn conv1d_rejects_bad_geometry() {
    let mut g = Graph::new();
    let input = g.constant(Tensor::ones(vec![1, 5]).unwrap());
    let f = g.constant(Tensor::ones(vec![1, 1, 2]).unwrap());
    let b = g.constant(Tensor::zeros(vec![1, 1]).unwrap());
    assert!(g.conv1d_dynamic(input, f, b, 2, ConvPairing::AllGroups).is_err());
    let input = g.constant(Tensor::ones(vec![1, 6]).unwrap());
    assert!(g.conv1d_dynamic(input, f, b, 3, ConvPairing::AllGroups).is_err());
    let input = g.constant(Tensor::ones(vec![2, 4]).unwrap());
    assert!(g.conv1d_dynamic(input, f, b, 2, ConvPairing::RowWise).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::ones(vec![2, 3]).unwrap());
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    // repeated backward accumulates
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0; 6]);
    g.zero_grads();
    assert!(g.grad(x).is_none());

    let mut g = Graph::new();
    let x = g.leaf(t1(&[-1.0, 2.0]));
    let r = g.relu(x);
    let s = g.sum_all(r);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);

    assert!(matches!(g.backward(r), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = RngState::new(21);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::randn(vec![4, 6], 1.0, &mut rng).unwrap());
        let w = g.leaf(Tensor::randn(vec![6, 3], 1.0, &mut rng).unwrap());
        let h = g.matmul(x, w).unwrap();
        let h = g.dropout(h, 0.3, &mut rng, true).unwrap();
        let p = g.softmax(h, 1).unwrap();
        let loss = random_projection(&mut g, p, &mut rng).unwrap();
        g.backward(loss).unwrap();
        (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
    };
    let (a, b) = run();
    let (c, d) = run();
    assert!(a.iter().zip(&c).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(b.iter().zip(&d).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn cross_entropy_values() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(vec![3, 2]).unwrap());
    let l = g.cross_entropy(logits, &[0, 1, 1], &[1.0 / 3.0; 3]).unwrap();
    assert!((g.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);
    assert!(g.cross_entropy(logits, &[0, 2, 1], &[1.0; 3]).is_err());
}

#[test]
fn gradient_suite_per_op() {
    let rows = gradcheck::op_suite(77).unwrap();
    assert!(rows.len() >= 17);
    for r in rows {
        assert!(r.probes >= 100, "{}", r.layer);
        assert!(r.passed, "{}: max rel err {}", r.layer, r.max_rel_err);
    }
}

fn window_sums(row: &[f64], s: usize) -> Vec<f64> {
    row.chunks(s).map(|c| c.iter().sum()).collect()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0f64..50.0, 1..24), cols in 1usize..5) {
        let rows = v.len().div_ceil(cols);
        let mut data = v.clone();
        data.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let y = g.softmax(x, 1).unwrap();
        for r in 0..rows {
            let row = g.value(y).row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn conv_with_ones_filter_is_window_sum(
        s in 1usize..8, windows in 1usize..8, rows in 1usize..4, seed in any::<u64>()
    ) {
        prop_assume!(s * windows <= 64);
        let len = s * windows;
        let mut rng = RngState::new(seed);
        let x = Tensor::randn(vec![rows, len], 1.0, &mut rng).unwrap();
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let f = g.constant(Tensor::ones(vec![1, 1, s]).unwrap());
        let b = g.constant(Tensor::zeros(vec![1, 1]).unwrap());
        let y = g.conv1d_dynamic(input, f, b, s, ConvPairing::AllGroups).unwrap();
        for r in 0..rows {
            let want = window_sums(x.row(r), s);
            let got = &g.value(y).data()[r * windows..(r + 1) * windows];
            prop_assert!(close(got, &want, 1e-12));
        }
    }
}
