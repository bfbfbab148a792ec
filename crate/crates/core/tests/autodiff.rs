mod common;

use common::oracles::primitive_cases;
use common::{naive_matmul, random_tensor};
use dpe_nmt::autodiff::{grad_check, AttentionLayout, Graph, Tensor, TensorError};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), naive_matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2).as_slice());
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);

    let x = g.constant(Tensor::zeros(&[2, 3]));
    let y = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(x, y) {
        Err(TensorError::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected a dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_matches_the_triple_loop_on_random_shapes() {
    for (seed, (m, k, n)) in [(1, (1, 1, 1)), (2, (3, 5, 2)), (3, (7, 4, 9)), (4, (16, 33, 8))] {
        let a = random_tensor::<f64>(&[m, k], seed, 1.0);
        let b = random_tensor::<f64>(&[k, n], seed + 100, 1.0);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        assert!(close(g.value(c).data(), &naive_matmul(a.data(), b.data(), m, k, n), 1e-12));
        // Transposed operands go through the same kernel with swapped strides.
        let at = g.transpose(va).unwrap();
        let bt = g.transpose(vb).unwrap();
        let ct = g.matmul(bt, at).unwrap();
        let expected_t = g.value(c).data().to_vec();
        let mut got = vec![0.0; m * n];
        for i in 0..n {
            for j in 0..m {
                got[j * n + i] = g.value(ct).data()[i * m + j];
            }
        }
        assert!(close(&got, &expected_t, 1e-12));
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2], &[0.0, 0.0]));
    let s = g.softmax(x, 1).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    let x = g.constant(t(&[1, 2], &[1000.0, 0.0]));
    let s = g.softmax(x, 1).unwrap();
    assert!(close(g.value(s).data(), &[1.0, 0.0], 1e-12));
    assert!(g.value(s).data().iter().all(|v| v.is_finite()));
    let x = g.constant(t(&[1, 3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]));
    let s = g.softmax(x, 1).unwrap();
    assert!(close(g.value(s).data(), &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], 1e-15));
    assert!(matches!(g.softmax(x, 2), Err(TensorError::Axis { .. })));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let ones = g.constant(t(&[2], &[1.0, 1.0]));
    let zeros = g.constant(t(&[2], &[0.0, 0.0]));
    let c = g.constant(t(&[1, 2], &[4.0, 4.0]));
    let y = g.layer_norm(c, ones, zeros, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    let x = g.constant(t(&[1, 2], &[1.0, 3.0]));
    let y = g.layer_norm(x, ones, zeros, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[-1.0, 1.0]);
    let b = g.constant(t(&[2], &[0.25, -2.0]));
    let r = g.constant(random_tensor(&[3, 2], 9, 5.0));
    let y = g.layer_norm(r, zeros, b, 1e-5).unwrap();
    for row in g.value(y).data().chunks(2) {
        assert_eq!(row, &[0.25, -2.0]);
    }
    let wide = g.constant(t(&[3], &[1.0, 1.0, 1.0]));
    assert!(matches!(g.layer_norm(x, wide, zeros, 1e-5), Err(TensorError::Dimension { .. })));
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let u = g.constant(Tensor::zeros(&[3, 4]));
    let l = g.cross_entropy(u, &[0, 1, 3], &[true; 3], 0.0).unwrap();
    assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
    let c = g.constant(t(&[1, 4], &[10.0, 0.0, 0.0, 0.0]));
    let l = g.cross_entropy(c, &[0], &[true], 0.0).unwrap();
    assert!(g.scalar(l) < 2e-4);
    assert!((g.scalar(l) - (1.0 + 3.0 * (-10f64).exp()).ln()).abs() < 1e-12);
    let z = g.constant(Tensor::zeros(&[2, 2]));
    let l = g.cross_entropy(z, &[0, 1], &[true, true], 0.0).unwrap();
    assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-12);
    assert!(matches!(
        g.cross_entropy(z, &[0, 1], &[false, false], 0.0),
        Err(TensorError::DegenerateBatch)
    ));
}

#[test]
fn cross_entropy_label_smoothing_matches_its_definition() {
    let logits = random_tensor::<f64>(&[4, 5], 3, 2.0);
    let targets = [1, 4, 0, 2];
    let mask = [true, false, true, true];
    let eps = 0.1;
    let mut expected = 0.0;
    for r in [0, 2, 3] {
        let row = logits.row(r);
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        for (c, &x) in row.iter().enumerate() {
            let q = eps / 5.0 + if c == targets[r] { 1.0 - eps } else { 0.0 };
            expected -= q * (x - lse);
        }
    }
    expected /= 3.0;
    let mut g = Graph::new();
    let v = g.constant(logits);
    let l = g.cross_entropy(v, &targets, &mask, eps).unwrap();
    assert!((g.scalar(l) - expected).abs() < 1e-12);
}

#[test]
fn mse_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[0.0, 0.0]));
    let b = g.constant(t(&[2], &[3.0, 4.0]));
    let same = g.mse(b, b).unwrap();
    assert_eq!(g.scalar(same), 0.0);
    let m = g.mse(a, b).unwrap();
    assert_eq!(g.scalar(m), 12.5);
    let one = g.constant(t(&[1], &[1.0]));
    let zero = g.constant(t(&[1], &[0.0]));
    let m = g.mse(one, zero).unwrap();
    assert_eq!(g.scalar(m), 1.0);
    assert!(matches!(g.mse(a, one), Err(TensorError::Dimension { .. })));
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[2, 3], 1, 1.0), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1], &[2.0]), true);
    let zero = g.constant(t(&[1], &[0.0]));
    let m = g.mse(x, zero).unwrap();
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[3], 2, 1.0), true);
    let y = g.scale(x, 1.0);
    let y2 = g.add(y, y).unwrap();
    let s = g.sum(y2);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0; 3]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(random_tensor(&[2], 3, 1.0), true);
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn grad_check_examples() {
    let a = random_tensor::<f64>(&[3, 4], 11, 1.0);
    let b = random_tensor::<f64>(&[4, 2], 12, 1.0);
    let err = grad_check(
        |g, v| {
            let p = g.matmul(v[0], v[1])?;
            Ok(g.sum(p))
        },
        &[a, b],
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "matmul: {err}");

    let logits = random_tensor::<f64>(&[5, 7], 13, 2.0);
    let targets = [0, 3, 6, 2, 2];
    let err = grad_check(|g, v| g.cross_entropy(v[0], &targets, &[true; 5], 0.0), &[logits], 1e-4).unwrap();
    assert!(err < 1e-4, "cross_entropy: {err}");

    let c = random_tensor::<f64>(&[4], 14, 1.0);
    let err = grad_check(
        |g, v| {
            let k = g.constant(c.clone());
            g.mse(v[0], k)
        },
        std::slice::from_ref(&c),
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4);
    let mut g = Graph::new();
    let x = g.leaf(c.clone(), true);
    let k = g.constant(c.clone());
    let m = g.mse(x, k).unwrap();
    g.backward(m).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn every_primitive_passes_grad_check_on_three_seeds() {
    for (name, case) in primitive_cases() {
        for seed in [1, 2, 3] {
            let err = case(seed * 1000);
            assert!(err < 1e-4, "{name} seed {seed}: max relative error {err:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..9,
        vals in proptest::collection::vec(prop_oneof![-1e4f64..1e4, Just(1e4), Just(-1e4), -5.0f64..5.0], 40),
    ) {
        let data: Vec<f64> = vals.iter().cycle().take(rows * cols).copied().collect();
        for axis in 0..2 {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![rows, cols], data.clone()).unwrap());
            let s = g.softmax(x, axis).unwrap();
            let out = g.value(s).data();
            prop_assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));
            if axis == 1 {
                for r in 0..rows {
                    let sum: f64 = out[r * cols..(r + 1) * cols].iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            } else {
                for c in 0..cols {
                    let sum: f64 = (0..rows).map(|r| out[r * cols + c]).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn f32_softmax_rows_sum_to_one(vals in proptest::collection::vec(-1e4f32..1e4, 1..12)) {
        let n = vals.len();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(vec![1, n], vals).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let sum: f32 = g.value(s).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
    }
}

/// `h = tanh-free nonlinear block` used twice versus the same expression
/// written out twice: gradients must agree exactly up to summation order.
#[test]
fn shared_subexpressions_accumulate_like_the_expanded_graph() {
    for seed in 0..5 {
        let x0 = random_tensor::<f64>(&[3, 4], seed, 1.0);
        let w0 = random_tensor::<f64>(&[4, 4], seed + 50, 1.0);

        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true);
        let w = g.leaf(w0.clone(), true);
        let h = g.matmul(x, w).unwrap();
        let h = g.softmax(h, 1).unwrap();
        let a = g.mul(h, h).unwrap();
        let b = g.matmul(h, w).unwrap();
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        let (gx, gw) = (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec());

        let mut e = Graph::new();
        let x = e.leaf(x0, true);
        let w = e.leaf(w0, true);
        let mut h_copy = || {
            let h = e.matmul(x, w).unwrap();
            e.softmax(h, 1).unwrap()
        };
        let (h1, h2, h3) = (h_copy(), h_copy(), h_copy());
        let a = e.mul(h1, h2).unwrap();
        let b = e.matmul(h3, w).unwrap();
        let s = e.add(a, b).unwrap();
        let loss = e.sum(s);
        e.backward(loss).unwrap();
        assert!(close(&gx, e.grad(x).unwrap(), 1e-12));
        assert!(close(&gw, e.grad(w).unwrap(), 1e-12));
    }
}

#[test]
fn forward_ops_are_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.constant(random_tensor(&[6, 8], 5, 3.0));
        let w = g.constant(random_tensor(&[8, 8], 6, 1.0));
        let gain = g.constant(random_tensor(&[8], 7, 1.0));
        let bias = g.constant(random_tensor(&[8], 8, 1.0));
        let h = g.matmul(x, w).unwrap();
        let h = g.layer_norm(h, gain, bias, 1e-5).unwrap();
        let layout = AttentionLayout {
            batch: 2,
            q_len: 3,
            k_len: 3,
            heads: 2,
            causal: true,
            key_lens: vec![3, 1],
        };
        let a = g.attention(h, h, h, layout).unwrap();
        let s = g.softmax(a, 1).unwrap();
        g.value(s).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn attention_examples() {
    let mut g = Graph::<f64>::new();
    let one = |n| AttentionLayout {
        batch: 1,
        q_len: 1,
        k_len: n,
        heads: 1,
        causal: false,
        key_lens: vec![n],
    };
    let q = g.constant(t(&[1, 2], &[0.3, -0.7]));
    let v = g.constant(t(&[1, 2], &[5.0, 6.0]));
    let l = one(1);
    let a = g.attention(q, v, v, l).unwrap();
    assert!(close(g.value(a).data(), &[5.0, 6.0], 1e-15));

    let k = g.constant(t(&[2, 2], &[1.0, 2.0, 1.0, 2.0]));
    let v2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let l = one(2);
    let a = g.attention(q, k, v2, l).unwrap();
    assert_eq!(g.attention_weights(a).unwrap(), &[0.5, 0.5]);

    // Only the first key is visible: output equals its value row.
    let k3 = g.constant(random_tensor(&[3, 2], 4, 3.0));
    let v3 = g.constant(random_tensor(&[3, 2], 5, 3.0));
    let masked = AttentionLayout {
        key_lens: vec![1],
        ..one(3)
    };
    let a = g.attention(q, k3, v3, masked).unwrap();
    let first = g.value(v3).row(0).to_vec();
    assert!(close(g.value(a).data(), &first, 1e-12));
}
