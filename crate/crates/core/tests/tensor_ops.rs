mod common;

use common::{assert_close, dot, numeric_grad, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use spikecount::tensor::{
    avgpool2d, avgpool2d_grad, conv2d_grad_input, conv2d_grad_kernels, conv2d_grads,
    conv2d_valid, matmul,
};
use spikecount::{Error, Tensor};

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-5;

/// Direct loop over the definition of a valid cross-correlation, as a
/// reference independent of the library kernel.
fn reference_conv(input: &Tensor, kernels: &Tensor) -> Vec<f64> {
    let [cin, h, w] = input.shape()[..] else { panic!() };
    let [cout, _, k, _] = kernels.shape()[..] else { panic!() };
    let (oh, ow) = (h - k + 1, w - k + 1);
    let x = |c: usize, y: usize, xx: usize| input.data()[(c * h + y) * w + xx];
    let kv = |o: usize, c: usize, y: usize, xx: usize| kernels.data()[((o * cin + c) * k + y) * k + xx];
    let mut out = Vec::new();
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for c in 0..cin {
                    for dy in 0..k {
                        for dx in 0..k {
                            s += x(c, y + dy, xx + dx) * kv(o, c, dy, dx);
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

#[test]
fn matmul_examples() {
    let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);

    let col = Tensor::from_rows(&[&[5.0], &[7.0]]).unwrap();
    assert_eq!(matmul(&Tensor::identity(2), &col).unwrap(), col);

    let row = Tensor::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
    let ones = Tensor::from_rows(&[&[1.0], &[1.0], &[1.0]]).unwrap();
    assert_eq!(matmul(&row, &ones).unwrap().data(), &[6.0]);
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 3]);
    match matmul(&a, &b) {
        Err(Error::Dimension(msg)) => {
            assert!(msg.contains("[2, 3]"), "{msg}");
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn conv_examples() {
    let ones = Tensor::full(&[1, 3, 3], 1.0);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0);
    assert_eq!(conv2d_valid(&ones, &k).unwrap().data(), &[9.0]);

    let mut r = rng(3);
    let x = random_tensor(&mut r, &[2, 6, 6], -1.0, 1.0);
    let out = conv2d_valid(&x, &Tensor::zeros(&[4, 2, 3, 3])).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));

    let big = Tensor::zeros(&[1, 2, 2]);
    assert!(matches!(conv2d_valid(&big, &k), Err(Error::Dimension(_))));
}

#[test]
fn conv_matches_reference_on_mnist_shape() {
    let mut r = rng(28);
    let x = random_tensor(&mut r, &[1, 28, 28], 0.0, 1.0);
    let k = random_tensor(&mut r, &[12, 1, 5, 5], -0.2, 0.2);
    let out = conv2d_valid(&x, &k).unwrap();
    assert_eq!(out.shape(), &[12, 24, 24]);
    assert_close(out.data(), &reference_conv(&x, &k), 1e-12);
}

#[test]
fn pool_examples() {
    let t = |rows: &[&[f64]]| Tensor::from_rows(rows).unwrap().reshape(&[1, 2, 2]).unwrap();
    assert_eq!(avgpool2d(&t(&[&[1.0, 1.0], &[1.0, 1.0]]), 2).unwrap().data(), &[1.0]);
    assert_eq!(avgpool2d(&t(&[&[0.0, 2.0], &[4.0, 6.0]]), 2).unwrap().data(), &[3.0]);
    assert_eq!(
        avgpool2d(&Tensor::zeros(&[12, 24, 24]), 2).unwrap().shape(),
        &[12, 12, 12]
    );
    assert!(matches!(
        avgpool2d(&Tensor::zeros(&[1, 3, 4]), 2),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn gradient_examples() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, &[2, 5, 5], -1.0, 1.0);
    let k = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let (gi, gk) = conv2d_grads(&x, &k, &Tensor::zeros(&[3, 3, 3])).unwrap();
    assert!(gi.data().iter().chain(gk.data()).all(|&v| v == 0.0));

    let up = random_tensor(&mut r, &[1, 4, 4], -1.0, 1.0);
    let gi = conv2d_grad_input(&Tensor::full(&[1, 1, 1, 1], 0.7), &up, 4, 4).unwrap();
    assert_close(gi.data(), &up.scale(0.7).into_data(), 1e-15);

    let bad = Tensor::zeros(&[3, 2, 2]);
    assert!(matches!(conv2d_grads(&x, &k, &bad), Err(Error::Dimension(_))));
}

/// Gradients of `Σ c ⊙ conv(x, k)` against central differences.
fn check_conv_fd(seed: u64) {
    let mut r = rng(seed);
    let cin = r.random_range(1..=2);
    let cout = r.random_range(1..=3);
    let k = r.random_range(1..=3);
    let h = r.random_range(k..=k + 3);
    let w = r.random_range(k..=k + 3);
    let x = random_tensor(&mut r, &[cin, h, w], -1.0, 1.0);
    let kern = random_tensor(&mut r, &[cout, cin, k, k], -1.0, 1.0);
    let c = random_tensor(&mut r, &[cout, h - k + 1, w - k + 1], -1.0, 1.0);

    let (gi, gk) = conv2d_grads(&x, &kern, &c).unwrap();
    let fd_x = numeric_grad(&x, FD_STEP, |x| dot(&conv2d_valid(x, &kern).unwrap(), &c));
    let fd_k = numeric_grad(&kern, FD_STEP, |kk| dot(&conv2d_valid(&x, kk).unwrap(), &c));
    assert_close(gi.data(), &fd_x, FD_TOL);
    assert_close(gk.data(), &fd_k, FD_TOL);
}

#[test]
fn conv_grads_match_finite_differences() {
    // the fixed instance: one 3×3 kernel over a 1×4×4 input, loss = sum(output)
    let mut r = rng(44);
    let x = random_tensor(&mut r, &[1, 4, 4], -1.0, 1.0);
    let k = random_tensor(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
    let ones = Tensor::full(&[1, 2, 2], 1.0);
    let (gi, gk) = conv2d_grads(&x, &k, &ones).unwrap();
    let sum = |t: Tensor| t.sum();
    assert_close(
        gi.data(),
        &numeric_grad(&x, FD_STEP, |x| sum(conv2d_valid(x, &k).unwrap())),
        FD_TOL,
    );
    assert_close(
        gk.data(),
        &numeric_grad(&k, FD_STEP, |k| sum(conv2d_valid(&x, k).unwrap())),
        FD_TOL,
    );

    for seed in 0..120 {
        check_conv_fd(seed);
    }
}

#[test]
fn batched_kernel_grad_sums_over_batch() {
    let mut r = rng(8);
    let x = random_tensor(&mut r, &[3, 2, 5, 5], -1.0, 1.0);
    let up = random_tensor(&mut r, &[3, 4, 3, 3], -1.0, 1.0);
    let total = conv2d_grad_kernels(&x, &up, 3).unwrap();
    let mut acc = Tensor::zeros(&[4, 2, 3, 3]);
    for b in 0..3 {
        let xb = Tensor::new(vec![2, 5, 5], x.data()[b * 50..(b + 1) * 50].to_vec()).unwrap();
        let ub = Tensor::new(vec![4, 3, 3], up.data()[b * 36..(b + 1) * 36].to_vec()).unwrap();
        acc.add_assign(&conv2d_grad_kernels(&xb, &ub, 3).unwrap()).unwrap();
    }
    assert_close(total.data(), acc.data(), 1e-12);
}

#[test]
fn pool_grads_match_finite_differences() {
    for seed in 0..120 {
        let mut r = rng(1000 + seed);
        let c = r.random_range(1..=3);
        let h = 2 * r.random_range(1..=3);
        let w = 2 * r.random_range(1..=3);
        let x = random_tensor(&mut r, &[c, h, w], -2.0, 2.0);
        let up = random_tensor(&mut r, &[c, h / 2, w / 2], -1.0, 1.0);
        let g = avgpool2d_grad(&up, 2).unwrap();
        let fd = numeric_grad(&x, FD_STEP, |x| dot(&avgpool2d(x, 2).unwrap(), &up));
        assert_close(g.data(), &fd, FD_TOL);
    }
}

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
        prop::collection::vec(-1e3f64..1e3, m * n)
            .prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

proptest! {
    #[test]
    fn matmul_identity_is_neutral(a in matrix()) {
        let n = a.row_len();
        prop_assert_eq!(matmul(&a, &Tensor::identity(n)).unwrap(), a);
    }

    #[test]
    fn forward_ops_are_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[2, 8, 8], -5.0, 5.0);
        let k = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let a = conv2d_valid(&x, &k).unwrap();
        let b = conv2d_valid(&x.clone(), &k.clone()).unwrap();
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(avgpool2d(&x, 2).unwrap(), avgpool2d(&x, 2).unwrap());
    }

    #[test]
    fn finite_in_finite_out(a in matrix(), b in matrix()) {
        let n = a.row_len();
        let m = b.rows();
        if n == m {
            prop_assert!(matmul(&a, &b).unwrap().all_finite());
        }
        prop_assert!(a.add(&a).unwrap().all_finite());
        prop_assert!(a.mul(&a).unwrap().all_finite());
    }
}
