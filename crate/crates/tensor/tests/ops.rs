use onetfwi_tensor::gradcheck::check_op;
use onetfwi_tensor::{conv_out_len, conv_transpose_out_len, Graph, Padding, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Keeps samples at least `margin` away from the ReLU kink.
fn away_from_zero(mut t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v >= 0.0 { margin + 0.1 } else { -margin - 0.1 };
        }
    }
    t
}

fn assert_checks(name: &str, checks: &[onetfwi_tensor::gradcheck::GradCheck]) {
    for c in checks {
        let e = c.relative_error();
        assert!(e < TOL, "{name}: input {} relative error {e:e}", c.input);
    }
}

#[test]
fn dense_identity_and_bias() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let eye = g.constant(Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let zero_b = g.constant(Tensor::zeros(vec![3]));
    let y = g.dense(x, eye, Some(zero_b)).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let z = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = g.dense(z, eye, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
}

#[test]
fn dense_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&[3, 4], &mut rng), random(&[4, 5], &mut rng), random(&[5], &mut rng)];
    let checks = check_op(&inputs, 7, H, |g, v| g.dense(v[0], v[1], Some(v[2]))).unwrap();
    assert_checks("dense", &checks);
}

#[test]
fn conv2d_shape_formula_on_gather_sized_input() {
    assert_eq!(conv_out_len(70, 0, 5, 2), Some(33));
    assert_eq!(conv_out_len(1000, 0, 9, 2), Some(496));
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(vec![1, 1, 70, 1000]));
    let k = g.constant(Tensor::zeros(vec![1, 1, 5, 9]));
    let y = g.conv2d(x, k, None, (2, 2), Padding::VALID).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 33, 496]);
}

#[test]
fn conv2d_pointwise_kernel_mixes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 2, 3, 4], &mut rng);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let k = g.constant(Tensor::new(vec![3, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0]).unwrap());
    let y = g.conv2d(xv, k, None, (1, 1), Padding::VALID).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[1, 3, 3, 4]);
    for r in 0..3 {
        for c in 0..4 {
            let (a, b) = (x.at(&[0, 0, r, c]), x.at(&[0, 1, r, c]));
            assert_eq!(out.at(&[0, 0, r, c]), a);
            assert_eq!(out.at(&[0, 1, r, c]), b);
            assert!((out.at(&[0, 2, r, c]) - (2.0 * a - b)).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_rejects_non_positive_output() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
    let k = g.constant(Tensor::zeros(vec![1, 1, 5, 5]));
    assert!(g.conv2d(x, k, None, (1, 1), Padding::VALID).is_err());
}

#[test]
fn conv2d_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[1, 2, 6, 7], &mut rng), random(&[3, 2, 3, 2], &mut rng), random(&[3], &mut rng)];
    let checks = check_op(&inputs, 11, H, |g, v| g.conv2d(v[0], v[1], Some(v[2]), (2, 2), Padding::VALID)).unwrap();
    assert_checks("conv2d valid", &checks);
    let checks = check_op(&inputs, 12, H, |g, v| g.conv2d(v[0], v[1], Some(v[2]), (1, 2), Padding::symmetric(1, 1))).unwrap();
    assert_checks("conv2d padded", &checks);
}

#[test]
fn conv2d_transpose_shape_formula() {
    assert_eq!(conv_transpose_out_len(1, 0, 5, 2), Some(5));
    assert_eq!(conv_transpose_out_len(55, 0, 9, 2), Some(117));
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(vec![1, 16, 1, 55]));
    let k = g.constant(Tensor::zeros(vec![16, 8, 5, 9]));
    let y = g.conv2d_transpose(x, k, None, (2, 2), Padding::VALID).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 8, 5, 117]);
}

#[test]
fn conv2d_transpose_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&[2, 3, 3, 4], &mut rng), random(&[3, 2, 3, 2], &mut rng), random(&[2], &mut rng)];
    let checks = check_op(&inputs, 13, H, |g, v| g.conv2d_transpose(v[0], v[1], Some(v[2]), (2, 2), Padding::VALID)).unwrap();
    assert_checks("conv2d_transpose", &checks);
}

#[test]
fn conv2d_transpose_pointwise_stride_one() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let k = g.constant(Tensor::new(vec![2, 1, 1, 1], vec![10.0, 1.0]).unwrap());
    let y = g.conv2d_transpose(x, k, None, (1, 1), Padding::VALID).unwrap();
    assert_eq!(g.value(y).data(), &[13.0, 24.0]);
}

/// `<conv(x), y> == <x, conv_transpose(y)>` for a shared kernel, in f32.
fn adjoint_gap(seed: u64, stride: (usize, usize), pad: Padding) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let kernel = Tensor::<f32>::from_fn(vec![co, ci, 2, 3], |_| rng.gen_range(-1.0..1.0));
    let x = Tensor::<f32>::from_fn(vec![1, ci, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x.clone());
    let kv = g.constant(kernel.clone());
    let cx = g.conv2d(xv, kv, None, stride, pad).unwrap();
    let y = Tensor::<f32>::from_fn(g.value(cx).shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
    let yv = g.constant(y.clone());
    let ty = g.conv2d_transpose(yv, kv, None, stride, pad).unwrap();
    assert_eq!(g.value(ty).shape(), x.shape());
    let lhs = g.value(cx).dot(&y);
    let rhs = x.dot(g.value(ty));
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12)
}

#[test]
fn conv2d_transpose_is_adjoint_of_conv2d() {
    for seed in 0..20 {
        assert!(adjoint_gap(seed, (1, 1), Padding::VALID) < 1e-5);
        assert!(adjoint_gap(seed + 100, (2, 1), Padding::VALID) < 1e-5);
    }
}

#[test]
fn concat_channels_counts_and_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.param_owned(Tensor::ones(vec![1, 8, 2, 3]));
    let b = g.param_owned(Tensor::zeros(vec![1, 12, 2, 3]));
    let c = g.concat_channels(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[1, 20, 2, 3]);
    // concat(a, zeros) then slice recovers a
    assert_eq!(&g.value(c).data()[..48], g.value(a).data());

    let n = g.value(c).len();
    let flat = g.reshape(c, vec![1, n]).unwrap();
    let ones = g.constant(Tensor::ones(vec![1, n]));
    let s = g.matmul_nt(flat, ones).unwrap();
    let s = g.reshape(s, vec![1]).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(a).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&[2, 2, 3, 3], &mut rng), random(&[2, 1, 3, 3], &mut rng)];
    assert_checks("concat", &check_op(&inputs, 3, H, |g, v| g.concat_channels(v[0], v[1])).unwrap());

    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![1, 1, 2, 3]));
    let b = g.constant(Tensor::zeros(vec![1, 1, 2, 4]));
    assert!(g.concat_channels(a, b).is_err());
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let l = g.leaky_relu(x, 0.3).unwrap();
    assert!((g.value(l).data()[0] + 0.3).abs() < 1e-15);
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).data()[1], 0.5);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param_owned(Tensor::new(vec![1], vec![0.0]).unwrap());
    let r = g.relu(x).unwrap();
    let grads = g.backward(r).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0]);
}

#[test]
fn activation_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = away_from_zero(random(&[4, 5], &mut rng), 0.05);
    assert_checks("relu", &check_op(&[x.clone()], 1, H, |g, v| g.relu(v[0])).unwrap());
    assert_checks("leaky_relu", &check_op(&[x.clone()], 2, H, |g, v| g.leaky_relu(v[0], 0.3)).unwrap());
    let x3 = random(&[4, 5], &mut rng).map(|v| 3.0 * v);
    assert_checks("sigmoid", &check_op(&[x3.clone()], 3, 1e-4, |g, v| g.sigmoid(v[0])).unwrap());
    assert_checks("scaled_sigmoid", &check_op(&[x3], 4, 1e-4, |g, v| g.scaled_sigmoid(v[0], 1490.0, 4510.0)).unwrap());
}

#[test]
fn mse_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let p = g.param_owned(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let t = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let l = g.mse(p, t).unwrap();
    assert_eq!(g.value(l).data(), &[0.0]);
    let t2 = g.constant(Tensor::new(vec![2, 2], vec![-1.5, -0.5, 0.5, 1.5]).unwrap());
    let l2 = g.mse(p, t2).unwrap();
    assert!((g.value(l2).data()[0] - 6.25).abs() < 1e-12);
    let grads = g.backward(l2).unwrap();
    // 2 (pred - target) / N
    assert!(grads.get(p).unwrap().data().iter().all(|&d| (d - 1.25).abs() < 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)];
    assert_checks("mse", &check_op(&inputs, 5, H, |g, v| g.mse(v[0], v[1])).unwrap());
}

#[test]
fn remaining_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[1, 2, 5, 7], &mut rng);
    assert_checks("pool", &check_op(&[x.clone()], 1, H, |g, v| g.adaptive_avg_pool2d(v[0], 2, 3)).unwrap());
    assert_checks("crop", &check_op(&[x.clone()], 2, H, |g, v| g.crop(v[0], 1, 2, 3, 4)).unwrap());
    let a = random(&[3, 6], &mut rng);
    let b = random(&[4, 6], &mut rng);
    assert_checks("matmul_nt", &check_op(&[a.clone(), b], 3, H, |g, v| g.matmul_nt(v[0], v[1])).unwrap());
    let s = random(&[1], &mut rng);
    assert_checks("add_scalar", &check_op(&[a, s], 4, H, |g, v| g.add_scalar(v[0], v[1])).unwrap());
}

#[test]
fn f32_path_matches_f64_shadow() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 2, 8, 9], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let kt = random(&[3, 2, 3, 3], &mut rng);
    let w = random(&[2 * 30, 4], &mut rng);
    let target = random(&[2, 4], &mut rng);

    fn run<T: onetfwi_tensor::Real>(x: &Tensor<T>, k: &Tensor<T>, kt: &Tensor<T>, w: &Tensor<T>, target: &Tensor<T>) -> (f64, Vec<f64>) {
        let mut g = Graph::<T>::new();
        let xv = g.constant_ref(x);
        let kv = g.param(k);
        let ktv = g.param(kt);
        let wv = g.param(w);
        let tv = g.constant_ref(target);
        let h = g.conv2d(xv, kv, None, (2, 2), Padding::VALID).unwrap();
        let h = g.leaky_relu(h, T::from_f64_lossy(0.3)).unwrap();
        let h = g.conv2d_transpose(h, ktv, None, (1, 1), Padding::VALID).unwrap();
        let h = g.relu(h).unwrap();
        let h = g.adaptive_avg_pool2d(h, 5, 6).unwrap();
        let h = g.reshape(h, vec![2, 60]).unwrap();
        let y = g.dense(h, wv, None).unwrap();
        let y = g.sigmoid(y).unwrap();
        let l = g.mse(y, tv).unwrap();
        let grads = g.backward(l).unwrap();
        let gk = grads.get(kv).unwrap().data().iter().map(|v| v.to_f64_lossy()).collect();
        (g.value(l).data()[0].to_f64_lossy(), gk)
    }
    let (l64, g64) = run(&x, &k, &kt, &w, &target);
    let (l32, g32) = run(&x.cast::<f32>(), &k.cast(), &kt.cast(), &w.cast(), &target.cast());
    assert!((l64 - l32).abs() / l64.abs() < 1e-3);
    let diff: f64 = g64.iter().zip(&g32).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = g64.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / norm < 1e-3, "{}", diff / norm);
}

#[test]
fn non_finite_values_are_reported() {
    let mut g = Graph::<f32>::new().with_finite_check(true);
    let x = g.constant(Tensor::new(vec![1], vec![f32::NAN]).unwrap());
    assert!(g.leaky_relu(x, 0.3).is_err());
}

proptest! {
    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::from_fn(vec![1, 2, 6, 9], |_| rng.gen_range(-1.0..1.0));
        let k = Tensor::<f32>::from_fn(vec![3, 2, 3, 4], |_| rng.gen_range(-1.0..1.0));
        let run = || {
            let mut g = Graph::<f32>::new();
            let xv = g.constant_ref(&x);
            let kv = g.param(&k);
            let y = g.conv2d(xv, kv, None, (1, 2), Padding::VALID).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
