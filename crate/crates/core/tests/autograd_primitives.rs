use astnlab::autograd::{leaky_relu, Tape, Tensor};
use astnlab::AstnError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn naive_conv2d(x: &[f64], xs: [usize; 3], k: &[f64], ks: [usize; 4], stride: usize, pad: usize) -> Vec<f64> {
    let [ci_n, w, h] = xs;
    let [co_n, _, kw, kh] = ks;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let mut out = vec![0.0; co_n * ow * oh];
    for co in 0..co_n {
        for ox in 0..ow {
            for oy in 0..oh {
                let mut acc = 0.0;
                for ci in 0..ci_n {
                    for i in 0..kw {
                        for j in 0..kh {
                            let ix = (ox * stride + i) as isize - pad as isize;
                            let iy = (oy * stride + j) as isize - pad as isize;
                            if ix < 0 || iy < 0 || ix >= w as isize || iy >= h as isize {
                                continue;
                            }
                            acc += x[(ci * w + ix as usize) * h + iy as usize]
                                * k[((co * ci_n + ci) * kw + i) * kh + j];
                        }
                    }
                }
                out[(co * ow + ox) * oh + oy] = acc;
            }
        }
    }
    out
}

fn naive_conv1d(x: &[f64], xs: [usize; 2], k: &[f64], ks: [usize; 3], stride: usize, pad: usize) -> Vec<f64> {
    let [ci_n, l] = xs;
    let [co_n, _, kl] = ks;
    let ol = (l + 2 * pad - kl) / stride + 1;
    let mut out = vec![0.0; co_n * ol];
    for co in 0..co_n {
        for o in 0..ol {
            let mut acc = 0.0;
            for ci in 0..ci_n {
                for i in 0..kl {
                    let ix = (o * stride + i) as isize - pad as isize;
                    if ix < 0 || ix >= l as isize {
                        continue;
                    }
                    acc += x[ci * l + ix as usize] * k[(co * ci_n + ci) * kl + i];
                }
            }
            out[co * ol + o] = acc;
        }
    }
    out
}

#[test]
fn leaky_relu_examples() {
    assert_eq!(leaky_relu(&[2.0f64], 0.01), vec![2.0]);
    assert_eq!(leaky_relu(&[-1.0f64], 0.01), vec![-0.01]);
    assert_eq!(leaky_relu(&[0.0f64], 0.3), vec![0.0]);
}

#[test]
fn conv2d_sum_of_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(&[1, 3, 3], 1.0));
    let k = t.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = t.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 1]);
    assert_eq!(t.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = uniform(&mut rng, &[1, 5, 5], -1.0, 1.0);
    let mut t = Tape::<f64>::new();
    let x = t.constant(input.clone());
    let k = t.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = t.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(t.value(y).data(), input.data());
}

#[test]
fn conv2d_matches_nested_loops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let x = uniform(&mut rng, &[2, 8, 8], -1.0, 1.0);
            let k = uniform(&mut rng, &[4, 2, 3, 3], -1.0, 1.0);
            let mut t = Tape::<f64>::new();
            let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
            let y = t.conv2d(xv, kv, stride, pad).unwrap();
            let oracle = naive_conv2d(x.data(), [2, 8, 8], k.data(), [4, 2, 3, 3], stride, pad);
            let diff = t
                .value(y)
                .data()
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "seed {seed} stride {stride} pad {pad}: {diff}");

            // 32-bit path against the same oracle
            let mut t32 = Tape::<f32>::new();
            let (xv, kv) = (t32.constant(x.cast()), t32.constant(k.cast()));
            let y = t32.conv2d(xv, kv, stride, pad).unwrap();
            let diff = t32
                .value(y)
                .data()
                .iter()
                .zip(&oracle)
                .map(|(&a, b)| (a as f64 - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-5, "f32 seed {seed}: {diff}");
        }
    }
}

#[test]
fn conv2d_channel_mismatch_errors() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[2, 4, 4]));
    let k = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(t.conv2d(x, k, 1, 0), Err(AstnError::Shape { .. })));
}

#[test]
fn conv1d_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap());
    let k = t.constant(Tensor::from_f64(&[1, 1, 2], &[1.0, 1.0]).unwrap());
    let y = t.conv1d(x, k, 1, 0).unwrap();
    assert_eq!(t.value(y).data(), &[3.0, 5.0]);

    let id = t.constant(Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap());
    let y = t.conv1d(x, id, 1, 0).unwrap();
    assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_matches_nested_loops() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for (stride, pad) in [(1, 0), (1, 1), (2, 2)] {
            let x = uniform(&mut rng, &[3, 12], -1.0, 1.0);
            let k = uniform(&mut rng, &[5, 3, 3], -1.0, 1.0);
            let mut t = Tape::<f64>::new();
            let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
            let y = t.conv1d(xv, kv, stride, pad).unwrap();
            let oracle = naive_conv1d(x.data(), [3, 12], k.data(), [5, 3, 3], stride, pad);
            assert_eq!(t.value(y).len(), oracle.len());
            for (a, b) in t.value(y).data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::zeros(&[2, 3]));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), vec![1.0; 6]);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::from_f64(&[2], &[1.0, -2.0]).unwrap());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), vec![2.0, -4.0]);
}

#[test]
fn two_consumers_accumulate() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
    let a = t.sum(x);
    let sq = t.mul(x, x).unwrap();
    let b = t.sum(sq);
    let l = t.add(a, b).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.grad(x).unwrap(), vec![2.0, -1.0, 5.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::zeros(&[2]));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(AstnError::BackwardTwice)));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::zeros(&[2]));
    assert!(matches!(t.backward(x), Err(AstnError::NonScalarLoss(_))));
}

#[test]
fn ops_do_not_mutate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = uniform(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
    let k0 = uniform(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let mut t = Tape::<f64>::new();
    let x = t.variable(x0.clone());
    let k = t.variable(k0.clone());
    let y = t.conv2d(x, k, 1, 1).unwrap();
    let y = t.leaky_relu(y, 0.01);
    let y = t.max_pool2d(y, 2).unwrap();
    let y = t.square(y);
    let l = t.mean(y);
    t.backward(l).unwrap();
    assert_eq!(t.value(x), &x0);
    assert_eq!(t.value(k), &k0);
}

#[test]
fn max_pool_routes_gradient_to_first_tie() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::from_f64(&[1, 2, 4], &[1.0, 3.0, 2.0, 2.0, 3.0, 0.0, 2.0, 1.0]).unwrap());
    let p = t.max_pool2d(x, 2).unwrap();
    assert_eq!(t.value(p).data(), &[3.0, 2.0]);
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn f32_backward_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = uniform(&mut rng, &[1, 1, 6, 6], -1.0, 1.0);
    let k = uniform(&mut rng, &[2, 1, 3, 3], -1.0, 1.0);
    fn run<F: astnlab::autograd::Scalar>(x: &Tensor<F>, k: &Tensor<F>) -> Vec<f64> {
        let mut t = Tape::<F>::new();
        let kv = t.variable(k.clone());
        let xv = t.constant(x.clone());
        let y = t.conv2d(xv, kv, 1, 1).unwrap();
        let y = t.tanh(y);
        let l = t.mean(y);
        t.backward(l).unwrap();
        t.grad(kv).unwrap().into_iter().map(|v| v.to_f64()).collect()
    }
    let g64 = run(&x, &k);
    let g32 = run(&x.cast::<f32>(), &k.cast::<f32>());
    for (a, b) in g64.iter().zip(&g32) {
        assert!((a - b).abs() / a.abs().max(1.0) < 1e-3);
    }
}
