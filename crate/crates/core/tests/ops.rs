use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retifluid_core::ops::*;
use retifluid_core::{Shape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (xs, ks) = (x.shape(), k.shape());
    let (kh, kw, cin, cout) = (ks.n, ks.h, ks.w, ks.c);
    let oh = (xs.h + 2 * pad - kh) / stride + 1;
    let ow = (xs.w + 2 * pad - kw) / stride + 1;
    let kidx = |ky: usize, kx: usize, ci: usize, co: usize| ((ky * kw + kx) * cin + ci) * cout + co;
    Tensor::from_fn(Shape::new(xs.n, oh, ow, cout), |n, oy, ox, co| {
        let mut acc = b.data()[co];
        for ky in 0..kh {
            for kx in 0..kw {
                let iy = (oy * stride + ky) as isize - pad as isize;
                let ix = (ox * stride + kx) as isize - pad as isize;
                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += x.at(n, iy as usize, ix as usize, ci) * k.data()[kidx(ky, kx, ci, co)];
                }
            }
        }
        acc
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_loops_bitwise(
        n in 1usize..3, h in 3usize..9, w in 3usize..9, cin in 1usize..4, cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3, same in any::<bool>(), seed in any::<u64>(),
    ) {
        prop_assume!(same || (h >= k && w >= k));
        let x = random(Shape::new(n, h, w, cin), seed);
        let kern = random(Shape::new(k, k, cin, cout), seed ^ 1);
        let b = random(Shape::vector(cout), seed ^ 2);
        let (padding, pad) = if same { (Padding::Same, k / 2) } else { (Padding::Valid, 0) };
        let got = conv2d(&x, &kern, &b, stride, padding).unwrap();
        let want = naive_conv(&x, &kern, &b, stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert_eq!(got.data(), want.data());
    }

    #[test]
    fn matmul_matches_naive_loops_bitwise(b in 1usize..3, m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let a = random(Shape::matrix(b, m, k), seed);
        let c = random(Shape::matrix(b, k, n), seed ^ 7);
        let got = matmul(&a, &c).unwrap();
        for bi in 0..b {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a.at(bi, 0, i, p) * c.at(bi, 0, p, j);
                    }
                    prop_assert_eq!(got.at(bi, 0, i, j), s);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(c in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let x = random(Shape::new(2, 3, 3, c), seed).map(|v| v * scale);
        let y = softmax(&x);
        for row in y.data().chunks(c) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_after_upsample_is_identity(h in 1usize..6, w in 1usize..6, c in 1usize..4, p in 1usize..4, seed in any::<u64>()) {
        let x = random(Shape::new(2, h, w, c), seed);
        let up = nearest_upsample(&x, p).unwrap();
        prop_assert_eq!(up.shape(), Shape::new(2, h * p, w * p, c));
        let (back, _) = maxpool2d(&up, p).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn transpose_is_an_involution(b in 1usize..3, m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let a = random(Shape::matrix(b, m, n), seed);
        let t = transpose(&a).unwrap();
        prop_assert_eq!(t.shape(), Shape::matrix(b, n, m));
        prop_assert_eq!(transpose(&t).unwrap(), a);
    }
}

#[test]
fn conv_example_values() {
    // 3x3 all-ones input and kernel, same padding: corner 4, edge 6, centre 9
    let x = Tensor::full(Shape::new(1, 3, 3, 1), 1.0);
    let k = Tensor::full(Shape::new(3, 3, 1, 1), 1.0);
    let b = Tensor::zeros(Shape::vector(1));
    let y = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
    assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    let v = conv2d(&x, &k, &b, 1, Padding::Valid).unwrap();
    assert_eq!(v.shape(), Shape::new(1, 1, 1, 1));
    assert_eq!(v.item(), 9.0);
}

#[test]
fn conv_rejects_bad_geometry() {
    let x = Tensor::zeros(Shape::new(1, 4, 4, 2));
    let b = Tensor::zeros(Shape::vector(1));
    assert!(conv2d(
        &x,
        &Tensor::zeros(Shape::new(3, 3, 3, 1)),
        &b,
        1,
        Padding::Same
    )
    .is_err());
    assert!(conv2d(
        &x,
        &Tensor::zeros(Shape::new(2, 2, 2, 1)),
        &b,
        1,
        Padding::Same
    )
    .is_err());
    assert!(conv2d(
        &x,
        &Tensor::zeros(Shape::new(3, 3, 2, 1)),
        &b,
        0,
        Padding::Same
    )
    .is_err());
    assert!(conv2d(
        &x,
        &Tensor::zeros(Shape::new(5, 5, 2, 1)),
        &b,
        1,
        Padding::Valid
    )
    .is_err());
}

#[test]
fn transposed_conv_doubles_resolution_and_matches_oracle() {
    let x = random(Shape::new(2, 3, 4, 3), 11);
    let k = random(Shape::new(2, 2, 3, 5), 12);
    let b = random(Shape::vector(5), 13);
    let y = conv2d_transpose(&x, &k, &b).unwrap();
    assert_eq!(y.shape(), Shape::new(2, 6, 8, 5));
    for n in 0..2 {
        for oy in 0..6 {
            for ox in 0..8 {
                for co in 0..5 {
                    let (i, j, a, bb) = (oy / 2, ox / 2, oy % 2, ox % 2);
                    let mut s = b.data()[co];
                    for ci in 0..3 {
                        s += x.at(n, i, j, ci) * k.at(a, bb, ci, co);
                    }
                    assert_eq!(y.at(n, oy, ox, co), s);
                }
            }
        }
    }
    assert!(conv2d_transpose(&x, &random(Shape::new(3, 3, 3, 5), 1), &b).is_err());
}

#[test]
fn maxpool_reports_first_maximum() {
    let x = Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 3.0, 3.0, 0.0]).unwrap();
    let (y, arg) = maxpool2d(&x, 2).unwrap();
    assert_eq!(y.item(), 3.0);
    assert_eq!(arg, vec![1]);
    assert!(maxpool2d(&Tensor::zeros(Shape::new(1, 3, 4, 1)), 2).is_err());
    let (w, _) = max_pool_window(&Tensor::zeros(Shape::new(1, 5, 5, 1)), 2).unwrap();
    assert_eq!(w.shape(), Shape::new(1, 2, 2, 1));
}

#[test]
fn batchnorm_train_normalises_and_updates_running_stats() {
    let x = random(Shape::new(3, 4, 4, 2), 5).map(|v| 3.0 * v + 1.5);
    let scale = Tensor::full(Shape::vector(2), 2.0);
    let shift = Tensor::full(Shape::vector(2), -1.0);
    let mut rm = Tensor::zeros(Shape::vector(2));
    let mut rv = Tensor::full(Shape::vector(2), 1.0);
    let (y, _) = batchnorm(&x, &scale, &shift, NormMode::Train, &mut rm, &mut rv).unwrap();
    let m = 48.0;
    for c in 0..2 {
        let vals: Vec<f64> = x.data().iter().skip(c).step_by(2).copied().collect();
        let mu = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
        assert!((rm.data()[c] - 0.01 * mu).abs() < 1e-12);
        assert!((rv.data()[c] - (0.99 + 0.01 * var)).abs() < 1e-12);
        let out: Vec<f64> = y.data().iter().skip(c).step_by(2).copied().collect();
        let omu = out.iter().sum::<f64>() / m;
        let ovar = out.iter().map(|v| (v - omu) * (v - omu)).sum::<f64>() / m;
        assert!((omu + 1.0).abs() < 1e-9);
        assert!((ovar - 4.0 * var / (var + BN_EPS)).abs() < 1e-9);
    }
}

#[test]
fn batchnorm_infer_uses_running_stats() {
    let x = Tensor::full(Shape::new(1, 1, 2, 1), 3.0);
    let one = Tensor::full(Shape::vector(1), 1.0);
    let zero = Tensor::zeros(Shape::vector(1));
    let mut rm = Tensor::full(Shape::vector(1), 1.0);
    let mut rv = Tensor::full(Shape::vector(1), 4.0);
    let (y, _) = batchnorm(&x, &one, &zero, NormMode::Infer, &mut rm, &mut rv).unwrap();
    let want = 2.0 / (4.0f64 + BN_EPS).sqrt();
    assert!(y.data().iter().all(|&v| (v - want).abs() < 1e-15));
    assert_eq!(rm.item(), 1.0);
    assert_eq!(rv.item(), 4.0);
}

#[test]
fn concat_and_split_roundtrip() {
    let a = random(Shape::new(2, 3, 3, 2), 1);
    let b = random(Shape::new(2, 3, 3, 3), 2);
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.shape().c, 5);
    let (x, y) = split_channels(&c, 2);
    assert_eq!((x, y), (a, b));
}
