use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retifluid_core::autodiff::Graph;
use retifluid_core::sda::*;
use retifluid_core::{Shape, Tensor};

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-2.0..2.0))
}

fn softmax_rows(m: &mut [Vec<f64>]) {
    for row in m.iter_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        for v in row.iter_mut() {
            *v = (*v - mx).exp() / s;
        }
    }
}

/// Straight-line evaluation with nested vectors: pool, flatten, both
/// kernels, both products, upsample, fuse.
fn oracle(
    x: &Tensor,
    alpha: f64,
    beta: f64,
    p: usize,
) -> (Tensor, Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
    let s = x.shape();
    let (ph, pw) = (s.h / p, s.w / p);
    let np = ph * pw;
    let mut out = x.clone();
    let (mut kps, mut kcs) = (Vec::new(), Vec::new());
    for n in 0..s.n {
        let mut xd = vec![vec![0.0; s.c]; np];
        for i in 0..ph {
            for j in 0..pw {
                for c in 0..s.c {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..p {
                        for dx in 0..p {
                            m = m.max(x.at(n, i * p + dy, j * p + dx, c));
                        }
                    }
                    xd[i * pw + j][c] = m;
                }
            }
        }
        let mut kp = vec![vec![0.0; np]; np];
        for a in 0..np {
            for b in 0..np {
                kp[a][b] = (0..s.c).map(|c| xd[a][c] * xd[b][c]).sum::<f64>() / (np as f64).sqrt();
            }
        }
        softmax_rows(&mut kp);
        let mut kc = vec![vec![0.0; s.c]; s.c];
        for a in 0..s.c {
            for b in 0..s.c {
                kc[a][b] = (0..np).map(|q| xd[q][a] * xd[q][b]).sum::<f64>() / s.c as f64;
            }
        }
        softmax_rows(&mut kc);
        for y in 0..s.h {
            for xx in 0..s.w {
                let q = (y / p) * pw + xx / p;
                for c in 0..s.c {
                    let pix: f64 = (0..np).map(|r| kp[q][r] * xd[r][c]).sum();
                    let ch: f64 = (0..s.c).map(|d| kc[c][d] * xd[q][d]).sum();
                    out.set(
                        n,
                        y,
                        xx,
                        c,
                        x.at(n, y, xx, c) + 0.5 * (alpha * pix + beta * ch),
                    );
                }
            }
        }
        kps.push(kp);
        kcs.push(kc);
    }
    (out, kps, kcs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sda_matches_straight_line_oracle(
        n in 1usize..3, hb in 1usize..4, wb in 1usize..4, c in 1usize..5, p in 1usize..3,
        alpha in 0.0f64..2.0, beta in 0.0f64..2.0, seed in any::<u64>(),
    ) {
        let x = random(Shape::new(n, hb * p, wb * p, c), seed);
        let got = sda_apply(&x, SdaWeights::new(alpha, beta), p).unwrap();
        let (want, kp, kc) = oracle(&x, alpha, beta, p);
        prop_assert!(got.max_abs_diff(&want) <= 1e-10, "diff {}", got.max_abs_diff(&want));
        let (gkp, gkc) = attention_kernels(&x, p).unwrap();
        for b in 0..n {
            for (i, row) in kp[b].iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    prop_assert!((gkp.at(b, 0, i, j) - v).abs() <= 1e-12);
                }
            }
            for (i, row) in kc[b].iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    prop_assert!((gkc.at(b, 0, i, j) - v).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_weights_pass_input_through_bitwise(n in 1usize..3, h in 1usize..4, w in 1usize..4, c in 1usize..5, seed in any::<u64>()) {
        let x = random(Shape::new(n, 2 * h, 2 * w, c), seed);
        prop_assert_eq!(sda_apply(&x, SdaWeights::IDENTITY, 2).unwrap(), x);
    }

    #[test]
    fn attention_rows_sum_to_one(h in 1usize..5, w in 1usize..5, c in 1usize..6, seed in any::<u64>(), scale in 0.1f64..20.0) {
        let x = random(Shape::new(2, 2 * h, 2 * w, c), seed).map(|v| v * scale);
        let (kp, kc) = attention_kernels(&x, 2).unwrap();
        for k in [&kp, &kc] {
            let cols = k.shape().c;
            for row in k.data().chunks(cols) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn kernel_shapes() {
    let x = random(Shape::new(2, 8, 6, 3), 1);
    let (kp, kc) = attention_kernels(&x, 2).unwrap();
    assert_eq!(kp.shape(), Shape::matrix(2, 12, 12));
    assert_eq!(kc.shape(), Shape::matrix(2, 3, 3));
    let (pix, ch) = attention_branches(&x, 2).unwrap();
    assert_eq!(pix.shape(), x.shape());
    assert_eq!(ch.shape(), x.shape());
}

#[test]
fn branches_combine_into_forward() {
    let x = random(Shape::new(1, 4, 4, 2), 3);
    let (pix, ch) = attention_branches(&x, 2).unwrap();
    let got = sda_apply(&x, SdaWeights::new(0.3, 0.7), 2).unwrap();
    for i in 0..x.data().len() {
        let want = x.data()[i] + 0.5 * (0.3 * pix.data()[i] + 0.7 * ch.data()[i]);
        assert!((got.data()[i] - want).abs() < 1e-14);
    }
}

#[test]
fn weights_are_projected_non_negative() {
    let w = SdaWeights::new(-0.5, 0.25);
    assert_eq!(
        w,
        SdaWeights {
            alpha: 0.0,
            beta: 0.25
        }
    );
    assert_eq!(
        SdaWeights {
            alpha: 1.0,
            beta: -1e-9
        }
        .project()
        .beta,
        0.0
    );
}

#[test]
fn pool_factor_must_divide() {
    assert!(SdaConfig::new(3, 8, 8).is_err());
    assert_eq!(SdaConfig::new(2, 8, 6).unwrap().pool, 2);
    assert_eq!(SdaConfig::default_for(2, 2).pool, 1);
    assert_eq!(SdaConfig::default_for(8, 8).pool, 2);
    assert!(sda_apply(
        &Tensor::zeros(Shape::new(1, 3, 3, 1)),
        SdaWeights::IDENTITY,
        2
    )
    .is_err());
}

#[test]
fn sasc_concatenates_decoder_then_attention() {
    let enc = random(Shape::new(1, 4, 4, 2), 5);
    let dec = random(Shape::new(1, 4, 4, 3), 6);
    let mut g = Graph::new();
    let (e, d) = (g.constant(enc.clone()), g.constant(dec.clone()));
    let (a, b) = (
        g.constant(Tensor::scalar(0.4)),
        g.constant(Tensor::scalar(0.1)),
    );
    let out = sasc_forward(&mut g, e, d, a, b, 2).unwrap();
    let v = g.value(out);
    assert_eq!(v.shape(), Shape::new(1, 4, 4, 5));
    let att = sda_apply(&enc, SdaWeights::new(0.4, 0.1), 2).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(&v.pixel(0, y, x)[..3], dec.pixel(0, y, x));
            assert_eq!(&v.pixel(0, y, x)[3..], att.pixel(0, y, x));
        }
    }
    let mut g = Graph::new();
    let (e, d) = (
        g.constant(enc),
        g.constant(random(Shape::new(1, 2, 2, 3), 7)),
    );
    let (a, b) = (
        g.constant(Tensor::scalar(0.0)),
        g.constant(Tensor::scalar(0.0)),
    );
    assert!(sasc_forward(&mut g, e, d, a, b, 2).is_err());
}
