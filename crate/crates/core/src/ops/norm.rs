//! Per-channel batch normalisation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub mode: NormMode,
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalises `x` per channel and applies `scale * xhat + shift`.
///
/// In [`NormMode::Train`] the batch mean and biased variance over `N*H*W` are
/// used, and `running_mean`/`running_var` move toward them with
/// [`BN_MOMENTUM`].
pub fn batchnorm(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    mode: NormMode,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
) -> Result<(Tensor, NormCache)> {
    let xs = x.shape();
    let c = xs.c;
    for (name, t) in [
        ("scale", scale),
        ("shift", shift),
        ("running_mean", &*running_mean),
        ("running_var", &*running_var),
    ] {
        if t.shape().len() != c {
            return Err(shape_err(
                "batchnorm",
                format!(
                    "{} has {} entries for {} channels",
                    name,
                    t.shape().len(),
                    c
                ),
            ));
        }
    }
    let m = xs.n * xs.h * xs.w;
    if m == 0 {
        return Err(Error::Empty("batchnorm channel"));
    }
    let xd = x.data();
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![0.0; c];
            for px in xd.chunks_exact(c) {
                for (s, &v) in mean.iter_mut().zip(px) {
                    *s += v;
                }
            }
            for s in mean.iter_mut() {
                *s /= m as f64;
            }
            let mut var = vec![0.0; c];
            for px in xd.chunks_exact(c) {
                for ((s, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
                    let d = v - mu;
                    *s += d * d;
                }
            }
            for s in var.iter_mut() {
                *s /= m as f64;
            }
            for ch in 0..c {
                let rm = &mut running_mean.data_mut()[ch];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean[ch];
                let rv = &mut running_var.data_mut()[ch];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var[ch];
            }
            (mean, var)
        }
        NormMode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / crate::math::sqrt(v + BN_EPS))
        .collect();
    let mut xhat = Tensor::zeros(xs);
    let mut out = Tensor::zeros(xs);
    let (sd, hd) = (scale.data(), shift.data());
    for ((px, xh), o) in xd
        .chunks_exact(c)
        .zip(xhat.data_mut().chunks_exact_mut(c))
        .zip(out.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let v = (px[ch] - mean[ch]) * inv_std[ch];
            xh[ch] = v;
            o[ch] = sd[ch] * v + hd[ch];
        }
    }
    Ok((
        out,
        NormCache {
            mode,
            xhat,
            inv_std,
        },
    ))
}

pub struct NormGrads {
    pub x: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
}

pub fn batchnorm_backward(cache: &NormCache, scale: &Tensor, grad_out: &Tensor) -> NormGrads {
    let xs = grad_out.shape();
    let c = xs.c;
    let m = (xs.n * xs.h * xs.w) as f64;
    let gd = grad_out.data();
    let xh = cache.xhat.data();
    let mut gscale = vec![0.0; c];
    let mut gshift = vec![0.0; c];
    for (g, x) in gd.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for ch in 0..c {
            gshift[ch] += g[ch];
            gscale[ch] += g[ch] * x[ch];
        }
    }
    let sd = scale.data();
    let mut gx = Tensor::zeros(xs);
    for ((o, g), x) in gx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(gd.chunks_exact(c))
        .zip(xh.chunks_exact(c))
    {
        for ch in 0..c {
            let k = sd[ch] * cache.inv_std[ch];
            o[ch] = match cache.mode {
                NormMode::Train => k * (g[ch] - gshift[ch] / m - x[ch] * gscale[ch] / m),
                NormMode::Infer => k * g[ch],
            };
        }
    }
    NormGrads {
        x: gx,
        scale: Tensor::from_vec(Shape::vector(c), gscale).expect("length c"),
        shift: Tensor::from_vec(Shape::vector(c), gshift).expect("length c"),
    }
}
