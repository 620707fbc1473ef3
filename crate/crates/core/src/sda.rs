//! Self-adaptive dual attention (pixel + channel) and the attention-based
//! skip connection built on it.
//!
//! For an input `X` of shape `(N, H, W, C)` and pooling factor `p`:
//!
//! ```text
//! Xd   = maxpool(X, p)                       (N, H/p, W/p, C)
//! Xdr  = reshape(Xd)                         (N, P, C),  P = H/p * W/p
//! Kpx  = softmax_rows(Xdr Xdr^T / sqrt(P))   (N, P, P)
//! Kch  = softmax_rows(Xdr^T Xdr / C)         (N, C, C)
//! pix  = upsample(reshape(Kpx Xdr), p)
//! ch   = upsample(reshape(Xdr Kch^T), p)
//! out  = X + (alpha * pix + beta * ch) / 2
//! ```
//!
//! The channel branch multiplies by `Kch^T` on the right so the result keeps
//! the `P x C` orientation of `Xdr`.

use alloc::format;

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Fusion weights. Both are kept non-negative by [`SdaWeights::project`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdaWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl SdaWeights {
    pub const IDENTITY: SdaWeights = SdaWeights {
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        SdaWeights { alpha, beta }.project()
    }

    pub fn project(self) -> Self {
        SdaWeights {
            alpha: self.alpha.max(0.0),
            beta: self.beta.max(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SdaConfig {
    pub pool: usize,
}

impl SdaConfig {
    pub fn new(pool: usize, h: usize, w: usize) -> Result<Self> {
        check_pool(pool, h, w)?;
        Ok(SdaConfig { pool })
    }

    /// `p = 2` when the pooled map stays at least 2x2, otherwise `p = 1`.
    pub fn default_for(h: usize, w: usize) -> Self {
        let pool = if h % 2 == 0 && w % 2 == 0 && h / 2 >= 2 && w / 2 >= 2 {
            2
        } else {
            1
        };
        SdaConfig { pool }
    }
}

fn check_pool(p: usize, h: usize, w: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(shape_err(
            "sda",
            format!("pool factor {} does not divide {}x{}", p, h, w),
        ));
    }
    Ok(())
}

/// Pooled, flattened input `Xdr` and its transpose.
fn pooled_matrix(g: &mut Graph, x: Var, p: usize) -> Result<(Var, Var, Shape)> {
    let xs = g.value(x).shape();
    check_pool(p, xs.h, xs.w)?;
    let pooled = g.maxpool2d(x, p)?;
    let ps = g.value(pooled).shape();
    let xdr = g.reshape(pooled, Shape::matrix(xs.n, ps.h * ps.w, xs.c))?;
    let xdrt = g.transpose(xdr)?;
    Ok((xdr, xdrt, ps))
}

fn unflatten(g: &mut Graph, m: Var, pooled: Shape, p: usize) -> Result<Var> {
    let r = g.reshape(m, pooled)?;
    g.nearest_upsample(r, p)
}

/// Pixel-attention branch `X_att,pixel`.
pub fn pixel_attention(g: &mut Graph, x: Var, p: usize) -> Result<Var> {
    let (xdr, xdrt, ps) = pooled_matrix(g, x, p)?;
    let k = pixel_kernel(g, xdr, xdrt, ps)?;
    let att = g.matmul(k, xdr)?;
    unflatten(g, att, ps, p)
}

/// Channel-attention branch `X_att,channel`.
pub fn channel_attention(g: &mut Graph, x: Var, p: usize) -> Result<Var> {
    let (xdr, xdrt, ps) = pooled_matrix(g, x, p)?;
    let k = channel_kernel(g, xdr, xdrt)?;
    let kt = g.transpose(k)?;
    let att = g.matmul(xdr, kt)?;
    unflatten(g, att, ps, p)
}

fn pixel_kernel(g: &mut Graph, xdr: Var, xdrt: Var, pooled: Shape) -> Result<Var> {
    let s = g.matmul(xdr, xdrt)?;
    let s = g.scale(s, 1.0 / crate::math::sqrt(pooled.plane() as f64));
    Ok(g.softmax(s))
}

fn channel_kernel(g: &mut Graph, xdr: Var, xdrt: Var) -> Result<Var> {
    let c = g.value(xdr).shape().c;
    let s = g.matmul(xdrt, xdr)?;
    let s = g.scale(s, 1.0 / c as f64);
    Ok(g.softmax(s))
}

/// `X + (alpha * pixel + beta * channel) / 2`, with `alpha` and `beta` as
/// single-element graph variables.
pub fn sda_forward(g: &mut Graph, x: Var, alpha: Var, beta: Var, p: usize) -> Result<Var> {
    let (xdr, xdrt, ps) = pooled_matrix(g, x, p)?;

    let kp = pixel_kernel(g, xdr, xdrt, ps)?;
    let pix = g.matmul(kp, xdr)?;
    let pix = unflatten(g, pix, ps, p)?;

    let kc = channel_kernel(g, xdr, xdrt)?;
    let kct = g.transpose(kc)?;
    let ch = g.matmul(xdr, kct)?;
    let ch = unflatten(g, ch, ps, p)?;

    let a = g.scale_by(pix, alpha)?;
    let b = g.scale_by(ch, beta)?;
    let mix = g.add(a, b)?;
    let mix = g.scale(mix, 0.5);
    g.add(x, mix)
}

/// Attention-based skip connection: `concat(decoder, sda(encoder))` along
/// channels.
pub fn sasc_forward(
    g: &mut Graph,
    encoder: Var,
    decoder: Var,
    alpha: Var,
    beta: Var,
    p: usize,
) -> Result<Var> {
    let (es, ds) = (g.value(encoder).shape(), g.value(decoder).shape());
    if es.n != ds.n || es.h != ds.h || es.w != ds.w {
        return Err(shape_err(
            "sasc",
            format!("encoder {} vs decoder {}", es, ds),
        ));
    }
    let att = sda_forward(g, encoder, alpha, beta, p)?;
    g.concat_channels(decoder, att)
}

/// Eager evaluation of [`sda_forward`] on plain tensors.
pub fn sda_apply(x: &Tensor, weights: SdaWeights, p: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let a = g.constant(Tensor::scalar(weights.alpha));
    let b = g.constant(Tensor::scalar(weights.beta));
    let out = sda_forward(&mut g, xv, a, b, p)?;
    Ok(g.value(out).clone())
}

/// Eager pixel and channel branches `(X_att,pixel, X_att,channel)`.
pub fn attention_branches(x: &Tensor, p: usize) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let pix = pixel_attention(&mut g, xv, p)?;
    let ch = channel_attention(&mut g, xv, p)?;
    Ok((g.value(pix).clone(), g.value(ch).clone()))
}

/// Attention coefficient matrices `(K_pixel, K_ch)`, batched as
/// `(N, 1, P, P)` and `(N, 1, C, C)`.
pub fn attention_kernels(x: &Tensor, p: usize) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (xdr, xdrt, ps) = pooled_matrix(&mut g, xv, p)?;
    let kp = pixel_kernel(&mut g, xdr, xdrt, ps)?;
    let kc = channel_kernel(&mut g, xdr, xdrt)?;
    Ok((g.value(kp).clone(), g.value(kc).clone()))
}
