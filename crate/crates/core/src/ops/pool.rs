//! Max pooling, nearest-neighbour upsampling and nearest resizing.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Max pooling with a `k x k` window and stride `k`. Trailing rows/columns
/// that do not fill a window are dropped. `argmax` records the flat input
/// index chosen for each output (first maximum in scan order).
pub fn max_pool_window(x: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let xs = x.shape();
    if k == 0 {
        return Err(Error::Invalid(format!("pooling window must be >= 1")));
    }
    if k > xs.h || k > xs.w {
        return Err(shape_err(
            "max_pool",
            format!("window {} larger than input {}", k, xs),
        ));
    }
    let os = Shape::new(xs.n, xs.h / k, xs.w / k, xs.c);
    let mut out = Tensor::zeros(os);
    let mut argmax = alloc::vec![0usize; os.len()];
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let o0 = os.index(n, oy, ox, 0);
                let first = xs.index(n, oy * k, ox * k, 0);
                for c in 0..xs.c {
                    od[o0 + c] = xd[first + c];
                    argmax[o0 + c] = first + c;
                }
                for dy in 0..k {
                    for dx in 0..k {
                        let i0 = xs.index(n, oy * k + dy, ox * k + dx, 0);
                        for c in 0..xs.c {
                            let v = xd[i0 + c];
                            if v > od[o0 + c] {
                                od[o0 + c] = v;
                                argmax[o0 + c] = i0 + c;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

/// `p x p` max pooling where `p` must divide both spatial dims.
pub fn maxpool2d(x: &Tensor, p: usize) -> Result<(Tensor, Vec<usize>)> {
    let xs = x.shape();
    if p == 0 || xs.h % p != 0 || xs.w % p != 0 {
        return Err(shape_err(
            "maxpool2d",
            format!("pool factor {} does not divide {}x{}", p, xs.h, xs.w),
        ));
    }
    max_pool_window(x, p)
}

pub fn max_pool_backward(input: Shape, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input);
    let gxd = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[i] += g;
    }
    gx
}

/// Replicates every pixel over a `p x p` block.
pub fn nearest_upsample(x: &Tensor, p: usize) -> Result<Tensor> {
    if p == 0 {
        return Err(Error::Invalid(format!("upsample factor must be >= 1")));
    }
    let xs = x.shape();
    resize_nearest(x, xs.h * p, xs.w * p)
}

#[inline]
fn src_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

/// Nearest resize to `(out_h, out_w)` using `src = floor(dst * in / out)`.
/// For integer upscale factors this is plain block replication.
pub fn resize_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if out_h == 0 || out_w == 0 || xs.h == 0 || xs.w == 0 {
        return Err(shape_err(
            "resize_nearest",
            format!("cannot resize {} to {}x{}", xs, out_h, out_w),
        ));
    }
    let os = Shape::new(xs.n, out_h, out_w, xs.c);
    let mut out = Tensor::zeros(os);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for oy in 0..out_h {
            let iy = src_index(oy, xs.h, out_h);
            for ox in 0..out_w {
                let ix = src_index(ox, xs.w, out_w);
                let i0 = xs.index(n, iy, ix, 0);
                let o0 = os.index(n, oy, ox, 0);
                od[o0..o0 + xs.c].copy_from_slice(&xd[i0..i0 + xs.c]);
            }
        }
    }
    Ok(out)
}

pub fn resize_nearest_backward(input: Shape, grad_out: &Tensor) -> Tensor {
    let os = grad_out.shape();
    let mut gx = Tensor::zeros(input);
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    for n in 0..os.n {
        for oy in 0..os.h {
            let iy = src_index(oy, input.h, os.h);
            for ox in 0..os.w {
                let ix = src_index(ox, input.w, os.w);
                let i0 = input.index(n, iy, ix, 0);
                let o0 = os.index(n, oy, ox, 0);
                for c in 0..os.c {
                    gxd[i0 + c] += gd[o0 + c];
                }
            }
        }
    }
    gx
}
