//! 2-D convolution and the stride-2 transposed convolution used for upsampling.
//!
//! Kernels are tensors laid out `[kh, kw, c_in, c_out]` (stored in the four
//! shape slots in that order); biases are `c_out`-vectors.

use alloc::format;
use alloc::vec;

use super::gemm::{gemm_acc, View};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad `k / 2` on each side (odd kernels).
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    out: Shape,
}

fn conv_geom(x: Shape, k: Shape, b: Shape, stride: usize, padding: Padding) -> Result<ConvGeom> {
    let (kh, kw, cin, cout) = (k.n, k.h, k.w, k.c);
    if stride == 0 {
        return Err(Error::Invalid(format!("conv2d stride must be >= 1")));
    }
    if x.c != cin {
        return Err(shape_err(
            "conv2d",
            format!("input {} has {} channels, kernel expects {}", x, x.c, cin),
        ));
    }
    if b.len() != cout {
        return Err(shape_err(
            "conv2d",
            format!("bias has {} entries, kernel has {} outputs", b.len(), cout),
        ));
    }
    if kh == 0 || kw == 0 {
        return Err(shape_err("conv2d", format!("empty kernel {}", k)));
    }
    let (pad_h, pad_w) = match padding {
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(shape_err(
                    "conv2d",
                    format!("same padding needs an odd kernel, got {}x{}", kh, kw),
                ));
            }
            (kh / 2, kw / 2)
        }
        Padding::Valid => (0, 0),
    };
    let span_h = x.h + 2 * pad_h;
    let span_w = x.w + 2 * pad_w;
    if span_h < kh || span_w < kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {}x{} larger than padded input {}", kh, kw, x),
        ));
    }
    let out = Shape::new(
        x.n,
        (span_h - kh) / stride + 1,
        (span_w - kw) / stride + 1,
        cout,
    );
    Ok(ConvGeom {
        kh,
        kw,
        cin,
        cout,
        stride,
        pad_h,
        pad_w,
        out,
    })
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Output pixels handled per patch matrix.
const CHUNK: usize = 128;

/// Receptive fields of the flat output pixels `p0..p1`: one row of
/// `kh * kw * cin` values per pixel in kernel order, zeros where the window
/// leaves the input.
fn patches(xd: &[f64], xs: Shape, g: &ConvGeom, p0: usize, p1: usize, buf: &mut [f64]) {
    let taps = g.taps();
    for (p, row) in (p0..p1).zip(buf.chunks_exact_mut(taps)) {
        let (n, oy, ox) = (p / (g.out.h * g.out.w), p / g.out.w % g.out.h, p % g.out.w);
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
            for kx in 0..g.kw {
                let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                let dst = &mut row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                if iy < 0 || iy >= xs.h as isize || ix < 0 || ix >= xs.w as isize {
                    dst.fill(0.0);
                } else {
                    let x0 = xs.index(n, iy as usize, ix as usize, 0);
                    dst.copy_from_slice(&xd[x0..x0 + g.cin]);
                }
            }
        }
    }
}

/// Adds patch gradients back onto the input positions they were read from.
fn scatter(gx: &mut [f64], xs: Shape, g: &ConvGeom, p0: usize, p1: usize, buf: &[f64]) {
    let taps = g.taps();
    for (p, row) in (p0..p1).zip(buf.chunks_exact(taps)) {
        let (n, oy, ox) = (p / (g.out.h * g.out.w), p / g.out.w % g.out.h, p % g.out.w);
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
            if iy < 0 || iy >= xs.h as isize {
                continue;
            }
            for kx in 0..g.kw {
                let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                if ix < 0 || ix >= xs.w as isize {
                    continue;
                }
                let x0 = xs.index(n, iy as usize, ix as usize, 0);
                let src = &row[(ky * g.kw + kx) * g.cin..(ky * g.kw + kx + 1) * g.cin];
                for (a, &v) in gx[x0..x0 + g.cin].iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Each output accumulates
/// `bias + sum_{ky, kx, ci} x * k` in that loop order.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let xs = x.shape();
    let g = conv_geom(xs, kernel.shape(), bias.shape(), stride, padding)?;
    let mut out = Tensor::zeros(g.out);
    let (xd, kd, bd) = (x.data(), kernel.data(), bias.data());
    let (taps, cout) = (g.taps(), g.cout);
    let mut buf = vec![0.0; CHUNK * taps];
    let od = out.data_mut();
    let pixels = g.out.n * g.out.h * g.out.w;
    for p0 in (0..pixels).step_by(CHUNK) {
        let p1 = (p0 + CHUNK).min(pixels);
        patches(xd, xs, &g, p0, p1, &mut buf);
        let orow = &mut od[p0 * cout..p1 * cout];
        for a in orow.chunks_exact_mut(cout) {
            a.copy_from_slice(bd);
        }
        gemm_acc(
            p1 - p0,
            cout,
            taps,
            View::rows(&buf, taps),
            kd,
            cout,
            orow,
            cout,
        );
    }
    Ok(out)
}

pub struct ConvGrads {
    pub x: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    need_x: bool,
) -> Result<ConvGrads> {
    let xs = x.shape();
    let ks = kernel.shape();
    let g = conv_geom(xs, ks, Shape::vector(ks.c), stride, padding)?;
    if grad_out.shape() != g.out {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad {} vs output {}", grad_out.shape(), g.out),
        ));
    }
    let (taps, cout) = (g.taps(), g.cout);
    let mut gx = if need_x {
        Some(Tensor::zeros(xs))
    } else {
        None
    };
    let mut gk = vec![0.0; taps * cout];
    let mut gb = vec![0.0; cout];
    let (xd, kd, gd) = (x.data(), kernel.data(), grad_out.data());
    // kernel as (cout, taps)
    let mut kt = vec![0.0; kd.len()];
    for t in 0..taps {
        for co in 0..cout {
            kt[co * taps + t] = kd[t * cout + co];
        }
    }
    let mut buf = vec![0.0; CHUNK * taps];
    let mut dbuf = vec![0.0; CHUNK * taps];
    let pixels = g.out.n * g.out.h * g.out.w;
    for p0 in (0..pixels).step_by(CHUNK) {
        let p1 = (p0 + CHUNK).min(pixels);
        let grow = &gd[p0 * cout..p1 * cout];
        for gy in grow.chunks_exact(cout) {
            for (b, &v) in gb.iter_mut().zip(gy) {
                *b += v;
            }
        }
        patches(xd, xs, &g, p0, p1, &mut buf);
        gemm_acc(
            taps,
            cout,
            p1 - p0,
            View::transposed(&buf, taps),
            grow,
            cout,
            &mut gk,
            cout,
        );
        if let Some(gx) = gx.as_mut() {
            let d = &mut dbuf[..(p1 - p0) * taps];
            d.fill(0.0);
            gemm_acc(
                p1 - p0,
                taps,
                cout,
                View::rows(grow, cout),
                &kt,
                taps,
                d,
                taps,
            );
            scatter(gx.data_mut(), xs, &g, p0, p1, d);
        }
    }
    Ok(ConvGrads {
        x: gx,
        kernel: Tensor::from_vec(ks, gk)?,
        bias: Tensor::from_vec(Shape::vector(cout), gb)?,
    })
}

fn transpose_geom(x: Shape, k: Shape, b: Shape) -> Result<()> {
    if x.n == 0 || x.h == 0 || x.w == 0 || x.c == 0 {
        return Err(shape_err(
            "conv2d_transpose",
            format!("non-positive input dims {}", x),
        ));
    }
    if k.n != 2 || k.h != 2 {
        return Err(shape_err(
            "conv2d_transpose",
            format!("kernel must be 2x2, got {}", k),
        ));
    }
    if k.w != x.c {
        return Err(shape_err(
            "conv2d_transpose",
            format!("input has {} channels, kernel expects {}", x.c, k.w),
        ));
    }
    if b.len() != k.c {
        return Err(shape_err(
            "conv2d_transpose",
            format!("bias has {} entries, kernel has {} outputs", b.len(), k.c),
        ));
    }
    Ok(())
}

/// Stride-2, 2x2 transposed convolution: every input pixel writes one
/// non-overlapping 2x2 output block, so the output is exactly `2H x 2W`.
pub fn conv2d_transpose(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernel.shape();
    transpose_geom(xs, ks, bias.shape())?;
    let (cin, cout) = (ks.w, ks.c);
    let os = Shape::new(xs.n, 2 * xs.h, 2 * xs.w, cout);
    let mut out = Tensor::zeros(os);
    let (xd, kd, bd) = (x.data(), kernel.data(), bias.data());
    let od = out.data_mut();
    for n in 0..xs.n {
        for i in 0..xs.h {
            for j in 0..xs.w {
                let x0 = xs.index(n, i, j, 0);
                let xin = &xd[x0..x0 + cin];
                for a in 0..2 {
                    for b in 0..2 {
                        let o0 = os.index(n, 2 * i + a, 2 * j + b, 0);
                        let acc = &mut od[o0..o0 + cout];
                        acc.copy_from_slice(bd);
                        let k0 = (a * 2 + b) * cin * cout;
                        for (ci, &xv) in xin.iter().enumerate() {
                            let krow = &kd[k0 + ci * cout..k0 + (ci + 1) * cout];
                            for (o, &kv) in acc.iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_transpose_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    need_x: bool,
) -> Result<ConvGrads> {
    let xs = x.shape();
    let ks = kernel.shape();
    transpose_geom(xs, ks, Shape::vector(ks.c))?;
    let (cin, cout) = (ks.w, ks.c);
    let os = Shape::new(xs.n, 2 * xs.h, 2 * xs.w, cout);
    if grad_out.shape() != os {
        return Err(shape_err(
            "conv2d_transpose_backward",
            format!("grad {} vs output {}", grad_out.shape(), os),
        ));
    }
    let mut gx = if need_x {
        Some(Tensor::zeros(xs))
    } else {
        None
    };
    let mut gk = Tensor::zeros(ks);
    let mut gb = Tensor::zeros(Shape::vector(cout));
    let (xd, kd, gd) = (x.data(), kernel.data(), grad_out.data());
    for n in 0..xs.n {
        for i in 0..xs.h {
            for j in 0..xs.w {
                let x0 = xs.index(n, i, j, 0);
                for a in 0..2 {
                    for b in 0..2 {
                        let o0 = os.index(n, 2 * i + a, 2 * j + b, 0);
                        let gy = &gd[o0..o0 + cout];
                        for (s, &v) in gb.data_mut().iter_mut().zip(gy) {
                            *s += v;
                        }
                        let k0 = (a * 2 + b) * cin * cout;
                        let gkd = gk.data_mut();
                        for ci in 0..cin {
                            let xv = xd[x0 + ci];
                            let row = &mut gkd[k0 + ci * cout..k0 + (ci + 1) * cout];
                            for (r, &v) in row.iter_mut().zip(gy) {
                                *r += xv * v;
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxd = gx.data_mut();
                            for ci in 0..cin {
                                let krow = &kd[k0 + ci * cout..k0 + (ci + 1) * cout];
                                let mut s = 0.0;
                                for (&kv, &v) in krow.iter().zip(gy) {
                                    s += kv * v;
                                }
                                gxd[x0 + ci] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        x: gx,
        kernel: gk,
        bias: gb,
    })
}
