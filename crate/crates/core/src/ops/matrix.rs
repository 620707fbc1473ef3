//! Batched matrix products on `(batch, 1, rows, cols)` tensors, plus the
//! channel concatenation used by skip connections.

use alloc::format;

use crate::error::{shape_err, Result};
use crate::tensor::{Shape, Tensor};

fn as_matrix(op: &'static str, t: Shape) -> Result<(usize, usize, usize)> {
    if t.h != 1 {
        return Err(shape_err(
            op,
            format!("expected (batch, 1, rows, cols), got {}", t),
        ));
    }
    Ok((t.n, t.w, t.c))
}

/// `out[b] = a[b] x rhs[b]`. Each entry accumulates over the inner index in
/// ascending order, starting from zero.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, m, k) = as_matrix("matmul", a.shape())?;
    let (nb, k2, n) = as_matrix("matmul", b.shape())?;
    if na != nb || k != k2 {
        return Err(shape_err(
            "matmul",
            format!("{} x {}", a.shape(), b.shape()),
        ));
    }
    let os = Shape::matrix(na, m, n);
    let mut out = Tensor::zeros(os);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for batch in 0..na {
        let ab = &ad[batch * m * k..(batch + 1) * m * k];
        let bb = &bd[batch * k * n..(batch + 1) * k * n];
        let ob = &mut od[batch * m * n..(batch + 1) * m * n];
        for i in 0..m {
            let orow = &mut ob[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ab[i * k + p];
                let brow = &bb[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(out)
}

/// Swaps the last two axes of a batch of matrices.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (nb, m, n) = as_matrix("transpose", a.shape())?;
    let mut out = Tensor::zeros(Shape::matrix(nb, n, m));
    let ad = a.data();
    let od = out.data_mut();
    for b in 0..nb {
        let base = b * m * n;
        for i in 0..m {
            for j in 0..n {
                od[base + j * m + i] = ad[base + i * n + j];
            }
        }
    }
    Ok(out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(shape_err("concat_channels", format!("{} vs {}", sa, sb)));
    }
    if sa.c == 0 {
        return Ok(b.clone());
    }
    if sb.c == 0 {
        return Ok(a.clone());
    }
    let os = Shape::new(sa.n, sa.h, sa.w, sa.c + sb.c);
    let mut out = alloc::vec::Vec::with_capacity(os.len());
    for (pa, pb) in a.data().chunks_exact(sa.c).zip(b.data().chunks_exact(sb.c)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::from_vec(os, out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let s = g.shape();
    let cb = s.c - ca;
    let mut ga = alloc::vec::Vec::with_capacity(s.n * s.h * s.w * ca);
    let mut gb = alloc::vec::Vec::with_capacity(s.n * s.h * s.w * cb);
    for px in g.data().chunks_exact(s.c) {
        ga.extend_from_slice(&px[..ca]);
        gb.extend_from_slice(&px[ca..]);
    }
    (
        Tensor::from_vec(Shape::new(s.n, s.h, s.w, ca), ga).expect("split a"),
        Tensor::from_vec(Shape::new(s.n, s.h, s.w, cb), gb).expect("split b"),
    )
}
