//! Activations and the last-axis softmax.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + crate::math::exp(-x))
    } else {
        let e = crate::math::exp(x);
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient through an activation, expressed with the forward output `y`.
pub fn activation_backward(kind: Activation, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (g, &v) in g.data_mut().iter_mut().zip(x.data()) {
                if v <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &s) in g.data_mut().iter_mut().zip(y.data()) {
                *g *= s * (1.0 - s);
            }
        }
    }
    g
}

/// Softmax along the channel (last) axis, with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let c = x.shape().c;
    let mut out = x.clone();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = crate::math::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let c = y.shape().c;
    let mut gx = Tensor::zeros(y.shape());
    if c == 0 {
        return gx;
    }
    for ((o, yr), gr) in gx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(y.data().chunks_exact(c))
        .zip(grad_out.data().chunks_exact(c))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    gx
}
