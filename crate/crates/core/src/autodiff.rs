//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward value together with a [`Function`] that
//! maps the output gradient back to its inputs. [`Graph::backward`] walks the
//! tape once in reverse; gradients are returned only for leaf variables.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, Activation, NormCache, NormMode, Padding};
use crate::tensor::{check_same, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `needs[i]` is false when input `i` does not lead to any trainable leaf;
/// implementations may return `None` for it.
pub trait Function {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<usize>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant: gradients are never propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            func: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation computed outside the graph. This is how losses
    /// and other fused kernels attach their own backward rules.
    pub fn push(&mut self, inputs: &[Var], value: Tensor, func: Box<dyn Function>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            func: if requires_grad { Some(func) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.nodes[loss.0].value.shape();
        if ls.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be a scalar, got {}", ls),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls, 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(func) = node.func.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let input_grads = func.backward(&inputs, &node.value, &g, &needs);
            for ((&i, gi), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    gi.shape(),
                    self.nodes[i].value.shape(),
                    "gradient shape for node {}",
                    i
                );
                match grads[i].as_mut() {
                    Some(acc) => acc.add_assign(&gi),
                    None => grads[i] = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a).shape(), self.value(b).shape())?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(&[a, b], v, Box::new(AddFn)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a).shape(), self.value(b).shape())?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x -= *y;
        }
        Ok(self.push(&[a, b], v, Box::new(SubFn)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a).shape(), self.value(b).shape())?;
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x *= *y;
        }
        Ok(self.push(&[a, b], v, Box::new(MulFn)))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(&[a], v, Box::new(ScaleFn(k)))
    }

    /// `s * a` for a single-element variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape().len() != 1 {
            return Err(shape_err(
                "scale_by",
                format!("scalar expected, got {}", self.value(s).shape()),
            ));
        }
        let k = self.value(s).item();
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(&[a, s], v, Box::new(ScaleByFn)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(&[a], v, Box::new(SumFn { scale: 1.0 }))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).shape().len().max(1) as f64;
        let v = Tensor::scalar(self.value(a).sum() / n);
        self.push(&[a], v, Box::new(SumFn { scale: 1.0 / n }))
    }

    /// `sum_i w_i * s_i` over single-element variables.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            if self.value(v).shape().len() != 1 {
                return Err(shape_err(
                    "weighted_sum",
                    format!("scalar expected, got {}", self.value(v).shape()),
                ));
            }
            total += w * self.value(v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let weights = terms.iter().map(|t| t.1).collect();
        Ok(self.push(
            &vars,
            Tensor::scalar(total),
            Box::new(WeightedSumFn(weights)),
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = ops::activation(self.value(x), kind);
        self.push(&[x], v, Box::new(ActivationFn(kind)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = ops::softmax(self.value(x));
        self.push(&[x], v, Box::new(SoftmaxFn))
    }

    // ---- spatial -----------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let v = ops::conv2d(
            self.value(x),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        Ok(self.push(
            &[x, kernel, bias],
            v,
            Box::new(Conv2dFn { stride, padding }),
        ))
    }

    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let v = ops::conv2d_transpose(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(&[x, kernel, bias], v, Box::new(ConvTransposeFn)))
    }

    pub fn maxpool2d(&mut self, x: Var, p: usize) -> Result<Var> {
        let (v, argmax) = ops::maxpool2d(self.value(x), p)?;
        Ok(self.push(&[x], v, Box::new(MaxPoolFn(argmax))))
    }

    /// Stride-`k` window pooling that drops incomplete trailing windows.
    pub fn max_pool_window(&mut self, x: Var, k: usize) -> Result<Var> {
        let (v, argmax) = ops::max_pool_window(self.value(x), k)?;
        Ok(self.push(&[x], v, Box::new(MaxPoolFn(argmax))))
    }

    pub fn nearest_upsample(&mut self, x: Var, p: usize) -> Result<Var> {
        if p == 1 {
            return Ok(x);
        }
        let v = ops::nearest_upsample(self.value(x), p)?;
        Ok(self.push(&[x], v, Box::new(ResizeFn)))
    }

    pub fn resize_nearest(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let v = ops::resize_nearest(self.value(x), h, w)?;
        Ok(self.push(&[x], v, Box::new(ResizeFn)))
    }

    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mode: NormMode,
        running_mean: &mut Tensor,
        running_var: &mut Tensor,
    ) -> Result<Var> {
        let (v, cache) = ops::batchnorm(
            self.value(x),
            self.value(scale),
            self.value(shift),
            mode,
            running_mean,
            running_var,
        )?;
        Ok(self.push(&[x, scale, shift], v, Box::new(BatchNormFn(cache))))
    }

    // ---- matrices and layout ----------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(&[a, b], v, Box::new(MatmulFn)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(&[a], v, Box::new(TransposeFn)))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(&[a], v, Box::new(ReshapeFn)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let ca = self.value(a).shape().c;
        let v = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(&[a, b], v, Box::new(ConcatFn(ca))))
    }
}

struct AddFn;
impl Function for AddFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone()), Some(g.clone())]
    }
}

struct SubFn;
impl Function for SubFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.clone()), Some(g.map(|v| -v))]
    }
}

struct MulFn;
impl Function for MulFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let prod = |other: &Tensor| {
            let mut r = g.clone();
            for (r, &o) in r.data_mut().iter_mut().zip(other.data()) {
                *r *= o;
            }
            r
        };
        vec![
            needs[0].then(|| prod(inputs[1])),
            needs[1].then(|| prod(inputs[0])),
        ]
    }
}

struct ScaleFn(f64);
impl Function for ScaleFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(g.map(|v| v * self.0))]
    }
}

struct ScaleByFn;
impl Function for ScaleByFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let k = inputs[1].item();
        let ga = needs[0].then(|| g.map(|v| v * k));
        let gs = needs[1].then(|| {
            let s: f64 = g
                .data()
                .iter()
                .zip(inputs[0].data())
                .map(|(a, b)| a * b)
                .sum();
            Tensor::full(inputs[1].shape(), s)
        });
        vec![ga, gs]
    }
}

struct SumFn {
    scale: f64,
}
impl Function for SumFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape(), g.item() * self.scale))]
    }
}

struct WeightedSumFn(Vec<f64>);
impl Function for WeightedSumFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let gv = g.item();
        self.0
            .iter()
            .zip(inputs)
            .zip(needs)
            .map(|((&w, t), &need)| need.then(|| Tensor::full(t.shape(), gv * w)))
            .collect()
    }
}

struct ActivationFn(Activation);
impl Function for ActivationFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(ops::activation_backward(self.0, inputs[0], out, g))]
    }
}

struct SoftmaxFn;
impl Function for SoftmaxFn {
    fn backward(&self, _: &[&Tensor], out: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(ops::softmax_backward(out, g))]
    }
}

struct Conv2dFn {
    stride: usize,
    padding: Padding,
}
impl Function for Conv2dFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let r = ops::conv2d_backward(inputs[0], inputs[1], g, self.stride, self.padding, needs[0])
            .expect("shapes validated in forward");
        vec![r.x, Some(r.kernel), Some(r.bias)]
    }
}

struct ConvTransposeFn;
impl Function for ConvTransposeFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let r = ops::conv2d_transpose_backward(inputs[0], inputs[1], g, needs[0])
            .expect("shapes validated in forward");
        vec![r.x, Some(r.kernel), Some(r.bias)]
    }
}

struct MaxPoolFn(Vec<usize>);
impl Function for MaxPoolFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(ops::max_pool_backward(inputs[0].shape(), &self.0, g))]
    }
}

struct ResizeFn;
impl Function for ResizeFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(ops::resize_nearest_backward(inputs[0].shape(), g))]
    }
}

struct BatchNormFn(NormCache);
impl Function for BatchNormFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let r = ops::batchnorm_backward(&self.0, inputs[1], g);
        vec![Some(r.x), Some(r.scale), Some(r.shift)]
    }
}

struct MatmulFn;
impl Function for MatmulFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let ga = needs[0].then(|| {
            let bt = ops::transpose(inputs[1]).expect("matrix");
            ops::matmul(g, &bt).expect("matmul grad a")
        });
        let gb = needs[1].then(|| {
            let at = ops::transpose(inputs[0]).expect("matrix");
            ops::matmul(&at, g).expect("matmul grad b")
        });
        vec![ga, gb]
    }
}

struct TransposeFn;
impl Function for TransposeFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(ops::transpose(g).expect("matrix"))]
    }
}

struct ReshapeFn;
impl Function for ReshapeFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(
            g.clone().reshape(inputs[0].shape()).expect("same length"),
        )]
    }
}

struct ConcatFn(usize);
impl Function for ConcatFn {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = ops::split_channels(g, self.0);
        vec![Some(a), Some(b)]
    }
}

/// Guards a scalar loss before a backward pass.
pub fn ensure_finite(what: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{} produced a non-finite value",
            what
        )))
    }
}
