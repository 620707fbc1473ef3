//! Central finite-difference verification of analytic gradients.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::connectivity;
use crate::error::Result;
use crate::image::LabelMap;
use crate::losses::{self, LossConfig, Targets};
use crate::model::{rmp, Model, ModelConfig};
use crate::ops::{NormMode, Padding};
use crate::params::Binder;
use crate::sda;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
/// Step is `H_SCALE * max(1, |x_i|)`.
pub const H_SCALE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Accumulates per-element comparisons.
struct Tracker {
    report: GradCheckReport,
}

impl Tracker {
    fn new(tol: f64) -> Self {
        Tracker {
            report: GradCheckReport {
                checked: 0,
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
                tol,
            },
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        let r = &mut self.report;
        if r.checked == 0 || e > r.max_rel_error || e.is_nan() {
            r.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            r.worst_index = index;
            r.analytic = analytic;
            r.numeric = numeric;
        }
        r.checked += 1;
    }
}

/// Central difference at `x`. When it disagrees with `analytic`, the
/// second-order one-sided differences are tried too and the closest of the
/// three is returned: a ReLU or max selection switching inside `[x-h, x+h]`
/// spoils the central estimate but leaves at least one side clean.
fn numeric_derivative<F>(mut f: F, x: f64, h: f64, analytic: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (plus, minus) = (f(x + h)?, f(x - h)?);
    let central = (plus - minus) / (2.0 * h);
    if relative_error(analytic, central) <= tol {
        return Ok(central);
    }
    let (f0, plus2, minus2) = (f(x)?, f(x + 2.0 * h)?, f(x - 2.0 * h)?);
    let forward = (-3.0 * f0 + 4.0 * plus - plus2) / (2.0 * h);
    let backward = (3.0 * f0 - 4.0 * minus + minus2) / (2.0 * h);
    let best = [central, forward, backward]
        .into_iter()
        .min_by(|a, b| relative_error(analytic, *a).total_cmp(&relative_error(analytic, *b)))
        .unwrap_or(central);
    Ok(best)
}

/// Checks `d f / d x` where `f` builds a scalar on a graph from the leaf
/// holding `x`. Every element of `x` is perturbed.
pub fn grad_check<F>(f: F, x: &Tensor, h_scale: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let out = f(&mut g, v)?;
    let analytic = g
        .backward(out)?
        .take(v)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };
    let mut tracker = Tracker::new(tol);
    for i in 0..x.data().len() {
        let xi = x.data()[i];
        let h = h_scale * xi.abs().max(1.0);
        let a = analytic.data()[i];
        let numeric = numeric_derivative(
            |v| {
                let mut t = x.clone();
                t.data_mut()[i] = v;
                eval(t)
            },
            xi,
            h,
            a,
            tol,
        )?;
        tracker.record(i, a, numeric);
    }
    Ok(tracker.report)
}

/// Joint-loss gradient of `samples` randomly chosen trainable scalars of
/// `model`. Batch norm runs in training mode.
pub fn model_grad_check(
    model: &Model,
    batch: &Tensor,
    targets: &Targets,
    loss: &LossConfig,
    samples: usize,
    seed: u64,
    h_scale: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let eval =
        |m: &Model, grads: bool| -> Result<(f64, Option<(Binder, crate::autodiff::Gradients)>)> {
            let mut g = Graph::new();
            let mut binder = if grads {
                Binder::new()
            } else {
                Binder::frozen()
            };
            let x = g.constant(batch.clone());
            let (heads, _) = m.forward_graph(&mut g, &mut binder, x, NormMode::Train)?;
            let (total, _) = losses::objective(&mut g, &heads, targets, loss)?;
            let value = g.value(total).item();
            if grads {
                let gr = g.backward(total)?;
                Ok((value, Some((binder, gr))))
            } else {
                Ok((value, None))
            }
        };
    let mut work = model.clone();
    let (_, bound) = eval(&work, true)?;
    let (binder, mut grads) = bound.expect("gradients requested");
    work.params_mut().zero_grad();
    binder.collect(&mut grads, work.params_mut());

    let mut pool = Vec::new();
    for id in work.params().ids() {
        let p = work.params().get(id);
        if p.trainable {
            pool.extend((0..p.value.data().len()).map(|i| (id, i)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<_> = pool.choose_multiple(&mut rng, samples).copied().collect();
    let mut tracker = Tracker::new(tol);
    for (flat, &(id, i)) in picks.iter().enumerate() {
        let analytic = work.params().get(id).grad.data()[i];
        let xi = work.params().value(id).data()[i];
        let h = h_scale * xi.abs().max(1.0);
        let numeric = numeric_derivative(
            |v| {
                work.params_mut().get_mut(id).value.data_mut()[i] = v;
                eval(&work, false).map(|r| r.0)
            },
            xi,
            h,
            analytic,
            tol,
        )?;
        work.params_mut().get_mut(id).value.data_mut()[i] = xi;
        tracker.record(flat, analytic, numeric);
    }
    Ok(tracker.report)
}

// ---- suite -------------------------------------------------------------

/// Outcome of one named suite case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Tensor filled from a flat-index closure.
fn linear(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Tensor {
    Tensor::from_vec(shape, (0..shape.len()).map(&mut f).collect()).expect("length matches")
}

/// Random values in `[-1, 1)`.
fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    linear(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Distinct values at least `spacing` apart in random order, so max
/// selections and ReLU signs do not flip under a small perturbation.
fn spread(rng: &mut ChaCha8Rng, shape: Shape, spacing: f64) -> Tensor {
    let n = shape.len();
    // offset by a quarter step so no value sits at zero
    let mut v: Vec<f64> = (0..n)
        .map(|i| (i as f64 - n as f64 / 2.0 + 0.25) * spacing)
        .collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).expect("length matches")
}

/// Weighted sum with fixed random weights, which exercises every output
/// element with a distinct upstream gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = uniform(&mut rng, g.value(y).shape());
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    // blocks of 2x2 so no pixel is isolated
    let mut m = LabelMap::zeros(h, w);
    for by in (0..h).step_by(2) {
        for bx in (0..w).step_by(2) {
            let l = rng.gen_range(0..classes) as u8;
            for y in by..(by + 2).min(h) {
                for x in bx..(bx + 2).min(w) {
                    m.set(y, x, l);
                }
            }
        }
    }
    m
}

struct Case {
    name: String,
    x: Tensor,
    f: Build,
}

fn case(
    name: impl Into<String>,
    x: Tensor,
    f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static,
) -> Case {
    Case {
        name: name.into(),
        x,
        f: Box::new(f),
    }
}

/// Operation and loss cases for one seed.
fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let n = r.gen_range(1..3);
    let (h, w, c) = (r.gen_range(2..5), r.gen_range(2..5), r.gen_range(1..4));
    let s = Shape::new(n, h, w, c);

    let other = uniform(r, s);
    out.push(case("add", uniform(r, s), move |g, x| {
        let o = g.constant(other.clone());
        let y = g.add(x, o)?;
        probe(g, y, seed)
    }));
    let other = uniform(r, s);
    out.push(case("sub", uniform(r, s), move |g, x| {
        let o = g.constant(other.clone());
        let y = g.sub(o, x)?;
        probe(g, y, seed)
    }));
    let other = uniform(r, s);
    out.push(case("mul", uniform(r, s), move |g, x| {
        let o = g.constant(other.clone());
        let y = g.mul(x, o)?;
        let y = g.mul(y, x)?;
        probe(g, y, seed)
    }));
    let other = uniform(r, s);
    out.push(case(
        "scale_by",
        Tensor::scalar(r.gen_range(-1.0..1.0)),
        move |g, k| {
            let o = g.constant(other.clone());
            let y = g.scale_by(o, k)?;
            probe(g, y, seed)
        },
    ));
    out.push(case("mean", uniform(r, s), |g, x| {
        let y = g.mul(x, x)?;
        Ok(g.mean(y))
    }));
    out.push(case(
        "weighted_sum",
        uniform(r, Shape::vector(5)),
        |g, x| {
            let sq = g.mul(x, x)?;
            let a = g.sum(sq);
            let b = g.sum(x);
            g.weighted_sum(&[(a, 0.7), (b, -1.3)])
        },
    ));
    out.push(case("relu", spread(r, s, 0.05), move |g, x| {
        let y = g.relu(x);
        probe(g, y, seed)
    }));
    out.push(case("sigmoid", uniform(r, s), move |g, x| {
        let y = g.sigmoid(x);
        probe(g, y, seed)
    }));
    out.push(case(
        "softmax",
        uniform(r, Shape::new(n, h, w, c + 1)),
        move |g, x| {
            let y = g.softmax(x);
            probe(g, y, seed)
        },
    ));

    let cout = r.gen_range(1..4);
    let kernel = uniform(r, Shape::new(3, 3, c, cout));
    let bias = uniform(r, Shape::vector(cout));
    {
        let (kernel, bias) = (kernel.clone(), bias.clone());
        out.push(case("conv2d.input", uniform(r, s), move |g, x| {
            let k = g.constant(kernel.clone());
            let b = g.constant(bias.clone());
            let y = g.conv2d(x, k, b, 1, Padding::Same)?;
            probe(g, y, seed)
        }));
    }
    {
        let input = uniform(r, s);
        let bias = bias.clone();
        out.push(case("conv2d.kernel", kernel.clone(), move |g, k| {
            let x = g.constant(input.clone());
            let b = g.constant(bias.clone());
            let y = g.conv2d(x, k, b, 2, Padding::Same)?;
            probe(g, y, seed)
        }));
    }
    {
        let input = uniform(r, Shape::new(n, h + 2, w + 2, c));
        let kernel = kernel.clone();
        out.push(case("conv2d.bias", bias.clone(), move |g, b| {
            let x = g.constant(input.clone());
            let k = g.constant(kernel.clone());
            let y = g.conv2d(x, k, b, 1, Padding::Valid)?;
            probe(g, y, seed)
        }));
    }
    {
        let tk = uniform(r, Shape::new(2, 2, c, cout));
        let tb = uniform(r, Shape::vector(cout));
        let input = uniform(r, s);
        out.push(case("conv2d_transpose.input", uniform(r, s), {
            let (tk, tb) = (tk.clone(), tb.clone());
            move |g, x| {
                let k = g.constant(tk.clone());
                let b = g.constant(tb.clone());
                let y = g.conv2d_transpose(x, k, b)?;
                probe(g, y, seed)
            }
        }));
        out.push(case("conv2d_transpose.kernel", tk, move |g, k| {
            let x = g.constant(input.clone());
            let b = g.constant(tb.clone());
            let y = g.conv2d_transpose(x, k, b)?;
            probe(g, y, seed)
        }));
    }
    out.push(case(
        "maxpool2d",
        spread(r, Shape::new(n, 2 * h, 2 * w, c), 0.05),
        move |g, x| {
            let y = g.maxpool2d(x, 2)?;
            probe(g, y, seed)
        },
    ));
    out.push(case(
        "max_pool_window",
        spread(r, Shape::new(n, h + 3, w + 3, c), 0.05),
        move |g, x| {
            let y = g.max_pool_window(x, 3)?;
            probe(g, y, seed)
        },
    ));
    out.push(case("nearest_upsample", uniform(r, s), move |g, x| {
        let y = g.nearest_upsample(x, 2)?;
        probe(g, y, seed)
    }));
    let (oh, ow) = (r.gen_range(2..8), r.gen_range(2..8));
    out.push(case("resize_nearest", uniform(r, s), move |g, x| {
        let y = g.resize_nearest(x, oh, ow)?;
        probe(g, y, seed)
    }));

    let bn_shape = Shape::new(n + 1, h, w, c);
    let scale = linear(Shape::vector(c), |i| 0.5 + 0.25 * i as f64);
    let shift = uniform(r, Shape::vector(c));
    {
        let (scale, shift) = (scale.clone(), shift.clone());
        out.push(case(
            "batchnorm.train",
            uniform(r, bn_shape),
            move |g, x| {
                let sc = g.constant(scale.clone());
                let sh = g.constant(shift.clone());
                let (mut m, mut v) = (
                    Tensor::zeros(Shape::vector(c)),
                    Tensor::full(Shape::vector(c), 1.0),
                );
                let y = g.batchnorm(x, sc, sh, NormMode::Train, &mut m, &mut v)?;
                probe(g, y, seed)
            },
        ));
    }
    {
        let input = uniform(r, bn_shape);
        let shift = shift.clone();
        out.push(case("batchnorm.scale", scale.clone(), move |g, sc| {
            let x = g.constant(input.clone());
            let sh = g.constant(shift.clone());
            let (mut m, mut v) = (
                Tensor::zeros(Shape::vector(c)),
                Tensor::full(Shape::vector(c), 1.0),
            );
            let y = g.batchnorm(x, sc, sh, NormMode::Train, &mut m, &mut v)?;
            probe(g, y, seed)
        }));
    }
    {
        let mean = uniform(r, Shape::vector(c));
        let var = linear(Shape::vector(c), |i| 0.5 + i as f64);
        out.push(case(
            "batchnorm.infer",
            uniform(r, bn_shape),
            move |g, x| {
                let sc = g.constant(scale.clone());
                let sh = g.constant(shift.clone());
                let (mut m, mut v) = (mean.clone(), var.clone());
                let y = g.batchnorm(x, sc, sh, NormMode::Infer, &mut m, &mut v)?;
                probe(g, y, seed)
            },
        ));
    }

    let (rows, inner, cols) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
    let b = uniform(r, Shape::matrix(n, inner, cols));
    out.push(case(
        "matmul",
        uniform(r, Shape::matrix(n, rows, inner)),
        move |g, a| {
            let bv = g.constant(b.clone());
            let y = g.matmul(a, bv)?;
            let t = g.transpose(y)?;
            let t = g.reshape(t, Shape::new(n, 1, 1, rows * cols))?;
            probe(g, t, seed)
        },
    ));
    let extra = uniform(r, Shape::new(n, h, w, 2));
    out.push(case("concat_channels", uniform(r, s), move |g, x| {
        let e = g.constant(extra.clone());
        let y = g.concat_channels(e, x)?;
        probe(g, y, seed)
    }));

    let ah = 2 * r.gen_range(1..3);
    let aw = 2 * r.gen_range(1..3);
    let sda_shape = Shape::new(n, ah, aw, r.gen_range(1..4));
    let weights = [r.gen_range(0.1..1.0), r.gen_range(0.1..1.0)];
    out.push(case("sda.input", uniform(r, sda_shape), move |g, x| {
        let a = g.constant(Tensor::scalar(weights[0]));
        let b = g.constant(Tensor::scalar(weights[1]));
        let y = sda::sda_forward(g, x, a, b, 2)?;
        probe(g, y, seed)
    }));
    let input = uniform(r, sda_shape);
    out.push(case(
        "sda.weights",
        Tensor::from_vec(Shape::vector(2), weights.to_vec()).expect("2"),
        move |g, ab| {
            let x = g.constant(input.clone());
            let pick = |g: &mut Graph, i: usize| -> Result<Var> {
                let mask = linear(Shape::vector(2), |j| if i == j { 1.0 } else { 0.0 });
                let m = g.constant(mask);
                let v = g.mul(ab, m)?;
                let s = g.sum(v);
                g.reshape(s, Shape::scalar())
            };
            let a = pick(g, 0)?;
            let b = pick(g, 1)?;
            let y = sda::sda_forward(g, x, a, b, 1)?;
            probe(g, y, seed)
        },
    ));
    let dec = uniform(r, Shape::new(n, ah, aw, 2));
    out.push(case("sasc", uniform(r, sda_shape), move |g, x| {
        let d = g.constant(dec.clone());
        let a = g.constant(Tensor::scalar(weights[0]));
        let b = g.constant(Tensor::scalar(weights[1]));
        let y = sda::sasc_forward(g, x, d, a, b, 2)?;
        probe(g, y, seed)
    }));
    let rk = uniform(r, Shape::new(1, 1, sda_shape.c, 1));
    let rb = uniform(r, Shape::vector(1));
    out.push(case(
        "rmp",
        spread(r, Shape::new(n, 4, 4, sda_shape.c), 0.05),
        move |g, x| {
            let k = g.constant(rk.clone());
            let b = g.constant(rb.clone());
            let y = rmp(g, x, &[(2, k, b), (3, k, b)])?;
            probe(g, y, seed)
        },
    ));

    // connectivity and losses
    let classes = r.gen_range(2..4);
    let (lh, lw) = (2 * r.gen_range(2..4), 2 * r.gen_range(2..4));
    let masks: Vec<LabelMap> = (0..n).map(|_| random_mask(r, lh, lw, classes)).collect();
    let targets = Rc::new(Targets::from_labels(&masks, classes).expect("valid labels"));
    let con_shape = Shape::new(n, lh, lw, 8 * classes);
    out.push(case("bilateral", uniform(r, con_shape), move |g, x| {
        let y = connectivity::bilateral(g, x)?;
        probe(g, y, seed)
    }));
    out.push(case("global", spread(r, con_shape, 0.01), move |g, x| {
        let y = connectivity::global(g, x)?;
        probe(g, y, seed)
    }));
    let std_shape = Shape::new(n, lh, lw, classes);
    {
        let t = targets.clone();
        out.push(case("dice", uniform(r, std_shape), move |g, x| {
            let p = g.softmax(x);
            losses::dice_loss(g, p, &t.onehot)
        }));
    }
    // bicon components: logits spread apart keep each pixel's minimum and
    // maximum direction unique
    type Pick = fn(&losses::BiconVars) -> Var;
    let parts: [(&str, Pick); 4] = [
        ("decouple", |b| b.decouple),
        ("con_map", |b| b.con_map),
        ("con_dice", |b| b.con_dice),
        ("bicon", |b| b.total),
    ];
    for (name, pick) in parts {
        let t = targets.clone();
        let include_bg = r.gen_bool(0.5);
        out.push(case(
            name,
            spread(r, con_shape, 4.0 / con_shape.len() as f64),
            move |g, x| {
                let cm = g.sigmoid(x);
                let b = losses::bicon_loss(g, cm, &t, include_bg)?;
                Ok(pick(&b))
            },
        ));
    }
    {
        let t = targets.clone();
        let lambda = losses::LAMBDA_GRID[r.gen_range(0..losses::LAMBDA_GRID.len())];
        let aux = r.gen_range(0..3);
        let heads_len = (1 + aux) * (classes + 8 * classes);
        out.push(case(
            "joint",
            spread(
                r,
                Shape::new(n, lh, lw, heads_len),
                4.0 / (n * lh * lw * heads_len) as f64,
            ),
            move |g, x| {
                let heads = split_heads(g, x, classes, aux)?;
                let cfg = LossConfig {
                    lambda,
                    include_background: true,
                };
                Ok(losses::objective(g, &heads, &t, &cfg)?.0)
            },
        ));
    }
    out
}

/// Splits one tensor into standard and connectivity heads at `1 + aux`
/// scales via fixed 1x1 selection convolutions.
fn split_heads(g: &mut Graph, x: Var, classes: usize, aux: usize) -> Result<losses::HeadVars> {
    let total = g.value(x).shape().c;
    let mut offset = 0;
    let mut take = |g: &mut Graph, width: usize| -> Result<Var> {
        let sel = linear(Shape::new(1, 1, total, width), |i| {
            let (ci, co) = (i / width, i % width);
            if ci == offset + co {
                1.0
            } else {
                0.0
            }
        });
        offset += width;
        let k = g.constant(sel);
        let b = g.constant(Tensor::zeros(Shape::vector(width)));
        g.conv2d(x, k, b, 1, Padding::Valid)
    };
    let mut standard = Vec::new();
    let mut conn = Vec::new();
    for _ in 0..=aux {
        let s = take(g, classes)?;
        standard.push(g.softmax(s));
        let c = take(g, 8 * classes)?;
        conn.push(g.sigmoid(c));
    }
    Ok(losses::HeadVars {
        main_standard: standard[0],
        main_connectivity: conn[0],
        aux_standard: standard[1..].to_vec(),
        aux_connectivity: conn[1..].to_vec(),
    })
}

/// Runs every operation and loss case for `cases_per_op` seeds derived from
/// `seed`, then the toy-model check on a 32x32 input.
pub fn run_suite(seed: u64, cases_per_op: usize) -> Result<Vec<CaseResult>> {
    let mut results = Vec::new();
    for k in 0..cases_per_op {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        for c in cases(s) {
            let report = grad_check(&c.f, &c.x, H_SCALE, DEFAULT_TOL)?;
            results.push(CaseResult {
                name: format!("{}#{}", c.name, k),
                report,
            });
        }
    }
    results.push(CaseResult {
        name: "model.joint".into(),
        report: toy_model_check(seed, 32, 10)?,
    });
    Ok(results)
}

/// Joint-loss gradient of a freshly built `size x size` toy model with
/// random alpha and beta.
pub fn toy_model_check(seed: u64, size: usize, samples: usize) -> Result<GradCheckReport> {
    let classes = 3;
    let mut model = Model::build(ModelConfig::toy(size, size, classes), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for i in 0..crate::model::SDA_PLACEMENTS {
        model.set_sda_weights(
            i,
            sda::SdaWeights::new(rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)),
        );
    }
    let n = 2;
    let batch = linear(Shape::new(n, size, size, 1), |_| rng.gen_range(0.0..1.0));
    let masks: Vec<LabelMap> = (0..n)
        .map(|_| random_mask(&mut rng, size, size, classes))
        .collect();
    let targets = Targets::from_labels(&masks, classes)?;
    let cfg = LossConfig::default();
    model_grad_check(
        &model, &batch, &targets, &cfg, samples, seed, H_SCALE, MODEL_TOL,
    )
}

/// Failing cases of a suite run.
pub fn failures(results: &[CaseResult]) -> Vec<&CaseResult> {
    results.iter().filter(|c| !c.report.passed()).collect()
}

impl core::fmt::Display for CaseResult {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let r = &self.report;
        write!(
            f,
            "{} {} checked={} max_rel={:.3e} worst={} analytic={:.6e} numeric={:.6e}",
            if r.passed() { "ok  " } else { "FAIL" },
            self.name,
            r.checked,
            r.max_rel_error,
            r.worst_index,
            r.analytic,
            r.numeric
        )
    }
}
