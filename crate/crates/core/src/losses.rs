//! Segmentation objectives: multi-class soft dice, the bilateral
//! connectivity loss and their multi-scale weighted sums.
//!
//! Reductions: dice is averaged over classes and batch items; binary
//! cross-entropy terms are averaged over pixels (and over the 8 direction
//! channels for the connectivity map) and summed over classes.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Function, Graph, Var};
use crate::connectivity::{self, EdgeSet, DIRECTIONS};
use crate::error::{shape_err, Error, Result};
use crate::image::{one_hot_batch, LabelMap};
use crate::tensor::{check_same, Shape, Tensor};

/// Smoothing added to the numerator and denominator of the dice ratio.
pub const DICE_EPS: f64 = 1e-7;
/// Probabilities are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` inside every
/// binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 0.05;
/// The lambda values searched when tuning the joint objective.
pub const LAMBDA_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

/// Weights `(1, 1, 1/2, 1/4, ...)` for the main output followed by `aux`
/// auxiliary scales.
pub fn scale_weights(aux: usize) -> Vec<f64> {
    let mut w = vec![1.0];
    let mut k = 1.0;
    for _ in 0..aux {
        w.push(k);
        k *= 0.5;
    }
    w
}

#[inline]
fn bce(p: f64, y: f64) -> f64 {
    let q = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
    // hard labels need only one of the two logs
    if y == 1.0 {
        -crate::math::ln(q)
    } else if y == 0.0 {
        -crate::math::ln(1.0 - q)
    } else {
        -(y * crate::math::ln(q) + (1.0 - y) * crate::math::ln(1.0 - q))
    }
}

#[inline]
fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Binary cross-entropy with clipping, for callers that need the same rule.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    bce(p, y)
}

// ---- dice --------------------------------------------------------------

/// Per `(n, c)` sums `(intersection, pred, truth)`.
fn dice_sums(pred: &Tensor, truth: &Tensor) -> Vec<(f64, f64, f64)> {
    let s = pred.shape();
    let mut sums = vec![(0.0, 0.0, 0.0); s.n * s.c];
    let per_item = s.h * s.w * s.c;
    for n in 0..s.n {
        let p = &pred.data()[n * per_item..(n + 1) * per_item];
        let t = &truth.data()[n * per_item..(n + 1) * per_item];
        let acc = &mut sums[n * s.c..(n + 1) * s.c];
        for (pp, tp) in p.chunks_exact(s.c).zip(t.chunks_exact(s.c)) {
            for c in 0..s.c {
                acc[c].0 += pp[c] * tp[c];
                acc[c].1 += pp[c];
                acc[c].2 += tp[c];
            }
        }
    }
    sums
}

fn dice_value_from(first_class: usize, s: Shape, sums: &[(f64, f64, f64)]) -> f64 {
    let classes = s.c - first_class;
    let mut total = 0.0;
    for n in 0..s.n {
        for c in first_class..s.c {
            let (i, p, t) = sums[n * s.c + c];
            total += 1.0 - (2.0 * i + DICE_EPS) / (p + t + DICE_EPS);
        }
    }
    total / (s.n * classes) as f64
}

fn check_dice(pred: &Tensor, truth: &Tensor, first_class: usize) -> Result<()> {
    check_same("dice_loss", pred.shape(), truth.shape())?;
    if first_class >= pred.shape().c || pred.shape().n == 0 {
        return Err(shape_err(
            "dice_loss",
            format!("no classes to score in {}", pred.shape()),
        ));
    }
    Ok(())
}

fn dice_classes(pred: &Tensor, truth: &Tensor, first_class: usize) -> Result<f64> {
    check_dice(pred, truth, first_class)?;
    Ok(dice_value_from(
        first_class,
        pred.shape(),
        &dice_sums(pred, truth),
    ))
}

/// `mean_{n, c} [1 - (2 sum(p t) + eps) / (sum p + sum t + eps)]`.
pub fn dice_loss_value(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    dice_classes(pred, truth, 0)
}

fn dice_grad(pred: &Tensor, truth: &Tensor, first_class: usize) -> Tensor {
    let s = pred.shape();
    let sums = dice_sums(pred, truth);
    let norm = (s.n * (s.c - first_class)) as f64;
    let mut g = Tensor::zeros(s);
    let per_item = s.h * s.w * s.c;
    for n in 0..s.n {
        let coef: Vec<(f64, f64)> = (0..s.c)
            .map(|c| {
                let (i, p, t) = sums[n * s.c + c];
                let den = p + t + DICE_EPS;
                let num = 2.0 * i + DICE_EPS;
                (2.0 / den, num / (den * den))
            })
            .collect();
        let t = &truth.data()[n * per_item..(n + 1) * per_item];
        let gd = &mut g.data_mut()[n * per_item..(n + 1) * per_item];
        for (gp, tp) in gd.chunks_exact_mut(s.c).zip(t.chunks_exact(s.c)) {
            for c in first_class..s.c {
                gp[c] = -(coef[c].0 * tp[c] - coef[c].1) / norm;
            }
        }
    }
    g
}

struct DiceFn {
    truth: Rc<Tensor>,
    first_class: usize,
}
impl Function for DiceFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut d = dice_grad(inputs[0], &self.truth, self.first_class);
        let k = g.item();
        d.data_mut().iter_mut().for_each(|v| *v *= k);
        vec![Some(d)]
    }
}

fn dice_from(g: &mut Graph, pred: Var, truth: &Rc<Tensor>, first_class: usize) -> Result<Var> {
    let v = dice_classes(g.value(pred), truth, first_class)?;
    Ok(g.push(
        &[pred],
        Tensor::scalar(v),
        Box::new(DiceFn {
            truth: truth.clone(),
            first_class,
        }),
    ))
}

/// Differentiable soft dice loss against a constant one-hot target.
pub fn dice_loss(g: &mut Graph, pred: Var, truth: &Rc<Tensor>) -> Result<Var> {
    dice_from(g, pred, truth, 0)
}

// ---- connectivity terms ------------------------------------------------

fn first_class(include_background: bool) -> usize {
    if include_background {
        0
    } else {
        1
    }
}

/// Minimum over directions per `(pixel, class)` with its argmin index.
fn min_directions(bcm: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let groups = bcm.shape().len() / DIRECTIONS;
    let bd = bcm.data();
    let mut m = Vec::with_capacity(groups);
    let mut arg = Vec::with_capacity(groups);
    for gi in 0..groups {
        let base = gi * DIRECTIONS;
        let mut best = base;
        for i in base + 1..base + DIRECTIONS {
            if bd[i] < bd[best] {
                best = i;
            }
        }
        m.push(bd[best]);
        arg.push(best);
    }
    (m, arg)
}

fn check_connectivity(op: &'static str, con: Shape, onehot: Shape) -> Result<()> {
    if con != Shape::new(onehot.n, onehot.h, onehot.w, onehot.c * DIRECTIONS) {
        return Err(shape_err(
            op,
            format!("connectivity {} for labels {}", con, onehot),
        ));
    }
    Ok(())
}

/// Edge-decoupled loss. With `m = min_k BCM_k` per pixel and class, edge
/// pixels contribute `BCE(1 - m, y)` and all others `BCE(m, y)`.
pub fn decouple_loss_value(
    bcm: &Tensor,
    onehot: &Tensor,
    edges: &EdgeSet,
    include_background: bool,
) -> Result<f64> {
    decouple_impl(bcm, onehot, edges, include_background, false).map(|r| r.0)
}

fn decouple_impl(
    bcm: &Tensor,
    onehot: &Tensor,
    edges: &EdgeSet,
    include_background: bool,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let s = onehot.shape();
    check_connectivity("decouple_loss", bcm.shape(), s)?;
    check_same("decouple_loss", edges.shape(), s)?;
    let (m, arg) = min_directions(bcm);
    let pixels = (s.n * s.h * s.w) as f64;
    let first = first_class(include_background);
    let yd = onehot.data();
    let ed = edges.indicator();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(bcm.shape()));
    for i in 0..s.len() {
        if i % s.c < first {
            continue;
        }
        let y = yd[i];
        let (q, sign) = if ed[i] {
            (1.0 - m[i], -1.0)
        } else {
            (m[i], 1.0)
        };
        total += bce(q, y);
        if let Some(g) = grad.as_mut() {
            g.data_mut()[arg[i]] += sign * bce_grad(q, y) / pixels;
        }
    }
    Ok((total / pixels, grad))
}

struct DecoupleFn {
    targets: Targets,
    include_background: bool,
}
impl Function for DecoupleFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (_, grad) = decouple_impl(
            inputs[0],
            &self.targets.onehot,
            &self.targets.edges,
            self.include_background,
            true,
        )
        .expect("validated in forward");
        let mut d = grad.expect("requested");
        let k = g.item();
        d.data_mut().iter_mut().for_each(|v| *v *= k);
        vec![Some(d)]
    }
}

/// Connectivity-map loss: per class, mean BCE over pixels and the 8
/// direction channels; summed over classes.
pub fn con_map_loss_value(cm: &Tensor, gt_con: &Tensor, include_background: bool) -> Result<f64> {
    con_map_impl(cm, gt_con, include_background, false).map(|r| r.0)
}

fn con_map_impl(
    cm: &Tensor,
    gt_con: &Tensor,
    include_background: bool,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    check_same("con_map_loss", cm.shape(), gt_con.shape())?;
    let s = cm.shape();
    if s.c % DIRECTIONS != 0 {
        return Err(shape_err(
            "con_map_loss",
            format!("{} channels is not a multiple of 8", s.c),
        ));
    }
    let denom = (s.n * s.h * s.w * DIRECTIONS) as f64;
    let skip = first_class(include_background) * DIRECTIONS;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Tensor::zeros(s));
    for (i, (&p, &y)) in cm.data().iter().zip(gt_con.data()).enumerate() {
        if i % s.c < skip {
            continue;
        }
        total += bce(p, y);
        if let Some(g) = grad.as_mut() {
            g.data_mut()[i] = bce_grad(p, y) / denom;
        }
    }
    Ok((total / denom, grad))
}

struct ConMapFn {
    gt_con: Rc<Tensor>,
    include_background: bool,
}
impl Function for ConMapFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (_, grad) = con_map_impl(inputs[0], &self.gt_con, self.include_background, true)
            .expect("validated");
        let mut d = grad.expect("requested");
        let k = g.item();
        d.data_mut().iter_mut().for_each(|v| *v *= k);
        vec![Some(d)]
    }
}

/// Dice loss of the global connectivity map against the one-hot labels.
pub fn con_dice_loss_value(
    s_global: &Tensor,
    onehot: &Tensor,
    include_background: bool,
) -> Result<f64> {
    dice_classes(s_global, onehot, first_class(include_background))
}

/// Ground-truth tensors derived once per batch of label maps.
#[derive(Clone, Debug)]
pub struct Targets {
    pub onehot: Rc<Tensor>,
    pub connectivity: Rc<Tensor>,
    pub edges: Rc<EdgeSet>,
}

impl Targets {
    pub fn from_labels(labels: &[LabelMap], classes: usize) -> Result<Self> {
        Self::from_onehot(one_hot_batch(labels, classes)?)
    }

    pub fn from_onehot(onehot: Tensor) -> Result<Self> {
        let connectivity = connectivity::connectivity_from_onehot(&onehot);
        let edges = connectivity::edge_set(&connectivity, &onehot)?;
        Ok(Targets {
            onehot: Rc::new(onehot),
            connectivity: Rc::new(connectivity),
            edges: Rc::new(edges),
        })
    }

    pub fn classes(&self) -> usize {
        self.onehot.shape().c
    }
}

/// Values of the three bilateral-connectivity terms for one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BiconValues {
    pub decouple: f64,
    pub con_map: f64,
    pub con_dice: f64,
}

impl BiconValues {
    /// `decouple / 2 + con_map + con_dice`.
    pub fn total(&self) -> f64 {
        0.5 * self.decouple + self.con_map + self.con_dice
    }
}

/// Eager bilateral connectivity loss of a connectivity prediction.
pub fn bicon_loss_value(
    cm: &Tensor,
    targets: &Targets,
    include_background: bool,
) -> Result<BiconValues> {
    let bcm = connectivity::bilateral_map(cm)?;
    let s_global = connectivity::global_map(&bcm)?;
    Ok(BiconValues {
        decouple: decouple_loss_value(&bcm, &targets.onehot, &targets.edges, include_background)?,
        con_map: con_map_loss_value(cm, &targets.connectivity, include_background)?,
        con_dice: con_dice_loss_value(&s_global, &targets.onehot, include_background)?,
    })
}

/// Graph nodes of one bilateral connectivity loss.
#[derive(Clone, Copy, Debug)]
pub struct BiconVars {
    pub decouple: Var,
    pub con_map: Var,
    pub con_dice: Var,
    pub total: Var,
}

/// Differentiable bilateral connectivity loss of `cm` (sigmoid outputs,
/// `8C` channels).
pub fn bicon_loss(
    g: &mut Graph,
    cm: Var,
    targets: &Targets,
    include_background: bool,
) -> Result<BiconVars> {
    check_connectivity("bicon_loss", g.value(cm).shape(), targets.onehot.shape())?;
    let bcm = connectivity::bilateral(g, cm)?;

    let (dv, _) = decouple_impl(
        g.value(bcm),
        &targets.onehot,
        &targets.edges,
        include_background,
        false,
    )?;
    let decouple = g.push(
        &[bcm],
        Tensor::scalar(dv),
        Box::new(DecoupleFn {
            targets: targets.clone(),
            include_background,
        }),
    );

    let (mv, _) = con_map_impl(
        g.value(cm),
        &targets.connectivity,
        include_background,
        false,
    )?;
    let con_map = g.push(
        &[cm],
        Tensor::scalar(mv),
        Box::new(ConMapFn {
            gt_con: targets.connectivity.clone(),
            include_background,
        }),
    );

    let s_global = connectivity::global(g, bcm)?;
    let con_dice = dice_from(
        g,
        s_global,
        &targets.onehot,
        first_class(include_background),
    )?;

    let total = g.weighted_sum(&[(decouple, 0.5), (con_map, 1.0), (con_dice, 1.0)])?;
    Ok(BiconVars {
        decouple,
        con_map,
        con_dice,
        total,
    })
}

// ---- multi-scale sums --------------------------------------------------

/// Eager weighted multi-scale dice: `dice(main) + sum_l w_l dice(aux_l)`.
pub fn dlc_value(
    main: &Tensor,
    aux: &[Tensor],
    truth: &Tensor,
    expected_aux: usize,
) -> Result<f64> {
    check_aux_count(aux.len(), expected_aux)?;
    let w = scale_weights(aux.len());
    let mut total = dice_loss_value(main, truth)?;
    for (p, wl) in aux.iter().zip(&w[1..]) {
        total += wl * dice_loss_value(p, truth)?;
    }
    Ok(total)
}

/// Eager weighted multi-scale bilateral connectivity loss.
pub fn clc_value(
    main: &Tensor,
    aux: &[Tensor],
    targets: &Targets,
    expected_aux: usize,
    include_background: bool,
) -> Result<f64> {
    check_aux_count(aux.len(), expected_aux)?;
    let w = scale_weights(aux.len());
    let mut total = bicon_loss_value(main, targets, include_background)?.total();
    for (p, wl) in aux.iter().zip(&w[1..]) {
        total += wl * bicon_loss_value(p, targets, include_background)?.total();
    }
    Ok(total)
}

fn check_aux_count(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Invalid(format!(
            "{} auxiliary predictions for {} configured scales",
            got, expected
        )));
    }
    Ok(())
}

/// `dlc + lambda * clc`.
pub fn joint_loss(dlc: f64, clc: f64, lambda: f64) -> Result<(f64, LossBreakdown)> {
    check_lambda(lambda)?;
    let joint = dlc + lambda * clc;
    let b = LossBreakdown {
        dlc,
        clc,
        joint,
        lambda,
        ..LossBreakdown::default()
    };
    Ok((joint, b))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Invalid(format!(
            "lambda must be a finite value >= 0, got {}",
            lambda
        )));
    }
    Ok(())
}

/// Every component of one evaluation of the joint objective.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub dice_main: f64,
    pub dice_aux: Vec<f64>,
    /// Per scale, main output first. Empty when `lambda == 0`.
    pub decouple: Vec<f64>,
    pub con_map: Vec<f64>,
    pub con_dice: Vec<f64>,
    pub dlc: f64,
    pub clc: f64,
    pub joint: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    /// Whether class 0 takes part in the connectivity terms.
    pub include_background: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            include_background: true,
        }
    }
}

/// Prediction heads as graph nodes; auxiliary heads are ordered finest first
/// and already at full resolution.
#[derive(Clone, Debug)]
pub struct HeadVars {
    pub main_standard: Var,
    pub main_connectivity: Var,
    pub aux_standard: Vec<Var>,
    pub aux_connectivity: Vec<Var>,
}

/// Builds `DLC + lambda * CLC` on the graph. With `lambda == 0` the
/// connectivity terms are not evaluated and `clc` is reported as 0.
pub fn objective(
    g: &mut Graph,
    heads: &HeadVars,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    check_lambda(cfg.lambda)?;
    check_aux_count(heads.aux_connectivity.len(), heads.aux_standard.len())?;
    let weights = scale_weights(heads.aux_standard.len());
    let mut b = LossBreakdown {
        lambda: cfg.lambda,
        ..LossBreakdown::default()
    };

    let mut dice_terms = Vec::with_capacity(weights.len());
    let main = dice_loss(g, heads.main_standard, &targets.onehot)?;
    b.dice_main = g.value(main).item();
    dice_terms.push((main, weights[0]));
    for (&p, &w) in heads.aux_standard.iter().zip(&weights[1..]) {
        let d = dice_loss(g, p, &targets.onehot)?;
        b.dice_aux.push(g.value(d).item());
        dice_terms.push((d, w));
    }
    let dlc = g.weighted_sum(&dice_terms)?;
    b.dlc = g.value(dlc).item();

    if cfg.lambda == 0.0 {
        b.joint = b.dlc;
        return Ok((dlc, b));
    }

    let mut bl_terms = Vec::with_capacity(weights.len());
    let cms = core::iter::once(&heads.main_connectivity).chain(&heads.aux_connectivity);
    for (&cm, &w) in cms.zip(&weights) {
        let bl = bicon_loss(g, cm, targets, cfg.include_background)?;
        b.decouple.push(g.value(bl.decouple).item());
        b.con_map.push(g.value(bl.con_map).item());
        b.con_dice.push(g.value(bl.con_dice).item());
        bl_terms.push((bl.total, w));
    }
    let clc = g.weighted_sum(&bl_terms)?;
    b.clc = g.value(clc).item();
    let joint = g.weighted_sum(&[(dlc, 1.0), (clc, cfg.lambda)])?;
    b.joint = g.value(joint).item();
    Ok((joint, b))
}
