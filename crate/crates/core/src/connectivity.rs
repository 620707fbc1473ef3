//! 8-neighbour connectivity encodings of label maps.
//!
//! A connectivity tensor has `8 * C` channels, class-major: channel
//! `c * 8 + k` holds the connection of a pixel to its neighbour in direction
//! `k` for class `c`. Directions are ordered `NW, N, NE, W, E, SW, S, SE`, so
//! the opposite of `k` is `7 - k`. Out-of-bounds neighbours are disconnected.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Function, Graph, Var};
use crate::error::{shape_err, Result};
use crate::image::{argmax_labels, one_hot_batch, LabelMap};
use crate::tensor::{Shape, Tensor};

pub const DIRECTIONS: usize = 8;

/// `(dy, dx)` per direction.
pub const OFFSETS: [(isize, isize); DIRECTIONS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[inline]
pub const fn opposite(k: usize) -> usize {
    DIRECTIONS - 1 - k
}

#[inline]
pub fn neighbor(h: usize, w: usize, y: usize, x: usize, k: usize) -> Option<(usize, usize)> {
    let (dy, dx) = OFFSETS[k];
    let ny = y as isize + dy;
    let nx = x as isize + dx;
    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
        None
    } else {
        Some((ny as usize, nx as usize))
    }
}

fn classes_of(op: &'static str, s: Shape) -> Result<usize> {
    if s.c % DIRECTIONS != 0 {
        return Err(shape_err(
            op,
            format!("{} channels is not a multiple of {}", s.c, DIRECTIONS),
        ));
    }
    Ok(s.c / DIRECTIONS)
}

/// Ground-truth connectivity `(N, H, W, 8C)` from a one-hot `(N, H, W, C)`
/// tensor: entry `(y, x, c*8+k)` is `onehot_c(y, x) * onehot_c(neighbour_k)`.
pub fn connectivity_from_onehot(onehot: &Tensor) -> Tensor {
    let s = onehot.shape();
    let os = Shape::new(s.n, s.h, s.w, s.c * DIRECTIONS);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                for k in 0..DIRECTIONS {
                    let Some((ny, nx)) = neighbor(s.h, s.w, y, x, k) else {
                        continue;
                    };
                    for c in 0..s.c {
                        let v = onehot.at(n, y, x, c) * onehot.at(n, ny, nx, c);
                        if v != 0.0 {
                            out.set(n, y, x, c * DIRECTIONS + k, v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Binary connectivity mask `(1, H, W, 8C)` of a label map.
pub fn make_connectivity_mask(labels: &LabelMap, classes: usize) -> Result<Tensor> {
    make_connectivity_batch(core::slice::from_ref(labels), classes)
}

pub fn make_connectivity_batch(labels: &[LabelMap], classes: usize) -> Result<Tensor> {
    Ok(connectivity_from_onehot(&one_hot_batch(labels, classes)?))
}

/// Bilateral map: `BCM_k(p) = CM_k(p) * CM_{7-k}(neighbour_k(p))`.
pub fn bilateral_map(cm: &Tensor) -> Result<Tensor> {
    let s = cm.shape();
    let classes = classes_of("bilateral_map", s)?;
    let mut out = Tensor::zeros(s);
    let cd = cm.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let here = s.index(n, y, x, 0);
                for k in 0..DIRECTIONS {
                    let Some((ny, nx)) = neighbor(s.h, s.w, y, x, k) else {
                        continue;
                    };
                    let there = s.index(n, ny, nx, 0);
                    for c in 0..classes {
                        let base = c * DIRECTIONS;
                        od[here + base + k] = cd[here + base + k] * cd[there + base + opposite(k)];
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn bilateral_map_backward(cm: &Tensor, grad: &Tensor) -> Tensor {
    let s = cm.shape();
    let classes = s.c / DIRECTIONS;
    let mut gx = Tensor::zeros(s);
    let (cd, gd) = (cm.data(), grad.data());
    let gxd = gx.data_mut();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let here = s.index(n, y, x, 0);
                for k in 0..DIRECTIONS {
                    let Some((ny, nx)) = neighbor(s.h, s.w, y, x, k) else {
                        continue;
                    };
                    let there = s.index(n, ny, nx, 0);
                    for c in 0..classes {
                        let a = here + c * DIRECTIONS + k;
                        let b = there + c * DIRECTIONS + opposite(k);
                        gxd[a] += gd[a] * cd[b];
                        gxd[b] += gd[a] * cd[a];
                    }
                }
            }
        }
    }
    gx
}

/// Per-class edge pixels: member pixels of class `c` whose connectivity to at
/// least one of the 8 neighbours is 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    shape: Shape,
    mask: Vec<bool>,
}

impl EdgeSet {
    /// Shape `(N, H, W, C)` of the indicator.
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn contains(&self, n: usize, y: usize, x: usize, c: usize) -> bool {
        self.mask[self.shape.index(n, y, x, c)]
    }

    /// Flat indicator aligned with a `(N, H, W, C)` tensor.
    pub fn indicator(&self) -> &[bool] {
        &self.mask
    }

    /// Edge pixels `(y, x)` of class `c` in batch item `n`.
    pub fn pixels(&self, n: usize, c: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 0..self.shape.h {
            for x in 0..self.shape.w {
                if self.contains(n, y, x, c) {
                    v.push((y, x));
                }
            }
        }
        v
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn empty(shape: Shape) -> Self {
        EdgeSet {
            shape,
            mask: vec![false; shape.len()],
        }
    }
}

/// Edge set from a ground-truth connectivity mask and the matching one-hot
/// labels.
pub fn edge_set(gt_con: &Tensor, onehot: &Tensor) -> Result<EdgeSet> {
    let s = onehot.shape();
    let cs = gt_con.shape();
    if cs != Shape::new(s.n, s.h, s.w, s.c * DIRECTIONS) {
        return Err(shape_err(
            "edge_set",
            format!("connectivity {} for labels {}", cs, s),
        ));
    }
    let mut mask = vec![false; s.len()];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let con = gt_con.pixel(n, y, x);
                for c in 0..s.c {
                    if onehot.at(n, y, x, c) != 1.0 {
                        continue;
                    }
                    let dirs = &con[c * DIRECTIONS..(c + 1) * DIRECTIONS];
                    if dirs.iter().any(|&v| v == 0.0) {
                        mask[s.index(n, y, x, c)] = true;
                    }
                }
            }
        }
    }
    Ok(EdgeSet { shape: s, mask })
}

/// Maximum over the 8 direction channels of each class, `(N, H, W, C)`.
/// Also returns the flat index of the maximising channel (first on ties).
pub fn global_map_with_argmax(bcm: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = bcm.shape();
    let classes = classes_of("global_map", s)?;
    let os = Shape::new(s.n, s.h, s.w, classes);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0usize; os.len()];
    let bd = bcm.data();
    for (o, (dst, a)) in out.data_mut().iter_mut().zip(arg.iter_mut()).enumerate() {
        let base = o * DIRECTIONS;
        let mut best = base;
        for i in base + 1..base + DIRECTIONS {
            if bd[i] > bd[best] {
                best = i;
            }
        }
        *dst = bd[best];
        *a = best;
    }
    Ok((out, arg))
}

pub fn global_map(bcm: &Tensor) -> Result<Tensor> {
    global_map_with_argmax(bcm).map(|r| r.0)
}

/// Per-pixel argmax over classes, ties toward the lowest class index.
pub fn decode_labels(s_global: &Tensor) -> Vec<LabelMap> {
    argmax_labels(s_global)
}

/// Full inference decode from a connectivity prediction.
pub fn decode_connectivity(cm: &Tensor) -> Result<Vec<LabelMap>> {
    Ok(decode_labels(&global_map(&bilateral_map(cm)?)?))
}

struct BilateralFn;
impl Function for BilateralFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        vec![Some(bilateral_map_backward(inputs[0], g))]
    }
}

struct GlobalMapFn(Vec<usize>);
impl Function for GlobalMapFn {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        g: &Tensor,
        _: &[bool],
    ) -> Vec<Option<Tensor>> {
        let mut gx = Tensor::zeros(inputs[0].shape());
        let gxd = gx.data_mut();
        for (&i, &v) in self.0.iter().zip(g.data()) {
            gxd[i] += v;
        }
        vec![Some(gx)]
    }
}

/// Differentiable [`bilateral_map`].
pub fn bilateral(g: &mut Graph, cm: Var) -> Result<Var> {
    let v = bilateral_map(g.value(cm))?;
    Ok(g.push(&[cm], v, Box::new(BilateralFn)))
}

/// Differentiable [`global_map`].
pub fn global(g: &mut Graph, bcm: Var) -> Result<Var> {
    let (v, arg) = global_map_with_argmax(g.value(bcm))?;
    Ok(g.push(&[bcm], v, Box::new(GlobalMapFn(arg))))
}
