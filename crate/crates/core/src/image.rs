//! Single-channel images and integer label maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Grayscale image with values nominally in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(
                "image",
                format!("{} values for {}x{}", data.len(), height, width),
            ));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Per-pixel class indices `0..C`, row-major. Class 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(
                "label map",
                format!("{} labels for {}x{}", data.len(), height, width),
            ));
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(&l) => Err(Error::LabelOutOfRange {
                label: l as usize,
                classes,
            }),
            None => Ok(()),
        }
    }

    /// Sorted distinct labels present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

/// One-hot encoding `(1, H, W, C)` of a label map.
pub fn one_hot(mask: &LabelMap, classes: usize) -> Result<Tensor> {
    one_hot_batch(core::slice::from_ref(mask), classes)
}

/// One-hot encoding `(N, H, W, C)` of equally sized label maps.
pub fn one_hot_batch(masks: &[LabelMap], classes: usize) -> Result<Tensor> {
    let first = masks.first().ok_or(Error::Empty("one_hot batch"))?;
    let (h, w) = (first.height, first.width);
    let mut t = Tensor::zeros(Shape::new(masks.len(), h, w, classes));
    for (n, m) in masks.iter().enumerate() {
        if m.height != h || m.width != w {
            return Err(shape_err(
                "one_hot",
                format!("mask {}x{} in a {}x{} batch", m.height, m.width, h, w),
            ));
        }
        m.check_classes(classes)?;
        for y in 0..h {
            for x in 0..w {
                t.set(n, y, x, m.get(y, x) as usize, 1.0);
            }
        }
    }
    Ok(t)
}

/// Per-pixel argmax over channels of a `(N, H, W, C)` tensor; ties go to
/// the lowest class index.
pub fn argmax_labels(scores: &Tensor) -> Vec<LabelMap> {
    let s = scores.shape();
    (0..s.n)
        .map(|n| {
            let mut m = LabelMap::zeros(s.h, s.w);
            for y in 0..s.h {
                for x in 0..s.w {
                    let px = scores.pixel(n, y, x);
                    let mut best = 0;
                    for c in 1..s.c {
                        if px[c] > px[best] {
                            best = c;
                        }
                    }
                    m.set(y, x, best as u8);
                }
            }
            m
        })
        .collect()
}
