//! Samples, preprocessing, augmentation and the synthetic B-scan generator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::connectivity::{neighbor, DIRECTIONS};
use crate::error::{Error, Result};
use crate::image::{GrayImage, LabelMap};

/// One B-scan with its label map. `subject_id` is the cross-validation
/// grouping key.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub image: GrayImage,
    pub mask: LabelMap,
}

impl Sample {
    pub fn new(subject_id: impl Into<String>, image: GrayImage, mask: LabelMap) -> Result<Self> {
        if image.height != mask.height || image.width != mask.width {
            return Err(Error::Shape {
                op: "sample",
                detail: format!(
                    "image {}x{} vs mask {}x{}",
                    image.height, image.width, mask.height, mask.width
                ),
            });
        }
        Ok(Sample {
            subject_id: subject_id.into(),
            image,
            mask,
        })
    }
}

// ---- preprocessing -----------------------------------------------------

pub const DEFAULT_TARGET: (usize, usize) = (256, 256);

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(img: &GrayImage, out_h: usize, out_w: usize) -> GrayImage {
    if img.height == out_h && img.width == out_w {
        return img.clone();
    }
    let mut out = GrayImage::filled(out_h, out_w, 0.0);
    let sy_scale = img.height as f64 / out_h as f64;
    let sx_scale = img.width as f64 / out_w as f64;
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = sy as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = sx as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            out.set(y, x, top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour resize; labels are copied, never blended.
pub fn resize_labels(mask: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    let mut out = LabelMap::zeros(out_h, out_w);
    for y in 0..out_h {
        let sy =
            (((y as f64 + 0.5) * mask.height as f64 / out_h as f64) as usize).min(mask.height - 1);
        for x in 0..out_w {
            let sx = (((x as f64 + 0.5) * mask.width as f64 / out_w as f64) as usize)
                .min(mask.width - 1);
            out.set(y, x, mask.get(sy, sx));
        }
    }
    out
}

/// Maps intensities linearly onto `[0, 1]`; a constant image becomes zeros.
pub fn min_max_normalize(img: &GrayImage) -> GrayImage {
    let lo = img.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = if range > 0.0 {
        img.data.iter().map(|&v| (v - lo) / range).collect()
    } else {
        alloc::vec![0.0; img.data.len()]
    };
    GrayImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Resize to `target` (bilinear image, nearest mask), then min-max
/// normalise the image.
pub fn preprocess(
    image: &GrayImage,
    mask: &LabelMap,
    target: (usize, usize),
) -> Result<(GrayImage, LabelMap)> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Invalid(format!(
            "target size {}x{} must be positive",
            target.0, target.1
        )));
    }
    if image.data.is_empty() || mask.data.is_empty() {
        return Err(Error::Empty("preprocess input"));
    }
    let img = resize_bilinear(image, target.0, target.1);
    let m = resize_labels(mask, target.0, target.1);
    Ok((min_max_normalize(&img), m))
}

pub fn preprocess_sample(s: &Sample, target: (usize, usize)) -> Result<Sample> {
    let (image, mask) = preprocess(&s.image, &s.mask, target)?;
    Ok(Sample {
        subject_id: s.subject_id.clone(),
        image,
        mask,
    })
}

// ---- augmentation ------------------------------------------------------

pub const AUGMENTED_VARIANTS: usize = 8;

/// Sampling ranges for random augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub mirror_prob: f64,
    pub max_rotation_deg: f64,
    /// Fraction of width/height.
    pub max_translation: f64,
    pub contrast: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            mirror_prob: 0.5,
            max_rotation_deg: 10.0,
            max_translation: 0.05,
            contrast: (0.8, 1.25),
        }
    }
}

/// One concrete transform: horizontal mirror, then rotation about the image
/// centre, then translation (pixels); contrast applies to the image only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub mirror: bool,
    pub rotation_deg: f64,
    pub dx: f64,
    pub dy: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        mirror: false,
        rotation_deg: 0.0,
        dx: 0.0,
        dy: 0.0,
        contrast: 1.0,
    };

    pub fn sample<R: Rng>(
        rng: &mut R,
        ranges: &AugmentRanges,
        height: usize,
        width: usize,
    ) -> Self {
        let mirror = rng.gen_bool(ranges.mirror_prob.clamp(0.0, 1.0));
        let rotation_deg = symmetric(rng, ranges.max_rotation_deg);
        let dx = symmetric(rng, ranges.max_translation * width as f64);
        let dy = symmetric(rng, ranges.max_translation * height as f64);
        let (lo, hi) = ranges.contrast;
        let contrast = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        AugmentParams {
            mirror,
            rotation_deg,
            dx,
            dy,
            contrast,
        }
    }

    /// Source coordinates `(y, x)` of output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, height: usize, width: usize) -> (f64, f64) {
        let cy = (height as f64 - 1.0) / 2.0;
        let cx = (width as f64 - 1.0) / 2.0;
        let (py, px) = (y as f64 - self.dy - cy, x as f64 - self.dx - cx);
        let (sy, sx) = if self.rotation_deg == 0.0 {
            (py + cy, px + cx)
        } else {
            let t = self.rotation_deg.to_radians();
            let (s, c) = (libm::sin(t), libm::cos(t));
            // inverse rotation
            (-s * px + c * py + cy, c * px + s * py + cx)
        };
        if self.mirror {
            (sy, width as f64 - 1.0 - sx)
        } else {
            (sy, sx)
        }
    }
}

fn symmetric<R: Rng>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.gen_range(-half..half)
    } else {
        0.0
    }
}

const EDGE_TOL: f64 = 1e-9;

/// Bilinear warp of an image; pixels mapped from outside the frame are 0.
pub fn warp_image(img: &GrayImage, p: &AugmentParams) -> GrayImage {
    let (h, w) = (img.height, img.width);
    let mut out = GrayImage::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = p.source(y, x, h, w);
            if sy < -EDGE_TOL
                || sx < -EDGE_TOL
                || sy > (h - 1) as f64 + EDGE_TOL
                || sx > (w - 1) as f64 + EDGE_TOL
            {
                continue;
            }
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (sy as usize, sx as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let v = if fy == 0.0 && fx == 0.0 {
                img.get(y0, x0)
            } else {
                let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
                let bot = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
                top * (1.0 - fy) + bot * fy
            };
            out.set(y, x, v);
        }
    }
    out
}

fn nearest_source(
    p: &AugmentParams,
    y: usize,
    x: usize,
    h: usize,
    w: usize,
) -> Option<(usize, usize)> {
    let (sy, sx) = p.source(y, x, h, w);
    let (ry, rx) = (libm::round(sy), libm::round(sx));
    if ry < 0.0 || rx < 0.0 || ry > (h - 1) as f64 || rx > (w - 1) as f64 {
        None
    } else {
        Some((ry as usize, rx as usize))
    }
}

/// Nearest-neighbour warp of a label map; outside pixels become background.
pub fn warp_labels(mask: &LabelMap, p: &AugmentParams) -> LabelMap {
    let (h, w) = (mask.height, mask.width);
    let mut out = LabelMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if let Some((sy, sx)) = nearest_source(p, y, x, h, w) {
                out.set(y, x, mask.get(sy, sx));
            }
        }
    }
    out
}

/// Nearest-neighbour warp of a real-valued map with a constant fill.
pub fn warp_nearest(img: &GrayImage, p: &AugmentParams, fill: f64) -> GrayImage {
    let (h, w) = (img.height, img.width);
    let mut out = GrayImage::filled(h, w, fill);
    for y in 0..h {
        for x in 0..w {
            if let Some((sy, sx)) = nearest_source(p, y, x, h, w) {
                out.set(y, x, img.get(sy, sx));
            }
        }
    }
    out
}

/// `clamp(gamma * (x - 0.5) + 0.5, 0, 1)`; identity when `gamma == 1`.
pub fn adjust_contrast(img: &GrayImage, gamma: f64) -> GrayImage {
    if gamma == 1.0 {
        return img.clone();
    }
    let data = img
        .data
        .iter()
        .map(|&v| (gamma * (v - 0.5) + 0.5).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        data,
    }
}

pub fn apply_augment(s: &Sample, p: &AugmentParams) -> Sample {
    Sample {
        subject_id: s.subject_id.clone(),
        image: adjust_contrast(&warp_image(&s.image, p), p.contrast),
        mask: warp_labels(&s.mask, p),
    }
}

/// Eight random variants of `s`, deterministic in `seed`.
pub fn augment(s: &Sample, seed: u64) -> Vec<Sample> {
    augment_with(s, seed, &AugmentRanges::default())
}

pub fn augment_with(s: &Sample, seed: u64, ranges: &AugmentRanges) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..AUGMENTED_VARIANTS)
        .map(|_| {
            let p = AugmentParams::sample(&mut rng, ranges, s.image.height, s.image.width);
            apply_augment(s, &p)
        })
        .collect()
}

// ---- synthetic phantoms ------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub scans_per_subject: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    pub min_region_area: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 9,
            scans_per_subject: 4,
            height: 64,
            width: 64,
            classes: 4,
            seed: 0,
            min_region_area: 2,
        }
    }
}

/// Shared geometry of one subject's retina.
struct SubjectGeometry {
    top: f64,
    thickness: f64,
    curve_amp: f64,
    curve_phase: f64,
    band_levels: [f64; 5],
    fluid_rate: Vec<f64>,
}

const BAND_FRACTIONS: [f64; 5] = [0.12, 0.22, 0.2, 0.38, 0.08];

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

impl SubjectGeometry {
    fn sample<R: Rng>(rng: &mut R, classes: usize) -> Self {
        SubjectGeometry {
            top: rng.gen_range(0.2..0.3),
            thickness: rng.gen_range(0.45..0.55),
            curve_amp: rng.gen_range(0.0..0.05),
            curve_phase: rng.gen_range(0.0..core::f64::consts::TAU),
            band_levels: [
                rng.gen_range(0.7..0.85),
                rng.gen_range(0.45..0.55),
                rng.gen_range(0.55..0.65),
                rng.gen_range(0.3..0.4),
                rng.gen_range(0.85..0.95),
            ],
            fluid_rate: (1..classes).map(|_| rng.gen_range(0.5..1.0)).collect(),
        }
    }
}

/// Retina top boundary (rows) at column `x`.
fn boundary(geo: &SubjectGeometry, shift: f64, x: usize, h: usize, w: usize) -> f64 {
    let t = x as f64 / w as f64;
    h as f64 * (geo.top + geo.curve_amp * libm::sin(core::f64::consts::TAU * t + geo.curve_phase))
        + shift
}

/// Relabels pixels that share no class with any of their 8 neighbours to
/// the most frequent neighbouring class. Relabelling an isolated pixel never
/// isolates another, so one pass suffices.
pub fn remove_isolated_pixels(mask: &mut LabelMap) {
    let (h, w) = (mask.height, mask.width);
    for y in 0..h {
        for x in 0..w {
            let l = mask.get(y, x);
            let mut counts = [0usize; 256];
            let mut same = false;
            for k in 0..DIRECTIONS {
                if let Some((ny, nx)) = neighbor(h, w, y, x, k) {
                    let nl = mask.get(ny, nx);
                    same |= nl == l;
                    counts[nl as usize] += 1;
                }
            }
            if !same {
                let best = (0..256)
                    .max_by_key(|&c| (counts[c], core::cmp::Reverse(c)))
                    .unwrap_or(0);
                mask.set(y, x, best as u8);
            }
        }
    }
}

/// True when some pixel has no same-label 8-neighbour.
pub fn has_isolated_pixel(mask: &LabelMap) -> bool {
    let (h, w) = (mask.height, mask.width);
    (0..h).any(|y| {
        (0..w).any(|x| {
            let l = mask.get(y, x);
            !(0..DIRECTIONS)
                .any(|k| neighbor(h, w, y, x, k).is_some_and(|(ny, nx)| mask.get(ny, nx) == l))
        })
    })
}

/// Layered retina phantoms with elliptical fluid pockets.
///
/// Each subject draws its own band geometry and intensities; its scans
/// jitter that geometry slightly. Fluid class `f` lives at depth slot `f` of
/// the retina (class 1 innermost) and is darker than the surrounding
/// tissue. Images are quantised to 8-bit levels so they survive a PGM
/// round-trip unchanged.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    if cfg.classes < 2 || cfg.classes > 256 {
        return Err(Error::Invalid(format!(
            "classes must be in 2..=256, got {}",
            cfg.classes
        )));
    }
    if cfg.height < 8 || cfg.width < 8 {
        return Err(Error::Invalid(format!(
            "synthetic size {}x{} is too small",
            cfg.height, cfg.width
        )));
    }
    if cfg.min_region_area < 2 {
        return Err(Error::Invalid("min_region_area must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let scale = h.min(w) as f64 / 64.0;
    let mut out = Vec::with_capacity(cfg.subjects * cfg.scans_per_subject);
    let width_digits = format!("{}", cfg.subjects.saturating_sub(1)).len().max(2);
    for subject in 0..cfg.subjects {
        let geo = SubjectGeometry::sample(&mut rng, cfg.classes);
        let id = format!("subject{:0width$}", subject, width = width_digits);
        for _ in 0..cfg.scans_per_subject {
            let shift = rng.gen_range(-2.0..2.0) * scale;
            let mut mask = LabelMap::zeros(h, w);
            let mut image = GrayImage::filled(h, w, 0.0);

            for x in 0..w {
                let top = boundary(&geo, shift, x, h, w);
                for y in 0..h {
                    let d = (y as f64 - top) / (geo.thickness * h as f64);
                    let v = if d < 0.0 {
                        0.08
                    } else {
                        let mut acc = 0.0;
                        let mut level = 0.45 * libm::exp(-3.0 * (d - 1.0));
                        for (frac, &l) in BAND_FRACTIONS.iter().zip(&geo.band_levels) {
                            if d < acc + frac {
                                level = l;
                                break;
                            }
                            acc += frac;
                        }
                        level
                    };
                    image.set(y, x, v);
                }
            }

            let fluids = cfg.classes - 1;
            for f in 1..=fluids {
                let count = (0..3)
                    .filter(|_| rng.gen_bool(geo.fluid_rate[f - 1] * 0.6))
                    .count();
                let dark = 0.02 + 0.1 * (f - 1) as f64 / fluids.max(1) as f64;
                for _ in 0..count {
                    place_ellipse(
                        &mut rng, &geo, shift, f, fluids, dark, cfg, scale, &mut image, &mut mask,
                    );
                }
            }
            remove_isolated_pixels(&mut mask);

            for v in image.data.iter_mut() {
                let noisy = *v * (1.0 + 0.2 * gaussian(&mut rng));
                *v = libm::round(noisy.clamp(0.0, 1.0) * 255.0) / 255.0;
            }
            out.push(Sample {
                subject_id: id.clone(),
                image,
                mask,
            });
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn place_ellipse<R: Rng>(
    rng: &mut R,
    geo: &SubjectGeometry,
    shift: f64,
    class: usize,
    fluids: usize,
    dark: f64,
    cfg: &SynthConfig,
    scale: f64,
    image: &mut GrayImage,
    mask: &mut LabelMap,
) {
    let (h, w) = (cfg.height, cfg.width);
    for _attempt in 0..20 {
        let a = rng.gen_range(3.0..8.0) * scale;
        let b = rng.gen_range(1.8..4.0) * scale;
        let cx = rng.gen_range(a + 1.0..(w as f64 - a - 1.0).max(a + 1.5));
        let slot = (class as f64 - 0.5) / fluids as f64;
        let depth = (0.1 + 0.8 * slot + rng.gen_range(-0.04..0.04)) * geo.thickness * h as f64;
        let cy = boundary(geo, shift, cx as usize, h, w) + depth;
        let (y0, y1) = (
            (cy - b - 1.0).max(0.0) as usize,
            ((cy + b + 2.0) as usize).min(h),
        );
        let (x0, x1) = (
            (cx - a - 1.0).max(0.0) as usize,
            ((cx + a + 2.0) as usize).min(w),
        );
        let mut pixels = Vec::new();
        let mut clash = false;
        for y in y0..y1 {
            for x in x0..x1 {
                let (ny, nx) = ((y as f64 - cy) / b, (x as f64 - cx) / a);
                if ny * ny + nx * nx <= 1.0 {
                    pixels.push((y, x));
                }
                // keep a one pixel gap to existing fluid
                let (gy, gx) = ((y as f64 - cy) / (b + 1.0), (x as f64 - cx) / (a + 1.0));
                if gy * gy + gx * gx <= 1.0 && mask.get(y, x) != 0 {
                    clash = true;
                }
            }
        }
        if clash || pixels.len() < cfg.min_region_area {
            continue;
        }
        for (y, x) in pixels {
            mask.set(y, x, class as u8);
            image.set(y, x, dark);
        }
        return;
    }
}
