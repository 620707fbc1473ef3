//! Segmentation metrics, subject-level k-fold cross-validation and the
//! Wilcoxon signed-rank test.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::image::LabelMap;
use crate::model::{images_to_batch, InferenceHead, Model, ModelConfig};
use crate::train::{fit, StepRecord, TrainConfig};

/// One-vs-rest pixel counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Self> {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(Error::Shape {
                op: "confusion",
                detail: format!(
                    "pred {}x{} vs truth {}x{}",
                    pred.height, pred.width, gt.height, gt.width
                ),
            });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &t) in pred.data.iter().zip(&gt.data) {
            match (p == class, t == class) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `2tp / (2tp + fp + fn)`, 1 when both sets are empty.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn balanced_acc(&self) -> f64 {
        0.5 * (self.sensitivity() + self.specificity())
    }
}

/// An empty denominator means no errors were possible.
fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        1.0
    } else {
        num as f64 / denom as f64
    }
}

pub fn dsc_metric(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt, class)?.dsc())
}

pub fn balanced_acc(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt, class)?.balanced_acc())
}

// ---- folds -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the distinct subject ids with `seed` and deals them into `k`
/// test sets whose sizes differ by at most one.
pub fn kfold_split(subject_ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let universe: BTreeSet<&String> = subject_ids.iter().collect();
    let mut subjects: Vec<String> = universe.into_iter().cloned().collect();
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    if k > subjects.len() {
        return Err(Error::Invalid(format!(
            "k = {k} exceeds the {} distinct subjects",
            subjects.len()
        )));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (subjects.len() / k, subjects.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut test = subjects[start..start + len].to_vec();
        let mut train: Vec<String> = subjects[..start]
            .iter()
            .chain(&subjects[start + len..])
            .cloned()
            .collect();
        test.sort();
        train.sort();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

/// Fails if a subject is in both the train and test sets of `fold`.
pub fn assert_disjoint(fold: &Fold) -> Result<()> {
    match fold.test.iter().find(|s| fold.train.contains(s)) {
        Some(s) => Err(Error::Invalid(format!(
            "subject {s} appears in both train and test sets"
        ))),
        None => Ok(()),
    }
}

// ---- Wilcoxon ----------------------------------------------------------

/// Effective sizes up to this use the exact null distribution.
pub const EXACT_MAX_N: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WilcoxonBranch {
    Exact,
    Normal,
    /// Fewer than 3 nonzero differences.
    Undefined,
}

impl WilcoxonBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            WilcoxonBranch::Exact => "exact",
            WilcoxonBranch::Normal => "normal",
            WilcoxonBranch::Undefined => "undefined",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wilcoxon {
    pub n_effective: usize,
    /// Sum of the ranks of positive differences `a - b`.
    pub w: f64,
    pub p_value: Option<f64>,
    pub branch: WilcoxonBranch,
}

/// Nonzero differences `a - b` and their average ranks by magnitude.
pub fn signed_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "wilcoxon",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wilcoxon input".into()));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    Ok((d, ranks))
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    let (d, ranks) = signed_ranks(a, b)?;
    let n = d.len();
    let w: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let (p_value, branch) = if n < 3 {
        (None, WilcoxonBranch::Undefined)
    } else if n <= EXACT_MAX_N {
        (Some(exact_p(&ranks, w)), WilcoxonBranch::Exact)
    } else {
        (Some(normal_p(&ranks, w)), WilcoxonBranch::Normal)
    };
    Ok(Wilcoxon {
        n_effective: n,
        w,
        p_value,
        branch,
    })
}

/// Two-sided exact p-value of `w` over all `2^n` sign assignments. Ranks
/// are halves at worst, so doubled ranks are integers.
pub fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks
        .iter()
        .map(|r| libm::round(r * 2.0) as usize)
        .collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let t = libm::round(w * 2.0) as usize;
    let total = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=t.min(max)].iter().sum();
    let upper: u64 = counts[t.min(max)..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total).min(1.0)
}

/// Two-sided normal approximation with tie and continuity corrections.
pub fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
}

// ---- cross-validation --------------------------------------------------

/// Per-class metrics averaged over B-scans. Index `i` is fluid class `i + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub dsc: Vec<f64>,
    pub acc: Vec<f64>,
    /// `per_scan_dsc[scan][i]`.
    pub per_scan_dsc: Vec<Vec<f64>>,
}

impl ClassMetrics {
    pub fn mean_dsc(&self) -> f64 {
        mean(&self.dsc)
    }
}

/// DSC and balanced accuracy of every fluid class, averaged over scans.
pub fn score(preds: &[LabelMap], truths: &[LabelMap], classes: usize) -> Result<ClassMetrics> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            op: "score",
            detail: format!("{} predictions for {} masks", preds.len(), truths.len()),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let fluids = classes - 1;
    let mut m = ClassMetrics {
        dsc: vec![0.0; fluids],
        acc: vec![0.0; fluids],
        per_scan_dsc: Vec::new(),
    };
    for (p, t) in preds.iter().zip(truths) {
        let mut scan = Vec::with_capacity(fluids);
        for c in 1..classes {
            let counts = ConfusionCounts::from_masks(p, t, c as u8)?;
            scan.push(counts.dsc());
            m.dsc[c - 1] += counts.dsc();
            m.acc[c - 1] += counts.balanced_acc();
        }
        m.per_scan_dsc.push(scan);
    }
    let n = preds.len() as f64;
    m.dsc
        .iter_mut()
        .chain(m.acc.iter_mut())
        .for_each(|v| *v /= n);
    Ok(m)
}

/// Head used for label maps: the connectivity decode, unless the
/// connectivity heads were never trained.
pub fn default_head(lambda: f64) -> InferenceHead {
    if lambda > 0.0 {
        InferenceHead::Connectivity
    } else {
        InferenceHead::Standard
    }
}

/// Predicted label maps for `samples`, in order.
pub fn predict(model: &Model, samples: &[Sample], head: InferenceHead) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(4) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        out.extend(model.infer_batch(&images_to_batch(&images)?, head)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, samples: &[Sample], head: InferenceHead) -> Result<ClassMetrics> {
    let preds = predict(model, samples, head)?;
    let truths: Vec<LabelMap> = samples.iter().map(|s| s.mask.clone()).collect();
    score(&preds, &truths, model.config().classes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub metrics: ClassMetrics,
    /// Mean joint loss per training epoch.
    pub epoch_loss: Vec<f64>,
}

/// Mean and standard deviation across folds, per fluid class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CvSummary {
    pub mean_dsc: Vec<f64>,
    pub std_dsc: Vec<f64>,
    pub mean_acc: Vec<f64>,
    pub std_acc: Vec<f64>,
}

impl CvSummary {
    pub fn from_folds(folds: &[FoldReport]) -> Self {
        let classes = folds.first().map_or(0, |f| f.metrics.dsc.len());
        let mut s = CvSummary::default();
        for c in 0..classes {
            let d: Vec<f64> = folds.iter().map(|f| f.metrics.dsc[c]).collect();
            let a: Vec<f64> = folds.iter().map(|f| f.metrics.acc[c]).collect();
            s.mean_dsc.push(mean(&d));
            s.std_dsc.push(std_dev(&d));
            s.mean_acc.push(mean(&a));
            s.std_acc.push(std_dev(&a));
        }
        s
    }

    /// Mean fluid-class DSC.
    pub fn overall_dsc(&self) -> f64 {
        mean(&self.mean_dsc)
    }

    pub fn overall_acc(&self) -> f64 {
        mean(&self.mean_acc)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub summary: CvSummary,
}

/// Events reported while cross-validation runs.
pub enum CvEvent<'a> {
    Step(usize, &'a StepRecord),
    Fold(&'a FoldReport),
}

/// Subject-level k-fold cross-validation. Each fold trains a fresh model
/// (seeded with `train.seed + fold`) on the training subjects and scores it
/// on the held-out ones.
pub fn run_cv<F: FnMut(CvEvent<'_>)>(
    samples: &[Sample],
    model_config: &ModelConfig,
    train: &TrainConfig,
    k: usize,
    seed: u64,
    mut on_event: F,
) -> Result<CvReport> {
    if samples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    let folds = kfold_split(&ids, k, seed)?;
    let head = default_head(train.lambda);
    let mut reports = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        assert_disjoint(fold)?;
        let pick = |set: &[String]| -> Vec<Sample> {
            samples
                .iter()
                .filter(|s| set.contains(&s.subject_id))
                .cloned()
                .collect()
        };
        let (train_set, test_set) = (pick(&fold.train), pick(&fold.test));
        let mut model = Model::build(model_config.clone(), train.seed.wrapping_add(i as u64))?;
        let fit_report = fit(&mut model, &train_set, train, |r| {
            on_event(CvEvent::Step(i, r))
        })?;
        let metrics = evaluate(&model, &test_set, head)?;
        let report = FoldReport {
            fold: i,
            train_subjects: fold.train.clone(),
            test_subjects: fold.test.clone(),
            metrics,
            epoch_loss: fit_report.epoch_loss,
        };
        on_event(CvEvent::Fold(&report));
        reports.push(report);
    }
    let summary = CvSummary::from_folds(&reports);
    Ok(CvReport {
        folds: reports,
        summary,
    })
}
