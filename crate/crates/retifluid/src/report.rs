//! CSV outputs: training log, cross-validation summary, per-scan metrics
//! and Wilcoxon comparisons.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use retifluid_core::eval::{ClassMetrics, CvReport, Wilcoxon};
use retifluid_core::model::SDA_PLACEMENTS;
use retifluid_core::train::StepRecord;

use crate::error::{CliError, CliResult};

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn create(path: &Path) -> CliResult<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish<W: Write>(w: csv::Writer<W>, path: &Path) -> CliResult<()> {
    w.into_inner()
        .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))?
        .flush()
        .map_err(|e| CliError::io(path, e))
}

pub fn train_log_header() -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "step", "lr", "dice_main", "dlc", "clc", "joint"]
        .map(String::from)
        .to_vec();
    for i in 1..=SDA_PLACEMENTS {
        h.push(format!("sda{i}.alpha"));
        h.push(format!("sda{i}.beta"));
    }
    h
}

pub fn train_log_row(r: &StepRecord) -> Vec<String> {
    let l = &r.loss;
    let mut row = vec![
        r.epoch.to_string(),
        r.step.to_string(),
        num(r.lr),
        num(l.dice_main),
        num(l.dlc),
        num(l.clc),
        num(l.joint),
    ];
    for w in &r.sda {
        row.push(num(w.alpha));
        row.push(num(w.beta));
    }
    row
}

/// Streams training-log rows as steps complete.
pub struct TrainLog {
    writer: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl TrainLog {
    pub fn create(path: &Path) -> CliResult<Self> {
        let mut writer = create(path)?;
        writer.write_record(train_log_header())?;
        Ok(TrainLog {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn push(&mut self, r: &StepRecord) -> CliResult<()> {
        self.writer.write_record(train_log_row(r))?;
        Ok(())
    }

    pub fn finish(self) -> CliResult<()> {
        finish(self.writer, &self.path)
    }
}

/// `fold, class, dsc, acc` per fold, then `mean` and `std` rows per class.
pub fn write_summary(path: &Path, cv: &CvReport) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(["fold", "class", "dsc", "acc"])?;
    for f in &cv.folds {
        for (i, (d, a)) in f.metrics.dsc.iter().zip(&f.metrics.acc).enumerate() {
            w.write_record([f.fold.to_string(), (i + 1).to_string(), num(*d), num(*a)])?;
        }
    }
    let s = &cv.summary;
    for (label, dsc, acc) in [
        ("mean", &s.mean_dsc, &s.mean_acc),
        ("std", &s.std_dsc, &s.std_acc),
    ] {
        for (i, (d, a)) in dsc.iter().zip(acc).enumerate() {
            w.write_record([label.to_string(), (i + 1).to_string(), num(*d), num(*a)])?;
        }
    }
    finish(w, path)
}

/// `fold, split, subject_id`.
pub fn write_folds(path: &Path, cv: &CvReport) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(["fold", "split", "subject_id"])?;
    for f in &cv.folds {
        for (split, set) in [("train", &f.train_subjects), ("test", &f.test_subjects)] {
            for s in set {
                w.write_record([f.fold.to_string(), split.to_string(), s.clone()])?;
            }
        }
    }
    finish(w, path)
}

/// Single-model metrics in the summary layout, with `fold` set to `all`.
pub fn write_metrics(path: &Path, m: &ClassMetrics) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(["fold", "class", "dsc", "acc"])?;
    for (i, (d, a)) in m.dsc.iter().zip(&m.acc).enumerate() {
        w.write_record(["all".to_string(), (i + 1).to_string(), num(*d), num(*a)])?;
    }
    finish(w, path)
}

/// `scan, subject_id, class, dsc`.
pub fn write_per_scan(path: &Path, subjects: &[String], m: &ClassMetrics) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(["scan", "subject_id", "class", "dsc"])?;
    for (scan, (subject, row)) in subjects.iter().zip(&m.per_scan_dsc).enumerate() {
        for (i, d) in row.iter().enumerate() {
            w.write_record([
                scan.to_string(),
                subject.clone(),
                (i + 1).to_string(),
                num(*d),
            ])?;
        }
    }
    finish(w, path)
}

/// `comparison, n_effective, W, p_value, branch`; an undefined p-value is
/// left empty.
pub fn write_wilcoxon(path: &Path, rows: &[(String, Wilcoxon)]) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_record(["comparison", "n_effective", "W", "p_value", "branch"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.n_effective.to_string(),
            num(r.w),
            r.p_value.map(num).unwrap_or_default(),
            r.branch.as_str().to_string(),
        ])?;
    }
    finish(w, path)
}
