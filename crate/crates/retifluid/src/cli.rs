//! Subcommands: `synth`, `train`, `eval`, `infer`, `gradcheck`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use retifluid_core::data::{preprocess_sample, resize_labels, synth_generate, Sample, SynthConfig};
use retifluid_core::eval::{self, CvEvent, CvReport, Wilcoxon};
use retifluid_core::gradcheck;
use retifluid_core::model::{InferenceHead, Model, ModelConfig};
use retifluid_core::train::fit;

use crate::checkpoint;
use crate::config::{self, Resolved, RunConfig, RESOLVED_NAME};
use crate::error::{CliError, CliResult};
use crate::manifest::{self, Entry, Manifest};
use crate::pgm;
use crate::report::{self, TrainLog};

pub const CHECKPOINT_NAME: &str = "model.rfnt";
pub const TRAIN_LOG_NAME: &str = "train_log.csv";

#[derive(Debug, Parser)]
#[command(
    name = "retifluid",
    version,
    about = "Retinal fluid segmentation: synthetic data, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic layered-phantom dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model; writes the checkpoint, loss log and resolved config.
    Train(TrainArgs),
    /// Score a checkpoint, or run subject-level cross-validation.
    Eval(EvalArgs),
    /// Segment one image into a class-index mask.
    Infer(InferArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub scans: usize,
    /// `HxW`.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub min_region_area: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest; overrides `data` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to score.
    #[arg(long, conflicts_with = "cv", required_unless_present = "cv")]
    pub model: Option<PathBuf>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub cv: Option<usize>,
    /// Fold assignment seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run configuration (architecture and training plan).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also cross-validate the plain-dice ablation (no connectivity loss, no
    /// auxiliary scales) and compare the two with the Wilcoxon test.
    #[arg(long, requires = "cv")]
    pub compare_ablation: bool,
    #[arg(long, value_enum)]
    pub head: Option<Head>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resolved or run config of the training run; defaults to the resolved
    /// config next to the checkpoint when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub head: Option<Head>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeded cases per operation.
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Connectivity,
    Standard,
}

impl From<Head> for InferenceHead {
    fn from(h: Head) -> Self {
        match h {
            Head::Connectivity => InferenceHead::Connectivity,
            Head::Standard => InferenceHead::Standard,
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s}"))?;
    Ok((h, w))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

// ---- synth -------------------------------------------------------------

pub fn cmd_synth(a: &SynthArgs) -> CliResult<Manifest> {
    if a.classes < 2 {
        return Err(CliError::Validation(format!(
            "--classes must be at least 2 (background plus one fluid), got {}",
            a.classes
        )));
    }
    let cfg = SynthConfig {
        subjects: a.subjects,
        scans_per_subject: a.scans,
        height: a.size.0,
        width: a.size.1,
        classes: a.classes,
        seed: a.seed,
        min_region_area: a.min_region_area,
    };
    let samples = synth_generate(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    for sub in ["images", "masks"] {
        create_dir(&a.out.join(sub))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let scan = i % a.scans.max(1);
        let stem = format!("{}_{:02}.pgm", s.subject_id, scan);
        let (image, mask) = (format!("images/{stem}"), format!("masks/{stem}"));
        pgm::save_image(&a.out.join(&image), &s.image)?;
        pgm::save_mask(&a.out.join(&mask), &s.mask)?;
        entries.push(Entry {
            subject_id: s.subject_id.clone(),
            image,
            mask,
        });
    }
    let m = Manifest {
        classes: a.classes,
        size: [a.size.0, a.size.1],
        entries,
    };
    manifest::save_manifest(&a.out.join("manifest.json"), &m)?;
    info!(
        "wrote {} scans of {} subjects to {}",
        samples.len(),
        a.subjects,
        a.out.display()
    );
    Ok(m)
}

// ---- train -------------------------------------------------------------

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => config::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Samples resized and normalised to the model input.
pub fn prepare(samples: &[Sample], size: (usize, usize)) -> CliResult<Vec<Sample>> {
    samples
        .iter()
        .map(|s| preprocess_sample(s, size).map_err(CliError::from))
        .collect()
}

fn numerical(e: retifluid_core::Error) -> CliError {
    match e {
        retifluid_core::Error::NonFinite(msg) => {
            CliError::Numerical(format!("non-finite value: {msg}"))
        }
        other => other.into(),
    }
}

/// Output directory of a finished training run.
#[derive(Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub resolved: Resolved,
    pub model: Model,
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainOutput> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.output_dir = Some(o.clone());
    }
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Validation("no dataset: pass --data or set `data`".into()))?;
    let out = cfg.output_dir.clone().ok_or_else(|| {
        CliError::Validation("no output directory: pass --out or set `output_dir`".into())
    })?;
    let (m, samples) = manifest::load_samples(&data)?;
    let resolved = cfg.resolve(m.classes)?;
    create_dir(&out)?;
    resolved.write(&out)?;

    let mc = resolved.model_config();
    let tc = resolved.train_config();
    let samples = prepare(&samples, mc.input_size)?;
    let mut model = Model::build(mc, resolved.model.seed)?;
    info!(
        "training {} trainable values on {} scans for {} epochs",
        model.params().trainable_count(),
        samples.len(),
        tc.epochs
    );
    let mut log = TrainLog::create(&out.join(TRAIN_LOG_NAME))?;
    let mut log_err = None;
    let result = fit(&mut model, &samples, &tc, |r| {
        if log_err.is_none() {
            log_err = log.push(r).err();
        }
        if r.step % 50 == 0 {
            info!(
                "epoch {} step {} joint {:.5}",
                r.epoch, r.step, r.loss.joint
            );
        }
    });
    log.finish()?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let report = result.map_err(numerical)?;
    if let Some(last) = report.epoch_loss.last() {
        info!("final epoch mean joint loss {last:.5}");
    }
    checkpoint::save(&out.join(CHECKPOINT_NAME), &model)?;
    Ok(TrainOutput {
        dir: out,
        resolved,
        model,
    })
}

// ---- eval / infer ------------------------------------------------------

/// Model configuration for a checkpoint: from `config` when given, else the
/// resolved config beside the checkpoint, else derived from the tensors.
fn checkpoint_setup(
    ckpt: &Path,
    config: Option<&Path>,
    fallback_size: (usize, usize),
) -> CliResult<(Model, Option<Resolved>)> {
    let records = checkpoint::read(ckpt)?;
    let beside = ckpt
        .parent()
        .map(|d| d.join(RESOLVED_NAME))
        .filter(|p| p.exists());
    let path = config.map(Path::to_path_buf).or(beside);
    let (mc, resolved) = match path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            // a resolved config, or a run config completed from the checkpoint
            let r = match serde_json::from_str::<Resolved>(&text) {
                Ok(r) => r,
                Err(_) => config::parse(&text, &p.display().to_string())?
                    .resolve(checkpoint::classes(&records)?)?,
            };
            (r.model_config(), Some(r))
        }
        None => (checkpoint::infer_config(&records, fallback_size)?, None),
    };
    let model = checkpoint::load_model(&records, mc)?;
    Ok((model, resolved))
}

fn pick_head(flag: Option<Head>, resolved: Option<&Resolved>) -> InferenceHead {
    match (flag, resolved) {
        (Some(h), _) => h.into(),
        (None, Some(r)) => eval::default_head(r.train.lambda),
        (None, None) => InferenceHead::Connectivity,
    }
}

fn fallback_size(h: usize, w: usize) -> (usize, usize) {
    if h.is_multiple_of(32) && w.is_multiple_of(32) && h > 0 && w > 0 {
        (h, w)
    } else {
        let d = config::DEFAULT_INPUT;
        (d[0], d[1])
    }
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let image = pgm::load_image(&a.image)?;
    let (model, resolved) = checkpoint_setup(
        &a.model,
        a.config.as_deref(),
        fallback_size(image.height, image.width),
    )?;
    let head = pick_head(a.head, resolved.as_ref());
    let size = model.config().input_size;
    let blank = retifluid_core::image::LabelMap::zeros(image.height, image.width);
    let s = preprocess_sample(&Sample::new("infer", image.clone(), blank)?, size)?;
    let labels = model.infer_with(&s.image, head).map_err(numerical)?;
    let mask = resize_labels(&labels, image.height, image.width);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    pgm::save_mask(&a.out, &mask)?;
    info!(
        "wrote {}x{} mask to {}",
        mask.height,
        mask.width,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let (m, samples) = manifest::load_samples(&a.data)?;
    create_dir(&a.out)?;
    match (&a.model, a.cv) {
        (Some(ckpt), _) => eval_checkpoint(a, ckpt, &m, &samples),
        (None, Some(k)) => eval_cv(a, k, &m, &samples).map(|_| ()),
        (None, None) => Err(CliError::Validation("pass --model or --cv".into())),
    }
}

fn eval_checkpoint(a: &EvalArgs, ckpt: &Path, m: &Manifest, samples: &[Sample]) -> CliResult<()> {
    let (model, resolved) = checkpoint_setup(
        ckpt,
        a.config.as_deref(),
        fallback_size(m.size[0], m.size[1]),
    )?;
    if model.config().classes != m.classes {
        return Err(CliError::Validation(format!(
            "checkpoint predicts {} classes, dataset has {}",
            model.config().classes,
            m.classes
        )));
    }
    let head = pick_head(a.head, resolved.as_ref());
    let prepared = prepare(samples, model.config().input_size)?;
    let metrics = eval::evaluate(&model, &prepared, head).map_err(numerical)?;
    report::write_metrics(&a.out.join("metrics.csv"), &metrics)?;
    let ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    report::write_per_scan(&a.out.join("per_scan.csv"), &ids, &metrics)?;
    info!(
        "mean fluid DSC {:.4}, balanced ACC {:.4}",
        metrics.mean_dsc(),
        eval::mean(&metrics.acc)
    );
    Ok(())
}

/// Cross-validation results written by `eval --cv`.
#[derive(Debug)]
pub struct CvOutput {
    pub full: CvReport,
    pub ablation: Option<CvReport>,
    pub wilcoxon: Vec<(String, Wilcoxon)>,
}

/// Runs cross-validation and writes `summary.csv` and `folds.csv`, with
/// `ablation_summary.csv` and `wilcoxon.csv` when the ablation is requested.
pub fn eval_cv(a: &EvalArgs, k: usize, m: &Manifest, samples: &[Sample]) -> CliResult<CvOutput> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.data = Some(a.data.clone());
    cfg.output_dir = Some(a.out.clone());
    let resolved = cfg.resolve(m.classes)?;
    create_dir(&a.out)?;
    resolved.write(&a.out)?;
    let mc = resolved.model_config();
    let tc = resolved.train_config();
    let prepared = prepare(samples, mc.input_size)?;

    let run = |label: &str,
               mc: &ModelConfig,
               tc: &retifluid_core::train::TrainConfig|
     -> CliResult<CvReport> {
        let report = eval::run_cv(&prepared, mc, tc, k, a.seed, |e| match e {
            CvEvent::Step(f, r) if r.step % 50 == 0 => {
                info!(
                    "{label} fold {f} epoch {} step {} joint {:.5}",
                    r.epoch, r.step, r.loss.joint
                )
            }
            CvEvent::Fold(f) => info!(
                "{label} fold {} mean fluid DSC {:.4}",
                f.fold,
                f.metrics.mean_dsc()
            ),
            _ => {}
        })
        .map_err(numerical)?;
        Ok(report)
    };
    let full = run("full", &mc, &tc)?;
    report::write_summary(&a.out.join("summary.csv"), &full)?;
    report::write_folds(&a.out.join("folds.csv"), &full)?;
    info!(
        "mean fluid DSC {:.4} over {k} folds",
        full.summary.overall_dsc()
    );

    if !a.compare_ablation {
        return Ok(CvOutput {
            full,
            ablation: None,
            wilcoxon: Vec::new(),
        });
    }
    let mut amc = mc.clone();
    amc.aux_scales = 0;
    let mut atc = tc.clone();
    atc.lambda = 0.0;
    let ablation = run("ablation", &amc, &atc)?;
    report::write_summary(&a.out.join("ablation_summary.csv"), &ablation)?;
    let wilcoxon = compare(&full, &ablation)?;
    report::write_wilcoxon(&a.out.join("wilcoxon.csv"), &wilcoxon)?;
    info!(
        "ablation mean fluid DSC {:.4}; full minus ablation {:+.4}",
        ablation.summary.overall_dsc(),
        full.summary.overall_dsc() - ablation.summary.overall_dsc()
    );
    Ok(CvOutput {
        full,
        ablation: Some(ablation),
        wilcoxon,
    })
}

/// Paired per-scan DSC comparisons, per fluid class and pooled.
pub fn compare(full: &CvReport, ablation: &CvReport) -> CliResult<Vec<(String, Wilcoxon)>> {
    let scans = |r: &CvReport| -> Vec<Vec<f64>> {
        r.folds
            .iter()
            .flat_map(|f| f.metrics.per_scan_dsc.iter().cloned())
            .collect()
    };
    let (a, b) = (scans(full), scans(ablation));
    let classes = a.first().map_or(0, Vec::len);
    let mut rows = Vec::new();
    for c in 0..classes {
        let x: Vec<f64> = a.iter().map(|s| s[c]).collect();
        let y: Vec<f64> = b.iter().map(|s| s[c]).collect();
        rows.push((
            format!("class{}:full-vs-ablation", c + 1),
            eval::wilcoxon_signed_rank(&x, &y)?,
        ));
    }
    let x: Vec<f64> = a.iter().map(|s| eval::mean(s)).collect();
    let y: Vec<f64> = b.iter().map(|s| eval::mean(s)).collect();
    rows.push((
        "mean:full-vs-ablation".to_string(),
        eval::wilcoxon_signed_rank(&x, &y)?,
    ));
    Ok(rows)
}

// ---- gradcheck ---------------------------------------------------------

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let results = gradcheck::run_suite(a.seed, a.cases)?;
    for r in &results {
        println!("{r}");
    }
    let failed = gradcheck::failures(&results);
    println!("{} cases, {} failed", results.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{} gradient checks failed",
            failed.len()
        )))
    }
}
