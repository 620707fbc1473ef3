//! JSON run configuration. Absent keys take defaults; unknown keys are
//! rejected. The fully resolved document is written next to every run's
//! outputs and reproduces the run when passed back in.

use std::fs;
use std::path::{Path, PathBuf};

use retifluid_core::data::AugmentRanges;
use retifluid_core::model::ModelConfig;
use retifluid_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RESOLVED_NAME: &str = "resolved-config.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `[H, W]`; defaults to 64x64.
    pub input_size: Option<[usize; 2]>,
    /// Defaults to the manifest's class count.
    pub classes: Option<usize>,
    pub base_channels: Option<usize>,
    pub aux_scales: Option<usize>,
    pub rmp_kernels: Option<Vec<usize>>,
    pub sda_pool: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub decay_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
    pub include_background: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: Option<bool>,
    pub mirror_prob: Option<f64>,
    pub max_rotation_deg: Option<f64>,
    pub max_translation: Option<f64>,
    pub contrast: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augment: AugmentSection,
    /// Manifest path.
    pub data: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Every value filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved {
    pub model: ResolvedModel,
    pub train: ResolvedTrain,
    pub augment: ResolvedAugment,
    pub data: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedModel {
    pub input_size: [usize; 2],
    pub classes: usize,
    pub base_channels: usize,
    pub aux_scales: usize,
    pub rmp_kernels: Vec<usize>,
    pub sda_pool: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedTrain {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub include_background: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedAugment {
    pub enabled: bool,
    pub mirror_prob: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub contrast: [f64; 2],
}

pub const DEFAULT_INPUT: [usize; 2] = [64, 64];

pub fn parse(text: &str, origin: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Validation(format!("{origin}: at `{path}`: {}", e.into_inner()))
    })
}

pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, &path.display().to_string())
}

impl RunConfig {
    /// Fills defaults. `classes` comes from the dataset when not set.
    pub fn resolve(&self, manifest_classes: usize) -> CliResult<Resolved> {
        let m = &self.model;
        let [h, w] = m.input_size.unwrap_or(DEFAULT_INPUT);
        let classes = m.classes.unwrap_or(manifest_classes);
        let toy = ModelConfig::toy(h, w, classes);
        let mut mc = ModelConfig {
            input_size: (h, w),
            classes,
            base_channels: m.base_channels.unwrap_or(toy.base_channels),
            aux_scales: m.aux_scales.unwrap_or(toy.aux_scales),
            rmp_kernels: m.rmp_kernels.clone().unwrap_or(toy.rmp_kernels),
            sda_pool: m.sda_pool.clone(),
        };
        mc.validate()
            .map_err(|e| CliError::Validation(format!("model: {e}")))?;
        if classes != manifest_classes {
            return Err(CliError::Validation(format!(
                "model.classes = {classes} but the dataset has {manifest_classes} classes"
            )));
        }
        mc.sda_pool = Some(mc.sda_pools());

        let d = TrainConfig::default();
        let t = &self.train;
        let a = &self.augment;
        let r = AugmentRanges::default();
        let resolved = Resolved {
            model: ResolvedModel {
                input_size: [h, w],
                classes,
                base_channels: mc.base_channels,
                aux_scales: mc.aux_scales,
                rmp_kernels: mc.rmp_kernels.clone(),
                sda_pool: mc.sda_pool.clone().unwrap_or_default(),
                seed: m.seed.unwrap_or(0),
            },
            train: ResolvedTrain {
                epochs: t.epochs.unwrap_or(d.epochs),
                lr: t.lr.unwrap_or(d.lr),
                lr_decay: t.lr_decay.unwrap_or(d.lr_decay),
                decay_every: t.decay_every.unwrap_or(d.decay_every),
                batch_size: t.batch_size.unwrap_or(d.batch_size),
                rho: t.rho.unwrap_or(d.rho),
                epsilon: t.epsilon.unwrap_or(d.epsilon),
                lambda: t.lambda.unwrap_or(d.lambda),
                include_background: t.include_background.unwrap_or(d.include_background),
                seed: t.seed.unwrap_or(d.seed),
            },
            augment: ResolvedAugment {
                enabled: a.enabled.unwrap_or(true),
                mirror_prob: a.mirror_prob.unwrap_or(r.mirror_prob),
                max_rotation_deg: a.max_rotation_deg.unwrap_or(r.max_rotation_deg),
                max_translation: a.max_translation.unwrap_or(r.max_translation),
                contrast: a.contrast.unwrap_or([r.contrast.0, r.contrast.1]),
            },
            data: self.data.clone().unwrap_or_default(),
            output_dir: self.output_dir.clone().unwrap_or_default(),
        };
        resolved
            .train_config()
            .validate()
            .map_err(|e| CliError::Validation(format!("train: {e}")))?;
        Ok(resolved)
    }
}

impl Resolved {
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_size: (m.input_size[0], m.input_size[1]),
            classes: m.classes,
            base_channels: m.base_channels,
            aux_scales: m.aux_scales,
            rmp_kernels: m.rmp_kernels.clone(),
            sda_pool: Some(m.sda_pool.clone()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let a = &self.augment;
        TrainConfig {
            epochs: t.epochs,
            lr: t.lr,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            batch_size: t.batch_size,
            rho: t.rho,
            epsilon: t.epsilon,
            lambda: t.lambda,
            include_background: t.include_background,
            augment: a.enabled,
            augment_ranges: AugmentRanges {
                mirror_prob: a.mirror_prob,
                max_rotation_deg: a.max_rotation_deg,
                max_translation: a.max_translation,
                contrast: (a.contrast[0], a.contrast[1]),
            },
            seed: t.seed,
        }
    }

    /// Back to a [`RunConfig`] with every key present.
    pub fn to_run_config(&self) -> RunConfig {
        let m = &self.model;
        let t = &self.train;
        let a = &self.augment;
        RunConfig {
            model: ModelSection {
                input_size: Some(m.input_size),
                classes: Some(m.classes),
                base_channels: Some(m.base_channels),
                aux_scales: Some(m.aux_scales),
                rmp_kernels: Some(m.rmp_kernels.clone()),
                sda_pool: Some(m.sda_pool.clone()),
                seed: Some(m.seed),
            },
            train: TrainSection {
                epochs: Some(t.epochs),
                lr: Some(t.lr),
                lr_decay: Some(t.lr_decay),
                decay_every: Some(t.decay_every),
                batch_size: Some(t.batch_size),
                rho: Some(t.rho),
                epsilon: Some(t.epsilon),
                lambda: Some(t.lambda),
                include_background: Some(t.include_background),
                seed: Some(t.seed),
            },
            augment: AugmentSection {
                enabled: Some(a.enabled),
                mirror_prob: Some(a.mirror_prob),
                max_rotation_deg: Some(a.max_rotation_deg),
                max_translation: Some(a.max_translation),
                contrast: Some(a.contrast),
            },
            data: Some(self.data.clone()),
            output_dir: Some(self.output_dir.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(RESOLVED_NAME);
        fs::write(&path, self.to_json()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
