//! Dataset manifest: `{"classes", "size": [H, W], "entries": [...]}` with
//! paths relative to the manifest file.

use std::fs;
use std::path::{Path, PathBuf};

use retifluid_core::data::Sample;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::pgm;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub subject_id: String,
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    /// `[H, W]` of every image and mask.
    pub size: [usize; 2],
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn validate(&self) -> CliResult<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(CliError::Validation(format!(
                "manifest classes must be in 2..=256, got {}",
                self.classes
            )));
        }
        if self.size[0] == 0 || self.size[1] == 0 {
            return Err(CliError::Validation(format!(
                "manifest size {:?} must be positive",
                self.size
            )));
        }
        if self.entries.is_empty() {
            return Err(CliError::Validation("manifest has no entries".into()));
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: invalid manifest: {e}", path.display())))?;
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(path: &Path, m: &Manifest) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(m).expect("manifest serialises");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads every entry. Images and masks must have the declared size and
/// labels must be below `classes`.
pub fn load_samples(path: &Path) -> CliResult<(Manifest, Vec<Sample>)> {
    let m = load_manifest(path)?;
    let base = base_dir(path);
    let mut samples = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let (ip, mp) = (base.join(&e.image), base.join(&e.mask));
        let image = pgm::load_image(&ip)?;
        let mask = pgm::load_mask(&mp)?;
        for (what, p, h, w) in [
            ("image", &ip, image.height, image.width),
            ("mask", &mp, mask.height, mask.width),
        ] {
            if [h, w] != m.size {
                return Err(CliError::Validation(format!(
                    "{what} {} is {h}x{w}, manifest declares {}x{}",
                    p.display(),
                    m.size[0],
                    m.size[1]
                )));
            }
        }
        mask.check_classes(m.classes)
            .map_err(|err| CliError::Validation(format!("{}: {err}", mp.display())))?;
        samples.push(Sample::new(e.subject_id.clone(), image, mask)?);
    }
    Ok((m, samples))
}
