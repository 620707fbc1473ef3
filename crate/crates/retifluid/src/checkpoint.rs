//! `RFNT` checkpoints: magic, `u32` version, `u32` count, then per tensor a
//! `u32`-prefixed UTF-8 name, `u32` rank, `u32` dims and a little-endian
//! `f32` payload. All integers are little-endian.

use std::fs;
use std::path::Path;

use retifluid_core::model::{Model, ModelConfig};
use retifluid_core::{Shape, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"RFNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Dims of `s` with leading unit axes removed; a scalar has rank 0.
pub fn stored_dims(s: Shape) -> Vec<usize> {
    let d = s.dims();
    let first = d.iter().position(|&v| v != 1).unwrap_or(d.len());
    d[first..].to_vec()
}

pub fn records(model: &Model) -> Vec<Record> {
    model
        .params()
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            dims: stored_dims(p.value.shape()),
            data: p.value.data().iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for &d in &r.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> CliResult<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CliError::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> CliResult<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CliError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CliError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        if ndim > 4 {
            return Err(CliError::Format(format!("{name}: rank {ndim} exceeds 4")));
        }
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<CliResult<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let payload = r.take(
            n.checked_mul(4)
                .ok_or_else(|| CliError::Format(format!("{name}: payload too large")))?,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(Record { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CliError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save(path: &Path, model: &Model) -> CliResult<()> {
    fs::write(path, encode(&records(model))).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> CliResult<Vec<Record>> {
    decode(&fs::read(path).map_err(|e| CliError::io(path, e))?)
}

/// Copies `records` into `model`; names, order and dims must match the
/// model's parameters exactly.
pub fn apply(model: &mut Model, records: &[Record]) -> CliResult<()> {
    let store = model.params_mut();
    if records.len() != store.len() {
        return Err(CliError::Validation(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            store.len()
        )));
    }
    for (r, p) in records.iter().zip(store.iter_mut()) {
        let want = stored_dims(p.value.shape());
        if r.name != p.name || r.dims != want {
            return Err(CliError::Validation(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                r.name, r.dims, p.name, want
            )));
        }
        let data = r.data.iter().map(|&v| f64::from(v)).collect();
        p.value = Tensor::from_vec(p.value.shape(), data)?;
    }
    Ok(())
}

fn dims_of<'a>(records: &'a [Record], name: &str) -> CliResult<&'a [usize]> {
    records
        .iter()
        .find(|r| r.name == name)
        .map(|r| r.dims.as_slice())
        .ok_or_else(|| CliError::Validation(format!("checkpoint lacks {name}")))
}

/// Number of classes predicted by the main standard head.
pub fn classes(records: &[Record]) -> CliResult<usize> {
    let head = dims_of(records, "head1.standard.kernel")?;
    head.last()
        .copied()
        .ok_or_else(|| CliError::Validation("empty head kernel".into()))
}

/// Architecture implied by the tensor names and shapes of a checkpoint, for
/// an input of `input_size`.
pub fn infer_config(records: &[Record], input_size: (usize, usize)) -> CliResult<ModelConfig> {
    let enc = dims_of(records, "enc1.conv1.kernel")?;
    let base_channels = *enc
        .last()
        .ok_or_else(|| CliError::Validation("empty encoder kernel".into()))?;
    let classes = classes(records)?;
    let heads = records
        .iter()
        .filter(|r| r.name.starts_with("head") && r.name.ends_with(".standard.kernel"))
        .count();
    let rmp_kernels = records
        .iter()
        .filter_map(|r| {
            r.name
                .strip_prefix("rmp.k")?
                .strip_suffix(".kernel")?
                .parse()
                .ok()
        })
        .collect();
    let config = ModelConfig {
        input_size,
        classes,
        base_channels,
        aux_scales: heads.saturating_sub(1),
        rmp_kernels,
        sda_pool: None,
    };
    config.validate()?;
    Ok(config)
}

/// Builds the model described by `records` and loads its values.
pub fn load_model(records: &[Record], config: ModelConfig) -> CliResult<Model> {
    let mut model = Model::build(config, 0)?;
    apply(&mut model, records)?;
    Ok(model)
}
