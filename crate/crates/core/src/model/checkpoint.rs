//! Checkpoint directories: `manifest.json` plus one little-endian binary per array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{cpu, tensor_le_bytes, Group, ModelParams};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "maefuse-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayDtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub group: Group,
    pub shape: Vec<usize>,
    pub dtype: ArrayDtype,
    pub frozen: bool,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Echo of the architecture; optional for externally produced weight bundles.
    #[serde(default)]
    pub config: Option<ModelConfig>,
    #[serde(default)]
    pub arrays: Vec<ArrayEntry>,
    /// Free-form training metadata (step counters, plan echo, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(Error::Format(format!(
                "{}: unexpected format tag {:?}",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }
}

fn file_name(name: &str) -> String {
    format!("{name}.bin")
}

/// Writes every array of `params` and the manifest into `dir` (created if needed).
pub fn save_checkpoint(
    params: &ModelParams,
    dir: impl AsRef<Path>,
    meta: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arrays = Vec::new();
    for (name, group, var) in params.named_vars() {
        let file = file_name(&name);
        let bytes = tensor_le_bytes(var.as_tensor())?;
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        arrays.push(ArrayEntry {
            name,
            group,
            shape: var.dims().to_vec(),
            dtype: if var.dtype() == DType::F64 {
                ArrayDtype::F64
            } else {
                ArrayDtype::F32
            },
            frozen: params.is_frozen(group),
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        config: Some(params.cfg.clone()),
        arrays,
        meta,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_array(dir: &Path, entry: &ArrayEntry, target: DType) -> Result<Tensor> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let n: usize = entry.shape.iter().product();
    let width = match entry.dtype {
        ArrayDtype::F32 => 4,
        ArrayDtype::F64 => 8,
    };
    if bytes.len() != n * width {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {} for shape {:?}",
            entry.name,
            bytes.len(),
            n * width,
            entry.shape
        )));
    }
    let t = match entry.dtype {
        ArrayDtype::F32 => {
            let v: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &cpu())?
        }
        ArrayDtype::F64 => {
            let v: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &cpu())?
        }
    };
    Ok(t.to_dtype(target)?)
}

/// Loads a complete checkpoint, rebuilding the model from the stored config echo.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(ModelParams, Manifest)> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir)?;
    let cfg = manifest.config.clone().ok_or_else(|| {
        Error::Format(format!("{}: manifest has no config echo", dir.display()))
    })?;
    let mut params = ModelParams::init(&cfg, 0)?;
    load_groups(dir, &mut params, &Group::ALL)?;
    Ok((params, manifest))
}

/// Overwrites the arrays of `groups` from a checkpoint written for the same config,
/// restoring their frozen flags. Every array of each listed group must be present.
pub fn load_groups(dir: impl AsRef<Path>, params: &mut ModelParams, groups: &[Group]) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir)?;
    match &manifest.config {
        Some(c) if *c == params.cfg => {}
        Some(c) => {
            return Err(Error::Config(format!(
                "checkpoint config {c:?} does not match model config {:?}",
                params.cfg
            )))
        }
        None => {
            return Err(Error::Format(format!(
                "{}: manifest has no config echo",
                dir.display()
            )))
        }
    }
    let by_name: BTreeMap<&str, &ArrayEntry> =
        manifest.arrays.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut problems = Vec::new();
    let mut frozen = Vec::new();
    for &group in groups {
        let mut group_frozen = None;
        for (name, var) in params.group_vars(group) {
            match by_name.get(name.as_str()) {
                None => problems.push(format!("{name}: missing from checkpoint")),
                Some(e) if e.shape != var.dims() => problems.push(format!(
                    "{name}: shape {:?} != expected {:?}",
                    e.shape,
                    var.dims()
                )),
                Some(e) => {
                    var.set(&read_array(dir, e, var.dtype())?)?;
                    group_frozen = Some(e.frozen);
                }
            }
        }
        if let Some(f) = group_frozen {
            frozen.push((group, f));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Format(problems.join("; ")));
    }
    for (g, f) in frozen {
        params.set_frozen(g, f);
    }
    Ok(manifest)
}

/// Imports externally produced weights for `target_groups`. Every manifest entry that
/// belongs to a target group must name an existing array with a matching shape; imported
/// groups are marked frozen. Entries of other groups are ignored.
pub fn import_weights(
    dir: impl AsRef<Path>,
    params: &mut ModelParams,
    target_groups: &[Group],
) -> Result<Vec<Group>> {
    let dir = dir.as_ref();
    let manifest = Manifest::read(dir).map_err(|e| Error::WeightImport(vec![e.to_string()]))?;
    let mut problems = Vec::new();
    let mut staged = Vec::new();
    for entry in manifest
        .arrays
        .iter()
        .filter(|e| target_groups.contains(&e.group))
    {
        match params.var(&entry.name) {
            None => problems.push(format!("{}: no such array in model", entry.name)),
            Some(v) if v.dims() != entry.shape.as_slice() => problems.push(format!(
                "{}: shape {:?} != model {:?}",
                entry.name,
                entry.shape,
                v.dims()
            )),
            Some(v) => match read_array(dir, entry, v.dtype()) {
                Ok(t) => staged.push((entry.name.clone(), entry.group, t)),
                Err(e) => problems.push(format!("{}: {e}", entry.name)),
            },
        }
    }
    if !problems.is_empty() {
        return Err(Error::WeightImport(problems));
    }
    let mut imported = Vec::new();
    for (name, group, t) in staged {
        params.var(&name).expect("checked above").set(&t)?;
        if !imported.contains(&group) {
            imported.push(group);
        }
    }
    for &g in &imported {
        params.freeze(g);
    }
    Ok(imported)
}
