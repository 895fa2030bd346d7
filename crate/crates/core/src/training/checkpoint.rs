use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, MetricsRow, TrainConfig};
use crate::datagen::store::{read_f64, read_json, write_dir_atomic, write_f64, write_json, MANIFEST};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, PidionModel};
use crate::nets::{ParamStore, Segment};

const FORMAT: &str = "invop-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: PidionModel,
    pub adam: AdamState,
    pub step: usize,
    pub dataset_fingerprint: String,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    role: String,
    file: String,
    total_values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tool_version: String,
    dtype: String,
    step: usize,
    config: TrainConfig,
    model: ModelSpec,
    param_seed: u64,
    segments: Vec<Segment>,
    adam: AdamHeader,
    dataset_fingerprint: String,
    metrics: Vec<MetricsRow>,
    arrays: Vec<ArrayEntry>,
}

const ROLES: [&str; 3] = ["params", "adam_m", "adam_v"];

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let n = c.model.param_count();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        dtype: "f64-le".into(),
        step: c.step,
        config: c.config.clone(),
        model: c.model.spec.clone(),
        param_seed: c.model.params.seed,
        segments: c.model.params.segments.clone(),
        adam: AdamHeader { t: c.adam.t, lr: c.adam.lr, beta1: c.adam.beta1, beta2: c.adam.beta2, eps: c.adam.eps },
        dataset_fingerprint: c.dataset_fingerprint.clone(),
        metrics: c.metrics.clone(),
        arrays: ROLES
            .iter()
            .map(|r| ArrayEntry { role: (*r).into(), file: format!("{r}.f64"), total_values: n })
            .collect(),
    };
    let data: [&[f64]; 3] = [&c.model.params.values, &c.adam.m, &c.adam.v];
    write_dir_atomic(path, |dir| {
        for (role, values) in ROLES.iter().zip(data) {
            write_f64(&dir.join(format!("{role}.f64")), values)?;
        }
        write_json(&dir.join(MANIFEST), &manifest)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest_path = path.join(MANIFEST);
    let m: Manifest = read_json(&manifest_path)?;
    let corrupt = |detail: String| Error::Corruption { path: manifest_path.clone(), detail };
    if m.format != FORMAT || m.version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format {} v{}", m.format, m.version)));
    }
    let n = m.model.param_count()?;
    let mut arrays = Vec::new();
    for role in ROLES {
        let e = m.arrays.iter().find(|a| a.role == role).ok_or_else(|| corrupt(format!("missing array '{role}'")))?;
        if e.total_values != n {
            return Err(corrupt(format!("array '{role}' has {} values, model needs {n}", e.total_values)));
        }
        arrays.push(read_f64(&path.join(&e.file), n)?);
    }
    let v = arrays.pop().expect("three arrays");
    let mm = arrays.pop().expect("three arrays");
    let values = arrays.pop().expect("three arrays");
    let model = PidionModel::from_parts(m.model, ParamStore { values, segments: m.segments, seed: m.param_seed })?;
    let adam = AdamState { m: mm, v, t: m.adam.t, lr: m.adam.lr, beta1: m.adam.beta1, beta2: m.adam.beta2, eps: m.adam.eps };
    Ok(Checkpoint {
        config: m.config,
        model,
        adam,
        step: m.step,
        dataset_fingerprint: m.dataset_fingerprint,
        metrics: m.metrics,
    })
}
