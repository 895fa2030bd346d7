use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::{train, MetricsRow, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};

/// The setting varied by a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// `(lambda1, lambda2)` pairs.
    Lambda(Vec<(f64, f64)>),
    /// Training-set sizes, taken as the first `n` samples.
    NTrain(Vec<usize>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::Lambda(v) => v.len(),
            SweepAxis::NTrain(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n_train: usize,
    pub seed: u64,
    pub rel_l2_u: f64,
    pub rel_l2_s: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub row: SweepRow,
    pub metrics: Vec<MetricsRow>,
}

/// Train once per (setting, seed) and score on `test`.
pub fn sweep(base: &TrainConfig, axis: &SweepAxis, seeds: &[u64], train_set: &Dataset, test: &Dataset) -> Result<Vec<SweepResult>> {
    if axis.len() == 0 || seeds.is_empty() {
        return Err(Error::Validation("a sweep needs at least one setting and one seed".into()));
    }
    let mut out = Vec::new();
    for k in 0..axis.len() {
        for &seed in seeds {
            let mut cfg = TrainConfig { seed, ..base.clone() };
            let (setting, data) = match axis {
                SweepAxis::Lambda(v) => {
                    (cfg.lambda1, cfg.lambda2) = v[k];
                    (format!("lambda={}:{}", v[k].0, v[k].1), train_set.clone())
                }
                SweepAxis::NTrain(v) => (format!("n_train={}", v[k]), train_set.split(v[k])?.0),
            };
            let started = Instant::now();
            let outcome = train(&cfg, &data, Some(test))?;
            let last = outcome.last().clone();
            log::info!("{setting} seed {seed}: rel L2 s {:.4}", last.rel_l2_s);
            out.push(SweepResult {
                row: SweepRow {
                    setting,
                    lambda1: cfg.lambda1,
                    lambda2: cfg.lambda2,
                    n_train: data.len(),
                    seed,
                    rel_l2_u: last.rel_l2_u,
                    rel_l2_s: last.rel_l2_s,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                },
                metrics: outcome.metrics,
            });
        }
    }
    Ok(out)
}

pub const SWEEP_HEADER: &str = "setting,lambda1,lambda2,n_train,seed,rel_l2_u,rel_l2_s,wall_ms";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:e},{:e},{:.1}",
            r.setting, r.lambda1, r.lambda2, r.n_train, r.seed, r.rel_l2_u, r.rel_l2_s, r.wall_ms
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
