//! Optimisation, evaluation, sweeps and checkpoints.

mod adam;
mod checkpoint;
mod engine;
mod eval;
mod graph_loss;
mod pool;
mod sweep;

pub use adam::{AdamState, BETA1, BETA2, DEFAULT_LR, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use engine::{Batch, Engine, LossSetup};
pub use eval::{evaluate_both, evaluate_relative_l2, predict_dataset, relative_l2, EvalReport, Target};
pub use graph_loss::{build_loss_graph, graph_loss, graph_loss_and_grad};
pub use pool::MergeOrder;
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepResult, SweepRow};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelShape, ModelSpec, PidionModel};
use crate::physics::{CollocationSet, LossValues, LossWeights, ProblemKind};

/// Seed streams derived from the run seed.
const BATCH_STREAM: u64 = 0xB7;
const RESAMPLE_STREAM: u64 = 0xC9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Physics residuals plus measurement misfit.
    Unsupervised,
    /// As unsupervised, plus `L_s` against the true `s`.
    Supervised,
    /// `L_data + L_s` only; no residual terms are built.
    SupervisedOnlyBaseline,
    /// Two coordinate networks fitted to one sample.
    PinnSingleInstance,
    /// Inverse branch feeding a forward branch through the predicted `s`.
    V0,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unsupervised" => Ok(TrainMode::Unsupervised),
            "supervised" => Ok(TrainMode::Supervised),
            "supervised-only-baseline" | "supervised-only" => Ok(TrainMode::SupervisedOnlyBaseline),
            "pinn-single-instance" | "pinn" => Ok(TrainMode::PinnSingleInstance),
            "v0" => Ok(TrainMode::V0),
            other => Err(Error::Validation(format!(
                "unknown mode '{other}' (unsupervised | supervised | supervised-only-baseline | pinn-single-instance | v0)"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            TrainMode::Unsupervised => "unsupervised",
            TrainMode::Supervised => "supervised",
            TrainMode::SupervisedOnlyBaseline => "supervised-only-baseline",
            TrainMode::PinnSingleInstance => "pinn-single-instance",
            TrainMode::V0 => "v0",
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            TrainMode::PinnSingleInstance => ModelKind::Pinn,
            TrainMode::V0 => ModelKind::V0,
            _ => ModelKind::Pidion,
        }
    }

    pub fn uses_labels(self) -> bool {
        matches!(self, TrainMode::Supervised | TrainMode::SupervisedOnlyBaseline)
    }

    pub fn uses_physics(self) -> bool {
        self != TrainMode::SupervisedOnlyBaseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub mode: TrainMode,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Optimizer steps; one step is one batch.
    pub steps: usize,
    /// Samples per step; 0 uses the whole training set.
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds model initialisation, batch selection and resampling.
    pub seed: u64,
    pub p: usize,
    pub branch_width: usize,
    pub trunk_width: usize,
    /// Redraw the interior collocation points every this many steps; 0 keeps the grid nodes.
    pub resample_every: usize,
    /// Log losses and test errors every this many steps; 0 logs only the ends.
    pub eval_every: usize,
    /// Write a checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: usize,
    pub merge: MergeOrder,
    /// Sample fitted by the single-instance mode.
    pub sample_index: usize,
    pub divergence_limit: f64,
}

impl TrainConfig {
    /// Scaled-down settings that train on one CPU in minutes.
    pub fn desk(problem: ProblemKind) -> Self {
        let rd = problem == ProblemKind::ReactionDiffusion;
        TrainConfig {
            problem,
            mode: TrainMode::Unsupervised,
            lambda1: 1.0,
            lambda2: 100.0,
            steps: if rd { 30_000 } else { 2_000 },
            batch_size: if rd { 0 } else { 16 },
            lr: if rd { 1e-2 } else { DEFAULT_LR },
            seed: 0,
            p: 16,
            branch_width: 16,
            trunk_width: 16,
            resample_every: 0,
            eval_every: 500,
            checkpoint_every: 0,
            merge: MergeOrder::Ordered,
            sample_index: 0,
            divergence_limit: 1e6,
        }
    }

    /// Full-size architecture and batch settings.
    pub fn full_scale(problem: ProblemKind) -> Self {
        let shape = ModelShape::default_for(problem);
        let rd = problem == ProblemKind::ReactionDiffusion;
        TrainConfig {
            steps: 1_000_000,
            lr: DEFAULT_LR,
            batch_size: if rd { 0 } else { 500 },
            p: shape.p,
            branch_width: shape.branch_width,
            trunk_width: shape.trunk_width,
            eval_every: 1000,
            checkpoint_every: 10_000,
            ..Self::desk(problem)
        }
    }

    /// Coordinate-network settings for one sample.
    pub fn pinn(problem: ProblemKind) -> Self {
        TrainConfig { mode: TrainMode::PinnSingleInstance, trunk_width: 64, p: 1, lr: DEFAULT_LR, ..Self::desk(problem) }
    }

    pub fn weights(&self) -> LossWeights {
        let physics = if self.mode.uses_physics() { self.lambda1 } else { 0.0 };
        LossWeights { physics, data: self.lambda2 }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape { p: self.p, branch_width: self.branch_width, trunk_width: self.trunk_width }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.p == 0 || self.trunk_width == 0 || self.branch_width == 0 {
            return Err(Error::Validation("p and network widths must be positive".into()));
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::Validation("divergence limit must be positive".into()));
        }
        Ok(())
    }

    /// Check the dataset against the mode's requirements.
    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        if data.problem().kind() != self.problem {
            return Err(Error::Incompatible(format!(
                "config is for {} but the dataset holds {}",
                self.problem.tag(),
                data.problem().kind().tag()
            )));
        }
        let s_len = data.s_grid.n_points();
        if self.mode.uses_labels() && data.samples.iter().any(|s| s.s.len() != s_len) {
            return Err(Error::Validation(format!("{} needs s labels on the s grid", self.mode.tag())));
        }
        if self.mode == TrainMode::PinnSingleInstance && self.sample_index >= data.len() {
            return Err(Error::Validation(format!("sample {} is out of range ({} samples)", self.sample_index, data.len())));
        }
        Ok(())
    }

    pub fn model_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        ModelSpec::preset(self.mode.model_kind(), data.problem(), self.shape(), data.measurement_len(), data.s_grid.n_points())
    }
}

/// One row of the metrics log; the state after `step` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub l_physics: f64,
    pub l_data: f64,
    pub l_s: Option<f64>,
    pub l_total: f64,
    pub rel_l2_u: f64,
    pub rel_l2_s: f64,
    pub wall_ms: f64,
}

impl MetricsRow {
    /// Everything except the wall clock.
    pub fn same_numbers(&self, other: &MetricsRow) -> bool {
        let bits = |r: &MetricsRow| {
            (
                r.step,
                r.l_physics.to_bits(),
                r.l_data.to_bits(),
                r.l_s.map(f64::to_bits),
                r.l_total.to_bits(),
                r.rel_l2_u.to_bits(),
                r.rel_l2_s.to_bits(),
            )
        };
        bits(self) == bits(other)
    }
}

pub const METRICS_HEADER: &str = "step,l_physics,l_data,l_s,l_total,rel_l2_u,rel_l2_s,wall_ms";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let ls = r.l_s.map_or(String::new(), |v| format!("{v:e}"));
        let _ = writeln!(
            out,
            "{},{:e},{:e},{},{:e},{:e},{:e},{:.1}",
            r.step, r.l_physics, r.l_data, ls, r.l_total, r.rel_l2_u, r.rel_l2_s, r.wall_ms
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Training state: model, optimizer, step counter and metrics so far.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: PidionModel,
    pub adam: AdamState,
    pub step: usize,
    pub metrics: Vec<MetricsRow>,
    engine: Engine,
    base: CollocationSet,
    interior_at: usize,
    train: Dataset,
    eval_set: Dataset,
    fingerprint: String,
    wall_offset_ms: f64,
}

fn collocation(data: &Dataset) -> Result<CollocationSet> {
    CollocationSet::from_grids(data.problem(), &data.u_grid, &data.s_grid, &data.measurement_index)
}

impl Trainer {
    /// Fresh model and optimizer. `test` is used for the logged errors;
    /// without it the training set is scored.
    pub fn new(config: TrainConfig, train: &Dataset, test: Option<&Dataset>) -> Result<Self> {
        config.validate()?;
        config.check_dataset(train)?;
        let model = PidionModel::new(config.model_spec(train)?, config.seed)?;
        Self::with_model(config, model, train, test)
    }

    /// Start from a given model (fresh optimizer, step 0).
    pub fn with_model(config: TrainConfig, model: PidionModel, train: &Dataset, test: Option<&Dataset>) -> Result<Self> {
        let adam = AdamState::new(model.param_count(), config.lr);
        Self::assemble(config, model, adam, 0, Vec::new(), train, test)
    }

    /// Continue from a checkpoint. A dataset that differs from the one the
    /// checkpoint was trained on is allowed with a warning.
    pub fn resume(ckpt: Checkpoint, train: &Dataset, test: Option<&Dataset>) -> Result<Self> {
        if ckpt.dataset_fingerprint != train.fingerprint() {
            log::warn!("dataset fingerprint differs from the one recorded in the checkpoint");
        }
        Self::assemble(ckpt.config, ckpt.model, ckpt.adam, ckpt.step, ckpt.metrics, train, test)
    }

    fn assemble(
        config: TrainConfig,
        model: PidionModel,
        adam: AdamState,
        step: usize,
        metrics: Vec<MetricsRow>,
        train: &Dataset,
        test: Option<&Dataset>,
    ) -> Result<Self> {
        config.validate()?;
        config.check_dataset(train)?;
        if adam.m.len() != model.param_count() {
            return Err(Error::Incompatible("optimizer state does not match the model".into()));
        }
        let expected = config.model_spec(train)?;
        if model.spec != expected {
            return Err(Error::Incompatible("model architecture does not match the config and dataset".into()));
        }
        let (train, eval_set) = if config.mode == TrainMode::PinnSingleInstance {
            let one = train.subset(&[config.sample_index]);
            (one.clone(), one)
        } else {
            (train.clone(), test.cloned().unwrap_or_else(|| train.clone()))
        };
        let base = collocation(&train)?;
        let setup = LossSetup {
            problem: *train.problem(),
            weights: config.weights(),
            physics: config.mode.uses_physics(),
            s_labels: config.mode.uses_labels(),
        };
        let engine = Engine::new(&model, setup, &base, config.merge)?;
        let wall_offset_ms = metrics.last().map_or(0.0, |r| r.wall_ms);
        let mut t = Trainer {
            fingerprint: train.fingerprint(),
            config,
            model,
            adam,
            step,
            metrics,
            engine,
            base,
            interior_at: 0,
            train,
            eval_set,
            wall_offset_ms,
        };
        t.sync_interior()?;
        Ok(t)
    }

    pub fn dataset_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Step at which the current interior points were drawn.
    fn interior_epoch(&self, step: usize) -> usize {
        match self.config.resample_every {
            0 => 0,
            k => step / k * k,
        }
    }

    fn sync_interior(&mut self) -> Result<()> {
        let at = self.interior_epoch(self.step);
        if at == self.interior_at {
            return Ok(());
        }
        let interior = if at == 0 {
            self.base.interior.clone()
        } else {
            let seed = derive_seed(derive_seed(self.config.seed, RESAMPLE_STREAM), at as u64);
            self.base.resample_interior(self.train.problem(), seed).interior
        };
        self.engine.set_interior(&self.model, &interior)?;
        self.interior_at = at;
        Ok(())
    }

    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.train.len();
        let b = self.config.batch_size;
        if b == 0 || b >= n {
            return (0..n).collect();
        }
        let seed = derive_seed(derive_seed(self.config.seed, BATCH_STREAM), step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, b).into_vec();
        idx.sort_unstable();
        idx
    }

    fn batch<'a>(data: &'a Dataset, idx: &[usize], labels: bool) -> Batch<'a> {
        Batch {
            measurements: idx.iter().map(|&i| &data.samples[i].measurement[..]).collect(),
            s_labels: labels.then(|| idx.iter().map(|&i| &data.samples[i].s[..]).collect()),
        }
    }

    /// Losses over the whole training set at the current parameters.
    pub fn full_loss(&mut self) -> Result<LossValues> {
        let idx: Vec<usize> = (0..self.train.len()).collect();
        let batch = Self::batch(&self.train, &idx, self.config.mode.uses_labels());
        Ok(self.engine.loss_and_grad(&self.model.params.values, &batch, false)?.0)
    }

    /// Current relative errors `(u, s)` on the evaluation set.
    pub fn evaluate(&self) -> Result<(EvalReport, EvalReport)> {
        evaluate_both(&self.model, &self.eval_set)
    }

    fn log_row(&mut self, loss: LossValues, started: Instant) -> Result<()> {
        let (u, s) = self.evaluate()?;
        self.metrics.push(MetricsRow {
            step: self.step,
            l_physics: loss.physics,
            l_data: loss.data,
            l_s: loss.s,
            l_total: loss.total,
            rel_l2_u: u.mean,
            rel_l2_s: s.mean,
            wall_ms: self.wall_offset_ms + started.elapsed().as_secs_f64() * 1e3,
        });
        log::info!(
            "step {}: L_total {:.4e} (physics {:.3e}, data {:.3e}), rel L2 u {:.4} s {:.4}",
            self.step,
            loss.total,
            loss.physics,
            loss.data,
            u.mean,
            s.mean
        );
        Ok(())
    }

    fn log_due(&self) -> bool {
        let logged = self.metrics.last().is_some_and(|r| r.step == self.step);
        !logged && (self.step == 0 || (self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every)))
    }

    /// One optimizer step on the scheduled batch.
    fn step_once(&mut self, started: Instant) -> Result<()> {
        self.sync_interior()?;
        let idx = self.batch_indices(self.step);
        let full = idx.len() == self.train.len();
        let batch = Self::batch(&self.train, &idx, self.config.mode.uses_labels());
        let (loss, grad) = self.engine.loss_and_grad(&self.model.params.values, &batch, true)?;
        let grad = grad.expect("gradient requested");
        if !(loss.total <= self.config.divergence_limit) {
            self.log_row(loss, started)?;
            return Err(Error::Divergence { step: self.step, loss: loss.total });
        }
        if self.log_due() {
            let logged = if full { loss } else { self.full_loss()? };
            self.log_row(logged, started)?;
        }
        self.adam.step(&mut self.model.params, &grad).map_err(|e| match e {
            Error::NonFiniteGradient { segment, .. } => Error::NonFiniteGradient { step: self.step, segment },
            e => e,
        })?;
        self.step += 1;
        Ok(())
    }

    /// Train until `until` steps have been taken, checkpointing into `ckpt_dir`
    /// on the configured cadence and at the end. The last state is always logged.
    pub fn run(&mut self, until: usize, ckpt_dir: Option<&Path>) -> Result<()> {
        let started = Instant::now();
        while self.step < until {
            self.step_once(started)?;
            if let (Some(dir), k) = (ckpt_dir, self.config.checkpoint_every) {
                if k > 0 && self.step.is_multiple_of(k) && self.step < until {
                    save_checkpoint(dir, &self.to_checkpoint())?;
                }
            }
        }
        if self.metrics.last().is_none_or(|r| r.step != self.step) {
            self.sync_interior()?;
            let loss = self.full_loss()?;
            if !(loss.total <= self.config.divergence_limit) {
                self.log_row(loss, started)?;
                return Err(Error::Divergence { step: self.step, loss: loss.total });
            }
            self.log_row(loss, started)?;
        }
        if let Some(dir) = ckpt_dir {
            save_checkpoint(dir, &self.to_checkpoint())?;
        }
        self.wall_offset_ms = self.metrics.last().map_or(0.0, |r| r.wall_ms);
        Ok(())
    }

    /// Snapshot of the complete training state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            adam: self.adam.clone(),
            step: self.step,
            dataset_fingerprint: self.fingerprint.clone(),
            metrics: self.metrics.clone(),
        }
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PidionModel,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn last(&self) -> &MetricsRow {
        self.metrics.last().expect("a finished run logs its final state")
    }
}

/// Train a fresh model for `config.steps` steps.
pub fn train(config: &TrainConfig, train: &Dataset, test: Option<&Dataset>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), train, test)?;
    t.run(config.steps, None)?;
    Ok(TrainOutcome { model: t.model, metrics: t.metrics })
}

/// Fit two coordinate networks to sample `sample` of `data`.
pub fn train_pinn_single(config: &TrainConfig, data: &Dataset, sample: usize) -> Result<TrainOutcome> {
    let cfg = TrainConfig { mode: TrainMode::PinnSingleInstance, sample_index: sample, p: 1, ..config.clone() };
    train(&cfg, data, None)
}

#[cfg(test)]
mod tests;
