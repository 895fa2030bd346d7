//! `key=value` run configuration: file, then flag overrides, checked against
//! the keys each command accepts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::datagen::DataConfig;
use crate::error::{Error, Result};
use crate::physics::{PdeProblem, ProblemKind, RdSign, TimeProfile};
use crate::training::{MergeOrder, SweepAxis, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Infer,
    Sweep,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Infer => "infer",
            Command::Sweep => "sweep",
            Command::Check => "check",
        }
    }

    /// Keys this command accepts; anything else is rejected.
    pub fn keys(self) -> Vec<&'static str> {
        let mut keys = vec!["threads"];
        match self {
            Command::GenData => keys.extend(DATA_KEYS.iter().chain(&["out"])),
            Command::Train => keys.extend(TRAIN_KEYS.iter().chain(&["resume"])),
            Command::Sweep => keys.extend(TRAIN_KEYS.iter().chain(SWEEP_KEYS)),
            Command::Eval => keys.extend(["checkpoint", "dataset", "out"]),
            Command::Infer => keys.extend(["checkpoint", "dataset", "out", "infer_grid", "sample"]),
            Command::Check => keys.push("dataset"),
        }
        keys
    }
}

const DATA_KEYS: &[&str] = &[
    "problem",
    "n_samples",
    "data_seed",
    "grid",
    "fine_grid",
    "measure_block",
    "length_scale",
    "sigma_min",
    "sigma_max",
    "rd_profile",
    "rd_sign",
    "horizon",
    "helmholtz_sigma",
    "helmholtz_c",
    "helmholtz_flux",
];

const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "test_dataset",
    "n_train",
    "out",
    "preset",
    "mode",
    "lambda1",
    "lambda2",
    "steps",
    "batch_size",
    "lr",
    "seed",
    "p",
    "branch_width",
    "trunk_width",
    "resample_every",
    "eval_every",
    "checkpoint_every",
    "merge",
    "sample_index",
    "divergence_limit",
];

const SWEEP_KEYS: &[&str] = &["sweep_axis", "sweep_values", "sweep_seeds"];

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("{origin}:{}: expected key=value, got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Raw settings after merging the file and the overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// File values first, then overrides in order; the last setting of a key wins.
    pub fn new(command: Command, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
            pairs.extend(parse_pairs(&text, &path.display().to_string())?);
        }
        pairs.extend(overrides.iter().cloned());
        let allowed = command.keys();
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Validation(format!(
                    "unknown key '{k}' for {} (accepted: {})",
                    command.name(),
                    allowed.join(", ")
                )));
            }
            values.insert(k, v);
        }
        Ok(RunConfig { command, values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Validation(format!("key '{key}': cannot parse '{v}': {e}"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Validation(format!("{} needs '{key}' (flag --{})", self.command.name(), key.replace('_', "-"))))
    }

    pub fn problem(&self) -> Result<Option<ProblemKind>> {
        self.raw("problem").map(ProblemKind::parse).transpose()
    }

    /// Generation recipe: problem defaults, then the given keys.
    pub fn data_config(&self) -> Result<DataConfig> {
        let kind = self.problem()?.unwrap_or(ProblemKind::ReactionDiffusion);
        let mut c = DataConfig::default_for(kind);
        self.set("n_samples", &mut c.n_samples)?;
        self.set("data_seed", &mut c.seed)?;
        self.set("grid", &mut c.grid)?;
        self.set("fine_grid", &mut c.fine_grid)?;
        self.set("measure_block", &mut c.measure_block)?;
        self.set("length_scale", &mut c.length_scale)?;
        self.set("sigma_min", &mut c.sigma_range[0])?;
        self.set("sigma_max", &mut c.sigma_range[1])?;
        let only_for = |keys: &[&str], what: &str| -> Result<()> {
            match keys.iter().find(|k| self.values.contains_key(**k)) {
                Some(k) => Err(Error::Validation(format!("key '{k}' applies to {what} only"))),
                None => Ok(()),
            }
        };
        match &mut c.problem {
            PdeProblem::ReactionDiffusion { g, sign, horizon } => {
                only_for(&["helmholtz_sigma", "helmholtz_c", "helmholtz_flux"], "helmholtz")?;
                if let Some(v) = self.raw("rd_profile") {
                    *g = TimeProfile::parse(v)?;
                }
                if let Some(v) = self.raw("rd_sign") {
                    *sign = parse_sign(v)?;
                }
                self.set("horizon", horizon)?;
            }
            PdeProblem::Helmholtz { sigma, c: cc, flux } => {
                only_for(&["rd_profile", "rd_sign", "horizon"], "rd")?;
                self.set("helmholtz_sigma", sigma)?;
                self.set("helmholtz_c", cc)?;
                self.set("helmholtz_flux", flux)?;
            }
            PdeProblem::Darcy => {
                only_for(&["rd_profile", "rd_sign", "horizon", "helmholtz_sigma", "helmholtz_c", "helmholtz_flux"], "rd/helmholtz")?;
            }
        }
        if kind != ProblemKind::Darcy {
            only_for(&["fine_grid", "sigma_min", "sigma_max"], "darcy")?;
        }
        if kind != ProblemKind::Helmholtz {
            only_for(&["measure_block"], "helmholtz")?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Training settings for `problem`: the preset, then the given keys.
    pub fn train_config(&self, problem: ProblemKind) -> Result<TrainConfig> {
        let mut c = match self.raw("preset").unwrap_or("desk") {
            "desk" => TrainConfig::desk(problem),
            "full" | "full-scale" => TrainConfig::full_scale(problem),
            "pinn" => TrainConfig::pinn(problem),
            other => return Err(Error::Validation(format!("unknown preset '{other}' (desk | full | pinn)"))),
        };
        if let Some(m) = self.raw("mode") {
            c.mode = TrainMode::parse(m)?;
        }
        self.set("lambda1", &mut c.lambda1)?;
        self.set("lambda2", &mut c.lambda2)?;
        self.set("steps", &mut c.steps)?;
        self.set("batch_size", &mut c.batch_size)?;
        self.set("lr", &mut c.lr)?;
        self.set("seed", &mut c.seed)?;
        self.set("p", &mut c.p)?;
        self.set("branch_width", &mut c.branch_width)?;
        self.set("trunk_width", &mut c.trunk_width)?;
        self.set("resample_every", &mut c.resample_every)?;
        self.set("eval_every", &mut c.eval_every)?;
        self.set("checkpoint_every", &mut c.checkpoint_every)?;
        self.set("sample_index", &mut c.sample_index)?;
        self.set("divergence_limit", &mut c.divergence_limit)?;
        if let Some(m) = self.raw("merge") {
            c.merge = parse_merge(m)?;
        }
        if c.mode == TrainMode::PinnSingleInstance {
            if self.get::<usize>("p")?.is_some_and(|p| p != 1) {
                return Err(Error::Validation("the single-instance mode has one output per network (p = 1)".into()));
            }
            c.p = 1;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn sweep_axis(&self) -> Result<SweepAxis> {
        let values = self.raw("sweep_values").unwrap_or("1:100,100:1");
        let items = values.split(',').map(str::trim).filter(|s| !s.is_empty());
        match self.raw("sweep_axis").unwrap_or("lambda") {
            "lambda" => items
                .map(|it| {
                    let (a, b) = it
                        .split_once(':')
                        .ok_or_else(|| Error::Validation(format!("lambda setting '{it}' is not lambda1:lambda2")))?;
                    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Validation(format!("'{s}': {e}")));
                    Ok((num(a)?, num(b)?))
                })
                .collect::<Result<Vec<_>>>()
                .map(SweepAxis::Lambda),
            "n_train" => items
                .map(|it| it.parse::<usize>().map_err(|e| Error::Validation(format!("n_train '{it}': {e}"))))
                .collect::<Result<Vec<_>>>()
                .map(SweepAxis::NTrain),
            other => Err(Error::Validation(format!("unknown sweep axis '{other}' (lambda | n_train)"))),
        }
    }

    pub fn sweep_seeds(&self) -> Result<Vec<u64>> {
        self.raw("sweep_seeds")
            .unwrap_or("0,1,2")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u64>().map_err(|e| Error::Validation(format!("seed '{s}': {e}"))))
            .collect()
    }
}

pub fn parse_sign(s: &str) -> Result<RdSign> {
    match s {
        "forward" => Ok(RdSign::Forward),
        "literal" => Ok(RdSign::Literal),
        other => Err(Error::Validation(format!("unknown sign '{other}' (forward | literal)"))),
    }
}

pub fn parse_merge(s: &str) -> Result<MergeOrder> {
    match s {
        "ordered" => Ok(MergeOrder::Ordered),
        "arrival" => Ok(MergeOrder::Arrival),
        other => Err(Error::Validation(format!("unknown merge order '{other}' (ordered | arrival)"))),
    }
}

fn profile_tag(g: TimeProfile) -> &'static str {
    match g {
        TimeProfile::Constant => "constant",
        TimeProfile::ExpDecay => "exp-decay",
        TimeProfile::Linear => "linear",
    }
}

/// Effective settings in `key=value` form; feeding them back reproduces the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Resolved {
    pub pairs: Vec<(String, String)>,
}

impl Resolved {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn push_path(&mut self, key: &str, value: Option<&Path>) {
        if let Some(p) = value {
            self.push(key, p.display());
        }
    }

    pub fn data(&mut self, c: &DataConfig) {
        let kind = c.problem.kind();
        self.push("problem", kind.tag());
        self.push("n_samples", c.n_samples);
        self.push("data_seed", c.seed);
        self.push("grid", c.grid);
        self.push("length_scale", c.length_scale);
        match c.problem {
            PdeProblem::ReactionDiffusion { g, sign, horizon } => {
                self.push("rd_profile", profile_tag(g));
                self.push("rd_sign", if sign == RdSign::Forward { "forward" } else { "literal" });
                self.push("horizon", horizon);
            }
            PdeProblem::Helmholtz { sigma, c: cc, flux } => {
                self.push("measure_block", c.measure_block);
                self.push("helmholtz_sigma", sigma);
                self.push("helmholtz_c", cc);
                self.push("helmholtz_flux", flux);
            }
            PdeProblem::Darcy => {
                self.push("fine_grid", c.fine_grid);
                self.push("sigma_min", c.sigma_range[0]);
                self.push("sigma_max", c.sigma_range[1]);
            }
        }
    }

    pub fn train(&mut self, c: &TrainConfig) {
        self.push("mode", c.mode.tag());
        self.push("lambda1", c.lambda1);
        self.push("lambda2", c.lambda2);
        self.push("steps", c.steps);
        self.push("batch_size", c.batch_size);
        self.push("lr", c.lr);
        self.push("seed", c.seed);
        self.push("p", c.p);
        self.push("branch_width", c.branch_width);
        self.push("trunk_width", c.trunk_width);
        self.push("resample_every", c.resample_every);
        self.push("eval_every", c.eval_every);
        self.push("checkpoint_every", c.checkpoint_every);
        self.push("merge", if c.merge == MergeOrder::Ordered { "ordered" } else { "arrival" });
        self.push("sample_index", c.sample_index);
        self.push("divergence_limit", c.divergence_limit);
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// SHA-256 of the resolved block, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
