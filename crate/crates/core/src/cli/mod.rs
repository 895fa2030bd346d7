//! The `invop` command-line tool.
//!
//! Every command resolves a `key=value` configuration (file, then `--set`
//! and named flags), prints the effective settings, and writes artifacts with
//! a metadata record holding the tool version, the config hash and the seeds.
//!
//! Exit codes: 0 success, 2 invalid input, 3 runtime or solver failure,
//! 4 audit failure.

pub mod audit;
pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::datagen::{generate, Dataset, Grid, GridKind, PointSet};
use crate::error::{Error, Result};
use crate::model::PidionModel;
use crate::training::{
    evaluate_both, load_checkpoint, relative_l2, sweep, write_metrics_csv, write_sweep_csv, Checkpoint, SweepRow,
    TrainConfig, Trainer,
};
use audit::AuditFault;
use config::{Command, Resolved, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;

/// Exit code for an error: bad input is 2, everything else 3.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_)
        | Error::Incompatible(_)
        | Error::Dimension(_)
        | Error::Contract(_)
        | Error::Capability(_)
        | Error::Domain(_)
        | Error::Corruption { .. }
        | Error::Json { .. } => EXIT_INVALID,
        Error::NonFinite { .. }
        | Error::State(_)
        | Error::Solver(_)
        | Error::Factorization { .. }
        | Error::Divergence { .. }
        | Error::NonFiniteGradient { .. }
        | Error::Io { .. } => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "invop", version, about = "Physics-informed deep inverse operator networks")]
struct Cli {
    /// Worker threads (0 = all cores); overrides INVOP_THREADS and the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log per-step progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Args)]
struct Common {
    /// key=value config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable); flags win over the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Generate a dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        problem: Option<String>,
        /// Number of samples.
        #[arg(short = 'n', long = "n-samples")]
        n_samples: Option<String>,
        /// Base seed for the sample streams
        #[arg(long = "seed")]
        seed: Option<String>,
        /// Replace an existing non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset directory (split by n_train unless --test-dataset is given)
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Separate dataset scored during training
        #[arg(long = "test-dataset")]
        test_dataset: Option<PathBuf>,
        /// Output directory for the checkpoint, metrics and metadata.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total optimizer steps
        #[arg(long)]
        steps: Option<String>,
        /// Seed for initialisation, batching and resampling
        #[arg(long)]
        seed: Option<String>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by train
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset to score
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Per-sample errors as CSV.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Predict u and s for one sample on an arbitrary grid.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by train
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset supplying the measurement
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Output directory for u.csv and s.csv.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// NXxNY (e.g. 200x200), or `data` for the dataset grids.
        #[arg(long)]
        grid: Option<String>,
        /// Sample index in the dataset
        #[arg(long)]
        sample: Option<String>,
    },
    /// Train over a set of settings and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (split by n_train unless --test-dataset is given)
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Separate dataset scored for every run
        #[arg(long = "test-dataset")]
        test_dataset: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the self-diagnostic audits.
    Check {
        #[command(flatten)]
        common: Common,
        /// Also audit the solver residuals of this dataset.
        #[arg(short, long)]
        dataset: Option<PathBuf>,
        /// Test hook: corrupt a derivative rule so the audits must fail.
        #[arg(long = "inject-fault", hide = true)]
        inject_fault: Option<String>,
    },
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn overrides(common: &Common, named: &[(&str, Option<String>)]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("--set expects KEY=VALUE, got '{s}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in named {
        if let Some(v) = v {
            out.push((k.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn resolve(command: Command, common: &Common, named: &[(&str, Option<String>)]) -> Result<RunConfig> {
    RunConfig::new(command, common.config.as_deref(), &overrides(common, named)?)
}

/// Size the global worker pool: flag, then INVOP_THREADS, then the config.
fn init_threads(flag: Option<usize>, cfg: &RunConfig) -> Result<usize> {
    let env = match std::env::var("INVOP_THREADS") {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim().parse::<usize>().map_err(|e| Error::Validation(format!("INVOP_THREADS='{v}': {e}")))?,
        ),
        _ => None,
    };
    let n = flag.or(env).or(cfg.get::<usize>("threads")?).unwrap_or(0);
    // a pool that already exists (in-process reuse) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match &cli.command {
        Sub::GenData { common, out, problem, n_samples, seed, force } => {
            let cfg = resolve(
                Command::GenData,
                common,
                &[("out", path_flag(out)), ("problem", problem.clone()), ("n_samples", n_samples.clone()), ("data_seed", seed.clone())],
            )?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_gen_data(&cfg, threads, *force)
        }
        Sub::Train { common, dataset, test_dataset, out, resume, steps, seed } => {
            let cfg = resolve(
                Command::Train,
                common,
                &[
                    ("dataset", path_flag(dataset)),
                    ("test_dataset", path_flag(test_dataset)),
                    ("out", path_flag(out)),
                    ("resume", path_flag(resume)),
                    ("steps", steps.clone()),
                    ("seed", seed.clone()),
                ],
            )?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_train(&cfg, threads)
        }
        Sub::Eval { common, checkpoint, dataset, out } => {
            let cfg = resolve(
                Command::Eval,
                common,
                &[("checkpoint", path_flag(checkpoint)), ("dataset", path_flag(dataset)), ("out", path_flag(out))],
            )?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_eval(&cfg, threads)
        }
        Sub::Infer { common, checkpoint, dataset, out, grid, sample } => {
            let cfg = resolve(
                Command::Infer,
                common,
                &[
                    ("checkpoint", path_flag(checkpoint)),
                    ("dataset", path_flag(dataset)),
                    ("out", path_flag(out)),
                    ("infer_grid", grid.clone()),
                    ("sample", sample.clone()),
                ],
            )?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_infer(&cfg, threads)
        }
        Sub::Sweep { common, dataset, test_dataset, out } => {
            let cfg = resolve(
                Command::Sweep,
                common,
                &[("dataset", path_flag(dataset)), ("test_dataset", path_flag(test_dataset)), ("out", path_flag(out))],
            )?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_sweep(&cfg, threads)
        }
        Sub::Check { common, dataset, inject_fault } => {
            let cfg = resolve(Command::Check, common, &[("dataset", path_flag(dataset))])?;
            let fault = inject_fault.as_deref().map(AuditFault::parse).transpose()?;
            let threads = init_threads(cli.threads, &cfg)?;
            cmd_check(&cfg, threads, fault)
        }
    }
}

fn echo(command: Command, resolved: &Resolved) {
    println!("# invop {} {}", command.name(), env!("CARGO_PKG_VERSION"));
    println!("# resolved config (config hash {})", resolved.hash());
    print!("{}", resolved.text());
    println!("# end config");
}

/// Metadata written next to every artifact.
#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'static str,
    config_hash: String,
    seeds: Vec<u64>,
    config: Vec<(&'a str, &'a str)>,
}

fn write_meta(path: &Path, command: Command, resolved: &Resolved, seeds: Vec<u64>) -> Result<()> {
    let meta = RunMeta {
        tool: "invop",
        tool_version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        config_hash: resolved.hash(),
        seeds,
        config: resolved.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.join(crate::datagen::store::MANIFEST).is_file() {
        return Err(Error::Validation(format!("{} is not a dataset directory", path.display())));
    }
    Dataset::load(path)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    if !path.join(crate::datagen::store::MANIFEST).is_file() {
        return Err(Error::Validation(format!("{} is not a checkpoint directory", path.display())));
    }
    load_checkpoint(path)
}

fn cmd_gen_data(cfg: &RunConfig, threads: usize, force: bool) -> Result<i32> {
    let data_cfg = cfg.data_config()?;
    let out = cfg.require_path("out")?;
    // the recipe alone goes into the dataset, so reruns elsewhere are byte-identical
    let mut recipe = Resolved::default();
    recipe.data(&data_cfg);
    let mut resolved = recipe.clone();
    resolved.push_path("out", Some(&out));
    resolved.push("threads", threads);
    echo(Command::GenData, &resolved);
    if out.exists() {
        let non_empty = out.is_file() || std::fs::read_dir(&out).map_err(|e| Error::io(&out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Validation(format!("{} exists and is not empty (use --force to replace it)", out.display())));
        }
    }
    let data = generate(&data_cfg)?;
    data.save(&out)?;
    let mut report = format!("samples {}\nfingerprint {}\n", data.len(), data.fingerprint());
    for (role, s) in data.stats() {
        let _ = writeln!(report, "{role}: min {:.6e} max {:.6e} mean {:.6e} rms {:.6e}", s.min, s.max, s.mean, s.rms);
    }
    print!("{report}");
    write_text(&out.join("report.txt"), &report)?;
    write_meta(&out.join("run.meta.json"), Command::GenData, &recipe, vec![data_cfg.seed])?;
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Training and test sets: an explicit test dataset, or a split at `n_train`.
fn train_test(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>, Option<usize>)> {
    let data = load_dataset(&cfg.require_path("dataset")?)?;
    let n_train = cfg.get::<usize>("n_train")?;
    let test = cfg.path("test_dataset").map(|p| load_dataset(&p)).transpose()?;
    match (n_train, test) {
        (Some(n), None) => {
            let (a, b) = data.split(n)?;
            Ok((a, (!b.is_empty()).then_some(b), Some(n)))
        }
        (Some(n), Some(t)) => Ok((data.split(n)?.0, Some(t), Some(n))),
        (None, t) => Ok((data, t, None)),
    }
}

fn common_train_echo(resolved: &mut Resolved, cfg: &RunConfig, tc: &TrainConfig, n_train: Option<usize>, threads: usize) {
    resolved.push("problem", tc.problem.tag());
    resolved.push_path("dataset", cfg.path("dataset").as_deref());
    resolved.push_path("test_dataset", cfg.path("test_dataset").as_deref());
    if let Some(n) = n_train {
        resolved.push("n_train", n);
    }
    resolved.train(tc);
    resolved.push("threads", threads);
}

fn cmd_train(cfg: &RunConfig, threads: usize) -> Result<i32> {
    let (train_set, test, n_train) = train_test(cfg)?;
    let out = cfg.require_path("out")?;
    let problem = train_set.problem().kind();
    let resume = cfg.path("resume").map(|p| load_ckpt(&p)).transpose()?;
    if resume.is_some() {
        let fixed = ["dataset", "test_dataset", "n_train", "out", "resume", "steps", "threads"];
        if let Some(k) = Command::Train.keys().into_iter().find(|k| !fixed.contains(k) && cfg.raw(k).is_some()) {
            return Err(Error::Validation(format!("'{k}' cannot change on resume; the checkpoint's settings apply")));
        }
    }
    let tc = match &resume {
        Some(ck) => {
            let mut c = ck.config.clone();
            if let Some(s) = cfg.get::<usize>("steps")? {
                c.steps = s;
            }
            c
        }
        None => cfg.train_config(problem)?,
    };
    let mut resolved = Resolved::default();
    common_train_echo(&mut resolved, cfg, &tc, n_train, threads);
    resolved.push_path("resume", cfg.path("resume").as_deref());
    resolved.push_path("out", Some(&out));
    echo(Command::Train, &resolved);

    let mut trainer = match resume {
        Some(mut ck) => {
            ck.config.steps = tc.steps;
            Trainer::resume(ck, &train_set, test.as_ref())?
        }
        None => Trainer::new(tc.clone(), &train_set, test.as_ref())?,
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let ckpt_dir = out.join("checkpoint");
    let result = trainer.run(tc.steps, Some(&ckpt_dir));
    write_metrics_csv(&out.join("metrics.csv"), &trainer.metrics)?;
    write_meta(&sidecar(&out.join("metrics.csv")), Command::Train, &resolved, vec![tc.seed])?;
    write_meta(&out.join("run.meta.json"), Command::Train, &resolved, vec![tc.seed])?;
    result?;
    let first = &trainer.metrics[0];
    let last = trainer.metrics.last().expect("final row");
    println!(
        "step {}: L_total {:.4e} (from {:.4e}), rel L2 u {:.4} s {:.4}, {:.1} s",
        last.step,
        last.l_total,
        first.l_total,
        last.rel_l2_u,
        last.rel_l2_s,
        last.wall_ms / 1e3
    );
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

/// The checkpoint's model must read this dataset's measurements and grids.
fn check_compatible(ck: &Checkpoint, data: &Dataset) -> Result<()> {
    let want = data.problem().kind();
    if ck.config.problem != want {
        return Err(Error::Incompatible(format!(
            "checkpoint is for {} but the dataset holds {}",
            ck.config.problem.tag(),
            want.tag()
        )));
    }
    let spec = ck.config.model_spec(data)?;
    if spec != ck.model.spec {
        return Err(Error::Incompatible("the checkpoint's model does not fit this dataset's measurements or grids".into()));
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, threads: usize) -> Result<i32> {
    let ckpt_path = cfg.require_path("checkpoint")?;
    let data_path = cfg.require_path("dataset")?;
    let out = cfg.path("out");
    let mut resolved = Resolved::default();
    resolved.push_path("checkpoint", Some(&ckpt_path));
    resolved.push_path("dataset", Some(&data_path));
    resolved.push_path("out", out.as_deref());
    resolved.push("threads", threads);
    echo(Command::Eval, &resolved);
    let ck = load_ckpt(&ckpt_path)?;
    let data = load_dataset(&data_path)?;
    check_compatible(&ck, &data)?;
    let (u, s) = evaluate_both(&ck.model, &data)?;
    let mut csv = String::from("sample,seed,rel_l2_u,rel_l2_s\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
    for (i, sample) in data.samples.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{}", sample.seed, cell(u.per_sample[i]), cell(s.per_sample[i]));
    }
    println!("samples {}: mean rel L2 u {:.6} s {:.6}", data.len(), u.mean, s.mean);
    if let Some(path) = out {
        write_text(&path, &csv)?;
        write_meta(&sidecar(&path), Command::Eval, &resolved, vec![ck.config.seed])?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

/// An evaluation grid spanning the dataset's domain.
fn parse_grid(spec: &str, data: &Dataset) -> Result<Option<Grid>> {
    if spec == "data" {
        return Ok(None);
    }
    let (a, b) = spec
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Validation(format!("grid '{spec}' is not NXxNY or 'data'")))?;
    let n = |s: &str| -> Result<usize> {
        let v = s.trim().parse::<usize>().map_err(|e| Error::Validation(format!("grid '{spec}': {e}")))?;
        if v < 2 {
            return Err(Error::Validation(format!("grid '{spec}' needs at least 2 nodes per axis")));
        }
        Ok(v)
    };
    let (nx, ny) = (n(a)?, n(b)?);
    let ax = &data.u_grid.axes;
    let range = |k: usize| [ax[k][0], ax[k][ax[k].len() - 1]];
    let g = Grid::rectangle(nx, ny, range(0), range(1))?;
    Ok(Some(Grid { kind: data.u_grid.kind, ..g }))
}

fn grid_csv(points: &PointSet, values: &[f64], columns: &[&str]) -> String {
    let mut s = columns.join(",");
    s.push_str(",value\n");
    for (p, v) in points.iter().zip(values) {
        for c in p {
            let _ = write!(s, "{c},");
        }
        let _ = writeln!(s, "{v}");
    }
    s
}

fn cmd_infer(cfg: &RunConfig, threads: usize) -> Result<i32> {
    let ckpt_path = cfg.require_path("checkpoint")?;
    let data_path = cfg.require_path("dataset")?;
    let out = cfg.require_path("out")?;
    let grid_spec = cfg.raw("infer_grid").unwrap_or("data").to_string();
    let sample = cfg.get::<usize>("sample")?.unwrap_or(0);
    let mut resolved = Resolved::default();
    resolved.push_path("checkpoint", Some(&ckpt_path));
    resolved.push_path("dataset", Some(&data_path));
    resolved.push_path("out", Some(&out));
    resolved.push("infer_grid", &grid_spec);
    resolved.push("sample", sample);
    resolved.push("threads", threads);
    echo(Command::Infer, &resolved);

    let ck = load_ckpt(&ckpt_path)?;
    let data = load_dataset(&data_path)?;
    check_compatible(&ck, &data)?;
    let s_item = data
        .samples
        .get(sample)
        .ok_or_else(|| Error::Validation(format!("sample {sample} is out of range ({} samples)", data.len())))?;
    let grid = parse_grid(&grid_spec, &data)?;
    let (u_pts, s_pts) = match &grid {
        None => (data.u_grid.points(), data.s_grid.points()),
        Some(g) if g.kind == GridKind::SpaceTime => (g.points(), PointSet::new(1, g.axes[0].clone())?),
        Some(g) => (g.points(), g.points()),
    };
    let model: &PidionModel = &ck.model;
    let (u, s) = model.predict_batch(&[&s_item.measurement[..]], &u_pts, &s_pts)?;
    let (u, s) = (&u[0], &s[0]);
    let u_cols: &[&str] = if data.u_grid.kind == GridKind::SpaceTime { &["x", "t"] } else { &["x", "y"] };
    let s_cols: &[&str] = if s_pts.dim == 1 { &["x"] } else { &["x", "y"] };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (name, pts, vals, cols) in [("u.csv", &u_pts, u, u_cols), ("s.csv", &s_pts, s, s_cols)] {
        let path = out.join(name);
        write_text(&path, &grid_csv(pts, vals, cols))?;
        write_meta(&sidecar(&path), Command::Infer, &resolved, vec![ck.config.seed, s_item.seed])?;
    }
    println!("predicted u at {} points, s at {} points", u_pts.len(), s_pts.len());
    if grid.is_none() {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        println!("sample {sample}: rel L2 u {} s {}", fmt(relative_l2(u, &s_item.u)), fmt(relative_l2(s, &s_item.s)));
    }
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(cfg: &RunConfig, threads: usize) -> Result<i32> {
    let (train_set, test, n_train) = train_test(cfg)?;
    let test = test.ok_or_else(|| Error::Validation("sweep needs a test set (n_train below the dataset size, or test_dataset)".into()))?;
    let out = cfg.require_path("out")?;
    let tc = cfg.train_config(train_set.problem().kind())?;
    let axis = cfg.sweep_axis()?;
    let seeds = cfg.sweep_seeds()?;
    let mut resolved = Resolved::default();
    common_train_echo(&mut resolved, cfg, &tc, n_train, threads);
    resolved.push("sweep_axis", if matches!(axis, crate::training::SweepAxis::Lambda(_)) { "lambda" } else { "n_train" });
    resolved.push("sweep_values", cfg.raw("sweep_values").unwrap_or("1:100,100:1").replace(' ', ""));
    resolved.push("sweep_seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    resolved.push_path("out", Some(&out));
    echo(Command::Sweep, &resolved);
    let results = sweep(&tc, &axis, &seeds, &train_set, &test)?;
    let rows: Vec<SweepRow> = results.iter().map(|r| r.row.clone()).collect();
    for r in &rows {
        println!("{} seed {}: rel L2 u {:.4} s {:.4}", r.setting, r.seed, r.rel_l2_u, r.rel_l2_s);
    }
    let path = out.join("sweep.csv");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_sweep_csv(&path, &rows)?;
    write_meta(&sidecar(&path), Command::Sweep, &resolved, seeds)?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_check(cfg: &RunConfig, threads: usize, fault: Option<AuditFault>) -> Result<i32> {
    let dataset = cfg.path("dataset");
    let mut resolved = Resolved::default();
    resolved.push_path("dataset", dataset.as_deref());
    resolved.push("threads", threads);
    echo(Command::Check, &resolved);
    let data = dataset.as_deref().map(load_dataset).transpose()?;
    if let Some(f) = fault {
        println!("# injected fault: {f:?}");
    }
    let outcomes = audit::run_all(data.as_ref(), fault);
    let mut failed = 0;
    for o in &outcomes {
        println!("{}", o.line());
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} of {} audits failed", outcomes.len());
        Ok(EXIT_AUDIT)
    } else {
        println!("all {} audits passed", outcomes.len());
        Ok(EXIT_OK)
    }
}
