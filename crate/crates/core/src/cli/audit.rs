//! Self-diagnostics behind `invop check`. Every audit carries its own oracle:
//! central finite differences, manufactured solutions, the covariance kernel,
//! or bit-exact comparison after a round trip.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use crate::autodiff::{DirSpec, Fault, Graph};
use crate::datagen::{
    darcy_residual, derive_seed, generate, helmholtz_residual, solve_darcy, solve_helmholtz, solve_reaction_diffusion,
    solver_residuals, DataConfig, Dataset, GrfConfig, GrfSampler, Grid, PointSet,
};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelShape, ModelSpec, PidionModel};
use crate::nets::NetSpec;
use crate::physics::{CollocationSet, LossWeights, PdeProblem, ProblemKind, RdSign, TimeProfile};
use crate::training::{
    build_loss_graph, graph_loss, load_checkpoint, save_checkpoint, Batch, Engine, LossSetup, MergeOrder, TrainConfig,
    Trainer,
};

pub const GRADIENT_TOL: f64 = 1e-5;
pub const JET_TOL: f64 = 1e-4;
pub const GRF_TOL: f64 = 0.10;
pub const GRF_DRAWS: usize = 2000;
pub const DATASET_TOL: f64 = 1e-8;

/// Test hooks that corrupt the code under audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditFault {
    /// Reverse mode scales the tanh derivative by 1.01.
    TanhDerivative,
}

impl AuditFault {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh-derivative" | "activation-derivative" => Ok(AuditFault::TanhDerivative),
            other => Err(Error::Validation(format!("unknown fault '{other}' (tanh-derivative)"))),
        }
    }

    fn graph_fault(fault: Option<AuditFault>) -> Option<Fault> {
        fault.map(|AuditFault::TanhDerivative| Fault::TanhDerivative)
    }
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl AuditOutcome {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{verdict} {:<10} {} ({:.2} s)", self.name, self.detail, self.elapsed.as_secs_f64())
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> AuditOutcome {
    let started = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    AuditOutcome { name, passed, detail, elapsed: started.elapsed() }
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn rd_miniature(grid: usize, n: usize) -> Result<(Dataset, PidionModel)> {
    let mut c = DataConfig::default_for(ProblemKind::ReactionDiffusion);
    c.n_samples = n;
    c.grid = grid;
    c.seed = 7;
    let data = generate(&c)?;
    let spec = ModelSpec::preset(
        ModelKind::Pidion,
        data.problem(),
        ModelShape::uniform(4, 8),
        data.measurement_len(),
        data.s_grid.n_points(),
    )?;
    Ok((data, PidionModel::new(spec, 3)?))
}

/// Parameter gradient of the full composite loss (physics, data and `L_s`)
/// on a miniature model, graph and batched routes against central differences.
pub fn gradient_audit(fault: Option<AuditFault>) -> AuditOutcome {
    timed("gradient", || {
        let (data, model) = rd_miniature(8, 2)?;
        let colloc = CollocationSet::from_grids(data.problem(), &data.u_grid, &data.s_grid, &data.measurement_index)?;
        let batch = Batch {
            measurements: data.samples.iter().map(|s| &s.measurement[..]).collect(),
            s_labels: Some(data.samples.iter().map(|s| &s.s[..]).collect()),
        };
        let setup =
            LossSetup { problem: *data.problem(), weights: LossWeights::new(1.0, 100.0)?, physics: true, s_labels: true };
        let (mut g, nodes) = build_loss_graph(&model, &setup, &colloc, &batch)?;
        g.set_fault(AuditFault::graph_fault(fault));
        let mut params = model.params.values.clone();
        graph_loss(&mut g, &nodes, &params)?;
        let mut grad = vec![0.0; params.len()];
        g.backward_into(&[(nodes.total, 1.0)], &mut grad, None)?;
        let mut engine = Engine::new(&model, setup, &colloc, MergeOrder::Ordered)?;
        let engine_grad = engine.loss_and_grad(&params, &batch, true)?.1.expect("gradient requested");

        let h = 1e-5;
        let mut fd = vec![0.0; params.len()];
        for i in 0..params.len() {
            let w = params[i];
            params[i] = w + h;
            let up = graph_loss(&mut g, &nodes, &params)?.total;
            params[i] = w - h;
            let down = graph_loss(&mut g, &nodes, &params)?.total;
            params[i] = w;
            fd[i] = (up - down) / (2.0 * h);
        }
        let (eg, ee) = (rel_norm(&grad, &fd), rel_norm(&engine_grad, &fd));
        Ok((
            eg < GRADIENT_TOL && ee < GRADIENT_TOL,
            format!("{} params, rel err graph {eg:.2e} engine {ee:.2e} (tol {GRADIENT_TOL:e})", params.len()),
        ))
    })
}

/// Worst relative deviation of jet derivatives from stencils of `predict_u`.
fn jet_error(model: &PidionModel, meas: &[f64], pts: &PointSet, dirs: &[DirSpec], stencil: impl Fn(&[f64], usize) -> Result<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let jets = model.predict_u_jets(&mut g, meas, pts, dirs)?;
    g.bind_params(&model.params.values)?;
    g.bind_inputs(&[])?;
    g.eval()?;
    let mut worst: f64 = 0.0;
    for (d, dir) in dirs.iter().enumerate() {
        let (mut err, mut scale) = (0.0_f64, 0.0_f64);
        for (k, pt) in pts.iter().enumerate() {
            let node = if dir.second { jets[k].d2[d] } else { jets[k].d1[d] };
            let jet = g.value(node.ok_or_else(|| Error::Contract("jet direction not tracked".into()))?);
            let fd = stencil(pt, d)?;
            err = err.max((jet - fd).abs());
            scale = scale.max(fd.abs());
        }
        worst = worst.max(err / scale.max(1e-300));
    }
    Ok(worst)
}

fn probe_points() -> PointSet {
    PointSet::new(2, vec![0.3, 0.6, 0.71, 0.25, 0.5, 0.5, 0.12, 0.83, 0.9, 0.4, 0.45, 0.07]).expect("even length")
}

/// `u_xx` and `u_t` (reaction-diffusion) and the Laplacian (Darcy) from jets,
/// against central stencils of the point predictions.
pub fn jet_audit() -> AuditOutcome {
    timed("jet", || {
        let (data, model) = rd_miniature(8, 1)?;
        let meas = &data.samples[0].measurement;
        let pts = probe_points();
        let u = |x: f64, t: f64| -> Result<f64> { Ok(model.predict_u(meas, &PointSet::new(2, vec![x, t])?)?[0]) };
        let (h2, h1) = (1e-3, 1e-5);
        let rd = jet_error(&model, meas, &pts, &[DirSpec::second(0), DirSpec::first(1)], |p, d| {
            let (x, t) = (p[0], p[1]);
            Ok(match d {
                0 => (u(x + h2, t)? - 2.0 * u(x, t)? + u(x - h2, t)?) / (h2 * h2),
                _ => (u(x, t + h1)? - u(x, t - h1)?) / (2.0 * h1),
            })
        })?;

        let darcy = PdeProblem::default_for(ProblemKind::Darcy);
        let mut spec = ModelSpec::preset(ModelKind::Pidion, &darcy, ModelShape::uniform(4, 8), 400, 400)?;
        for b in [spec.u_branch.as_mut(), spec.s_branch.as_mut()].into_iter().flatten() {
            if let NetSpec::Conv(c) = b {
                c.channels = vec![2, 2];
            }
        }
        let dm = PidionModel::new(spec, 5)?;
        let dmeas: Vec<f64> = (0..400).map(|i| (0.37 * (i as f64 + 1.0)).sin()).collect();
        let v = |x: f64, y: f64| -> Result<f64> { Ok(dm.predict_u(&dmeas, &PointSet::new(2, vec![x, y])?)?[0]) };
        let lap = jet_error(&dm, &dmeas, &pts, &[DirSpec::second(0), DirSpec::second(1)], |p, d| {
            let (x, y) = (p[0], p[1]);
            Ok(match d {
                0 => (v(x + h2, y)? - 2.0 * v(x, y)? + v(x - h2, y)?) / (h2 * h2),
                _ => (v(x, y + h2)? - 2.0 * v(x, y)? + v(x, y - h2)?) / (h2 * h2),
            })
        })?;
        Ok((rd < JET_TOL && lap < JET_TOL, format!("rel err rd {rd:.2e} darcy {lap:.2e} (tol {JET_TOL:e})")))
    })
}

fn rd_manufactured(n: usize) -> Result<f64> {
    let grid = Grid::space_time(n, n, 1.0, 1.0)?;
    let xs = &grid.axes[0];
    let u0: Vec<f64> = xs.iter().map(|&x| (PI * x).sin()).collect();
    let f: Vec<f64> = xs.iter().map(|&x| (PI * PI - 1.0) * (PI * x).sin()).collect();
    let u = solve_reaction_diffusion(&grid, &u0, &f, TimeProfile::ExpDecay, RdSign::Forward)?;
    Ok(grid.points().iter().zip(&u).map(|(p, v)| (v - (-p[1]).exp() * (PI * p[0]).sin()).abs()).fold(0.0, f64::max))
}

fn helmholtz_manufactured(n: usize) -> Result<f64> {
    let grid = Grid::unit_square(n)?;
    let exact: Vec<f64> = grid.points().iter().map(|p| (PI * p[0]).cos() * (PI * p[1]).cos()).collect();
    let f: Vec<f64> = exact.iter().map(|v| (2.0 * PI * PI + 1.0) * v).collect();
    let u = solve_helmholtz(&grid, &f)?;
    if helmholtz_residual(&grid, &u, &f, 1.0, 1.0)? > 1e-8 {
        return Err(Error::Solver("Helmholtz system not solved".into()));
    }
    Ok(u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn darcy_manufactured(n: usize) -> Result<f64> {
    let grid = Grid::unit_square(n)?;
    let exact: Vec<f64> = grid.points().iter().map(|p| (PI * p[0]).sin() * (PI * p[1]).sin()).collect();
    let f: Vec<f64> = exact.iter().map(|v| 2.0 * PI * PI * v).collect();
    let sigma = vec![1.0; n * n];
    let u = solve_darcy(&grid, &sigma, &f)?;
    if darcy_residual(&grid, &sigma, &u, &f)? > 1e-8 {
        return Err(Error::Solver("Darcy system not solved".into()));
    }
    Ok(u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Manufactured solutions: max error at the benchmark resolution and the
/// error ratio against a grid with half the spacing.
pub fn solver_audit() -> AuditOutcome {
    timed("solver", || {
        // (name, coarse error, fine error, tolerance)
        let cases = [
            ("helmholtz", helmholtz_manufactured(50)?, helmholtz_manufactured(99)?, 2e-3),
            ("darcy", darcy_manufactured(100)?, darcy_manufactured(199)?, 1e-3),
            ("rd", rd_manufactured(30)?, rd_manufactured(59)?, 5e-3),
        ];
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, coarse, fine, tol) in cases {
            let ratio = coarse / fine;
            ok &= coarse < tol && (3.0..=5.0).contains(&ratio);
            parts.push(format!("{name} {coarse:.2e} ratio {ratio:.2}"));
        }
        Ok((ok, parts.join(", ")))
    })
}

/// Empirical covariance at five point pairs over seeded draws against the kernel.
pub fn grf_audit() -> AuditOutcome {
    timed("grf", || {
        let grid = Grid::unit_square(30)?;
        let config = GrfConfig::new(0.2);
        let sampler = GrfSampler::for_grid(config, &grid)?;
        let pairs = [([10, 10], [10, 10]), ([4, 20], [5, 21]), ([15, 3], [18, 3]), ([20, 20], [16, 23]), ([7, 25], [7, 19])];
        let idx: Vec<(usize, usize)> = pairs.iter().map(|(a, b)| (grid.flat_index(a), grid.flat_index(b))).collect();
        let mut acc = vec![0.0; pairs.len()];
        for k in 0..GRF_DRAWS {
            let f = sampler.sample(derive_seed(0x6F, k as u64));
            for (a, &(i, j)) in acc.iter_mut().zip(&idx) {
                *a += f[i] * f[j];
            }
        }
        let pts = grid.points();
        let mut worst: f64 = 0.0;
        for (a, &(i, j)) in acc.iter().zip(&idx) {
            let kernel = config.kernel(pts.point(i), pts.point(j));
            worst = worst.max((a / GRF_DRAWS as f64 - kernel).abs() / kernel);
        }
        Ok((worst < GRF_TOL, format!("worst rel dev {worst:.3} over {GRF_DRAWS} draws (tol {GRF_TOL})")))
    })
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Dataset and checkpoint round trips, and an interrupted run resumed from
/// disk against an uninterrupted one, all bit for bit.
pub fn roundtrip_audit() -> AuditOutcome {
    timed("roundtrip", || {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let mut c = DataConfig::default_for(ProblemKind::ReactionDiffusion);
        c.n_samples = 4;
        c.grid = 8;
        let data = generate(&c)?;
        data.save(&dir.path().join("data"))?;
        let back = Dataset::load(&dir.path().join("data"))?;
        let data_ok = back.samples.len() == data.samples.len()
            && back.samples.iter().zip(&data.samples).all(|(a, b)| {
                a.seed == b.seed && same_bits(&a.u, &b.u) && same_bits(&a.s, &b.s) && same_bits(&a.measurement, &b.measurement)
            });

        let cfg = TrainConfig {
            steps: 8,
            p: 4,
            branch_width: 6,
            trunk_width: 6,
            eval_every: 2,
            batch_size: 3,
            resample_every: 3,
            ..TrainConfig::desk(ProblemKind::ReactionDiffusion)
        };
        let ckpt = dir.path().join("ckpt");
        let mut whole = Trainer::new(cfg.clone(), &data, None)?;
        whole.run(8, None)?;
        let mut first = Trainer::new(cfg, &data, None)?;
        first.run(4, Some(&ckpt))?;
        let loaded = load_checkpoint(&ckpt)?;
        let ckpt_ok = loaded == first.to_checkpoint();
        let mut rest = Trainer::resume(loaded, &data, None)?;
        rest.run(8, None)?;
        let resume_ok = same_bits(&rest.model.params.values, &whole.model.params.values)
            && same_bits(&rest.adam.m, &whole.adam.m)
            && same_bits(&rest.adam.v, &whole.adam.v)
            && rest.metrics.len() == whole.metrics.len()
            && rest.metrics.iter().zip(&whole.metrics).all(|(a, b)| a.same_numbers(b));
        save_checkpoint(&dir.path().join("again"), &rest.to_checkpoint())?;
        let again_ok = load_checkpoint(&dir.path().join("again"))? == rest.to_checkpoint();
        let flag = |b: bool| if b { "ok" } else { "MISMATCH" };
        Ok((
            data_ok && ckpt_ok && resume_ok && again_ok,
            format!("dataset {} checkpoint {} resume {}", flag(data_ok), flag(ckpt_ok && again_ok), flag(resume_ok)),
        ))
    })
}

/// Solver residual of every sample in a stored dataset.
pub fn dataset_audit(data: &Dataset) -> AuditOutcome {
    timed("dataset", || {
        let res = solver_residuals(data)?;
        let (worst_at, worst) = res.iter().copied().enumerate().fold((0, 0.0_f64), |m, (i, r)| if r > m.1 { (i, r) } else { m });
        let bad = res.iter().filter(|r| !(**r < DATASET_TOL)).count();
        Ok((
            bad == 0,
            format!("{} samples, worst residual {worst:.2e} (sample {worst_at}), {bad} above {DATASET_TOL:e}", res.len()),
        ))
    })
}

/// The full suite, plus the dataset audit when a dataset is given.
pub fn run_all(dataset: Option<&Dataset>, fault: Option<AuditFault>) -> Vec<AuditOutcome> {
    let mut out = vec![gradient_audit(fault), jet_audit(), solver_audit(), grf_audit(), roundtrip_audit()];
    if let Some(d) = dataset {
        out.push(dataset_audit(d));
    }
    out
}
