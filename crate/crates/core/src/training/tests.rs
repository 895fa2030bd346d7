use super::*;
use crate::datagen::{generate, DataConfig};
use crate::model::{Branch, ModelShape};
use crate::nets::NetSpec;
use crate::physics::{LossWeights, PdeProblem};

fn rd_data(n: usize, grid: usize) -> Dataset {
    let mut c = DataConfig::default_for(ProblemKind::ReactionDiffusion);
    c.n_samples = n;
    c.grid = grid;
    generate(&c).unwrap()
}

fn square_data(kind: ProblemKind, n: usize) -> Dataset {
    let mut c = DataConfig::default_for(kind);
    c.n_samples = n;
    match kind {
        ProblemKind::Helmholtz => {
            c.grid = 22;
            c.measure_block = 20;
        }
        _ => {
            c.grid = 20;
            c.fine_grid = 39;
        }
    }
    generate(&c).unwrap()
}

fn tiny_model(kind: ModelKind, data: &Dataset, p: usize, w: usize, seed: u64) -> PidionModel {
    let mut spec =
        ModelSpec::preset(kind, data.problem(), ModelShape::uniform(p, w), data.measurement_len(), data.s_grid.n_points()).unwrap();
    for b in [spec.u_branch.as_mut(), spec.s_branch.as_mut()].into_iter().flatten() {
        if let NetSpec::Conv(c) = b {
            c.channels = vec![2, 2];
        }
    }
    PidionModel::new(spec, seed).unwrap()
}

fn batch_of(data: &Dataset, labels: bool) -> Batch<'_> {
    Batch {
        measurements: data.samples.iter().map(|s| &s.measurement[..]).collect(),
        s_labels: labels.then(|| data.samples.iter().map(|s| &s.s[..]).collect()),
    }
}

fn colloc(data: &Dataset) -> CollocationSet {
    CollocationSet::from_grids(data.problem(), &data.u_grid, &data.s_grid, &data.measurement_index).unwrap()
}

/// Engine and graph route agree on the loss and every gradient entry.
fn assert_routes_agree(model: &PidionModel, data: &Dataset, setup: LossSetup) {
    let c = colloc(data);
    let batch = batch_of(data, setup.s_labels);
    let (gv, gg) = graph_loss_and_grad(model, &setup, &c, &batch).unwrap();
    let mut engine = Engine::new(model, setup, &c, MergeOrder::Ordered).unwrap();
    let (ev, eg) = engine.loss_and_grad(&model.params.values, &batch, true).unwrap();
    let eg = eg.unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()));
    assert!(close(gv.total, ev.total), "total {} vs {}", gv.total, ev.total);
    assert!(close(gv.physics, ev.physics) && close(gv.data, ev.data));
    assert_eq!(gv.s.is_some(), ev.s.is_some());
    let scale = gg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (a, b)) in gg.iter().zip(&eg).enumerate() {
        assert!((a - b).abs() <= 1e-9 * (1.0 + scale), "slot {i} ({:?}): {a} vs {b}", model.params.segment_of(i));
    }
}

fn setup(problem: PdeProblem, physics: bool, s_labels: bool) -> LossSetup {
    LossSetup { problem, weights: LossWeights::new(if physics { 1.3 } else { 0.0 }, 7.0).unwrap(), physics, s_labels }
}

#[test]
fn engine_matches_graph_rd() {
    let data = rd_data(3, 8);
    let m = tiny_model(ModelKind::Pidion, &data, 4, 6, 1);
    assert_routes_agree(&m, &data, setup(*data.problem(), true, false));
    assert_routes_agree(&m, &data, setup(*data.problem(), true, true));
    assert_routes_agree(&m, &data, setup(*data.problem(), false, true));
}

#[test]
fn engine_matches_graph_v0_and_pinn() {
    let data = rd_data(2, 8);
    let v0 = tiny_model(ModelKind::V0, &data, 3, 5, 2);
    assert_routes_agree(&v0, &data, setup(*data.problem(), true, false));
    let one = data.subset(&[1]);
    let pinn = tiny_model(ModelKind::Pinn, &one, 1, 6, 3);
    assert_routes_agree(&pinn, &one, setup(*one.problem(), true, false));
}

#[test]
fn engine_matches_graph_helmholtz() {
    let data = square_data(ProblemKind::Helmholtz, 2);
    let m = tiny_model(ModelKind::Pidion, &data, 3, 4, 4);
    assert_routes_agree(&m, &data, setup(*data.problem(), true, true));
}

#[test]
fn engine_matches_graph_darcy() {
    let data = square_data(ProblemKind::Darcy, 2);
    let m = tiny_model(ModelKind::Pidion, &data, 3, 4, 5);
    assert_routes_agree(&m, &data, setup(*data.problem(), true, false));
}

#[test]
fn arrival_merge_agrees_closely() {
    let data = rd_data(3, 8);
    let m = tiny_model(ModelKind::Pidion, &data, 4, 6, 6);
    let c = colloc(&data);
    let b = batch_of(&data, false);
    let s = setup(*data.problem(), true, false);
    let (_, a) = Engine::new(&m, s.clone(), &c, MergeOrder::Ordered).unwrap().loss_and_grad(&m.params.values, &b, true).unwrap();
    let (_, z) = Engine::new(&m, s, &c, MergeOrder::Arrival).unwrap().loss_and_grad(&m.params.values, &b, true).unwrap();
    for (x, y) in a.unwrap().iter().zip(&z.unwrap()) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn supervised_only_has_no_physics_gradient() {
    let data = rd_data(3, 8);
    let m = tiny_model(ModelKind::Pidion, &data, 4, 6, 7);
    let c = colloc(&data);
    let mut e = Engine::new(&m, setup(*data.problem(), false, true), &c, MergeOrder::Ordered).unwrap();
    let (v, _) = e.loss_and_grad(&m.params.values, &batch_of(&data, true), true).unwrap();
    assert_eq!(v.physics, 0.0);
    assert_eq!(v.total, 7.0 * (v.data + v.s.unwrap()));
    let cfg = TrainConfig { mode: TrainMode::SupervisedOnlyBaseline, ..TrainConfig::desk(ProblemKind::ReactionDiffusion) };
    assert_eq!(cfg.weights().physics, 0.0);
}

fn quick_config() -> TrainConfig {
    TrainConfig { steps: 12, p: 4, branch_width: 6, trunk_width: 6, eval_every: 4, seed: 3, ..TrainConfig::desk(ProblemKind::ReactionDiffusion) }
}

#[test]
fn zero_steps_leave_model_unchanged() {
    let data = rd_data(4, 8);
    let cfg = TrainConfig { steps: 0, ..quick_config() };
    let out = train(&cfg, &data, None).unwrap();
    let fresh = PidionModel::new(cfg.model_spec(&data).unwrap(), cfg.seed).unwrap();
    assert_eq!(out.model, fresh);
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.metrics[0].step, 0);
}

#[test]
fn training_is_deterministic_and_logs() {
    let data = rd_data(4, 8);
    let (train_set, test) = data.split(3).unwrap();
    let a = train(&quick_config(), &train_set, Some(&test)).unwrap();
    let b = train(&quick_config(), &train_set, Some(&test)).unwrap();
    assert_eq!(a.model.params.values, b.model.params.values);
    let steps: Vec<usize> = a.metrics.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 4, 8, 12]);
    for (x, y) in a.metrics.iter().zip(&b.metrics) {
        assert!(x.same_numbers(y));
    }
    let csv = metrics_csv(&a.metrics);
    assert!(csv.starts_with(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn minibatch_and_resampling_runs_are_reproducible() {
    let data = rd_data(5, 8);
    let cfg = TrainConfig { batch_size: 2, resample_every: 3, ..quick_config() };
    let a = train(&cfg, &data, None).unwrap();
    let b = train(&cfg, &data, None).unwrap();
    assert_eq!(a.model.params.values, b.model.params.values);
    let plain = train(&quick_config(), &data, None).unwrap();
    assert_ne!(a.model.params.values, plain.model.params.values);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = rd_data(4, 8);
    let cfg = TrainConfig { resample_every: 5, batch_size: 3, ..quick_config() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");

    let mut whole = Trainer::new(cfg.clone(), &data, None).unwrap();
    whole.run(12, None).unwrap();

    let mut first = Trainer::new(cfg.clone(), &data, None).unwrap();
    first.run(7, Some(&path)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck, first.to_checkpoint());

    // zero further steps reproduces the saved metrics
    let mut idle = Trainer::resume(ck.clone(), &data, None).unwrap();
    idle.run(7, None).unwrap();
    assert_eq!(idle.metrics.len(), ck.metrics.len());
    for (x, y) in idle.metrics.iter().zip(&ck.metrics) {
        assert!(x.same_numbers(y));
    }

    let mut rest = Trainer::resume(ck, &data, None).unwrap();
    rest.run(12, None).unwrap();
    assert_eq!(rest.model.params.values, whole.model.params.values);
    assert_eq!(rest.adam, whole.adam);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let data = rd_data(3, 8);
    let mut t = Trainer::new(quick_config(), &data, None).unwrap();
    t.run(3, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&dir.path().join("c"), &t.to_checkpoint()).unwrap();
    let back = load_checkpoint(&dir.path().join("c")).unwrap();
    let pts = data.u_grid.points();
    let m = &data.samples[0].measurement;
    let a = t.model.predict_u(m, &pts).unwrap();
    let b = back.model.predict_u(m, &pts).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    std::fs::write(dir.path().join("c/params.f64"), [0u8; 5]).unwrap();
    assert!(matches!(load_checkpoint(&dir.path().join("c")), Err(Error::Corruption { .. })));
}

#[test]
fn divergence_aborts_with_log() {
    let data = rd_data(3, 8);
    let cfg = TrainConfig { divergence_limit: 1e-12, ..quick_config() };
    let mut t = Trainer::new(cfg, &data, None).unwrap();
    let err = t.run(5, None).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 0, .. }));
    assert_eq!(t.metrics.len(), 1);
}

#[test]
fn mode_requirements() {
    let data = rd_data(2, 8);
    let cfg = TrainConfig { mode: TrainMode::PinnSingleInstance, sample_index: 5, ..quick_config() };
    assert!(matches!(Trainer::new(cfg, &data, None), Err(Error::Validation(_))));
    let wrong = TrainConfig { problem: ProblemKind::Darcy, ..quick_config() };
    assert!(matches!(Trainer::new(wrong, &data, None), Err(Error::Incompatible(_))));
    assert!(TrainMode::parse("bogus").is_err());
    assert_eq!(TrainMode::parse("pinn").unwrap(), TrainMode::PinnSingleInstance);
}

#[test]
fn single_setting_sweep_equals_plain_run() {
    let data = rd_data(4, 8);
    let (tr, te) = data.split(3).unwrap();
    let cfg = quick_config();
    let plain = train(&cfg, &tr, Some(&te)).unwrap();
    let res = sweep(&cfg, &SweepAxis::Lambda(vec![(cfg.lambda1, cfg.lambda2)]), &[cfg.seed], &tr, &te).unwrap();
    assert_eq!(res.len(), 1);
    for (x, y) in plain.metrics.iter().zip(&res[0].metrics) {
        assert!(x.same_numbers(y));
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    write_sweep_csv(&p, &[res[0].row.clone()]).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 8);
}

#[test]
fn pinn_branchless_model_trains() {
    let data = rd_data(2, 8);
    let cfg = TrainConfig { trunk_width: 6, ..quick_config() };
    let out = train_pinn_single(&cfg, &data, 1).unwrap();
    assert!(out.model.branch_spec(Branch::S).is_none());
    assert!(out.last().l_total < out.metrics[0].l_total);
}
