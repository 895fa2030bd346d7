use super::*;
use crate::datagen::Grid;
use proptest::prelude::*;

fn rd() -> PdeProblem {
    PdeProblem::default_for(ProblemKind::ReactionDiffusion)
}

fn small_rd(kind: ModelKind, p: usize, seed: u64) -> PidionModel {
    let spec = ModelSpec::preset(kind, &rd(), ModelShape::uniform(p, 8), 20, 10).unwrap();
    PidionModel::new(spec, seed).unwrap()
}

fn measurement(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 0.37 + seed as f64).sin()).collect()
}

/// Make a branch output the constant `value` in every slot.
fn force_branch(m: &mut PidionModel, which: Branch, value: f64) {
    let (spec, off) = m.branch_spec(which).map(|(s, o)| (s.clone(), o)).unwrap();
    let n = param_count(&spec).unwrap();
    let out = spec.output_len();
    let slice = &mut m.params.values[off..off + n];
    slice.iter_mut().for_each(|v| *v = 0.0);
    slice[n - out..].iter_mut().for_each(|v| *v = value);
}

#[test]
fn reference_parameter_count() {
    let m = PidionModel::reaction_diffusion_reference(0).unwrap();
    assert_eq!(m.param_count(), 12512);
    assert_eq!(m.spec.param_count().unwrap(), 12512);
}

#[test]
fn unit_coefficients_give_trunk_output() {
    let mut m = small_rd(ModelKind::Pidion, 1, 3);
    force_branch(&mut m, Branch::U, 1.0);
    let pts = Grid::space_time(5, 4, 1.0, 1.0).unwrap().points();
    let u = m.predict_u(&measurement(20, 1), &pts).unwrap();
    let t = m.basis(Trunk::U, &pts).unwrap();
    assert_eq!(u, t);
}

#[test]
fn doubling_coefficients_doubles_predictions() {
    let m = small_rd(ModelKind::Pidion, 4, 5);
    let mut d = m.clone();
    let (spec, off) = d.branch_spec(Branch::S).map(|(s, o)| (s.clone(), o)).unwrap();
    let n = param_count(&spec).unwrap();
    let last = 8 * 4 + 4;
    d.params.values[off + n - last..off + n].iter_mut().for_each(|v| *v *= 2.0);
    let pts = Grid::line(7, 0.0, 1.0).unwrap().points();
    let meas = measurement(20, 2);
    let a = m.predict_s(&meas, &pts).unwrap();
    let b = d.predict_s(&meas, &pts).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn dense_grid_matches_pointwise_evaluation() {
    let m = small_rd(ModelKind::Pidion, 4, 7);
    let meas = measurement(20, 3);
    let grid = Grid::space_time(200, 200, 1.0, 1.0).unwrap().points();
    let dense = m.predict_u(&meas, &grid).unwrap();
    for i in (0..grid.len()).step_by(397) {
        let one = PointSet::new(2, grid.point(i).to_vec()).unwrap();
        assert_eq!(m.predict_u(&meas, &one).unwrap()[0].to_bits(), dense[i].to_bits());
    }
    // shared points of a coarser grid agree exactly
    let coarse = Grid::space_time(3, 3, 1.0, 1.0).unwrap().points();
    let c = m.predict_u(&meas, &coarse).unwrap();
    assert_eq!(c[0].to_bits(), dense[0].to_bits());
    assert_eq!(c[8].to_bits(), dense[grid.len() - 1].to_bits());
}

#[test]
fn affine_trunk_has_no_curvature() {
    let mut spec = ModelSpec::preset(ModelKind::Pidion, &rd(), ModelShape::uniform(3, 8), 20, 10).unwrap();
    spec.u_trunk = MlpSpec::new(&[2, 3], Activation::Tanh);
    let m = PidionModel::new(spec, 1).unwrap();
    let mut g = Graph::new();
    let pts = PointSet::new(2, vec![0.2, 0.4, 0.9, 0.1]).unwrap();
    let jets = m.predict_u_jets(&mut g, &measurement(20, 0), &pts, &[DirSpec::second(0), DirSpec::second(1)]).unwrap();
    for j in &jets {
        assert!(j.d2.iter().all(Option::is_none));
    }
}

#[test]
fn laplacian_matches_stencil() {
    let m = small_rd(ModelKind::Pidion, 4, 11);
    let meas = measurement(20, 4);
    let dirs = [DirSpec::second(0), DirSpec::second(1)];
    let pts = PointSet::new(2, vec![0.3, 0.6, 0.71, 0.25]).unwrap();
    let mut g = Graph::new();
    let jets = m.predict_u_jets(&mut g, &meas, &pts, &dirs).unwrap();
    g.bind_params(&m.params.values).unwrap();
    g.bind_inputs(&[]).unwrap();
    g.eval().unwrap();
    let h = 1e-3;
    for (k, pt) in pts.iter().enumerate() {
        let (x, y) = (pt[0], pt[1]);
        let st = PointSet::new(2, vec![x, y, x + h, y, x - h, y, x, y + h, x, y - h]).unwrap();
        let v = m.predict_u(&meas, &st).unwrap();
        let fd = (v[1] + v[2] + v[3] + v[4] - 4.0 * v[0]) / (h * h);
        let lap = g.value(jets[k].d2[0].unwrap()) + g.value(jets[k].d2[1].unwrap());
        assert!((lap - fd).abs() <= 1e-3 * lap.abs().max(1e-2), "{lap} vs {fd}");
    }
}

#[test]
fn relu_trunk_rejected() {
    let mut spec = ModelSpec::preset(ModelKind::Pidion, &rd(), ModelShape::uniform(3, 8), 20, 10).unwrap();
    spec.u_trunk = MlpSpec::new(&[2, 8, 3], Activation::Relu);
    assert!(matches!(PidionModel::new(spec, 0), Err(Error::Capability(_))));
}

#[test]
fn measurement_and_point_checks() {
    let m = small_rd(ModelKind::Pidion, 2, 0);
    let pts = PointSet::new(2, vec![0.5, 0.5]).unwrap();
    assert!(matches!(m.predict_u(&[0.0; 3], &pts), Err(Error::Dimension(_))));
    let pts3 = PointSet::new(3, vec![0.5, 0.5, 0.5]).unwrap();
    assert!(matches!(m.predict_u(&measurement(20, 0), &pts3), Err(Error::Dimension(_))));
}

#[test]
fn v0_with_zero_inverse_branch() {
    let mut m = small_rd(ModelKind::V0, 3, 9);
    force_branch(&mut m, Branch::S, 0.0);
    let s_grid = Grid::line(10, 0.0, 1.0).unwrap().points();
    let u_pts = Grid::space_time(4, 4, 1.0, 1.0).unwrap().points();
    let (u, s) = m.v0_predict(&measurement(20, 1), &u_pts, &s_grid).unwrap();
    assert!(s.iter().all(|&v| v == 0.0));
    // u is whatever the forward branch produces from an all-zero input
    let (spec, off) = m.branch_spec(Branch::U).unwrap();
    let b = NetEvaluator::new(spec, off).unwrap().eval(&m.params.values, &[0.0; 10]).unwrap();
    let expect = PidionModel::readout(&b, &m.basis(Trunk::U, &u_pts).unwrap());
    assert_eq!(u, expect);
}

#[test]
fn shared_trunk_aliases_parameters() {
    let prob = PdeProblem::default_for(ProblemKind::Darcy);
    let mut spec = ModelSpec::preset(ModelKind::Pidion, &prob, ModelShape::uniform(4, 8), 400, 400).unwrap();
    if let Some(NetSpec::Conv(c)) = spec.u_branch.as_mut() {
        c.channels = vec![2, 2];
    }
    if let Some(NetSpec::Conv(c)) = spec.s_branch.as_mut() {
        c.channels = vec![2, 2];
    }
    let m = PidionModel::new(spec, 0).unwrap();
    assert_eq!(m.layout().u_trunk, m.layout().s_trunk);
    assert!(m.spec.shared_trunk());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn readout_is_bilinear(
        b1 in proptest::collection::vec(-2.0f64..2.0, 4),
        b2 in proptest::collection::vec(-2.0f64..2.0, 4),
        t in proptest::collection::vec(-2.0f64..2.0, 12),
        a in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + y).collect();
        let lhs = PidionModel::readout(&mix, &t);
        let r1 = PidionModel::readout(&b1, &t);
        let r2 = PidionModel::readout(&b2, &t);
        for i in 0..3 {
            prop_assert!((lhs[i] - (a * r1[i] + r2[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn darcy_permeability_strictly_in_range(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let prob = PdeProblem::default_for(ProblemKind::Darcy);
        let mut spec = ModelSpec::preset(ModelKind::Pidion, &prob, ModelShape::uniform(3, 6), 400, 400).unwrap();
        for b in [spec.u_branch.as_mut(), spec.s_branch.as_mut()].into_iter().flatten() {
            if let NetSpec::Conv(c) = b {
                c.channels = vec![2];
            }
        }
        let m = PidionModel::new(spec, seed).unwrap();
        let meas: Vec<f64> = measurement(400, seed).iter().map(|v| v * shift).collect();
        let pts = Grid::unit_square(5).unwrap().points();
        for v in m.predict_s(&meas, &pts).unwrap() {
            prop_assert!(v > 0.05 && v < 1.0);
        }
    }
}
