//! Batched loss and gradient evaluation.
//!
//! Trunk bases and their derivatives depend on the point only, so they are
//! evaluated once per collocation point and shared by every sample. Each
//! field component over the batch is then a product `coef (N x p) * T^T`.
//! Residual adjoints are formed pointwise from local partials and pulled
//! back through those products into the trunk and branch graphs.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::pool::{merge_grad_jobs, run_jobs, MergeOrder};
use crate::autodiff::{DirSpec, Graph, NodeId};
use crate::datagen::PointSet;
use crate::error::{Error, Result};
use crate::model::{Branch, ModelKind, PidionModel, STransform, Trunk};
use crate::nets::{mlp_jet_backward, mlp_jet_forward, JetBatch, MlpSpec, NetSpec};
use crate::physics::{
    boundary_residual_local, interior_residual_local, CollocationSet, LocalJet, LossValues, LossWeights, PdeProblem,
};

/// Points per trunk block.
const BLOCK: usize = 256;
/// Samples per branch job.
const GROUP: usize = 8;

/// Which loss terms are active and how they are weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSetup {
    pub problem: PdeProblem,
    pub weights: LossWeights,
    /// Residual terms are built; off for the supervised-only baseline.
    pub physics: bool,
    /// `L_s` against s labels on the s grid.
    pub s_labels: bool,
}

/// Measurements of a batch and, when supervised, the s labels on the s grid.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub measurements: Vec<&'a [f64]>,
    pub s_labels: Option<Vec<&'a [f64]>>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

fn n_comp(dirs: &[DirSpec]) -> usize {
    1 + 2 * dirs.len()
}

/// Component matrices (column-major slices) to a local jet at flat index `at`.
#[inline]
fn local_at(f: &[&[f64]], dirs: &[DirSpec], at: usize) -> LocalJet {
    let n = dirs.len();
    let mut j = LocalJet { v: f[0][at], ..Default::default() };
    for (d, dir) in dirs.iter().enumerate() {
        j.d1[dir.axis] = f[1 + d][at];
        if dir.second {
            j.d2[dir.axis] = f[1 + n + d][at];
        }
    }
    j
}

#[inline]
fn scatter(a: &mut [DMatrix<f64>], dirs: &[DirSpec], at: usize, partial: &LocalJet, scale: f64) {
    let n = dirs.len();
    a[0].as_mut_slice()[at] += scale * partial.v;
    for (d, dir) in dirs.iter().enumerate() {
        a[1 + d].as_mut_slice()[at] += scale * partial.d1[dir.axis];
        if dir.second {
            a[1 + n + d].as_mut_slice()[at] += scale * partial.d2[dir.axis];
        }
    }
}

fn slices(m: &[DMatrix<f64>]) -> Vec<&[f64]> {
    m.iter().map(|m| m.as_slice()).collect()
}

/// Trunk basis jets over a fixed point set, evaluated in blocks of points
/// with trunk-local parameters.
#[derive(Debug, Clone)]
struct TrunkBank {
    spec: MlpSpec,
    dirs: Vec<DirSpec>,
    n_points: usize,
    blocks: Vec<DMatrix<f64>>,
    tapes: Vec<JetBatch>,
    /// Per component, `n_points x p`.
    values: Vec<DMatrix<f64>>,
}

impl TrunkBank {
    fn new(spec: &MlpSpec, dirs: &[DirSpec], points: &PointSet) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("trunk bank over an empty point set".into()));
        }
        if points.dim != spec.input_len() {
            return Err(Error::Dimension(format!("{}-d points for a trunk with {} inputs", points.dim, spec.input_len())));
        }
        let dim = points.dim;
        let blocks = points
            .coords
            .chunks(BLOCK * dim)
            .map(|c| DMatrix::from_row_slice(c.len() / dim, dim, c))
            .collect();
        Ok(TrunkBank {
            spec: spec.clone(),
            dirs: dirs.to_vec(),
            n_points: points.len(),
            blocks,
            tapes: Vec::new(),
            values: Vec::new(),
        })
    }

    fn forward(&mut self, params: &[f64]) -> Result<()> {
        let (spec, dirs) = (&self.spec, &self.dirs);
        self.tapes = self.blocks.par_iter().map(|b| mlp_jet_forward(spec, params, dirs, b)).collect::<Result<_>>()?;
        let p = spec.output_len();
        self.values = (0..n_comp(dirs))
            .map(|c| {
                let mut m = DMatrix::zeros(self.n_points, p);
                let mut row = 0;
                for t in &self.tapes {
                    let o = &t.outputs[c];
                    m.rows_mut(row, o.nrows()).copy_from(o);
                    row += o.nrows();
                }
                m
            })
            .collect();
        Ok(())
    }

    /// Pull adjoints of the component matrices back to trunk parameters.
    /// Must follow [`TrunkBank::forward`] with the same parameters.
    fn backward(&self, params: &[f64], adj: &[DMatrix<f64>], merge: MergeOrder) -> Result<Vec<f64>> {
        let mut starts = Vec::with_capacity(self.tapes.len());
        let mut row = 0;
        for t in &self.tapes {
            starts.push(row);
            row += t.outputs[0].nrows();
        }
        merge_grad_jobs(self.tapes.len(), params.len(), merge, |j, buf| {
            let t = &self.tapes[j];
            let rows = t.outputs[0].nrows();
            let a: Vec<DMatrix<f64>> = adj.iter().map(|m| m.rows(starts[j], rows).into_owned()).collect();
            mlp_jet_backward(t, params, &a, buf)
        })
    }
}

/// A branch network evaluated sample by sample on a pool of graphs.
#[derive(Debug, Clone)]
struct BranchRunner {
    p: usize,
    n_in: usize,
    outputs: Vec<NodeId>,
    proto: Graph,
    graphs: Vec<Graph>,
}

impl BranchRunner {
    fn new(spec: &NetSpec) -> Result<Self> {
        let mut g = Graph::new();
        let x = g.inputs(spec.input_len());
        let outputs = spec.apply(&mut g, 0, &x)?;
        Ok(BranchRunner { p: spec.output_len(), n_in: spec.input_len(), outputs, proto: g, graphs: Vec::new() })
    }

    fn ensure_pool(&mut self, n_jobs: usize) {
        let want = n_jobs.min(rayon::current_num_threads()).max(1);
        while self.graphs.len() < want {
            self.graphs.push(self.proto.clone());
        }
    }

    fn forward(&mut self, params: &[f64], inputs: &[&[f64]]) -> Result<DMatrix<f64>> {
        let n = inputs.len();
        let n_jobs = n.div_ceil(GROUP);
        self.ensure_pool(n_jobs);
        let outputs = &self.outputs;
        let rows = run_jobs(&mut self.graphs, n_jobs, |g, job| {
            g.bind_params(params)?;
            let mut out = Vec::new();
            for x in &inputs[job * GROUP..((job + 1) * GROUP).min(n)] {
                g.bind_inputs(x)?;
                g.eval()?;
                out.push(g.values_of(outputs));
            }
            Ok(out)
        })?;
        let mut m = DMatrix::zeros(n, self.p);
        for (i, row) in rows.into_iter().flatten().enumerate() {
            for (h, v) in row.into_iter().enumerate() {
                m[(i, h)] = v;
            }
        }
        Ok(m)
    }

    /// Parameter gradient for output adjoints `adj` (`N x p`), and the input
    /// gradient `N x n_in` when asked for. Summed in sample order.
    fn backward(
        &mut self,
        params: &[f64],
        inputs: &[&[f64]],
        adj: &DMatrix<f64>,
        want_inputs: bool,
    ) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        let n = inputs.len();
        let n_jobs = n.div_ceil(GROUP);
        self.ensure_pool(n_jobs);
        let (outputs, n_in, len) = (&self.outputs, self.n_in, params.len());
        let parts = run_jobs(&mut self.graphs, n_jobs, |g, job| {
            g.bind_params(params)?;
            let mut buf = vec![0.0; len];
            let mut din = Vec::new();
            for i in job * GROUP..((job + 1) * GROUP).min(n) {
                g.bind_inputs(inputs[i])?;
                g.eval()?;
                let seeds: Vec<(NodeId, f64)> =
                    outputs.iter().enumerate().map(|(h, &o)| (o, adj[(i, h)])).filter(|s| s.1 != 0.0).collect();
                if want_inputs {
                    let mut ig = vec![0.0; n_in];
                    g.backward_into(&seeds, &mut buf, Some(&mut ig))?;
                    din.push(ig);
                } else {
                    g.backward_into(&seeds, &mut buf, None)?;
                }
            }
            Ok((buf, din))
        })?;
        let mut grad = vec![0.0; len];
        let mut din = want_inputs.then(|| DMatrix::zeros(n, n_in));
        let mut i = 0;
        for (buf, rows) in parts {
            for (t, v) in grad.iter_mut().zip(buf) {
                *t += v;
            }
            if let Some(d) = din.as_mut() {
                for row in rows {
                    for (j, v) in row.into_iter().enumerate() {
                        d[(i, j)] = v;
                    }
                    i += 1;
                }
            }
        }
        Ok((grad, din))
    }
}

/// Distinct s-coordinates of the interior points and the map into them.
fn unique_s_points(problem: &PdeProblem, interior: &PointSet) -> Result<(PointSet, Vec<usize>)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut coords = Vec::new();
    let mut map = Vec::with_capacity(interior.len());
    for pt in interior.iter() {
        let sp = problem.s_point(pt);
        let key: Vec<u64> = sp.iter().map(|v| v.to_bits()).collect();
        let next = index.len();
        let k = *index.entry(key).or_insert_with(|| {
            coords.extend_from_slice(sp);
            next
        });
        map.push(k);
    }
    Ok((PointSet::new(problem.s_dim(), coords)?, map))
}

#[derive(Debug, Clone, Copy)]
struct Slice {
    off: usize,
    len: usize,
}

impl Slice {
    fn of<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.off..self.off + self.len]
    }

    fn add_into(&self, total: &mut [f64], part: &[f64]) {
        for (t, v) in total[self.off..self.off + self.len].iter_mut().zip(part) {
            *t += v;
        }
    }
}

/// Loss and gradient evaluator for one model layout, problem and point set.
#[derive(Debug, Clone)]
pub struct Engine {
    setup: LossSetup,
    kind: ModelKind,
    p: usize,
    transform: STransform,
    n_params: usize,
    u_trunk: Slice,
    s_trunk: Slice,
    u_branch: Option<(Slice, BranchRunner)>,
    s_branch: Option<(Slice, BranchRunner)>,
    u_int: Option<TrunkBank>,
    s_int: Option<(TrunkBank, Vec<usize>)>,
    u_bnd: Option<TrunkBank>,
    u_meas: TrunkBank,
    s_grid: Option<TrunkBank>,
    interior: PointSet,
    boundary: PointSet,
    s_grid_len: usize,
    merge: MergeOrder,
}

fn trunk_slice(model: &PidionModel, which: Trunk) -> Slice {
    let (spec, off) = model.trunk(which);
    Slice { off, len: spec.param_count() }
}

fn branch_part(model: &PidionModel, which: Branch) -> Result<Option<(Slice, BranchRunner)>> {
    match model.branch_spec(which) {
        None => Ok(None),
        Some((spec, off)) => {
            let len = crate::nets::param_count(spec)?;
            Ok(Some((Slice { off, len }, BranchRunner::new(spec)?)))
        }
    }
}

fn interior_banks(model: &PidionModel, problem: &PdeProblem, interior: &PointSet) -> Result<(TrunkBank, (TrunkBank, Vec<usize>))> {
    let s_dirs = problem.interior_s_dirs();
    if s_dirs.iter().any(|d| d.second) {
        return Err(Error::Contract("second derivatives of s are not supported in residuals".into()));
    }
    let u = TrunkBank::new(model.trunk(Trunk::U).0, &problem.interior_u_dirs(), interior)?;
    let (pts, map) = unique_s_points(problem, interior)?;
    let s = TrunkBank::new(model.trunk(Trunk::S).0, &s_dirs, &pts)?;
    Ok((u, (s, map)))
}

impl Engine {
    pub fn new(model: &PidionModel, setup: LossSetup, colloc: &CollocationSet, merge: MergeOrder) -> Result<Self> {
        setup.weights.validate()?;
        colloc.validate(&setup.problem)?;
        let problem = &setup.problem;
        if model.trunk(Trunk::U).0.input_len() != problem.u_dim() || model.trunk(Trunk::S).0.input_len() != problem.s_dim() {
            return Err(Error::Incompatible("model trunks do not match the problem dimensions".into()));
        }
        let (u_int, s_int) = if setup.physics {
            let (u, s) = interior_banks(model, problem, &colloc.interior)?;
            (Some(u), Some(s))
        } else {
            (None, None)
        };
        let u_bnd = if setup.physics {
            Some(TrunkBank::new(model.trunk(Trunk::U).0, &problem.boundary_u_dirs(), &colloc.boundary)?)
        } else {
            None
        };
        let u_meas = TrunkBank::new(model.trunk(Trunk::U).0, &[], &colloc.measurement)?;
        let needs_grid = setup.s_labels || model.kind() == ModelKind::V0;
        let s_grid = if needs_grid { Some(TrunkBank::new(model.trunk(Trunk::S).0, &[], &colloc.s_points)?) } else { None };
        Ok(Engine {
            kind: model.kind(),
            p: model.p(),
            transform: model.spec.s_transform,
            n_params: model.param_count(),
            u_trunk: trunk_slice(model, Trunk::U),
            s_trunk: trunk_slice(model, Trunk::S),
            u_branch: branch_part(model, Branch::U)?,
            s_branch: branch_part(model, Branch::S)?,
            u_int,
            s_int,
            u_bnd,
            u_meas,
            s_grid,
            interior: colloc.interior.clone(),
            boundary: colloc.boundary.clone(),
            s_grid_len: colloc.s_points.len(),
            merge,
            setup,
        })
    }

    pub fn setup(&self) -> &LossSetup {
        &self.setup
    }

    /// Replace the interior collocation points (for resampling).
    pub fn set_interior(&mut self, model: &PidionModel, interior: &PointSet) -> Result<()> {
        if !self.setup.physics {
            return Ok(());
        }
        let (u, s) = interior_banks(model, &self.setup.problem, interior)?;
        self.u_int = Some(u);
        self.s_int = Some(s);
        self.interior = interior.clone();
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let m = self.u_meas.n_points;
        if let Some(bad) = batch.measurements.iter().find(|x| x.len() != m) {
            return Err(Error::Dimension(format!("measurement has {} values, expected {m}", bad.len())));
        }
        if self.setup.s_labels {
            let labels = batch.s_labels.as_ref().ok_or_else(|| Error::Contract("supervised loss needs s labels".into()))?;
            if labels.len() != batch.len() || labels.iter().any(|l| l.len() != self.s_grid_len) {
                return Err(Error::Dimension("s labels do not match the batch or the s grid".into()));
            }
        }
        Ok(())
    }

    /// Loss components, and the full parameter gradient when `want_grad`.
    pub fn loss_and_grad(&mut self, params: &[f64], batch: &Batch, want_grad: bool) -> Result<(LossValues, Option<Vec<f64>>)> {
        if params.len() != self.n_params {
            return Err(Error::Dimension(format!("{} parameters given, model has {}", params.len(), self.n_params)));
        }
        self.check_batch(batch)?;
        let n = batch.len();
        let p = self.p;
        let w = self.setup.weights;
        let tf = self.transform;
        let (ut, st) = (self.u_trunk, self.s_trunk);

        // s coefficients
        let bs = match self.s_branch.as_mut() {
            Some((sl, r)) => r.forward(sl.of(params), &batch.measurements)?,
            None => DMatrix::from_element(n, 1, 1.0),
        };

        // s on the s grid (labels, V0 forward-branch input)
        let mut grid = None;
        if let Some(bank) = self.s_grid.as_mut() {
            bank.forward(st.of(params))?;
            let z = &bs * bank.values[0].transpose();
            let s = z.map(|v| tf.apply(v));
            grid = Some((z, s));
        }

        // u coefficients
        let grid_rows: Vec<Vec<f64>> = match (&grid, self.kind) {
            (Some((_, s)), ModelKind::V0) => (0..n).map(|i| s.row(i).iter().copied().collect()).collect(),
            _ => Vec::new(),
        };
        let grid_refs: Vec<&[f64]> = grid_rows.iter().map(Vec::as_slice).collect();
        let bu = match (self.kind, self.u_branch.as_mut()) {
            (ModelKind::Pidion, Some((sl, r))) => r.forward(sl.of(params), &batch.measurements)?,
            (ModelKind::V0, Some((sl, r))) => r.forward(sl.of(params), &grid_refs)?,
            _ => DMatrix::from_element(n, 1, 1.0),
        };
        debug_assert_eq!(bu.ncols(), p);

                let mut dbu = DMatrix::zeros(n, p);
        let mut dbs = DMatrix::zeros(n, p);
        let problem = self.setup.problem;

        // interior residuals
        let mut l_int = 0.0;
        let mut l_bnd = 0.0;
        let mut u_int_adj = None;
        let mut s_int_adj = None;
        if let (Some(ub), Some((sb, map))) = (self.u_int.as_mut(), self.s_int.as_mut()) {
            ub.forward(ut.of(params))?;
            sb.forward(st.of(params))?;
            let k_n = ub.n_points;
            let fu: Vec<DMatrix<f64>> = ub.values.iter().map(|t| &bu * t.transpose()).collect();
            let zs: Vec<DMatrix<f64>> = sb.values.iter().map(|t| &bs * t.transpose()).collect();
            let m_n = sb.n_points;
            // transformed s and its first derivatives at the unique points
            let mut phi1 = DMatrix::zeros(n, m_n);
            let mut phi2 = DMatrix::zeros(n, m_n);
            let mut sv: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, m_n); zs.len()];
            let sdirs = sb.dirs.clone();
            for m in 0..m_n {
                for i in 0..n {
                    let z = zs[0][(i, m)];
                    let (_, d1, d2) = tf.derivatives(z);
                    phi1[(i, m)] = d1;
                    phi2[(i, m)] = d2;
                    sv[0][(i, m)] = tf.apply(z);
                    for d in 0..sdirs.len() {
                        sv[1 + d][(i, m)] = d1 * zs[1 + d][(i, m)];
                    }
                }
            }
            let udirs = ub.dirs.clone();
            let scale = 2.0 * w.physics / (n * k_n) as f64;
            let mut au: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, k_n); fu.len()];
            let mut asv: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, m_n); sv.len()];
            let (fu_s, sv_s) = (slices(&fu), slices(&sv));
            for k in 0..k_n {
                let pt = self.interior.point(k);
                for i in 0..n {
                    let (ua, sa) = (k * n + i, map[k] * n + i);
                    let u = local_at(&fu_s, &udirs, ua);
                    let s = local_at(&sv_s, &sdirs, sa);
                    let (r, du, ds) = interior_residual_local(&problem, &u, &s, pt);
                    l_int += r * r;
                    if want_grad {
                        scatter(&mut au, &udirs, ua, &du, scale * r);
                        scatter(&mut asv, &sdirs, sa, &ds, scale * r);
                    }
                }
            }
            l_int /= (n * k_n) as f64;
            if want_grad {
                // through s = phi(z), s_d = phi'(z) z_d
                let mut az: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, m_n); zs.len()];
                for m in 0..m_n {
                    for i in 0..n {
                        let mut a0 = asv[0][(i, m)] * phi1[(i, m)];
                        for d in 0..sdirs.len() {
                            let a = asv[1 + d][(i, m)];
                            a0 += a * phi2[(i, m)] * zs[1 + d][(i, m)];
                            az[1 + d][(i, m)] = a * phi1[(i, m)];
                        }
                        az[0][(i, m)] = a0;
                    }
                }
                for (a, t) in au.iter().zip(&ub.values) {
                    dbu += a * t;
                }
                for (a, t) in az.iter().zip(&sb.values) {
                    dbs += a * t;
                }
                u_int_adj = Some(au.iter().map(|a| a.transpose() * &bu).collect::<Vec<_>>());
                s_int_adj = Some(az.iter().map(|a| a.transpose() * &bs).collect::<Vec<_>>());
            }
        }

        // boundary residuals
        let mut u_bnd_adj = None;
        if let Some(bb) = self.u_bnd.as_mut() {
            bb.forward(ut.of(params))?;
            let k_n = bb.n_points;
            let fb: Vec<DMatrix<f64>> = bb.values.iter().map(|t| &bu * t.transpose()).collect();
            let dirs = bb.dirs.clone();
            let scale = 2.0 * w.physics / (n * k_n) as f64;
            let mut ab: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, k_n); fb.len()];
            let fb_s = slices(&fb);
            for k in 0..k_n {
                let pt = self.boundary.point(k);
                for i in 0..n {
                    let u = local_at(&fb_s, &dirs, k * n + i);
                    let (r, du) = boundary_residual_local(&problem, &u, pt)?;
                    l_bnd += r * r;
                    if want_grad {
                        scatter(&mut ab, &dirs, k * n + i, &du, scale * r);
                    }
                }
            }
            l_bnd /= (n * k_n) as f64;
            if want_grad {
                for (a, t) in ab.iter().zip(&bb.values) {
                    dbu += a * t;
                }
                u_bnd_adj = Some(ab.iter().map(|a| a.transpose() * &bu).collect::<Vec<_>>());
            }
        }

        // data misfit at the measured points
        self.u_meas.forward(ut.of(params))?;
        let um = &bu * self.u_meas.values[0].transpose();
        let l_n = self.u_meas.n_points;
        let mut misfit = DMatrix::zeros(n, l_n);
        let mut l_data = 0.0;
        for i in 0..n {
            for l in 0..l_n {
                let d = um[(i, l)] - batch.measurements[i][l];
                misfit[(i, l)] = d;
                l_data += d * d;
            }
        }
        l_data /= (n * l_n) as f64;

        // s labels
        let mut l_s = None;
        let mut azg = grid.as_ref().map(|(z, _)| DMatrix::zeros(z.nrows(), z.ncols()));
        if let (true, Some((z, s)), Some(labels)) = (self.setup.s_labels, &grid, &batch.s_labels) {
            let g_n = s.ncols();
            let scale = 2.0 * w.data / (n * g_n) as f64;
            let mut acc = 0.0;
            let azg = azg.as_mut().expect("grid adjoint");
            for i in 0..n {
                for m in 0..g_n {
                    let d = s[(i, m)] - labels[i][m];
                    acc += d * d;
                    azg[(i, m)] = scale * d * tf.derivatives(z[(i, m)]).1;
                }
            }
            l_s = Some(acc / (n * g_n) as f64);
        }

        let physics = if self.setup.physics { l_int + l_bnd } else { 0.0 };
        let values = LossValues::weighted(physics, l_data, l_s, w);
        if !want_grad {
            return Ok((values, None));
        }
        let mut grad = vec![0.0; self.n_params];
        let grad = &mut grad[..];

        let am = misfit * (2.0 * w.data / (n * l_n) as f64);
        dbu += &am * &self.u_meas.values[0];
        let u_meas_adj = vec![am.transpose() * &bu];

        // u branch, and for V0 the chain into s on the grid
        match (self.kind, self.u_branch.as_mut()) {
            (ModelKind::Pidion, Some((sl, r))) => {
                let (gb, _) = r.backward(sl.of(params), &batch.measurements, &dbu, false)?;
                sl.add_into(grad, &gb);
            }
            (ModelKind::V0, Some((sl, r))) => {
                let (gb, din) = r.backward(sl.of(params), &grid_refs, &dbu, true)?;
                sl.add_into(grad, &gb);
                let din = din.expect("input gradient");
                let (z, _) = grid.as_ref().expect("s grid");
                let azg = azg.as_mut().expect("grid adjoint");
                for i in 0..n {
                    for m in 0..z.ncols() {
                        azg[(i, m)] += din[(i, m)] * tf.derivatives(z[(i, m)]).1;
                    }
                }
            }
            _ => {}
        }
        let mut grid_adj = None;
        if let (Some(a), Some(bank)) = (azg.as_ref(), self.s_grid.as_ref()) {
            dbs += a * &bank.values[0];
            grid_adj = Some(vec![a.transpose() * &bs]);
        }

        if let Some((sl, r)) = self.s_branch.as_mut() {
            let (gb, _) = r.backward(sl.of(params), &batch.measurements, &dbs, false)?;
            sl.add_into(grad, &gb);
        }

        // trunks
        let merge = self.merge;
        let mut trunk_back = |bank: Option<&mut TrunkBank>, adj: Option<Vec<DMatrix<f64>>>, sl: Slice| -> Result<()> {
            if let (Some(bank), Some(adj)) = (bank, adj) {
                let g = bank.backward(sl.of(params), &adj, merge)?;
                sl.add_into(grad, &g);
            }
            Ok(())
        };
        trunk_back(self.u_int.as_mut(), u_int_adj, ut)?;
        trunk_back(self.s_int.as_mut().map(|(b, _)| b), s_int_adj, st)?;
        trunk_back(self.u_bnd.as_mut(), u_bnd_adj, ut)?;
        trunk_back(Some(&mut self.u_meas), Some(u_meas_adj), ut)?;
        trunk_back(self.s_grid.as_mut(), grid_adj, st)?;
        Ok((values, Some(grad.to_vec())))
    }
}
