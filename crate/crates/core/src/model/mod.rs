//! Branch/trunk operator models.
//!
//! `u(x) = sum_h b_h t_h(x)` and `s(x) = phi(sum_h c_h t'_h(x))`, where the
//! coefficients `b`, `c` come from branch networks and `t`, `t'` are trunk
//! bases (the same trunk when shared). Three arrangements are supported:
//!
//! * [`ModelKind::Pidion`]: both branches read the measurement vector.
//! * [`ModelKind::V0`]: the inverse branch reads the measurement, and a
//!   forward branch reads the predicted `s` on the s grid to produce `b`.
//! * [`ModelKind::Pinn`]: no branches; the two trunks are coordinate networks
//!   with one output each and unit coefficients.

mod eval;

pub use eval::{NetEvaluator, TrunkEvaluator};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jet_propagate, DirSpec, Graph, Jet, NodeId, UnaryFn};
use crate::datagen::{derive_seed, PointSet};
use crate::error::{Error, Result};
use crate::nets::{init_params, param_count, Activation, ConvStackSpec, MlpSpec, NetSpec, ParamStore};
use crate::physics::{PdeProblem, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pidion,
    V0,
    Pinn,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pidion" => Ok(ModelKind::Pidion),
            "v0" => Ok(ModelKind::V0),
            "pinn" => Ok(ModelKind::Pinn),
            other => Err(Error::Validation(format!("unknown model kind '{other}' (pidion | v0 | pinn)"))),
        }
    }
}

/// Output map applied to the raw `s` readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum STransform {
    Identity,
    Sigmoid,
    /// `lo + (hi - lo) sigmoid(z)`
    AffineSigmoid { lo: f64, hi: f64 },
}

impl STransform {
    fn bounds(self) -> Option<(f64, f64)> {
        match self {
            STransform::Identity => None,
            STransform::Sigmoid => Some((0.0, 1.0)),
            STransform::AffineSigmoid { lo, hi } => Some((lo, hi)),
        }
    }

    pub fn apply(self, z: f64) -> f64 {
        match self.bounds() {
            None => z,
            // saturated sigmoids would land on the bounds; keep them open
            Some((lo, hi)) => (lo + (hi - lo) * crate::autodiff::sigmoid(z)).clamp(lo.next_up(), hi.next_down()),
        }
    }

    /// `(phi(z), phi'(z), phi''(z))`
    pub fn derivatives(self, z: f64) -> (f64, f64, f64) {
        match self.bounds() {
            None => (z, 1.0, 0.0),
            Some((lo, hi)) => {
                let w = hi - lo;
                let f = UnaryFn::Sigmoid;
                (lo + w * f.derivative(0, z), w * f.derivative(1, z), w * f.derivative(2, z))
            }
        }
    }

    pub fn apply_jet(self, g: &mut Graph, z: &Jet) -> Result<Jet> {
        match self.bounds() {
            None => Ok(z.clone()),
            Some((lo, hi)) => {
                let s = g.jet_unary(UnaryFn::Sigmoid, z)?;
                let scaled = g.jet_scale(&s, hi - lo);
                if lo == 0.0 {
                    return Ok(scaled);
                }
                let c = g.constant(lo);
                let shift = Jet::constant(c, z);
                Ok(g.jet_add(&scaled, &shift))
            }
        }
    }

    pub fn validate(self) -> Result<()> {
        if let STransform::AffineSigmoid { lo, hi } = self {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Validation(format!("s range ({lo}, {hi}) must be finite with hi > lo")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Reconstruction branch (`Pidion`) or forward branch (`V0`).
    U,
    /// Inverse branch.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trunk {
    U,
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Latent width (number of basis functions).
    pub p: usize,
    pub u_branch: Option<NetSpec>,
    pub s_branch: Option<NetSpec>,
    pub u_trunk: MlpSpec,
    /// `None` shares the u trunk.
    pub s_trunk: Option<MlpSpec>,
    pub s_transform: STransform,
}

/// Size knobs for the preset architectures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub p: usize,
    pub branch_width: usize,
    pub trunk_width: usize,
}

impl ModelShape {
    pub fn default_for(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::ReactionDiffusion => ModelShape { p: 32, branch_width: 32, trunk_width: 32 },
            _ => ModelShape { p: 128, branch_width: 128, trunk_width: 128 },
        }
    }

    pub fn uniform(p: usize, width: usize) -> Self {
        ModelShape { p, branch_width: width, trunk_width: width }
    }
}

fn square_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Dimension(format!("{n} values do not form a square grid")));
    }
    Ok(side)
}

fn branch_for(problem: &PdeProblem, input_len: usize, shape: ModelShape) -> Result<NetSpec> {
    let w = shape.branch_width;
    Ok(match problem.kind() {
        ProblemKind::ReactionDiffusion => NetSpec::Mlp(MlpSpec::new(&[input_len, w, w, shape.p], Activation::Relu)),
        _ => {
            let side = square_side(input_len)?;
            let mut c = ConvStackSpec::standard(side, side, shape.p);
            c.mlp_widths = vec![w, shape.p];
            NetSpec::Conv(c)
        }
    })
}

fn default_transform(problem: &PdeProblem) -> STransform {
    match problem {
        PdeProblem::Darcy => STransform::AffineSigmoid { lo: 0.05, hi: 1.0 },
        _ => STransform::Identity,
    }
}

impl ModelSpec {
    /// Preset architecture for a problem. `measurement_len` is the branch
    /// input width and `s_grid_len` the forward-branch input width of `V0`.
    pub fn preset(kind: ModelKind, problem: &PdeProblem, shape: ModelShape, measurement_len: usize, s_grid_len: usize) -> Result<Self> {
        let tw = shape.trunk_width;
        let p = shape.p;
        let separate = problem.kind() == ProblemKind::ReactionDiffusion;
        let spec = match kind {
            ModelKind::Pidion | ModelKind::V0 => {
                let u_in = if kind == ModelKind::V0 { s_grid_len } else { measurement_len };
                ModelSpec {
                    kind,
                    p,
                    u_branch: Some(branch_for(problem, u_in, shape)?),
                    s_branch: Some(branch_for(problem, measurement_len, shape)?),
                    u_trunk: MlpSpec::new(&[problem.u_dim(), tw, tw, p], Activation::Tanh),
                    s_trunk: separate.then(|| MlpSpec::new(&[problem.s_dim(), tw, tw, p], Activation::Tanh)),
                    s_transform: default_transform(problem),
                }
            }
            ModelKind::Pinn => ModelSpec {
                kind,
                p: 1,
                u_branch: None,
                s_branch: None,
                u_trunk: MlpSpec::new(&[problem.u_dim(), tw, tw, tw, 1], Activation::Tanh),
                s_trunk: Some(MlpSpec::new(&[problem.s_dim(), tw, tw, tw, 1], Activation::Tanh)),
                s_transform: default_transform(problem),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.s_transform.validate()?;
        if self.p == 0 {
            return Err(Error::Validation("latent width p must be positive".into()));
        }
        for t in std::iter::once(&self.u_trunk).chain(self.s_trunk.as_ref()) {
            t.validate()?;
            if !t.is_jet_capable() {
                return Err(Error::Capability("trunk networks need second derivatives; ReLU is not allowed".into()));
            }
            if t.output_len() != self.p {
                return Err(Error::Dimension(format!("trunk outputs {} values but p = {}", t.output_len(), self.p)));
            }
        }
        match self.kind {
            ModelKind::Pinn => {
                if self.u_branch.is_some() || self.s_branch.is_some() || self.p != 1 {
                    return Err(Error::Validation("coordinate networks take no branches and have p = 1".into()));
                }
            }
            _ => {
                for b in [&self.u_branch, &self.s_branch] {
                    let b = b.as_ref().ok_or_else(|| Error::Validation("operator models need both branches".into()))?;
                    b.validate()?;
                    if b.output_len() != self.p {
                        return Err(Error::Dimension(format!("branch outputs {} values but p = {}", b.output_len(), self.p)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn shared_trunk(&self) -> bool {
        self.s_trunk.is_none()
    }

    pub fn s_trunk_spec(&self) -> &MlpSpec {
        self.s_trunk.as_ref().unwrap_or(&self.u_trunk)
    }

    pub fn measurement_len(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Pinn => None,
            _ => self.s_branch.as_ref().map(NetSpec::input_len),
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        let mut n = 0;
        for b in [&self.u_branch, &self.s_branch].into_iter().flatten() {
            n += param_count(b)?;
        }
        n += self.u_trunk.param_count();
        n += self.s_trunk.as_ref().map_or(0, MlpSpec::param_count);
        Ok(n)
    }

    fn component_names(&self) -> [&'static str; 4] {
        match self.kind {
            ModelKind::Pidion => ["recon_branch", "inverse_branch", "recon_trunk", "inverse_trunk"],
            ModelKind::V0 => ["forward_branch", "inverse_branch", "trunk", "inverse_trunk"],
            ModelKind::Pinn => ["", "", "u_net", "s_net"],
        }
    }
}

/// Parameter offsets of each component inside the flat store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub u_branch: Option<usize>,
    pub s_branch: Option<usize>,
    pub u_trunk: usize,
    pub s_trunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidionModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
    layout: Layout,
}

fn layout_of(spec: &ModelSpec) -> Result<Layout> {
    let mut at = 0;
    let mut take = |n: usize| {
        let o = at;
        at += n;
        o
    };
    let u_branch = match &spec.u_branch {
        Some(b) => Some(take(param_count(b)?)),
        None => None,
    };
    let s_branch = match &spec.s_branch {
        Some(b) => Some(take(param_count(b)?)),
        None => None,
    };
    let u_trunk = take(spec.u_trunk.param_count());
    let s_trunk = match &spec.s_trunk {
        Some(t) => take(t.param_count()),
        None => u_trunk,
    };
    Ok(Layout { u_branch, s_branch, u_trunk, s_trunk })
}

impl PidionModel {
    /// Fresh model; each component draws from its own seed derived from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let names = spec.component_names();
        let mut store = ParamStore { values: Vec::new(), segments: Vec::new(), seed };
        let parts: [Option<NetSpec>; 4] = [
            spec.u_branch.clone(),
            spec.s_branch.clone(),
            Some(NetSpec::Mlp(spec.u_trunk.clone())),
            spec.s_trunk.clone().map(NetSpec::Mlp),
        ];
        for (i, part) in parts.iter().enumerate() {
            if let Some(net) = part {
                store.append(names[i], init_params(net, derive_seed(seed, i as u64))?);
            }
        }
        Self::from_parts(spec, store)
    }

    /// Reassemble a model from a spec and a stored parameter vector.
    pub fn from_parts(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let layout = layout_of(&spec)?;
        let n = spec.param_count()?;
        if params.len() != n {
            return Err(Error::Dimension(format!("model needs {n} parameters, store has {}", params.len())));
        }
        Ok(PidionModel { spec, params, layout })
    }

    /// Reaction-diffusion reference architecture: 60-32-32-32 ReLU branches,
    /// separate 2-32-32-32 and 1-32-32-32 tanh trunks.
    pub fn reaction_diffusion_reference(seed: u64) -> Result<Self> {
        let prob = PdeProblem::default_for(ProblemKind::ReactionDiffusion);
        Self::new(ModelSpec::preset(ModelKind::Pidion, &prob, ModelShape::uniform(32, 32), 60, 30)?, seed)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    fn branch(&self, which: Branch) -> Result<(&NetSpec, usize)> {
        let (spec, off) = match which {
            Branch::U => (&self.spec.u_branch, self.layout.u_branch),
            Branch::S => (&self.spec.s_branch, self.layout.s_branch),
        };
        match (spec, off) {
            (Some(s), Some(o)) => Ok((s, o)),
            _ => Err(Error::Contract("model has no branch networks".into())),
        }
    }

    pub fn branch_spec(&self, which: Branch) -> Option<(&NetSpec, usize)> {
        self.branch(which).ok()
    }

    pub fn trunk(&self, which: Trunk) -> (&MlpSpec, usize) {
        match which {
            Trunk::U => (&self.spec.u_trunk, self.layout.u_trunk),
            Trunk::S => (self.spec.s_trunk_spec(), self.layout.s_trunk),
        }
    }

    /// Branch outputs as graph nodes (global parameter slots).
    pub fn branch_nodes(&self, g: &mut Graph, which: Branch, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let (spec, off) = self.branch(which)?;
        spec.apply(g, off, inputs)
    }

    /// Trunk basis jets at `point` (graph nodes, global parameter slots).
    pub fn trunk_jets(&self, g: &mut Graph, which: Trunk, point: &[NodeId], dirs: &[DirSpec]) -> Result<Vec<Jet>> {
        let (spec, off) = self.trunk(which);
        if point.len() != spec.input_len() {
            return Err(Error::Dimension(format!("trunk takes {}-d points, got {}", spec.input_len(), point.len())));
        }
        jet_propagate(g, point, dirs, |g, xs| crate::nets::mlp_apply_jets(spec, g, off, xs))
    }

    fn check_measurement(&self, m: &[f64]) -> Result<()> {
        if let Some(n) = self.spec.measurement_len() {
            if m.len() != n {
                return Err(Error::Dimension(format!("measurement has {} values, branch expects {n}", m.len())));
            }
        }
        Ok(())
    }

    fn check_points(&self, which: Trunk, pts: &PointSet) -> Result<()> {
        let d = self.trunk(which).0.input_len();
        if pts.dim != d {
            return Err(Error::Dimension(format!("{}-d points given to a trunk with {d} inputs", pts.dim)));
        }
        Ok(())
    }

    /// Trunk basis values at each point, `points.len() x p`, row-major.
    pub fn basis(&self, which: Trunk, points: &PointSet) -> Result<Vec<f64>> {
        self.check_points(which, points)?;
        let (spec, off) = self.trunk(which);
        let p = self.p();
        let proto = TrunkEvaluator::new(spec, off)?;
        let chunks: Vec<Vec<f64>> = points
            .coords
            .par_chunks(points.dim * 256)
            .map(|c| {
                let mut ev = proto.clone();
                let mut out = Vec::with_capacity(c.len() / points.dim * p);
                for pt in c.chunks_exact(points.dim) {
                    out.extend(ev.eval(&self.params.values, pt)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }

    /// `s` coefficients from the inverse branch (unit coefficient for coordinate networks).
    pub fn s_coefficients(&self, measurement: &[f64]) -> Result<Vec<f64>> {
        self.check_measurement(measurement)?;
        match self.branch(Branch::S) {
            Ok((spec, off)) => NetEvaluator::new(spec, off)?.eval(&self.params.values, measurement),
            Err(_) => Ok(vec![1.0]),
        }
    }

    /// `u` coefficients. For `V0` the forward branch reads the predicted `s`
    /// at `s_grid`, which must then be given.
    pub fn u_coefficients(&self, measurement: &[f64], s_grid: Option<&PointSet>) -> Result<Vec<f64>> {
        self.check_measurement(measurement)?;
        match self.spec.kind {
            ModelKind::Pinn => Ok(vec![1.0]),
            ModelKind::Pidion => {
                let (spec, off) = self.branch(Branch::U)?;
                NetEvaluator::new(spec, off)?.eval(&self.params.values, measurement)
            }
            ModelKind::V0 => {
                let grid = s_grid.ok_or_else(|| Error::Contract("the forward branch needs the s grid".into()))?;
                let s = self.predict_s(measurement, grid)?;
                let (spec, off) = self.branch(Branch::U)?;
                if s.len() != spec.input_len() {
                    return Err(Error::Dimension(format!(
                        "s grid has {} points, forward branch expects {}",
                        s.len(),
                        spec.input_len()
                    )));
                }
                NetEvaluator::new(spec, off)?.eval(&self.params.values, &s)
            }
        }
    }

    /// Pointwise readout `sum_h coef_h basis_h` in fixed order.
    pub fn readout(coef: &[f64], basis: &[f64]) -> Vec<f64> {
        basis
            .chunks_exact(coef.len())
            .map(|row| row.iter().zip(coef).fold(0.0, |acc, (t, b)| acc + b * t))
            .collect()
    }

    pub fn predict_u(&self, measurement: &[f64], points: &PointSet) -> Result<Vec<f64>> {
        if self.spec.kind == ModelKind::V0 {
            return Err(Error::Contract("use v0_predict for the v0 variant".into()));
        }
        let b = self.u_coefficients(measurement, None)?;
        Ok(Self::readout(&b, &self.basis(Trunk::U, points)?))
    }

    pub fn predict_s(&self, measurement: &[f64], points: &PointSet) -> Result<Vec<f64>> {
        let c = self.s_coefficients(measurement)?;
        let t = self.spec.s_transform;
        Ok(Self::readout(&c, &self.basis(Trunk::S, points)?).into_iter().map(|z| t.apply(z)).collect())
    }

    /// `(u at u_points, s at s_grid)` for the `V0` variant.
    pub fn v0_predict(&self, measurement: &[f64], u_points: &PointSet, s_grid: &PointSet) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.predict_s(measurement, s_grid)?;
        let b = self.u_coefficients(measurement, Some(s_grid))?;
        Ok((Self::readout(&b, &self.basis(Trunk::U, u_points)?), s))
    }

    /// Predictions for many measurements at once; bases are computed once.
    /// Returns `(u per sample, s per sample)`.
    pub fn predict_batch(
        &self,
        measurements: &[&[f64]],
        u_points: &PointSet,
        s_points: &PointSet,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let tu = self.basis(Trunk::U, u_points)?;
        let ts = self.basis(Trunk::S, s_points)?;
        let t = self.spec.s_transform;
        let mut us = Vec::with_capacity(measurements.len());
        let mut ss = Vec::with_capacity(measurements.len());
        for m in measurements {
            let c = self.s_coefficients(m)?;
            let s: Vec<f64> = Self::readout(&c, &ts).into_iter().map(|z| t.apply(z)).collect();
            let b = match self.spec.kind {
                ModelKind::V0 => self.u_coefficients(m, Some(s_points))?,
                _ => self.u_coefficients(m, None)?,
            };
            us.push(Self::readout(&b, &tu));
            ss.push(s);
        }
        Ok((us, ss))
    }

    /// Jets of `u` at each point as graph nodes, for a measurement held
    /// constant. Only the trunk carries spatial derivatives.
    pub fn predict_u_jets(&self, g: &mut Graph, measurement: &[f64], points: &PointSet, dirs: &[DirSpec]) -> Result<Vec<Jet>> {
        self.check_measurement(measurement)?;
        self.check_points(Trunk::U, points)?;
        let coef: Vec<NodeId> = match self.spec.kind {
            ModelKind::Pinn => vec![g.one()],
            ModelKind::Pidion => {
                let m: Vec<NodeId> = measurement.iter().map(|&v| g.constant(v)).collect();
                self.branch_nodes(g, Branch::U, &m)?
            }
            ModelKind::V0 => return Err(Error::Contract("u jets of the v0 variant need the s grid".into())),
        };
        points
            .iter()
            .map(|pt| {
                let x: Vec<NodeId> = pt.iter().map(|&v| g.constant(v)).collect();
                let basis = self.trunk_jets(g, Trunk::U, &x, dirs)?;
                Ok(readout_jet(g, &coef, &basis))
            })
            .collect()
    }
}

/// `sum_h coef_h basis_h` on jets.
pub fn readout_jet(g: &mut Graph, coef: &[NodeId], basis: &[Jet]) -> Jet {
    let mut acc: Option<Jet> = None;
    for (b, t) in coef.iter().zip(basis) {
        let term = g.jet_scale_by(t, *b);
        acc = Some(match acc {
            None => term,
            Some(a) => g.jet_add(&a, &term),
        });
    }
    acc.expect("p >= 1")
}

#[cfg(test)]
mod tests;
