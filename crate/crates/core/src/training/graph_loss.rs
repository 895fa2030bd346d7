//! The whole batch loss as one expression graph over the global parameter
//! vector. Slow, but a direct transcription of the loss; used to check the
//! batched engine and for finite-difference audits.

use crate::autodiff::{DirSpec, Graph, Jet, NodeId};
use crate::datagen::PointSet;
use crate::error::{Error, Result};
use crate::model::{readout_jet, Branch, ModelKind, PidionModel, Trunk};
use crate::physics::{
    assemble_losses, boundary_residual, interior_residual, CollocationSet, FieldJet, LossNodes, LossValues, ResidualTerms,
};

use super::engine::{Batch, LossSetup};

fn trunk_jets_at(model: &PidionModel, g: &mut Graph, which: Trunk, points: &PointSet, dirs: &[DirSpec]) -> Result<Vec<Vec<Jet>>> {
    points
        .iter()
        .map(|pt| {
            let x: Vec<NodeId> = pt.iter().map(|&v| g.constant(v)).collect();
            model.trunk_jets(g, which, &x, dirs)
        })
        .collect()
}

/// Build the loss graph; parameters are global slots, there are no inputs.
pub fn build_loss_graph(model: &PidionModel, setup: &LossSetup, colloc: &CollocationSet, batch: &Batch) -> Result<(Graph, LossNodes)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let problem = &setup.problem;
    let tf = model.spec.s_transform;
    let mut g = Graph::new();
    let mut terms = ResidualTerms::default();

    let grid_basis = if setup.s_labels || model.kind() == ModelKind::V0 {
        Some(trunk_jets_at(model, &mut g, Trunk::S, &colloc.s_points, &[])?)
    } else {
        None
    };
    let meas_basis = trunk_jets_at(model, &mut g, Trunk::U, &colloc.measurement, &[])?;
    let (u_dirs, s_dirs, b_dirs) = (problem.interior_u_dirs(), problem.interior_s_dirs(), problem.boundary_u_dirs());
    let physics_bases = if setup.physics {
        let s_pts = PointSet::from_points(problem.s_dim(), colloc.interior.iter().map(|p| problem.s_point(p).to_vec()))?;
        Some((
            trunk_jets_at(model, &mut g, Trunk::U, &colloc.interior, &u_dirs)?,
            trunk_jets_at(model, &mut g, Trunk::S, &s_pts, &s_dirs)?,
            trunk_jets_at(model, &mut g, Trunk::U, &colloc.boundary, &b_dirs)?,
        ))
    } else {
        None
    };
    let mut s_misfit = Vec::new();

    for (i, meas) in batch.measurements.iter().enumerate() {
        let m: Vec<NodeId> = meas.iter().map(|&v| g.constant(v)).collect();
        let cs = match model.kind() {
            ModelKind::Pinn => vec![g.one()],
            _ => model.branch_nodes(&mut g, Branch::S, &m)?,
        };
        let s_grid: Option<Vec<NodeId>> = match &grid_basis {
            Some(basis) => Some(
                basis
                    .iter()
                    .map(|b| {
                        let z = readout_jet(&mut g, &cs, b);
                        Ok(tf.apply_jet(&mut g, &z)?.value)
                    })
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        let cu = match model.kind() {
            ModelKind::Pinn => vec![g.one()],
            ModelKind::Pidion => model.branch_nodes(&mut g, Branch::U, &m)?,
            ModelKind::V0 => model.branch_nodes(&mut g, Branch::U, s_grid.as_ref().expect("s grid"))?,
        };
        if let Some((ui, si, ub)) = &physics_bases {
            for (k, pt) in colloc.interior.iter().enumerate() {
                let u = readout_jet(&mut g, &cu, &ui[k]);
                let z = readout_jet(&mut g, &cs, &si[k]);
                let s = tf.apply_jet(&mut g, &z)?;
                let r = interior_residual(&mut g, problem, &FieldJet::new(&u, &u_dirs), &FieldJet::new(&s, &s_dirs), pt)?;
                terms.interior.push(r);
            }
            for (k, pt) in colloc.boundary.iter().enumerate() {
                let u = readout_jet(&mut g, &cu, &ub[k]);
                terms.boundary.push(boundary_residual(&mut g, problem, &FieldJet::new(&u, &b_dirs), pt)?);
            }
        }
        for (l, b) in meas_basis.iter().enumerate() {
            let u = readout_jet(&mut g, &cu, b);
            let target = g.constant(meas[l]);
            terms.data.push(g.sub(u.value, target));
        }
        if setup.s_labels {
            let labels = batch.s_labels.as_ref().ok_or_else(|| Error::Contract("supervised loss needs s labels".into()))?;
            for (m, &s) in s_grid.as_ref().expect("s grid").iter().enumerate() {
                let target = g.constant(labels[i][m]);
                s_misfit.push(g.sub(s, target));
            }
        }
    }
    if setup.s_labels {
        terms.s_misfit = Some(s_misfit);
    }
    let nodes = assemble_losses(&mut g, &terms, setup.weights)?;
    g.bind_params(&model.params.values)?;
    g.bind_inputs(&[])?;
    Ok((g, nodes))
}

/// Evaluate the loss graph at `params`.
pub fn graph_loss(g: &mut Graph, nodes: &LossNodes, params: &[f64]) -> Result<LossValues> {
    g.bind_params(params)?;
    g.eval()?;
    Ok(LossValues::from_graph(g, nodes))
}

/// Loss and full parameter gradient by the graph route.
pub fn graph_loss_and_grad(
    model: &PidionModel,
    setup: &LossSetup,
    colloc: &CollocationSet,
    batch: &Batch,
) -> Result<(LossValues, Vec<f64>)> {
    let (mut g, nodes) = build_loss_graph(model, setup, colloc, batch)?;
    let values = graph_loss(&mut g, &nodes, &model.params.values)?;
    let mut grad = vec![0.0; model.param_count()];
    g.backward_into(&[(nodes.total, 1.0)], &mut grad, None)?;
    Ok((values, grad))
}
