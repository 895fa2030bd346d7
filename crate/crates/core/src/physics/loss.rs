use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// `(lambda1, lambda2)` in `L = lambda1 L_physics + lambda2 (L_data + L_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub physics: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { physics: 1.0, data: 100.0 }
    }
}

impl LossWeights {
    pub fn new(physics: f64, data: f64) -> Result<Self> {
        let w = LossWeights { physics, data };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physics >= 0.0) || !(self.data >= 0.0) || !(self.physics + self.data > 0.0) {
            return Err(Error::Validation(format!(
                "loss weights must be non-negative with a positive sum, got ({}, {})",
                self.physics, self.data
            )));
        }
        Ok(())
    }
}

/// Residual and misfit nodes over a whole batch. An empty list means the
/// term is absent and contributes zero.
#[derive(Debug, Clone, Default)]
pub struct ResidualTerms {
    pub interior: Vec<NodeId>,
    pub boundary: Vec<NodeId>,
    pub data: Vec<NodeId>,
    /// `s_pred - s_true` at the label points, when labels are used.
    pub s_misfit: Option<Vec<NodeId>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub physics: NodeId,
    pub data: NodeId,
    pub s: Option<NodeId>,
    pub total: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub physics: f64,
    pub data: f64,
    pub s: Option<f64>,
    pub total: f64,
}

impl LossValues {
    pub fn from_graph(g: &Graph, nodes: &LossNodes) -> Self {
        LossValues {
            physics: g.value(nodes.physics),
            data: g.value(nodes.data),
            s: nodes.s.map(|n| g.value(n)),
            total: g.value(nodes.total),
        }
    }

    /// Total from the components, in the same grouping as the graph.
    pub fn weighted(physics: f64, data: f64, s: Option<f64>, w: LossWeights) -> Self {
        let total = w.physics * physics + w.data * (data + s.unwrap_or(0.0));
        LossValues { physics, data, s, total }
    }
}

fn mean_square(g: &mut Graph, ids: &[NodeId]) -> NodeId {
    if ids.is_empty() {
        return g.zero();
    }
    let sq: Vec<NodeId> = ids.iter().map(|&r| g.square(r)).collect();
    g.mean(&sq)
}

/// Mean-squared loss components and the weighted total, as graph nodes.
pub fn assemble_losses(g: &mut Graph, terms: &ResidualTerms, weights: LossWeights) -> Result<LossNodes> {
    weights.validate()?;
    let no_s = terms.s_misfit.as_ref().is_none_or(Vec::is_empty);
    if terms.interior.is_empty() && terms.boundary.is_empty() && terms.data.is_empty() && no_s {
        return Err(Error::Contract("loss has no terms".into()));
    }
    let li = mean_square(g, &terms.interior);
    let lb = mean_square(g, &terms.boundary);
    let physics = g.add(li, lb);
    let data = mean_square(g, &terms.data);
    let s = terms.s_misfit.as_ref().map(|m| mean_square(g, m));
    let grouped = match s {
        Some(s) => g.add(data, s),
        None => data,
    };
    let a = g.scale(physics, weights.physics);
    let b = g.scale(grouped, weights.data);
    let total = g.add(a, b);
    Ok(LossNodes { physics, data, s, total })
}
