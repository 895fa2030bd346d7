use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::nets::{mlp_apply, MlpSpec, NetSpec};

/// A network graph built once and re-evaluated for each input vector.
#[derive(Debug, Clone)]
pub struct NetEvaluator {
    graph: Graph,
    outputs: Vec<NodeId>,
}

impl NetEvaluator {
    pub fn new(spec: &NetSpec, offset: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let x = graph.inputs(spec.input_len());
        let outputs = spec.apply(&mut graph, offset, &x)?;
        Ok(NetEvaluator { graph, outputs })
    }

    pub fn eval(&mut self, params: &[f64], inputs: &[f64]) -> Result<Vec<f64>> {
        self.graph.bind_params(params)?;
        self.graph.bind_inputs(inputs)?;
        self.graph.eval()?;
        Ok(self.graph.values_of(&self.outputs))
    }
}

/// Single-point trunk evaluator.
#[derive(Debug, Clone)]
pub struct TrunkEvaluator {
    graph: Graph,
    outputs: Vec<NodeId>,
    bound: bool,
}

impl TrunkEvaluator {
    pub fn new(spec: &MlpSpec, offset: usize) -> Result<Self> {
        let mut graph = Graph::new();
        let x = graph.inputs(spec.input_len());
        let outputs = mlp_apply(spec, &mut graph, offset, &x)?;
        Ok(TrunkEvaluator { graph, outputs, bound: false })
    }

    /// Basis values at one point. Parameters are bound on first use, so an
    /// evaluator must not be reused across parameter vectors.
    pub fn eval(&mut self, params: &[f64], point: &[f64]) -> Result<Vec<f64>> {
        if !self.bound {
            self.graph.bind_params(params)?;
            self.bound = true;
        }
        self.graph.bind_inputs(point)?;
        self.graph.eval()?;
        Ok(self.graph.values_of(&self.outputs))
    }
}
