use super::{Activation, MlpSpec, OutputActivation};
use crate::autodiff::{Graph, Jet, NodeId, UnaryFn};
use crate::error::{Error, Result};

fn check_input(spec: &MlpSpec, got: usize) -> Result<()> {
    spec.validate()?;
    if got != spec.input_len() {
        return Err(Error::Dimension(format!("MLP expects {} inputs, got {got}", spec.input_len())));
    }
    Ok(())
}

pub(super) fn layer_activation(spec: &MlpSpec, layer: usize) -> Option<UnaryFn> {
    if layer + 2 < spec.widths.len() {
        spec.hidden[layer].unary()
    } else {
        match spec.output {
            OutputActivation::Identity => None,
            OutputActivation::Sigmoid => Some(UnaryFn::Sigmoid),
        }
    }
}

/// Forward pass of an MLP whose parameters start at slot `offset`.
pub fn mlp_apply(spec: &MlpSpec, g: &mut Graph, offset: usize, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
    check_input(spec, inputs.len())?;
    let mut x = inputs.to_vec();
    let mut at = offset;
    for (l, (fi, fo)) in spec.layers().enumerate() {
        let z = g.matvec(at, Some(at + fi * fo), fo, &x);
        at += fi * fo + fo;
        x = match layer_activation(spec, l) {
            Some(f) => z.into_iter().map(|n| g.unary(f, 0, n)).collect(),
            None => z,
        };
    }
    Ok(x)
}

/// Forward pass on jets; fails with a capability error for ReLU networks.
pub fn mlp_apply_jets(spec: &MlpSpec, g: &mut Graph, offset: usize, inputs: &[Jet]) -> Result<Vec<Jet>> {
    check_input(spec, inputs.len())?;
    if !spec.is_jet_capable() {
        return Err(Error::Capability(format!(
            "MLP {:?} uses {:?} activations, which cannot carry second derivatives",
            spec.widths,
            Activation::Relu
        )));
    }
    let mut x = inputs.to_vec();
    let mut at = offset;
    for (l, (fi, fo)) in spec.layers().enumerate() {
        let z = g.jet_matvec(at, Some(at + fi * fo), fo, &x);
        at += fi * fo + fo;
        x = match layer_activation(spec, l) {
            Some(f) => z.iter().map(|j| g.jet_unary(f, j)).collect::<Result<_>>()?,
            None => z,
        };
    }
    Ok(x)
}
