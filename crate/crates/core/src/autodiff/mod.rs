//! Scalar computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in construction order, which is therefore a valid
//! topological order. Parameter leaves and fused dot-product rows read from a
//! bound parameter vector, input leaves from a bound input vector; rebinding
//! either and calling [`Graph::eval`] re-runs the same graph without
//! rebuilding it.
//!
//! Spatial derivatives are obtained by pushing order-2 jets ([`Jet`]) through
//! the same graph, so every derivative is itself a node and [`Graph::backward`]
//! differentiates it with respect to the parameters.

mod jet;
mod unary;

pub use jet::{jet2_propagate, jet_propagate, DirSpec, Jet, Jet2};
pub use unary::{sigmoid, UnaryFn, MAX_NODE_ORDER};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    start: u32,
    len: u32,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Input(u32),
    Param(u32),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Square(NodeId),
    Powi(NodeId, i32),
    Scale(NodeId, f64),
    Unary(UnaryFn, u8, NodeId),
    Sum(Span),
    Mean(Span),
    Max(Span),
    /// One row of a fused matrix-vector product: `sum_j w[j] * x[j] (+ bias)`
    /// with `w` and `bias` read from the bound parameters.
    Dot { weights: u32, bias: Option<u32>, inputs: Span },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "constant",
            Op::Input(_) => "input",
            Op::Param(_) => "parameter",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Square(_) => "square",
            Op::Powi(..) => "power",
            Op::Scale(..) => "scale",
            Op::Unary(f, ..) => f.name(),
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Max(_) => "max",
            Op::Dot { .. } => "matvec",
        }
    }
}

/// Deliberate corruption of a derivative rule, used by the self-check audits
/// to prove that they can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Reverse mode uses `1.01 * tanh'` instead of `tanh'`.
    TanhDerivative,
}

/// Parameter and input gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    ops: Vec<Op>,
    lists: Vec<NodeId>,
    values: Vec<f64>,
    adjoints: Vec<f64>,
    params: Vec<f64>,
    inputs: Vec<f64>,
    n_inputs: usize,
    param_extent: usize,
    evaluated: bool,
    fault: Option<Fault>,
    zero: Option<NodeId>,
    one: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Option<Fault>) -> Self {
        Graph { fault, ..Self::default() }
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// One past the largest parameter slot referenced by the graph.
    pub fn param_extent(&self) -> usize {
        self.param_extent
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(u32::try_from(self.ops.len()).expect("graph exceeds u32 nodes"));
        self.ops.push(op);
        self.evaluated = false;
        id
    }

    fn push_list(&mut self, ids: &[NodeId]) -> Span {
        let start = self.lists.len() as u32;
        self.lists.extend_from_slice(ids);
        Span { start, len: ids.len() as u32 }
    }

    fn list(&self, span: Span) -> &[NodeId] {
        &self.lists[span.start as usize..(span.start + span.len) as usize]
    }

    fn touch_param(&mut self, end: usize) {
        self.param_extent = self.param_extent.max(end);
    }

    // ---- construction -------------------------------------------------

    pub fn constant(&mut self, v: f64) -> NodeId {
        self.push(Op::Const(v))
    }

    pub fn zero(&mut self) -> NodeId {
        match self.zero {
            Some(z) => z,
            None => {
                let z = self.constant(0.0);
                self.zero = Some(z);
                z
            }
        }
    }

    pub fn one(&mut self) -> NodeId {
        match self.one {
            Some(o) => o,
            None => {
                let o = self.constant(1.0);
                self.one = Some(o);
                o
            }
        }
    }

    /// New input leaf; slots are numbered in creation order.
    pub fn input(&mut self) -> NodeId {
        let slot = self.n_inputs as u32;
        self.n_inputs += 1;
        self.push(Op::Input(slot))
    }

    pub fn inputs(&mut self, n: usize) -> Vec<NodeId> {
        (0..n).map(|_| self.input()).collect()
    }

    pub fn param(&mut self, slot: usize) -> NodeId {
        self.touch_param(slot + 1);
        self.push(Op::Param(slot as u32))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn powi(&mut self, a: NodeId, n: i32) -> NodeId {
        self.push(Op::Powi(a, n))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    /// `order`-th derivative of `f` applied to `a`.
    pub fn unary(&mut self, f: UnaryFn, order: u8, a: NodeId) -> NodeId {
        assert!(order <= MAX_NODE_ORDER, "unary node order {order} unsupported");
        self.push(Op::Unary(f, order, a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryFn::Tanh, 0, a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryFn::Relu, 0, a)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryFn::Gelu, 0, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryFn::Sigmoid, 0, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryFn::Exp, 0, a)
    }

    pub fn sum(&mut self, ids: &[NodeId]) -> NodeId {
        if ids.is_empty() {
            return self.zero();
        }
        let span = self.push_list(ids);
        self.push(Op::Sum(span))
    }

    pub fn mean(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "mean of an empty node list");
        let span = self.push_list(ids);
        self.push(Op::Mean(span))
    }

    pub fn max(&mut self, ids: &[NodeId]) -> NodeId {
        assert!(!ids.is_empty(), "max of an empty node list");
        let span = self.push_list(ids);
        self.push(Op::Max(span))
    }

    /// Single fused row `sum_j params[weights + j] * inputs[j] (+ params[bias])`.
    pub fn dot(&mut self, weights: usize, bias: Option<usize>, inputs: &[NodeId]) -> NodeId {
        self.touch_param(weights + inputs.len());
        if let Some(b) = bias {
            self.touch_param(b + 1);
        }
        let span = self.push_list(inputs);
        self.push(Op::Dot { weights: weights as u32, bias: bias.map(|b| b as u32), inputs: span })
    }

    /// Dense layer `W x (+ b)` with row-major `W` (rows x inputs.len()) at
    /// `weights` and `b` at `bias`.
    pub fn matvec(
        &mut self,
        weights: usize,
        bias: Option<usize>,
        rows: usize,
        inputs: &[NodeId],
    ) -> Vec<NodeId> {
        let cols = inputs.len();
        self.touch_param(weights + rows * cols);
        if let Some(b) = bias {
            self.touch_param(b + rows);
        }
        let span = self.push_list(inputs);
        (0..rows)
            .map(|r| {
                self.push(Op::Dot {
                    weights: (weights + r * cols) as u32,
                    bias: bias.map(|b| (b + r) as u32),
                    inputs: span,
                })
            })
            .collect()
    }

    // ---- binding and evaluation ----------------------------------------

    pub fn bind_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() < self.param_extent {
            return Err(Error::Dimension(format!(
                "graph references {} parameter slots, {} bound",
                self.param_extent,
                params.len()
            )));
        }
        self.params.clear();
        self.params.extend_from_slice(params);
        self.evaluated = false;
        Ok(())
    }

    pub fn bind_inputs(&mut self, inputs: &[f64]) -> Result<()> {
        if inputs.len() != self.n_inputs {
            return Err(Error::Dimension(format!(
                "graph has {} inputs, {} bound",
                self.n_inputs,
                inputs.len()
            )));
        }
        self.inputs.clear();
        self.inputs.extend_from_slice(inputs);
        self.evaluated = false;
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Evaluate every node in construction order.
    pub fn eval(&mut self) -> Result<()> {
        if self.params.len() < self.param_extent {
            return Err(Error::State(format!(
                "{} parameter slots referenced but only {} bound",
                self.param_extent,
                self.params.len()
            )));
        }
        if self.inputs.len() != self.n_inputs {
            return Err(Error::State(format!(
                "{} inputs declared but {} bound",
                self.n_inputs,
                self.inputs.len()
            )));
        }
        self.values.resize(self.ops.len(), 0.0);
        for i in 0..self.ops.len() {
            let v = self.compute(i);
            if !v.is_finite() {
                self.evaluated = false;
                return Err(Error::NonFinite { node: i, op: self.ops[i].name(), value: v });
            }
            self.values[i] = v;
        }
        self.evaluated = true;
        Ok(())
    }

    #[inline]
    fn compute(&self, i: usize) -> f64 {
        let v = &self.values;
        let at = |n: NodeId| v[n.index()];
        match self.ops[i] {
            Op::Const(c) => c,
            Op::Input(s) => self.inputs[s as usize],
            Op::Param(s) => self.params[s as usize],
            Op::Add(a, b) => at(a) + at(b),
            Op::Sub(a, b) => at(a) - at(b),
            Op::Mul(a, b) => at(a) * at(b),
            Op::Div(a, b) => at(a) / at(b),
            Op::Neg(a) => -at(a),
            Op::Square(a) => at(a) * at(a),
            Op::Powi(a, n) => at(a).powi(n),
            Op::Scale(a, c) => c * at(a),
            Op::Unary(f, order, a) => f.derivative(order, at(a)),
            Op::Sum(span) => self.list(span).iter().map(|&n| at(n)).sum(),
            Op::Mean(span) => {
                let ids = self.list(span);
                ids.iter().map(|&n| at(n)).sum::<f64>() / ids.len() as f64
            }
            Op::Max(span) => self.list(span).iter().map(|&n| at(n)).fold(f64::NEG_INFINITY, f64::max),
            Op::Dot { weights, bias, inputs } => {
                let w = &self.params[weights as usize..weights as usize + inputs.len as usize];
                let mut acc = bias.map_or(0.0, |b| self.params[b as usize]);
                for (wj, &n) in w.iter().zip(self.list(inputs)) {
                    acc += wj * at(n);
                }
                acc
            }
        }
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluated
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> f64 {
        debug_assert!(self.evaluated, "value read before eval");
        self.values[id.index()]
    }

    pub fn values_of(&self, ids: &[NodeId]) -> Vec<f64> {
        ids.iter().map(|&n| self.value(n)).collect()
    }

    // ---- reverse mode ---------------------------------------------------

    /// Gradient of the scalar `root` with respect to every parameter slot and
    /// every input leaf. Untouched slots are exactly zero.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len().max(self.param_extent)];
        let mut inputs = vec![0.0; self.n_inputs];
        self.backward_into(&[(root, 1.0)], &mut params, Some(&mut inputs))?;
        Ok(Gradients { params, inputs })
    }

    /// Vector-Jacobian product: propagate the given output adjoints and
    /// accumulate into `param_grad` (and `input_grad` when given).
    pub fn backward_into(
        &mut self,
        seeds: &[(NodeId, f64)],
        param_grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        if !self.evaluated {
            return Err(Error::State("backward called before a successful eval".into()));
        }
        if param_grad.len() < self.param_extent {
            return Err(Error::Dimension(format!(
                "parameter gradient buffer has {} slots, graph needs {}",
                param_grad.len(),
                self.param_extent
            )));
        }
        let Some(top) = seeds.iter().map(|(n, _)| n.index()).max() else {
            return Ok(());
        };
        self.adjoints.clear();
        self.adjoints.resize(top + 1, 0.0);
        for &(n, a) in seeds {
            self.adjoints[n.index()] += a;
        }
        let tanh_skew = if self.fault == Some(Fault::TanhDerivative) { 1.01 } else { 1.0 };
        for i in (0..=top).rev() {
            let g = self.adjoints[i];
            if g == 0.0 {
                continue;
            }
            let adj = &mut self.adjoints;
            let v = &self.values;
            match self.ops[i] {
                Op::Const(_) => {}
                Op::Input(s) => {
                    if let Some(ig) = input_grad.as_deref_mut() {
                        ig[s as usize] += g;
                    }
                }
                Op::Param(s) => param_grad[s as usize] += g,
                Op::Add(a, b) => {
                    adj[a.index()] += g;
                    adj[b.index()] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.index()] += g;
                    adj[b.index()] -= g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (v[a.index()], v[b.index()]);
                    adj[a.index()] += g * vb;
                    adj[b.index()] += g * va;
                }
                Op::Div(a, b) => {
                    let (va, vb) = (v[a.index()], v[b.index()]);
                    adj[a.index()] += g / vb;
                    adj[b.index()] -= g * va / (vb * vb);
                }
                Op::Neg(a) => adj[a.index()] -= g,
                Op::Square(a) => adj[a.index()] += 2.0 * g * v[a.index()],
                Op::Powi(a, n) => {
                    adj[a.index()] += g * f64::from(n) * v[a.index()].powi(n - 1);
                }
                Op::Scale(a, c) => adj[a.index()] += g * c,
                Op::Unary(f, order, a) => {
                    let mut d = f.derivative(order + 1, v[a.index()]);
                    if f == UnaryFn::Tanh && order == 0 {
                        d *= tanh_skew;
                    }
                    adj[a.index()] += g * d;
                }
                Op::Sum(span) => {
                    for &n in &self.lists[span.start as usize..(span.start + span.len) as usize] {
                        adj[n.index()] += g;
                    }
                }
                Op::Mean(span) => {
                    let share = g / span.len as f64;
                    for &n in &self.lists[span.start as usize..(span.start + span.len) as usize] {
                        adj[n.index()] += share;
                    }
                }
                Op::Max(span) => {
                    let ids = &self.lists[span.start as usize..(span.start + span.len) as usize];
                    let mut best = ids[0];
                    for &n in &ids[1..] {
                        if v[n.index()] > v[best.index()] {
                            best = n;
                        }
                    }
                    adj[best.index()] += g;
                }
                Op::Dot { weights, bias, inputs } => {
                    let w0 = weights as usize;
                    let ids = &self.lists[inputs.start as usize..(inputs.start + inputs.len) as usize];
                    for (j, &n) in ids.iter().enumerate() {
                        adj[n.index()] += g * self.params[w0 + j];
                        param_grad[w0 + j] += g * v[n.index()];
                    }
                    if let Some(b) = bias {
                        param_grad[b as usize] += g;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_and_tanh_basics() {
        let mut g = Graph::new();
        let x = g.param(0);
        let y = g.mul(x, x);
        let t = g.tanh(x);
        g.bind_params(&[3.0]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(y), 9.0);
        assert_eq!(g.backward(y).unwrap().params, vec![6.0]);

        g.bind_params(&[0.0]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(t), 0.0);
        assert_eq!(g.backward(t).unwrap().params, vec![1.0]);
    }

    #[test]
    fn backward_before_eval_is_a_state_error() {
        let mut g = Graph::new();
        let x = g.param(0);
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::State(_))));
        g.bind_params(&[1.0]).unwrap();
        assert!(matches!(g.backward(y), Err(Error::State(_))));
    }

    #[test]
    fn nonfinite_names_the_node() {
        let mut g = Graph::new();
        let x = g.param(0);
        let z = g.zero();
        let q = g.div(x, z);
        g.bind_params(&[1.0]).unwrap();
        match g.eval() {
            Err(Error::NonFinite { node, op, .. }) => {
                assert_eq!(node, q.index());
                assert_eq!(op, "div");
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn untouched_params_get_exact_zero() {
        let mut g = Graph::new();
        let a = g.param(0);
        let _b = g.param(2);
        let y = g.exp(a);
        g.bind_params(&[0.5, 9.0, 9.0]).unwrap();
        g.eval().unwrap();
        let grad = g.backward(y).unwrap();
        assert_eq!(grad.params[1], 0.0);
        assert_eq!(grad.params[2], 0.0);
        assert!((grad.params[0] - 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn reevaluation_is_bit_identical() {
        let mut g = Graph::new();
        let xs = g.inputs(3);
        let h = g.matvec(0, Some(6), 2, &xs);
        let a: Vec<_> = h.iter().map(|&n| g.gelu(n)).collect();
        let s = g.sum(&a);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.bind_params(&p).unwrap();
        g.bind_inputs(&[0.1, -0.4, 0.9]).unwrap();
        g.eval().unwrap();
        let first = g.value(s);
        g.eval().unwrap();
        assert_eq!(first.to_bits(), g.value(s).to_bits());
    }

    #[test]
    fn seeded_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(0);
        let y = g.square(x);
        let z = g.scale(x, 3.0);
        g.bind_params(&[2.0]).unwrap();
        g.eval().unwrap();
        let mut grad = vec![0.0];
        g.backward_into(&[(y, 1.0), (z, 2.0)], &mut grad, None).unwrap();
        assert_eq!(grad[0], 4.0 + 6.0);
        g.backward_into(&[(y, 1.0)], &mut grad, None).unwrap();
        assert_eq!(grad[0], 14.0);
    }

    #[test]
    fn max_routes_to_first_maximum() {
        let mut g = Graph::new();
        let xs = g.inputs(3);
        let m = g.max(&xs);
        g.bind_inputs(&[1.0, 4.0, 4.0]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(m), 4.0);
        let grad = g.backward(m).unwrap();
        assert_eq!(grad.inputs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn injected_tanh_fault_changes_gradient() {
        let mut g = Graph::with_fault(Some(Fault::TanhDerivative));
        let x = g.param(0);
        let t = g.tanh(x);
        g.bind_params(&[0.0]).unwrap();
        g.eval().unwrap();
        assert!((g.backward(t).unwrap().params[0] - 1.01).abs() < 1e-15);
    }
}
