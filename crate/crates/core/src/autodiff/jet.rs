//! Order-2 directional jets over graph nodes.
//!
//! A [`Jet`] carries a value and, for each tracked coordinate direction, the
//! first and (optionally) second derivative along that direction. `None`
//! marks a structurally zero component, so affine maps of the inputs never
//! build second-derivative nodes at all.

use super::{Graph, NodeId, UnaryFn};
use crate::error::{Error, Result};

/// A tracked direction: coordinate `axis`, with or without its second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirSpec {
    pub axis: usize,
    pub second: bool,
}

impl DirSpec {
    pub fn first(axis: usize) -> Self {
        DirSpec { axis, second: false }
    }

    pub fn second(axis: usize) -> Self {
        DirSpec { axis, second: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: NodeId,
    pub d1: Vec<Option<NodeId>>,
    pub d2: Vec<Option<NodeId>>,
    second: u32,
}

/// Single-direction jet with every component materialised as a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: NodeId,
    pub d1: NodeId,
    pub d2: NodeId,
}

impl Jet {
    /// A quantity that does not vary along any tracked direction.
    pub fn constant(value: NodeId, template: &Jet) -> Jet {
        let n = template.d1.len();
        Jet { value, d1: vec![None; n], d2: vec![None; n], second: template.second }
    }

    pub fn n_dirs(&self) -> usize {
        self.d1.len()
    }

    pub fn tracks_second(&self, dir: usize) -> bool {
        self.second & (1 << dir) != 0
    }

    /// First derivative along tracked direction `dir`, materialising zero.
    pub fn d1_node(&self, g: &mut Graph, dir: usize) -> NodeId {
        self.d1[dir].unwrap_or_else(|| g.zero())
    }

    pub fn d2_node(&self, g: &mut Graph, dir: usize) -> NodeId {
        self.d2[dir].unwrap_or_else(|| g.zero())
    }

    fn is_varying(&self) -> bool {
        self.d1.iter().any(Option::is_some) || self.d2.iter().any(Option::is_some)
    }
}

fn opt_add(g: &mut Graph, a: Option<NodeId>, b: Option<NodeId>) -> Option<NodeId> {
    match (a, b) {
        (Some(a), Some(b)) => Some(g.add(a, b)),
        (x, None) | (None, x) => x,
    }
}

fn opt_mul(g: &mut Graph, a: Option<NodeId>, b: NodeId) -> Option<NodeId> {
    a.map(|a| g.mul(a, b))
}

impl Graph {
    pub fn jet_add(&mut self, a: &Jet, b: &Jet) -> Jet {
        let value = self.add(a.value, b.value);
        let d1 = (0..a.n_dirs()).map(|d| opt_add(self, a.d1[d], b.d1[d])).collect();
        let d2 = (0..a.n_dirs()).map(|d| opt_add(self, a.d2[d], b.d2[d])).collect();
        Jet { value, d1, d2, second: a.second }
    }

    pub fn jet_sub(&mut self, a: &Jet, b: &Jet) -> Jet {
        let nb = self.jet_scale(b, -1.0);
        self.jet_add(a, &nb)
    }

    pub fn jet_scale(&mut self, a: &Jet, c: f64) -> Jet {
        let value = self.scale(a.value, c);
        let d1 = a.d1.iter().map(|x| x.map(|x| self.scale(x, c))).collect();
        let d2 = a.d2.iter().map(|x| x.map(|x| self.scale(x, c))).collect();
        Jet { value, d1, d2, second: a.second }
    }

    /// Multiply by a node that is constant along every tracked direction
    /// (a branch coefficient, for instance).
    pub fn jet_scale_by(&mut self, a: &Jet, k: NodeId) -> Jet {
        let value = self.mul(a.value, k);
        let d1 = a.d1.iter().map(|&x| opt_mul(self, x, k)).collect();
        let d2 = a.d2.iter().map(|&x| opt_mul(self, x, k)).collect();
        Jet { value, d1, d2, second: a.second }
    }

    /// Truncated Taylor product: `(fg)'' = f''g + 2f'g' + fg''`.
    pub fn jet_mul(&mut self, a: &Jet, b: &Jet) -> Jet {
        let value = self.mul(a.value, b.value);
        let n = a.n_dirs();
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for d in 0..n {
            let t1 = opt_mul(self, a.d1[d], b.value);
            let t2 = opt_mul(self, b.d1[d], a.value);
            d1.push(opt_add(self, t1, t2));
            if a.tracks_second(d) {
                let s1 = opt_mul(self, a.d2[d], b.value);
                let s2 = opt_mul(self, b.d2[d], a.value);
                let cross = match (a.d1[d], b.d1[d]) {
                    (Some(x), Some(y)) => {
                        let m = self.mul(x, y);
                        Some(self.scale(m, 2.0))
                    }
                    _ => None,
                };
                let s = opt_add(self, s1, s2);
                d2.push(opt_add(self, s, cross));
            } else {
                d2.push(None);
            }
        }
        Jet { value, d1, d2, second: a.second }
    }

    /// Chain rule with exact activation derivatives:
    /// `f(z)' = f'(z) z'`, `f(z)'' = f''(z) z'^2 + f'(z) z''`.
    pub fn jet_unary(&mut self, f: UnaryFn, a: &Jet) -> Result<Jet> {
        let needs_second = (0..a.n_dirs()).any(|d| a.tracks_second(d) && a.d1[d].is_some());
        if !f.is_smooth() && needs_second {
            return Err(Error::Capability(format!(
                "{} has no second derivative; it cannot appear where second-order jets are required",
                f.name()
            )));
        }
        let value = self.unary(f, 0, a.value);
        if !a.is_varying() {
            return Ok(Jet::constant(value, a));
        }
        let f1 = self.unary(f, 1, a.value);
        let f2 = if needs_second { Some(self.unary(f, 2, a.value)) } else { None };
        let n = a.n_dirs();
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for d in 0..n {
            d1.push(opt_mul(self, a.d1[d], f1));
            if a.tracks_second(d) {
                let curv = match (a.d1[d], f2) {
                    (Some(z1), Some(f2)) => {
                        let sq = self.square(z1);
                        Some(self.mul(f2, sq))
                    }
                    _ => None,
                };
                let lin = opt_mul(self, a.d2[d], f1);
                d2.push(opt_add(self, curv, lin));
            } else {
                d2.push(None);
            }
        }
        Ok(Jet { value, d1, d2, second: a.second })
    }

    /// Fused dense layer on jets. The bias only enters the value; all
    /// derivative components are linear images of the input derivatives.
    pub fn jet_matvec(&mut self, weights: usize, bias: Option<usize>, rows: usize, inputs: &[Jet]) -> Vec<Jet> {
        let Some(first) = inputs.first() else {
            return Vec::new();
        };
        let second = first.second;
        let n = first.n_dirs();
        let values: Vec<NodeId> = inputs.iter().map(|j| j.value).collect();
        let out_values = self.matvec(weights, bias, rows, &values);
        let component = |g: &mut Graph, pick: &dyn Fn(&Jet) -> Option<NodeId>| -> Option<Vec<NodeId>> {
            if inputs.iter().all(|j| pick(j).is_none()) {
                return None;
            }
            let ids: Vec<NodeId> = inputs.iter().map(|j| pick(j).unwrap_or_else(|| g.zero())).collect();
            Some(g.matvec(weights, None, rows, &ids))
        };
        let mut d1_rows = Vec::with_capacity(n);
        let mut d2_rows = Vec::with_capacity(n);
        for d in 0..n {
            d1_rows.push(component(self, &|j: &Jet| j.d1[d]));
            d2_rows.push(if second & (1 << d) != 0 { component(self, &|j: &Jet| j.d2[d]) } else { None });
        }
        (0..rows)
            .map(|r| Jet {
                value: out_values[r],
                d1: d1_rows.iter().map(|c| c.as_ref().map(|v| v[r])).collect(),
                d2: d2_rows.iter().map(|c| c.as_ref().map(|v| v[r])).collect(),
                second,
            })
            .collect()
    }
}

/// Seed jets at `point` for the given directions and push them through `net`.
///
/// Component `k` of each returned jet's `d1`/`d2` refers to `dirs[k]`.
pub fn jet_propagate<F>(g: &mut Graph, point: &[NodeId], dirs: &[DirSpec], net: F) -> Result<Vec<Jet>>
where
    F: FnOnce(&mut Graph, &[Jet]) -> Result<Vec<Jet>>,
{
    if dirs.len() > 32 {
        return Err(Error::Contract("at most 32 jet directions".into()));
    }
    let mut second = 0u32;
    for (k, d) in dirs.iter().enumerate() {
        if d.axis >= point.len() {
            return Err(Error::Dimension(format!(
                "direction axis {} out of range for a {}-dimensional point",
                d.axis,
                point.len()
            )));
        }
        if d.second {
            second |= 1 << k;
        }
    }
    let one = g.one();
    let seeded: Vec<Jet> = point
        .iter()
        .enumerate()
        .map(|(i, &x)| Jet {
            value: x,
            d1: dirs.iter().map(|d| (d.axis == i).then_some(one)).collect(),
            d2: vec![None; dirs.len()],
            second,
        })
        .collect();
    net(g, &seeded)
}

/// Value, first and second derivative of each output of `net` along one
/// coordinate direction, all as graph nodes.
pub fn jet2_propagate<F>(g: &mut Graph, point: &[NodeId], direction: usize, net: F) -> Result<Vec<Jet2>>
where
    F: FnOnce(&mut Graph, &[Jet]) -> Result<Vec<Jet>>,
{
    let jets = jet_propagate(g, point, &[DirSpec::second(direction)], net)?;
    Ok(jets
        .into_iter()
        .map(|j| Jet2 { value: j.value, d1: j.d1_node(g, 0), d2: j.d2_node(g, 0) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map_has_structurally_zero_curvature() {
        let mut g = Graph::new();
        let x = g.inputs(2);
        let out = jet_propagate(&mut g, &x, &[DirSpec::second(0), DirSpec::second(1)], |g, xs| {
            Ok(g.jet_matvec(0, Some(6), 3, xs))
        })
        .unwrap();
        for j in &out {
            assert!(j.d2.iter().all(Option::is_none));
        }
        g.bind_params(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.1, 0.2, 0.3]).unwrap();
        g.bind_inputs(&[0.3, -0.2]).unwrap();
        g.eval().unwrap();
        let d1x = out[1].d1[0].unwrap();
        assert_eq!(g.value(d1x), 3.0);
        let d1y = out[2].d1[1].unwrap();
        assert_eq!(g.value(d1y), 6.0);
    }

    #[test]
    fn single_tanh_unit_at_origin() {
        let mut g = Graph::new();
        let x = g.inputs(2);
        let jets = jet2_propagate(&mut g, &x, 1, |g, xs| {
            let z = g.jet_matvec(0, None, 1, xs);
            Ok(vec![g.jet_unary(UnaryFn::Tanh, &z[0])?])
        })
        .unwrap();
        g.bind_params(&[0.7, -1.3]).unwrap();
        g.bind_inputs(&[0.0, 0.0]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(jets[0].value), 0.0);
        assert_eq!(g.value(jets[0].d1), -1.3);
        assert_eq!(g.value(jets[0].d2), 0.0);
    }

    #[test]
    fn relu_under_second_order_jet_is_rejected() {
        let mut g = Graph::new();
        let x = g.inputs(1);
        let err = jet2_propagate(&mut g, &x, 0, |g, xs| {
            let z = g.jet_matvec(0, None, 1, xs);
            Ok(vec![g.jet_unary(UnaryFn::Relu, &z[0])?])
        });
        assert!(matches!(err, Err(Error::Capability(_))));
    }

    #[test]
    fn direction_out_of_range() {
        let mut g = Graph::new();
        let x = g.inputs(1);
        let err = jet2_propagate(&mut g, &x, 1, |_, xs| Ok(xs.to_vec()));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn product_rule_on_polynomial() {
        // f(x) = x^2 * x = x^3 : f' = 3x^2, f'' = 6x
        let mut g = Graph::new();
        let x = g.inputs(1);
        let j = jet2_propagate(&mut g, &x, 0, |g, xs| {
            let sq = g.jet_mul(&xs[0], &xs[0]);
            Ok(vec![g.jet_mul(&sq, &xs[0])])
        })
        .unwrap();
        g.bind_inputs(&[1.5]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(j[0].value), 3.375);
        assert_eq!(g.value(j[0].d1), 6.75);
        assert_eq!(g.value(j[0].d2), 9.0);
    }
}
