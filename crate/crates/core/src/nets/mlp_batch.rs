//! Numeric forward and reverse passes of an MLP carrying coordinate jets over
//! a batch of points at once. Each jet component is a `points x width`
//! matrix; dense layers become matrix products.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use super::{mlp::layer_activation, MlpSpec};
use crate::autodiff::{DirSpec, UnaryFn};
use crate::error::{Error, Result};

type Comps = Vec<Option<DMatrix<f64>>>;

#[derive(Debug, Clone)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
    input: Comps,
    pre: Comps,
    /// First three activation derivatives at the pre-activation values.
    derivs: Option<[DMatrix<f64>; 3]>,
}

/// Forward record of [`mlp_jet_forward`], consumed by [`mlp_jet_backward`].
///
/// Components are ordered value, first derivative per direction, second
/// derivative per direction; second derivatives of first-order directions are
/// zero.
#[derive(Debug, Clone)]
pub struct JetBatch {
    n_dirs: usize,
    second: Vec<bool>,
    layers: Vec<Layer>,
    pub outputs: Vec<DMatrix<f64>>,
}

fn derivs(f: UnaryFn, z: &DMatrix<f64>) -> (DMatrix<f64>, [DMatrix<f64>; 3]) {
    let (r, c) = z.shape();
    let mut v = DMatrix::zeros(r, c);
    let mut d = [DMatrix::zeros(r, c), DMatrix::zeros(r, c), DMatrix::zeros(r, c)];
    for (i, &x) in z.iter().enumerate() {
        let e = match f {
            UnaryFn::Tanh => {
                let t = x.tanh();
                let q = 1.0 - t * t;
                [t, q, -2.0 * t * q, -2.0 * q * (1.0 - 3.0 * t * t)]
            }
            _ => [f.derivative(0, x), f.derivative(1, x), f.derivative(2, x), f.derivative(3, x)],
        };
        v[i] = e[0];
        d[0][i] = e[1];
        d[1][i] = e[2];
        d[2][i] = e[3];
    }
    (v, d)
}

fn add_opt(acc: &mut Option<DMatrix<f64>>, m: DMatrix<f64>) {
    match acc {
        Some(a) => *a += m,
        None => *acc = Some(m),
    }
}

/// Jets of `spec` (parameters `params`, trunk-local) at the rows of `points`.
pub fn mlp_jet_forward(spec: &MlpSpec, params: &[f64], dirs: &[DirSpec], points: &DMatrix<f64>) -> Result<JetBatch> {
    spec.validate()?;
    if !spec.is_jet_capable() {
        return Err(Error::Capability(format!("MLP {:?} cannot carry second derivatives", spec.widths)));
    }
    if params.len() != spec.param_count() {
        return Err(Error::Dimension(format!("{} parameters for an MLP with {}", params.len(), spec.param_count())));
    }
    if points.ncols() != spec.input_len() {
        return Err(Error::Dimension(format!("{}-d points for an MLP with {} inputs", points.ncols(), spec.input_len())));
    }
    if let Some(d) = dirs.iter().find(|d| d.axis >= points.ncols()) {
        return Err(Error::Dimension(format!("direction axis {} out of range", d.axis)));
    }
    let k = points.nrows();
    let n = dirs.len();
    let second: Vec<bool> = dirs.iter().map(|d| d.second).collect();
    let mut x: Comps = Vec::with_capacity(1 + 2 * n);
    x.push(Some(points.clone()));
    for d in dirs {
        let mut e = DMatrix::zeros(k, points.ncols());
        e.column_mut(d.axis).fill(1.0);
        x.push(Some(e));
    }
    x.extend((0..n).map(|_| None));

    let mut layers = Vec::new();
    let mut at = 0;
    for (l, w) in spec.widths.windows(2).enumerate() {
        let (fi, fo) = (w[0], w[1]);
        let wt = DMatrixView::from_slice(&params[at..at + fi * fo], fi, fo);
        let bias = &params[at + fi * fo..at + fi * fo + fo];
        let pre: Comps = x
            .iter()
            .enumerate()
            .map(|(c, a)| {
                a.as_ref().map(|a| {
                    let mut z = a * wt;
                    if c == 0 {
                        for (j, b) in bias.iter().enumerate() {
                            z.column_mut(j).add_scalar_mut(*b);
                        }
                    }
                    z
                })
            })
            .collect();
        let (out, ds) = match layer_activation(spec, l) {
            None => (pre.clone(), None),
            Some(f) => {
                let (v, ds) = derivs(f, pre[0].as_ref().expect("value component"));
                let mut out: Comps = vec![None; 1 + 2 * n];
                out[0] = Some(v);
                for d in 0..n {
                    out[1 + d] = pre[1 + d].as_ref().map(|z| z.component_mul(&ds[0]));
                    if second[d] {
                        let mut acc = None;
                        if let Some(z) = &pre[1 + d] {
                            add_opt(&mut acc, z.component_mul(z).component_mul(&ds[1]));
                        }
                        if let Some(z) = &pre[1 + n + d] {
                            add_opt(&mut acc, z.component_mul(&ds[0]));
                        }
                        out[1 + n + d] = acc;
                    }
                }
                (out, Some(ds))
            }
        };
        layers.push(Layer { fan_in: fi, fan_out: fo, offset: at, input: std::mem::take(&mut x), pre, derivs: ds });
        x = out;
        at += fi * fo + fo;
    }
    let p = spec.output_len();
    let outputs = x.into_iter().map(|c| c.unwrap_or_else(|| DMatrix::zeros(k, p))).collect();
    Ok(JetBatch { n_dirs: n, second, layers, outputs })
}

/// Accumulate into `grad` the parameter gradient of `sum_c <adj[c], outputs[c]>`.
pub fn mlp_jet_backward(batch: &JetBatch, params: &[f64], adj: &[DMatrix<f64>], grad: &mut [f64]) -> Result<()> {
    let n = batch.n_dirs;
    if adj.len() != 1 + 2 * n || adj.iter().zip(&batch.outputs).any(|(a, o)| a.shape() != o.shape()) {
        return Err(Error::Dimension("adjoints do not match the jet outputs".into()));
    }
    let mut g: Comps = adj.iter().enumerate().map(|(c, a)| (c <= n || batch.second[c - 1 - n]).then(|| a.clone())).collect();
    for (li, layer) in batch.layers.iter().enumerate().rev() {
        // through the activation
        let gz: Comps = match &layer.derivs {
            None => g,
            Some([d1, d2, d3]) => {
                let pre = &layer.pre;
                let mut gz: Comps = vec![None; 1 + 2 * n];
                let mut g0 = g[0].as_ref().map(|a| a.component_mul(d1));
                for d in 0..n {
                    let zd = pre[1 + d].as_ref();
                    if let (Some(a), Some(zd)) = (&g[1 + d], zd) {
                        add_opt(&mut gz[1 + d], a.component_mul(d1));
                        add_opt(&mut g0, a.component_mul(d2).component_mul(zd));
                    }
                    if !batch.second[d] {
                        continue;
                    }
                    if let Some(a) = &g[1 + n + d] {
                        if let Some(zdd) = &pre[1 + n + d] {
                            gz[1 + n + d] = Some(a.component_mul(d1));
                            add_opt(&mut g0, a.component_mul(d2).component_mul(zdd));
                        }
                        if let Some(zd) = zd {
                            let ad2 = a.component_mul(d2);
                            add_opt(&mut gz[1 + d], ad2.component_mul(zd) * 2.0);
                            add_opt(&mut g0, a.component_mul(d3).component_mul(&zd.component_mul(zd)));
                        }
                    }
                }
                gz[0] = g0;
                gz
            }
        };
        // through the dense layer
        let (fi, fo, at) = (layer.fan_in, layer.fan_out, layer.offset);
        let wt = DMatrixView::from_slice(&params[at..at + fi * fo], fi, fo);
        let (gw, gb) = grad[at..at + fi * fo + fo].split_at_mut(fi * fo);
        let mut gw = DMatrixViewMut::from_slice(gw, fi, fo);
        for (a, z) in layer.input.iter().zip(&gz) {
            if let (Some(a), Some(z)) = (a, z) {
                gw.gemm_tr(1.0, a, z, 1.0);
            }
        }
        if let Some(z0) = &gz[0] {
            for (j, b) in gb.iter_mut().enumerate() {
                *b += z0.column(j).sum();
            }
        }
        if li == 0 {
            break;
        }
        g = gz
            .iter()
            .zip(&layer.input)
            .map(|(z, a)| match (z, a) {
                (Some(z), Some(_)) => Some(z * wt.transpose()),
                _ => None,
            })
            .collect();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jet_propagate, Graph};
    use crate::nets::{init_params, mlp_apply_jets, Activation, NetSpec};

    fn graph_route(spec: &MlpSpec, params: &[f64], dirs: &[DirSpec], pt: &[f64], adj: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let x = g.inputs(pt.len());
        let jets = jet_propagate(&mut g, &x, dirs, |g, xs| mlp_apply_jets(spec, g, 0, xs)).unwrap();
        g.bind_params(params).unwrap();
        g.bind_inputs(pt).unwrap();
        g.eval().unwrap();
        let n = dirs.len();
        let mut vals = Vec::new();
        let mut seeds = Vec::new();
        for (h, j) in jets.iter().enumerate() {
            let comps: Vec<_> = std::iter::once(Some(j.value)).chain(j.d1.iter().copied()).chain(j.d2.iter().copied()).collect();
            for (c, node) in comps.into_iter().enumerate() {
                vals.push(node.map_or(0.0, |id| g.value(id)));
                if let Some(id) = node {
                    seeds.push((id, adj[c][h]));
                }
            }
            assert_eq!(1 + 2 * n, vals.len() / (h + 1));
        }
        let mut grad = vec![0.0; params.len()];
        g.backward_into(&seeds, &mut grad, None).unwrap();
        (vals, grad)
    }

    #[test]
    fn matches_graph_jets_and_gradient() {
        let spec = MlpSpec::new(&[2, 5, 4, 3], Activation::Tanh);
        let params = init_params(&NetSpec::Mlp(spec.clone()), 9).unwrap().values;
        let dirs = [DirSpec::second(0), DirSpec::first(1)];
        let pts = DMatrix::from_row_slice(3, 2, &[0.1, 0.7, -0.4, 0.2, 0.9, -0.8]);
        let batch = mlp_jet_forward(&spec, &params, &dirs, &pts).unwrap();
        let nc = 5;
        let adj: Vec<DMatrix<f64>> =
            (0..nc).map(|c| DMatrix::from_fn(3, 3, |i, h| ((c * 7 + i * 3 + h) as f64 * 0.37).sin())).collect();
        let mut grad = vec![0.0; params.len()];
        mlp_jet_backward(&batch, &params, &adj, &mut grad).unwrap();
        let mut want = vec![0.0; params.len()];
        for i in 0..3 {
            let a: Vec<Vec<f64>> = (0..nc).map(|c| adj[c].row(i).iter().copied().collect()).collect();
            let (vals, g) = graph_route(&spec, &params, &dirs, &[pts[(i, 0)], pts[(i, 1)]], &a);
            for h in 0..3 {
                for c in 0..nc {
                    let got = batch.outputs[c][(i, h)];
                    assert!((got - vals[h * nc + c]).abs() < 1e-13, "comp {c}: {got} vs {}", vals[h * nc + c]);
                }
            }
            for (w, v) in want.iter_mut().zip(g) {
                *w += v;
            }
        }
        for (a, b) in grad.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_relu() {
        let spec = MlpSpec::new(&[1, 3, 1], Activation::Relu);
        let params = vec![0.0; spec.param_count()];
        let err = mlp_jet_forward(&spec, &params, &[DirSpec::second(0)], &DMatrix::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::Capability(_)));
    }
}
