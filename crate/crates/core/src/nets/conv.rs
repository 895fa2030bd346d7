use super::{mlp_apply, ConvStackSpec};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Convolution stack followed by its terminal MLP.
///
/// Input is a single-channel `height x width` grid in row-major order.
/// Each stage is a stride-1 convolution with zero padding, the activation,
/// then a max-pool. Features are flattened channel-major before the MLP.
pub fn convstack_apply(spec: &ConvStackSpec, g: &mut Graph, offset: usize, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
    spec.validate()?;
    if inputs.len() != spec.input_len() {
        return Err(Error::Dimension(format!(
            "conv stack expects a {}x{} grid ({} values), got {}",
            spec.height,
            spec.width,
            spec.input_len(),
            inputs.len()
        )));
    }
    let act = spec.activation.unary();
    let k = spec.kernel;
    let pad = spec.padding as isize;
    let (mut h, mut w, mut cin) = (spec.height, spec.width, 1usize);
    let mut maps: Vec<NodeId> = inputs.to_vec();
    let mut at = offset;
    for &cout in &spec.channels {
        let oh = h + 2 * spec.padding - k + 1;
        let ow = w + 2 * spec.padding - k + 1;
        let w_off = at;
        let b_off = at + cout * cin * k * k;
        at = b_off + cout;
        let zero = g.zero();
        let mut conv = Vec::with_capacity(cout * oh * ow);
        let mut patch = Vec::with_capacity(cin * k * k);
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    patch.clear();
                    for ci in 0..cin {
                        for di in 0..k {
                            for dj in 0..k {
                                let r = i as isize + di as isize - pad;
                                let c = j as isize + dj as isize - pad;
                                let inside = r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w;
                                patch.push(if inside {
                                    maps[ci * h * w + r as usize * w + c as usize]
                                } else {
                                    zero
                                });
                            }
                        }
                    }
                    let z = g.dot(w_off + co * cin * k * k, Some(b_off + co), &patch);
                    conv.push(match act {
                        Some(f) => g.unary(f, 0, z),
                        None => z,
                    });
                }
            }
        }
        let ph = (oh - spec.pool) / spec.pool_stride + 1;
        let pw = (ow - spec.pool) / spec.pool_stride + 1;
        let mut pooled = Vec::with_capacity(cout * ph * pw);
        let mut window = Vec::with_capacity(spec.pool * spec.pool);
        for c in 0..cout {
            for i in 0..ph {
                for j in 0..pw {
                    window.clear();
                    for di in 0..spec.pool {
                        for dj in 0..spec.pool {
                            let r = i * spec.pool_stride + di;
                            let s = j * spec.pool_stride + dj;
                            window.push(conv[c * oh * ow + r * ow + s]);
                        }
                    }
                    pooled.push(g.max(&window));
                }
            }
        }
        maps = pooled;
        h = ph;
        w = pw;
        cin = cout;
    }
    mlp_apply(&spec.terminal_mlp()?, g, at, &maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, Activation, NetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> ConvStackSpec {
        ConvStackSpec {
            height: 6,
            width: 6,
            channels: vec![2, 3],
            kernel: 3,
            padding: 1,
            pool: 2,
            pool_stride: 2,
            mlp_widths: vec![4, 3],
            activation: Activation::Gelu,
        }
    }

    fn gelu(z: f64) -> f64 {
        0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
    }

    /// Straightforward nested-loop convolution over explicit arrays.
    fn naive(spec: &ConvStackSpec, p: &[f64], x: &[f64]) -> Vec<f64> {
        let k = spec.kernel;
        let (mut h, mut w, mut cin) = (spec.height, spec.width, 1);
        let mut maps = x.to_vec();
        let mut at = 0;
        for &cout in &spec.channels {
            let wt = &p[at..at + cout * cin * k * k];
            let b = &p[at + cout * cin * k * k..at + cout * cin * k * k + cout];
            at += cout * cin * k * k + cout;
            let mut conv = vec![0.0; cout * h * w];
            for co in 0..cout {
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for di in 0..k {
                                for dj in 0..k {
                                    let (r, c) = (i + di, j + dj);
                                    if r >= 1 && c >= 1 && r - 1 < h && c - 1 < w {
                                        acc += wt[((co * cin + ci) * k + di) * k + dj] * maps[ci * h * w + (r - 1) * w + c - 1];
                                    }
                                }
                            }
                        }
                        conv[co * h * w + i * w + j] = gelu(acc);
                    }
                }
            }
            let (ph, pw) = ((h - spec.pool) / spec.pool_stride + 1, (w - spec.pool) / spec.pool_stride + 1);
            let mut pooled = vec![f64::NEG_INFINITY; cout * ph * pw];
            for c in 0..cout {
                for i in 0..ph {
                    for j in 0..pw {
                        for di in 0..spec.pool {
                            for dj in 0..spec.pool {
                                let v = conv[c * h * w + (i * spec.pool_stride + di) * w + j * spec.pool_stride + dj];
                                let slot = &mut pooled[c * ph * pw + i * pw + j];
                                *slot = slot.max(v);
                            }
                        }
                    }
                }
            }
            maps = pooled;
            h = ph;
            w = pw;
            cin = cout;
        }
        let mut x = maps;
        let widths: Vec<usize> = std::iter::once(x.len()).chain(spec.mlp_widths.iter().copied()).collect();
        for (l, win) in widths.windows(2).enumerate() {
            let (fi, fo) = (win[0], win[1]);
            let mut y = vec![0.0; fo];
            for r in 0..fo {
                let mut acc = p[at + fi * fo + r];
                for c in 0..fi {
                    acc += p[at + r * fi + c] * x[c];
                }
                y[r] = if l + 2 < widths.len() { gelu(acc) } else { acc };
            }
            at += fi * fo + fo;
            x = y;
        }
        x
    }

    #[test]
    fn matches_naive_convolution() {
        let spec = small_spec();
        let store = init_params(&NetSpec::Conv(spec.clone()), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = store.values.clone();
        for v in params.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let x: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let inp = g.inputs(36);
        let out = convstack_apply(&spec, &mut g, 0, &inp).unwrap();
        g.bind_params(&params).unwrap();
        g.bind_inputs(&x).unwrap();
        g.eval().unwrap();
        let expected = naive(&spec, &params, &x);
        for (a, b) in g.values_of(&out).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_give_final_bias() {
        let spec = small_spec();
        let n = crate::nets::param_count(&NetSpec::Conv(spec.clone())).unwrap();
        let mut params = vec![0.0; n];
        params[n - 3..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let mut g = Graph::new();
        let inp = g.inputs(36);
        let out = convstack_apply(&spec, &mut g, 0, &inp).unwrap();
        g.bind_params(&params).unwrap();
        g.bind_inputs(&[1.0; 36]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.values_of(&out), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn wrong_grid_size() {
        let mut g = Graph::new();
        let inp = g.inputs(35);
        assert!(matches!(convstack_apply(&small_spec(), &mut g, 0, &inp), Err(Error::Dimension(_))));
    }
}
