//! Network specifications, flat parameter storage and initialisation.

mod conv;
mod mlp;
mod mlp_batch;

pub use conv::convstack_apply;
pub use mlp::{mlp_apply, mlp_apply_jets};
pub use mlp_batch::{mlp_jet_backward, mlp_jet_forward, JetBatch};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, UnaryFn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Gelu,
    Identity,
}

impl Activation {
    pub fn unary(self) -> Option<UnaryFn> {
        match self {
            Activation::Tanh => Some(UnaryFn::Tanh),
            Activation::Relu => Some(UnaryFn::Relu),
            Activation::Gelu => Some(UnaryFn::Gelu),
            Activation::Identity => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Validation(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    /// One activation per hidden layer (`widths.len() - 2` entries).
    pub hidden: Vec<Activation>,
    pub output: OutputActivation,
}

impl MlpSpec {
    /// Same activation on every hidden layer, identity output.
    pub fn new(widths: &[usize], activation: Activation) -> Self {
        MlpSpec {
            widths: widths.to_vec(),
            hidden: vec![activation; widths.len().saturating_sub(2)],
            output: OutputActivation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Validation("an MLP needs at least input and output widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Validation(format!("MLP widths must be positive: {:?}", self.widths)));
        }
        if self.hidden.len() != self.widths.len() - 2 {
            return Err(Error::Validation(format!(
                "{} hidden activations for {} hidden layers",
                self.hidden.len(),
                self.widths.len() - 2
            )));
        }
        Ok(())
    }

    /// Usable under second-order jets (no ReLU anywhere).
    pub fn is_jet_capable(&self) -> bool {
        !self.hidden.contains(&Activation::Relu)
    }

    pub fn input_len(&self) -> usize {
        self.widths[0]
    }

    pub fn output_len(&self) -> usize {
        *self.widths.last().expect("validated MLP")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub height: usize,
    pub width: usize,
    /// Output channels of each convolution (single input channel).
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    pub pool_stride: usize,
    /// Terminal MLP widths after the flattened features (last entry is the
    /// network output width).
    pub mlp_widths: Vec<usize>,
    pub activation: Activation,
}

impl ConvStackSpec {
    /// 16/32/64 channels, 3x3 kernels with padding 1, 3x3 max-pool with
    /// stride 2, one hidden layer of 128 units and GeLU throughout.
    pub fn standard(height: usize, width: usize, out: usize) -> Self {
        ConvStackSpec {
            height,
            width,
            channels: vec![16, 32, 64],
            kernel: 3,
            padding: 1,
            pool: 3,
            pool_stride: 2,
            mlp_widths: vec![128, out],
            activation: Activation::Gelu,
        }
    }

    /// Spatial size after each conv + pool stage.
    pub fn stage_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.channels.len());
        for (i, _) in self.channels.iter().enumerate() {
            let ch = (h + 2 * self.padding).checked_sub(self.kernel).map(|v| v + 1);
            let cw = (w + 2 * self.padding).checked_sub(self.kernel).map(|v| v + 1);
            let (Some(ch), Some(cw)) = (ch, cw) else {
                return Err(Error::Validation(format!("conv stage {i}: kernel larger than padded input")));
            };
            if ch < self.pool || cw < self.pool {
                return Err(Error::Validation(format!(
                    "conv stage {i}: {ch}x{cw} feature map smaller than {}x{} pool",
                    self.pool, self.pool
                )));
            }
            h = (ch - self.pool) / self.pool_stride + 1;
            w = (cw - self.pool) / self.pool_stride + 1;
            out.push((h, w));
        }
        Ok(out)
    }

    pub fn flat_features(&self) -> Result<usize> {
        let shapes = self.stage_shapes()?;
        let (h, w) = shapes.last().copied().unwrap_or((self.height, self.width));
        Ok(h * w * self.channels.last().copied().unwrap_or(1))
    }

    pub fn terminal_mlp(&self) -> Result<MlpSpec> {
        let mut widths = vec![self.flat_features()?];
        widths.extend_from_slice(&self.mlp_widths);
        Ok(MlpSpec::new(&widths, self.activation))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.kernel == 0 || self.pool == 0 || self.pool_stride == 0 {
            return Err(Error::Validation("conv stack sizes must be positive".into()));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Validation(format!("invalid channel list {:?}", self.channels)));
        }
        if self.mlp_widths.is_empty() {
            return Err(Error::Validation("conv stack needs a terminal MLP".into()));
        }
        self.terminal_mlp()?.validate()
    }

    fn conv_params(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut cin = 1;
        self.channels.iter().map(move |&cout| {
            let r = (cin, cout);
            cin = cout;
            r
        })
    }

    pub fn param_count(&self) -> Result<usize> {
        let k2 = self.kernel * self.kernel;
        let conv: usize = self.conv_params().map(|(ci, co)| co * ci * k2 + co).sum();
        Ok(conv + self.terminal_mlp()?.param_count())
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        *self.mlp_widths.last().expect("validated conv stack")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetSpec {
    Mlp(MlpSpec),
    Conv(ConvStackSpec),
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetSpec::Mlp(s) => s.validate(),
            NetSpec::Conv(s) => s.validate(),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            NetSpec::Mlp(s) => s.input_len(),
            NetSpec::Conv(s) => s.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            NetSpec::Mlp(s) => s.output_len(),
            NetSpec::Conv(s) => s.output_len(),
        }
    }

    pub fn apply(&self, g: &mut Graph, offset: usize, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        match self {
            NetSpec::Mlp(s) => mlp_apply(s, g, offset, inputs),
            NetSpec::Conv(s) => convstack_apply(s, g, offset, inputs),
        }
    }

    /// `(name, fan_in, fan_out, len)` per parameter block, weights before
    /// biases, in storage order.
    fn blocks(&self) -> Result<Vec<Block>> {
        let mut out = Vec::new();
        let mlp = match self {
            NetSpec::Mlp(s) => s.clone(),
            NetSpec::Conv(s) => {
                let k2 = s.kernel * s.kernel;
                for (i, (ci, co)) in s.conv_params().enumerate() {
                    out.push(Block::weight(format!("conv{i}.weight"), ci * k2, co * k2, co * ci * k2));
                    out.push(Block::bias(format!("conv{i}.bias"), co));
                }
                s.terminal_mlp()?
            }
        };
        for (i, (fi, fo)) in mlp.layers().enumerate() {
            out.push(Block::weight(format!("layer{i}.weight"), fi, fo, fi * fo));
            out.push(Block::bias(format!("layer{i}.bias"), fo));
        }
        Ok(out)
    }
}

struct Block {
    name: String,
    fans: Option<(usize, usize)>,
    len: usize,
}

impl Block {
    fn weight(name: String, fan_in: usize, fan_out: usize, len: usize) -> Self {
        Block { name, fans: Some((fan_in, fan_out)), len }
    }

    fn bias(name: String, len: usize) -> Self {
        Block { name, fans: None, len }
    }
}

/// Exact number of trainable parameters.
pub fn param_count(spec: &NetSpec) -> Result<usize> {
    spec.validate()?;
    match spec {
        NetSpec::Mlp(s) => Ok(s.param_count()),
        NetSpec::Conv(s) => s.param_count(),
    }
}

/// Upper bound of the Glorot-uniform distribution.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter vector with named, contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
    pub seed: u64,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Append `other` after the existing slots, prefixing its segment names.
    pub fn append(&mut self, prefix: &str, other: ParamStore) -> usize {
        let base = self.values.len();
        self.values.extend(other.values);
        self.segments.extend(other.segments.into_iter().map(|s| Segment {
            name: format!("{prefix}.{}", s.name),
            offset: s.offset + base,
            len: s.len,
        }));
        base
    }

    pub fn segment_of(&self, slot: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| slot >= s.offset && slot < s.offset + s.len)
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| &self.values[s.offset..s.offset + s.len])
    }
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut segments = Vec::new();
    for block in spec.blocks()? {
        let offset = values.len();
        match block.fans {
            Some((fi, fo)) => {
                let a = glorot_bound(fi, fo);
                values.extend((0..block.len).map(|_| rng.gen_range(-a..=a)));
            }
            None => values.extend(std::iter::repeat_n(0.0, block.len)),
        }
        segments.push(Segment { name: block.name, offset, len: block.len });
    }
    Ok(ParamStore { values, segments, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_counts() {
        let branch = NetSpec::Mlp(MlpSpec::new(&[60, 32, 32, 32], Activation::Relu));
        assert_eq!(param_count(&branch).unwrap(), 4064);
        let tiny = NetSpec::Mlp(MlpSpec::new(&[1, 1], Activation::Tanh));
        assert_eq!(param_count(&tiny).unwrap(), 2);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetSpec::Mlp(MlpSpec::new(&[3, 5, 2], Activation::Tanh));
        let a = init_params(&spec, 11).unwrap();
        let b = init_params(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, init_params(&spec, 12).unwrap().values);
        for s in a.segments.iter().filter(|s| s.name.ends_with("bias")) {
            assert!(a.values[s.offset..s.offset + s.len].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn glorot_bound_holds_over_many_seeds() {
        let spec = NetSpec::Mlp(MlpSpec::new(&[4, 7, 3], Activation::Tanh));
        let b0 = glorot_bound(4, 7);
        let b1 = glorot_bound(7, 3);
        let mut max0: f64 = 0.0;
        let mut max1: f64 = 0.0;
        for seed in 0..1000 {
            let st = init_params(&spec, seed).unwrap();
            max0 = st.segment("layer0.weight").unwrap().iter().fold(max0, |m, v| m.max(v.abs()));
            max1 = st.segment("layer1.weight").unwrap().iter().fold(max1, |m, v| m.max(v.abs()));
        }
        assert!(max0 <= b0 && max0 > 0.95 * b0);
        assert!(max1 <= b1 && max1 > 0.95 * b1);
    }

    #[test]
    fn standard_conv_shapes() {
        let spec = ConvStackSpec::standard(40, 40, 128);
        assert_eq!(spec.stage_shapes().unwrap(), vec![(19, 19), (9, 9), (4, 4)]);
        assert_eq!(spec.flat_features().unwrap(), 1024);
        let darcy = ConvStackSpec::standard(30, 30, 128);
        assert_eq!(darcy.stage_shapes().unwrap(), vec![(14, 14), (6, 6), (2, 2)]);
    }

    #[test]
    fn pool_too_large_is_rejected() {
        let mut spec = ConvStackSpec::standard(6, 6, 4);
        spec.channels = vec![2, 2, 2, 2];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn invalid_mlp_specs() {
        assert!(MlpSpec::new(&[3], Activation::Tanh).validate().is_err());
        assert!(MlpSpec::new(&[3, 0, 1], Activation::Tanh).validate().is_err());
        assert!(!MlpSpec::new(&[2, 4, 1], Activation::Relu).is_jet_capable());
    }

    proptest! {
        #[test]
        fn count_matches_store_length(widths in prop::collection::vec(1usize..9, 2..5), seed in any::<u64>()) {
            let spec = NetSpec::Mlp(MlpSpec::new(&widths, Activation::Gelu));
            let store = init_params(&spec, seed).unwrap();
            prop_assert_eq!(store.len(), param_count(&spec).unwrap());
            let covered: usize = store.segments.iter().map(|s| s.len).sum();
            prop_assert_eq!(covered, store.len());
        }

        #[test]
        fn conv_count_matches_store_length(h in 6usize..12, c0 in 1usize..4, c1 in 1usize..4, out in 1usize..5) {
            let spec = NetSpec::Conv(ConvStackSpec {
                height: h, width: h, channels: vec![c0, c1], kernel: 3, padding: 1,
                pool: 2, pool_stride: 2, mlp_widths: vec![5, out], activation: Activation::Gelu,
            });
            let store = init_params(&spec, 3).unwrap();
            prop_assert_eq!(store.len(), param_count(&spec).unwrap());
        }
    }
}
