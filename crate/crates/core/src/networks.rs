//! Target networks, input sampling and the meta-parameterized network.
//!
//! A [`DenseNetwork`] is the network handed to a host model: tanh hidden
//! layers, a linear output layer, weights frozen after generation. A
//! [`MetaNetwork`] takes an ordinary input `x` plus a code `x_meta` and feeds
//! the code into every layer, so one set of weights can stand in for many
//! functions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, VecNode};
use crate::error::{Error, Result};
use crate::hexfloat::HexVec;
use crate::layout::{init_fan_in, LayerRecord, LayerShape, LayoutBuilder};
use crate::rng::Rng;

pub const MAX_HIDDEN_LAYERS: usize = 5;

/// Standard deviation of [`random_input`] (variance 100).
pub const INPUT_STD: f64 = 10.0;

/// Anything a host model may query. Implementors expose only their
/// input-output map; the host never sees their parameters.
pub trait TargetNetwork {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn read<'a>(&'a self, g: &mut Graph<'a>, x: VecNode) -> Result<VecNode>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl NetSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config(format!("network dimensions must be >= 1: {self:?}")));
        }
        if !(1..=MAX_HIDDEN_LAYERS).contains(&self.hidden_layers) {
            return Err(Error::Config(format!(
                "hidden_layers must be in 1..={MAX_HIDDEN_LAYERS}, got {}",
                self.hidden_layers
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (i, o, w, h) = (self.input_dim, self.output_dim, self.hidden_width, self.hidden_layers);
        (i * w + w) + (h - 1) * (w * w + w) + (w * o + o)
    }

    fn layout(&self) -> Vec<LayerShape> {
        let mut b = LayoutBuilder::new();
        let mut fan_in = self.input_dim;
        let mut layers = Vec::with_capacity(self.hidden_layers + 1);
        for _ in 0..self.hidden_layers {
            layers.push(b.dense(self.hidden_width, fan_in));
            fan_in = self.hidden_width;
        }
        layers.push(b.dense(self.output_dim, fan_in));
        layers
    }
}

/// The range of networks [`generate_nn`] draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetTemplate {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub min_hidden_layers: usize,
    pub max_hidden_layers: usize,
}

impl Default for NetTemplate {
    fn default() -> Self {
        Self {
            input_dim: 2,
            output_dim: 2,
            hidden_width: 5,
            min_hidden_layers: 1,
            max_hidden_layers: MAX_HIDDEN_LAYERS,
        }
    }
}

impl NetTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.min_hidden_layers > self.max_hidden_layers {
            return Err(Error::Config(format!(
                "min_hidden_layers {} exceeds max_hidden_layers {}",
                self.min_hidden_layers, self.max_hidden_layers
            )));
        }
        self.spec(self.min_hidden_layers)?;
        self.spec(self.max_hidden_layers)?;
        Ok(())
    }

    pub fn spec(&self, hidden_layers: usize) -> Result<NetSpec> {
        NetSpec::new(self.input_dim, self.output_dim, hidden_layers, self.hidden_width)
    }

    /// Fewest parameters any generated network can have.
    pub fn min_param_count(&self) -> usize {
        NetSpec {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            hidden_layers: self.min_hidden_layers,
            hidden_width: self.hidden_width,
        }
        .param_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDescriptor {
    /// i.i.d. uniform on `[low, high]`, weights then bias, layer by layer.
    Uniform { low: f64, high: f64 },
    /// Parameters supplied explicitly.
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    spec: NetSpec,
    activation: Activation,
    params: Vec<f64>,
    layers: Vec<LayerShape>,
    init: InitDescriptor,
    seed: Option<u64>,
}

impl DenseNetwork {
    /// Weights and biases i.i.d. uniform on `[-1, 1]` from a generator seeded with `seed`.
    pub fn from_seed(spec: NetSpec, activation: Activation, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layout();
        let mut rng = Rng::new(seed);
        let params = (0..spec.param_count()).map(|_| rng.symmetric_uniform(1.0)).collect();
        Ok(Self {
            spec,
            activation,
            params,
            layers,
            init: InitDescriptor::Uniform { low: -1.0, high: 1.0 },
            seed: Some(seed),
        })
    }

    /// Flat parameters in layer order, each layer's row-major weights followed by its bias.
    pub fn from_params(spec: NetSpec, activation: Activation, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Structural(format!(
                "{} parameters supplied, network needs {}",
                params.len(),
                spec.param_count()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite network parameter".into()));
        }
        Ok(Self {
            layers: spec.layout(),
            spec,
            activation,
            params,
            init: InitDescriptor::Explicit,
            seed: None,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Layered evaluation on `g`. Differentiable with respect to `x`; the
    /// network's own parameters are never registered.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: VecNode) -> Result<VecNode> {
        if x.dim() != self.spec.input_dim {
            return Err(Error::Structural(format!(
                "network expects a {}-vector, got {}",
                self.spec.input_dim,
                x.dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, &self.params, None, h)?;
            if i < last && self.activation == Activation::Tanh {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Evaluates on a throwaway graph.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let xn = g.input(x.to_vec())?;
        let y = self.forward(&mut g, xn)?;
        Ok(g.value(y).to_vec())
    }

    pub fn to_record(&self) -> DenseRecord {
        DenseRecord {
            spec: self.spec,
            activation: self.activation,
            layers: layer_records(&self.layers, &self.params),
            init: self.init.clone(),
            seed: self.seed,
        }
    }

    pub fn from_record(record: &DenseRecord) -> Result<Self> {
        record.spec.validate()?;
        let layers = record.spec.layout();
        let params = params_from_records(&layers, &record.layers)?;
        let mut net = Self::from_params(record.spec, record.activation, params)?;
        net.init = record.init.clone();
        net.seed = record.seed;
        Ok(net)
    }
}

impl TargetNetwork for DenseNetwork {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn read<'a>(&'a self, g: &mut Graph<'a>, x: VecNode) -> Result<VecNode> {
        self.forward(g, x)
    }
}

/// Serialized form of a [`DenseNetwork`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseRecord {
    pub spec: NetSpec,
    pub activation: Activation,
    pub layers: Vec<LayerRecord<HexVec>>,
    pub init: InitDescriptor,
    pub seed: Option<u64>,
}

pub(crate) fn layer_records(layers: &[LayerShape], params: &[f64]) -> Vec<LayerRecord<HexVec>> {
    layers
        .iter()
        .map(|l| LayerRecord {
            rows: l.rows,
            cols: l.cols,
            weights: HexVec(l.weights(params).to_vec()),
            bias: HexVec(l.bias(params).to_vec()),
        })
        .collect()
}

/// Copies serialized layers into a flat vector laid out as `layers`.
/// Any disagreement in count or shape is a checkpoint error.
pub(crate) fn params_from_records(layers: &[LayerShape], records: &[LayerRecord<HexVec>]) -> Result<Vec<f64>> {
    if layers.len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: expected {} layers, found {}",
            layers.len(),
            records.len()
        )));
    }
    let total = layers.iter().map(|l| l.bias_offset + l.rows).max().unwrap_or(0);
    let mut params = vec![0.0; total];
    fill_from_records(&mut params, layers, records)?;
    Ok(params)
}

pub(crate) fn fill_from_records(
    params: &mut [f64],
    layers: &[LayerShape],
    records: &[LayerRecord<HexVec>],
) -> Result<()> {
    if layers.len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: expected {} layers, found {}",
            layers.len(),
            records.len()
        )));
    }
    for (i, (l, r)) in layers.iter().zip(records).enumerate() {
        if l.rows != r.rows || l.cols != r.cols || r.weights.0.len() != l.rows * l.cols || r.bias.0.len() != l.rows {
            return Err(Error::Checkpoint(format!(
                "shape mismatch in layer {i}: expected {}x{}, found {}x{} with {} weights and {} biases",
                l.rows,
                l.cols,
                r.rows,
                r.cols,
                r.weights.0.len(),
                r.bias.0.len()
            )));
        }
        params[l.weight_offset..l.weight_offset + l.rows * l.cols].copy_from_slice(&r.weights.0);
        params[l.bias_offset..l.bias_offset + l.rows].copy_from_slice(&r.bias.0);
    }
    Ok(())
}

/// Draws a target network: hidden-layer count uniform over the template's
/// range, then a fresh 64-bit seed from which every weight is derived.
pub fn generate_nn(rng: &mut Rng, template: &NetTemplate) -> Result<DenseNetwork> {
    template.validate()?;
    let hidden = rng.int_inclusive(template.min_hidden_layers, template.max_hidden_layers);
    let seed = rng.next_u64();
    DenseNetwork::from_seed(template.spec(hidden)?, Activation::Tanh, seed)
}

/// i.i.d. normal samples with mean 0 and standard deviation 10.
pub fn random_input(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| INPUT_STD * rng.standard_normal()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Each layer sees `x_meta`, `x` and the outputs of every earlier layer.
    #[default]
    Dense,
    /// Each layer sees `x_meta` and the previous layer's output (`x` for the first).
    Chain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub meta_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub connectivity: Connectivity,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("meta network widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<LayerShape> {
        let mut b = LayoutBuilder::new();
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        let mut dense_in = self.meta_dim + self.input_dim;
        let mut chain_in = self.input_dim;
        let widths = self.hidden.iter().copied().chain(std::iter::once(self.output_dim));
        for width in widths {
            let fan_in = match self.connectivity {
                Connectivity::Dense => dense_in,
                Connectivity::Chain => self.meta_dim + chain_in,
            };
            layers.push(b.dense(width, fan_in));
            dense_in += width;
            chain_in = width;
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerShape::param_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaNetwork {
    config: MetaConfig,
    params: Vec<f64>,
    layers: Vec<LayerShape>,
}

impl MetaNetwork {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(config: MetaConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        init_fan_in(&mut net.params, &net.layers, rng);
        Ok(net)
    }

    pub fn zeros(config: MetaConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layout();
        let params = vec![0.0; layers.iter().map(LayerShape::param_count).sum()];
        Ok(Self { config, params, layers })
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> ParamSet {
        g.register_params(self.params.len())
    }

    /// Evaluates `F2(x, x_meta)` with parameters in `set`.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        set: Option<ParamSet>,
        x: VecNode,
        x_meta: VecNode,
    ) -> Result<VecNode> {
        if x.dim() != self.config.input_dim || x_meta.dim() != self.config.meta_dim {
            return Err(Error::Structural(format!(
                "meta network expects x:{} and x_meta:{}, got {} and {}",
                self.config.input_dim,
                self.config.meta_dim,
                x.dim(),
                x_meta.dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut seen = vec![x_meta, x];
        let mut prev = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = match self.config.connectivity {
                Connectivity::Dense => g.concat(&seen)?,
                Connectivity::Chain => g.concat(&[x_meta, prev])?,
            };
            let mut h = layer.apply(g, &self.params, set, input)?;
            if i < last {
                h = g.tanh(h)?;
            }
            seen.push(h);
            prev = h;
        }
        Ok(prev)
    }

    pub fn to_record(&self) -> MetaRecord {
        MetaRecord {
            config: self.config.clone(),
            layers: layer_records(&self.layers, &self.params),
        }
    }

    pub fn from_record(record: &MetaRecord) -> Result<Self> {
        let mut net = Self::zeros(record.config.clone())?;
        fill_from_records(&mut net.params, &net.layers, &record.layers)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaRecord {
    pub config: MetaConfig,
    pub layers: Vec<LayerRecord<HexVec>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    fn template() -> NetTemplate {
        NetTemplate::default()
    }

    #[test]
    fn param_counts() {
        assert_eq!(template().spec(1).unwrap().param_count(), 27);
        assert_eq!(template().spec(5).unwrap().param_count(), 147);
        assert_eq!(template().min_param_count(), 27);
        assert!(NetSpec::new(2, 2, 0, 5).is_err());
        assert!(NetSpec::new(2, 2, 6, 5).is_err());
        assert!(NetSpec::new(0, 2, 1, 5).is_err());
    }

    #[test]
    fn generated_network_matches_count_formula() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let net = generate_nn(&mut rng, &template()).unwrap();
            assert_eq!(net.param_count(), net.spec().param_count());
            assert_eq!(net.layers().len(), net.spec().hidden_layers + 1);
            assert!(net.params().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn hidden_layer_histogram_covers_one_to_five() {
        let mut rng = Rng::new(11);
        let mut counts = [0usize; 6];
        for _ in 0..10_000 {
            counts[generate_nn(&mut rng, &template()).unwrap().spec().hidden_layers] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!(counts[1..].iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_nn(&mut Rng::new(8), &template()).unwrap();
        let b = generate_nn(&mut Rng::new(8), &template()).unwrap();
        assert_eq!(a, b);
        let rebuilt = DenseNetwork::from_seed(*a.spec(), Activation::Tanh, a.seed().unwrap()).unwrap();
        assert_eq!(a.params(), rebuilt.params());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = NetSpec::new(2, 3, 2, 5).unwrap();
        let net = DenseNetwork::from_params(spec, Activation::Tanh, vec![0.0; spec.param_count()]).unwrap();
        assert_eq!(net.eval(&[4.0, -7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn one_unit_network() {
        let spec = NetSpec::new(1, 1, 1, 1).unwrap();
        let net = DenseNetwork::from_params(spec, Activation::Tanh, vec![2.0, 0.0, 1.0, 0.0]).unwrap();
        let y = net.eval(&[1.0]).unwrap();
        assert!((y[0] - 0.96402758).abs() < 1e-8);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = generate_nn(&mut Rng::new(1), &template()).unwrap();
        assert!(matches!(net.eval(&[1.0]), Err(Error::Structural(_))));
        assert!(matches!(
            DenseNetwork::from_params(*net.spec(), Activation::Tanh, vec![0.0; 3]),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = generate_nn(&mut Rng::new(21), &template()).unwrap();
        let x0 = [0.4, -0.3];
        let loss = |x: &[f64]| net.eval(x).unwrap().iter().map(|v| v * v).sum::<f64>() / 2.0;
        let mut g = Graph::new();
        let set = g.register_params(2);
        let x = g.param(set, 0, &x0).unwrap();
        let y = net.forward(&mut g, x).unwrap();
        let l = g.mse_loss(y, &[0.0, 0.0]).unwrap();
        let grad = g.backward(l).unwrap().get(set).to_vec();
        assert!(finite_diff_check(loss, &x0, &grad, 1e-5) < 1e-4);
    }

    #[test]
    fn random_input_basics() {
        assert!(random_input(&mut Rng::new(0), 0).is_empty());
        assert_eq!(random_input(&mut Rng::new(4), 2), random_input(&mut Rng::new(4), 2));
    }

    #[test]
    fn dense_record_round_trip() {
        let net = generate_nn(&mut Rng::new(2), &template()).unwrap();
        let json = serde_json::to_string(&net.to_record()).unwrap();
        let back = DenseNetwork::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(net, back);
        let scalars: usize = net
            .to_record()
            .layers
            .iter()
            .map(|l| l.weights.0.len() + l.bias.0.len())
            .sum();
        assert_eq!(scalars, net.param_count());
    }

    fn meta_config(connectivity: Connectivity) -> MetaConfig {
        MetaConfig {
            meta_dim: 3,
            input_dim: 2,
            output_dim: 2,
            hidden: vec![4, 5],
            connectivity,
        }
    }

    #[test]
    fn meta_layout_dimensions() {
        let dense = MetaNetwork::zeros(meta_config(Connectivity::Dense)).unwrap();
        let cols: Vec<usize> = dense.layers().iter().map(|l| l.cols).collect();
        assert_eq!(cols, vec![5, 9, 14]);
        let chain = MetaNetwork::zeros(meta_config(Connectivity::Chain)).unwrap();
        let cols: Vec<usize> = chain.layers().iter().map(|l| l.cols).collect();
        assert_eq!(cols, vec![5, 7, 8]);
    }

    fn meta_eval(net: &MetaNetwork, x: &[f64], meta: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let xn = g.input(x.to_vec()).unwrap();
        let mn = g.input(meta.to_vec()).unwrap();
        let y = net.forward(&mut g, None, xn, mn).unwrap();
        g.value(y).to_vec()
    }

    #[test]
    fn meta_zero_network_outputs_zero() {
        let net = MetaNetwork::zeros(meta_config(Connectivity::Dense)).unwrap();
        assert_eq!(meta_eval(&net, &[3.0, 1.0], &[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn meta_output_depends_on_code() {
        let net = MetaNetwork::init(meta_config(Connectivity::Dense), &mut Rng::new(5)).unwrap();
        let a = meta_eval(&net, &[0.5, -0.5], &[0.1, 0.2, 0.3]);
        let b = meta_eval(&net, &[0.5, -0.5], &[-0.4, 0.9, 0.0]);
        assert_ne!(a, b);
    }

    #[test]
    fn meta_dimension_mismatch() {
        let net = MetaNetwork::zeros(meta_config(Connectivity::Dense)).unwrap();
        let mut g = Graph::new();
        let x = g.input(vec![1.0, 2.0]).unwrap();
        let m = g.input(vec![1.0]).unwrap();
        assert!(matches!(net.forward(&mut g, None, x, m), Err(Error::Structural(_))));
    }

    #[test]
    fn meta_record_round_trip_and_shape_check() {
        let net = MetaNetwork::init(meta_config(Connectivity::Chain), &mut Rng::new(6)).unwrap();
        let mut record = net.to_record();
        assert_eq!(MetaNetwork::from_record(&record).unwrap(), net);
        record.config.hidden = vec![4, 6];
        assert!(matches!(MetaNetwork::from_record(&record), Err(Error::Checkpoint(_))));
    }
}
