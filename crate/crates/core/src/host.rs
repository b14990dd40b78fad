//! The host network: a model that takes a [`TargetNetwork`] as an argument.
//!
//! The host runs `l` phases. Each phase feeds its input through a
//! [`ProcessingBlock`] that emits `r` query vectors `x_1..x_r`, reads
//! `y_n = G(x_n)` for each, and hands `(y_1, x_1, ..., y_r, x_r)` to the next
//! phase. A final processing block maps the last phase's reads to the output.
//! Every read goes through the autodiff graph, so the host is trained end to
//! end through `G`'s input-output map without touching `G`'s weights.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, VecNode};
use crate::error::{Error, Result};
use crate::hexfloat::HexVec;
use crate::layout::{init_fan_in, LayerRecord, LayerShape, LayoutBuilder};
use crate::networks::{fill_from_records, layer_records, TargetNetwork};
use crate::rng::Rng;

/// Three dense layers. `d1` and `d2` are chained; `d3` sees the sub-block
/// input together with both intermediate outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubBlock {
    pub d1: LayerShape,
    pub d2: LayerShape,
    pub d3: LayerShape,
    /// Skip the tanh after `d3`.
    pub linear_output: bool,
}

impl SubBlock {
    pub fn build(b: &mut LayoutBuilder, input: usize, widths: [usize; 3], linear_output: bool) -> Self {
        let [w1, w2, w3] = widths;
        let d1 = b.dense(w1, input);
        let d2 = b.dense(w2, w1);
        let d3 = b.dense(w3, input + w1 + w2);
        Self {
            d1,
            d2,
            d3,
            linear_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d1.cols
    }

    pub fn output_dim(&self) -> usize {
        self.d3.rows
    }

    pub fn layers(&self) -> [LayerShape; 3] {
        [self.d1, self.d2, self.d3]
    }

    /// `y1 = tanh(d1 x)`, `y2 = tanh(d2 y1)`, `out = tanh(d3 [x, y1, y2])`.
    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a [f64],
        set: Option<ParamSet>,
        x: VecNode,
    ) -> Result<VecNode> {
        if x.dim() != self.input_dim() {
            return Err(Error::Structural(format!(
                "sub-block expects a {}-vector, got {}",
                self.input_dim(),
                x.dim()
            )));
        }
        let a1 = self.d1.apply(g, params, set, x)?;
        let y1 = g.tanh(a1)?;
        let a2 = self.d2.apply(g, params, set, y1)?;
        let y2 = g.tanh(a2)?;
        let joined = g.concat(&[x, y1, y2])?;
        let out = self.d3.apply(g, params, set, joined)?;
        if self.linear_output {
            Ok(out)
        } else {
            g.tanh(out)
        }
    }
}

/// Two chained sub-blocks. The second one ends in a linear layer so the block
/// can emit queries and outputs of any magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProcessingBlock {
    pub subs: [SubBlock; 2],
}

impl ProcessingBlock {
    pub fn build(b: &mut LayoutBuilder, input: usize, width1: usize, width2: usize, output: usize) -> Self {
        let first = SubBlock::build(b, input, [width1, width2, width2], false);
        let second = SubBlock::build(b, width2, [width1, width2, output], true);
        Self { subs: [first, second] }
    }

    pub fn input_dim(&self) -> usize {
        self.subs[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.subs[1].output_dim()
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        self.subs.iter().flat_map(|s| s.layers())
    }

    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a [f64],
        set: Option<ParamSet>,
        x: VecNode,
    ) -> Result<VecNode> {
        let h = self.subs[0].forward(g, params, set, x)?;
        self.subs[1].forward(g, params, set, h)
    }
}

/// What the first phase consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HostInput {
    /// A numeric argument of this dimension is supplied on every call.
    Numeric { dim: usize },
    /// No numeric argument; a trainable vector of this dimension stands in.
    Seed { dim: usize },
}

impl HostInput {
    pub fn dim(&self) -> usize {
        match *self {
            HostInput::Numeric { dim } | HostInput::Seed { dim } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnpnnConfig {
    pub input: HostInput,
    /// Number of phases, `l`.
    pub phases: usize,
    /// Queries per phase, `r`.
    pub queries: usize,
    pub width1: usize,
    pub width2: usize,
    /// Input dimension of the target network.
    pub query_dim: usize,
    /// Output dimension of the target network.
    pub read_dim: usize,
    pub output_dim: usize,
    /// Append each phase's input to the (read, query) pairs it passes on.
    #[serde(default)]
    pub append_phase_input: bool,
}

impl NnpnnConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phases", self.phases),
            ("queries", self.queries),
            ("width1", self.width1),
            ("width2", self.width2),
            ("query_dim", self.query_dim),
            ("read_dim", self.read_dim),
            ("output_dim", self.output_dim),
            ("input dim", self.input.dim()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("host {name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Width of the concatenated (read, query) pairs produced by one phase.
    pub fn pair_dim(&self) -> usize {
        self.queries * (self.read_dim + self.query_dim)
    }

    fn phase_input_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.phases + 1);
        let mut h = self.input.dim();
        for _ in 0..=self.phases {
            dims.push(h);
            h = self.pair_dim() + if self.append_phase_input { h } else { 0 };
        }
        dims
    }
}

/// Queries and reads from one host evaluation, phase-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryTrace {
    pub queries: Vec<Vec<f64>>,
    pub reads: Vec<Vec<f64>>,
    /// The vector each phase passes on, `h_1..h_l`.
    pub phase_outputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnpnnParams {
    config: NnpnnConfig,
    params: Vec<f64>,
    seed_offset: usize,
    phases: Vec<ProcessingBlock>,
    output_block: ProcessingBlock,
}

impl NnpnnParams {
    /// All-zero parameters with the layout implied by `config`.
    pub fn zeros(config: NnpnnConfig) -> Result<Self> {
        config.validate()?;
        let mut b = LayoutBuilder::new();
        let seed_offset = b.vector(match config.input {
            HostInput::Seed { dim } => dim,
            HostInput::Numeric { .. } => 0,
        });
        let dims = config.phase_input_dims();
        let emit = config.queries * config.query_dim;
        let phases = dims[..config.phases]
            .iter()
            .map(|&input| ProcessingBlock::build(&mut b, input, config.width1, config.width2, emit))
            .collect();
        let output_block = ProcessingBlock::build(
            &mut b,
            dims[config.phases],
            config.width1,
            config.width2,
            config.output_dim,
        );
        Ok(Self {
            params: vec![0.0; b.len()],
            config,
            seed_offset,
            phases,
            output_block,
        })
    }

    /// Dense layers uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; seed vector zero.
    pub fn init(config: NnpnnConfig, rng: &mut Rng) -> Result<Self> {
        let mut host = Self::zeros(config)?;
        let layers: Vec<LayerShape> = host.layers().collect();
        init_fan_in(&mut host.params, &layers, rng);
        Ok(host)
    }

    pub fn config(&self) -> &NnpnnConfig {
        &self.config
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

    pub fn phases(&self) -> &[ProcessingBlock] {
        &self.phases
    }

    pub fn output_block(&self) -> &ProcessingBlock {
        &self.output_block
    }

    pub fn seed_vector(&self) -> &[f64] {
        &self.params[self.seed_offset..self.seed_offset + self.seed_len()]
    }

    fn seed_len(&self) -> usize {
        match self.config.input {
            HostInput::Seed { dim } => dim,
            HostInput::Numeric { .. } => 0,
        }
    }

    fn blocks(&self) -> impl Iterator<Item = &ProcessingBlock> {
        self.phases.iter().chain(std::iter::once(&self.output_block))
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerShape> + '_ {
        self.blocks().flat_map(|b| b.layers())
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> ParamSet {
        g.register_params(self.params.len())
    }

    /// Runs every phase against `target` and returns the output node with a
    /// trace of all queries and reads. `x` must be given exactly when the
    /// host takes a numeric input.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        set: Option<ParamSet>,
        x: Option<VecNode>,
        target: &'a dyn TargetNetwork,
    ) -> Result<(VecNode, QueryTrace)> {
        let cfg = &self.config;
        if target.input_dim() != cfg.query_dim || target.output_dim() != cfg.read_dim {
            return Err(Error::Structural(format!(
                "host queries {}->{} networks, target is {}->{}",
                cfg.query_dim,
                cfg.read_dim,
                target.input_dim(),
                target.output_dim()
            )));
        }
        let mut h = match (cfg.input, x) {
            (HostInput::Numeric { dim }, Some(x)) if x.dim() == dim => x,
            (HostInput::Seed { .. }, None) => match set {
                Some(set) => g.param(set, self.seed_offset, self.seed_vector())?,
                None => g.input(self.seed_vector().to_vec())?,
            },
            (input, x) => {
                return Err(Error::Structural(format!(
                    "host input {input:?} given argument of dim {:?}",
                    x.map(|x| x.dim())
                )))
            }
        };

        let mut trace = QueryTrace::default();
        let qd = cfg.query_dim;
        for block in &self.phases {
            let emitted = block.forward(g, &self.params, set, h)?;
            let mut pairs = Vec::with_capacity(2 * cfg.queries + 1);
            for n in 0..cfg.queries {
                let query = g.slice(emitted, n * qd, qd)?;
                let read = target.read(g, query)?;
                trace.queries.push(g.value(query).to_vec());
                trace.reads.push(g.value(read).to_vec());
                pairs.push(read);
                pairs.push(query);
            }
            if cfg.append_phase_input {
                pairs.push(h);
            }
            h = g.concat(&pairs)?;
            trace.phase_outputs.push(g.value(h).to_vec());
        }
        let out = self.output_block.forward(g, &self.params, set, h)?;
        Ok((out, trace))
    }

    pub fn to_record(&self) -> NnpnnRecord {
        let mut blocks: Vec<BlockRecord> = self
            .phases
            .iter()
            .enumerate()
            .map(|(i, b)| BlockRecord {
                name: format!("phase{}", i + 1),
                layers: layer_records(&b.layers().collect::<Vec<_>>(), &self.params),
            })
            .collect();
        blocks.push(BlockRecord {
            name: "output".into(),
            layers: layer_records(&self.output_block.layers().collect::<Vec<_>>(), &self.params),
        });
        NnpnnRecord {
            config: self.config.clone(),
            seed_vector: HexVec(self.seed_vector().to_vec()),
            blocks,
        }
    }

    pub fn from_record(record: &NnpnnRecord) -> Result<Self> {
        let mut host = Self::zeros(record.config.clone())?;
        let expected = host.phases.len() + 1;
        if record.blocks.len() != expected {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: expected {expected} blocks, found {}",
                record.blocks.len()
            )));
        }
        if record.seed_vector.0.len() != host.seed_len() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch: seed vector has {} entries, expected {}",
                record.seed_vector.0.len(),
                host.seed_len()
            )));
        }
        let at = host.seed_offset;
        host.params[at..at + record.seed_vector.0.len()].copy_from_slice(&record.seed_vector.0);
        let blocks: Vec<ProcessingBlock> = host.blocks().copied().collect();
        for (block, rec) in blocks.iter().zip(&record.blocks) {
            let layers: Vec<LayerShape> = block.layers().collect();
            fill_from_records(&mut host.params, &layers, &rec.layers)?;
        }
        if host.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite host parameter".into()));
        }
        Ok(host)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub name: String,
    pub layers: Vec<LayerRecord<HexVec>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnpnnRecord {
    pub config: NnpnnConfig,
    pub seed_vector: HexVec,
    pub blocks: Vec<BlockRecord>,
}
