//! Randomized finite-difference checks of every differentiable path.
//!
//! Each suite draws small random models, builds a smooth scalar loss on the
//! graph, and compares [`Graph::backward`] against central differences of an
//! independent double-double evaluation of the same loss.

use std::fmt;

use crate::autodiff::{finite_diff_report, FiniteDiffReport, Graph};
use crate::error::Result;
use crate::host::{HostInput, NnpnnConfig, NnpnnParams, ProcessingBlock, SubBlock};
use crate::layout::{init_fan_in, LayerShape, LayoutBuilder};
use crate::networks::{generate_nn, Connectivity, MetaConfig, MetaNetwork, NetTemplate};
use crate::precise::{self, lift, Dd};
use crate::rng::Rng;
use crate::training::{compression_objective, inverse_objective, Draw};

pub const FD_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Multiplies the per-suite configuration counts.
    pub scale: usize,
    /// Negates every analytic gradient before comparison (fault injection).
    pub flip_sign: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1,
            flip_sign: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub configs: usize,
    pub max_rel_error: f64,
    /// Where the worst disagreement came from.
    pub worst: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<14} configs={:<4} max_rel_err={:.3e} {}",
            self.name,
            self.configs,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

struct Suite {
    name: &'static str,
    configs: usize,
    worst: f64,
    provenance: String,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            configs: 0,
            worst: 0.0,
            provenance: String::new(),
        }
    }

    fn record(&mut self, label: String, r: FiniteDiffReport) {
        self.configs += 1;
        if r.max_rel_error > self.worst || r.max_rel_error.is_nan() || self.provenance.is_empty() {
            self.worst = r.max_rel_error;
            self.provenance = format!(
                "{label} coord={} analytic={:.6e} numeric={:.6e}",
                r.worst_index, r.analytic, r.numeric
            );
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            configs: self.configs,
            max_rel_error: self.worst,
            worst: self.provenance,
        }
    }
}

fn gaussian(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.standard_normal()).collect()
}

/// Wraps a reference loss so it reports `loss(v) - loss(at)`. The offset is
/// constant, so derivatives are unchanged, and the subtraction happens before
/// rounding to `f64`.
fn relative<F>(at: &[f64], loss: F) -> impl Fn(&[f64]) -> f64
where
    F: Fn(&[f64]) -> Dd,
{
    let base = loss(at);
    move |v| (loss(v) - base).to_f64()
}

fn mean(losses: impl Iterator<Item = Dd>) -> Dd {
    let (sum, n) = losses.fold((Dd::ZERO, 0usize), |(s, n), l| (s + l, n + 1));
    sum / Dd::from(n as f64)
}

fn flip(mut g: Vec<f64>, on: bool) -> Vec<f64> {
    if on {
        g.iter_mut().for_each(|v| *v = -*v);
    }
    g
}

/// Gradient of `mse(G(x), t)` with respect to `x`.
fn dense_suite(rng: &mut Rng, n: usize, flip_sign: bool) -> Result<SuiteReport> {
    let mut suite = Suite::new("dense");
    for i in 0..n {
        let template = NetTemplate {
            input_dim: rng.int_inclusive(1, 3),
            output_dim: rng.int_inclusive(1, 3),
            hidden_width: rng.int_inclusive(2, 6),
            ..NetTemplate::default()
        };
        let net = generate_nn(rng, &template)?;
        let x0 = gaussian(rng, template.input_dim, 1.0);
        let target = gaussian(rng, template.output_dim, 1.0);
        let loss = relative(&x0, |x| precise::mse(&precise::dense(&net, &lift(x)), &target));
        let mut g = Graph::new();
        let set = g.register_params(x0.len());
        let xn = g.param(set, 0, &x0)?;
        let y = net.forward(&mut g, xn)?;
        let l = g.mse_loss(y, &target)?;
        let grad = flip(g.backward(l)?.get(set).to_vec(), flip_sign);
        let label = format!("dense#{i} spec={:?}", net.spec());
        suite.record(label, finite_diff_report(loss, &x0, &grad, FD_EPS));
    }
    Ok(suite.finish())
}

/// Gradient with respect to every block parameter and the block input.
fn block_suite(
    rng: &mut Rng,
    n: usize,
    flip_sign: bool,
    name: &'static str,
    build: BlockBuilder,
) -> Result<SuiteReport> {
    let mut suite = Suite::new(name);
    for i in 0..n {
        let input = rng.int_inclusive(1, 5);
        let widths = [
            rng.int_inclusive(1, 6),
            rng.int_inclusive(1, 6),
            rng.int_inclusive(1, 6),
        ];
        let out = rng.int_inclusive(1, 4);
        let mut b = LayoutBuilder::new();
        let (layers, kind) = build(&mut b, input, widths, out);
        let n_params = b.len();
        let mut params = vec![0.0; n_params];
        init_fan_in(&mut params, &layers, rng);
        let x0 = gaussian(rng, input, 1.0);
        let target = gaussian(rng, kind.output_dim(), 1.0);
        let mut joint = params.clone();
        joint.extend_from_slice(&x0);

        let loss = relative(&joint, |v| {
            let (p, x) = v.split_at(n_params);
            precise::mse(&kind.reference(p, &lift(x)), &target)
        });
        let mut g = Graph::new();
        let pset = g.register_params(n_params);
        let xset = g.register_params(input);
        let xn = g.param(xset, 0, &x0)?;
        let y = kind.forward(&mut g, &params, Some(pset), xn)?;
        let l = g.mse_loss(y, &target)?;
        let grads = g.backward(l)?;
        let mut grad = grads.get(pset).to_vec();
        grad.extend_from_slice(grads.get(xset));
        let grad = flip(grad, flip_sign);
        let label = format!("{name}#{i} in={input} widths={widths:?} out={out}");
        suite.record(label, finite_diff_report(loss, &joint, &grad, FD_EPS));
    }
    Ok(suite.finish())
}

type BlockBuilder = fn(&mut LayoutBuilder, usize, [usize; 3], usize) -> (Vec<LayerShape>, BlockKind);

#[derive(Clone, Copy)]
enum BlockKind {
    Sub(SubBlock),
    Block(ProcessingBlock),
}

impl BlockKind {
    fn output_dim(&self) -> usize {
        match self {
            BlockKind::Sub(s) => s.output_dim(),
            BlockKind::Block(b) => b.output_dim(),
        }
    }

    fn reference(&self, params: &[f64], x: &[Dd]) -> Vec<Dd> {
        match self {
            BlockKind::Sub(s) => precise::sub_block(s, params, x),
            BlockKind::Block(b) => precise::block(b, params, x),
        }
    }

    fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a [f64],
        set: Option<crate::autodiff::ParamSet>,
        x: crate::autodiff::VecNode,
    ) -> Result<crate::autodiff::VecNode> {
        match self {
            BlockKind::Sub(s) => s.forward(g, params, set, x),
            BlockKind::Block(b) => b.forward(g, params, set, x),
        }
    }
}

fn build_sub(b: &mut LayoutBuilder, input: usize, widths: [usize; 3], _out: usize) -> (Vec<LayerShape>, BlockKind) {
    let sb = SubBlock::build(b, input, widths, false);
    (sb.layers().to_vec(), BlockKind::Sub(sb))
}

fn build_block(b: &mut LayoutBuilder, input: usize, widths: [usize; 3], out: usize) -> (Vec<LayerShape>, BlockKind) {
    let pb = ProcessingBlock::build(b, input, widths[0], widths[1], out);
    (pb.layers().collect(), BlockKind::Block(pb))
}

fn random_host(
    rng: &mut Rng,
    phases: usize,
    queries: usize,
    template: &NetTemplate,
    input: HostInput,
    out: usize,
) -> Result<NnpnnParams> {
    let config = NnpnnConfig {
        input,
        phases,
        queries,
        width1: rng.int_inclusive(2, 5),
        width2: rng.int_inclusive(2, 5),
        query_dim: template.input_dim,
        read_dim: template.output_dim,
        output_dim: out,
        append_phase_input: rng.int_inclusive(0, 3) == 0,
    };
    let mut host = NnpnnParams::init(config, rng)?;
    // give the seed vector a nonzero value so its gradient is exercised
    if let HostInput::Seed { dim } = input {
        let seed = gaussian(rng, dim, 0.5);
        host.params_mut()[..dim].copy_from_slice(&seed);
    }
    Ok(host)
}

fn with_params(host: &NnpnnParams, p: &[f64]) -> NnpnnParams {
    let mut h = host.clone();
    h.params_mut().copy_from_slice(p);
    h
}

/// Whole-host gradient of `mse(F(x, G), t)` for one (l, r) pair.
fn host_suite(
    rng: &mut Rng,
    n: usize,
    flip_sign: bool,
    phases: usize,
    queries: usize,
    name: &'static str,
) -> Result<SuiteReport> {
    let mut suite = Suite::new(name);
    for i in 0..n {
        let template = NetTemplate {
            input_dim: rng.int_inclusive(1, 3),
            output_dim: rng.int_inclusive(1, 3),
            hidden_width: rng.int_inclusive(2, 5),
            ..NetTemplate::default()
        };
        let target_net = generate_nn(rng, &template)?;
        let in_dim = rng.int_inclusive(1, 3);
        let out = rng.int_inclusive(1, 3);
        let host = random_host(rng, phases, queries, &template, HostInput::Numeric { dim: in_dim }, out)?;
        let x0 = gaussian(rng, in_dim, 1.0);
        let target = gaussian(rng, out, 1.0);
        let read = |q: &[Dd]| precise::dense(&target_net, q);
        let loss = relative(host.params(), |p| {
            let y = precise::host(&with_params(&host, p), Some(&lift(&x0)), &read);
            precise::mse(&y, &target)
        });
        let mut g = Graph::new();
        let set = host.bind(&mut g);
        let xn = g.input(x0.clone())?;
        let (y, _) = host.forward(&mut g, Some(set), Some(xn), &target_net)?;
        let l = g.mse_loss(y, &target)?;
        let grad = flip(g.backward(l)?.get(set).to_vec(), flip_sign);
        let label = format!(
            "{name}#{i} params={} target={:?}",
            host.param_count(),
            target_net.spec()
        );
        suite.record(label, finite_diff_report(loss, host.params(), &grad, FD_EPS));
    }
    Ok(suite.finish())
}

/// Gradient with respect to decoder parameters, `x_meta` and `x`.
fn meta_suite(rng: &mut Rng, n: usize, flip_sign: bool) -> Result<SuiteReport> {
    let mut suite = Suite::new("meta");
    for i in 0..n {
        let hidden = (0..rng.int_inclusive(1, 3)).map(|_| rng.int_inclusive(1, 6)).collect();
        let config = MetaConfig {
            meta_dim: rng.int_inclusive(0, 4),
            input_dim: rng.int_inclusive(1, 3),
            output_dim: rng.int_inclusive(1, 3),
            hidden,
            connectivity: if rng.int_inclusive(0, 1) == 0 {
                Connectivity::Dense
            } else {
                Connectivity::Chain
            },
        };
        let net = MetaNetwork::init(config.clone(), rng)?;
        let np = net.param_count();
        let code = gaussian(rng, config.meta_dim, 1.0);
        let x0 = gaussian(rng, config.input_dim, 1.0);
        let target = gaussian(rng, config.output_dim, 1.0);
        let mut joint = net.params().to_vec();
        joint.extend_from_slice(&code);
        joint.extend_from_slice(&x0);
        let loss = relative(&joint, |v| {
            let mut m = net.clone();
            m.params_mut().copy_from_slice(&v[..np]);
            let y = precise::meta(
                &m,
                &lift(&v[np + config.meta_dim..]),
                &lift(&v[np..np + config.meta_dim]),
            );
            precise::mse(&y, &target)
        });
        let mut g = Graph::new();
        let pset = net.bind(&mut g);
        let cset = g.register_params(code.len());
        let xset = g.register_params(x0.len());
        let cn = g.param(cset, 0, &code)?;
        let xn = g.param(xset, 0, &x0)?;
        let y = net.forward(&mut g, Some(pset), xn, cn)?;
        let l = g.mse_loss(y, &target)?;
        let grads = g.backward(l)?;
        let mut grad = grads.get(pset).to_vec();
        grad.extend_from_slice(grads.get(cset));
        grad.extend_from_slice(grads.get(xset));
        let grad = flip(grad, flip_sign);
        let label = format!("meta#{i} config={config:?}");
        suite.record(label, finite_diff_report(loss, &joint, &grad, FD_EPS));
    }
    Ok(suite.finish())
}

fn small_template(rng: &mut Rng) -> NetTemplate {
    NetTemplate {
        hidden_width: rng.int_inclusive(2, 5),
        ..NetTemplate::default()
    }
}

/// Inputs at unit scale keep target networks out of deep saturation, where
/// central differences lose all precision.
fn unit_draw(rng: &mut Rng, template: &NetTemplate) -> Result<Draw> {
    let network = generate_nn(rng, template)?;
    let input = gaussian(rng, template.input_dim, 1.0);
    Ok(Draw { network, input })
}

/// The full inverse training loss (MAE through two reads of G).
fn inverse_suite(rng: &mut Rng, n: usize, flip_sign: bool) -> Result<SuiteReport> {
    let mut suite = Suite::new("inverse_loss");
    for i in 0..n {
        let template = small_template(rng);
        let phases = 1 + i % 2;
        let queries = if i % 4 < 2 { 1 } else { 4 };
        let host = random_host(rng, phases, queries, &template, HostInput::Numeric { dim: 2 }, 2)?;
        let draws = vec![unit_draw(rng, &template)?];
        let (_, grad) = inverse_objective(&host, &draws)?;
        let loss = relative(host.params(), |p| {
            let h = with_params(&host, p);
            mean(draws.iter().map(|d| {
                let read = |q: &[Dd]| precise::dense(&d.network, q);
                let target = d.network.eval(&d.input).expect("finite target");
                let preimage = precise::host(&h, Some(&lift(&target)), &read);
                precise::mae(&read(&preimage), &target)
            }))
        });
        let label = format!("inverse#{i} l={phases} r={queries} params={}", host.param_count());
        suite.record(
            label,
            finite_diff_report(loss, host.params(), &flip(grad, flip_sign), FD_EPS),
        );
    }
    Ok(suite.finish())
}

/// The joint compression loss with respect to encoder and decoder.
fn compression_suite(rng: &mut Rng, n: usize, flip_sign: bool) -> Result<SuiteReport> {
    let mut suite = Suite::new("compress_loss");
    for i in 0..n {
        let template = small_template(rng);
        let meta_dim = rng.int_inclusive(1, 4);
        let phases = 1 + i % 2;
        let queries = if i % 4 < 2 { 1 } else { 4 };
        let seed_dim = rng.int_inclusive(1, 3);
        let encoder = random_host(
            rng,
            phases,
            queries,
            &template,
            HostInput::Seed { dim: seed_dim },
            meta_dim,
        )?;
        let decoder = MetaNetwork::init(
            MetaConfig {
                meta_dim,
                input_dim: 2,
                output_dim: 2,
                hidden: vec![rng.int_inclusive(2, 5)],
                connectivity: Connectivity::Dense,
            },
            rng,
        )?;
        let draws = vec![unit_draw(rng, &template)?];
        let ne = encoder.param_count();
        let (_, ge, gd) = compression_objective(&encoder, &decoder, &draws)?;
        let mut joint = encoder.params().to_vec();
        joint.extend_from_slice(decoder.params());
        let mut grad = ge;
        grad.extend(gd);
        let loss = relative(&joint, |v| {
            let e = with_params(&encoder, &v[..ne]);
            let mut dec = decoder.clone();
            dec.params_mut().copy_from_slice(&v[ne..]);
            mean(draws.iter().map(|d| {
                let read = |q: &[Dd]| precise::dense(&d.network, q);
                let code = precise::host(&e, None, &read);
                let y = precise::meta(&dec, &lift(&d.input), &code);
                precise::mse(&y, &d.network.eval(&d.input).expect("finite target"))
            }))
        });
        let label = format!("compress#{i} l={phases} r={queries} meta_dim={meta_dim}");
        suite.record(label, finite_diff_report(loss, &joint, &flip(grad, flip_sign), FD_EPS));
    }
    Ok(suite.finish())
}

/// Runs every suite. With `scale = 1` this covers 124 random configurations.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<SuiteReport>> {
    let root = Rng::new(opts.seed);
    let s = opts.scale.max(1);
    let f = opts.flip_sign;
    let mut reports = Vec::new();
    reports.push(dense_suite(&mut root.derive(0), 20 * s, f)?);
    reports.push(block_suite(&mut root.derive(1), 16 * s, f, "sub_block", build_sub)?);
    reports.push(block_suite(&mut root.derive(2), 16 * s, f, "block", build_block)?);
    for (k, (l, r, name)) in [
        (1, 1, "host_l1_r1"),
        (1, 4, "host_l1_r4"),
        (2, 1, "host_l2_r1"),
        (2, 4, "host_l2_r4"),
    ]
    .into_iter()
    .enumerate()
    {
        reports.push(host_suite(&mut root.derive(3 + k as u64), 8 * s, f, l, r, name)?);
    }
    reports.push(meta_suite(&mut root.derive(7), 16 * s, f)?);
    reports.push(inverse_suite(&mut root.derive(8), 12 * s, f)?);
    reports.push(compression_suite(&mut root.derive(9), 12 * s, f)?);
    Ok(reports)
}
