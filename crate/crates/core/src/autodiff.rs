//! Reverse-mode automatic differentiation over dense real vectors.
//!
//! A [`Graph`] is an append-only record of vector operations. Each call
//! evaluates its operation immediately and caches the value; [`Graph::backward`]
//! then walks the record in reverse and accumulates adjoints. Nodes only ever
//! reference earlier nodes, so the record is acyclic by construction.
//!
//! Parameters are borrowed, not copied: an affine node holds slices of the
//! caller's weight storage for the lifetime `'a` of the graph. Parameters that
//! should receive gradients are addressed through a [`ParamSlot`] inside a
//! parameter set registered with [`Graph::register_params`]; affine maps
//! without a slot (the frozen target network) still pass adjoints to their
//! input but produce no parameter gradients.
//!
//! Every forward value is checked for finiteness as it is produced and every
//! adjoint as it is consumed. The first non-finite value aborts with the
//! offending node index and operation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a vector-valued node of a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VecNode {
    graph: u64,
    id: usize,
    dim: usize,
}

impl VecNode {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Identifies a registered parameter set within one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamSet(usize);

impl ParamSet {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Location of an affine map's weights and bias inside a registered parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub set: ParamSet,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Row-major matrix view.
#[derive(Clone, Copy, Debug)]
pub struct MatrixView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> MatrixView<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Structural(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }
}

enum Op<'a> {
    Input,
    Param {
        set: ParamSet,
        offset: usize,
    },
    Affine {
        weight: &'a [f64],
        input: usize,
        slot: Option<ParamSlot>,
    },
    Tanh {
        input: usize,
    },
    Concat {
        parts: Vec<usize>,
    },
    Slice {
        input: usize,
        start: usize,
    },
    Mae {
        pred: usize,
        target: Vec<f64>,
    },
    Mse {
        pred: usize,
        target: Vec<f64>,
    },
    Mean {
        parts: Vec<usize>,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param { .. } => "param",
            Op::Affine { .. } => "affine",
            Op::Tanh { .. } => "tanh",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Mae { .. } => "mae_loss",
            Op::Mse { .. } => "mse_loss",
            Op::Mean { .. } => "mean",
        }
    }
}

struct Node<'a> {
    op: Op<'a>,
    value: Vec<f64>,
}

pub struct Graph<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
    set_lens: Vec<usize>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            set_lens: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Declares a trainable parameter vector of `len` scalars. Gradients for it
    /// are returned by [`Graph::backward`] under the returned handle.
    pub fn register_params(&mut self, len: usize) -> ParamSet {
        self.set_lens.push(len);
        ParamSet(self.set_lens.len() - 1)
    }

    pub fn value(&self, node: VecNode) -> &[f64] {
        assert_eq!(node.graph, self.id, "node belongs to another graph");
        &self.nodes[node.id].value
    }

    fn check(&self, node: VecNode) -> Result<()> {
        if node.graph != self.id {
            return Err(Error::Structural(format!(
                "node {} belongs to a different graph",
                node.id
            )));
        }
        Ok(())
    }

    fn push(&mut self, op: Op<'a>, value: Vec<f64>) -> Result<VecNode> {
        let id = self.nodes.len();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "forward",
                node: id,
                op: op.name(),
            });
        }
        let dim = value.len();
        self.nodes.push(Node { op, value });
        Ok(VecNode {
            graph: self.id,
            id,
            dim,
        })
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Vec<f64>) -> Result<VecNode> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input value".into()));
        }
        self.push(Op::Input, value)
    }

    /// A leaf whose value is `values`, differentiated as entries
    /// `offset..offset + values.len()` of parameter set `set`.
    pub fn param(&mut self, set: ParamSet, offset: usize, values: &[f64]) -> Result<VecNode> {
        self.check_slot_range(set, offset, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite parameter value".into()));
        }
        self.push(Op::Param { set, offset }, values.to_vec())
    }

    fn check_slot_range(&self, set: ParamSet, offset: usize, len: usize) -> Result<()> {
        let total = *self
            .set_lens
            .get(set.0)
            .ok_or_else(|| Error::Structural(format!("unregistered parameter set {}", set.0)))?;
        if offset + len > total {
            return Err(Error::Structural(format!(
                "parameter range {offset}..{} exceeds set {} of length {total}",
                offset + len,
                set.0
            )));
        }
        Ok(())
    }

    /// `W·x + b`. With a slot, `W` and `b` receive gradients.
    pub fn affine(
        &mut self,
        weight: MatrixView<'a>,
        bias: &[f64],
        x: VecNode,
        slot: Option<ParamSlot>,
    ) -> Result<VecNode> {
        self.check(x)?;
        if weight.cols != x.dim || weight.rows != bias.len() {
            return Err(Error::Structural(format!(
                "affine: weight {}x{}, bias {}, input {}",
                weight.rows,
                weight.cols,
                bias.len(),
                x.dim
            )));
        }
        if let Some(slot) = slot {
            self.check_slot_range(slot.set, slot.weight_offset, weight.data.len())?;
            self.check_slot_range(slot.set, slot.bias_offset, bias.len())?;
        }
        let xv = &self.nodes[x.id].value;
        let mut out = bias.to_vec();
        for (o, row) in out.iter_mut().zip(weight.data.chunks_exact(weight.cols.max(1))) {
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(xv) {
                acc += w * xi;
            }
            *o += acc;
        }
        if out.iter().any(|v| !v.is_finite())
            && (weight.data.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data("affine: non-finite weight or bias".into()));
        }
        self.push(
            Op::Affine {
                weight: weight.data,
                input: x.id,
                slot,
            },
            out,
        )
    }

    pub fn tanh(&mut self, x: VecNode) -> Result<VecNode> {
        self.check(x)?;
        let out = self.nodes[x.id].value.iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh { input: x.id }, out)
    }

    pub fn concat(&mut self, parts: &[VecNode]) -> Result<VecNode> {
        if parts.is_empty() {
            return Err(Error::Structural("concat of zero parts".into()));
        }
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.dim).sum());
        for p in parts {
            self.check(*p)?;
            out.extend_from_slice(&self.nodes[p.id].value);
        }
        self.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            out,
        )
    }

    /// Coordinates `start..start + len` of `x`.
    pub fn slice(&mut self, x: VecNode, start: usize, len: usize) -> Result<VecNode> {
        self.check(x)?;
        if start + len > x.dim {
            return Err(Error::Structural(format!(
                "slice {start}..{} of a {}-vector",
                start + len,
                x.dim
            )));
        }
        let out = self.nodes[x.id].value[start..start + len].to_vec();
        self.push(Op::Slice { input: x.id, start }, out)
    }

    fn loss_target(&self, pred: VecNode, target: &[f64], what: &str) -> Result<()> {
        self.check(pred)?;
        if pred.dim != target.len() {
            return Err(Error::Structural(format!(
                "{what}: prediction has {} components, target {}",
                pred.dim,
                target.len()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what}: non-finite target")));
        }
        Ok(())
    }

    /// Sum over components of `|pred - target|`.
    pub fn mae_loss(&mut self, pred: VecNode, target: &[f64]) -> Result<VecNode> {
        self.loss_target(pred, target, "mae_loss")?;
        let p = &self.nodes[pred.id].value;
        let v: f64 = p.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
        self.push(
            Op::Mae {
                pred: pred.id,
                target: target.to_vec(),
            },
            vec![v],
        )
    }

    /// Mean over components of `(pred - target)^2`.
    pub fn mse_loss(&mut self, pred: VecNode, target: &[f64]) -> Result<VecNode> {
        self.loss_target(pred, target, "mse_loss")?;
        let p = &self.nodes[pred.id].value;
        let n = p.len().max(1) as f64;
        let v: f64 = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(
            Op::Mse {
                pred: pred.id,
                target: target.to_vec(),
            },
            vec![v],
        )
    }

    /// Average of scalar nodes.
    pub fn mean(&mut self, scalars: &[VecNode]) -> Result<VecNode> {
        if scalars.is_empty() {
            return Err(Error::Structural("mean of zero scalars".into()));
        }
        let mut acc = 0.0;
        for s in scalars {
            self.check(*s)?;
            if s.dim != 1 {
                return Err(Error::Structural(format!("mean: node {} is not scalar", s.id)));
            }
            acc += self.nodes[s.id].value[0];
        }
        self.push(
            Op::Mean {
                parts: scalars.iter().map(|s| s.id).collect(),
            },
            vec![acc / scalars.len() as f64],
        )
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: VecNode) -> Result<GradientMap> {
        self.check(loss)?;
        if loss.dim != 1 {
            return Err(Error::Structural(format!(
                "backward from a {}-dimensional node",
                loss.dim
            )));
        }
        let mut grads: Vec<Vec<f64>> = self.set_lens.iter().map(|&n| vec![0.0; n]).collect();
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.id + 1];
        adj[loss.id] = vec![1.0];

        for id in (0..=loss.id).rev() {
            if adj[id].is_empty() {
                continue;
            }
            let a = std::mem::take(&mut adj[id]);
            let node = &self.nodes[id];
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "adjoint",
                    node: id,
                    op: node.op.name(),
                });
            }
            match &node.op {
                Op::Input => {}
                Op::Param { set, offset } => {
                    for (g, ai) in grads[set.0][*offset..].iter_mut().zip(&a) {
                        *g += ai;
                    }
                }
                Op::Affine { weight, input, slot } => {
                    let x = &self.nodes[*input].value;
                    let cols = x.len();
                    if let Some(slot) = slot {
                        let g = &mut grads[slot.set.0];
                        for (i, ai) in a.iter().enumerate() {
                            let row = &mut g[slot.weight_offset + i * cols..][..cols];
                            for (gw, xj) in row.iter_mut().zip(x) {
                                *gw += ai * xj;
                            }
                            g[slot.bias_offset + i] += ai;
                        }
                    }
                    let dx = accum(&mut adj[*input], cols);
                    for (ai, row) in a.iter().zip(weight.chunks_exact(cols.max(1))) {
                        for (d, w) in dx.iter_mut().zip(row) {
                            *d += ai * w;
                        }
                    }
                }
                Op::Tanh { input } => {
                    let y = &node.value;
                    let dx = accum(&mut adj[*input], y.len());
                    for ((d, ai), yi) in dx.iter_mut().zip(&a).zip(y) {
                        *d += ai * (1.0 - yi * yi);
                    }
                }
                Op::Concat { parts } => {
                    let mut at = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        let dx = accum(&mut adj[p], n);
                        for (d, ai) in dx.iter_mut().zip(&a[at..at + n]) {
                            *d += ai;
                        }
                        at += n;
                    }
                }
                Op::Slice { input, start } => {
                    let n = self.nodes[*input].value.len();
                    let dx = accum(&mut adj[*input], n);
                    for (d, ai) in dx[*start..].iter_mut().zip(&a) {
                        *d += ai;
                    }
                }
                Op::Mae { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let dx = accum(&mut adj[*pred], p.len());
                    for ((d, pi), ti) in dx.iter_mut().zip(p).zip(target) {
                        let diff = pi - ti;
                        // subgradient 0 at the kink
                        let s = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *d += a[0] * s;
                    }
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let scale = 2.0 * a[0] / p.len().max(1) as f64;
                    let dx = accum(&mut adj[*pred], p.len());
                    for ((d, pi), ti) in dx.iter_mut().zip(p).zip(target) {
                        *d += scale * (pi - ti);
                    }
                }
                Op::Mean { parts } => {
                    let share = a[0] / parts.len() as f64;
                    for &p in parts {
                        accum(&mut adj[p], 1)[0] += share;
                    }
                }
            }
        }

        for (set, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite gradient at entry {i} of parameter set {set}"
                )));
            }
        }
        Ok(GradientMap { sets: grads })
    }
}

fn accum(slot: &mut Vec<f64>, n: usize) -> &mut [f64] {
    if slot.is_empty() {
        slot.resize(n, 0.0);
    }
    slot.as_mut_slice()
}

/// Parameter gradients produced by [`Graph::backward`], one flat vector per
/// registered [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    sets: Vec<Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, set: ParamSet) -> &[f64] {
        &self.sets[set.0]
    }

    pub fn into_sets(self) -> Vec<Vec<f64>> {
        self.sets
    }
}

/// Largest relative disagreement between `analytic` and the central
/// difference `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps`, over all
/// coordinates. The denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_report(f, x, analytic, eps).max_rel_error
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Coordinate at which the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn finite_diff_report<F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> FiniteDiffReport
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut probe = x.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || rel.is_nan() {
            report = FiniteDiffReport {
                max_rel_error: rel,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}
