//! Flat parameter layouts shared by every trainable or frozen model.
//!
//! All models keep their parameters in one `Vec<f64>`. A [`LayerShape`]
//! records where a dense layer's row-major weight matrix and bias live in it.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, MatrixView, ParamSet, ParamSlot, VecNode};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn weights<'p>(&self, params: &'p [f64]) -> &'p [f64] {
        &params[self.weight_offset..self.weight_offset + self.rows * self.cols]
    }

    pub fn bias<'p>(&self, params: &'p [f64]) -> &'p [f64] {
        &params[self.bias_offset..self.bias_offset + self.rows]
    }

    /// Records `W·x + b` on the graph. `set` selects whether the layer is trainable.
    pub fn apply<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a [f64],
        set: Option<ParamSet>,
        x: VecNode,
    ) -> Result<VecNode> {
        let w = MatrixView::new(self.rows, self.cols, self.weights(params))?;
        let slot = set.map(|set| ParamSlot {
            set,
            weight_offset: self.weight_offset,
            bias_offset: self.bias_offset,
        });
        g.affine(w, self.bias(params), x, slot)
    }
}

/// Hands out consecutive parameter ranges: each layer's weights, then its bias.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(len: usize) -> Self {
        Self { len }
    }

    pub fn dense(&mut self, rows: usize, cols: usize) -> LayerShape {
        let weight_offset = self.len;
        let bias_offset = weight_offset + rows * cols;
        self.len = bias_offset + rows;
        LayerShape {
            rows,
            cols,
            weight_offset,
            bias_offset,
        }
    }

    pub fn vector(&mut self, len: usize) -> usize {
        let at = self.len;
        self.len += len;
        at
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Fills every layer with i.i.d. uniform values on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
/// weights before bias, layers in the order given.
pub fn init_fan_in(params: &mut [f64], layers: &[LayerShape], rng: &mut Rng) {
    for layer in layers {
        let bound = 1.0 / (layer.cols.max(1) as f64).sqrt();
        for v in &mut params[layer.weight_offset..layer.bias_offset + layer.rows] {
            *v = rng.symmetric_uniform(bound);
        }
    }
}

/// One serialized dense layer: row-major weights and the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord<V> {
    pub rows: usize,
    pub cols: usize,
    pub weights: V,
    pub bias: V,
}
