#![allow(dead_code)]

use nnpnn::host::{NnpnnParams, SubBlock};
use nnpnn::layout::LayerShape;
use nnpnn::networks::{Activation, Connectivity, DenseNetwork, MetaNetwork};

pub fn affine(layer: &LayerShape, params: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), layer.cols);
    let mut out = Vec::with_capacity(layer.rows);
    for r in 0..layer.rows {
        let mut acc = params[layer.bias_offset + r];
        for c in 0..layer.cols {
            acc += params[layer.weight_offset + r * layer.cols + c] * x[c];
        }
        out.push(acc);
    }
    out
}

pub fn tanh(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

pub fn dense(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut h = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        h = affine(layer, net.params(), &h);
        if i + 1 < layers.len() && net.activation() == Activation::Tanh {
            h = tanh(h);
        }
    }
    h
}

pub fn sub_block(sb: &SubBlock, params: &[f64], x: &[f64]) -> Vec<f64> {
    let y1 = tanh(affine(&sb.d1, params, x));
    let y2 = tanh(affine(&sb.d2, params, &y1));
    let mut joined = x.to_vec();
    joined.extend(&y1);
    joined.extend(&y2);
    let out = affine(&sb.d3, params, &joined);
    if sb.linear_output {
        out
    } else {
        tanh(out)
    }
}

/// Host forward pass with `G` supplied as a plain function.
pub fn host(params: &NnpnnParams, x: Option<&[f64]>, g: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let cfg = params.config();
    let p = params.params();
    let mut h = match x {
        Some(x) => x.to_vec(),
        None => params.seed_vector().to_vec(),
    };
    for block in params.phases() {
        let emitted = sub_block(&block.subs[1], p, &sub_block(&block.subs[0], p, &h));
        let mut next = Vec::new();
        for n in 0..cfg.queries {
            let q = &emitted[n * cfg.query_dim..(n + 1) * cfg.query_dim];
            next.extend(g(q));
            next.extend(q);
        }
        if cfg.append_phase_input {
            next.extend(&h);
        }
        h = next;
    }
    let out = params.output_block();
    sub_block(&out.subs[1], p, &sub_block(&out.subs[0], p, &h))
}

pub fn meta(net: &MetaNetwork, x: &[f64], x_meta: &[f64]) -> Vec<f64> {
    let cfg = net.config();
    let layers = net.layers();
    let mut seen: Vec<f64> = x_meta.iter().chain(x).copied().collect();
    let mut prev = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let input = match cfg.connectivity {
            Connectivity::Dense => seen.clone(),
            Connectivity::Chain => x_meta.iter().chain(&prev).copied().collect(),
        };
        let mut h = affine(layer, net.params(), &input);
        if i + 1 < layers.len() {
            h = tanh(h);
        }
        seen.extend(&h);
        prev = h;
    }
    prev
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
