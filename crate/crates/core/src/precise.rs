//! Double-double reference evaluation used by the gradient checker.
//!
//! Central differences of an `f64` loss lose about `1e-16 * |loss| / eps` to
//! rounding. Evaluating the loss here, with roughly 32 significant digits, and
//! reporting it relative to a baseline keeps that noise far below the checker's
//! tolerance even for parameters whose gradients are tiny.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::host::{NnpnnParams, ProcessingBlock, SubBlock};
use crate::layout::LayerShape;
use crate::networks::{Activation, Connectivity, DenseNetwork, MetaNetwork};

/// An unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).scale_pow2(-10);
        let mut term = Self::ONE;
        let mut sum = Self::ONE;
        for n in 1..=14 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    pub fn tanh(self) -> Self {
        if self.hi > 40.0 {
            return Self::ONE;
        }
        if self.hi < -40.0 {
            return -Self::ONE;
        }
        let e = (self + self).exp();
        (e - Self::ONE) / (e + Self::ONE)
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Dd { hi: q1, lo: q2 } + Dd::from(q3)
    }
}

pub fn lift(v: &[f64]) -> Vec<Dd> {
    v.iter().copied().map(Dd::from).collect()
}

pub fn affine(layer: &LayerShape, params: &[f64], x: &[Dd]) -> Vec<Dd> {
    let w = layer.weights(params);
    layer
        .bias(params)
        .iter()
        .enumerate()
        .map(|(r, &b)| {
            let row = &w[r * layer.cols..(r + 1) * layer.cols];
            row.iter()
                .zip(x)
                .fold(Dd::from(b), |acc, (&wi, &xi)| acc + Dd::from(wi) * xi)
        })
        .collect()
}

fn tanh_all(v: Vec<Dd>) -> Vec<Dd> {
    v.into_iter().map(Dd::tanh).collect()
}

pub fn dense(net: &DenseNetwork, x: &[Dd]) -> Vec<Dd> {
    let layers = net.layers();
    let mut h = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        h = affine(layer, net.params(), &h);
        if i + 1 < layers.len() && net.activation() == Activation::Tanh {
            h = tanh_all(h);
        }
    }
    h
}

pub fn sub_block(sb: &SubBlock, params: &[f64], x: &[Dd]) -> Vec<Dd> {
    let y1 = tanh_all(affine(&sb.d1, params, x));
    let y2 = tanh_all(affine(&sb.d2, params, &y1));
    let joined: Vec<Dd> = x.iter().chain(&y1).chain(&y2).copied().collect();
    let out = affine(&sb.d3, params, &joined);
    if sb.linear_output {
        out
    } else {
        tanh_all(out)
    }
}

pub fn block(pb: &ProcessingBlock, params: &[f64], x: &[Dd]) -> Vec<Dd> {
    sub_block(&pb.subs[1], params, &sub_block(&pb.subs[0], params, x))
}

/// Host output with the target network evaluated through `target`.
pub fn host(h: &NnpnnParams, x: Option<&[Dd]>, target: &dyn Fn(&[Dd]) -> Vec<Dd>) -> Vec<Dd> {
    let cfg = h.config();
    let p = h.params();
    let mut state = match x {
        Some(x) => x.to_vec(),
        None => lift(h.seed_vector()),
    };
    for phase in h.phases() {
        let emitted = block(phase, p, &state);
        let mut next = Vec::new();
        for q in emitted.chunks(cfg.query_dim) {
            next.extend(target(q));
            next.extend_from_slice(q);
        }
        if cfg.append_phase_input {
            next.extend(&state);
        }
        state = next;
    }
    block(h.output_block(), p, &state)
}

pub fn meta(net: &MetaNetwork, x: &[Dd], code: &[Dd]) -> Vec<Dd> {
    let layers = net.layers();
    let mut seen: Vec<Dd> = code.iter().chain(x).copied().collect();
    let mut prev = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let input = match net.config().connectivity {
            Connectivity::Dense => seen.clone(),
            Connectivity::Chain => code.iter().chain(&prev).copied().collect(),
        };
        let mut out = affine(layer, net.params(), &input);
        if i + 1 < layers.len() {
            out = tanh_all(out);
        }
        seen.extend(&out);
        prev = out;
    }
    prev
}

/// Sum of absolute errors.
pub fn mae(pred: &[Dd], target: &[f64]) -> Dd {
    pred.iter()
        .zip(target)
        .fold(Dd::ZERO, |acc, (&p, &t)| acc + (p - Dd::from(t)).abs())
}

/// Mean of squared errors.
pub fn mse(pred: &[Dd], target: &[f64]) -> Dd {
    let sum = pred.iter().zip(target).fold(Dd::ZERO, |acc, (&p, &t)| {
        let d = p - Dd::from(t);
        acc + d * d
    });
    sum / Dd::from(target.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_carries_low_words() {
        let third = Dd::ONE / Dd::from(3.0);
        let back = third * Dd::from(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-30);
        let tiny = Dd::from(1.0) + Dd::from(1e-20);
        assert_eq!(tiny.lo, 1e-20);
    }

    #[test]
    fn exp_and_tanh_agree_with_f64() {
        for x in [-30.0, -2.5, -0.3, 0.0, 1e-3, 0.7, 1.7, 5.0, 20.0] {
            let e = Dd::from(x).exp().to_f64();
            assert!((e - f64::exp(x)).abs() <= 4e-16 * f64::exp(x), "exp {x}");
            let t = Dd::from(x).tanh().to_f64();
            assert!((t - x.tanh()).abs() <= 2e-16, "tanh {x}");
        }
        // exp(1) to 30 digits: 2.71828182845904523536028747135
        let e = Dd::ONE.exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_1e-16).abs() < 1e-27);
    }

    #[test]
    fn tanh_difference_quotient_is_clean() {
        let x = Dd::from(0.7);
        let h = Dd::from(1e-5);
        let d = ((x + h).tanh() - (x - h).tanh()) / (h + h);
        let t = 0.7f64.tanh();
        let exact = 1.0 - t * t;
        // Truncation error of the central difference is h^2 |f'''| / 6.
        assert!((d.to_f64() - exact).abs() < 2e-11);
    }
}
