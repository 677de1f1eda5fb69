//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every op works on row-major 2-D tensors `[rows, cols]`; scalars are
//! `[1, 1]`. A [`Tape`] records one forward episode. Leaves created with
//! [`Tape::param`] are tracked, leaves created with [`Tape::constant`] are
//! not, and an op is tracked when any input is.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Smallest likelihood a discretized Gaussian may assign, `2^-16`.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 65536.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::arg(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Elu(Var),
    Softplus(Var),
    Sqrt(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    SumSq(Var),
    Quantize(Var),
    Clamp(Var, f64, f64),
    Combine(Var, Var),
    GaussBits(Var, Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Phi(u) - Phi(l)` for `u > l`, evaluated on the tail that keeps
/// precision.
fn normal_interval(l: f64, u: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if l > 0.0 {
        0.5 * (erfc(l / s) - erfc(u / s))
    } else if u < 0.0 {
        0.5 * (erfc(-u / s) - erfc(-l / s))
    } else {
        1.0 - 0.5 * erfc(-l / s) - 0.5 * erfc(u / s)
    }
}

/// Probability a discretized `N(mu, sigma^2)` assigns to the integer bin
/// around `y`, before flooring.
pub fn discretized_gaussian(y: f64, mu: f64, sigma: f64) -> f64 {
    normal_interval((y - 0.5 - mu) / sigma, (y + 0.5 - mu) / sigma)
}

/// Code length in bits of `y` under the floored discretized Gaussian.
pub fn gaussian_bits(y: f64, mu: f64, sigma: f64) -> f64 {
    -discretized_gaussian(y, mu, sigma).max(LIKELIHOOD_FLOOR).log2()
}

/// Rounds to the nearest integer, halves away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// A tracked leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn t(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = &self.nodes[a.0].value;
        let value = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        let tracked = self.t(a);
        self.push(value, op, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, w) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, m) = (x.rows(), x.cols(), w.cols());
        if w.rows() != k {
            return Err(mismatch(x, w));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = x.data[i * k + p];
                if a != 0.0 {
                    for (o, &bv) in row.iter_mut().zip(&w.data[p * m..(p + 1) * m]) {
                        *o += a * bv;
                    }
                }
            }
        }
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMul(a, b), tracked))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the
    /// rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = if x.shape == y.shape {
            x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect()
        } else if y.rows() == 1 && y.cols() == x.cols() {
            let m = x.cols();
            x.data
                .iter()
                .enumerate()
                .map(|(i, p)| p + y.data[i % m])
                .collect()
        } else {
            return Err(mismatch(x, y));
        };
        let shape = x.shape.clone();
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape != y.shape {
            return Err(mismatch(x, y));
        }
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect();
        let shape = x.shape.clone();
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape != y.shape {
            return Err(mismatch(x, y));
        }
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let shape = x.shape.clone();
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |v| c * v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + c)
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let n = self.nodes[first.0].value.rows();
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != n {
                return Err(mismatch(&self.nodes[first.0].value, v));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let m: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.t(p));
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::Concat(parts.to_vec()), tracked))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        let (n, m) = (x.rows(), x.cols());
        if len == 0 || start + len > m {
            return Err(Error::arg(format!(
                "column slice {start}..{} out of range for width {m}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&x.data[i * m + start..i * m + start + len]);
        }
        let tracked = self.t(a);
        Ok(self.push(Tensor { shape: vec![n, len], data }, Op::Slice(a, start), tracked))
    }

    /// Splits columns into consecutive parts of the given widths.
    pub fn split(&mut self, a: Var, widths: &[usize]) -> Result<Vec<Var>> {
        let total: usize = widths.iter().sum();
        if total != self.nodes[a.0].value.cols() {
            return Err(Error::arg(format!(
                "split widths sum to {total}, tensor has {} columns",
                self.nodes[a.0].value.cols()
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice(a, start, w)?);
            start += w;
        }
        Ok(out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        let tracked = self.t(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let s = x.data.iter().sum::<f64>() / x.len() as f64;
        let tracked = self.t(a);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().map(|v| v * v).sum();
        let tracked = self.t(a);
        self.push(Tensor::scalar(s), Op::SumSq(a), tracked)
    }

    /// Straight-through rounding: rounds in the forward pass, passes the
    /// gradient unchanged in the backward pass.
    pub fn st_quantize(&mut self, a: Var) -> Var {
        self.unary(a, Op::Quantize(a), round_half_away)
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    /// The common-channel combine rule: the mean of the two inputs where
    /// they are equal, zero elsewhere. Gradients reach both inputs at
    /// matching positions only.
    pub fn combine_y0(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.shape != y.shape {
            return Err(mismatch(x, y));
        }
        let data = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&p, &q)| if p == q { 0.5 * (p + q) } else { 0.0 })
            .collect();
        let shape = x.shape.clone();
        let tracked = self.t(a) || self.t(b);
        Ok(self.push(Tensor { shape, data }, Op::Combine(a, b), tracked))
    }

    /// Total code length (bits) of `y` under per-element discretized
    /// Gaussians. `mu` and `sigma` match `y` or are single rows broadcast
    /// over its rows. Likelihoods are floored at [`LIKELIHOOD_FLOOR`].
    pub fn gauss_bits(&mut self, y: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (yv, mv, sv) = (
            &self.nodes[y.0].value,
            &self.nodes[mu.0].value,
            &self.nodes[sigma.0].value,
        );
        let m = yv.cols();
        for p in [mv, sv] {
            if p.shape != yv.shape && !(p.rows() == 1 && p.cols() == m) {
                return Err(mismatch(yv, p));
            }
        }
        let (mb, sb) = (mv.rows() == 1, sv.rows() == 1);
        let mut total = 0.0;
        for (i, &yi) in yv.data.iter().enumerate() {
            let mi = mv.data[if mb { i % m } else { i }];
            let si = sv.data[if sb { i % m } else { i }];
            total += gaussian_bits(yi, mi, si);
        }
        let tracked = self.t(y) || self.t(mu) || self.t(sigma);
        Ok(self.push(Tensor::scalar(total), Op::GaussBits(y, mu, sigma), tracked))
    }

    /// Mean softmax cross-entropy (nats) of `logits` rows against class
    /// labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = &self.nodes[logits.0].value;
        let (n, m) = (x.rows(), x.cols());
        if labels.len() != n || labels.iter().any(|&l| l >= m) {
            return Err(Error::arg(format!(
                "need {n} labels below {m}, got {} labels",
                labels.len()
            )));
        }
        let mut total = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &x.data[i * m..(i + 1) * m];
            total += log_sum_exp(row) - row[l];
        }
        let tracked = self.t(logits);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy(logits, labels.to_vec()),
            tracked,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, w) = (val(*a), val(*b));
                let (n, k, m) = (x.rows(), x.cols(), w.cols());
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let wr = &w.data[p * m..(p + 1) * m];
                            ga[i * k + p] += gr.iter().zip(wr).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        let gr = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a = x.data[i * k + p];
                            if a != 0.0 {
                                for (o, &u) in gb[p * m..(p + 1) * m].iter_mut().zip(gr) {
                                    *o += a * u;
                                }
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let broadcast = val(*b).len() != g.len();
                acc(*b, &mut |gb| {
                    if broadcast {
                        let m = gb.len();
                        for (i, &u) in g.iter().enumerate() {
                            gb[i % m] += u;
                        }
                    } else {
                        add_into(gb, g);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &u) in gb.iter_mut().zip(g) {
                        *o -= u;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, &u), &q) in ga.iter_mut().zip(g).zip(&y.data) {
                        *o += u * q;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &u), &p) in gb.iter_mut().zip(g).zip(&x.data) {
                        *o += u * p;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                for (o, &u) in ga.iter_mut().zip(g) {
                    *o += c * u;
                }
            }),
            Op::AddScalar(a) | Op::Quantize(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Elu(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &u), &v) in ga.iter_mut().zip(g).zip(&x.data) {
                        *o += if v > 0.0 { u } else { u * v.exp() };
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &u), &v) in ga.iter_mut().zip(g).zip(&x.data) {
                        *o += u * sigmoid(v);
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                acc(*a, &mut |ga| {
                    for ((o, &u), &r) in ga.iter_mut().zip(g).zip(&y.data) {
                        *o += 0.5 * u / r;
                    }
                });
            }
            Op::Concat(parts) => {
                let n = node.value.rows();
                let m = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |gp| {
                        for i in 0..n {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * m + start..i * m + start + w]);
                        }
                    });
                    start += w;
                }
            }
            Op::Slice(a, start) => {
                let m = val(*a).cols();
                let (n, w) = (node.value.rows(), node.value.cols());
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        add_into(&mut ga[i * m + start..i * m + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let c = g[0] / val(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += c));
            }
            Op::SumSq(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for (o, &v) in ga.iter_mut().zip(&x.data) {
                        *o += 2.0 * g[0] * v;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((o, &u), &v) in ga.iter_mut().zip(g).zip(&x.data) {
                        if v >= *lo && v <= *hi {
                            *o += u;
                        }
                    }
                });
            }
            Op::Combine(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut f = |gx: &mut [f64]| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        if x.data[i] == y.data[i] {
                            *o += 0.5 * g[i];
                        }
                    }
                };
                acc(*a, &mut f);
                acc(*b, &mut f);
            }
            Op::GaussBits(y, mu, sigma) => {
                let (yv, mv, sv) = (val(*y), val(*mu), val(*sigma));
                let m = yv.cols();
                let (mb, sb) = (mv.rows() == 1, sv.rows() == 1);
                let len = yv.len();
                let mut dy = vec![0.0; len];
                let mut ds = vec![0.0; len];
                let ln2 = std::f64::consts::LN_2;
                for i in 0..len {
                    let mi = mv.data[if mb { i % m } else { i }];
                    let si = sv.data[if sb { i % m } else { i }];
                    let u = (yv.data[i] + 0.5 - mi) / si;
                    let l = (yv.data[i] - 0.5 - mi) / si;
                    let p = normal_interval(l, u);
                    if p <= LIKELIHOOD_FLOOR {
                        continue;
                    }
                    let c = -g[0] / (p * ln2);
                    dy[i] = c * (phi(u) - phi(l)) / si;
                    ds[i] = c * (phi(l) * l - phi(u) * u) / si;
                }
                acc(*y, &mut |gy| add_into(gy, &dy));
                acc(*mu, &mut |gm| {
                    for (i, &d) in dy.iter().enumerate() {
                        gm[if mb { i % m } else { i }] -= d;
                    }
                });
                acc(*sigma, &mut |gs| {
                    for (i, &d) in ds.iter().enumerate() {
                        gs[if sb { i % m } else { i }] += d;
                    }
                });
            }
            Op::CrossEntropy(a, labels) => {
                let x = val(*a);
                let (n, m) = (x.rows(), x.cols());
                let c = g[0] / n as f64;
                acc(*a, &mut |ga| {
                    for (i, &l) in labels.iter().enumerate() {
                        let row = &x.data[i * m..(i + 1) * m];
                        let lse = log_sum_exp(row);
                        for j in 0..m {
                            let p = (row[j] - lse).exp();
                            ga[i * m + j] += c * (p - if j == l { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &u) in dst.iter_mut().zip(src) {
        *o += u;
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no path
    /// reaches it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when disconnected.
    pub fn dense(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

const CHECKPOINT_FORMAT: &str = "gwn-params-v1";

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every tensor on the tape as a tracked leaf, in order.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Puts every tensor on the tape as an untracked leaf, in order.
    pub fn attach_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Writes `<stem>.bin` (shape-prefixed little-endian f64 tensors) and
    /// `<stem>.json` (tensor names and shapes).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(stem.with_extension("bin"))?);
        for t in &self.tensors {
            w.write_all(&(t.shape.len() as u64).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| ManifestEntry {
                    name: n.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unknown checkpoint format '{}'", manifest.format)));
        }
        let mut r = BufReader::new(File::open(stem.with_extension("bin"))?);
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut word)
                .map_err(|_| Error::Parse("checkpoint binary is truncated".into()))?;
            Ok(word)
        };
        let mut out = ParamSet::new();
        for entry in manifest.tensors {
            let ndim = u64::from_le_bytes(next(&mut r)?) as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| next(&mut r).map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<_>>()?;
            if shape != entry.shape {
                return Err(Error::Parse(format!(
                    "tensor '{}' has shape {shape:?} in the binary, {:?} in the manifest",
                    entry.name, entry.shape
                )));
            }
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| next(&mut r).map(f64::from_le_bytes))
                .collect::<Result<_>>()?;
            out.push(entry.name, Tensor::new(shape, data)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Parse("trailing bytes after the last tensor".into()));
        }
        Ok(out)
    }
}

/// Adam with global gradient-norm clipping applied before each update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            clip_norm,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Rescales `grads` in place so their joint L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let c = max_norm / norm;
            grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= c);
        }
        norm
    }

    pub fn step(&mut self, params: &mut ParamSet, mut grads: Vec<Vec<f64>>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::arg(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (g, p) in grads.iter().zip(params.tensors()) {
            if g.len() != p.len() {
                return Err(Error::ShapeMismatch {
                    left: vec![g.len()],
                    right: p.shape.clone(),
                });
            }
        }
        if let Some(c) = self.clip_norm {
            Self::clip(&mut grads, c);
        }
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (g, p)) in grads.iter().zip(params.tensors_mut()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
