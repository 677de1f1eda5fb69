//! The learnable three-channel codec.
//!
//! Analysis transforms map the two sources to quantized latents `Y0`
//! (common), `Y1` and `Y2` (private). Each task decoder reads its private
//! latent concatenated with `Y0`. The common channel has an unconditional
//! discretized-Gaussian entropy model; the private channels are modeled
//! conditionally on `Y0` by small networks that output a mean and scale
//! per element.
//!
//! Transforms are three dense layers with ELU activations and hidden
//! width `4E`. Latents are clamped to `[-64, 64]` before rounding.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{discretized_gaussian, gaussian_bits, Adam, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evaluation::GWRatePoint;
use crate::range_coder::{self, Channel, QuantizedCdf};
use crate::source_gen::{AttributeSource, SyntheticSource, NUM_LABELS};

/// Latents are clamped to `[-LATENT_BOUND, LATENT_BOUND]`.
pub const LATENT_BOUND: i32 = 64;
/// Lower bound added to every softplus scale.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Bins further than this many scales from the mean are coded with the
/// minimum frequency.
const CDF_WINDOW: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Two analysis transforms, each emitting a private latent and half of
    /// the common latent; the halves are joined by the combine rule.
    Shared,
    /// One analysis transform per channel.
    Separated,
    /// One analysis transform whose output is split into three channels.
    Combined,
    /// A single channel read by both decoders.
    Joint,
    /// Two private channels and no common channel.
    Independent,
}

impl Arch {
    pub const ALL: [Arch; 5] = [
        Arch::Shared,
        Arch::Separated,
        Arch::Combined,
        Arch::Joint,
        Arch::Independent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Shared => "shared",
            Arch::Separated => "separated",
            Arch::Combined => "combined",
            Arch::Joint => "joint",
            Arch::Independent => "independent",
        }
    }

    pub fn has_common(self) -> bool {
        self != Arch::Independent
    }

    pub fn has_private(self) -> bool {
        self != Arch::Joint
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown arch '{s}' (expected shared, separated, combined, joint or independent)"
                ))
            })
    }
}

/// How the two halves of the common latent are joined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Mean where the halves agree, zero elsewhere.
    #[default]
    Match,
    /// The first half, unchanged.
    PassThrough,
}

/// What the analysis transforms of the private channels (and of the
/// common-latent halves) read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputView {
    /// Every transform reads both sources.
    #[default]
    Full,
    /// The transform for task `i` reads only `X_i`; transforms of the
    /// separated common channel and the combined and joint codecs still
    /// read both.
    PerSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub arch: Arch,
    pub latent_dim: usize,
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub combine: CombineRule,
    #[serde(default)]
    pub view: InputView,
    pub seed: u64,
}

impl CodecConfig {
    /// `gamma = 1` and `lambda1 = lambda2 = 1 / eta`.
    pub fn new(arch: Arch, latent_dim: usize, beta: f64, eta: f64, seed: u64) -> Self {
        Self {
            arch,
            latent_dim,
            beta,
            eta,
            gamma: 1.0,
            lambda1: 1.0 / eta,
            lambda2: 1.0 / eta,
            combine: CombineRule::Match,
            view: InputView::Full,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::arg("latent_dim must be positive"));
        }
        for (name, v) in [("beta", self.beta), ("eta", self.eta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    fn widths(&self) -> (usize, usize) {
        let e = self.latent_dim;
        match self.arch {
            Arch::Joint => (2 * e, 0),
            Arch::Independent => (0, e),
            _ => (e, e),
        }
    }
}

/// Rate, distortion and auxiliary terms of one forward pass. Rates are
/// bits per element of the source (bits per sample divided by the
/// source's rate scale).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub d1: f64,
    pub d2: f64,
    pub aux: f64,
}

/// `eta (beta r0 + r1 + r2 + lambda1 d1 + lambda2 d2) + aux`, where `aux`
/// already carries its `gamma / |Y0|` weight.
pub fn augmented_loss(t: &LossTerms, cfg: &CodecConfig) -> f64 {
    cfg.eta * (cfg.beta * t.r0 + t.r1 + t.r2 + cfg.lambda1 * t.d1 + cfg.lambda2 * t.d2) + t.aux
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Regression { dim: usize },
    Classification { classes: usize },
}

impl TaskKind {
    fn out_dim(self) -> usize {
        match self {
            TaskKind::Regression { dim } => dim,
            TaskKind::Classification { classes } => classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Tensor),
    Labels(Vec<usize>),
}

/// One training batch: the two source tensors and the two task targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub t1: Targets,
    pub t2: Targets,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.x1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }
}

/// A seeded, indexable stream of training batches.
pub trait BatchSource: Sync {
    fn input_dims(&self) -> (usize, usize);
    fn tasks(&self) -> (TaskKind, TaskKind);
    /// Rates are reported per this many elements.
    fn rate_scale(&self) -> f64;
    fn batch(&self, n: usize, index: u64) -> Result<TrainBatch>;
}

impl BatchSource for SyntheticSource {
    fn input_dims(&self) -> (usize, usize) {
        let p = self.spec().positions();
        (p, p)
    }

    fn tasks(&self) -> (TaskKind, TaskKind) {
        let dim = self.spec().positions();
        (TaskKind::Regression { dim }, TaskKind::Regression { dim })
    }

    fn rate_scale(&self) -> f64 {
        self.spec().positions() as f64
    }

    fn batch(&self, n: usize, index: u64) -> Result<TrainBatch> {
        let b = self.sample_batch(n, index)?;
        let p = b.positions;
        let f = |v: &[i32]| Tensor::matrix(n, p, v.iter().map(|&x| x as f64).collect());
        Ok(TrainBatch {
            x1: f(&b.x1)?,
            x2: f(&b.x2)?,
            t1: Targets::Values(Tensor::matrix(n, p, b.z1)?),
            t2: Targets::Values(Tensor::matrix(n, p, b.z2)?),
        })
    }
}

impl BatchSource for AttributeSource {
    fn input_dims(&self) -> (usize, usize) {
        let h = self.spec().embedding_dim / 2;
        (h, h)
    }

    fn tasks(&self) -> (TaskKind, TaskKind) {
        let c = TaskKind::Classification { classes: NUM_LABELS };
        (c, c)
    }

    fn rate_scale(&self) -> f64 {
        1.0
    }

    fn batch(&self, n: usize, index: u64) -> Result<TrainBatch> {
        let b = self.sample_batch(n, index)?;
        let h = b.dim / 2;
        let mut x1 = Vec::with_capacity(n * h);
        let mut x2 = Vec::with_capacity(n * h);
        for row in b.inputs.chunks(b.dim) {
            x1.extend_from_slice(&row[..h]);
            x2.extend_from_slice(&row[h..]);
        }
        Ok(TrainBatch {
            x1: Tensor::matrix(n, h, x1)?,
            x2: Tensor::matrix(n, h, x2)?,
            t1: Targets::Labels(b.digits),
            t2: Targets::Labels(b.colors),
        })
    }
}

/// Quantized latents of one batch. Absent channels are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelCodes {
    pub y0: Option<Tensor>,
    pub y1: Option<Tensor>,
    pub y2: Option<Tensor>,
    /// The two halves of the common latent before combining (shared
    /// architecture only).
    pub y0_from_1: Option<Tensor>,
    pub y0_from_2: Option<Tensor>,
}

/// Dense layers as `(weight, bias)` parameter indices; ELU between layers.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    fn new(params: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        for (k, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let wi = params.push(format!("{name}.w{k}"), Tensor::matrix(fan_in, fan_out, data).expect("shape"));
            let bi = params.push(format!("{name}.b{k}"), Tensor::zeros(&[1, fan_out]));
            layers.push((wi, bi));
        }
        Self { layers }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], mut x: Var) -> Result<Var> {
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.matmul(x, vars[w])?;
            x = tape.add(x, vars[b])?;
            if k + 1 < self.layers.len() {
                x = tape.elu(x);
            }
        }
        Ok(x)
    }

    fn num_values(&self, params: &ParamSet) -> usize {
        self.layers
            .iter()
            .map(|&(w, b)| params.get(w).len() + params.get(b).len())
            .sum()
    }
}

/// Where each sub-network lives in the parameter set.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoders: Vec<Mlp>,
    dec1: Mlp,
    dec2: Mlp,
    /// Unconditional `(mean, raw scale)` of `Y0`.
    prior0: Option<(usize, usize)>,
    /// Conditional models of `Y1`, `Y2` given `Y0`.
    cond1: Option<Mlp>,
    cond2: Option<Mlp>,
    /// Unconditional models of `Y1`, `Y2` when there is no `Y0`.
    prior1: Option<(usize, usize)>,
    prior2: Option<(usize, usize)>,
}

/// Tape handles produced by one forward pass.
struct Graph {
    y0: Option<Var>,
    y1: Option<Var>,
    y2: Option<Var>,
    y0a: Option<Var>,
    y0b: Option<Var>,
    pred1: Var,
    pred2: Var,
    r0: Option<Var>,
    r1: Option<Var>,
    r2: Option<Var>,
    d1: Var,
    d2: Var,
    aux: Option<Var>,
    loss: Var,
}

/// Per-element `(mean, scale)` of one channel's entropy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub mean: Tensor,
    pub scale: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    cfg: CodecConfig,
    inputs: (usize, usize),
    tasks: (TaskKind, TaskKind),
    rate_scale: f64,
    params: ParamSet,
    layout: Layout,
}

/// `softplus^-1(1)`: raw scale giving an initial scale of one.
const RAW_UNIT_SCALE: f64 = 0.541_324_854_612_918_1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Codec {
    pub fn new(cfg: CodecConfig, source: &dyn BatchSource) -> Result<Self> {
        Self::with_shapes(cfg, source.input_dims(), source.tasks(), source.rate_scale())
    }

    pub fn with_shapes(
        cfg: CodecConfig,
        inputs: (usize, usize),
        tasks: (TaskKind, TaskKind),
        rate_scale: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        if inputs.0 == 0 || inputs.1 == 0 {
            return Err(Error::arg("input dimensions must be positive"));
        }
        let mut rng = rng_for(cfg.seed, 0);
        let mut params = ParamSet::new();
        let e = cfg.latent_dim;
        let h = 4 * e;
        let (e0, ep) = cfg.widths();
        let (d1, d2) = inputs;
        let dboth = d1 + d2;
        let (a1, a2) = match cfg.view {
            InputView::Full => (dboth, dboth),
            InputView::PerSource => (d1, d2),
        };
        let p = &mut params;
        let encoders = match cfg.arch {
            Arch::Shared => vec![
                Mlp::new(p, "enc1", &[a1, h, h, ep + e0], &mut rng),
                Mlp::new(p, "enc2", &[a2, h, h, ep + e0], &mut rng),
            ],
            Arch::Separated => vec![
                Mlp::new(p, "enc0", &[dboth, h, h, e0], &mut rng),
                Mlp::new(p, "enc1", &[a1, h, h, ep], &mut rng),
                Mlp::new(p, "enc2", &[a2, h, h, ep], &mut rng),
            ],
            Arch::Combined => vec![Mlp::new(p, "enc", &[dboth, h, h, e0 + 2 * ep], &mut rng)],
            Arch::Joint => vec![Mlp::new(p, "enc", &[dboth, h, h, e0], &mut rng)],
            Arch::Independent => vec![
                Mlp::new(p, "enc1", &[a1, h, h, ep], &mut rng),
                Mlp::new(p, "enc2", &[a2, h, h, ep], &mut rng),
            ],
        };
        let dec_in = e0 + ep;
        let dec1 = Mlp::new(p, "dec1", &[dec_in, h, h, tasks.0.out_dim()], &mut rng);
        let dec2 = Mlp::new(p, "dec2", &[dec_in, h, h, tasks.1.out_dim()], &mut rng);
        let prior = |p: &mut ParamSet, name: &str, w: usize| {
            let m = p.push(format!("{name}.mean"), Tensor::zeros(&[1, w]));
            let s = p.push(
                format!("{name}.scale"),
                Tensor::matrix(1, w, vec![RAW_UNIT_SCALE; w]).expect("shape"),
            );
            (m, s)
        };
        let prior0 = (e0 > 0).then(|| prior(p, "prior0", e0));
        let (cond1, cond2, prior1, prior2) = if ep == 0 {
            (None, None, None, None)
        } else if e0 > 0 {
            (
                Some(Mlp::new(p, "cond1", &[e0, h, 2 * ep], &mut rng)),
                Some(Mlp::new(p, "cond2", &[e0, h, 2 * ep], &mut rng)),
                None,
                None,
            )
        } else {
            (None, None, Some(prior(p, "prior1", ep)), Some(prior(p, "prior2", ep)))
        };
        Ok(Self {
            cfg,
            inputs,
            tasks,
            rate_scale,
            params,
            layout: Layout {
                encoders,
                dec1,
                dec2,
                prior0,
                cond1,
                cond2,
                prior1,
                prior2,
            },
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// Trainable values in the analysis transforms.
    pub fn num_encoder_params(&self) -> usize {
        self.layout.encoders.iter().map(|m| m.num_values(&self.params)).sum()
    }

    pub fn rate_scale(&self) -> f64 {
        self.rate_scale
    }

    fn latent(tape: &mut Tape, x: Var) -> Var {
        let b = LATENT_BOUND as f64;
        let c = tape.clamp(x, -b, b);
        tape.st_quantize(c)
    }

    fn scale_from_raw(tape: &mut Tape, raw: Var) -> Var {
        let s = tape.softplus(raw);
        tape.add_scalar(s, SCALE_FLOOR)
    }

    /// Entropy-model parameters of a private channel given `Y0` (or the
    /// unconditional prior).
    fn private_model(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        task: usize,
        y0: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (cond, prior) = if task == 1 {
            (&self.layout.cond1, self.layout.prior1)
        } else {
            (&self.layout.cond2, self.layout.prior2)
        };
        match (cond, prior, y0) {
            (Some(net), _, Some(y0)) => {
                let out = net.forward(tape, vars, y0)?;
                let ep = self.cfg.widths().1;
                let parts = tape.split(out, &[ep, ep])?;
                let scale = Self::scale_from_raw(tape, parts[1]);
                Ok((parts[0], scale))
            }
            (_, Some((m, s)), _) => {
                let scale = Self::scale_from_raw(tape, vars[s]);
                Ok((vars[m], scale))
            }
            _ => Err(Error::arg("channel has no entropy model")),
        }
    }

    fn distortion(tape: &mut Tape, pred: Var, target: &Targets) -> Result<Var> {
        match target {
            Targets::Values(t) => {
                let n = t.len() as f64;
                let tv = tape.constant(t.clone());
                let e = tape.sub(pred, tv)?;
                let s = tape.sum_sq(e);
                let mse = tape.scale(s, 1.0 / n);
                let mse = tape.add_scalar(mse, 1e-12);
                Ok(tape.sqrt(mse))
            }
            Targets::Labels(l) => tape.cross_entropy(pred, l),
        }
    }

    fn check_batch(&self, b: &TrainBatch) -> Result<()> {
        if b.x1.cols() != self.inputs.0 || b.x2.cols() != self.inputs.1 || b.x1.rows() != b.x2.rows() {
            return Err(Error::ShapeMismatch {
                left: vec![b.x1.rows(), b.x1.cols(), b.x2.cols()],
                right: vec![b.x1.rows(), self.inputs.0, self.inputs.1],
            });
        }
        Ok(())
    }

    fn build(&self, tape: &mut Tape, vars: &[Var], b: &TrainBatch) -> Result<Graph> {
        self.check_batch(b)?;
        let n = b.len();
        let (e0, ep) = self.cfg.widths();
        let x1 = tape.constant(b.x1.clone());
        let x2 = tape.constant(b.x2.clone());
        let x = tape.concat(&[x1, x2])?;
        let (u1, u2) = match self.cfg.view {
            InputView::Full => (x, x),
            InputView::PerSource => (x1, x2),
        };
        let enc = &self.layout.encoders;
        let (mut y0, mut y1, mut y2, mut y0a, mut y0b, mut aux) = (None, None, None, None, None, None);
        match self.cfg.arch {
            Arch::Shared => {
                let o1 = enc[0].forward(tape, vars, u1)?;
                let o1 = Self::latent(tape, o1);
                let p1 = tape.split(o1, &[ep, e0])?;
                let o2 = enc[1].forward(tape, vars, u2)?;
                let o2 = Self::latent(tape, o2);
                let p2 = tape.split(o2, &[ep, e0])?;
                y1 = Some(p1[0]);
                y2 = Some(p2[0]);
                y0a = Some(p1[1]);
                y0b = Some(p2[1]);
                y0 = Some(match self.cfg.combine {
                    CombineRule::Match => tape.combine_y0(p1[1], p2[1])?,
                    CombineRule::PassThrough => p1[1],
                });
                let diff = tape.sub(p1[1], p2[1])?;
                let sq = tape.sum_sq(diff);
                aux = Some(tape.scale(sq, self.cfg.gamma / (n * e0) as f64));
            }
            Arch::Separated => {
                let o0 = enc[0].forward(tape, vars, x)?;
                y0 = Some(Self::latent(tape, o0));
                let o1 = enc[1].forward(tape, vars, u1)?;
                y1 = Some(Self::latent(tape, o1));
                let o2 = enc[2].forward(tape, vars, u2)?;
                y2 = Some(Self::latent(tape, o2));
            }
            Arch::Combined => {
                let o = enc[0].forward(tape, vars, x)?;
                let o = Self::latent(tape, o);
                let p = tape.split(o, &[e0, ep, ep])?;
                y0 = Some(p[0]);
                y1 = Some(p[1]);
                y2 = Some(p[2]);
            }
            Arch::Joint => {
                let o = enc[0].forward(tape, vars, x)?;
                y0 = Some(Self::latent(tape, o));
            }
            Arch::Independent => {
                let o1 = enc[0].forward(tape, vars, u1)?;
                y1 = Some(Self::latent(tape, o1));
                let o2 = enc[1].forward(tape, vars, u2)?;
                y2 = Some(Self::latent(tape, o2));
            }
        }
        let dec_input = |tape: &mut Tape, yp: Option<Var>| -> Result<Var> {
            match (yp, y0) {
                (Some(p), Some(c)) => tape.concat(&[p, c]),
                (Some(p), None) => Ok(p),
                (None, Some(c)) => Ok(c),
                (None, None) => Err(Error::arg("decoder has no input")),
            }
        };
        let in1 = dec_input(tape, y1)?;
        let pred1 = self.layout.dec1.forward(tape, vars, in1)?;
        let in2 = dec_input(tape, y2)?;
        let pred2 = self.layout.dec2.forward(tape, vars, in2)?;
        let d1 = Self::distortion(tape, pred1, &b.t1)?;
        let d2 = Self::distortion(tape, pred2, &b.t2)?;

        let per = 1.0 / (n as f64 * self.rate_scale);
        let mut r0 = None;
        if let (Some(y), Some((m, s))) = (y0, self.layout.prior0) {
            let scale = Self::scale_from_raw(tape, vars[s]);
            let bits = tape.gauss_bits(y, vars[m], scale)?;
            r0 = Some(tape.scale(bits, per));
        }
        let rate = |tape: &mut Tape, task: usize, y: Option<Var>| -> Result<Option<Var>> {
            let Some(y) = y else { return Ok(None) };
            let (mean, scale) = self.private_model(tape, vars, task, y0)?;
            let bits = tape.gauss_bits(y, mean, scale)?;
            Ok(Some(tape.scale(bits, per)))
        };
        let r1 = rate(tape, 1, y1)?;
        let r2 = rate(tape, 2, y2)?;

        let cfg = &self.cfg;
        let mut terms = Vec::new();
        if let Some(r) = r0 {
            terms.push(tape.scale(r, cfg.eta * cfg.beta));
        }
        for r in [r1, r2].into_iter().flatten() {
            terms.push(tape.scale(r, cfg.eta));
        }
        terms.push(tape.scale(d1, cfg.eta * cfg.lambda1));
        terms.push(tape.scale(d2, cfg.eta * cfg.lambda2));
        if let Some(a) = aux {
            terms.push(a);
        }
        let all = tape.concat(&terms)?;
        let loss = tape.sum(all);
        Ok(Graph {
            y0,
            y1,
            y2,
            y0a,
            y0b,
            pred1,
            pred2,
            r0,
            r1,
            r2,
            d1,
            d2,
            aux,
            loss,
        })
    }

    fn terms_of(tape: &Tape, g: &Graph) -> LossTerms {
        let s = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        LossTerms {
            r0: s(g.r0),
            r1: s(g.r1),
            r2: s(g.r2),
            d1: tape.scalar(g.d1),
            d2: tape.scalar(g.d2),
            aux: s(g.aux),
        }
    }

    fn codes_of(tape: &Tape, g: &Graph) -> ChannelCodes {
        let t = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        ChannelCodes {
            y0: t(g.y0),
            y1: t(g.y1),
            y2: t(g.y2),
            y0_from_1: t(g.y0a),
            y0_from_2: t(g.y0b),
        }
    }

    /// One gradient step; returns the loss terms before the update.
    pub fn train_step(&mut self, b: &TrainBatch, opt: &mut Adam) -> Result<(f64, LossTerms)> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape);
        let g = self.build(&mut tape, &vars, b)?;
        let loss = tape.scalar(g.loss);
        let terms = Self::terms_of(&tape, &g);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}: {terms:?}")));
        }
        let grads = tape.backward(g.loss)?;
        let dense: Vec<Vec<f64>> = vars.iter().map(|&v| grads.dense(&tape, v)).collect();
        if dense.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at loss {loss}: {terms:?}")));
        }
        opt.step(&mut self.params, dense)?;
        Ok((loss, terms))
    }

    /// Forward pass without updates: loss, terms, codes and task accuracy
    /// (classification tasks only).
    pub fn evaluate(&self, b: &TrainBatch) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = self.params.attach_frozen(&mut tape);
        let g = self.build(&mut tape, &vars, b)?;
        let acc = |pred: Var, t: &Targets| match t {
            Targets::Labels(l) => {
                let p = tape.value(pred);
                let m = p.cols();
                let hits = l
                    .iter()
                    .enumerate()
                    .filter(|&(i, &lab)| {
                        let row = &p.data()[i * m..(i + 1) * m];
                        let best = row
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(j, _)| j);
                        best == Some(lab)
                    })
                    .count();
                Some(hits as f64 / l.len() as f64)
            }
            Targets::Values(_) => None,
        };
        Ok(Evaluation {
            loss: tape.scalar(g.loss),
            terms: Self::terms_of(&tape, &g),
            codes: Self::codes_of(&tape, &g),
            accuracy: (acc(g.pred1, &b.t1), acc(g.pred2, &b.t2)),
        })
    }

    /// Entropy-model parameters for every present channel, computed from
    /// the common latent alone.
    pub fn channel_models(&self, y0: Option<&Tensor>, n: usize) -> Result<[Option<ChannelModel>; 3]> {
        let mut tape = Tape::new();
        let vars = self.params.attach_frozen(&mut tape);
        let broadcast = |tape: &Tape, m: Var, s: Var| -> Result<ChannelModel> {
            let (mv, sv) = (tape.value(m), tape.value(s));
            let expand = |t: &Tensor| {
                if t.rows() == n {
                    Ok(t.clone())
                } else {
                    Tensor::matrix(n, t.cols(), t.data().repeat(n))
                }
            };
            Ok(ChannelModel {
                mean: expand(mv)?,
                scale: expand(sv)?,
            })
        };
        let mut out: [Option<ChannelModel>; 3] = [None, None, None];
        let y0v = match (self.layout.prior0, y0) {
            (Some((m, s)), Some(y)) => {
                if y.rows() != n || y.cols() != self.cfg.widths().0 {
                    return Err(Error::ShapeMismatch {
                        left: y.shape().to_vec(),
                        right: vec![n, self.cfg.widths().0],
                    });
                }
                let scale = Self::scale_from_raw(&mut tape, vars[s]);
                out[0] = Some(broadcast(&tape, vars[m], scale)?);
                Some(tape.constant(y.clone()))
            }
            (Some(_), None) => return Err(Error::arg("architecture needs Y0 to model its channels")),
            _ => None,
        };
        if self.cfg.arch.has_private() {
            for task in [1, 2] {
                let (m, s) = self.private_model(&mut tape, &vars, task, y0v)?;
                out[task] = Some(broadcast(&tape, m, s)?);
            }
        }
        Ok(out)
    }

    /// Estimated code length (bits) of each channel of `codes`.
    pub fn rate_terms(&self, codes: &ChannelCodes) -> Result<[f64; 3]> {
        let n = [&codes.y0, &codes.y1, &codes.y2]
            .iter()
            .find_map(|c| c.as_ref().map(Tensor::rows))
            .ok_or_else(|| Error::arg("no channels"))?;
        let models = self.channel_models(codes.y0.as_ref(), n)?;
        let mut bits = [0.0; 3];
        for (k, y) in [&codes.y0, &codes.y1, &codes.y2].into_iter().enumerate() {
            if let (Some(y), Some(m)) = (y, &models[k]) {
                bits[k] = y
                    .data()
                    .iter()
                    .zip(m.mean.data().iter().zip(m.scale.data()))
                    .map(|(&v, (&mu, &s))| gaussian_bits(v, mu, s))
                    .sum();
            }
        }
        Ok(bits)
    }

    /// Range-codes the codes of one batch into a container with channels
    /// `Y0, Y1, Y2`. Absent channels are empty.
    pub fn encode(&self, codes: &ChannelCodes) -> Result<Vec<u8>> {
        let n = [&codes.y0, &codes.y1, &codes.y2]
            .iter()
            .find_map(|c| c.as_ref().map(Tensor::rows))
            .ok_or_else(|| Error::arg("no channels"))?;
        let models = self.channel_models(codes.y0.as_ref(), n)?;
        let mut channels = Vec::with_capacity(3);
        for (k, y) in [&codes.y0, &codes.y1, &codes.y2].into_iter().enumerate() {
            let (symbols, cdfs) = match (y, &models[k]) {
                (Some(y), Some(m)) => {
                    let symbols: Vec<i32> = y.data().iter().map(|&v| v as i32).collect();
                    (symbols, quantized_cdfs(m)?)
                }
                _ => (Vec::new(), Vec::new()),
            };
            let stream = range_coder::encode(&symbols, &cdfs)?;
            channels.push(Channel {
                num_symbols: symbols.len() as u32,
                stream,
            });
        }
        range_coder::write_container(&channels)
    }

    /// Decodes a container of `n` samples: `Y0` first, then the private
    /// channels under models conditioned on the decoded `Y0`.
    pub fn decode(&self, bytes: &[u8], n: usize) -> Result<ChannelCodes> {
        let channels = range_coder::read_container(bytes)?;
        if channels.len() != 3 {
            return Err(Error::Coding(format!("expected 3 channels, found {}", channels.len())));
        }
        let (e0, ep) = self.cfg.widths();
        let widths = [e0, ep, ep];
        for (c, &w) in channels.iter().zip(&widths) {
            if c.num_symbols as usize != n * w {
                return Err(Error::Coding(format!(
                    "channel holds {} symbols, expected {}",
                    c.num_symbols,
                    n * w
                )));
            }
        }
        let mut codes = ChannelCodes::default();
        if e0 > 0 {
            let m = self.channel_models(None, n).or_else(|_| {
                // The unconditional prior does not depend on the values.
                self.channel_models(Some(&Tensor::zeros(&[n, e0])), n)
            })?;
            let prior = m[0].as_ref().ok_or_else(|| Error::Coding("missing Y0 model".into()))?;
            let y = range_coder::decode(&channels[0].stream, &quantized_cdfs(prior)?)?;
            codes.y0 = Some(Tensor::matrix(n, e0, y.into_iter().map(f64::from).collect())?);
        }
        if ep > 0 {
            let models = self.channel_models(codes.y0.as_ref(), n)?;
            for k in [1, 2] {
                let m = models[k].as_ref().ok_or_else(|| Error::Coding("missing private model".into()))?;
                let y = range_coder::decode(&channels[k].stream, &quantized_cdfs(m)?)?;
                let t = Tensor::matrix(n, ep, y.into_iter().map(f64::from).collect())?;
                if k == 1 {
                    codes.y1 = Some(t);
                } else {
                    codes.y2 = Some(t);
                }
            }
        }
        Ok(codes)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.params.save(stem)?;
        let meta = CodecMeta {
            config: self.cfg.clone(),
            inputs: self.inputs,
            tasks: self.tasks,
            rate_scale: self.rate_scale,
        };
        std::fs::write(
            stem.with_extension("codec.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta: CodecMeta =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("codec.json"))?)?;
        let mut codec = Self::with_shapes(meta.config, meta.inputs, meta.tasks, meta.rate_scale)?;
        let params = ParamSet::load(stem)?;
        if params.names() != codec.params.names()
            || params
                .tensors()
                .iter()
                .zip(codec.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Parse("checkpoint does not match the codec layout".into()));
        }
        codec.params = params;
        Ok(codec)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CodecMeta {
    config: CodecConfig,
    inputs: (usize, usize),
    tasks: (TaskKind, TaskKind),
    rate_scale: f64,
}

/// Output of [`Codec::evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub terms: LossTerms,
    pub codes: ChannelCodes,
    pub accuracy: (Option<f64>, Option<f64>),
}

/// Quantized CDFs over `[-LATENT_BOUND, LATENT_BOUND]` for every element
/// of a channel model. The end bins absorb the Gaussian tails.
pub fn quantized_cdfs(m: &ChannelModel) -> Result<Vec<QuantizedCdf>> {
    let b = LATENT_BOUND;
    let n = (2 * b + 1) as usize;
    let mut probs = vec![0.0; n];
    m.mean
        .data()
        .iter()
        .zip(m.scale.data())
        .map(|(&mu, &s)| {
            probs.iter_mut().for_each(|p| *p = 0.0);
            let lo = ((mu - CDF_WINDOW * s).floor() as i64 - 1).max(-b as i64) as i32;
            let hi = ((mu + CDF_WINDOW * s).ceil() as i64 + 1).min(b as i64) as i32;
            for k in lo..=hi {
                probs[(k + b) as usize] = discretized_gaussian(k as f64, mu, s);
            }
            if lo == -b {
                probs[0] += tail_below(-b as f64 - 0.5, mu, s);
            }
            if hi == b {
                probs[n - 1] += tail_above(b as f64 + 0.5, mu, s);
            }
            QuantizedCdf::from_probs(-b, &probs)
        })
        .collect()
}

fn tail_below(t: f64, mu: f64, s: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-(t - mu) / (s * std::f64::consts::SQRT_2))
}

fn tail_above(t: f64, mu: f64, s: f64) -> f64 {
    0.5 * statrs::function::erf::erfc((t - mu) / (s * std::f64::consts::SQRT_2))
}

/// Training schedule. An epoch is `steps_per_epoch` gradient steps
/// followed by a validation pass over `val_batches` fixed batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub clip_norm: f64,
    pub steps_per_epoch: usize,
    pub val_batches: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 100,
            lr: 1e-3,
            betas: (0.9, 0.999),
            clip_norm: 1.0,
            steps_per_epoch: 100,
            val_batches: 5,
            max_epochs: 30,
            patience: 10,
        }
    }
}

/// Validation batches are drawn from indices at and above this offset,
/// training batches below it.
pub const VALIDATION_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone)]
pub struct TrainedCodec {
    pub codec: Codec,
    pub point: GWRatePoint,
    /// Validation loss after each epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean validation terms, loss and accuracies.
pub fn validate(codec: &Codec, source: &dyn BatchSource, opts: &TrainOptions) -> Result<(f64, LossTerms, (Option<f64>, Option<f64>))> {
    let mut loss = 0.0;
    let mut t = LossTerms::default();
    let mut acc = (None::<f64>, None::<f64>);
    let k = opts.val_batches.max(1);
    for i in 0..k {
        let b = source.batch(opts.batch_size, VALIDATION_OFFSET + i as u64)?;
        let ev = codec.evaluate(&b)?;
        loss += ev.loss / k as f64;
        let e = ev.terms;
        t.r0 += e.r0 / k as f64;
        t.r1 += e.r1 / k as f64;
        t.r2 += e.r2 / k as f64;
        t.d1 += e.d1 / k as f64;
        t.d2 += e.d2 / k as f64;
        t.aux += e.aux / k as f64;
        if let Some(a) = ev.accuracy.0 {
            acc.0 = Some(acc.0.unwrap_or(0.0) + a / k as f64);
        }
        if let Some(a) = ev.accuracy.1 {
            acc.1 = Some(acc.1.unwrap_or(0.0) + a / k as f64);
        }
    }
    Ok((loss, t, acc))
}

/// Trains with Adam and early stopping on the validation loss. The
/// returned codec holds the best parameters seen.
pub fn train(cfg: &CodecConfig, source: &dyn BatchSource, opts: &TrainOptions) -> Result<TrainedCodec> {
    if opts.batch_size == 0 || opts.steps_per_epoch == 0 || opts.max_epochs == 0 {
        return Err(Error::arg("batch_size, steps_per_epoch and max_epochs must be positive"));
    }
    let mut codec = Codec::new(cfg.clone(), source)?;
    let mut opt = Adam::new(opts.lr, opts.betas, Some(opts.clip_norm));
    let mut best = (f64::INFINITY, codec.params.clone(), 0usize);
    let mut history = Vec::new();
    let mut step: u64 = 0;
    // Training batches are seeded by the codec seed so that runs with
    // different seeds see different data.
    let base = cfg.seed.wrapping_mul(0x9E37_79B9) % (VALIDATION_OFFSET / 2);
    for epoch in 0..opts.max_epochs {
        for _ in 0..opts.steps_per_epoch {
            let b = source.batch(opts.batch_size, (base + step) % VALIDATION_OFFSET)?;
            codec.train_step(&b, &mut opt).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!(
                    "{} training diverged at epoch {epoch}, step {step}: {m}",
                    cfg.arch
                )),
                other => other,
            })?;
            step += 1;
        }
        let (loss, _, _) = validate(&codec, source, opts)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "{} validation loss became {loss} at epoch {epoch}",
                cfg.arch
            )));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, codec.params.clone(), epoch);
        } else if epoch - best.2 >= opts.patience {
            break;
        }
    }
    codec.params = best.1;
    let (_, t, acc) = validate(&codec, source, opts)?;
    let point = GWRatePoint::new(cfg.arch.name(), cfg.beta, cfg.eta, cfg.seed, t, acc);
    Ok(TrainedCodec {
        codec,
        point,
        history,
        best_epoch: best.2,
    })
}
