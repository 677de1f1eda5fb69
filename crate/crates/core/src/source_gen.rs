//! Synthetic sources for the codec experiments.
//!
//! [`SyntheticSource`] produces pairs of integer tensors `(X1, X2)` whose
//! elements follow a clipped, quantized Gaussian. A frozen dependency map
//! marks each position as a copy (`X2 = X1`) or independent. Regression
//! targets are `Z_i = A_i X_i` with determinant-one block matrices.
//!
//! [`AttributeSource`] produces noisy one-hot encodings of a (digit, color)
//! label pair drawn from one of three joints: dependent, independent or
//! mixture.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::pmf::{mutual_information, JointPmf, Pmf};

/// Entropy (bits) of the base PMF used by default.
pub const DEFAULT_BASE_ENTROPY: f64 = 2.31;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How the Gaussian behind the base PMF is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseScale {
    /// Gaussian with the given variance.
    Variance(f64),
    /// Gaussian whose clipped, quantized PMF has the given entropy (bits).
    TargetEntropy(f64),
}

impl Default for BaseScale {
    fn default() -> Self {
        BaseScale::TargetEntropy(DEFAULT_BASE_ENTROPY)
    }
}

/// Quantizes `N(0, sigma^2)` to the integers `lo..=hi`. Mass outside the
/// range goes to the boundary bins. The result is exactly symmetric when
/// `lo = -hi`.
pub fn quantized_gaussian(sigma: f64, lo: i32, hi: i32) -> Result<Pmf> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    if lo > hi {
        return Err(Error::arg(format!("empty symbol range [{lo}, {hi}]")));
    }
    // Upper tail mass beyond t, computed without cancellation.
    let tail = |t: f64| 0.5 * erfc(t / (sigma * std::f64::consts::SQRT_2));
    let mass = |k: i32| -> f64 {
        let upper = if k == hi { 0.0 } else { tail(k as f64 + 0.5) };
        let lower = if k == lo { 1.0 } else { tail(k as f64 - 0.5) };
        lower - upper
    };
    let probs: Vec<f64> = if lo == -hi {
        (lo..=hi).map(|k| mass(k.abs())).collect()
    } else {
        (lo..=hi).map(mass).collect()
    };
    Pmf::from_weights(probs)
}

/// Builds the base PMF over `lo..=hi` for the given scale.
pub fn build_base_pmf(scale: BaseScale, lo: i32, hi: i32) -> Result<Pmf> {
    quantized_gaussian(base_sigma(scale, lo, hi)?, lo, hi)
}

/// Standard deviation of the Gaussian behind `scale`.
pub fn base_sigma(scale: BaseScale, lo: i32, hi: i32) -> Result<f64> {
    match scale {
        BaseScale::Variance(v) => {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("variance must be positive, got {v}")));
            }
            Ok(v.sqrt())
        }
        BaseScale::TargetEntropy(h) => {
            let n = (hi - lo + 1) as f64;
            if !(h > 0.0) || h >= n.log2() {
                return Err(Error::arg(format!(
                    "target entropy {h} outside (0, log2 {n})"
                )));
            }
            // Entropy rises with sigma until clipping piles mass onto the
            // boundary bins, so bracket the first crossing on a grid.
            let grid = |i: i32| 1e-3 * 1.05f64.powi(i);
            let mut upper = None;
            for i in 1..400 {
                if quantized_gaussian(grid(i), lo, hi)?.entropy() >= h {
                    upper = Some(i);
                    break;
                }
            }
            let i = upper.ok_or_else(|| {
                Error::arg(format!("no Gaussian reaches entropy {h} on [{lo}, {hi}]"))
            })?;
            let (mut a, mut b) = (grid(i - 1), grid(i));
            for _ in 0..200 {
                let m = (a * b).sqrt();
                if quantized_gaussian(m, lo, hi)?.entropy() < h {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok((a * b).sqrt())
        }
    }
}

/// Configuration of the synthetic correlated source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSourceSpec {
    pub height: usize,
    pub width: usize,
    pub symbol_min: i32,
    pub symbol_max: i32,
    pub copy_prob: f64,
    pub base: BaseScale,
    /// Side of the square blocks the target matrices act on. Positions
    /// are taken in row-major order; `height * width` must be a multiple.
    pub block_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSourceSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            symbol_min: -4,
            symbol_max: 4,
            copy_prob: 0.8,
            base: BaseScale::default(),
            block_size: 1,
            seed: 0,
        }
    }
}

impl SyntheticSourceSpec {
    /// A 4x4 source with 4-position target blocks, sized for training on
    /// one core.
    pub fn desk(seed: u64) -> Self {
        Self {
            height: 4,
            width: 4,
            block_size: 4,
            seed,
            ..Self::default()
        }
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("spatial size must be at least 1x1"));
        }
        if !(0.0..=1.0).contains(&self.copy_prob) {
            return Err(Error::arg(format!(
                "copy_prob must lie in [0, 1], got {}",
                self.copy_prob
            )));
        }
        if self.symbol_min > self.symbol_max {
            return Err(Error::arg("symbol_min exceeds symbol_max"));
        }
        if self.block_size == 0 || self.positions() % self.block_size != 0 {
            return Err(Error::arg(format!(
                "block_size {} does not divide {} positions",
                self.block_size,
                self.positions()
            )));
        }
        Ok(())
    }
}

/// Per-position copy flags, drawn once and frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyMap {
    copies: Vec<bool>,
}

impl DependencyMap {
    /// Draws each flag independently with probability `copy_prob`.
    pub fn generate(positions: usize, copy_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&copy_prob) {
            return Err(Error::arg(format!("copy_prob must lie in [0, 1], got {copy_prob}")));
        }
        let mut rng = stream_rng(seed, 0);
        let copies = (0..positions).map(|_| rng.random::<f64>() < copy_prob).collect();
        Ok(Self { copies })
    }

    pub fn from_flags(copies: Vec<bool>) -> Self {
        Self { copies }
    }

    pub fn copies(&self) -> &[bool] {
        &self.copies
    }

    pub fn len(&self) -> usize {
        self.copies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.copies.is_empty()
    }

    pub fn copy_fraction(&self) -> f64 {
        if self.copies.is_empty() {
            return 0.0;
        }
        self.copies.iter().filter(|&&c| c).count() as f64 / self.copies.len() as f64
    }
}

/// A square matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    /// Random `L U` product with unit diagonals; the determinant is one.
    pub fn random_unimodular(n: usize, rng: &mut impl Rng) -> Self {
        let mut l = vec![0.0; n * n];
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = 1.0;
            u[i * n + i] = 1.0;
            for j in 0..i {
                l[i * n + j] = rng.random_range(-1.0..1.0);
            }
            for j in i + 1..n {
                u[i * n + j] = rng.random_range(-1.0..1.0);
            }
        }
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = l[i * n + k];
                if a != 0.0 {
                    for j in 0..n {
                        data[i * n + j] += a * u[k * n + j];
                    }
                }
            }
        }
        Self { n, data }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.data[r * self.n..(r + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap_or(col);
            if a[piv * n + col].abs() < 1e-300 {
                return Err(Error::Numerical("singular matrix".into()));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(piv * n + j, col * n + j);
                }
                x.swap(piv, col);
            }
            for r in col + 1..n {
                let f = a[r * n + col] / a[col * n + col];
                if f != 0.0 {
                    for j in col..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                    x[r] -= f * x[col];
                }
            }
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|j| a[r * n + j] * x[j]).sum();
            x[r] = (x[r] - s) / a[r * n + r];
        }
        Ok(x)
    }
}

/// The two regression maps, one block matrix per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTargets {
    pub a1: SquareMatrix,
    pub a2: SquareMatrix,
}

impl TaskTargets {
    pub fn generate(block_size: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 1);
        let a1 = SquareMatrix::random_unimodular(block_size, &mut rng);
        let a2 = SquareMatrix::random_unimodular(block_size, &mut rng);
        Self { a1, a2 }
    }

    fn apply_blocks(a: &SquareMatrix, x: &[f64], out: &mut [f64]) {
        for (xb, ob) in x.chunks(a.n).zip(out.chunks_mut(a.n)) {
            a.apply(xb, ob);
        }
    }

    /// Recovers one sample of `X_task` from its target.
    pub fn invert(&self, task: usize, z: &[f64]) -> Result<Vec<f64>> {
        let a = if task == 1 { &self.a1 } else { &self.a2 };
        let mut out = Vec::with_capacity(z.len());
        for zb in z.chunks(a.n) {
            out.extend(a.solve(zb)?);
        }
        Ok(out)
    }
}

/// One batch of the synthetic source. Tensors are `n x positions`,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub n: usize,
    pub positions: usize,
    pub x1: Vec<i32>,
    pub x2: Vec<i32>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// Exact per-element information measures of the synthetic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMeasures {
    pub h_joint: f64,
    pub h_sum: f64,
    pub mi: f64,
}

/// The values stated for the synthetic source: `H(X1,X2)`,
/// `H(X1)+H(X2)` and `I(X1;X2)`, bits per element.
pub const REPORTED_MEASURES: SourceMeasures = SourceMeasures {
    h_joint: 3.3,
    h_sum: 4.62,
    mi: 1.32,
};

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SyntheticSourceSpec,
    base: Pmf,
    sigma: f64,
    map: DependencyMap,
    targets: TaskTargets,
    sampler: WeightedIndex<f64>,
}

impl SyntheticSource {
    pub fn new(spec: SyntheticSourceSpec) -> Result<Self> {
        spec.validate()?;
        let sigma = base_sigma(spec.base, spec.symbol_min, spec.symbol_max)?;
        let base = quantized_gaussian(sigma, spec.symbol_min, spec.symbol_max)?;
        let map = DependencyMap::generate(spec.positions(), spec.copy_prob, spec.seed)?;
        let targets = TaskTargets::generate(spec.block_size, spec.seed);
        let sampler = WeightedIndex::new(base.probs())
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        Ok(Self {
            spec,
            base,
            sigma,
            map,
            targets,
            sampler,
        })
    }

    pub fn spec(&self) -> &SyntheticSourceSpec {
        &self.spec
    }

    pub fn base_pmf(&self) -> &Pmf {
        &self.base
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn map(&self) -> &DependencyMap {
        &self.map
    }

    pub fn targets(&self) -> &TaskTargets {
        &self.targets
    }

    /// Joint PMF of one `(X1, X2)` element pair, indexed by symbol offset
    /// from `symbol_min`.
    pub fn element_joint(&self, copy: bool) -> Result<JointPmf> {
        let p = self.base.probs();
        let n = p.len();
        JointPmf::from_fn(vec![n, n], |i| {
            if copy {
                if i[0] == i[1] {
                    p[i[0]]
                } else {
                    0.0
                }
            } else {
                p[i[0]] * p[i[1]]
            }
        })
    }

    pub fn theoretical_measures(&self) -> SourceMeasures {
        theoretical_measures(&self.base, &self.map)
    }

    /// Draws batch `index`. The stream depends only on `(seed, index)`.
    pub fn sample_batch(&self, n: usize, index: u64) -> Result<SyntheticBatch> {
        if n == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        let p = self.spec.positions();
        let mut rng = stream_rng(self.spec.seed, index.wrapping_add(2));
        let lo = self.spec.symbol_min;
        let mut x1 = vec![0i32; n * p];
        let mut x2 = vec![0i32; n * p];
        for s in 0..n {
            for (j, &copy) in self.map.copies.iter().enumerate() {
                let a = lo + self.sampler.sample(&mut rng) as i32;
                let b = if copy {
                    a
                } else {
                    lo + self.sampler.sample(&mut rng) as i32
                };
                x1[s * p + j] = a;
                x2[s * p + j] = b;
            }
        }
        let z1 = self.project(&self.targets.a1, &x1);
        let z2 = self.project(&self.targets.a2, &x2);
        Ok(SyntheticBatch {
            n,
            positions: p,
            x1,
            x2,
            z1,
            z2,
        })
    }

    fn project(&self, a: &SquareMatrix, x: &[i32]) -> Vec<f64> {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut z = vec![0.0; xf.len()];
        TaskTargets::apply_blocks(a, &xf, &mut z);
        z
    }
}

/// Per-element measures of the mixture of a diagonal joint (copy
/// positions) and a product joint (independent positions).
pub fn theoretical_measures(base: &Pmf, map: &DependencyMap) -> SourceMeasures {
    let h = base.entropy();
    let c = map.copy_fraction();
    SourceMeasures {
        h_joint: c * h + (1.0 - c) * 2.0 * h,
        h_sum: 2.0 * h,
        mi: c * h,
    }
}

/// Label structure of an attribute source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Dependent,
    Independent,
    Mixture,
}

impl std::str::FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dependent" => Ok(Self::Dependent),
            "independent" => Ok(Self::Independent),
            "mixture" => Ok(Self::Mixture),
            _ => Err(Error::arg(format!(
                "unknown attribute kind '{s}' (expected dependent, independent or mixture)"
            ))),
        }
    }
}

/// Number of digit and of color labels.
pub const NUM_LABELS: usize = 10;
/// Mixture targets: joint entropy and mutual information in bits.
pub const MIXTURE_TARGET: (f64, f64) = (5.12, 1.4);
/// Tolerance on the mixture targets.
pub const MIXTURE_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributePmfSpec {
    pub kind: AttributeKind,
    pub joint: JointPmf,
    /// Length of the emitted vectors. Even, at least `2 * NUM_LABELS`.
    /// The first half encodes the digit, the second the color.
    pub embedding_dim: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl AttributePmfSpec {
    pub fn new(kind: AttributeKind, embedding_dim: usize, noise_scale: f64, seed: u64) -> Result<Self> {
        if embedding_dim < 2 * NUM_LABELS || embedding_dim % 2 != 0 {
            return Err(Error::arg(format!(
                "embedding_dim must be even and at least {}, got {embedding_dim}",
                2 * NUM_LABELS
            )));
        }
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::arg(format!("noise_scale must be non-negative, got {noise_scale}")));
        }
        let joint = match kind {
            AttributeKind::Dependent => {
                let mut perm: Vec<usize> = (0..NUM_LABELS).collect();
                perm.shuffle(&mut stream_rng(seed, 0));
                JointPmf::from_fn(vec![NUM_LABELS, NUM_LABELS], |i| {
                    if perm[i[0]] == i[1] {
                        1.0
                    } else {
                        0.0
                    }
                })?
            }
            AttributeKind::Independent => {
                JointPmf::from_fn(vec![NUM_LABELS, NUM_LABELS], |_| 1.0)?
            }
            AttributeKind::Mixture => mixture_joint(MIXTURE_TARGET.0, MIXTURE_TARGET.1, seed)?,
        };
        Ok(Self {
            kind,
            joint,
            embedding_dim,
            noise_scale,
            seed,
        })
    }

    /// `(H(digit, color), I(digit; color))` in bits.
    pub fn measures(&self) -> (f64, f64) {
        let h = self.joint.entropy_of(&[0, 1]).unwrap_or(f64::NAN);
        let i = mutual_information(&self.joint, &[0], &[1]).unwrap_or(f64::NAN);
        (h, i)
    }
}

/// Searches a `10 x 10` joint with a uniform digit marginal whose joint
/// entropy and mutual information hit the targets.
///
/// Each digit is assigned a subset of colors: digits `0..5` use colors
/// `0..5` and digits `5..10` use colors `5..10`, so the palette half is a
/// common part of the two labels. Rows `P(color | digit)` are
/// softmax-parameterized over the subset; gradient descent on the squared
/// target errors runs from a seeded random start.
pub fn mixture_joint(h_target: f64, i_target: f64, seed: u64) -> Result<JointPmf> {
    let n = NUM_LABELS;
    let ln2 = std::f64::consts::LN_2;
    let mut rng = stream_rng(seed, 0);
    let mut theta: Vec<f64> = (0..n * n)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut q = vec![0.0; n * n];
    let allowed = |d: usize, c: usize| 2 * d / n == 2 * c / n;
    let softmax = |theta: &[f64], q: &mut [f64]| {
        for d in 0..n {
            let row = &theta[d * n..(d + 1) * n];
            let m = (0..n)
                .filter(|&c| allowed(d, c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).filter(|&c| allowed(d, c)).map(|c| (row[c] - m).exp()).sum();
            for c in 0..n {
                q[d * n + c] = if allowed(d, c) { (row[c] - m).exp() / z } else { 0.0 };
            }
        }
    };
    let measure = |q: &[f64]| -> (f64, f64, Vec<f64>) {
        let mut col = vec![0.0; n];
        let mut hcond = 0.0;
        for d in 0..n {
            for c in 0..n {
                let p = q[d * n + c];
                col[c] += p / n as f64;
                if p > 0.0 {
                    hcond -= p * p.log2() / n as f64;
                }
            }
        }
        let hc: f64 = col.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
        ((n as f64).log2() + hcond, hc - hcond, col)
    };
    let lr = 0.5;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..50_000 {
        softmax(&theta, &mut q);
        let (h, i, col) = measure(&q);
        let err = (h - h_target).abs() + (i - i_target).abs();
        if err < best.0 {
            best = (err, h, i);
        }
        if (h - h_target).abs() < 1e-9 && (i - i_target).abs() < 1e-9 {
            break;
        }
        // H_joint = log n + Hc, I = H(col) - Hc with Hc = mean_d H(q_d).
        let (eh, ei) = (h - h_target, i - i_target);
        for d in 0..n {
            let mut g = [0.0; NUM_LABELS];
            for c in (0..n).filter(|&c| allowed(d, c)) {
                let p = q[d * n + c].max(1e-300);
                let dhc = -(p.log2() + 1.0 / ln2) / n as f64;
                let dhcol = -(col[c].max(1e-300).log2() + 1.0 / ln2) / n as f64;
                g[c] = 2.0 * eh * dhc + 2.0 * ei * (dhcol - dhc);
            }
            let mean: f64 = (0..n).map(|c| q[d * n + c] * g[c]).sum();
            for c in 0..n {
                theta[d * n + c] -= lr * n as f64 * q[d * n + c] * (g[c] - mean);
            }
        }
    }
    softmax(&theta, &mut q);
    let (h, i, _) = measure(&q);
    if (h - h_target).abs() > MIXTURE_TOL || (i - i_target).abs() > MIXTURE_TOL {
        return Err(Error::Numerical(format!(
            "mixture search reached H = {:.4}, I = {:.4} (targets {h_target}, {i_target})",
            best.1, best.2
        )));
    }
    JointPmf::from_weights(vec![n, n], q)
}

/// One batch of attribute vectors, `n x embedding_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBatch {
    pub n: usize,
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub digits: Vec<usize>,
    pub colors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttributeSource {
    spec: AttributePmfSpec,
    sampler: WeightedIndex<f64>,
}

impl AttributeSource {
    pub fn new(spec: AttributePmfSpec) -> Result<Self> {
        let sampler = WeightedIndex::new(spec.joint.probs())
            .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        Ok(Self { spec, sampler })
    }

    pub fn spec(&self) -> &AttributePmfSpec {
        &self.spec
    }

    /// Draws batch `index`. The stream depends only on `(seed, index)`.
    pub fn sample_batch(&self, n: usize, index: u64) -> Result<AttributeBatch> {
        if n == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        let dim = self.spec.embedding_dim;
        let half = dim / 2;
        let mut rng = stream_rng(self.spec.seed, index.wrapping_add(2));
        let mut inputs = Vec::with_capacity(n * dim);
        let mut digits = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for _ in 0..n {
            let cell = self.sampler.sample(&mut rng);
            let (d, c) = (cell / NUM_LABELS, cell % NUM_LABELS);
            digits.push(d);
            colors.push(c);
            for j in 0..dim {
                let hot = (j < half && j == d) || (j >= half && j - half == c);
                let noise: f64 = rng.sample(StandardNormal);
                inputs.push(if hot { 1.0 } else { 0.0 } + self.spec.noise_scale * noise);
            }
        }
        Ok(AttributeBatch {
            n,
            dim,
            inputs,
            digits,
            colors,
        })
    }
}

/// Nearest one-hot decoding of one attribute vector: the argmax of each
/// half's first `NUM_LABELS` coordinates.
pub fn oracle_labels(v: &[f64]) -> (usize, usize) {
    let half = v.len() / 2;
    let argmax = |s: &[f64]| {
        s.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    (argmax(&v[..NUM_LABELS]), argmax(&v[half..half + NUM_LABELS]))
}
