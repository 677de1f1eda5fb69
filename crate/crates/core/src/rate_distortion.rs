//! Blahut-Arimoto solvers for marginal, joint and conditional
//! rate-distortion functions.
//!
//! Every solver is parameterized by a slope `s <= 0` (bits per unit of
//! distortion). The update is the usual alternating one,
//! `Q(z|x) ∝ q(z) 2^{s d(x,z)}` followed by `q = Σ_x p(x) Q(z|x)`, and
//! stops when the gap between the achieved rate and the dual lower bound
//! `s D + Σ_x p(x) log 1/A_x - max_z log c(z)` drops below `tol`.
//!
//! Two slopes get special treatment:
//! * `s = 0` pins the reproduction to the single symbol minimizing the
//!   expected distortion, i.e. the zero-rate end of the curve;
//! * `s = -∞` restricts each row to its minimal-distortion reproductions,
//!   i.e. the lowest achievable distortion with the least rate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::{JointPmf, Pmf, LOG_FLOOR};

/// Non-negative distortion table indexed by (source symbol, reproduction
/// symbol), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionMatrix {
    rows: usize,
    cols: usize,
    d: Vec<f64>,
}

impl DistortionMatrix {
    pub fn new(rows: usize, cols: usize, d: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg("distortion matrix needs at least one row and column"));
        }
        if d.len() != rows * cols {
            return Err(Error::ShapeMismatch { left: vec![rows, cols], right: vec![d.len()] });
        }
        if let Some(v) = d.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg(format!("distortion entries must be finite and >= 0, got {v}")));
        }
        Ok(Self { rows, cols, d })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let d = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, d)
    }

    pub fn hamming(n: usize) -> Self {
        Self::from_fn(n, n, |x, z| (x != z) as u8 as f64).expect("n > 0")
    }

    /// Squared error between symbol ids, reproduction alphabet equal to
    /// the source alphabet.
    pub fn squared_error(n: usize) -> Self {
        Self::from_fn(n, n, |x, z| (x as f64 - z as f64).powi(2)).expect("n > 0")
    }

    /// Squared error between arbitrary symbol values.
    pub fn squared_error_values(source: &[f64], reproduction: &[f64]) -> Result<Self> {
        Self::from_fn(source.len(), reproduction.len(), |x, z| (source[x] - reproduction[z]).powi(2))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, x: usize, z: usize) -> f64 {
        self.d[x * self.cols + z]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.d[x * self.cols..(x + 1) * self.cols]
    }

    fn row_min(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Reproduction symbol minimizing expected distortion under `p`
    /// (lowest index on ties).
    fn best_constant(&self, p: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for z in 0..self.cols {
            let e: f64 = (0..self.rows).map(|x| p[x] * self.get(x, z)).sum();
            if e < best.0 {
                best = (e, z);
            }
        }
        best.1
    }
}

/// Solver options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BaOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 50_000 }
    }
}

impl BaOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::arg(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One point of a rate-distortion curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub rate: f64,
    pub distortion: f64,
    pub lagrange_s: f64,
    pub converged: bool,
    /// Dual lower bound on the rate-distortion function at `distortion`.
    pub lower_bound: f64,
}

/// A set of (rate, distortion) points sorted by distortion ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RDCurve {
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    /// Builds a curve from arbitrary points, sorting by distortion.
    pub fn from_points(mut points: Vec<RDPoint>) -> Self {
        points.sort_by(|a, b| {
            a.distortion.total_cmp(&b.distortion).then(b.rate.total_cmp(&a.rate))
        });
        Self { points }
    }

    /// Builds a curve from (rate, distortion) pairs of an empirical codec.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::from_points(
            pairs
                .iter()
                .map(|&(rate, distortion)| RDPoint {
                    rate,
                    distortion,
                    lagrange_s: f64::NAN,
                    converged: true,
                    lower_bound: f64::NAN,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `slope,rate_bits,distortion,converged`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slope,rate_bits,distortion,converged\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{}", p.lagrange_s, p.rate, p.distortion, p.converged);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "slope,rate_bits,distortion,converged" => {}
            other => return Err(Error::Parse(format!("unexpected curve header {other:?}"))),
        }
        let mut points = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("expected 4 fields in `{line}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
            let converged =
                f[3].parse::<bool>().map_err(|e| Error::Parse(format!("`{}`: {e}", f[3])))?;
            points.push(RDPoint {
                lagrange_s: num(f[0])?,
                rate: num(f[1])?,
                distortion: num(f[2])?,
                converged,
                lower_bound: f64::NAN,
            });
        }
        Ok(Self::from_points(points))
    }
}

/// A flattened Blahut-Arimoto instance: source PMF, per-cell log2 weights
/// and one distortion table per task over the same cells.
#[derive(Debug, Clone)]
pub struct BaProblem {
    source: Vec<f64>,
    rows: usize,
    cols: usize,
    /// `2^{L(x,z) - max_z L(x,z)}`, zero on excluded cells.
    weights: Vec<f64>,
    /// `L(x,z)` on cells, `-inf` on excluded ones.
    log_weights: Vec<f64>,
    distortions: Vec<Vec<f64>>,
    slopes: Vec<f64>,
}

/// Result of one Blahut-Arimoto run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaSolution {
    pub rate: f64,
    /// Expected distortion of every task.
    pub distortions: Vec<f64>,
    pub slopes: Vec<f64>,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `P(z|x)`, row-major `rows × cols`.
    pub conditional: Vec<f64>,
    /// Reproduction marginal `Σ_x p(x) P(z|x)`.
    pub output: Vec<f64>,
}

impl BaSolution {
    pub fn lower_bound(&self) -> f64 {
        self.rate - self.gap
    }

    fn rd_point(&self) -> RDPoint {
        RDPoint {
            rate: self.rate,
            distortion: self.distortions[0],
            lagrange_s: self.slopes[0],
            converged: self.converged,
            lower_bound: self.lower_bound(),
        }
    }
}

fn check_slope(s: f64) -> Result<()> {
    if s.is_nan() || s > 0.0 {
        return Err(Error::arg(format!("slope must be <= 0, got {s}")));
    }
    Ok(())
}

/// `max_z log c(z) - Σ_z q(z) c(z) log c(z)`.
fn gap_of(q: &[f64], c: &[f64]) -> f64 {
    let mut max_log = f64::NEG_INFINITY;
    let mut mean = 0.0;
    for (q, c) in q.iter().zip(c) {
        if *c > 0.0 {
            let l = c.log2();
            max_log = max_log.max(l);
            mean += q * c * l;
        }
    }
    (max_log - mean).max(0.0)
}

/// Log weight contributed by one task: `s d`, with the two endpoint
/// conventions described in the module docs.
fn task_term(s: f64, d: f64, row_min: f64, col_allowed: bool) -> f64 {
    if s == 0.0 {
        if col_allowed {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else if s == f64::NEG_INFINITY {
        if d <= row_min {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        s * d
    }
}

impl BaProblem {
    fn from_log_weights(
        source: Vec<f64>,
        cols: usize,
        log_weights: Vec<f64>,
        distortions: Vec<Vec<f64>>,
        slopes: Vec<f64>,
    ) -> Self {
        let rows = source.len();
        let mut weights = vec![0.0; rows * cols];
        for x in 0..rows {
            let row = &log_weights[x * cols..(x + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for z in 0..cols {
                weights[x * cols + z] = (row[z] - m).exp2();
            }
        }
        Self { source, rows, cols, weights, log_weights, distortions, slopes }
    }

    /// Single-source problem `R_X(D)`.
    pub fn marginal(source: &Pmf, d: &DistortionMatrix, slope: f64) -> Result<Self> {
        check_slope(slope)?;
        if d.rows() != source.len() {
            return Err(Error::ShapeMismatch { left: vec![source.len()], right: vec![d.rows(), d.cols()] });
        }
        let p = source.probs();
        let best = d.best_constant(p);
        let mut lw = Vec::with_capacity(d.rows() * d.cols());
        for x in 0..d.rows() {
            let rm = d.row_min(x);
            for z in 0..d.cols() {
                lw.push(task_term(slope, d.get(x, z), rm, z == best));
            }
        }
        let dist = (0..d.rows() * d.cols()).map(|i| d.d[i]).collect();
        Ok(Self::from_log_weights(p.to_vec(), d.cols(), lw, vec![dist], vec![slope]))
    }

    /// Two-task problem `R_{X1,X2}(D1, D2)` over the product reproduction
    /// alphabet, with cells flattened as `x = x1 * n2 + x2` and
    /// `z = z1 * m2 + z2`.
    pub fn joint(
        joint: &JointPmf,
        d1: &DistortionMatrix,
        d2: &DistortionMatrix,
        slopes: (f64, f64),
    ) -> Result<Self> {
        check_slope(slopes.0)?;
        check_slope(slopes.1)?;
        let shape = joint.shape();
        if shape.len() != 2 || shape[0] != d1.rows() || shape[1] != d2.rows() {
            return Err(Error::ShapeMismatch {
                left: shape.to_vec(),
                right: vec![d1.rows(), d2.rows()],
            });
        }
        let (n1, n2, m1, m2) = (d1.rows(), d2.rows(), d1.cols(), d2.cols());
        let best1 = d1.best_constant(&joint.marginal_table(&[0]));
        let best2 = d2.best_constant(&joint.marginal_table(&[1]));
        let cells = n1 * n2 * m1 * m2;
        let mut lw = Vec::with_capacity(cells);
        let mut dist1 = Vec::with_capacity(cells);
        let mut dist2 = Vec::with_capacity(cells);
        for x1 in 0..n1 {
            for x2 in 0..n2 {
                let (rm1, rm2) = (d1.row_min(x1), d2.row_min(x2));
                for z1 in 0..m1 {
                    for z2 in 0..m2 {
                        let (a, b) = (d1.get(x1, z1), d2.get(x2, z2));
                        lw.push(
                            task_term(slopes.0, a, rm1, z1 == best1)
                                + task_term(slopes.1, b, rm2, z2 == best2),
                        );
                        dist1.push(a);
                        dist2.push(b);
                    }
                }
            }
        }
        Ok(Self::from_log_weights(
            joint.probs().to_vec(),
            m1 * m2,
            lw,
            vec![dist1, dist2],
            vec![slopes.0, slopes.1],
        ))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Runs the iteration from the uniform reproduction marginal, or from
    /// `init` when given. Zero entries of `init` stay zero, so a start on
    /// a face of the simplex only converges if that face holds an optimum.
    pub fn solve(&self, init: Option<&[f64]>, opts: &BaOptions) -> Result<BaSolution> {
        opts.validate()?;
        let (rows, cols) = (self.rows, self.cols);
        let mut q = match init {
            Some(q0) => {
                if q0.len() != cols {
                    return Err(Error::ShapeMismatch { left: vec![cols], right: vec![q0.len()] });
                }
                let s: f64 = q0.iter().sum();
                if !(s > 0.0) || q0.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::InvalidDistribution("initial marginal".into()));
                }
                q0.iter().map(|v| v / s).collect::<Vec<_>>()
            }
            None => vec![1.0 / cols as f64; cols],
        };
        let p = &self.source;
        let w = &self.weights;
        // Zero-mass columns of the start stay at zero and zero-mass rows do
        // not enter the update, so the loop runs on a compact copy of the
        // weights restricted to both supports.
        let support: Vec<usize> = (0..cols).filter(|&z| q[z] > 0.0).collect();
        let active: Vec<usize> = (0..rows).filter(|&x| p[x] > 0.0).collect();
        let on_face = support.len() < cols;
        let k = support.len();
        let wk: Vec<f64> = active
            .iter()
            .flat_map(|&x| support.iter().map(move |&z| w[x * cols + z]))
            .collect();
        let pk: Vec<f64> = active.iter().map(|&x| p[x]).collect();
        let mut qk: Vec<f64> = support.iter().map(|&z| q[z]).collect();
        let mut ak = vec![0.0; active.len()];
        let mut ck = vec![0.0; k];
        let mut gap = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations <= opts.max_iters {
            for (i, row) in wk.chunks_exact(k).enumerate() {
                ak[i] = row.iter().zip(&qk).map(|(w, q)| w * q).sum();
                if ak[i] <= 0.0 {
                    return Ok(self.infeasible_start(q, iterations));
                }
            }
            ck.iter_mut().for_each(|v| *v = 0.0);
            for (i, row) in wk.chunks_exact(k).enumerate() {
                let f = pk[i] / ak[i];
                for (c, w) in ck.iter_mut().zip(row) {
                    *c += f * w;
                }
            }
            // The gap never exceeds log2 max c, and the exact value needs
            // one logarithm per column, so it is only evaluated now and then.
            let max_c = ck.iter().copied().fold(0.0, f64::max);
            let check = iterations % 16 == 0 || max_c.log2() < opts.tol || iterations == opts.max_iters;
            if check {
                gap = gap_of(&qk, &ck);
                if gap < opts.tol {
                    converged = true;
                    break;
                }
            }
            if iterations == opts.max_iters {
                break;
            }
            let mut total = 0.0;
            for (q, c) in qk.iter_mut().zip(&ck) {
                *q *= c;
                total += *q;
            }
            // Flushing vanishing mass avoids subnormal arithmetic.
            qk.iter_mut().for_each(|v| *v = if *v < 1e-250 { 0.0 } else { *v / total });
            iterations += 1;
        }
        q.iter_mut().for_each(|v| *v = 0.0);
        for (j, &z) in support.iter().enumerate() {
            q[z] = qk[j];
        }
        let a: Vec<f64> = (0..rows)
            .map(|x| w[x * cols..(x + 1) * cols].iter().zip(&q).map(|(w, q)| w * q).sum())
            .collect();
        if converged && on_face {
            // A face start that is optimal within its face but not globally
            // can never leave the face.
            let mut c = vec![0.0; cols];
            for &x in &active {
                let f = p[x] / a[x];
                for (c, w) in c.iter_mut().zip(&w[x * cols..(x + 1) * cols]) {
                    *c += f * w;
                }
            }
            gap = gap_of(&q, &c);
            converged = gap < opts.tol;
        }
        Ok(self.assemble(&q, &a, gap, converged, iterations))
    }

    fn infeasible_start(&self, q: Vec<f64>, iterations: usize) -> BaSolution {
        BaSolution {
            rate: f64::INFINITY,
            distortions: vec![f64::INFINITY; self.distortions.len()],
            slopes: self.slopes.clone(),
            gap: f64::INFINITY,
            converged: false,
            iterations,
            conditional: vec![0.0; self.rows * self.cols],
            output: q,
        }
    }

    fn assemble(&self, q: &[f64], a: &[f64], gap: f64, converged: bool, iterations: usize) -> BaSolution {
        let (rows, cols) = (self.rows, self.cols);
        let p = &self.source;
        let mut cond = vec![0.0; rows * cols];
        let mut output = vec![0.0; cols];
        for x in 0..rows {
            let row = &mut cond[x * cols..(x + 1) * cols];
            if a[x] > 0.0 {
                for z in 0..cols {
                    row[z] = q[z] * self.weights[x * cols + z] / a[x];
                }
            } else {
                // Unreachable source symbol: any row is fine, pick the
                // best allowed cell so the table stays a valid conditional.
                let lw = &self.log_weights[x * cols..(x + 1) * cols];
                let best = (0..cols).max_by(|&i, &j| lw[i].total_cmp(&lw[j]).then(j.cmp(&i))).unwrap_or(0);
                row[best] = 1.0;
            }
            for z in 0..cols {
                output[z] += p[x] * row[z];
            }
        }
        let mut rate = 0.0;
        for x in 0..rows {
            if p[x] < LOG_FLOOR {
                continue;
            }
            for z in 0..cols {
                let v = cond[x * cols + z];
                if v >= LOG_FLOOR && output[z] > 0.0 {
                    rate += p[x] * v * (v / output[z]).log2();
                }
            }
        }
        let distortions = self
            .distortions
            .iter()
            .map(|d| {
                (0..rows)
                    .map(|x| p[x] * (0..cols).map(|z| cond[x * cols + z] * d[x * cols + z]).sum::<f64>())
                    .sum()
            })
            .collect();
        BaSolution {
            rate: rate.max(0.0),
            distortions,
            slopes: self.slopes.clone(),
            gap,
            converged,
            iterations,
            conditional: cond,
            output,
        }
    }
}

/// `R_X(D)` at slope `s`.
pub fn ba_marginal(source: &Pmf, d: &DistortionMatrix, slope: f64, opts: &BaOptions) -> Result<RDPoint> {
    Ok(BaProblem::marginal(source, d, slope)?.solve(None, opts)?.rd_point())
}

/// Joint solution with the optimizing conditional retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRdResult {
    pub rate: f64,
    pub d1: f64,
    pub d2: f64,
    pub slopes: (f64, f64),
    pub converged: bool,
    pub gap: f64,
    /// Source axis sizes `(n1, n2)` and reproduction sizes `(m1, m2)`.
    pub source_shape: (usize, usize),
    pub reproduction_shape: (usize, usize),
    /// `P(z1, z2 | x1, x2)`, row-major over `(x1, x2)` then `(z1, z2)`.
    pub conditional: Vec<f64>,
}

impl JointRdResult {
    fn from_solution(sol: BaSolution, source_shape: (usize, usize), reproduction_shape: (usize, usize)) -> Self {
        Self {
            rate: sol.rate,
            d1: sol.distortions[0],
            d2: sol.distortions[1],
            slopes: (sol.slopes[0], sol.slopes[1]),
            converged: sol.converged,
            gap: sol.gap,
            source_shape,
            reproduction_shape,
            conditional: sol.conditional,
        }
    }

    /// Full joint over `(X1, X2, Z1, Z2)`.
    pub fn full_joint(&self, source: &JointPmf) -> Result<JointPmf> {
        let (n1, n2) = self.source_shape;
        let (m1, m2) = self.reproduction_shape;
        let cols = m1 * m2;
        let p = source.probs();
        let probs = (0..n1 * n2 * cols).map(|i| p[i / cols] * self.conditional[i]).collect();
        JointPmf::from_weights(vec![n1, n2, m1, m2], probs)
    }
}

/// `R_{X1,X2}(D1, D2)` at slopes `(s1, s2)` with additive task distortions.
pub fn ba_joint(
    joint: &JointPmf,
    d1: &DistortionMatrix,
    d2: &DistortionMatrix,
    slopes: (f64, f64),
    opts: &BaOptions,
) -> Result<JointRdResult> {
    let sol = BaProblem::joint(joint, d1, d2, slopes)?.solve(None, opts)?;
    Ok(JointRdResult::from_solution(
        sol,
        (d1.rows(), d2.rows()),
        (d1.cols(), d2.cols()),
    ))
}

/// `R_{X|S}(D)` with side information `S` known at both ends, solved as
/// one problem per side symbol at a common slope and averaged over the
/// side marginal.
pub fn ba_conditional(
    joint: &JointPmf,
    target_axis: usize,
    side_axes: &[usize],
    d: &DistortionMatrix,
    slope: f64,
    opts: &BaOptions,
) -> Result<RDPoint> {
    if side_axes.is_empty() || side_axes.contains(&target_axis) {
        return Err(Error::arg("side axes must be non-empty and exclude the target axis"));
    }
    let mut axes = side_axes.to_vec();
    axes.push(target_axis);
    let table = joint.marginalize(&axes)?;
    let nx = joint.shape()[target_axis];
    let probs = table.probs();
    let results = probs
        .par_chunks(nx)
        .map(|row| {
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                return Ok(None);
            }
            let cond = Pmf::from_weights(row.to_vec())?;
            Ok(Some((mass, ba_marginal(&cond, d, slope, opts)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = RDPoint { rate: 0.0, distortion: 0.0, lagrange_s: slope, converged: true, lower_bound: 0.0 };
    for (mass, pt) in results.into_iter().flatten() {
        out.rate += mass * pt.rate;
        out.distortion += mass * pt.distortion;
        out.lower_bound += mass * pt.lower_bound;
        out.converged &= pt.converged;
    }
    Ok(out)
}

/// Evaluates `solver` at every distinct slope (in parallel) and assembles
/// a curve sorted by distortion. Points whose rate exceeds the rate of a
/// lower-distortion point by more than `tol` are dropped.
pub fn sweep_curve<F>(solver: F, slopes: &[f64], tol: f64) -> Result<RDCurve>
where
    F: Fn(f64) -> Result<RDPoint> + Sync,
{
    if slopes.is_empty() {
        return Err(Error::arg("empty slope list"));
    }
    let mut s = slopes.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s.dedup();
    let points = s.par_iter().map(|&s| solver(s)).collect::<Result<Vec<_>>>()?;
    let curve = RDCurve::from_points(points);
    let mut kept: Vec<RDPoint> = Vec::with_capacity(curve.len());
    for p in curve.points {
        match kept.last() {
            Some(prev) if p.rate > prev.rate + tol => continue,
            _ => kept.push(p),
        }
    }
    Ok(RDCurve { points: kept })
}

/// Slope at which the `R_X(D)` solver reaches distortion `target` (the
/// point returned has distortion `<= target` up to solver precision).
pub fn ba_marginal_at_distortion(
    source: &Pmf,
    d: &DistortionMatrix,
    target: f64,
    opts: &BaOptions,
) -> Result<BaSolution> {
    let solve = |s: f64| BaProblem::marginal(source, d, s)?.solve(None, opts);
    let zero = solve(0.0)?;
    if target >= zero.distortions[0] {
        return Ok(zero);
    }
    let floor = solve(f64::NEG_INFINITY)?;
    if target < floor.distortions[0] - 1e-12 {
        return Err(Error::Infeasible(format!(
            "distortion target {target} is below the achievable minimum {}",
            floor.distortions[0]
        )));
    }
    let mut lo = -1.0;
    loop {
        let sol = solve(lo)?;
        if sol.distortions[0] <= target {
            break;
        }
        lo *= 2.0;
        if lo < -1e6 {
            return Ok(floor);
        }
    }
    let mut hi = lo / 2.0;
    if lo == -1.0 {
        hi = 0.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if solve(mid)?.distortions[0] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(lo)
}

/// Binary entropy in bits.
pub fn h2(p: f64) -> f64 {
    crate::pmf::neg_plogp(p) + crate::pmf::neg_plogp(1.0 - p)
}
