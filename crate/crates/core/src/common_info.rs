//! Common-information measures on small discrete sources.
//!
//! * Gács-Körner common information, exact, from the connected components
//!   of the support graph of `P(X1, X2)`.
//! * Wyner common information by a penalty method over `P(U | X1, X2)`.
//! * Lossy bound checks: the transmit set (optimal joint encoders) and the
//!   receive set (pairs of optimal marginal encoders) are enumerated by
//!   running Blahut-Arimoto from every point of a probability grid, and
//!   interaction information is compared across both sets.
//! * The entropy-form Gray-Wyner objective over deterministic mappings.

use petgraph::unionfind::UnionFind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::{interaction_information, table_entropy, JointPmf, LOG_FLOOR};
use crate::rate_distortion::{BaOptions, BaProblem, DistortionMatrix};

/// How a common-information value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactDecomposition,
    Exhaustive,
    Alternating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonInfoResult {
    pub value_bits: f64,
    /// Joint over `(X1, X2, aux)`.
    pub witness: JointPmf,
    pub aux_alphabet_size: usize,
    pub method: Method,
    /// False when no candidate met the conditional-independence tolerance;
    /// `value_bits` is then only an upper bound.
    pub feasible: bool,
    /// `I(X1; X2 | aux)` of the witness.
    pub residual_cmi: f64,
}

fn two_axis(joint: &JointPmf) -> Result<(usize, usize)> {
    match joint.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::arg(format!("expected a 2-axis joint, got shape {s:?}"))),
    }
}

/// Component label of every row (`0..n1`) and column (`n1..n1+n2`) of
/// the support graph of a 2-axis table, relabelled in order of first
/// appearance.
fn support_components(p: &[f64], n1: usize, n2: usize, mut link: impl FnMut(&mut UnionFind<usize>)) -> Vec<usize> {
    let mut uf = UnionFind::new(n1 + n2);
    for a in 0..n1 {
        for b in 0..n2 {
            if p[a * n2 + b] >= LOG_FLOOR {
                uf.union(a, n1 + b);
            }
        }
    }
    link(&mut uf);
    let roots = uf.into_labeling();
    let mut seen: Vec<usize> = Vec::new();
    roots
        .iter()
        .map(|r| match seen.iter().position(|s| s == r) {
            Some(i) => i,
            None => {
                seen.push(*r);
                seen.len() - 1
            }
        })
        .collect()
}

/// Gács-Körner common information of a 2-axis joint.
pub fn gk_common_information_lossless(joint: &JointPmf) -> Result<CommonInfoResult> {
    let (n1, n2) = two_axis(joint)?;
    let p = joint.probs();
    let labels = support_components(p, n1, n2, |_| {});
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut mass = vec![0.0; k];
    let mut w = vec![0.0; n1 * n2 * k];
    for a in 0..n1 {
        for b in 0..n2 {
            let v = labels[a];
            mass[v] += p[a * n2 + b];
            w[(a * n2 + b) * k + v] = p[a * n2 + b];
        }
    }
    Ok(CommonInfoResult {
        value_bits: table_entropy(&mass).max(0.0),
        witness: JointPmf::from_weights(vec![n1, n2, k], w)?,
        aux_alphabet_size: k,
        method: Method::ExactDecomposition,
        feasible: true,
        residual_cmi: 0.0,
    })
}

/// Settings of the penalty method used for Wyner's common information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WynerOptions {
    /// Auxiliary alphabet size; `None` uses the product of the source
    /// alphabet sizes.
    pub aux_size: Option<usize>,
    pub restarts: usize,
    /// Penalty weights applied in sequence to `I(X1; X2 | U)`.
    pub penalties: Vec<f64>,
    pub iters_per_stage: usize,
    pub lr: f64,
    pub init_scale: f64,
    /// Conditional-independence tolerance for a feasible decomposition.
    pub tol: f64,
    pub seed: u64,
}

impl Default for WynerOptions {
    fn default() -> Self {
        Self {
            aux_size: None,
            restarts: 32,
            penalties: vec![1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1e3, 3e3, 1e4, 3e4, 1e5],
            iters_per_stage: 1500,
            lr: 0.05,
            init_scale: 2.0,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// `min_U I(X; U) + mu I(Z1; Z2 | U)` over `P(U | Z1, Z2)` with the Markov
/// chain `X - (Z1, Z2) - U`. When `pxz` is `None`, `X = (Z1, Z2)`.
struct AuxProblem<'a> {
    pz: &'a [f64],
    m1: usize,
    m2: usize,
    /// `P(x, z)`, row-major `nx × (m1 m2)`.
    pxz: Option<&'a [f64]>,
    nx: usize,
    aux: usize,
}

struct AuxEval {
    ixu: f64,
    cmi: f64,
}

impl AuxProblem<'_> {
    fn nz(&self) -> usize {
        self.m1 * self.m2
    }

    fn marginals(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (m1, m2, k) = (self.m1, self.m2, self.aux);
        let mut mu = vec![0.0; k];
        let mut mau = vec![0.0; m1 * k];
        let mut mbu = vec![0.0; m2 * k];
        for a in 0..m1 {
            for b in 0..m2 {
                let z = a * m2 + b;
                for u in 0..k {
                    let m = self.pz[z] * f[z * k + u];
                    mu[u] += m;
                    mau[a * k + u] += m;
                    mbu[b * k + u] += m;
                }
            }
        }
        (mu, mau, mbu)
    }

    fn pxu(&self, f: &[f64]) -> Vec<f64> {
        let (nz, k) = (self.nz(), self.aux);
        match self.pxz {
            None => (0..nz * k).map(|i| self.pz[i / k] * f[i]).collect(),
            Some(pxz) => {
                let mut out = vec![0.0; self.nx * k];
                for x in 0..self.nx {
                    for z in 0..nz {
                        let w = pxz[x * nz + z];
                        if w > 0.0 {
                            for u in 0..k {
                                out[x * k + u] += w * f[z * k + u];
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn evaluate(&self, f: &[f64]) -> AuxEval {
        let k = self.aux;
        let (mu, mau, mbu) = self.marginals(f);
        let pxu = self.pxu(f);
        let nx = pxu.len() / k;
        let px: Vec<f64> = (0..nx).map(|x| pxu[x * k..(x + 1) * k].iter().sum()).collect();
        let ixu = table_entropy(&px) + table_entropy(&mu) - table_entropy(&pxu);
        let m: Vec<f64> = (0..self.nz() * k).map(|i| self.pz[i / k] * f[i]).collect();
        let cmi = table_entropy(&mau) + table_entropy(&mbu) - table_entropy(&m) - table_entropy(&mu);
        AuxEval { ixu: ixu.max(0.0), cmi: cmi.max(0.0) }
    }

    /// Gradient (in nats, up to a positive factor) of the penalized
    /// objective with respect to the logits `theta`, with `f` the
    /// row-wise softmax of `theta`.
    fn logit_gradient(&self, f: &[f64], mu_pen: f64, grad: &mut [f64]) {
        let (m2, k, nz) = (self.m2, self.aux, self.nz());
        let ln = |v: f64| v.max(1e-300).ln();
        let (mu, mau, mbu) = self.marginals(f);
        let pxu = self.pxu(f);
        let mut g = vec![0.0; nz * k];
        match self.pxz {
            None => {
                for z in 0..nz {
                    for u in 0..k {
                        g[z * k + u] = self.pz[z] * (ln(pxu[z * k + u]) - ln(mu[u]));
                    }
                }
            }
            Some(pxz) => {
                for z in 0..nz {
                    for u in 0..k {
                        let mut s = -self.pz[z] * ln(mu[u]);
                        for x in 0..self.nx {
                            let w = pxz[x * nz + z];
                            if w > 0.0 {
                                s += w * ln(pxu[x * k + u]);
                            }
                        }
                        g[z * k + u] = s;
                    }
                }
            }
        }
        for z in 0..nz {
            let (a, b) = (z / m2, z % m2);
            for u in 0..k {
                let m = self.pz[z] * f[z * k + u];
                g[z * k + u] += mu_pen
                    * self.pz[z]
                    * (ln(m) + ln(mu[u]) - ln(mau[a * k + u]) - ln(mbu[b * k + u]));
            }
        }
        for z in 0..nz {
            let row = &f[z * k..(z + 1) * k];
            let gr = &g[z * k..(z + 1) * k];
            let mean: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
            for u in 0..k {
                grad[z * k + u] = row[u] * (gr[u] - mean);
            }
        }
    }

    fn softmax_rows(&self, theta: &[f64], f: &mut [f64]) {
        let k = self.aux;
        for (t, o) in theta.chunks(k).zip(f.chunks_mut(k)) {
            let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (oi, ti) in o.iter_mut().zip(t) {
                *oi = (ti - m).exp();
                s += *oi;
            }
            o.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// One restart of the penalty schedule, returning the final `P(U|Z)`.
    fn run(&self, opts: &WynerOptions, restart: u64) -> Vec<f64> {
        let n = self.nz() * self.aux;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(restart);
        let normal = Normal::new(0.0, opts.init_scale).expect("positive scale");
        let mut theta: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mut f = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-12);
        let mut t = 0i32;
        for &pen in &opts.penalties {
            for _ in 0..opts.iters_per_stage {
                self.softmax_rows(&theta, &mut f);
                self.logit_gradient(&f, pen, &mut grad);
                t += 1;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for i in 0..n {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    theta[i] -= opts.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
        self.softmax_rows(&theta, &mut f);
        f
    }

    /// Deterministic candidates: `U` constant, `U = Z1`, `U = Z2`, `U = Z`,
    /// each included when the auxiliary alphabet is large enough.
    fn deterministic_candidates(&self) -> Vec<Vec<f64>> {
        let (m1, m2, k, nz) = (self.m1, self.m2, self.aux, self.nz());
        let mut out = Vec::new();
        let mut push = |label: &dyn Fn(usize, usize) -> usize, size: usize| {
            if size <= k {
                let mut f = vec![0.0; nz * k];
                for a in 0..m1 {
                    for b in 0..m2 {
                        f[(a * m2 + b) * k + label(a, b)] = 1.0;
                    }
                }
                out.push(f);
            }
        };
        push(&|_, _| 0, 1);
        push(&|a, _| a, m1);
        push(&|_, b| b, m2);
        push(&|a, b| a * m2 + b, nz);
        out
    }

    /// Best candidate under `score`, scanning deterministic candidates
    /// first and then every restart in order; ties keep the earlier one.
    fn search(&self, opts: &WynerOptions) -> Vec<(Vec<f64>, AuxEval)> {
        let mut cands: Vec<Vec<f64>> = self.deterministic_candidates();
        let runs: Vec<Vec<f64>> =
            (0..opts.restarts as u64).into_par_iter().map(|r| self.run(opts, r)).collect();
        cands.extend(runs);
        cands
            .into_iter()
            .map(|f| {
                let e = self.evaluate(&f);
                (f, e)
            })
            .collect()
    }
}

/// Wyner's common information of a 2-axis joint.
pub fn wyner_common_information_lossless(joint: &JointPmf, opts: &WynerOptions) -> Result<CommonInfoResult> {
    let (n1, n2) = two_axis(joint)?;
    let aux = opts.aux_size.unwrap_or(n1 * n2);
    if aux == 0 {
        return Err(Error::arg("aux_size must be at least 1"));
    }
    if !(opts.tol > 0.0) || opts.penalties.is_empty() {
        return Err(Error::arg("tol must be positive and the penalty schedule non-empty"));
    }
    let problem = AuxProblem { pz: joint.probs(), m1: n1, m2: n2, pxz: None, nx: n1 * n2, aux };
    let cands = problem.search(opts);
    let best_feasible = pick(&cands, |e| (e.cmi < opts.tol).then_some(e.ixu));
    let (idx, feasible) = match best_feasible {
        Some(i) => (i, true),
        None => (pick(&cands, |e| Some(e.ixu + e.cmi)).expect("non-empty"), false),
    };
    let (f, e) = &cands[idx];
    let p = joint.probs();
    let w: Vec<f64> = (0..n1 * n2 * aux).map(|i| p[i / aux] * f[i]).collect();
    Ok(CommonInfoResult {
        value_bits: if feasible { e.ixu } else { e.ixu + e.cmi },
        witness: JointPmf::from_weights(vec![n1, n2, aux], w)?,
        aux_alphabet_size: aux,
        method: Method::Alternating,
        feasible,
        residual_cmi: e.cmi,
    })
}

fn pick(cands: &[(Vec<f64>, AuxEval)], score: impl Fn(&AuxEval) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, e)) in cands.iter().enumerate() {
        if let Some(s) = score(e) {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// All points of the simplex in `dim` dimensions with coordinates that
/// are multiples of `1/grid`, in lexicographic order of the counts.
pub fn simplex_grid(dim: usize, grid: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; dim];
    fn rec(i: usize, left: usize, counts: &mut Vec<usize>, grid: usize, out: &mut Vec<Vec<f64>>) {
        let dim = counts.len();
        if i + 1 == dim {
            counts[i] = left;
            out.push(counts.iter().map(|&c| c as f64 / grid as f64).collect());
            return;
        }
        for c in (0..=left).rev() {
            counts[i] = c;
            rec(i + 1, left - c, counts, grid, out);
        }
    }
    if dim > 0 && grid > 0 {
        rec(0, grid, &mut counts, grid, &mut out);
    }
    out
}

/// Number of points of [`simplex_grid`]: `C(grid + dim - 1, dim - 1)`.
pub fn simplex_grid_size(dim: usize, grid: usize) -> Option<u128> {
    if dim == 0 {
        return Some(0);
    }
    let (n, k) = ((grid + dim - 1) as u128, (dim - 1) as u128);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul(n - i)? / (i + 1);
    }
    Some(c)
}

/// Distortion operating point of a lossy bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossyTarget {
    /// Use the distortions reached by the joint solver at these slopes.
    Slopes(f64, f64),
    /// Explicit `(D1, D2)`; the joint slopes are found by search.
    Distortions(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossyOptions {
    pub grid: usize,
    /// Rate and distortion tolerance for membership in either set.
    pub set_tol: f64,
    pub ba: BaOptions,
    pub wyner: WynerOptions,
}

impl Default for LossyOptions {
    fn default() -> Self {
        Self {
            grid: 8,
            set_tol: 1e-6,
            ba: BaOptions { tol: 1e-10, max_iters: 20_000 },
            wyner: WynerOptions {
                restarts: 4,
                iters_per_stage: 300,
                tol: 1e-7,
                ..WynerOptions::default()
            },
        }
    }
}

/// One achieving tuple, stored as the full joint over `(X1, X2, Z1, Z2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AchievingTuple {
    pub joint: JointPmf,
    pub rate: f64,
    pub d1: f64,
    pub d2: f64,
    pub interaction_information: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleSets {
    pub transmit: Vec<AchievingTuple>,
    pub receive: Vec<AchievingTuple>,
    /// Receive-set marginal encoders, kept for the Gács-Körner search.
    receive_pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub d1: f64,
    pub d2: f64,
    pub slopes: (f64, f64),
    pub joint_rate: f64,
    pub marginal_rates: (f64, f64),
    /// Number of solver starts evaluated.
    pub enumerated: usize,
}

fn dedup_key(v: &[f64]) -> Vec<i64> {
    v.iter().map(|x| (x * 1e7).round() as i64).collect()
}

fn push_unique<T>(seen: &mut Vec<Vec<i64>>, key: Vec<i64>, items: &mut Vec<T>, item: T) {
    if !seen.contains(&key) {
        seen.push(key);
        items.push(item);
    }
}

/// Joint slopes reaching `(D1, D2)` by alternating coordinate bisection.
fn joint_slopes_for(
    joint: &JointPmf,
    d1: &DistortionMatrix,
    d2: &DistortionMatrix,
    targets: (f64, f64),
    ba: &BaOptions,
) -> Result<(f64, f64)> {
    let dist = |s: (f64, f64)| -> Result<(f64, f64)> {
        let sol = BaProblem::joint(joint, d1, d2, s)?.solve(None, ba)?;
        Ok((sol.distortions[0], sol.distortions[1]))
    };
    let floor = dist((f64::NEG_INFINITY, f64::NEG_INFINITY))?;
    for (i, (t, f)) in [(targets.0, floor.0), (targets.1, floor.1)].into_iter().enumerate() {
        if t < f - 1e-12 {
            return Err(Error::Infeasible(format!(
                "distortion target D{} = {t} is below the achievable minimum {f}",
                i + 1
            )));
        }
    }
    let mut s = (-1.0, -1.0);
    // One coordinate at a time, the other held fixed.
    let solve_coord = |s: (f64, f64), which: usize| -> Result<f64> {
        let get = |v: f64| if which == 0 { (v, s.1) } else { (s.0, v) };
        let pick_d = |d: (f64, f64)| if which == 0 { d.0 } else { d.1 };
        let t = if which == 0 { targets.0 } else { targets.1 };
        if pick_d(dist(get(0.0))?) <= t {
            return Ok(0.0);
        }
        if pick_d(dist(get(f64::NEG_INFINITY))?) > t {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lo = -1.0;
        while pick_d(dist(get(lo))?) > t {
            lo *= 2.0;
            if lo < -1e6 {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let mut hi = if lo == -1.0 { 0.0 } else { lo / 2.0 };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if pick_d(dist(get(mid))?) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    };
    for _ in 0..40 {
        s.0 = solve_coord(s, 0)?;
        s.1 = solve_coord(s, 1)?;
        let d = dist(s)?;
        if (d.0 - targets.0).abs() < 1e-9 && (d.1 - targets.1).abs() < 1e-9 {
            break;
        }
    }
    Ok(s)
}

/// Enumerates the transmit set (optimal joint encoders) and the receive
/// set (products of optimal marginal encoders) at one operating point.
pub fn lossy_tuple_enumeration(
    joint: &JointPmf,
    d1: &DistortionMatrix,
    d2: &DistortionMatrix,
    target: LossyTarget,
    opts: &LossyOptions,
) -> Result<TupleSets> {
    let (n1, n2) = two_axis(joint)?;
    let (m1, m2) = (d1.cols(), d2.cols());
    if d1.rows() != n1 || d2.rows() != n2 {
        return Err(Error::ShapeMismatch { left: vec![n1, n2], right: vec![d1.rows(), d2.rows()] });
    }
    if opts.grid == 0 || !(opts.set_tol > 0.0) {
        return Err(Error::arg("grid must be >= 1 and set_tol positive"));
    }
    let cells = simplex_grid_size(m1 * m2, opts.grid).unwrap_or(u128::MAX);
    if cells > 1_000_000 {
        return Err(Error::arg(format!(
            "grid {} over {} reproduction pairs has {cells} points, above the 10^6 limit",
            opts.grid,
            m1 * m2
        )));
    }
    let slopes = match target {
        LossyTarget::Slopes(a, b) => (a, b),
        LossyTarget::Distortions(a, b) => joint_slopes_for(joint, d1, d2, (a, b), &opts.ba)?,
    };
    let problem = BaProblem::joint(joint, d1, d2, slopes)?;
    let reference = problem.solve(None, &opts.ba)?;
    if !reference.converged {
        return Err(Error::Numerical(format!(
            "joint solver did not converge at slopes {slopes:?} (gap {})",
            reference.gap
        )));
    }
    let (rj, dj1, dj2) = (reference.rate, reference.distortions[0], reference.distortions[1]);
    let tol = opts.set_tol;

    let starts = simplex_grid(m1 * m2, opts.grid);
    let mut enumerated = starts.len();
    let sols: Vec<_> = starts
        .par_iter()
        .map(|q| problem.solve(Some(q), &opts.ba))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = Vec::new();
    let mut transmit = Vec::new();
    let p = joint.probs();
    let cols = m1 * m2;
    for sol in std::iter::once(&reference).chain(&sols) {
        let ok = sol.converged
            && (sol.rate - rj).abs() <= tol
            && (sol.distortions[0] - dj1).abs() <= tol
            && (sol.distortions[1] - dj2).abs() <= tol;
        if !ok {
            continue;
        }
        let w: Vec<f64> = (0..n1 * n2 * cols).map(|i| p[i / cols] * sol.conditional[i]).collect();
        let key = dedup_key(&w);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let full = JointPmf::from_weights(vec![n1, n2, m1, m2], w)?;
        let ii = interaction_information(&full, &[0, 1], &[2], &[3])?;
        transmit.push(AchievingTuple {
            joint: full,
            rate: sol.rate,
            d1: sol.distortions[0],
            d2: sol.distortions[1],
            interaction_information: ii,
        });
    }

    // Receive side: optimal marginal encoders at the same distortions.
    let marg = |axis: usize, d: &DistortionMatrix, target: f64| -> Result<(f64, Vec<Vec<f64>>)> {
        let src = joint.marginal(axis)?;
        let at = crate::rate_distortion::ba_marginal_at_distortion(&src, d, target, &opts.ba)?;
        let s = at.slopes[0];
        let prob = BaProblem::marginal(&src, d, s)?;
        let (r, dd) = (at.rate, at.distortions[0]);
        let starts = simplex_grid(d.cols(), opts.grid);
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for sol in std::iter::once(Ok(at.clone())).chain(starts.iter().map(|q| prob.solve(Some(q), &opts.ba))) {
            let sol = sol?;
            if sol.converged && (sol.rate - r).abs() <= tol && (sol.distortions[0] - dd).abs() <= tol {
                let m = d.cols();
                let w: Vec<f64> =
                    sol.conditional.iter().enumerate().map(|(i, q)| src.probs()[i / m] * q).collect();
                push_unique(&mut seen, dedup_key(&w), &mut out, sol.conditional);
            }
        }
        Ok((r, out))
    };
    let (r1, enc1) = marg(0, d1, dj1)?;
    let (r2, enc2) = marg(1, d2, dj2)?;
    enumerated += [m1, m2].iter().map(|&m| simplex_grid_size(m, opts.grid).unwrap_or(0) as usize).sum::<usize>();
    let mut receive = Vec::new();
    let mut receive_pairs = Vec::new();
    for q1 in &enc1 {
        for q2 in &enc2 {
            let full = JointPmf::from_fn(vec![n1, n2, m1, m2], |i| {
                p[i[0] * n2 + i[1]] * q1[i[0] * m1 + i[2]] * q2[i[1] * m2 + i[3]]
            })?;
            let ii = interaction_information(&full, &[0, 1], &[2], &[3])?;
            let dd1: f64 = (0..n1).map(|x| joint.marginal_table(&[0])[x] * (0..m1).map(|z| q1[x * m1 + z] * d1.get(x, z)).sum::<f64>()).sum();
            let dd2: f64 = (0..n2).map(|x| joint.marginal_table(&[1])[x] * (0..m2).map(|z| q2[x * m2 + z] * d2.get(x, z)).sum::<f64>()).sum();
            receive.push(AchievingTuple { joint: full, rate: r1 + r2, d1: dd1, d2: dd2, interaction_information: ii });
            receive_pairs.push((q1.clone(), q2.clone()));
        }
    }
    if transmit.is_empty() || receive.is_empty() {
        return Err(Error::Numerical(format!(
            "empty {} set at set_tol {tol:e}; retry with a coarser (larger) set_tol",
            if transmit.is_empty() { "transmit" } else { "receive" }
        )));
    }
    Ok(TupleSets {
        transmit,
        receive,
        receive_pairs,
        d1: dj1,
        d2: dj2,
        slopes,
        joint_rate: rj,
        marginal_rates: (r1, r2),
        enumerated,
    })
}

/// Largest `H(V)` over common functions `V` of `X1` and `X2` that are also
/// determined by `Z1` and by `Z2` under the given encoders.
fn gk_lossy_value(joint: &JointPmf, q1: &[f64], q2: &[f64], m1: usize, m2: usize) -> f64 {
    let (n1, n2) = (joint.shape()[0], joint.shape()[1]);
    let p = joint.probs();
    let p1 = joint.marginal_table(&[0]);
    let p2 = joint.marginal_table(&[1]);
    let labels = support_components(p, n1, n2, |uf| {
        for z in 0..m1 {
            let xs: Vec<usize> = (0..n1).filter(|&x| p1[x] >= LOG_FLOOR && q1[x * m1 + z] >= LOG_FLOOR).collect();
            for w in xs.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        for z in 0..m2 {
            let xs: Vec<usize> = (0..n2).filter(|&x| p2[x] >= LOG_FLOOR && q2[x * m2 + z] >= LOG_FLOOR).collect();
            for w in xs.windows(2) {
                uf.union(n1 + w[0], n1 + w[1]);
            }
        }
    });
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut mass = vec![0.0; k];
    for a in 0..n1 {
        mass[labels[a]] += p1[a];
    }
    table_entropy(&mass).max(0.0)
}

/// Histogram of interaction-information values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn of(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub max_receive_ii: f64,
    pub min_transmit_ii: f64,
    pub gk_value: f64,
    pub wyner_value: f64,
    pub ordering_satisfied: bool,
    pub enumerated_tuples: usize,
    pub transmit_tuples: usize,
    pub receive_tuples: usize,
    pub d1: f64,
    pub d2: f64,
    pub transmit_ii_histogram: Histogram,
    pub receive_ii_histogram: Histogram,
}

pub const ORDERING_TOL: f64 = 1e-9;

/// Compares the Gács-Körner estimate, the interaction information of both
/// tuple sets, and the Wyner estimate at one operating point.
///
/// The Wyner estimate is the smallest `I(X; U) + I(Z1; Z2 | U)` found over
/// transmit tuples and near-independent auxiliaries `U`. For any `U` with
/// `X - Z - U` this sum bounds the interaction information of the tuple
/// from above, and it equals `I(X; U)` when the conditional independence
/// is exact.
pub fn check_theorem1(
    joint: &JointPmf,
    d1: &DistortionMatrix,
    d2: &DistortionMatrix,
    target: LossyTarget,
    opts: &LossyOptions,
) -> Result<BoundCheckReport> {
    let sets = lossy_tuple_enumeration(joint, d1, d2, target, opts)?;
    let (m1, m2) = (d1.cols(), d2.cols());
    let t_ii: Vec<f64> = sets.transmit.iter().map(|t| t.interaction_information).collect();
    let r_ii: Vec<f64> = sets.receive.iter().map(|t| t.interaction_information).collect();
    let max_receive_ii = r_ii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_transmit_ii = t_ii.iter().copied().fold(f64::INFINITY, f64::min);
    let gk_value = sets
        .receive_pairs
        .iter()
        .map(|(q1, q2)| gk_lossy_value(joint, q1, q2, m1, m2))
        .fold(f64::NEG_INFINITY, f64::max);

    let aux = opts.wyner.aux_size.unwrap_or(m1 * m2);
    let nz = m1 * m2;
    let wyner_value = sets
        .transmit
        .par_iter()
        .map(|t| {
            let full = t.joint.probs();
            let pz = t.joint.marginal_table(&[2, 3]);
            let problem = AuxProblem { pz: &pz, m1, m2, pxz: Some(full), nx: full.len() / nz, aux };
            let cands = problem.search(&opts.wyner);
            let feasible = pick(&cands, |e| (e.cmi < opts.wyner.tol).then_some(e.ixu + e.cmi));
            let any = pick(&cands, |e| Some(e.ixu + e.cmi)).expect("non-empty");
            let (_, e) = &cands[feasible.unwrap_or(any)];
            e.ixu + e.cmi
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let ordering_satisfied = gk_value <= max_receive_ii + ORDERING_TOL
        && max_receive_ii <= min_transmit_ii + ORDERING_TOL
        && min_transmit_ii <= wyner_value + ORDERING_TOL;
    Ok(BoundCheckReport {
        max_receive_ii,
        min_transmit_ii,
        gk_value,
        wyner_value,
        ordering_satisfied,
        enumerated_tuples: sets.enumerated,
        transmit_tuples: sets.transmit.len(),
        receive_tuples: sets.receive.len(),
        d1: sets.d1,
        d2: sets.d2,
        transmit_ii_histogram: Histogram::of(&t_ii, 10),
        receive_ii_histogram: Histogram::of(&r_ii, 10),
    })
}

/// Deterministic encoders and optimal decoders of the discrete Gray-Wyner
/// objective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GwMappings {
    /// `Y0 = f0(x1, x2)`, indexed `x1 * n2 + x2`.
    pub f0: Vec<usize>,
    /// `Y1 = f1(x1)`.
    pub f1: Vec<usize>,
    /// `Y2 = f2(x2)`.
    pub f2: Vec<usize>,
    /// `Z1 = g1(y0, y1)`, indexed `y0 * k1 + y1`.
    pub g1: Vec<usize>,
    /// `Z2 = g2(y0, y2)`, indexed `y0 * k2 + y2`.
    pub g2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwObjective {
    pub value: f64,
    pub h_y0: f64,
    pub h_y1_given_y0: f64,
    pub h_y2_given_y0: f64,
    pub d1: f64,
    pub d2: f64,
    pub mappings: GwMappings,
    pub method: Method,
    /// Number of candidate mappings scored.
    pub evaluated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwSearchOptions {
    /// Largest mapping space searched exhaustively.
    pub exhaustive_limit: u64,
    pub anneal_steps: usize,
    pub anneal_restarts: usize,
    pub seed: u64,
}

impl Default for GwSearchOptions {
    fn default() -> Self {
        Self { exhaustive_limit: 1_000_000, anneal_steps: 20_000, anneal_restarts: 8, seed: 0 }
    }
}

/// Restricted-growth strings of length `n` with at most `k` labels: one
/// representative per relabelling class of maps `[n] -> [k]`, in
/// lexicographic order.
pub fn restricted_growth_strings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        let top = if i == 0 { 0 } else { (max + 1).min(k - 1) };
        for v in 0..=top {
            cur[i] = v;
            rec(i + 1, max.max(v), k, cur, out);
        }
    }
    if n > 0 && k > 0 {
        rec(0, 0, k, &mut cur, &mut out);
    }
    out
}

/// Number of restricted-growth strings of length `n` over `k` labels:
/// `Σ_{j<=k} S(n, j)`.
pub fn restricted_growth_count(n: usize, k: usize) -> u128 {
    // Stirling numbers of the second kind by the usual recurrence.
    let mut s = vec![vec![0u128; k + 1]; n + 1];
    s[0][0] = 1;
    for i in 1..=n {
        for j in 1..=k.min(i) {
            s[i][j] = s[i - 1][j - 1].saturating_add((j as u128).saturating_mul(s[i - 1][j]));
        }
    }
    (1..=k).map(|j| s[n][j]).fold(0u128, |a, b| a.saturating_add(b))
}

struct GwTerms {
    h: f64,
    d: f64,
    g: Vec<usize>,
}

/// `H(Y | Y0)` and the distortion of the optimal decoder for one private
/// branch. `px0` is `P(x, y0)` over the branch's source symbol and `Y0`.
fn private_terms(px0: &[f64], k0: usize, f: &[usize], k: usize, d: &DistortionMatrix) -> GwTerms {
    let n = f.len();
    let mut pyy = vec![0.0; k0 * k];
    let mut py0 = vec![0.0; k0];
    for x in 0..n {
        for y0 in 0..k0 {
            let w = px0[x * k0 + y0];
            pyy[y0 * k + f[x]] += w;
            py0[y0] += w;
        }
    }
    let h = table_entropy(&pyy) - table_entropy(&py0);
    let mut dist = 0.0;
    let mut g = vec![0; k0 * k];
    for y0 in 0..k0 {
        for y in 0..k {
            let mut best = (f64::INFINITY, 0);
            for z in 0..d.cols() {
                let e: f64 = (0..n).filter(|&x| f[x] == y).map(|x| px0[x * k0 + y0] * d.get(x, z)).sum();
                if e < best.0 {
                    best = (e, z);
                }
            }
            g[y0 * k + y] = best.1;
            dist += best.0;
        }
    }
    GwTerms { h: h.max(0.0), d: dist, g }
}

struct GwInstance<'a> {
    joint: &'a JointPmf,
    d1: &'a DistortionMatrix,
    d2: &'a DistortionMatrix,
    targets: (f64, f64),
    alphas: (f64, f64),
    sizes: (usize, usize, usize),
}

const FEAS_EPS: f64 = 1e-12;

impl GwInstance<'_> {
    fn with_f0(&self, f0: &[usize]) -> (Vec<f64>, Vec<f64>, f64) {
        let (n1, n2) = (self.joint.shape()[0], self.joint.shape()[1]);
        let k0 = self.sizes.0;
        let p = self.joint.probs();
        let mut p1 = vec![0.0; n1 * k0];
        let mut p2 = vec![0.0; n2 * k0];
        let mut py0 = vec![0.0; k0];
        for a in 0..n1 {
            for b in 0..n2 {
                let w = p[a * n2 + b];
                let y = f0[a * n2 + b];
                p1[a * k0 + y] += w;
                p2[b * k0 + y] += w;
                py0[y] += w;
            }
        }
        (p1, p2, table_entropy(&py0))
    }

    fn assemble(&self, f0: Vec<usize>, f1: Vec<usize>, f2: Vec<usize>, method: Method, evaluated: u64) -> GwObjective {
        let (p1, p2, h0) = self.with_f0(&f0);
        let t1 = private_terms(&p1, self.sizes.0, &f1, self.sizes.1, self.d1);
        let t2 = private_terms(&p2, self.sizes.0, &f2, self.sizes.2, self.d2);
        GwObjective {
            value: h0 + self.alphas.0 * t1.h + self.alphas.1 * t2.h,
            h_y0: h0,
            h_y1_given_y0: t1.h,
            h_y2_given_y0: t2.h,
            d1: t1.d,
            d2: t2.d,
            mappings: GwMappings { f0, f1, f2, g1: t1.g, g2: t2.g },
            method,
            evaluated,
        }
    }

    fn exhaustive(&self) -> Result<GwObjective> {
        let (n1, n2) = (self.joint.shape()[0], self.joint.shape()[1]);
        let (k0, k1, k2) = self.sizes;
        let f0s = restricted_growth_strings(n1 * n2, k0);
        let f1s = restricted_growth_strings(n1, k1);
        let f2s = restricted_growth_strings(n2, k2);
        let mut best: Option<(f64, usize, usize, usize)> = None;
        let (mut min_d1, mut min_d2) = (f64::INFINITY, f64::INFINITY);
        for (i0, f0) in f0s.iter().enumerate() {
            let (p1, p2, h0) = self.with_f0(f0);
            let branch = |px: &[f64], fs: &[Vec<usize>], k: usize, d: &DistortionMatrix, t: f64, min_d: &mut f64| {
                let mut b: Option<(f64, usize)> = None;
                for (i, f) in fs.iter().enumerate() {
                    let terms = private_terms(px, k0, f, k, d);
                    *min_d = min_d.min(terms.d);
                    if terms.d <= t + FEAS_EPS && b.is_none_or(|(h, _)| terms.h < h - FEAS_EPS) {
                        b = Some((terms.h, i));
                    }
                }
                b
            };
            let b1 = branch(&p1, &f1s, k1, self.d1, self.targets.0, &mut min_d1);
            let b2 = branch(&p2, &f2s, k2, self.d2, self.targets.1, &mut min_d2);
            if let (Some((h1, i1)), Some((h2, i2))) = (b1, b2) {
                let v = h0 + self.alphas.0 * h1 + self.alphas.1 * h2;
                if best.is_none_or(|(b, ..)| v < b - FEAS_EPS) {
                    best = Some((v, i0, i1, i2));
                }
            }
        }
        let evaluated = (f0s.len() * f1s.len() * f2s.len()) as u64;
        match best {
            Some((_, i0, i1, i2)) => Ok(self.assemble(
                f0s[i0].clone(),
                f1s[i1].clone(),
                f2s[i2].clone(),
                Method::Exhaustive,
                evaluated,
            )),
            None => Err(self.infeasible(min_d1, min_d2)),
        }
    }

    fn infeasible(&self, min_d1: f64, min_d2: f64) -> Error {
        let mut parts = Vec::new();
        if min_d1 > self.targets.0 + FEAS_EPS {
            parts.push(format!("D1 <= {} (best achievable {min_d1})", self.targets.0));
        }
        if min_d2 > self.targets.1 + FEAS_EPS {
            parts.push(format!("D2 <= {} (best achievable {min_d2})", self.targets.1));
        }
        if parts.is_empty() {
            parts.push("joint distortion constraints".into());
        }
        Error::Infeasible(format!("no mapping satisfies {}", parts.join(" and ")))
    }

    /// Penalized objective used by the annealer.
    fn energy(&self, f0: &[usize], f1: &[usize], f2: &[usize]) -> (f64, f64, f64) {
        let (p1, p2, h0) = self.with_f0(f0);
        let t1 = private_terms(&p1, self.sizes.0, f1, self.sizes.1, self.d1);
        let t2 = private_terms(&p2, self.sizes.0, f2, self.sizes.2, self.d2);
        let v = h0 + self.alphas.0 * t1.h + self.alphas.1 * t2.h;
        let excess = (t1.d - self.targets.0).max(0.0) + (t2.d - self.targets.1).max(0.0);
        (v + 100.0 * excess, t1.d, t2.d)
    }

    fn anneal(&self, opts: &GwSearchOptions) -> Result<GwObjective> {
        let (n1, n2) = (self.joint.shape()[0], self.joint.shape()[1]);
        let (k0, k1, k2) = self.sizes;
        let runs: Vec<_> = (0..opts.anneal_restarts as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(r);
                let mut f0: Vec<usize> = (0..n1 * n2).map(|_| rng.random_range(0..k0)).collect();
                let mut f1: Vec<usize> = (0..n1).map(|_| rng.random_range(0..k1)).collect();
                let mut f2: Vec<usize> = (0..n2).map(|_| rng.random_range(0..k2)).collect();
                let (mut e, mut a, mut b) = self.energy(&f0, &f1, &f2);
                let mut best = (e, f0.clone(), f1.clone(), f2.clone(), a, b);
                let (mut min_d1, mut min_d2) = (a, b);
                for step in 0..opts.anneal_steps {
                    let temp = 1.0 * (1.0 - step as f64 / opts.anneal_steps as f64) + 1e-4;
                    let which = rng.random_range(0..3);
                    let (vec, k) = match which {
                        0 => (&mut f0, k0),
                        1 => (&mut f1, k1),
                        _ => (&mut f2, k2),
                    };
                    let pos = rng.random_range(0..vec.len());
                    let old = vec[pos];
                    vec[pos] = rng.random_range(0..k);
                    let (ne, na, nb) = self.energy(&f0, &f1, &f2);
                    min_d1 = min_d1.min(na);
                    min_d2 = min_d2.min(nb);
                    if ne <= e || rng.random::<f64>() < ((e - ne) / temp).exp() {
                        (e, a, b) = (ne, na, nb);
                        let feasible = a <= self.targets.0 + FEAS_EPS && b <= self.targets.1 + FEAS_EPS;
                        if feasible && e < best.0 - FEAS_EPS {
                            best = (e, f0.clone(), f1.clone(), f2.clone(), a, b);
                        }
                    } else {
                        let vec = match which {
                            0 => &mut f0,
                            1 => &mut f1,
                            _ => &mut f2,
                        };
                        vec[pos] = old;
                    }
                }
                (best, min_d1, min_d2)
            })
            .collect();
        let mut chosen: Option<(f64, Vec<usize>, Vec<usize>, Vec<usize>)> = None;
        let (mut min_d1, mut min_d2) = (f64::INFINITY, f64::INFINITY);
        for ((e, f0, f1, f2, a, b), m1, m2) in runs {
            min_d1 = min_d1.min(m1);
            min_d2 = min_d2.min(m2);
            let feasible = a <= self.targets.0 + FEAS_EPS && b <= self.targets.1 + FEAS_EPS;
            if feasible && chosen.as_ref().is_none_or(|c| e < c.0 - FEAS_EPS) {
                chosen = Some((e, f0, f1, f2));
            }
        }
        let evaluated = (opts.anneal_restarts * opts.anneal_steps) as u64;
        match chosen {
            Some((_, f0, f1, f2)) => Ok(self.assemble(f0, f1, f2, Method::Alternating, evaluated)),
            None => Err(self.infeasible(min_d1, min_d2)),
        }
    }
}

/// Minimizes `H(Y0) + α1 H(Y1|Y0) + α2 H(Y2|Y0)` over deterministic
/// `Y0 = f0(X1, X2)`, `Y1 = f1(X1)`, `Y2 = f2(X2)` with alphabet sizes
/// `sizes`, subject to `E d1 <= D1` and `E d2 <= D2` under the optimal
/// decoders `Z1 = g1(Y0, Y1)`, `Z2 = g2(Y0, Y2)`.
///
/// Encoders are enumerated up to relabelling of each output alphabet
/// when the space of such classes is at most `opts.exhaustive_limit`;
/// otherwise simulated annealing is used.
pub fn gw_objective_discrete(
    joint: &JointPmf,
    d1: &DistortionMatrix,
    d2: &DistortionMatrix,
    targets: (f64, f64),
    alphas: (f64, f64),
    sizes: (usize, usize, usize),
    opts: &GwSearchOptions,
) -> Result<GwObjective> {
    let (n1, n2) = two_axis(joint)?;
    if d1.rows() != n1 || d2.rows() != n2 {
        return Err(Error::ShapeMismatch { left: vec![n1, n2], right: vec![d1.rows(), d2.rows()] });
    }
    let (a1, a2) = alphas;
    if !(0.0..=1.0).contains(&a1) || !(0.0..=1.0).contains(&a2) || a1 + a2 < 1.0 {
        return Err(Error::arg(format!(
            "weights must satisfy 0 <= a1, a2 <= 1 and a1 + a2 >= 1, got ({a1}, {a2})"
        )));
    }
    if sizes.0 == 0 || sizes.1 == 0 || sizes.2 == 0 {
        return Err(Error::arg("alphabet sizes must be at least 1"));
    }
    let inst = GwInstance { joint, d1, d2, targets, alphas, sizes };
    let space = restricted_growth_count(n1 * n2, sizes.0)
        .saturating_mul(restricted_growth_count(n1, sizes.1))
        .saturating_mul(restricted_growth_count(n2, sizes.2));
    if space <= opts.exhaustive_limit as u128 {
        inst.exhaustive()
    } else {
        inst.anneal(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf::{conditional_mutual_information, mutual_information, Pmf};
    use crate::rate_distortion::h2;

    fn copy(n: usize) -> JointPmf {
        JointPmf::from_fn(vec![n, n], |i| (i[0] == i[1]) as u8 as f64).unwrap()
    }

    fn indep(n: usize) -> JointPmf {
        JointPmf::from_fn(vec![n, n], |_| 1.0).unwrap()
    }

    fn dsbs(a0: f64) -> JointPmf {
        JointPmf::new(vec![2, 2], vec![(1.0 - a0) / 2.0, a0 / 2.0, a0 / 2.0, (1.0 - a0) / 2.0]).unwrap()
    }

    #[test]
    fn gk_examples() {
        assert_eq!(gk_common_information_lossless(&indep(3)).unwrap().value_bits, 0.0);
        let c = gk_common_information_lossless(&copy(4)).unwrap();
        assert!((c.value_bits - 2.0).abs() < 1e-12);
        let blocks = JointPmf::from_fn(vec![4, 4], |i| ((i[0] < 2) == (i[1] < 2)) as u8 as f64).unwrap();
        let b = gk_common_information_lossless(&blocks).unwrap();
        assert!((b.value_bits - 1.0).abs() < 1e-12);
        assert_eq!(b.aux_alphabet_size, 2);
    }

    #[test]
    fn gk_witness_satisfies_markov_conditions() {
        let j = JointPmf::from_fn(vec![4, 3], |i| match (i[0], i[1]) {
            (0 | 1, 0) => 1.0 + i[0] as f64,
            (2, 1 | 2) => 2.0 + i[1] as f64,
            (3, 2) => 0.5,
            _ => 0.0,
        })
        .unwrap();
        let r = gk_common_information_lossless(&j).unwrap();
        let w = &r.witness;
        assert!(conditional_mutual_information(w, &[1], &[2], &[0]).unwrap() < 1e-9);
        assert!(conditional_mutual_information(w, &[0], &[2], &[1]).unwrap() < 1e-9);
        assert!(r.value_bits <= mutual_information(&j, &[0], &[1]).unwrap() + 1e-12);
        let back = w.marginalize(&[0, 1]).unwrap();
        for (a, b) in back.probs().iter().zip(j.probs()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn quick() -> WynerOptions {
        WynerOptions { restarts: 4, iters_per_stage: 400, ..WynerOptions::default() }
    }

    #[test]
    fn wyner_trivial_cases() {
        let r = wyner_common_information_lossless(&indep(3), &quick()).unwrap();
        assert!(r.feasible && r.value_bits.abs() < 1e-9);
        let opts = WynerOptions { aux_size: Some(3), ..quick() };
        let r = wyner_common_information_lossless(&copy(3), &opts).unwrap();
        assert!(r.feasible && (r.value_bits - 3f64.log2()).abs() < 1e-6);
    }

    #[test]
    fn wyner_dsbs_matches_closed_form() {
        let a0: f64 = 0.1;
        let alpha = (1.0 - (1.0 - 2.0 * a0).sqrt()) / 2.0;
        let closed = 1.0 + h2(a0) - 2.0 * h2(alpha);
        let opts = WynerOptions { aux_size: Some(2), restarts: 8, ..WynerOptions::default() };
        let r = wyner_common_information_lossless(&dsbs(a0), &opts).unwrap();
        assert!(r.feasible);
        assert!((r.value_bits - closed).abs() < 1e-3, "{} vs {closed}", r.value_bits);
        assert!(r.residual_cmi < opts.tol);
        let mi = mutual_information(&dsbs(a0), &[0], &[1]).unwrap();
        assert!(mi <= r.value_bits + 1e-9);
    }

    #[test]
    fn grids_have_expected_sizes() {
        assert_eq!(simplex_grid(9, 8).len(), 12870);
        assert_eq!(simplex_grid_size(9, 8), Some(12870));
        assert_eq!(simplex_grid(3, 8).len(), 45);
        assert_eq!(simplex_grid(4, 1).len(), 4);
        assert_eq!(restricted_growth_strings(9, 3).len(), 3281);
        assert_eq!(restricted_growth_count(9, 3), 3281);
        assert_eq!(restricted_growth_strings(3, 3).len(), 5);
        assert_eq!(restricted_growth_count(4, 10), 15);
    }

    #[test]
    fn lossless_enumeration_contains_identity() {
        let d = DistortionMatrix::hamming(3);
        let sets = lossy_tuple_enumeration(&copy(3), &d, &d, LossyTarget::Distortions(0.0, 0.0), &LossyOptions::default())
            .unwrap();
        let identity = |t: &AchievingTuple| {
            (0..3).all(|x| (t.joint.get(&[x, x, x, x]) - 1.0 / 3.0).abs() < 1e-9)
        };
        assert!(sets.transmit.iter().any(identity));
        assert!(sets.receive.iter().any(identity));
    }

    #[test]
    fn degenerate_source_gives_singleton_sets() {
        let j = JointPmf::from_fn(vec![2, 2], |i| (i[0] == 0 && i[1] == 1) as u8 as f64).unwrap();
        let d = DistortionMatrix::hamming(2);
        let opts = LossyOptions { grid: 1, ..LossyOptions::default() };
        let sets = lossy_tuple_enumeration(&j, &d, &d, LossyTarget::Slopes(-2.0, -2.0), &opts).unwrap();
        assert_eq!((sets.transmit.len(), sets.receive.len()), (1, 1));
    }

    #[test]
    fn edge_cases_of_the_bound_check() {
        let d = DistortionMatrix::hamming(3);
        let r = check_theorem1(&copy(3), &d, &d, LossyTarget::Distortions(0.0, 0.0), &LossyOptions::default()).unwrap();
        let l3 = 3f64.log2();
        for v in [r.gk_value, r.max_receive_ii, r.min_transmit_ii, r.wyner_value] {
            assert!((v - l3).abs() < 1e-6, "{r:?}");
        }
        assert!(r.ordering_satisfied);
        let d2 = DistortionMatrix::hamming(2);
        let r = check_theorem1(&indep(2), &d2, &d2, LossyTarget::Slopes(-1.5, -2.5), &LossyOptions::default()).unwrap();
        for v in [r.gk_value, r.max_receive_ii, r.min_transmit_ii, r.wyner_value] {
            assert!(v.abs() < 1e-6, "{r:?}");
        }
        assert!(r.ordering_satisfied);
    }

    #[test]
    fn gw_objective_examples() {
        let d = DistortionMatrix::hamming(3);
        let o = GwSearchOptions::default();
        let t = gw_objective_discrete(&copy(3), &d, &d, (0.0, 0.0), (1.0, 1.0), (3, 3, 3), &o).unwrap();
        assert!((t.value - 3f64.log2()).abs() < 1e-12);
        assert!((t.h_y0 - 3f64.log2()).abs() < 1e-12);
        let j = JointPmf::product(&[&Pmf::new(vec![0.5, 0.3, 0.2]).unwrap(), &Pmf::new(vec![0.6, 0.2, 0.2]).unwrap()]).unwrap();
        let h = j.entropy_of(&[0]).unwrap() + j.entropy_of(&[1]).unwrap();
        let t = gw_objective_discrete(&j, &d, &d, (0.0, 0.0), (1.0, 1.0), (3, 3, 3), &o).unwrap();
        assert!((t.value - h).abs() < 1e-12);
        let t = gw_objective_discrete(&copy(3), &d, &d, (0.0, 0.0), (1.0, 1.0), (1, 3, 3), &o).unwrap();
        assert!((t.value - 2.0 * 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn gw_objective_validates_inputs() {
        let d = DistortionMatrix::hamming(3);
        let o = GwSearchOptions::default();
        assert!(matches!(
            gw_objective_discrete(&copy(3), &d, &d, (0.0, 0.0), (0.3, 0.3), (3, 3, 3), &o),
            Err(Error::InvalidArgument(_))
        ));
        match gw_objective_discrete(&copy(3), &d, &d, (0.0, 0.0), (1.0, 1.0), (1, 2, 3), &o) {
            Err(Error::Infeasible(m)) => assert!(m.contains("D1") && !m.contains("D2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gw_annealing_finds_lossless_optimum() {
        let d = DistortionMatrix::hamming(3);
        let o = GwSearchOptions { exhaustive_limit: 0, ..GwSearchOptions::default() };
        let t = gw_objective_discrete(&copy(3), &d, &d, (0.0, 0.0), (1.0, 1.0), (3, 3, 3), &o).unwrap();
        assert_eq!(t.method, Method::Alternating);
        assert!((t.value - 3f64.log2()).abs() < 1e-9);
    }
}
