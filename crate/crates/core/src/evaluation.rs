//! Operating points, curve comparison and empirical mutual information.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::LossTerms;
use crate::error::{Error, Result};
use crate::rate_distortion::{RDCurve, RDPoint};

/// One trained codec operating point. `rt` and `rr` are always derived
/// from the channel rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GWRatePoint {
    pub arch: String,
    pub beta: f64,
    pub eta: f64,
    pub seed: u64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "Rt")]
    pub rt: f64,
    #[serde(rename = "Rr")]
    pub rr: f64,
    #[serde(rename = "D1")]
    pub d1: f64,
    #[serde(rename = "D2")]
    pub d2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc2: Option<f64>,
}

fn transmit(r0: f64, r1: f64, r2: f64) -> f64 {
    r0 + r1 + r2
}

fn receive(r0: f64, r1: f64, r2: f64) -> f64 {
    2.0 * r0 + r1 + r2
}

impl GWRatePoint {
    pub fn new(
        arch: impl Into<String>,
        beta: f64,
        eta: f64,
        seed: u64,
        t: LossTerms,
        accuracy: (Option<f64>, Option<f64>),
    ) -> Self {
        Self::from_rates(arch, beta, eta, seed, [t.r0, t.r1, t.r2], [t.d1, t.d2], accuracy)
    }

    pub fn from_rates(
        arch: impl Into<String>,
        beta: f64,
        eta: f64,
        seed: u64,
        [r0, r1, r2]: [f64; 3],
        [d1, d2]: [f64; 2],
        (acc1, acc2): (Option<f64>, Option<f64>),
    ) -> Self {
        Self {
            arch: arch.into(),
            beta,
            eta,
            seed,
            r1,
            r2,
            r0,
            rt: transmit(r0, r1, r2),
            rr: receive(r0, r1, r2),
            d1,
            d2,
            acc1,
            acc2,
        }
    }

    /// Checks `Rt = R0 + R1 + R2` and `Rr = 2 R0 + R1 + R2` bit-exactly.
    pub fn check(&self) -> Result<()> {
        let rates = [self.r0, self.r1, self.r2, self.d1, self.d2];
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("{} point has non-finite entries", self.arch)));
        }
        let rt = transmit(self.r0, self.r1, self.r2);
        let rr = receive(self.r0, self.r1, self.r2);
        if rt.to_bits() != self.rt.to_bits() || rr.to_bits() != self.rr.to_bits() {
            return Err(Error::arg(format!(
                "{} point (beta {}, eta {}): Rt = {} and Rr = {} do not match channel rates (expected {rt} and {rr})",
                self.arch, self.beta, self.eta, self.rt, self.rr
            )));
        }
        Ok(())
    }

    pub fn rate(&self, kind: RateKind) -> f64 {
        match kind {
            RateKind::Transmit => self.rt,
            RateKind::Receive => self.rr,
        }
    }

    /// Mean of the two task distortions.
    pub fn distortion(&self) -> f64 {
        0.5 * (self.d1 + self.d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Transmit,
    Receive,
}

impl std::str::FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transmit" => Ok(RateKind::Transmit),
            "receive" => Ok(RateKind::Receive),
            _ => Err(Error::arg(format!("unknown rate kind '{s}' (expected transmit or receive)"))),
        }
    }
}

const CSV_HEADER: &str = "arch,beta,eta,seed,R1,R2,R0,Rt,Rr,D1,D2,acc1,acc2";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn points_to_csv(points: &[GWRatePoint]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push_str("\r\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\r\n",
            p.arch,
            p.beta,
            p.eta,
            p.seed,
            p.r1,
            p.r2,
            p.r0,
            p.rt,
            p.rr,
            p.d1,
            p.d2,
            opt(p.acc1),
            opt(p.acc2)
        ));
    }
    s
}

/// Parses points written by [`points_to_csv`] and checks every row's rate
/// identities. A trailing `config_hash` column is accepted and ignored.
pub fn points_from_csv(text: &str) -> Result<Vec<GWRatePoint>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty point file".into()))?;
    let width = match header.strip_prefix(CSV_HEADER) {
        Some("") => 13,
        Some(",config_hash") => 14,
        _ => return Err(Error::Parse(format!("unexpected header '{header}'"))),
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(Error::Parse(format!("row {}: expected {width} fields, found {}", i + 1, f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| Error::Parse(format!("row {}: bad number '{}'", i + 1, f[k])))
        };
        let maybe = |k: usize| -> Result<Option<f64>> {
            if f[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let p = GWRatePoint {
            arch: f[0].to_string(),
            beta: num(1)?,
            eta: num(2)?,
            seed: f[3]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad seed '{}'", i + 1, f[3])))?,
            r1: num(4)?,
            r2: num(5)?,
            r0: num(6)?,
            rt: num(7)?,
            rr: num(8)?,
            d1: num(9)?,
            d2: num(10)?,
            acc1: maybe(11)?,
            acc2: maybe(12)?,
        };
        p.check()?;
        out.push(p);
    }
    Ok(out)
}

/// Parses a JSON array of points (or a single point) and checks them.
pub fn points_from_json(text: &str) -> Result<Vec<GWRatePoint>> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let points: Vec<GWRatePoint> = if v.is_array() {
        serde_json::from_value(v)?
    } else {
        vec![serde_json::from_value(v)?]
    };
    for p in &points {
        p.check()?;
    }
    Ok(points)
}

/// `(rate, distortion)` curve of a set of points, with the mean task
/// distortion on the distortion axis.
pub fn curve_of(points: &[GWRatePoint], kind: RateKind) -> RDCurve {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.rate(kind), p.distortion())).collect();
    RDCurve::from_pairs(&pairs)
}

/// Sorted `(distortion, value)` knots with strictly increasing distortion;
/// ties keep the smallest value.
fn knots(curve: &RDCurve, f: impl Fn(&RDPoint) -> f64) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.distortion, f(p))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|b, a| a.0 == b.0);
    pts
}

/// Monotone cubic Hermite slopes (Fritsch-Carlson).
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(knots: &[(f64, f64)]) -> Self {
        let x: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let y: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let d = pchip_slopes(&x, &y);
        Self { x, y, d }
    }

    fn eval(&self, t: f64) -> f64 {
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }

    /// Integral over `[a, b]` inside the knot range; Simpson's rule on each
    /// piece is exact for cubics.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.x.iter().copied().filter(|&v| v > a && v < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                let m = 0.5 * (w[0] + w[1]);
                (w[1] - w[0]) / 6.0 * (self.eval(w[0]) + 4.0 * self.eval(m) + self.eval(w[1]))
            })
            .sum()
    }
}

/// Bjøntegaard delta rate (percent) of `test` relative to `reference`:
/// log-rate is fitted against distortion with a monotone cubic Hermite
/// interpolant and the mean difference over the shared distortion range
/// is exponentiated. Negative means `test` needs less rate.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve) -> Result<f64> {
    let prep = |c: &RDCurve, name: &str| -> Result<Vec<(f64, f64)>> {
        if c.points.iter().any(|p| !(p.rate > 0.0) || !p.distortion.is_finite() || !p.rate.is_finite()) {
            return Err(Error::arg(format!("{name} curve needs positive, finite rates")));
        }
        let k = knots(c, |p| p.rate.ln());
        if k.len() < 4 {
            return Err(Error::arg(format!(
                "{name} curve needs at least 4 distinct distortions, found {}",
                k.len()
            )));
        }
        Ok(k)
    };
    let r = prep(reference, "reference")?;
    let t = prep(test, "test")?;
    let lo = r[0].0.max(t[0].0);
    let hi = r[r.len() - 1].0.min(t[t.len() - 1].0);
    if !(hi > lo) {
        return Err(Error::arg(format!(
            "distortion ranges do not overlap: reference [{}, {}], test [{}, {}]",
            r[0].0,
            r[r.len() - 1].0,
            t[0].0,
            t[t.len() - 1].0
        )));
    }
    let (pr, pt) = (Pchip::new(&r), Pchip::new(&t));
    let avg = (pt.integrate(lo, hi) - pr.integrate(lo, hi)) / (hi - lo);
    Ok(avg.exp_m1() * 100.0)
}

/// Non-increasing lower envelope of a rate curve: only points not
/// dominated by a point with smaller or equal distortion and lower rate.
fn envelope(curve: &RDCurve) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (d, r) in knots(curve, |p| p.rate) {
        if out.last().is_none_or(|&(_, last)| r < last) {
            out.push((d, r));
        }
    }
    out
}

/// Linear interpolation on knots; outside the range the end segments are
/// extended. Returns the value and whether it was extrapolated.
fn linear(knots: &[(f64, f64)], t: f64) -> (f64, bool) {
    let n = knots.len();
    if n == 1 {
        return (knots[0].1, t != knots[0].0);
    }
    let out = t < knots[0].0 || t > knots[n - 1].0;
    let k = match knots.partition_point(|&(d, _)| d <= t) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let ((x0, y0), (x1, y1)) = (knots[k], knots[k + 1]);
    (y0 + (y1 - y0) * (t - x0) / (x1 - x0), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiPoint {
    pub distortion: f64,
    pub mi: f64,
    /// True when any of the three curves was extrapolated at this
    /// distortion.
    pub extrapolated: bool,
}

/// `I(Z1; Z2) ≈ R1(D) + R2(D) - R12(D)` at every distortion appearing in
/// any of the curves, with the joint curve from a joint codec and the
/// marginal curves from an independent codec. Curves are reduced to their
/// non-increasing envelopes and interpolated linearly.
pub fn empirical_mi(joint: &RDCurve, marg1: &RDCurve, marg2: &RDCurve) -> Result<Vec<MiPoint>> {
    let curves = [envelope(joint), envelope(marg1), envelope(marg2)];
    if curves.iter().any(Vec::is_empty) {
        return Err(Error::arg("empirical MI needs non-empty curves"));
    }
    let lo = curves.iter().map(|c| c[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|c| c[c.len() - 1].0).fold(f64::INFINITY, f64::min);
    if lo > hi {
        return Err(Error::arg(format!(
            "curve distortion ranges do not overlap (common range would be [{lo}, {hi}])"
        )));
    }
    let mut grid: Vec<f64> = curves.iter().flatten().map(|k| k.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid
        .into_iter()
        .map(|d| {
            let (j, ej) = linear(&curves[0], d);
            let (a, ea) = linear(&curves[1], d);
            let (b, eb) = linear(&curves[2], d);
            MiPoint {
                distortion: d,
                mi: a + b - j,
                extrapolated: ej || ea || eb,
            }
        })
        .collect())
}

/// Which distortion of a point is compared against a theory curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionAxis {
    D1,
    D2,
    Mean,
}

impl DistortionAxis {
    fn of(self, p: &GWRatePoint) -> f64 {
        match self {
            DistortionAxis::D1 => p.d1,
            DistortionAxis::D2 => p.d2,
            DistortionAxis::Mean => p.distortion(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryGap {
    pub arch: String,
    pub beta: f64,
    pub eta: f64,
    pub seed: u64,
    pub distortion: f64,
    pub rate: f64,
    pub theory_rate: f64,
    pub gap: f64,
    /// The point's distortion lies outside the theory curve.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub gaps: Vec<TheoryGap>,
    pub min_gap: f64,
}

impl TheoryReport {
    /// True when no point beats the theory curve by more than `tol`.
    pub fn consistent(&self, tol: f64) -> bool {
        self.min_gap >= -tol
    }
}

/// Gap between each point's rate and the theory curve at the point's
/// distortion. The theory curve is interpolated linearly and held
/// constant beyond its ends.
pub fn compare_to_theory(
    points: &[GWRatePoint],
    theory: &RDCurve,
    rate: RateKind,
    axis: DistortionAxis,
) -> Result<TheoryReport> {
    let k = envelope(theory);
    if k.is_empty() {
        return Err(Error::arg("theory curve is empty"));
    }
    let gaps: Vec<TheoryGap> = points
        .iter()
        .map(|p| {
            let d = axis.of(p);
            let n = k.len();
            let (theory_rate, extrapolated) = if d <= k[0].0 {
                (k[0].1, d < k[0].0)
            } else if d >= k[n - 1].0 {
                (k[n - 1].1, d > k[n - 1].0)
            } else {
                linear(&k, d)
            };
            let r = p.rate(rate);
            TheoryGap {
                arch: p.arch.clone(),
                beta: p.beta,
                eta: p.eta,
                seed: p.seed,
                distortion: d,
                rate: r,
                theory_rate,
                gap: r - theory_rate,
                extrapolated,
            }
        })
        .collect();
    let min_gap = gaps.iter().map(|g| g.gap).fold(f64::INFINITY, f64::min);
    Ok(TheoryReport { gaps, min_gap })
}

pub fn theory_report_csv(r: &TheoryReport) -> String {
    let mut s = String::from("arch,beta,eta,seed,distortion,rate,theory_rate,gap,extrapolated\r\n");
    for g in &r.gaps {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\r\n",
            g.arch, g.beta, g.eta, g.seed, g.distortion, g.rate, g.theory_rate, g.gap, g.extrapolated
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdEntry {
    pub reference: String,
    pub test: String,
    pub rate: RateKind,
    pub bd_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// BD-rates between every ordered pair of architectures present in
/// `points`, for both rate kinds. Pairs whose curves cannot be compared
/// carry the reason instead of a value.
pub fn bd_matrix(points: &[GWRatePoint]) -> Vec<BdEntry> {
    let mut by_arch: BTreeMap<&str, Vec<GWRatePoint>> = BTreeMap::new();
    for p in points {
        by_arch.entry(p.arch.as_str()).or_default().push(p.clone());
    }
    let mut out = Vec::new();
    for rate in [RateKind::Transmit, RateKind::Receive] {
        for (a, pa) in &by_arch {
            for (b, pb) in &by_arch {
                if a == b {
                    continue;
                }
                let res = bd_rate(&curve_of(pa, rate), &curve_of(pb, rate));
                out.push(BdEntry {
                    reference: a.to_string(),
                    test: b.to_string(),
                    rate,
                    bd_rate: res.as_ref().ok().copied(),
                    error: res.err().map(|e| e.to_string()),
                });
            }
        }
    }
    out
}
