//! Dense discrete probability tables and the information functionals
//! built on them.
//!
//! All quantities are in bits. Probabilities below [`LOG_FLOOR`] are
//! treated as exact zeros inside logarithms so that `0 log 0 = 0` never
//! produces `-inf` or `NaN`.
//!
//! Axis arguments are slices of axis indices into a [`JointPmf`]. A set
//! of several axes is treated as one compound variable, so
//! `mutual_information(&j, &[0, 1], &[2])` is `I(X0, X1; X2)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Maximum number of cells of a dense table.
pub const MAX_CELLS: usize = 10_000_000;
/// Allowed deviation of the total mass from one.
pub const MASS_TOL: f64 = 1e-12;
/// Probabilities below this are zero inside logarithms.
pub const LOG_FLOOR: f64 = 1e-15;

pub(crate) fn neg_plogp(p: f64) -> f64 {
    if p < LOG_FLOOR {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Shannon entropy (bits) of an arbitrary non-negative table.
pub(crate) fn table_entropy(t: &[f64]) -> f64 {
    t.iter().map(|&p| neg_plogp(p)).sum()
}

fn check_mass(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty alphabet".into()));
    }
    let mut total = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution(format!(
            "total mass {total:.17} deviates from 1 by more than {MASS_TOL:e}"
        )));
    }
    Ok(())
}

fn normalize(weights: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidDistribution(
            "weights must be non-negative with a positive finite sum".into(),
        ));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// A probability mass function over symbols `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_mass(&probs)?;
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a PMF.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new(normalize(weights)?)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("empty alphabet".into()));
        }
        Ok(Self { probs: vec![1.0 / n as f64; n] })
    }

    pub fn point_mass(n: usize, symbol: usize) -> Result<Self> {
        if symbol >= n {
            return Err(Error::arg(format!("symbol {symbol} outside alphabet of size {n}")));
        }
        let mut probs = vec![0.0; n];
        probs[symbol] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        table_entropy(&self.probs)
    }
}

/// Shannon entropy in bits.
pub fn entropy(p: &Pmf) -> f64 {
    p.entropy()
}

/// A dense joint distribution over 2 to 5 axes, stored row-major (last
/// axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    shape: Vec<usize>,
    probs: Vec<f64>,
}

impl JointPmf {
    pub const MIN_AXES: usize = 2;
    pub const MAX_AXES: usize = 5;

    pub fn new(shape: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let cells = check_shape(&shape)?;
        if probs.len() != cells {
            return Err(Error::ShapeMismatch { left: shape, right: vec![probs.len()] });
        }
        check_mass(&probs)?;
        Ok(Self { shape, probs })
    }

    pub fn from_weights(shape: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let cells = check_shape(&shape)?;
        if weights.len() != cells {
            return Err(Error::ShapeMismatch { left: shape, right: vec![weights.len()] });
        }
        Self::new(shape, normalize(weights)?)
    }

    /// Builds a table by evaluating `f` on every multi-index; the values
    /// are normalized.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let cells = check_shape(&shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut weights = Vec::with_capacity(cells);
        for _ in 0..cells {
            weights.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self::from_weights(shape, weights)
    }

    /// The product distribution of independent marginals.
    pub fn product(marginals: &[&Pmf]) -> Result<Self> {
        let shape: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
        Self::from_fn(shape, |idx| {
            idx.iter().zip(marginals).map(|(&i, m)| m.probs[i]).product()
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_axes(&self) -> usize {
        self.shape.len()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            flat = flat * n + i;
        }
        self.probs[flat]
    }

    /// Sums out every axis not listed in `axes`. The result is ordered by
    /// `axes` (which need not be sorted) and is row-major.
    pub fn marginal_table(&self, axes: &[usize]) -> Vec<f64> {
        if axes.is_empty() {
            return vec![self.probs.iter().sum()];
        }
        let mut out_strides = vec![0usize; self.shape.len()];
        let mut size = 1;
        for &a in axes.iter().rev() {
            out_strides[a] = size;
            size *= self.shape[a];
        }
        let mut out = vec![0.0; size];
        let mut idx = vec![0usize; self.shape.len()];
        for &p in &self.probs {
            let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            out[o] += p;
            increment(&mut idx, &self.shape);
        }
        out
    }

    /// Marginal distribution of a single axis.
    pub fn marginal(&self, axis: usize) -> Result<Pmf> {
        self.check_axes(&[axis])?;
        Pmf::new(self.marginal_table(&[axis]))
            .or_else(|_| Pmf::from_weights(self.marginal_table(&[axis])))
    }

    /// Keeps the listed axes (at least two) in the given order.
    pub fn marginalize(&self, keep: &[usize]) -> Result<JointPmf> {
        self.check_axes(keep)?;
        let shape = keep.iter().map(|&a| self.shape[a]).collect();
        JointPmf::from_weights(shape, self.marginal_table(keep))
    }

    /// Joint entropy of the listed axes; the empty set has entropy zero.
    pub fn entropy_of(&self, axes: &[usize]) -> Result<f64> {
        if axes.is_empty() {
            return Ok(0.0);
        }
        self.check_axes(axes)?;
        Ok(table_entropy(&self.marginal_table(axes)))
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        for (i, &a) in axes.iter().enumerate() {
            if a >= self.shape.len() {
                return Err(Error::arg(format!(
                    "axis {a} out of range for a {}-axis table",
                    self.shape.len()
                )));
            }
            if axes[..i].contains(&a) {
                return Err(Error::arg(format!("axis {a} listed twice")));
            }
        }
        Ok(())
    }

    fn check_disjoint(&self, sets: &[&[usize]]) -> Result<()> {
        for (i, s) in sets.iter().enumerate() {
            self.check_axes(s)?;
            for t in &sets[..i] {
                if let Some(a) = s.iter().find(|a| t.contains(a)) {
                    return Err(Error::arg(format!("axis {a} appears in two axis sets")));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the text format: an `axes:` header followed by one
    /// probability per line, row-major, with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::from("axes:");
        for n in &self.shape {
            let _ = write!(s, " {n}");
        }
        s.push('\n');
        for p in &self.probs {
            let _ = writeln!(s, "{p:.16e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
        let dims = header
            .strip_prefix("axes:")
            .ok_or_else(|| Error::Parse(format!("expected `axes:` header, got `{header}`")))?;
        let shape = dims
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("axis size `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let probs = lines
            .map(|l| l.parse::<f64>().map_err(|e| Error::Parse(format!("probability `{l}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, probs)
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() < JointPmf::MIN_AXES || shape.len() > JointPmf::MAX_AXES {
        return Err(Error::InvalidDistribution(format!(
            "a joint table needs between {} and {} axes, got {}",
            JointPmf::MIN_AXES,
            JointPmf::MAX_AXES,
            shape.len()
        )));
    }
    let mut cells: usize = 1;
    for &n in shape {
        if n == 0 {
            return Err(Error::InvalidDistribution("axis of size zero".into()));
        }
        cells = cells
            .checked_mul(n)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| {
                Error::InvalidDistribution(format!(
                    "table {shape:?} exceeds the {MAX_CELLS}-cell limit"
                ))
            })?;
    }
    Ok(cells)
}

/// Row-major multi-index increment.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

/// `H(T | G) = H(T, G) - H(G)`.
pub fn conditional_entropy(j: &JointPmf, target: &[usize], given: &[usize]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::arg("conditional entropy needs a non-empty target"));
    }
    j.check_disjoint(&[target, given])?;
    Ok(j.entropy_of(&union(target, given))? - j.entropy_of(given)?)
}

/// `I(A; B) = H(A) + H(B) - H(A, B)`.
pub fn mutual_information(j: &JointPmf, a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("mutual information needs non-empty axis sets"));
    }
    j.check_disjoint(&[a, b])?;
    Ok(j.entropy_of(a)? + j.entropy_of(b)? - j.entropy_of(&union(a, b))?)
}

/// `I(A; B | C) = H(A, C) + H(B, C) - H(A, B, C) - H(C)`.
pub fn conditional_mutual_information(
    j: &JointPmf,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("conditional mutual information needs non-empty axis sets"));
    }
    j.check_disjoint(&[a, b, c])?;
    let ac = union(a, c);
    let bc = union(b, c);
    let abc = union(&ac, b);
    Ok(j.entropy_of(&ac)? + j.entropy_of(&bc)? - j.entropy_of(&abc)? - j.entropy_of(c)?)
}

/// `I(A; B; C) = I(A; B) - I(A; B | C)`. May be negative.
pub fn interaction_information(
    j: &JointPmf,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::arg("interaction information needs three non-empty axis sets"));
    }
    Ok(mutual_information(j, a, b)? - conditional_mutual_information(j, a, b, c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xor_triple() -> JointPmf {
        JointPmf::from_fn(vec![2, 2, 2], |i| if i[2] == i[0] ^ i[1] { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(Pmf::uniform(2).unwrap().entropy(), 1.0);
        assert_eq!(Pmf::point_mass(4, 2).unwrap().entropy(), 0.0);
        assert!((Pmf::uniform(10).unwrap().entropy() - 10f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn invalid_mass_is_rejected() {
        assert!(matches!(Pmf::new(vec![0.5, 0.4]), Err(Error::InvalidDistribution(_))));
        assert!(Pmf::new(vec![1.5, -0.5]).is_err());
        assert!(Pmf::new(vec![]).is_err());
        assert!(JointPmf::new(vec![2], vec![0.5, 0.5]).is_err());
        assert!(JointPmf::new(vec![2, 2], vec![0.25; 3]).is_err());
        assert!(JointPmf::from_weights(vec![10_000, 10_000], vec![]).is_err());
    }

    #[test]
    fn conditional_entropy_examples() {
        let copy = JointPmf::from_fn(vec![3, 3], |i| (i[0] == i[1]) as u8 as f64).unwrap();
        assert!(conditional_entropy(&copy, &[1], &[0]).unwrap().abs() < 1e-12);
        let indep = JointPmf::from_fn(vec![2, 2], |_| 1.0).unwrap();
        assert!((conditional_entropy(&indep, &[1], &[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            conditional_entropy(&indep, &[0], &[0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mutual_information_examples() {
        let indep = JointPmf::from_fn(vec![3, 4], |_| 1.0).unwrap();
        assert!(mutual_information(&indep, &[0], &[1]).unwrap().abs() < 1e-12);
        let copy = JointPmf::from_fn(vec![5, 5], |i| (i[0] == i[1]) as u8 as f64).unwrap();
        assert!((mutual_information(&copy, &[0], &[1]).unwrap() - 5f64.log2()).abs() < 1e-12);
        assert!(mutual_information(&copy, &[0], &[]).is_err());
    }

    #[test]
    fn xor_triple_values() {
        let j = xor_triple();
        assert!(mutual_information(&j, &[0], &[1]).unwrap().abs() < 1e-12);
        let cmi = conditional_mutual_information(&j, &[0], &[1], &[2]).unwrap();
        assert!((cmi - 1.0).abs() < 1e-12);
        let ii = interaction_information(&j, &[0], &[1], &[2]).unwrap();
        assert!((ii + 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_triple_has_positive_interaction() {
        let j = JointPmf::from_fn(vec![2, 2, 2], |i| (i[0] == i[1] && i[1] == i[2]) as u8 as f64)
            .unwrap();
        let ii = interaction_information(&j, &[0], &[1], &[2]).unwrap();
        assert!((ii - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditioning_on_constant_axis_is_noop() {
        let j = JointPmf::from_fn(vec![3, 2, 1], |i| (1 + i[0] * 2 + i[1] * i[0]) as f64).unwrap();
        let cmi = conditional_mutual_information(&j, &[0], &[1], &[2]).unwrap();
        let mi = mutual_information(&j, &[0], &[1]).unwrap();
        assert!((cmi - mi).abs() < 1e-12);
    }

    #[test]
    fn markov_chain_gives_zero_cmi() {
        // A <- C -> B with C uniform.
        let pa = [[0.9, 0.1], [0.2, 0.8]];
        let pb = [[0.6, 0.3, 0.1], [0.1, 0.1, 0.8]];
        let j = JointPmf::from_fn(vec![2, 3, 2], |i| pa[i[2]][i[0]] * pb[i[2]][i[1]]).unwrap();
        assert!(conditional_mutual_information(&j, &[0], &[1], &[2]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn marginal_table_respects_axis_order() {
        let j = JointPmf::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1] + 1) as f64).unwrap();
        let t01 = j.marginalize(&[0, 1]).unwrap();
        let t10 = j.marginalize(&[1, 0]).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                assert_eq!(t01.get(&[a, b]), t10.get(&[b, a]));
            }
        }
    }

    #[test]
    fn text_round_trip_is_bit_identical() {
        let j = JointPmf::from_fn(vec![3, 2, 2], |i| 1.0 / (1.0 + (i[0] + 2 * i[1] + 5 * i[2]) as f64))
            .unwrap();
        let back = JointPmf::from_text(&j.to_text()).unwrap();
        assert_eq!(back.shape(), j.shape());
        for (a, b) in back.probs().iter().zip(j.probs()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(JointPmf::from_text("shape: 2 2\n0.25").is_err());
    }

    fn arb_joint() -> impl Strategy<Value = JointPmf> {
        (2usize..4, 2usize..4, 1usize..4).prop_flat_map(|(a, b, c)| {
            prop::collection::vec(0.0f64..1.0, a * b * c).prop_map(move |w| {
                let w: Vec<f64> = w.into_iter().map(|x| x * x + 1e-9).collect();
                JointPmf::from_weights(vec![a, b, c], w).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn functionals_are_non_negative(j in arb_joint()) {
            prop_assert!(j.entropy_of(&[0, 1, 2]).unwrap() >= -1e-12);
            prop_assert!(conditional_entropy(&j, &[0], &[1, 2]).unwrap() >= -1e-12);
            prop_assert!(mutual_information(&j, &[0], &[1, 2]).unwrap() >= -1e-12);
            prop_assert!(conditional_mutual_information(&j, &[0], &[1], &[2]).unwrap() >= -1e-12);
        }

        #[test]
        fn chain_rule(j in arb_joint()) {
            let lhs = mutual_information(&j, &[0], &[2]).unwrap();
            let rhs = mutual_information(&j, &[0], &[1, 2]).unwrap()
                - conditional_mutual_information(&j, &[0], &[1], &[2]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn interaction_corollary(j in arb_joint()) {
            let ii = interaction_information(&j, &[0], &[1], &[2]).unwrap();
            let alt = mutual_information(&j, &[0, 1], &[2]).unwrap()
                - conditional_mutual_information(&j, &[0], &[2], &[1]).unwrap()
                - conditional_mutual_information(&j, &[1], &[2], &[0]).unwrap();
            prop_assert!((ii - alt).abs() < 1e-10);
        }

        #[test]
        fn marginalization_preserves_mass(j in arb_joint()) {
            let total: f64 = j.marginal_table(&[2, 0]).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let two_step = j.marginalize(&[0, 1]).unwrap().marginal(0).unwrap();
            let direct = j.marginal(0).unwrap();
            for (a, b) in two_step.probs().iter().zip(direct.probs()) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
