//! Range coding of integer symbols under quantized CDFs.
//!
//! The coder keeps a 32-bit range, uses 16-bit probabilities and
//! renormalizes one byte at a time, with carry propagation through a
//! cached byte. The coding loop is integer-only, so output is identical on
//! every platform for identical inputs.

use crate::error::{Error, Result};

/// Probability precision in bits.
pub const PRECISION: u32 = 16;
/// Total frequency of every quantized CDF.
pub const TOTAL: u32 = 1 << PRECISION;
const TOP: u32 = 1 << 24;

/// Container magic.
pub const MAGIC: &[u8; 4] = b"GWN1";

/// A cumulative frequency table over the symbols
/// `offset..offset + len`. `cdf[0] = 0`, `cdf[len] = TOTAL` and every
/// symbol has frequency at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    offset: i32,
    cdf: Vec<u32>,
}

impl QuantizedCdf {
    pub fn new(offset: i32, cdf: Vec<u32>) -> Result<Self> {
        if cdf.len() < 2 || cdf[0] != 0 || *cdf.last().unwrap_or(&0) != TOTAL {
            return Err(Error::Coding(format!(
                "cdf must start at 0 and end at {TOTAL}"
            )));
        }
        if cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Coding("cdf must be strictly increasing".into()));
        }
        Ok(Self { offset, cdf })
    }

    /// Quantizes probabilities to the 16-bit grid. Each bin is floored,
    /// bins left at zero are raised to one by taking mass from the
    /// largest bin, and the rounding remainder goes to the largest bin.
    pub fn from_probs(offset: i32, probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n > TOTAL as usize {
            return Err(Error::Coding(format!("cannot quantize {n} bins to {PRECISION} bits")));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Coding("probabilities must be non-negative with positive sum".into()));
        }
        let mut freq: Vec<i64> = probs
            .iter()
            .map(|p| (p / total * TOTAL as f64).floor() as i64)
            .collect();
        let largest = |f: &[i64]| {
            f.iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        for i in 0..n {
            if freq[i] == 0 {
                freq[i] = 1;
                let j = largest(&freq);
                freq[j] -= 1;
            }
        }
        let sum: i64 = freq.iter().sum();
        let j = largest(&freq);
        freq[j] += TOTAL as i64 - sum;
        if freq.iter().any(|&f| f < 1) {
            return Err(Error::Coding("quantization left an empty bin".into()));
        }
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0u32);
        let mut acc = 0u32;
        for f in freq {
            acc += f as u32;
            cdf.push(acc);
        }
        Self::new(offset, cdf)
    }

    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn num_symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    fn index(&self, symbol: i32) -> Result<usize> {
        let i = symbol as i64 - self.offset as i64;
        if i < 0 || i >= self.num_symbols() as i64 {
            return Err(Error::Coding(format!(
                "symbol {symbol} outside support [{}, {}]",
                self.offset,
                self.offset as i64 + self.num_symbols() as i64 - 1
            )));
        }
        Ok(i as usize)
    }

    /// Ideal code length of `symbol` in bits under this table.
    pub fn bits(&self, symbol: i32) -> Result<f64> {
        let i = self.index(symbol)?;
        Ok(PRECISION as f64 - ((self.cdf[i + 1] - self.cdf[i]) as f64).log2())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub bit_length: u64,
}

impl Bitstream {
    pub fn len_bits(&self) -> u64 {
        self.bit_length
    }
}

struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode(&mut self, start: u32, freq: u32) {
        let r = self.range >> PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Flushes the value in `[low, low + range)` with the most trailing
    /// zero bits, drops the constant leading byte and strips up to four
    /// trailing zero bytes, which the decoder restores by zero padding.
    fn finish(mut self) -> Vec<u8> {
        let end = self.low + self.range as u64;
        for k in (0..=32).rev() {
            let mask = (1u64 << k) - 1;
            let v = (self.low + mask) & !mask;
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        let mut out = self.out.split_off(1);
        for _ in 0..4 {
            if out.last() != Some(&0) {
                break;
            }
            out.pop();
        }
        out
    }
}

/// Encodes `symbols[i]` under `models[i]`.
pub fn encode(symbols: &[i32], models: &[QuantizedCdf]) -> Result<Bitstream> {
    if symbols.len() != models.len() {
        return Err(Error::Coding(format!(
            "{} symbols but {} models",
            symbols.len(),
            models.len()
        )));
    }
    let mut enc = Encoder::new();
    for (&s, m) in symbols.iter().zip(models) {
        let i = m.index(s)?;
        enc.encode(m.cdf[i], m.cdf[i + 1] - m.cdf[i]);
    }
    let bytes = enc.finish();
    let bit_length = bytes.len() as u64 * 8;
    Ok(Bitstream { bytes, bit_length })
}

struct Decoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            bytes,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next()? as u32;
        }
        Ok(d)
    }

    /// Past the end the stream reads as zeros, for at most the four bytes
    /// a flush can strip.
    fn next(&mut self) -> Result<u8> {
        let b = match self.bytes.get(self.pos) {
            Some(&b) => b,
            None if self.pos < self.bytes.len() + 4 => 0,
            None => return Err(Error::Coding("bitstream is truncated".into())),
        };
        self.pos += 1;
        Ok(b)
    }

    fn decode(&mut self, m: &QuantizedCdf) -> Result<i32> {
        let r = self.range >> PRECISION;
        let v = (self.code / r).min(TOTAL - 1);
        // Largest i with cdf[i] <= v.
        let i = m.cdf.partition_point(|&c| c <= v) - 1;
        let (lo, hi) = (m.cdf[i], m.cdf[i + 1]);
        self.code -= r * lo;
        self.range = r * (hi - lo);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next()? as u32;
        }
        Ok(m.offset + i as i32)
    }
}

/// Decodes `n` symbols. `model` is called with the symbol index and the
/// symbols decoded so far, so conditional models can be rebuilt from
/// earlier output.
pub fn decode_with(
    bs: &Bitstream,
    n: usize,
    mut model: impl FnMut(usize, &[i32]) -> Result<QuantizedCdf>,
) -> Result<Vec<i32>> {
    if bs.bit_length > 8 * bs.bytes.len() as u64 {
        return Err(Error::Coding(format!(
            "bitstream is truncated: {} bits declared, {} bytes present",
            bs.bit_length,
            bs.bytes.len()
        )));
    }
    let used = &bs.bytes[..bs.bit_length.div_ceil(8) as usize];
    let mut dec = Decoder::new(used)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let m = model(i, &out)?;
        out.push(dec.decode(&m)?);
    }
    if dec.pos < used.len() {
        return Err(Error::Coding(format!(
            "{} unread bytes after the last symbol",
            used.len() - dec.pos
        )));
    }
    Ok(out)
}

/// Decodes `models.len()` symbols, `symbols[i]` under `models[i]`.
pub fn decode(bs: &Bitstream, models: &[QuantizedCdf]) -> Result<Vec<i32>> {
    decode_with(bs, models.len(), |i, _| Ok(models[i].clone()))
}

/// One coded channel of a container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub num_symbols: u32,
    pub stream: Bitstream,
}

/// Serializes channels (ordered `Y0, Y1, Y2`) as `GWN1`, then per
/// channel a little-endian `u32` symbol count, `u32` byte length and the
/// payload.
pub fn write_container(channels: &[Channel]) -> Result<Vec<u8>> {
    let mut out = Vec::from(&MAGIC[..]);
    for c in channels {
        let len = u32::try_from(c.stream.bytes.len())
            .map_err(|_| Error::Coding("channel payload exceeds 4 GiB".into()))?;
        out.extend_from_slice(&c.num_symbols.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&c.stream.bytes);
    }
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<Channel>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Coding("missing GWN1 magic".into()));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Coding("container is truncated".into()))?;
        pos += n;
        Ok(s)
    };
    let mut channels = Vec::new();
    loop {
        let head = match take(4) {
            Ok(h) => h,
            Err(_) => break,
        };
        let num_symbols = u32::from_le_bytes(head.try_into().expect("4 bytes"));
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let payload = take(len)?.to_vec();
        channels.push(Channel {
            num_symbols,
            stream: Bitstream {
                bit_length: payload.len() as u64 * 8,
                bytes: payload,
            },
        });
    }
    if pos != bytes.len() {
        return Err(Error::Coding("container is truncated".into()));
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> QuantizedCdf {
        QuantizedCdf::from_probs(0, &vec![1.0; n]).unwrap()
    }

    #[test]
    fn quantization_keeps_every_bin() {
        let mut probs = vec![1e-12; 200];
        probs[7] = 1.0;
        let q = QuantizedCdf::from_probs(-100, &probs).unwrap();
        assert_eq!(q.cdf()[200], TOTAL);
        assert!(q.cdf().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(q.cdf()[8] - q.cdf()[7], TOTAL - 199);
        assert!(QuantizedCdf::from_probs(0, &[]).is_err());
        assert!(QuantizedCdf::new(0, vec![0, 5, 5, TOTAL]).is_err());
    }

    #[test]
    fn uniform_four_ary_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let syms: Vec<i32> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        let models = vec![uniform(4); 1000];
        let bs = encode(&syms, &models).unwrap();
        assert!((2000..=2064).contains(&bs.bit_length), "{}", bs.bit_length);
        assert_eq!(decode(&bs, &models).unwrap(), syms);
    }

    #[test]
    fn empty_sequence() {
        let bs = encode(&[], &[]).unwrap();
        assert!(bs.bit_length <= 64);
        assert_eq!(decode(&bs, &[]).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn out_of_support_and_truncation_are_errors() {
        let m = vec![uniform(4); 3];
        assert!(encode(&[0, 4, 1], &m).is_err());
        assert!(encode(&[0, 1], &m).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let syms: Vec<i32> = (0..500).map(|_| rng.random_range(0..4)).collect();
        let models = vec![uniform(4); 500];
        let bs = encode(&syms, &models).unwrap();
        let mut cut = bs.clone();
        cut.bytes.truncate(bs.bytes.len() - 2);
        assert!(decode(&cut, &models).unwrap_err().to_string().contains("truncated"));
        let mut short = bs.clone();
        short.bytes.truncate(bs.bytes.len() / 2);
        short.bit_length = short.bytes.len() as u64 * 8;
        assert!(decode(&short, &models).is_err());
    }

    #[test]
    fn many_random_streams_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tables = Vec::new();
        for _ in 0..16 {
            let n = rng.random_range(1..40);
            let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(4)).collect();
            tables.push(QuantizedCdf::from_probs(rng.random_range(-20..20), &probs).unwrap());
        }
        for _ in 0..100_000 {
            let len = rng.random_range(0..12);
            let models: Vec<QuantizedCdf> = (0..len).map(|_| tables[rng.random_range(0..16)].clone()).collect();
            let syms: Vec<i32> = models
                .iter()
                .map(|m| m.offset() + rng.random_range(0..m.num_symbols()) as i32)
                .collect();
            let bs = encode(&syms, &models).unwrap();
            assert_eq!(decode(&bs, &models).unwrap(), syms);
        }
    }

    #[test]
    fn skewed_stream_is_near_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probs = [0.9, 0.05, 0.03, 0.02];
        let m = QuantizedCdf::from_probs(0, &probs).unwrap();
        let syms: Vec<i32> = (0..20_000)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.9 { 0 } else if u < 0.95 { 1 } else if u < 0.98 { 2 } else { 3 }
            })
            .collect();
        let models = vec![m.clone(); syms.len()];
        let ideal: f64 = syms.iter().map(|&s| m.bits(s).unwrap()).sum();
        let bs = encode(&syms, &models).unwrap();
        assert!((bs.bit_length as f64) <= ideal * 1.01 + 64.0, "{} vs {ideal}", bs.bit_length);
        assert_eq!(decode(&bs, &models).unwrap(), syms);
    }

    #[test]
    fn conditional_decoding() {
        // The model for symbol i depends on symbol i - 1.
        let model = |prev: Option<i32>| {
            let mut p = vec![1.0; 5];
            if let Some(s) = prev {
                p[s as usize] = 50.0;
            }
            QuantizedCdf::from_probs(0, &p).unwrap()
        };
        let syms = vec![0, 0, 3, 3, 3, 1, 4, 4];
        let models: Vec<_> = (0..syms.len())
            .map(|i| model(if i == 0 { None } else { Some(syms[i - 1]) }))
            .collect();
        let bs = encode(&syms, &models).unwrap();
        let out = decode_with(&bs, syms.len(), |i, prev| Ok(model(if i == 0 { None } else { Some(prev[i - 1]) }))).unwrap();
        assert_eq!(out, syms);
    }

    #[test]
    fn container_round_trip() {
        let models = vec![uniform(9); 30];
        let syms: Vec<i32> = (0..30).map(|i| i % 9).collect();
        let bs = encode(&syms, &models).unwrap();
        let chans = vec![
            Channel { num_symbols: 30, stream: bs.clone() },
            Channel { num_symbols: 0, stream: encode(&[], &[]).unwrap() },
            Channel { num_symbols: 30, stream: bs },
        ];
        let bytes = write_container(&chans).unwrap();
        assert_eq!(&bytes[..4], b"GWN1");
        assert_eq!(read_container(&bytes).unwrap(), chans);
        assert!(read_container(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_container(b"GWN0").is_err());
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let models = vec![QuantizedCdf::from_probs(-2, &[0.1, 0.2, 0.4, 0.2, 0.1]).unwrap(); 64];
        let syms: Vec<i32> = (0..64).map(|i| (i % 5) - 2).collect();
        assert_eq!(encode(&syms, &models).unwrap(), encode(&syms, &models).unwrap());
    }

    proptest! {
        #[test]
        fn prop_round_trip(
            weights in proptest::collection::vec(0.0f64..1.0, 1..30),
            picks in proptest::collection::vec(0usize..1000, 0..200),
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 0.0);
            let m = QuantizedCdf::from_probs(-3, &weights).unwrap();
            let syms: Vec<i32> = picks.iter().map(|&p| -3 + (p % weights.len()) as i32).collect();
            let models = vec![m; syms.len()];
            let bs = encode(&syms, &models).unwrap();
            prop_assert_eq!(decode(&bs, &models).unwrap(), syms.clone());
            let ideal: f64 = syms.iter().map(|&s| models[0].bits(s).unwrap()).sum();
            prop_assert!(bs.bit_length as f64 <= ideal + 32.0 + 2.0 * syms.len() as f64);
        }
    }
}
