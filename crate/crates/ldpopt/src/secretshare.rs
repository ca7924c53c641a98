//! Additive secret sharing over `ℤ_p` for exact aggregate exchange.
//!
//! Reals are fixed-point encoded with a power-of-two scale; negatives use
//! the balanced representation, so residues above `p/2` decode as
//! negative values.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, domain};

/// The Mersenne prime `2⁶¹ - 1`.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale_bits: u32,
    modulus: u64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self { scale_bits: 16, modulus: MERSENNE_61 }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32) -> Result<Self> {
        Self::with_modulus(scale_bits, MERSENNE_61)
    }

    /// `modulus` must be odd and leave at least one bit of magnitude above
    /// the scale.
    pub fn with_modulus(scale_bits: u32, modulus: u64) -> Result<Self> {
        if modulus.is_multiple_of(2) || modulus >> 62 != 0 {
            return invalid("modulus must be odd and below 2^62");
        }
        if scale_bits == 0 || (1u64 << scale_bits.min(63)) >= modulus / 4 || scale_bits >= 62 {
            return invalid(format!("scale 2^{scale_bits} leaves no headroom under modulus {modulus}"));
        }
        Ok(Self { scale_bits, modulus })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.scale_bits) as f64
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    /// Largest magnitude that encodes without wrapping.
    pub fn max_magnitude(&self) -> f64 {
        ((self.modulus - 1) / 2) as f64 / self.scale()
    }

    pub fn encode(&self, value: &[f64]) -> Result<Vec<u64>> {
        let half = ((self.modulus - 1) / 2) as i128;
        value
            .iter()
            .map(|&v| {
                let q = (v * self.scale()).round();
                if !q.is_finite() || q.abs() > half as f64 {
                    return Err(Error::InvalidArgument(format!(
                        "value {v} exceeds codec range ±{}",
                        self.max_magnitude()
                    )));
                }
                Ok((q as i128).rem_euclid(self.modulus as i128) as u64)
            })
            .collect()
    }

    pub fn decode(&self, residues: &[u64]) -> Vec<f64> {
        residues
            .iter()
            .map(|&r| {
                let r = r % self.modulus;
                let signed = if r > self.modulus / 2 { r as i128 - self.modulus as i128 } else { r as i128 };
                signed as f64 / self.scale()
            })
            .collect()
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        ((a as u128 + b as u128) % self.modulus as u128) as u64
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        self.add(a, self.modulus - b % self.modulus)
    }

    /// Coordinate-wise sum of residue vectors.
    pub fn sum<'a>(&self, vectors: impl IntoIterator<Item = &'a [u64]>, dim: usize) -> Vec<u64> {
        let mut acc = vec![0u128; dim];
        for v in vectors {
            for (a, &x) in acc.iter_mut().zip(v) {
                *a += x as u128;
            }
        }
        acc.into_iter().map(|a| (a % self.modulus as u128) as u64).collect()
    }
}

/// One agent's split secret; `shares[j]` goes to agent `j`, and
/// `shares[owner]` never leaves the owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareBundle {
    pub owner: usize,
    pub shares: Vec<Vec<u64>>,
    pub codec: FixedPointCodec,
}

impl ShareBundle {
    pub fn kept_secret(&self) -> usize {
        self.owner
    }

    pub fn reconstruct(&self) -> Vec<u64> {
        let dim = self.shares.first().map_or(0, Vec::len);
        self.codec.sum(self.shares.iter().map(Vec::as_slice), dim)
    }
}

/// Splits into `n` shares: shares `2..n` uniform, share 1 the complement.
pub fn split(encoded: &[u64], n: usize, owner: usize, seed: u64, codec: &FixedPointCodec) -> Result<ShareBundle> {
    if n < 2 {
        return invalid("sharing needs at least two parties");
    }
    if owner >= n {
        return invalid(format!("owner {owner} outside {n} parties"));
    }
    let p = codec.modulus();
    let mut r = rng::stream(seed, domain::SHARE, owner as u64, 0);
    let mut shares = vec![Vec::new(); n];
    for s in shares.iter_mut().skip(1) {
        *s = (0..encoded.len()).map(|_| r.random_range(0..p)).collect();
    }
    let others = codec.sum(shares[1..].iter().map(Vec::as_slice), encoded.len());
    shares[0] = encoded.iter().zip(&others).map(|(&e, &o)| codec.sub(e, o)).collect();
    Ok(ShareBundle { owner, shares, codec: *codec })
}

fn check_bundles(bundles: &[ShareBundle], codec: &FixedPointCodec) -> Result<usize> {
    let n = bundles.len();
    let dim = bundles.first().and_then(|b| b.shares.first()).map_or(0, Vec::len);
    for (i, b) in bundles.iter().enumerate() {
        if b.codec != *codec {
            return invalid(format!("bundle {} uses a different codec", i + 1));
        }
        if b.owner != i || b.shares.len() != n || b.shares.iter().any(|s| s.len() != dim) {
            return invalid(format!("bundle {} does not match {n} parties of dimension {dim}", i + 1));
        }
    }
    Ok(dim)
}

/// `ŝ_j = Σ_i s_ij`, the value agent `j` broadcasts.
pub fn partial_sums(bundles: &[ShareBundle]) -> Vec<Vec<u64>> {
    let n = bundles.len();
    let dim = bundles.first().and_then(|b| b.shares.first()).map_or(0, Vec::len);
    let codec = bundles.first().map(|b| b.codec).unwrap_or_default();
    (0..n).map(|j| codec.sum(bundles.iter().map(|b| b.shares[j].as_slice()), dim)).collect()
}

/// Full protocol: share, sum received shares, broadcast, decode `Σ_j ŝ_j`.
pub fn aggregate_exchange(bundles: &[ShareBundle], codec: &FixedPointCodec) -> Result<Vec<f64>> {
    let dim = check_bundles(bundles, codec)?;
    let partial = partial_sums(bundles);
    Ok(codec.decode(&codec.sum(partial.iter().map(Vec::as_slice), dim)))
}

/// Messages visible to a coalition: shares sent to its members and every
/// broadcast partial sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub colluders: Vec<usize>,
    /// `(sender, receiver, share)` for every receiver in the coalition.
    pub received: Vec<(usize, usize, Vec<u64>)>,
    pub broadcasts: Vec<Vec<u64>>,
}

impl Transcript {
    /// Debug dump, one residue per line: `kind,sender,receiver,coord,value`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "kind,sender,receiver,coord,value")?;
        for (s, r, v) in &self.received {
            for (l, x) in v.iter().enumerate() {
                writeln!(out, "share,{},{},{},{x}", s + 1, r + 1, l)?;
            }
        }
        for (j, v) in self.broadcasts.iter().enumerate() {
            for (l, x) in v.iter().enumerate() {
                writeln!(out, "broadcast,{},,{},{x}", j + 1, l)?;
            }
        }
        Ok(())
    }
}

/// Coalition view with the `N ≥ 3`, `|C| ≤ N - 2` guard enforced.
pub fn collusion_view(bundles: &[ShareBundle], colluders: &[usize], target: usize) -> Result<Transcript> {
    let n = bundles.len();
    if n < 3 {
        return invalid("collusion resistance needs at least three agents");
    }
    if colluders.len() > n - 2 {
        return invalid(format!("{} colluders exceed the N - 2 = {} bound", colluders.len(), n - 2));
    }
    if colluders.contains(&target) {
        return invalid("target must be honest");
    }
    collusion_view_unchecked(bundles, colluders)
}

/// Coalition view without the size guard, for probing the boundary.
pub fn collusion_view_unchecked(bundles: &[ShareBundle], colluders: &[usize]) -> Result<Transcript> {
    let n = bundles.len();
    if colluders.iter().any(|&c| c >= n) {
        return invalid("colluder index out of range");
    }
    let mut c = colluders.to_vec();
    c.sort_unstable();
    c.dedup();
    let mut received = Vec::new();
    for &r in &c {
        for (s, b) in bundles.iter().enumerate() {
            received.push((s, r, b.shares[r].clone()));
        }
    }
    Ok(Transcript { colluders: c, received, broadcasts: partial_sums(bundles) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let c = FixedPointCodec::default();
        assert_eq!(c.encode(&[0.0]).unwrap(), vec![0]);
        assert_eq!(c.encode(&[1.5]).unwrap(), vec![98304]);
        assert_eq!(c.decode(&c.encode(&[-2.25]).unwrap()), vec![-2.25]);
        assert!(c.encode(&[1e15]).is_err());
    }

    #[test]
    fn two_party_split() {
        let c = FixedPointCodec::default();
        let b = split(&[12345], 2, 0, 9, &c).unwrap();
        assert_eq!(c.add(b.shares[0][0], b.shares[1][0]), 12345);
    }

    #[test]
    fn zero_aggregate_is_exact() {
        let c = FixedPointCodec::default();
        let bundles: Vec<_> = (0..3).map(|i| split(&[0, 0], 3, i, 4, &c).unwrap()).collect();
        assert_eq!(aggregate_exchange(&bundles, &c).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn guard_rejects_large_coalitions() {
        let c = FixedPointCodec::default();
        let bundles: Vec<_> = (0..4).map(|i| split(&[1], 4, i, 4, &c).unwrap()).collect();
        assert!(collusion_view(&bundles, &[1, 2, 3], 0).is_err());
        assert!(collusion_view(&bundles, &[1, 2], 0).is_ok());
        assert!(collusion_view(&bundles, &[0], 0).is_err());
    }
}
