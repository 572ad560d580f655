//! Unbiased random sparsifiers and the on-channel message format.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A compressed vector as transmitted on a channel.
///
/// Entries carry raw coordinate values with 1-based indices, in transmission
/// order. The decoded vector is `scale * value` at each index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMessage {
    pub entries: Vec<(u32, f64)>,
    pub scale: f64,
}

impl SparseMessage {
    pub fn new(entries: Vec<(u32, f64)>, scale: f64) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for &(i, _) in &entries {
            if i == 0 {
                return Err(Error::InvalidParameter("message indices are 1-based".into()));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidParameter(format!("duplicate index {i} in message")));
            }
        }
        Ok(Self { entries, scale })
    }

    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            scale: 1.0,
        }
    }

    pub fn payload_size(&self) -> usize {
        self.entries.len()
    }

    /// Adds `weight * decode(self)` into `out` (length `d`).
    pub fn accumulate(&self, out: &mut [f64], weight: f64) {
        for &(i, v) in &self.entries {
            out[i as usize - 1] += weight * self.scale * v;
        }
    }

    pub fn decode(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.accumulate(&mut out, 1.0);
        out
    }

    /// 1-based indices whose decoded value is nonzero.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        let scale = self.scale;
        self.entries
            .iter()
            .filter(move |(_, v)| scale * v != 0.0)
            .map(|&(i, _)| i)
    }

    /// Little-endian: `u32` count, `(u32 index, f64 value)` pairs, `f64` scale.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 12 * self.entries.len() + 8);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for &(i, v) in &self.entries {
            out.extend_from_slice(&i.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.scale.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::InvalidParameter("truncated or oversized message encoding".into());
        let count = u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
        if bytes.len() != 4 + 12 * count + 8 {
            return Err(bad());
        }
        let mut entries = Vec::with_capacity(count);
        for c in 0..count {
            let off = 4 + 12 * c;
            let i = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let v = f64::from_le_bytes(bytes[off + 4..off + 12].try_into().unwrap());
            entries.push((i, v));
        }
        let scale = f64::from_le_bytes(bytes[4 + 12 * count..].try_into().unwrap());
        Self::new(entries, scale)
    }
}

/// All `d` coordinates, scale 1.
pub fn identity(x: &[f64]) -> SparseMessage {
    SparseMessage {
        entries: x.iter().enumerate().map(|(j, &v)| (j as u32 + 1, v)).collect(),
        scale: 1.0,
    }
}

/// RandK with the unbiased scale `d/K`.
pub fn rand_k<R: Rng + ?Sized>(x: &[f64], k: usize, rng: &mut R) -> Result<SparseMessage> {
    let scale = x.len() as f64 / k.max(1) as f64;
    rand_k_scaled(x, k, scale, rng)
}

/// RandK with an arbitrary scale. Indices come out in sampled (random) order.
pub fn rand_k_scaled<R: Rng + ?Sized>(x: &[f64], k: usize, scale: f64, rng: &mut R) -> Result<SparseMessage> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!("RandK needs 1 <= K <= d, got K={k}, d={d}")));
    }
    let entries = index::sample(rng, d, k)
        .into_iter()
        .map(|j| (j as u32 + 1, x[j]))
        .collect();
    Ok(SparseMessage { entries, scale })
}

/// Block `part` of a random partition of `[d]` into `n` blocks, scale `n`.
///
/// Every worker must pass an identically seeded `rng` so the permutation is
/// shared. Blocks have `⌊d/n⌋` coordinates; the last one absorbs the remainder.
pub fn perm_k<R: Rng + ?Sized>(x: &[f64], part: usize, n: usize, rng: &mut R) -> Result<SparseMessage> {
    if n == 0 || part >= n {
        return Err(Error::InvalidParameter(format!("PermK block {part} out of range for n={n}")));
    }
    let d = x.len();
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let size = d / n;
    let lo = part * size;
    let hi = if part + 1 == n { d } else { lo + size };
    let entries = perm[lo..hi].iter().map(|&j| (j as u32 + 1, x[j])).collect();
    Ok(SparseMessage {
        entries,
        scale: n as f64,
    })
}

/// Per-coordinate arrival view of back-to-back FIFO messages on one channel:
/// `(index, offset)` where the `m`-th coordinate overall arrives at `m * tau`.
pub fn stream_view(messages: &[SparseMessage], tau: f64) -> Vec<(u32, f64)> {
    messages
        .iter()
        .flat_map(|m| m.entries.iter().map(|&(i, _)| i))
        .enumerate()
        .map(|(m, i)| (i, (m + 1) as f64 * tau))
        .collect()
}

/// Compressor selection used by algorithm configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Compressor {
    Identity,
    RandK { k: usize },
}

impl Compressor {
    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<SparseMessage> {
        match *self {
            Compressor::Identity => Ok(identity(x)),
            Compressor::RandK { k } => rand_k(x, k, rng),
        }
    }
}
