//! Scrambled Halton sequences and draw matrices for simulated likelihood.
//!
//! Dimension `k` of a multidimensional point set uses the k-th prime as its
//! base. Scrambling applies a seeded random permutation of the digit alphabet
//! `{0..base-1}` with 0 held fixed (so values stay strictly inside (0, 1)),
//! reusing the same permutation for every digit of that base. Seed
//! [`IDENTITY_SCRAMBLE_SEED`] forces the identity permutation, which keeps the
//! unscrambled kernel reachable through the scrambled code path.
//!
//! Unit `u` (zero-based) receives points `skip + u*R + 1 ..= skip + (u+1)*R`
//! of each sequence, so no Halton index is shared between units. At the
//! stratum level one block is generated per stratum and shared by all of its
//! members.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;

/// Reserved seed that makes `scramble_digits` use the identity permutation.
pub const IDENTITY_SCRAMBLE_SEED: u64 = 0;

/// Largest supported number of Halton dimensions.
pub const DIMENSION_CAP: usize = 20;

const DUMP_MAGIC: &[u8; 4] = b"HALT";
const DUMP_VERSION: u32 = 1;

/// Configuration of a scrambled Halton point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltonConfig {
    /// Number of dimensions K; dimension k uses the k-th prime base.
    pub dimension: usize,
    /// Count of initial points discarded from every sequence.
    pub skip: usize,
    pub scramble: bool,
    pub seed: u64,
}

impl Default for HaltonConfig {
    fn default() -> Self {
        HaltonConfig {
            dimension: 1,
            skip: 50,
            scramble: true,
            seed: 42,
        }
    }
}

impl HaltonConfig {
    /// The prime bases in use: the first `dimension` primes.
    pub fn bases(&self) -> Vec<u32> {
        first_primes(self.dimension)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawLevel {
    Individual,
    Stratum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawSpace {
    Uniform01,
    StandardNormal,
}

/// Precomputed standard draws, one R x K block per unit (or per stratum).
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    pub level: DrawLevel,
    pub units: usize,
    pub draws_per_unit: usize,
    pub dimension: usize,
    pub space: DrawSpace,
    pub seed: u64,
    /// Row-major `units x draws_per_unit x dimension`.
    pub values: Vec<f64>,
}

impl DrawMatrix {
    #[inline]
    pub fn value(&self, unit: usize, draw: usize, dim: usize) -> f64 {
        self.values[(unit * self.draws_per_unit + draw) * self.dimension + dim]
    }

    /// The full R x K block of one unit.
    pub fn unit_block(&self, unit: usize) -> &[f64] {
        let len = self.draws_per_unit * self.dimension;
        &self.values[unit * len..(unit + 1) * len]
    }

    /// Binary dump for cross-implementation comparison: little-endian header
    /// (magic `HALT`, version, U, R, K, space, seed) then row-major f64 values.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(45 + self.values.len() * 8);
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.units as u64).to_le_bytes());
        out.extend_from_slice(&(self.draws_per_unit as u64).to_le_bytes());
        out.extend_from_slice(&(self.dimension as u64).to_le_bytes());
        out.push(match self.space {
            DrawSpace::Uniform01 => 0,
            DrawSpace::StandardNormal => 1,
        });
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<DrawMatrix> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let err = |msg: &str| Error::parse(0, format!("draw dump: {msg}"));
        if bytes.len() < 45 {
            return Err(err("truncated header"));
        }
        if &bytes[0..4] != DUMP_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DUMP_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let units = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let r = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let space = match bytes[32] {
            0 => DrawSpace::Uniform01,
            1 => DrawSpace::StandardNormal,
            other => return Err(err(&format!("unknown space tag {other}"))),
        };
        let seed = u64::from_le_bytes(bytes[33..41].try_into().unwrap());
        let n = units
            .checked_mul(r)
            .and_then(|x| x.checked_mul(k))
            .ok_or_else(|| err("size overflow"))?;
        if bytes.len() != 41 + n * 8 {
            return Err(err("value payload length mismatch"));
        }
        let values = bytes[41..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DrawMatrix {
            level: DrawLevel::Individual,
            units,
            draws_per_unit: r,
            dimension: k,
            space,
            seed,
            values,
        })
    }
}

fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u32;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// The first `k` primes (2, 3, 5, ...).
pub fn first_primes(k: usize) -> Vec<u32> {
    let mut primes = Vec::with_capacity(k);
    let mut n = 2;
    while primes.len() < k {
        if is_prime(n) {
            primes.push(n);
        }
        n += 1;
    }
    primes
}

/// Radical inverse of `n` in the given base.
fn radical_inverse(base: u64, mut n: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut x = 0.0;
    let mut f = inv;
    while n > 0 {
        x += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    x
}

fn scrambled_radical_inverse(base: u64, mut n: u64, perm: &[u32]) -> f64 {
    let inv = 1.0 / base as f64;
    let mut x = 0.0;
    let mut f = inv;
    while n > 0 {
        x += perm[(n % base) as usize] as f64 * f;
        n /= base;
        f *= inv;
    }
    x
}

/// Seeded permutation of the digit alphabet with 0 fixed. Identical
/// `(base, seed)` always yields the same permutation.
fn digit_permutation(base: u32, seed: u64) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..base).collect();
    if seed != IDENTITY_SCRAMBLE_SEED && base > 2 {
        let stream = seed ^ (base as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        perm[1..].shuffle(&mut rng);
    }
    perm
}

fn validate_base(base: u32) -> Result<()> {
    if !is_prime(base) {
        return Err(Error::invalid(format!("Halton base {base} is not prime")));
    }
    Ok(())
}

/// Unscrambled Halton sequence: radical inverses of `skip+1 ..= skip+count`.
pub fn halton_sequence(base: u32, count: usize, skip: usize) -> Result<Vec<f64>> {
    validate_base(base)?;
    Ok((1..=count)
        .map(|t| radical_inverse(base as u64, (skip + t) as u64))
        .collect())
}

/// Digit-scrambled Halton sequence. Seed [`IDENTITY_SCRAMBLE_SEED`] reproduces
/// the unscrambled sequence exactly.
pub fn scramble_digits(base: u32, count: usize, skip: usize, seed: u64) -> Result<Vec<f64>> {
    validate_base(base)?;
    let perm = digit_permutation(base, seed);
    Ok((1..=count)
        .map(|t| scrambled_radical_inverse(base as u64, (skip + t) as u64, &perm))
        .collect())
}

/// Inverse standard-normal CDF transform of a uniform draw in (0, 1).
pub fn normal_from_uniform(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!(
            "uniform draw must lie strictly in (0,1), got {u}"
        )));
    }
    Ok(special::inverse_normal_cdf(u))
}

/// Build the per-unit draw blocks for `units` units, `r` draws each, in
/// `config.dimension` dimensions. At [`DrawLevel::Stratum`] the caller passes
/// the stratum count as `units` and shares each block across members.
pub fn build_draws(
    config: &HaltonConfig,
    units: usize,
    r: usize,
    level: DrawLevel,
    space: DrawSpace,
) -> Result<DrawMatrix> {
    let k = config.dimension;
    if k == 0 || k > DIMENSION_CAP {
        return Err(Error::invalid(format!(
            "draw dimension {k} outside 1..={DIMENSION_CAP}"
        )));
    }
    if units == 0 || r == 0 {
        return Err(Error::invalid("draw matrix needs units >= 1 and R >= 1"));
    }
    let total = units
        .checked_mul(r)
        .and_then(|x| x.checked_mul(k))
        .filter(|&x| x < (1usize << 40))
        .ok_or_else(|| Error::invalid("draw budget overflow"))?;
    // The largest Halton index must stay exactly representable.
    (config.skip)
        .checked_add(units * r)
        .filter(|&x| (x as u64) < (1u64 << 52))
        .ok_or_else(|| Error::invalid("draw budget overflow"))?;

    let mut values = vec![0.0; total];
    for (dim, &base) in config.bases().iter().enumerate() {
        let perm = if config.scramble {
            digit_permutation(base, config.seed)
        } else {
            digit_permutation(base, IDENTITY_SCRAMBLE_SEED)
        };
        for unit in 0..units {
            for t in 0..r {
                let index = (config.skip + unit * r + t + 1) as u64;
                let u = scrambled_radical_inverse(base as u64, index, &perm);
                let v = match space {
                    DrawSpace::Uniform01 => u,
                    DrawSpace::StandardNormal => special::inverse_normal_cdf(u),
                };
                values[(unit * r + t) * k + dim] = v;
            }
        }
    }
    Ok(DrawMatrix {
        level,
        units,
        draws_per_unit: r,
        dimension: k,
        space,
        seed: config.seed,
        values,
    })
}
