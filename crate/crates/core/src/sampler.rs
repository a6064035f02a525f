//! Publicly reproducible ballot selection.
//!
//! Draw `j` hashes `utf8(seed) || "," || decimal(j)` with SHA-256 and reads
//! the digest as a big-endian integer `Z_j`. The draw's fraction is
//! `r_j = (Z_j + 1) / 2^256`, which lies in `(0, 1]`, and the selected row is
//! `ℓ_j = ⌈N · r_j⌉`, computed in integer arithmetic. Any observer can recheck
//! a single draw without replaying the others, and the sequence is sampled
//! with replacement.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// The audit seed, recorded verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeedValue(pub String);

impl SeedValue {
    pub fn new(seed: impl Into<String>) -> Self {
        SeedValue(seed.into())
    }

    /// Builds a seed from a transcript of ten-sided die rolls such as
    /// `"3 1 4 1 5 9"` or `"3,1,4-1"`. Each roll is one digit 0-9; spaces,
    /// commas and dashes separate rolls and are dropped.
    pub fn from_dice(transcript: &str) -> Result<Self> {
        let mut seed = String::new();
        for ch in transcript.chars() {
            match ch {
                '0'..='9' => seed.push(ch),
                ' ' | '\t' | ',' | '-' => {}
                other => {
                    return Err(Error::Malformed(format!(
                        "dice transcript contains {other:?}; expected digits 0-9"
                    )))
                }
            }
        }
        if seed.is_empty() {
            return Err(Error::Malformed("dice transcript has no rolls".into()));
        }
        Ok(SeedValue(seed))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// The exact bytes hashed for draw `j`.
pub fn hash_input(seed: &SeedValue, j: u64) -> String {
    format!("{},{}", seed.0, j)
}

/// `r_j` as the exact fraction `(Z_j + 1) / 2^256`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct DrawFraction {
    /// Z_j, big-endian.
    digest: [u8; 32],
}

impl DrawFraction {
    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// Numerator `Z + 1` as five little-endian 64-bit limbs (the top limb is
    /// 1 only when `Z = 2^256 - 1`).
    fn numerator_limbs(&self) -> [u64; 5] {
        let mut limbs = [0u64; 5];
        for (i, chunk) in self.digest.rchunks_exact(8).enumerate() {
            limbs[i] = u64::from_be_bytes(chunk.try_into().unwrap());
        }
        let mut carry = 1u64;
        for limb in &mut limbs {
            let (v, c) = limb.overflowing_add(carry);
            *limb = v;
            carry = c as u64;
            if carry == 0 {
                break;
            }
        }
        limbs
    }

    /// Numerator in hex; 65 digits only for the all-ones digest.
    pub fn numerator_hex(&self) -> String {
        let limbs = self.numerator_limbs();
        let mut s = String::new();
        if limbs[4] != 0 {
            s.push_str(&format!("{:x}", limbs[4]));
        }
        for limb in limbs[..4].iter().rev() {
            s.push_str(&format!("{limb:016x}"));
        }
        s
    }

    /// Rounded value for statistics and display only.
    pub fn to_f64(&self) -> f64 {
        let limbs = self.numerator_limbs();
        let mut v = 0.0f64;
        for &limb in limbs.iter().rev() {
            v = v * 18446744073709551616.0 + limb as f64;
        }
        v / libm::pow(2.0, 256.0)
    }

    /// `⌈n · (Z+1) / 2^256⌉`, exact.
    pub fn scale_ceil(&self, n: u64) -> u64 {
        let num = self.numerator_limbs();
        // n · (Z+1) ≤ (2^64 - 1) · 2^256, so five limbs hold the product.
        let mut prod = [0u64; 5];
        let mut carry: u128 = 0;
        for i in 0..5 {
            let t = num[i] as u128 * n as u128 + carry;
            prod[i] = t as u64;
            carry = t >> 64;
        }
        debug_assert_eq!(carry, 0);
        let fractional = prod[..4].iter().any(|&l| l != 0);
        let whole = prod[4];
        whole + fractional as u64
    }
}

impl fmt::Debug for DrawFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}/2^256", self.numerator_hex())
    }
}

pub fn prng_fraction(seed: &SeedValue, j: u64) -> DrawFraction {
    assert!(j >= 1, "draws are numbered from 1");
    let digest = Sha256::digest(hash_input(seed, j).as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    DrawFraction { digest: out }
}

/// One sampled row of the ballot style file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawIndex {
    pub j: u64,
    pub fraction: DrawFraction,
    /// ℓ_j, 1-based row number.
    pub row: u64,
}

impl DrawIndex {
    pub fn compute(seed: &SeedValue, population: u64, j: u64) -> Self {
        assert!(population >= 1, "empty population");
        let fraction = prng_fraction(seed, j);
        DrawIndex {
            j,
            fraction,
            row: fraction.scale_ceil(population),
        }
    }
}

/// Draws `1..=count`, duplicates kept.
pub fn draw_sequence(seed: &SeedValue, population: u64, count: u64) -> Vec<DrawIndex> {
    (1..=count)
        .map(|j| DrawIndex::compute(seed, population, j))
        .collect()
}
