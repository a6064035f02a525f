//! Salted-hash commitments that shroud ballot identifiers.
//!
//! A commitment is `SHA-256(utf8(ballot_id) || salt)` where every ballot id in
//! the election has the same length and every salt is exactly 16 bytes. Both
//! inputs are fixed-width, so plain concatenation is unambiguous and no HMAC
//! construction is needed.

use alloc::format;
use alloc::string::String;
use core::fmt;

use rand_core::TryCryptoRng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Salt length in bytes.
pub const SALT_LEN: usize = 16;
/// Digest length in bytes.
pub const DIGEST_LEN: usize = 32;

/// Name of the commitment function as disclosed in the election manifest.
pub const COMMITMENT_FUNCTION: &str = "sha256(utf8(ballot_id)||salt)";

/// A fixed-length decimal ballot identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct BallotId(String);

impl BallotId {
    /// Accepts a non-empty string of ASCII digits.
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Malformed(format!(
                "ballot id {value:?} is not a non-empty decimal string"
            )));
        }
        Ok(BallotId(value))
    }

    /// Formats `n` with leading zeros to `width` digits.
    pub fn padded(n: u64, width: usize) -> Result<Self> {
        let s = format!("{n:0width$}");
        if s.len() != width {
            return Err(Error::Malformed(format!("{n} does not fit in {width} digits")));
        }
        Ok(BallotId(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for BallotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for BallotId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        BallotId::new(value)
    }
}

impl From<BallotId> for String {
    fn from(id: BallotId) -> String {
        id.0
    }
}

/// A 128-bit secret salt.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct Salt(pub [u8; SALT_LEN]);

impl Salt {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 32 lowercase hex characters.
    pub fn from_hex(s: &str) -> Result<Self> {
        Ok(Salt(parse_lower_hex::<SALT_LEN>(s, "salt")?))
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Salt({})", self.to_hex())
    }
}

impl TryFrom<String> for Salt {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Salt::from_hex(&value)
    }
}

impl From<Salt> for String {
    fn from(s: Salt) -> String {
        s.to_hex()
    }
}

/// A shrouded ballot identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct Commitment(pub [u8; DIGEST_LEN]);

impl Commitment {
    /// 64 lowercase hex characters.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Strict: uppercase hex is rejected so that digests compare byte-for-byte
    /// across tools.
    pub fn from_hex(s: &str) -> Result<Self> {
        Ok(Commitment(parse_lower_hex::<DIGEST_LEN>(s, "digest")?))
    }
}

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", self.to_hex())
    }
}

impl fmt::Display for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl TryFrom<String> for Commitment {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Commitment::from_hex(&value)
    }
}

impl From<Commitment> for String {
    fn from(c: Commitment) -> String {
        c.to_hex()
    }
}

fn parse_lower_hex<const N: usize>(s: &str, what: &str) -> Result<[u8; N]> {
    if s.len() != 2 * N {
        return Err(Error::Malformed(format!(
            "{what} must be {} hex characters, got {}",
            2 * N,
            s.len()
        )));
    }
    if !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(Error::Malformed(format!("{what} {s:?} is not lowercase hex")));
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(s, &mut out).map_err(|e| Error::Malformed(format!("{what}: {e}")))?;
    Ok(out)
}

/// The published commitment function for one election.
///
/// The identifier length is part of the binding argument, so it is fixed
/// here and every call checks it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommitmentScheme {
    id_len: usize,
}

impl CommitmentScheme {
    pub fn new(id_len: usize) -> Result<Self> {
        if id_len == 0 {
            return Err(Error::Config("ballot id length must be positive".into()));
        }
        Ok(CommitmentScheme { id_len })
    }

    pub fn id_len(&self) -> usize {
        self.id_len
    }

    pub fn commit(&self, ballot: &BallotId, salt: &Salt) -> Result<Commitment> {
        if ballot.len() != self.id_len {
            return Err(Error::Malformed(format!(
                "ballot id {ballot} has length {}, election uses {}",
                ballot.len(),
                self.id_len
            )));
        }
        Ok(commit_unchecked(ballot, salt))
    }

    /// True iff `(ballot, salt)` opens `commitment`. Wrong-length ids never open.
    pub fn open(&self, commitment: &Commitment, ballot: &BallotId, salt: &Salt) -> bool {
        self.commit(ballot, salt).is_ok_and(|c| c == *commitment)
    }
}

fn commit_unchecked(ballot: &BallotId, salt: &Salt) -> Commitment {
    let mut h = Sha256::new();
    h.update(ballot.as_str().as_bytes());
    h.update(salt.0);
    let mut out = [0u8; DIGEST_LEN];
    out.copy_from_slice(&h.finalize());
    Commitment(out)
}

/// Draws a fresh salt from a cryptographically secure source.
pub fn fresh_salt<R: TryCryptoRng + ?Sized>(rng: &mut R) -> Result<Salt> {
    let mut bytes = [0u8; SALT_LEN];
    rng.try_fill_bytes(&mut bytes).map_err(|_| Error::Randomness)?;
    Ok(Salt(bytes))
}
