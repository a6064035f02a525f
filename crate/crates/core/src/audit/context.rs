use alloc::vec::Vec;

use crate::commit::{Commitment, CommitmentScheme};
use crate::model::{compute_outcome, count_valid_votes, diluted_margin, DilutedMargin, ElectionOutcome};
use crate::publish::{BallotStyleFile, CcvrEntry, CcvrFile, CcvrIndex, Manifest};
use crate::{Error, Result};

/// The published files an audit runs against, with the CCVR outcome and
/// diluted margin precomputed.
#[derive(Debug, Clone)]
pub struct AuditContext {
    pub manifest: Manifest,
    pub ballot_style: BallotStyleFile,
    pub ccvrs: Vec<CcvrFile>,
    pub scheme: CommitmentScheme,
    pub outcome: ElectionOutcome,
    pub margin: DilutedMargin,
    index: CcvrIndex,
}

impl AuditContext {
    /// Margins come from the CCVR files, not the reported totals. N is the
    /// number of ballot style rows, since those are what the sampler indexes.
    pub fn new(manifest: Manifest, ballot_style: BallotStyleFile, ccvrs: Vec<CcvrFile>) -> Result<Self> {
        let scheme = manifest.scheme()?;
        let mut outcome = ElectionOutcome::default();
        for spec in &manifest.contests {
            let file = ccvrs
                .iter()
                .find(|f| f.contest == spec.id)
                .ok_or_else(|| Error::NotFound(alloc::format!("CCVR file for contest {}", spec.id)))?;
            let sels: Vec<_> = file.selections().collect();
            let tallies = count_valid_votes(&sels, spec)?;
            outcome.contests.insert(spec.id.clone(), compute_outcome(&tallies, spec)?);
        }
        if ballot_style.is_empty() {
            return Err(Error::Config("ballot style file is empty".into()));
        }
        let margin = diluted_margin(&outcome, ballot_style.len() as u64)?;
        let index = CcvrIndex::new(&ccvrs);
        Ok(AuditContext {
            manifest,
            ballot_style,
            ccvrs,
            scheme,
            outcome,
            margin,
            index,
        })
    }

    /// N.
    pub fn population(&self) -> u64 {
        self.ballot_style.len() as u64
    }

    pub fn index(&self) -> &CcvrIndex {
        &self.index
    }

    /// Contest and entry carrying `digest`, with the entry's 1-based data row.
    pub fn find(&self, digest: &Commitment) -> Option<(&str, usize, &CcvrEntry)> {
        let (fi, ei) = self.index.locate(digest)?;
        let f = &self.ccvrs[fi];
        Some((f.contest.as_str(), ei + 1, &f.entries[ei]))
    }
}
