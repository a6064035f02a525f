//! The election official's side: split whole-ballot CVRs into per-contest
//! CCVR files under shrouded identifiers, and build the public ballot style
//! file and the secret lookup file.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_core::TryCryptoRng;

use crate::commit::{fresh_salt, BallotId, Commitment, CommitmentScheme, Salt, COMMITMENT_FUNCTION, SALT_LEN};
use crate::model::{count_valid_votes, Ballot, CandidateId, ContestId, ContestSpec, Cvr, Selection};
use crate::{Error, Result};

/// Election-wide constants and the reported results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// N.
    pub ballots: u64,
    pub id_length: usize,
    pub salt_bytes: usize,
    /// Disclosure of the commitment function.
    pub commitment: String,
    pub contests: Vec<ContestSpec>,
}

impl Manifest {
    pub fn contest(&self, id: &str) -> Option<&ContestSpec> {
        self.contests.iter().find(|c| c.id == id)
    }

    /// M = Σ N_c.
    pub fn voting_opportunities(&self) -> u64 {
        self.contests.iter().map(|c| c.reported_ballots).sum()
    }

    pub fn scheme(&self) -> Result<CommitmentScheme> {
        if self.salt_bytes != SALT_LEN {
            return Err(Error::Config(format!(
                "salts must be {SALT_LEN} bytes, manifest says {}",
                self.salt_bytes
            )));
        }
        if self.commitment != COMMITMENT_FUNCTION {
            return Err(Error::Config(format!(
                "unsupported commitment function {:?}",
                self.commitment
            )));
        }
        CommitmentScheme::new(self.id_length)
    }
}

/// One line of a contest's CCVR file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CcvrEntry {
    pub shrouded_id: Commitment,
    pub chosen: BTreeSet<CandidateId>,
}

/// All CCVRs for one contest, sorted by shrouded identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CcvrFile {
    pub contest: ContestId,
    pub entries: Vec<CcvrEntry>,
}

impl CcvrFile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn selections(&self) -> impl Iterator<Item = Selection> + '_ {
        self.entries.iter().map(|e| Selection {
            contest: self.contest.clone(),
            chosen: e.chosen.clone(),
        })
    }

    pub fn sort(&mut self) {
        self.entries.sort_by_key(|e| e.shrouded_id);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallotStyleEntry {
    pub ballot_id: BallotId,
    pub contests: Vec<ContestId>,
    /// Free-text recipe for finding the paper ballot, e.g. "deck 39 #275".
    pub locator: String,
}

impl BallotStyleEntry {
    pub fn lists(&self, contest: &str) -> bool {
        self.contests.iter().any(|c| c == contest)
    }
}

/// One row per ballot, in ballot order. Row ℓ (1-based) is what the sampler selects.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BallotStyleFile {
    pub entries: Vec<BallotStyleEntry>,
}

impl BallotStyleFile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row(&self, ell: u64) -> Option<&BallotStyleEntry> {
        self.entries.get(usize::try_from(ell).ok()?.checked_sub(1)?)
    }
}

/// Secret: maps each shrouded id back to its ballot and salt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupEntry {
    pub shrouded_id: Commitment,
    pub ballot_id: BallotId,
    pub salt: Salt,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LookupFile {
    pub entries: Vec<LookupEntry>,
}

impl LookupFile {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sort(&mut self) {
        self.entries.sort_by_key(|e| e.shrouded_id);
    }

}

/// Per-contest CCVR files plus the secret lookup file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCvrs {
    pub ccvrs: Vec<CcvrFile>,
    pub lookup: LookupFile,
}

/// Split CVRs by contest, shrouding every (ballot, contest) pair under a
/// fresh salt. Files come out sorted by shrouded id, one per contest in
/// `contests` order.
pub fn split_cvrs<R: TryCryptoRng + ?Sized>(
    cvrs: &[Cvr],
    contests: &[ContestSpec],
    scheme: &CommitmentScheme,
    rng: &mut R,
) -> Result<SplitCvrs> {
    let index: BTreeMap<&str, usize> = contests
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let mut files: Vec<CcvrFile> = contests
        .iter()
        .map(|c| CcvrFile {
            contest: c.id.clone(),
            entries: Vec::new(),
        })
        .collect();
    let mut lookup = LookupFile::default();
    let mut seen_ids = BTreeSet::new();
    let mut used_salts = BTreeSet::new();
    let mut used_digests = BTreeSet::new();
    for cvr in cvrs {
        if !seen_ids.insert(&cvr.id) {
            return Err(Error::DuplicateBallotId(cvr.id.to_string()));
        }
        for sel in &cvr.selections {
            let &slot = index.get(sel.contest.as_str()).ok_or_else(|| {
                Error::Malformed(format!("ballot {} names undeclared contest {}", cvr.id, sel.contest))
            })?;
            for cand in &sel.chosen {
                if !contests[slot].has_candidate(cand) {
                    return Err(Error::Malformed(format!(
                        "ballot {} votes for unknown candidate {cand} in {}",
                        cvr.id, sel.contest
                    )));
                }
            }
            let (salt, digest) = loop {
                let salt = fresh_salt(rng)?;
                if !used_salts.insert(salt) {
                    continue;
                }
                let digest = scheme.commit(&cvr.id, &salt)?;
                if used_digests.insert(digest) {
                    break (salt, digest);
                }
            };
            files[slot].entries.push(CcvrEntry {
                shrouded_id: digest,
                chosen: sel.chosen.clone(),
            });
            lookup.entries.push(LookupEntry {
                shrouded_id: digest,
                ballot_id: cvr.id.clone(),
                salt,
            });
        }
    }
    for f in &mut files {
        f.sort();
    }
    lookup.sort();
    Ok(SplitCvrs { ccvrs: files, lookup })
}

/// One row per ballot listing its contests; no selections.
pub fn build_ballot_style_file<F>(ballots: &[Ballot], mut locate: F) -> Result<BallotStyleFile>
where
    F: FnMut(&Ballot) -> String,
{
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(ballots.len());
    for b in ballots {
        if !seen.insert(&b.id) {
            return Err(Error::DuplicateBallotId(b.id.to_string()));
        }
        entries.push(BallotStyleEntry {
            ballot_id: b.id.clone(),
            contests: b.contests().cloned().collect(),
            locator: locate(b),
        });
    }
    Ok(BallotStyleFile { entries })
}

/// Everything an official produces for one election.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub manifest: Manifest,
    pub ballot_style: BallotStyleFile,
    pub ccvrs: Vec<CcvrFile>,
    /// Secret.
    pub lookup: LookupFile,
}

/// Runs the whole publication pipeline. Reported results (N_c and tallies)
/// are counted from the CVRs, as a voting system would report them.
pub fn publish_election<R, F>(
    cvrs: &[Cvr],
    contests: &[ContestSpec],
    id_length: usize,
    locate: F,
    rng: &mut R,
) -> Result<Publication>
where
    R: TryCryptoRng + ?Sized,
    F: FnMut(&Ballot) -> String,
{
    let scheme = CommitmentScheme::new(id_length)?;
    let ballot_style = build_ballot_style_file(cvrs, locate)?;
    let split = split_cvrs(cvrs, contests, &scheme, rng)?;
    let reported = contests
        .iter()
        .zip(&split.ccvrs)
        .map(|(spec, file)| {
            let sels: Vec<Selection> = file.selections().collect();
            let tallies = count_valid_votes(&sels, spec)?;
            ContestSpec::new(
                spec.id.clone(),
                spec.vote_for,
                spec.candidates.clone(),
                file.len() as u64,
                tallies,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Publication {
        manifest: Manifest {
            ballots: cvrs.len() as u64,
            id_length,
            salt_bytes: SALT_LEN,
            commitment: COMMITMENT_FUNCTION.into(),
            contests: reported,
        },
        ballot_style,
        ccvrs: split.ccvrs,
        lookup: split.lookup,
    })
}

/// Where each published shrouded id lives.
#[derive(Debug, Clone, Default)]
pub struct CcvrIndex {
    by_digest: BTreeMap<Commitment, (usize, usize)>,
}

impl CcvrIndex {
    /// First occurrence wins when a digest is duplicated; the static checks
    /// report duplicates separately.
    pub fn new(files: &[CcvrFile]) -> Self {
        let mut by_digest = BTreeMap::new();
        for (fi, f) in files.iter().enumerate() {
            for (ei, e) in f.entries.iter().enumerate() {
                by_digest.entry(e.shrouded_id).or_insert((fi, ei));
            }
        }
        CcvrIndex { by_digest }
    }

    /// (file index, entry index).
    pub fn locate(&self, digest: &Commitment) -> Option<(usize, usize)> {
        self.by_digest.get(digest).copied()
    }
}

/// The official's view for answering reveal requests: the lookup file
/// indexed by ballot, and where each commitment was published.
#[derive(Debug)]
pub struct SaltRevealer<'a> {
    by_ballot: BTreeMap<&'a BallotId, Vec<&'a LookupEntry>>,
    ccvrs: &'a [CcvrFile],
    index: CcvrIndex,
}

impl<'a> SaltRevealer<'a> {
    pub fn new(lookup: &'a LookupFile, ccvrs: &'a [CcvrFile]) -> Self {
        let mut by_ballot: BTreeMap<&BallotId, Vec<&LookupEntry>> = BTreeMap::new();
        for e in &lookup.entries {
            by_ballot.entry(&e.ballot_id).or_default().push(e);
        }
        SaltRevealer {
            by_ballot,
            ccvrs,
            index: CcvrIndex::new(ccvrs),
        }
    }

    /// Salts for every voting opportunity on `ballot`, labelled with the
    /// contest whose CCVR file carries the matching commitment. Lookup
    /// entries whose commitment was never published are withheld.
    pub fn reveal(&self, ballot: &BallotId) -> Result<Vec<(ContestId, Salt)>> {
        let entries = self
            .by_ballot
            .get(ballot)
            .ok_or_else(|| Error::NotFound(format!("ballot {ballot} is not in the lookup file")))?;
        Ok(entries
            .iter()
            .filter_map(|e| {
                let (fi, _) = self.index.locate(&e.shrouded_id)?;
                Some((self.ccvrs[fi].contest.clone(), e.salt))
            })
            .collect())
    }
}

/// One-off form of [`SaltRevealer::reveal`].
pub fn reveal_salts(lookup: &LookupFile, ccvrs: &[CcvrFile], ballot: &BallotId) -> Result<Vec<(ContestId, Salt)>> {
    SaltRevealer::new(lookup, ccvrs).reveal(ballot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn contests() -> Vec<ContestSpec> {
        vec![
            ContestSpec::declare("a", 1, vec!["x".to_string(), "y".to_string()]).unwrap(),
            ContestSpec::declare("b", 1, vec!["p".to_string(), "q".to_string()]).unwrap(),
        ]
    }

    fn ballot(id: &str, sels: &[(&str, &[&str])]) -> Ballot {
        Ballot::new(
            BallotId::new(id).unwrap(),
            sels.iter().map(|(c, ch)| Selection::new(*c, ch.iter().copied())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_ballots_two_contests() {
        let cvrs = vec![
            ballot("01", &[("a", &["x"]), ("b", &["p"])]),
            ballot("02", &[("a", &["y"]), ("b", &[])]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let p = publish_election(&cvrs, &contests(), 2, |_| String::new(), &mut rng).unwrap();
        assert_eq!(p.ccvrs.iter().map(CcvrFile::len).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(p.lookup.len(), 4);
        assert_eq!(p.manifest.voting_opportunities(), 4);
        assert_eq!(p.manifest.contest("a").unwrap().reported_tallies["x"], 1);
        for f in &p.ccvrs {
            assert!(f.entries.windows(2).all(|w| w[0].shrouded_id < w[1].shrouded_id));
        }
        let scheme = p.manifest.scheme().unwrap();
        for e in &p.lookup.entries {
            assert!(scheme.open(&e.shrouded_id, &e.ballot_id, &e.salt));
        }
    }

    #[test]
    fn ballot_without_a_contest() {
        let cvrs = vec![
            ballot("01", &[("a", &["x"])]),
            ballot("02", &[("a", &["y"]), ("b", &["q"])]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let p = publish_election(&cvrs, &contests(), 2, |_| String::new(), &mut rng).unwrap();
        assert_eq!(p.ccvrs[1].len(), 1);
        assert_eq!(p.ballot_style.entries[0].contests, vec!["a".to_string()]);
        assert_eq!(p.ballot_style.len(), 2);
    }

    #[test]
    fn duplicate_ids_are_fatal() {
        let cvrs = vec![ballot("01", &[("a", &["x"])]), ballot("01", &[("a", &["y"])])];
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!(matches!(
            publish_election(&cvrs, &contests(), 2, |_| String::new(), &mut rng),
            Err(Error::DuplicateBallotId(_))
        ));
        assert!(build_ballot_style_file(&cvrs, |_| String::new()).is_err());
    }

    #[test]
    fn fixed_rng_gives_identical_output() {
        let cvrs = vec![
            ballot("01", &[("a", &["x"]), ("b", &["p"])]),
            ballot("02", &[("a", &["y"])]),
        ];
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(77);
            publish_election(&cvrs, &contests(), 2, |b| b.id.to_string(), &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reveal_returns_one_salt_per_contest() {
        let cvrs = vec![
            ballot("01", &[("a", &["x"]), ("b", &["p"])]),
            ballot("02", &[("a", &["y"])]),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let p = publish_election(&cvrs, &contests(), 2, |_| String::new(), &mut rng).unwrap();
        let index = CcvrIndex::new(&p.ccvrs);
        let id = BallotId::new("01").unwrap();
        let salts = reveal_salts(&p.lookup, &p.ccvrs, &id).unwrap();
        assert_eq!(salts.len(), 2);
        let scheme = p.manifest.scheme().unwrap();
        for (contest, salt) in &salts {
            let y = scheme.commit(&id, salt).unwrap();
            let (fi, _) = index.locate(&y).unwrap();
            assert_eq!(&p.ccvrs[fi].contest, contest);
        }
        assert!(matches!(
            reveal_salts(&p.lookup, &p.ccvrs, &BallotId::new("99").unwrap()),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn style_rows_are_one_based() {
        let cvrs = vec![ballot("01", &[("a", &["x"])]), ballot("02", &[("a", &["y"])])];
        let style = build_ballot_style_file(&cvrs, |_| String::new()).unwrap();
        assert_eq!(style.row(1).unwrap().ballot_id.as_str(), "01");
        assert_eq!(style.row(2).unwrap().ballot_id.as_str(), "02");
        assert!(style.row(0).is_none());
        assert!(style.row(3).is_none());
    }
}
