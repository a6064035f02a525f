//! Consistency checks any observer can run on the published files before
//! sampling starts.
//!
//! 1. each CCVR file has N_c entries;
//! 2. each CCVR file shows the reported outcome (winner sets only);
//! 3. all M shrouded ids are unique across files;
//! 4. N_c ballot style rows list each contest;
//! 5. ballot ids in the style file are unique.
//!
//! Every check always runs so one report lists every problem.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::commit::Commitment;
use crate::model::{compute_outcome, count_valid_votes, ContestId};
use crate::publish::{BallotStyleFile, CcvrFile, Manifest};

/// The five checks, numbered as published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CheckId {
    CcvrCounts = 1,
    CcvrOutcomes = 2,
    UniqueShroudedIds = 3,
    StyleCounts = 4,
    UniqueBallotIds = 5,
}

impl CheckId {
    pub const ALL: [CheckId; 5] = [
        CheckId::CcvrCounts,
        CheckId::CcvrOutcomes,
        CheckId::UniqueShroudedIds,
        CheckId::StyleCounts,
        CheckId::UniqueBallotIds,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn describe(self) -> &'static str {
        match self {
            CheckId::CcvrCounts => "CCVR file for each contest has N_c entries",
            CheckId::CcvrOutcomes => "CCVR outcome matches reported outcome",
            CheckId::UniqueShroudedIds => "shrouded ballot ids are unique",
            CheckId::StyleCounts => "ballot style file lists each contest N_c times",
            CheckId::UniqueBallotIds => "ballot style ids are unique",
        }
    }
}

/// A place in a published file. `line` counts the header as line 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Location {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

pub fn ccvr_file_name(contest: &str) -> String {
    format!("ccvr_{contest}.csv")
}

pub const BALLOT_STYLE_FILE: &str = "ballot_style.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Violation {
    CcvrCount { contest: ContestId, expected: u64, found: u64 },
    /// A CCVR file for a contest the manifest does not declare.
    UndeclaredContest { contest: ContestId },
    OutcomeMismatch { contest: ContestId, reported: Vec<String>, ccvr: Vec<String> },
    NoOutcome { contest: ContestId, reason: String },
    DuplicateShroudedId { digest: String, locations: Vec<Location> },
    StyleCount { contest: ContestId, expected: u64, found: u64 },
    DuplicateBallotId { ballot_id: String, locations: Vec<Location> },
}

impl Violation {
    pub fn contest(&self) -> Option<&str> {
        match self {
            Violation::CcvrCount { contest, .. }
            | Violation::UndeclaredContest { contest }
            | Violation::OutcomeMismatch { contest, .. }
            | Violation::NoOutcome { contest, .. }
            | Violation::StyleCount { contest, .. } => Some(contest),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |locs: &[Location]| {
            locs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        };
        match self {
            Violation::CcvrCount { contest, expected, found } => {
                write!(f, "contest {contest}: CCVR file has {found} entries, N_c = {expected}")
            }
            Violation::UndeclaredContest { contest } => {
                write!(f, "CCVR file for undeclared contest {contest}")
            }
            Violation::OutcomeMismatch { contest, reported, ccvr } => write!(
                f,
                "contest {contest}: reported winners {{{}}} but CCVR winners {{{}}}",
                reported.join(";"),
                ccvr.join(";")
            ),
            Violation::NoOutcome { contest, reason } => {
                write!(f, "contest {contest}: {reason}")
            }
            Violation::DuplicateShroudedId { digest, locations } => {
                write!(f, "shrouded id {digest} appears at {}", join(locations))
            }
            Violation::StyleCount { contest, expected, found } => write!(
                f,
                "contest {contest}: listed on {found} ballot style rows, N_c = {expected}"
            ),
            Violation::DuplicateBallotId { ballot_id, locations } => {
                write!(f, "ballot id {ballot_id} appears at {}", join(locations))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckResult {
    pub check: CheckId,
    pub violations: Vec<Violation>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
    /// Discrepancies that do not fail a check, e.g. vote totals that differ
    /// from the report while the winners agree.
    pub warnings: Vec<String>,
}

impl CheckReport {
    pub fn overall_pass(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn result(&self, id: CheckId) -> &CheckResult {
        self.checks.iter().find(|c| c.check == id).expect("all checks present")
    }

    pub fn failed(&self) -> Vec<CheckId> {
        self.checks.iter().filter(|c| !c.passed()).map(|c| c.check).collect()
    }

    /// Contests that failed the given check.
    pub fn failing_contests(&self, id: CheckId) -> Vec<ContestId> {
        let set: BTreeSet<&str> = self
            .result(id)
            .violations
            .iter()
            .filter_map(Violation::contest)
            .collect();
        set.into_iter().map(String::from).collect()
    }
}

pub fn run_static_checks(
    manifest: &Manifest,
    style: &BallotStyleFile,
    ccvrs: &[CcvrFile],
) -> CheckReport {
    let mut warnings = Vec::new();
    let files: BTreeMap<&str, &CcvrFile> = ccvrs.iter().map(|f| (f.contest.as_str(), f)).collect();

    let mut counts = Vec::new();
    for c in &manifest.contests {
        let found = files.get(c.id.as_str()).map_or(0, |f| f.len() as u64);
        if found != c.reported_ballots {
            counts.push(Violation::CcvrCount {
                contest: c.id.clone(),
                expected: c.reported_ballots,
                found,
            });
        }
    }
    for f in ccvrs {
        if manifest.contest(&f.contest).is_none() {
            counts.push(Violation::UndeclaredContest {
                contest: f.contest.clone(),
            });
        }
    }

    let mut outcomes = Vec::new();
    for c in &manifest.contests {
        let reported = match c.reported_outcome() {
            Ok(o) => o,
            Err(e) => {
                outcomes.push(Violation::NoOutcome {
                    contest: c.id.clone(),
                    reason: format!("reported results: {e}"),
                });
                continue;
            }
        };
        let empty = CcvrFile {
            contest: c.id.clone(),
            entries: Vec::new(),
        };
        let file = files.get(c.id.as_str()).copied().unwrap_or(&empty);
        let sels: Vec<_> = file.selections().collect();
        let ccvr = count_valid_votes(&sels, c).and_then(|t| compute_outcome(&t, c));
        match ccvr {
            Ok(o) => {
                if o.winner_set() != reported.winner_set() {
                    let sorted = |w: &[String]| {
                        let mut w = w.to_vec();
                        w.sort();
                        w
                    };
                    outcomes.push(Violation::OutcomeMismatch {
                        contest: c.id.clone(),
                        reported: sorted(&reported.winners),
                        ccvr: sorted(&o.winners),
                    });
                } else if o.tallies != c.reported_tallies {
                    warnings.push(format!(
                        "contest {}: CCVR vote totals differ from the reported totals",
                        c.id
                    ));
                }
            }
            Err(e) => outcomes.push(Violation::NoOutcome {
                contest: c.id.clone(),
                reason: format!("CCVR file: {e}"),
            }),
        }
    }

    let mut by_digest: BTreeMap<&Commitment, Vec<Location>> = BTreeMap::new();
    for f in ccvrs {
        let file = ccvr_file_name(&f.contest);
        for (i, e) in f.entries.iter().enumerate() {
            by_digest.entry(&e.shrouded_id).or_default().push(Location {
                file: file.clone(),
                line: i + 2,
            });
        }
    }
    let shrouded = by_digest
        .into_iter()
        .filter(|(_, locs)| locs.len() > 1)
        .map(|(d, locations)| Violation::DuplicateShroudedId {
            digest: d.to_hex(),
            locations,
        })
        .collect();

    let mut listed: BTreeMap<&str, u64> = BTreeMap::new();
    for row in &style.entries {
        for c in &row.contests {
            *listed.entry(c.as_str()).or_default() += 1;
        }
    }
    let mut style_counts = Vec::new();
    for c in &manifest.contests {
        let found = listed.get(c.id.as_str()).copied().unwrap_or(0);
        if found != c.reported_ballots {
            style_counts.push(Violation::StyleCount {
                contest: c.id.clone(),
                expected: c.reported_ballots,
                found,
            });
        }
    }
    for c in listed.keys() {
        if manifest.contest(c).is_none() {
            warnings.push(format!("ballot style file lists undeclared contest {c}"));
        }
    }

    let mut by_id: BTreeMap<&str, Vec<Location>> = BTreeMap::new();
    for (i, row) in style.entries.iter().enumerate() {
        by_id.entry(row.ballot_id.as_str()).or_default().push(Location {
            file: BALLOT_STYLE_FILE.into(),
            line: i + 2,
        });
    }
    let ids = by_id
        .into_iter()
        .filter(|(_, locs)| locs.len() > 1)
        .map(|(id, locations)| Violation::DuplicateBallotId {
            ballot_id: id.into(),
            locations,
        })
        .collect();

    if style.len() as u64 != manifest.ballots {
        warnings.push(format!(
            "ballot style file has {} rows, manifest reports N = {}",
            style.len(),
            manifest.ballots
        ));
    }

    CheckReport {
        checks: [counts, outcomes, shrouded, style_counts, ids]
            .into_iter()
            .zip(CheckId::ALL)
            .map(|(violations, check)| CheckResult { check, violations })
            .collect(),
        warnings,
    }
}

/// What the officials must do next.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RequiredAction {
    /// Contests whose CCVR outcome disagrees with the report: count by hand.
    pub hand_count: Vec<ContestId>,
    /// Failed checks among 1, 3, 4, 5: the audit cannot start until fixed.
    pub blocked_by: Vec<CheckId>,
}

impl RequiredAction {
    pub fn may_proceed(&self) -> bool {
        self.hand_count.is_empty() && self.blocked_by.is_empty()
    }
}

pub fn required_action(report: &CheckReport) -> RequiredAction {
    RequiredAction {
        hand_count: report.failing_contests(CheckId::CcvrOutcomes),
        blocked_by: report
            .failed()
            .into_iter()
            .filter(|&c| c != CheckId::CcvrOutcomes)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commit::BallotId;
    use crate::model::{Ballot, ContestSpec, Selection};
    use crate::publish::{publish_election, Publication};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn honest() -> Publication {
        let contests = vec![
            ContestSpec::declare("a", 1, vec!["x".into(), "y".into()]).unwrap(),
            ContestSpec::declare("b", 1, vec!["p".into(), "q".into()]).unwrap(),
        ];
        let cvrs: Vec<Ballot> = (0..6)
            .map(|i| {
                let mut sels = vec![Selection::new("a", [if i < 4 { "x" } else { "y" }])];
                if i % 2 == 0 {
                    sels.push(Selection::new("b", [if i < 4 { "p" } else { "q" }]));
                }
                Ballot::new(BallotId::padded(i, 3).unwrap(), sels).unwrap()
            })
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        publish_election(&cvrs, &contests, 3, |_| String::new(), &mut rng).unwrap()
    }

    fn report(p: &Publication) -> CheckReport {
        run_static_checks(&p.manifest, &p.ballot_style, &p.ccvrs)
    }

    #[test]
    fn honest_files_pass() {
        let r = report(&honest());
        assert!(r.overall_pass(), "{r:?}");
        assert!(required_action(&r).may_proceed());
    }

    #[test]
    fn duplicate_digest_names_both_places() {
        let mut p = honest();
        let stolen = p.ccvrs[0].entries[0].shrouded_id;
        p.ccvrs[1].entries[0].shrouded_id = stolen;
        p.ccvrs[1].sort();
        let r = report(&p);
        assert_eq!(r.failed(), vec![CheckId::UniqueShroudedIds]);
        match &r.result(CheckId::UniqueShroudedIds).violations[0] {
            Violation::DuplicateShroudedId { locations, .. } => {
                assert_eq!(locations.len(), 2);
                assert_eq!(locations[0].file, "ccvr_a.csv");
                assert_eq!(locations[1].file, "ccvr_b.csv");
            }
            v => panic!("unexpected {v:?}"),
        }
        assert_eq!(required_action(&r).blocked_by, vec![CheckId::UniqueShroudedIds]);
    }

    #[test]
    fn outcome_flip_requires_hand_count_of_that_contest_only() {
        let mut p = honest();
        // b: p=2, q=1. Flip one p to q, then another: q leads.
        let mut flipped = 0;
        for e in &mut p.ccvrs[1].entries {
            if flipped < 2 && e.chosen.contains("p") {
                e.chosen = ["q".to_string()].into_iter().collect();
                flipped += 1;
            }
        }
        let r = report(&p);
        assert_eq!(r.failed(), vec![CheckId::CcvrOutcomes]);
        let action = required_action(&r);
        assert_eq!(action.hand_count, vec!["b".to_string()]);
        assert!(action.blocked_by.is_empty());
    }

    #[test]
    fn totals_difference_is_only_a_warning() {
        let mut p = honest();
        p.ccvrs[0].entries.iter_mut().find(|e| e.chosen.contains("y")).unwrap().chosen.clear();
        let r = report(&p);
        assert!(r.overall_pass());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn missing_ccvr_file_fails_check_one() {
        let mut p = honest();
        p.ccvrs.pop();
        let r = report(&p);
        assert!(r.failed().contains(&CheckId::CcvrCounts));
    }
}
