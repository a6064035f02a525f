//! Evaluation of one sampled ballot style row, including the worst-case
//! substitutions for every way the ballot, the style row, and the CCVR files
//! can fail to line up.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use super::context::AuditContext;
use crate::commit::{BallotId, Salt};
use crate::model::{contest_overstatement, Ballot, CandidateId, ContestId, ContestOutcome, Overstatement, Ratio};
use crate::sampler::DrawIndex;
use crate::{Error, Result};

/// Where the human side of a contest comparison came from.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HumanSource {
    /// Read off the retrieved ballot.
    Read,
    /// No ballot with the row's identifier: deemed a vote for the runner-up.
    BallotMissing,
    /// The row lists the contest but the ballot does not carry it: deemed a
    /// vote for the runner-up.
    ContestNotOnBallot,
}

/// Where the CCVR side of a contest comparison came from.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CcvrSource {
    /// The revealed salt opened an entry of this contest's file.
    Found { row: usize },
    /// No revealed salt opened an entry of this contest's file: deemed a vote
    /// for the apparent winner.
    Orphan,
    /// A revealed salt opened an entry, but in another contest's file.
    /// Treated as an orphan and flagged.
    WrongContest { found_in: ContestId },
    /// The ballot carries the contest but its style row does not: the CCVR is
    /// deemed a vote for the apparent winner.
    ContestNotInStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RecordTag {
    Matched,
    OrphanCcvr,
    MissingContestOnBallot,
    ExtraContestOnBallot,
    MissingBallot,
}

/// One contest of one sampled ballot.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContestRecord {
    pub contest: ContestId,
    pub human_source: HumanSource,
    pub ccvr_source: CcvrSource,
    /// CCVR selection after substitution.
    pub ccvr: BTreeSet<CandidateId>,
    /// Human selection after substitution.
    pub human: BTreeSet<CandidateId>,
    pub overstatement: Overstatement,
}

impl ContestRecord {
    pub fn tags(&self) -> Vec<RecordTag> {
        let mut tags = Vec::new();
        match self.human_source {
            HumanSource::Read => {}
            HumanSource::BallotMissing => tags.push(RecordTag::MissingBallot),
            HumanSource::ContestNotOnBallot => tags.push(RecordTag::MissingContestOnBallot),
        }
        match self.ccvr_source {
            CcvrSource::Found { .. } => {}
            CcvrSource::Orphan | CcvrSource::WrongContest { .. } => tags.push(RecordTag::OrphanCcvr),
            CcvrSource::ContestNotInStyle => tags.push(RecordTag::ExtraContestOnBallot),
        }
        if tags.is_empty() {
            tags.push(RecordTag::Matched);
        }
        tags
    }

    pub fn substituted(&self) -> bool {
        self.human_source != HumanSource::Read || !matches!(self.ccvr_source, CcvrSource::Found { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawEvaluation {
    pub draw: DrawIndex,
    pub ballot_id: BallotId,
    pub ballot_found: bool,
    pub contests: Vec<ContestRecord>,
    /// e and ε, maximised over contests.
    pub overstatement: Overstatement,
    /// t = ε·V/(2γ), always below 1/γ.
    pub taint: f64,
}

impl DrawEvaluation {
    pub fn e(&self) -> i32 {
        self.overstatement.e
    }

    pub fn epsilon(&self) -> Ratio {
        self.overstatement.epsilon
    }

    /// Some revealed salt opened an entry in the wrong contest's file.
    pub fn wrong_contest_flag(&self) -> bool {
        self.contests
            .iter()
            .any(|c| matches!(c.ccvr_source, CcvrSource::WrongContest { .. }))
    }
}

/// t = ε·V/(2γ).
pub fn taint(epsilon: Ratio, min_margin: u64, gamma: f64) -> f64 {
    (epsilon.numer() as f64 * min_margin as f64) / (epsilon.denom() as f64 * 2.0 * gamma)
}

fn single(c: &CandidateId) -> BTreeSet<CandidateId> {
    [c.clone()].into_iter().collect()
}

/// Compares the two sides of one contest. A substituted side ranges over
/// every single-candidate vote of the substituted kind (winners for the
/// CCVR, losers for the ballot) and `e`, `ε` each take their worst case.
/// The reported substitute is the weakest winner / runner-up unless another
/// choice gives a strictly larger ε.
fn compare(
    outcome: &ContestOutcome,
    ccvr: Option<&BTreeSet<CandidateId>>,
    human: Option<&BTreeSet<CandidateId>>,
) -> (BTreeSet<CandidateId>, BTreeSet<CandidateId>, Overstatement) {
    let ccvr_options: Vec<BTreeSet<CandidateId>> = match ccvr {
        Some(s) => alloc::vec![s.clone()],
        None => outcome.winners.iter().rev().map(single).collect(),
    };
    let human_options: Vec<BTreeSet<CandidateId>> = match human {
        Some(s) => alloc::vec![s.clone()],
        None => outcome.losers.iter().map(single).collect(),
    };
    let mut best: Option<(usize, usize, Ratio)> = None;
    let mut worst = None::<Overstatement>;
    for (ci, c) in ccvr_options.iter().enumerate() {
        for (hi, h) in human_options.iter().enumerate() {
            let o = contest_overstatement(c, h, outcome);
            worst = Some(worst.map_or(o, |w| w.max(o)));
            if best.is_none_or(|(_, _, eps)| o.epsilon > eps) {
                best = Some((ci, hi, o.epsilon));
            }
        }
    }
    let (ci, hi, _) = best.expect("both sides non-empty");
    (
        ccvr_options[ci].clone(),
        human_options[hi].clone(),
        worst.expect("both sides non-empty"),
    )
}

/// Evaluates the sampled row `draw.row`.
///
/// `retrieved` is the ballot as read by the auditors, or `None` when no ballot
/// with the row's identifier exists. `revealed` holds the salts the official
/// opened for this ballot, labelled by contest.
pub fn evaluate_draw(
    ctx: &AuditContext,
    gamma: f64,
    draw: DrawIndex,
    retrieved: Option<&Ballot>,
    revealed: &[(ContestId, Salt)],
) -> Result<DrawEvaluation> {
    let row = ctx
        .ballot_style
        .row(draw.row)
        .ok_or_else(|| Error::Protocol(format!("draw {} selects row {} outside the style file", draw.j, draw.row)))?;
    if let Some(b) = retrieved {
        if b.id != row.ballot_id {
            return Err(Error::Protocol(format!(
                "retrieved ballot {} but row {} names {}",
                b.id, draw.row, row.ballot_id
            )));
        }
        for sel in &b.selections {
            if let Some(spec) = ctx.manifest.contest(&sel.contest) {
                if let Some(bad) = sel.chosen.iter().find(|c| !spec.has_candidate(c)) {
                    return Err(Error::Malformed(format!(
                        "interpretation names unknown candidate {bad} in {}",
                        sel.contest
                    )));
                }
            }
        }
    }

    let mut salts: BTreeMap<&str, Vec<&Salt>> = BTreeMap::new();
    for (c, s) in revealed {
        salts.entry(c.as_str()).or_default().push(s);
    }

    let mut contests: BTreeSet<&ContestId> = row.contests.iter().collect();
    if let Some(b) = retrieved {
        contests.extend(b.contests());
    }

    let mut records = Vec::new();
    for contest in contests {
        let Some(outcome) = ctx.outcome.get(contest) else {
            continue;
        };
        let in_style = row.lists(contest);
        let on_ballot = retrieved.and_then(|b| b.selection(contest));

        let (human_source, human) = match (retrieved, on_ballot) {
            (None, _) => (HumanSource::BallotMissing, None),
            (Some(_), None) => (HumanSource::ContestNotOnBallot, None),
            (Some(_), Some(sel)) => (HumanSource::Read, Some(&sel.chosen)),
        };

        let (ccvr_source, ccvr) = if !in_style {
            (CcvrSource::ContestNotInStyle, None)
        } else {
            let mut source = CcvrSource::Orphan;
            let mut found = None;
            for salt in salts.get(contest.as_str()).into_iter().flatten() {
                let Ok(y) = ctx.scheme.commit(&row.ballot_id, salt) else {
                    continue;
                };
                match ctx.find(&y) {
                    Some((c, line, entry)) if c == contest => {
                        source = CcvrSource::Found { row: line };
                        found = Some(&entry.chosen);
                        break;
                    }
                    Some((c, _, _)) => {
                        source = CcvrSource::WrongContest { found_in: c.into() };
                    }
                    None => {}
                }
            }
            (source, found)
        };

        let (ccvr, human, overstatement) = compare(outcome, ccvr, human);
        records.push(ContestRecord {
            contest: contest.clone(),
            human_source,
            ccvr_source,
            ccvr,
            human,
            overstatement,
        });
    }

    let overstatement = records
        .iter()
        .map(|r| r.overstatement)
        .reduce(Overstatement::max)
        .unwrap_or(Overstatement::ZERO);
    let t = taint(overstatement.epsilon, ctx.margin.votes, gamma);
    assert!(t < 1.0, "taint {t} >= 1: overstatement bound violated");
    Ok(DrawEvaluation {
        draw,
        ballot_id: row.ballot_id.clone(),
        ballot_found: retrieved.is_some(),
        contests: records,
        overstatement,
        taint: t,
    })
}
