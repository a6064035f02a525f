//! Contests, ballots, selections, and the plurality / vote-for-W winner rule.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::commit::BallotId;
use crate::{Error, Result};

pub type ContestId = String;
pub type CandidateId = String;

/// An exact fraction with positive denominator, always in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ratio {
    num: i64,
    den: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: i64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den).max(1);
        Ratio {
            num: num / g as i64,
            den: den / g,
        }
    }

    pub fn numer(&self) -> i64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as i128 * other.den as i128).cmp(&(other.num as i128 * self.den as i128))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Plurality is vote-for-up-to-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContestKind {
    Plurality,
    VoteForUpTo(u32),
}

/// A contest definition together with the voting system's reported results.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContestSpec {
    pub id: ContestId,
    /// Number of winners W.
    pub vote_for: u32,
    pub candidates: Vec<CandidateId>,
    /// N_c: ballots cast in the contest, undervotes and overvotes included.
    pub reported_ballots: u64,
    pub reported_tallies: BTreeMap<CandidateId, u64>,
}

impl ContestSpec {
    pub fn new(
        id: impl Into<ContestId>,
        vote_for: u32,
        candidates: Vec<CandidateId>,
        reported_ballots: u64,
        reported_tallies: BTreeMap<CandidateId, u64>,
    ) -> Result<Self> {
        let spec = ContestSpec {
            id: id.into(),
            vote_for,
            candidates,
            reported_ballots,
            reported_tallies,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A contest with no reported results yet.
    pub fn declare(
        id: impl Into<ContestId>,
        vote_for: u32,
        candidates: Vec<CandidateId>,
    ) -> Result<Self> {
        let tallies = candidates.iter().map(|c| (c.clone(), 0)).collect();
        Self::new(id, vote_for, candidates, 0, tallies)
    }

    pub fn kind(&self) -> ContestKind {
        if self.vote_for == 1 {
            ContestKind::Plurality
        } else {
            ContestKind::VoteForUpTo(self.vote_for)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Malformed(format!("contest {}: {msg}", self.id)));
        if self.id.is_empty() {
            return bad("empty contest id".into());
        }
        if self.candidates.len() < 2 {
            return bad("needs at least two candidates".into());
        }
        if self.vote_for < 1 || self.vote_for as usize >= self.candidates.len() {
            return bad(format!(
                "vote-for {} must be in 1..{}",
                self.vote_for,
                self.candidates.len()
            ));
        }
        let unique: BTreeSet<&CandidateId> = self.candidates.iter().collect();
        if unique.len() != self.candidates.len() {
            return bad("duplicate candidate id".into());
        }
        for (cand, &votes) in &self.reported_tallies {
            if !unique.contains(cand) {
                return bad(format!("tally for unknown candidate {cand}"));
            }
            if votes > self.reported_ballots {
                return bad(format!("tally {votes} for {cand} exceeds N_c {}", self.reported_ballots));
            }
        }
        Ok(())
    }

    pub fn has_candidate(&self, cand: &str) -> bool {
        self.candidates.iter().any(|c| c == cand)
    }

    /// The outcome implied by the reported tallies.
    pub fn reported_outcome(&self) -> Result<ContestOutcome> {
        compute_outcome(&self.reported_tallies, self)
    }
}

/// One voter's choice in one contest. An empty set is an undervote; more
/// than W names is an overvote.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    pub contest: ContestId,
    pub chosen: BTreeSet<CandidateId>,
}

impl Selection {
    pub fn new<I, S>(contest: impl Into<ContestId>, chosen: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<CandidateId>,
    {
        Selection {
            contest: contest.into(),
            chosen: chosen.into_iter().map(Into::into).collect(),
        }
    }

    pub fn undervote(contest: impl Into<ContestId>) -> Self {
        Selection {
            contest: contest.into(),
            chosen: BTreeSet::new(),
        }
    }

    pub fn is_undervote(&self) -> bool {
        self.chosen.is_empty()
    }

    pub fn is_overvote(&self, vote_for: u32) -> bool {
        self.chosen.len() > vote_for as usize
    }
}

/// A ballot in the audit trail, as read by a human. The same shape doubles
/// as a cast vote record (the machine's reading).
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ballot {
    pub id: BallotId,
    pub selections: Vec<Selection>,
}

/// Cast vote record: the machine interpretation of one ballot.
pub type Cvr = Ballot;

impl Ballot {
    pub fn new(id: BallotId, selections: Vec<Selection>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &selections {
            if !seen.insert(&s.contest) {
                return Err(Error::Malformed(format!(
                    "ballot {id} has two selections for contest {}",
                    s.contest
                )));
            }
        }
        Ok(Ballot { id, selections })
    }

    pub fn selection(&self, contest: &str) -> Option<&Selection> {
        self.selections.iter().find(|s| s.contest == contest)
    }

    pub fn contests(&self) -> impl Iterator<Item = &ContestId> {
        self.selections.iter().map(|s| &s.contest)
    }
}

/// Per-candidate valid vote counts. Overvotes and undervotes count for nobody.
pub fn count_valid_votes<'a, I>(selections: I, contest: &ContestSpec) -> Result<BTreeMap<CandidateId, u64>>
where
    I: IntoIterator<Item = &'a Selection>,
{
    let mut tallies: BTreeMap<CandidateId, u64> =
        contest.candidates.iter().map(|c| (c.clone(), 0)).collect();
    for sel in selections {
        if sel.contest != contest.id {
            return Err(Error::Malformed(format!(
                "selection for contest {} counted in contest {}",
                sel.contest, contest.id
            )));
        }
        tally_chosen(&sel.chosen, contest, &mut tallies)?;
    }
    Ok(tallies)
}

pub(crate) fn tally_chosen(
    chosen: &BTreeSet<CandidateId>,
    contest: &ContestSpec,
    tallies: &mut BTreeMap<CandidateId, u64>,
) -> Result<()> {
    for cand in chosen {
        if !contest.has_candidate(cand) {
            return Err(Error::Malformed(format!(
                "unknown candidate {cand} in contest {}",
                contest.id
            )));
        }
    }
    if chosen.len() <= contest.vote_for as usize {
        for cand in chosen {
            *tallies.get_mut(cand).expect("checked above") += 1;
        }
    }
    Ok(())
}

/// Winners, losers and pairwise margins for one contest.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContestOutcome {
    pub contest: ContestId,
    pub vote_for: u32,
    pub tallies: BTreeMap<CandidateId, u64>,
    /// Highest tally first.
    pub winners: Vec<CandidateId>,
    /// Highest tally first, so `losers[0]` is the runner-up.
    pub losers: Vec<CandidateId>,
}

impl ContestOutcome {
    fn tally(&self, cand: &str) -> u64 {
        self.tallies.get(cand).copied().unwrap_or(0)
    }

    /// V_wx in votes.
    pub fn pair_margin(&self, winner: &str, loser: &str) -> i64 {
        self.tally(winner) as i64 - self.tally(loser) as i64
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&CandidateId, &CandidateId)> {
        self.winners
            .iter()
            .flat_map(move |w| self.losers.iter().map(move |x| (w, x)))
    }

    /// m_c: the smallest winner/loser margin, i.e. weakest winner minus runner-up.
    pub fn margin(&self) -> u64 {
        self.tally(self.weakest_winner()) - self.tally(self.runner_up())
    }

    pub fn weakest_winner(&self) -> &CandidateId {
        self.winners.last().expect("at least one winner")
    }

    pub fn runner_up(&self) -> &CandidateId {
        &self.losers[0]
    }

    pub fn winner_set(&self) -> BTreeSet<&CandidateId> {
        self.winners.iter().collect()
    }

    pub fn is_winner(&self, cand: &str) -> bool {
        self.winners.iter().any(|w| w == cand)
    }

    pub fn is_loser(&self, cand: &str) -> bool {
        self.losers.iter().any(|x| x == cand)
    }
}

/// The W candidates with the highest tallies win. A tie between the W-th and
/// (W+1)-th place is an error: such a contest cannot be audited.
pub fn compute_outcome(
    tallies: &BTreeMap<CandidateId, u64>,
    contest: &ContestSpec,
) -> Result<ContestOutcome> {
    let mut ranked: Vec<(&CandidateId, u64)> = contest
        .candidates
        .iter()
        .map(|c| {
            tallies
                .get(c)
                .map(|&v| (c, v))
                .ok_or_else(|| Error::Malformed(format!("no tally for candidate {c}")))
        })
        .collect::<Result<_>>()?;
    if tallies.len() != contest.candidates.len() {
        return Err(Error::Malformed(format!(
            "tallies for contest {} name unknown candidates",
            contest.id
        )));
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let w = contest.vote_for as usize;
    if ranked[w - 1].1 == ranked[w].1 {
        return Err(Error::NoUniqueOutcome {
            contest: contest.id.clone(),
        });
    }
    Ok(ContestOutcome {
        contest: contest.id.clone(),
        vote_for: contest.vote_for,
        tallies: tallies.clone(),
        winners: ranked[..w].iter().map(|(c, _)| (*c).clone()).collect(),
        losers: ranked[w..].iter().map(|(c, _)| (*c).clone()).collect(),
    })
}

/// Outcomes for every contest, keyed by contest id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ElectionOutcome {
    pub contests: BTreeMap<ContestId, ContestOutcome>,
}

impl ElectionOutcome {
    pub fn get(&self, contest: &str) -> Option<&ContestOutcome> {
        self.contests.get(contest)
    }

    /// The smallest contest margin, V, in votes.
    pub fn min_margin(&self) -> Option<u64> {
        self.contests.values().map(ContestOutcome::margin).min()
    }
}

/// μ = min_c m_c / N, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DilutedMargin {
    /// Smallest margin in votes (V).
    pub votes: u64,
    /// Total ballots (N).
    pub ballots: u64,
}

impl DilutedMargin {
    pub fn to_f64(&self) -> f64 {
        self.votes as f64 / self.ballots as f64
    }

    pub fn as_ratio(&self) -> Ratio {
        Ratio::new(self.votes as i64, self.ballots)
    }
}

impl fmt::Display for DilutedMargin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.votes, self.ballots)
    }
}

pub fn diluted_margin(outcome: &ElectionOutcome, ballots: u64) -> Result<DilutedMargin> {
    if ballots == 0 {
        return Err(Error::Config("no ballots".into()));
    }
    let weakest = outcome
        .contests
        .values()
        .min_by_key(|o| o.margin())
        .ok_or_else(|| Error::Config("no contests".into()))?;
    if weakest.margin() == 0 {
        return Err(Error::NoUniqueOutcome {
            contest: weakest.contest.clone(),
        });
    }
    Ok(DilutedMargin {
        votes: weakest.margin(),
        ballots,
    })
}

/// Overstatement of one ballot: `e` in votes and `epsilon` relative to each
/// pair's margin, both maximised over contests and winner/loser pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Overstatement {
    pub e: i32,
    pub epsilon: Ratio,
}

impl Overstatement {
    pub const ZERO: Overstatement = Overstatement {
        e: 0,
        epsilon: Ratio::ZERO,
    };

    /// Component-wise maximum.
    pub fn max(self, other: Overstatement) -> Overstatement {
        Overstatement {
            e: self.e.max(other.e),
            epsilon: self.epsilon.max(other.epsilon),
        }
    }
}

fn valid_vote(chosen: &BTreeSet<CandidateId>, vote_for: u32, cand: &str) -> i64 {
    (chosen.len() <= vote_for as usize && chosen.contains(cand)) as i64
}

/// Overstatement for a single contest given the CCVR's and the human's choices.
pub fn contest_overstatement(
    cvr: &BTreeSet<CandidateId>,
    human: &BTreeSet<CandidateId>,
    outcome: &ContestOutcome,
) -> Overstatement {
    let mut best: Option<Overstatement> = None;
    for (w, x) in outcome.pairs() {
        let diff = valid_vote(cvr, outcome.vote_for, w) - valid_vote(human, outcome.vote_for, w)
            - valid_vote(cvr, outcome.vote_for, x)
            + valid_vote(human, outcome.vote_for, x);
        let v_wx = outcome.pair_margin(w, x);
        debug_assert!(v_wx > 0);
        let here = Overstatement {
            e: diff as i32,
            epsilon: Ratio::new(diff, v_wx as u64),
        };
        best = Some(best.map_or(here, |b| b.max(here)));
    }
    best.unwrap_or(Overstatement::ZERO)
}

/// Ballot-level overstatement. Contests absent from one side are read as
/// undervotes on that side; contests without an outcome are ignored.
pub fn ballot_overstatement<'a>(
    cvr: &'a [Selection],
    human: &'a [Selection],
    outcome: &ElectionOutcome,
) -> Overstatement {
    static EMPTY: BTreeSet<CandidateId> = BTreeSet::new();
    let contests: BTreeSet<&ContestId> =
        cvr.iter().chain(human).map(|s| &s.contest).collect();
    let mut best: Option<Overstatement> = None;
    for c in contests {
        let Some(o) = outcome.get(c) else { continue };
        let pick = |side: &'a [Selection]| -> &'a BTreeSet<CandidateId> {
            side.iter()
                .find(|s| &s.contest == c)
                .map_or(&EMPTY, |s| &s.chosen)
        };
        let here = contest_overstatement(pick(cvr), pick(human), o);
        best = Some(best.map_or(here, |b| b.max(here)));
    }
    best.unwrap_or(Overstatement::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn cands(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn tallies(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(c, v)| (c.to_string(), *v)).collect()
    }

    fn contest(w: u32, names: &[&str]) -> ContestSpec {
        ContestSpec::declare("c", w, cands(names)).unwrap()
    }

    fn sel(names: &[&str]) -> Selection {
        Selection::new("c", names.iter().copied())
    }

    #[test]
    fn counts_plurality_votes() {
        let c = contest(1, &["A", "B"]);
        let t = count_valid_votes(&[sel(&["A"]), sel(&["A"]), sel(&["B"])], &c).unwrap();
        assert_eq!(t, tallies(&[("A", 2), ("B", 1)]));
    }

    #[test]
    fn overvotes_and_undervotes_count_for_nobody() {
        let c = contest(1, &["A", "B"]);
        let t = count_valid_votes(&[sel(&["A", "B"])], &c).unwrap();
        assert_eq!(t, tallies(&[("A", 0), ("B", 0)]));
        let t = count_valid_votes(&[sel(&[])], &c).unwrap();
        assert_eq!(t, tallies(&[("A", 0), ("B", 0)]));
    }

    #[test]
    fn unknown_candidate_is_malformed() {
        let c = contest(1, &["A", "B"]);
        assert!(matches!(
            count_valid_votes(&[sel(&["Z"])], &c),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn plurality_outcome_and_margin() {
        let c = contest(1, &["A", "B"]);
        let o = compute_outcome(&tallies(&[("A", 60), ("B", 40)]), &c).unwrap();
        assert_eq!(o.winners, cands(&["A"]));
        assert_eq!(o.pair_margin("A", "B"), 20);
        assert_eq!(o.margin(), 20);
    }

    #[test]
    fn exact_tie_has_no_outcome() {
        let c = contest(1, &["A", "B"]);
        assert!(matches!(
            compute_outcome(&tallies(&[("A", 5), ("B", 5)]), &c),
            Err(Error::NoUniqueOutcome { .. })
        ));
    }

    #[test]
    fn vote_for_two_outcome() {
        let c = contest(2, &["A", "B", "C"]);
        let o = compute_outcome(&tallies(&[("A", 50), ("B", 30), ("C", 20)]), &c).unwrap();
        assert_eq!(o.winners, cands(&["A", "B"]));
        assert_eq!(o.pair_margin("A", "C"), 30);
        assert_eq!(o.pair_margin("B", "C"), 10);
        assert_eq!(o.margin(), 10);
        assert_eq!(o.weakest_winner(), "B");
        assert_eq!(o.runner_up(), "C");
    }

    #[test]
    fn diluted_margin_is_the_minimum() {
        let mk = |id: &str, a: u64, b: u64| {
            let c = ContestSpec::declare(id, 1, cands(&["A", "B"])).unwrap();
            (id.to_string(), compute_outcome(&tallies(&[("A", a), ("B", b)]), &c).unwrap())
        };
        let one = ElectionOutcome { contests: [mk("x", 60, 40)].into_iter().collect() };
        assert_eq!(diluted_margin(&one, 100).unwrap().as_ratio(), Ratio::new(1, 5));
        let two = ElectionOutcome { contests: [mk("x", 60, 40), mk("y", 50, 45)].into_iter().collect() };
        assert_eq!(diluted_margin(&two, 100).unwrap().as_ratio(), Ratio::new(1, 20));
        let big = ElectionOutcome { contests: [mk("x", 6000, 5357)].into_iter().collect() };
        let mu = diluted_margin(&big, 12860).unwrap();
        assert_eq!(mu.votes, 643);
        assert_eq!(mu.as_ratio(), Ratio::new(1, 20));
        assert!(diluted_margin(&one, 0).is_err());
    }

    #[test]
    fn overstatement_examples() {
        let c = contest(1, &["A", "B"]);
        let o = compute_outcome(&tallies(&[("A", 60), ("B", 40)]), &c).unwrap();
        let out = ElectionOutcome { contests: [("c".to_string(), o)].into_iter().collect() };
        let s = ballot_overstatement(&[sel(&["A"])], &[sel(&["B"])], &out);
        assert_eq!(s.e, 2);
        assert_eq!(s.epsilon, Ratio::new(2, 20));
        let s = ballot_overstatement(&[sel(&["A"])], &[sel(&["A"])], &out);
        assert_eq!(s, Overstatement::ZERO);
        let s = ballot_overstatement(&[sel(&[])], &[sel(&["A"])], &out);
        assert_eq!(s.e, -1);
        assert_eq!(s.epsilon, Ratio::new(-1, 20));
    }

    #[test]
    fn ratio_ordering() {
        assert!(Ratio::new(1, 3) < Ratio::new(1, 2));
        assert!(Ratio::new(-1, 2) < Ratio::ZERO);
        assert_eq!(Ratio::new(2, 4), Ratio::new(1, 2));
        assert_eq!(Ratio::new(0, 7), Ratio::ZERO);
    }

    #[test]
    fn contest_invariants_are_enforced() {
        assert!(ContestSpec::declare("c", 1, cands(&["A"])).is_err());
        assert!(ContestSpec::declare("c", 2, cands(&["A", "B"])).is_err());
        assert!(ContestSpec::declare("c", 1, cands(&["A", "A"])).is_err());
        assert!(ContestSpec::new("c", 1, cands(&["A", "B"]), 3, tallies(&[("A", 4), ("B", 0)])).is_err());
        assert!(Ballot::new(BallotId::new("1").unwrap(), vec![sel(&["A"]), sel(&["B"])]).is_err());
    }
}
