//! Monte Carlo simulation of audits against synthetic elections with
//! injected faults.
//!
//! A scenario describes contests by their *reported* results and lists
//! faults; the true ballots are generated so that the reported results come
//! out exactly once the faults are applied. Faults in the CVRs happen before
//! publication; faults in the published files (orphans, extra CCVRs, style
//! file tampering) are applied afterwards by a dishonest official, with the
//! manifest recomputed so the static checks still pass.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soba_core::audit::{evaluate_draw, AuditContext, AuditParams, AuditStatus, RecordTag, StopReason};
use soba_core::checks::{run_static_checks, CheckId, CheckReport};
use soba_core::commit::{fresh_salt, BallotId, CommitmentScheme};
use soba_core::model::{compute_outcome, count_valid_votes, Ballot, ContestSpec, Selection};
use soba_core::publish::{publish_election, CcvrEntry, LookupEntry, Publication, SaltRevealer};
use soba_core::sampler::{prng_fraction, DrawIndex, SeedValue};

use crate::formats::PublishedFiles;
use crate::session::{FilesSummary, Session, SessionError};
use crate::transcript::NullSink;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Core(#[from] soba_core::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

type Result<T, E = SimError> = std::result::Result<T, E>;

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Scenario(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// The CVR shows the apparent winner; the ballot shows the runner-up.
    CvrMisread,
    /// The CVR shows an undervote; the ballot shows the runner-up.
    CvrOneVote,
    /// The ballot's CCVR is replaced by a winner vote committed to an id
    /// that is on no ballot.
    Orphan,
    /// The ballot's CCVR is replaced by a winner vote committed to another
    /// ballot's id, which then has two CCVRs in the contest.
    Multiple,
    /// A runner-up ballot's CCVR and style entry for the contest are removed.
    MissingCcvr,
    /// A ballot without the contest gets a style entry and a winner CCVR.
    PhantomContest,
    /// A runner-up ballot's style row and CCVRs are moved to an id no ballot
    /// carries, with the contest recorded as a winner vote.
    MissingBallot,
}

impl FaultKind {
    pub const ALL: [FaultKind; 7] = [
        FaultKind::CvrMisread,
        FaultKind::CvrOneVote,
        FaultKind::Orphan,
        FaultKind::Multiple,
        FaultKind::MissingCcvr,
        FaultKind::PhantomContest,
        FaultKind::MissingBallot,
    ];

    /// (Δ winner, Δ runner-up, Δ ballots with the contest), reported minus true.
    fn delta(self) -> (i64, i64, i64) {
        match self {
            FaultKind::CvrMisread | FaultKind::Orphan | FaultKind::Multiple | FaultKind::MissingBallot => (1, -1, 0),
            FaultKind::CvrOneVote => (0, -1, 0),
            FaultKind::MissingCcvr => (0, -1, -1),
            FaultKind::PhantomContest => (1, 0, 1),
        }
    }

    fn margin_shift(self) -> i64 {
        let (a, b, _) = self.delta();
        a - b
    }

    fn needs_runner_up_voter(self) -> bool {
        self != FaultKind::PhantomContest
    }
}

fn default_risk_limit() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    1.01
}
fn default_lambda() -> f64 {
    0.2
}
fn default_coverage() -> f64 {
    1.0
}

/// One contest, described by its reported results. The first candidate is
/// the reported winner and the second the runner-up; any others are minor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContestLayout {
    pub id: String,
    pub candidates: Vec<String>,
    /// Reported share of ballots carrying the contest.
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    /// Reported winner minus runner-up, as a fraction of all ballots.
    pub margin: f64,
    #[serde(default)]
    pub undervote: f64,
    /// Share of each minor candidate among ballots with the contest.
    #[serde(default)]
    pub minor_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub contest: String,
    /// Number of ballots affected. Ignored when `flip` is set.
    #[serde(default)]
    pub count: u64,
    /// Use the fewest faults that make the reported outcome wrong (a true
    /// tie or reversal).
    #[serde(default)]
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub ballots: u64,
    pub trials: u64,
    pub seed: String,
    #[serde(default = "default_risk_limit")]
    pub risk_limit: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub max_draws: Option<u64>,
    pub contests: Vec<ContestLayout>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// "mayor" on every ballot and "measure" on 60% of them, both reported
    /// at diluted margin `margin`, with no faults.
    pub fn two_contest(name: &str, ballots: u64, margin: f64, trials: u64, seed: &str) -> Self {
        ScenarioSpec {
            name: name.into(),
            ballots,
            trials,
            seed: seed.into(),
            risk_limit: default_risk_limit(),
            gamma: default_gamma(),
            lambda: default_lambda(),
            max_draws: None,
            contests: vec![
                ContestLayout {
                    id: "mayor".into(),
                    candidates: vec!["alice".into(), "bob".into(), "carol".into()],
                    coverage: 1.0,
                    margin,
                    undervote: 0.02,
                    minor_share: 0.05,
                },
                ContestLayout {
                    id: "measure".into(),
                    candidates: vec!["yes".into(), "no".into()],
                    coverage: 0.6,
                    margin,
                    undervote: 0.05,
                    minor_share: 0.0,
                },
            ],
            faults: vec![],
        }
    }

    pub fn with_fault(mut self, kind: FaultKind, contest: &str, count: u64) -> Self {
        self.faults.push(FaultSpec {
            kind,
            contest: contest.into(),
            count,
            flip: false,
        });
        self
    }

    pub fn with_flip(mut self, kind: FaultKind, contest: &str) -> Self {
        self.faults.push(FaultSpec {
            kind,
            contest: contest.into(),
            count: 0,
            flip: true,
        });
        self
    }

    pub fn params(&self, seed: SeedValue) -> AuditParams {
        let p = AuditParams::new(self.risk_limit, self.gamma, self.lambda, seed);
        match self.max_draws {
            Some(d) => p.with_max_draws(d),
            None => p,
        }
    }
}

fn digest_hex(parts: &[&str]) -> String {
    hex::encode(Sha256::digest(parts.join(",").as_bytes()))
}

/// Seed for trial `index`: SHA-256 of "base,index" in hex.
pub fn trial_seed(base: &str, index: u64) -> SeedValue {
    SeedValue::new(digest_hex(&[base, &index.to_string()]))
}

/// A generated election: the truth, the (possibly tampered) publication, and
/// which style rows the faults touched.
#[derive(Debug, Clone)]
pub struct Election {
    /// Physical ballots, keyed by the id printed on them.
    pub truth: HashMap<BallotId, Ballot>,
    pub publication: Publication,
    /// (fault, style row id) for every injected fault.
    pub victims: Vec<(FaultKind, BallotId)>,
    /// Some contest's true outcome differs from the reported one, or is tied.
    pub wrong_outcome: bool,
    pub checks: CheckReport,
}

struct ContestPlan {
    layout: ContestLayout,
    spec: ContestSpec,
    /// Ballot indexes that truly carry the contest.
    present: Vec<usize>,
    counts: BTreeMap<FaultKind, u64>,
}

fn resolve_counts(spec: &ScenarioSpec, layout: &ContestLayout, reported_margin: i64) -> Result<BTreeMap<FaultKind, u64>> {
    let faults: Vec<&FaultSpec> = spec.faults.iter().filter(|f| f.contest == layout.id).collect();
    if faults.iter().filter(|f| f.flip).count() > 1 {
        return Err(bad(format!("contest {}: at most one flip fault", layout.id)));
    }
    let mut counts = BTreeMap::new();
    let mut shift = 0i64;
    for f in faults.iter().filter(|f| !f.flip) {
        *counts.entry(f.kind).or_insert(0) += f.count;
        shift += f.kind.margin_shift() * f.count as i64;
    }
    if let Some(f) = faults.iter().find(|f| f.flip) {
        let per = f.kind.margin_shift();
        let need = (reported_margin - shift).max(0);
        let k = (need + per - 1) / per;
        *counts.entry(f.kind).or_insert(0) += k as u64;
    }
    Ok(counts)
}

fn id_width(n: u64) -> usize {
    n.max(1).to_string().len()
}

/// Builds the election for `spec`. Deterministic in `spec.seed`.
pub fn generate_election(spec: &ScenarioSpec) -> Result<Election> {
    let n = spec.ballots as usize;
    if n == 0 {
        return Err(bad("no ballots"));
    }
    for f in &spec.faults {
        if !spec.contests.iter().any(|c| c.id == f.contest) {
            return Err(bad(format!("fault names unknown contest {}", f.contest)));
        }
    }
    let mut rng = ChaCha20Rng::from_seed(Sha256::digest(format!("{},election", spec.seed).as_bytes()).into());

    let mut plans = Vec::new();
    for layout in &spec.contests {
        if layout.candidates.len() < 2 {
            return Err(bad(format!("contest {} needs two candidates", layout.id)));
        }
        let spec_c = ContestSpec::declare(layout.id.clone(), 1, layout.candidates.clone())?;
        let reported_nc = (layout.coverage * spec.ballots as f64).round() as i64;
        let m_rep = (layout.margin * spec.ballots as f64).round() as i64;
        let counts = resolve_counts(spec, layout, m_rep)?;
        let (mut d_a, mut d_b, mut d_n) = (0i64, 0i64, 0i64);
        for (k, &c) in &counts {
            let (a, b, nc) = k.delta();
            d_a += a * c as i64;
            d_b += b * c as i64;
            d_n += nc * c as i64;
        }
        let true_nc = reported_nc - d_n;
        if true_nc < 0 || true_nc as usize > n {
            return Err(bad(format!("contest {}: coverage out of range", layout.id)));
        }
        let minors = (layout.candidates.len() - 2) as i64;
        let minor_each = (layout.minor_share * true_nc as f64).round() as i64;
        let mut under = (layout.undervote * true_nc as f64).round() as i64;
        let mut two_way = true_nc - minors * minor_each - under;
        let m_true = m_rep - (d_a - d_b);
        if (two_way + m_true) % 2 != 0 {
            under += 1;
            two_way -= 1;
        }
        let a_true = (two_way + m_true) / 2;
        let b_true = two_way - a_true;
        let b_needed: u64 = counts
            .iter()
            .filter(|(k, _)| k.needs_runner_up_voter())
            .map(|(_, c)| c)
            .sum();
        if a_true < 0 || b_true < b_needed as i64 || a_true + d_a <= minor_each || under < 0 {
            return Err(bad(format!("contest {}: margins and faults are inconsistent", layout.id)));
        }
        let mut votes: Vec<Option<&str>> = Vec::with_capacity(true_nc as usize);
        votes.extend(std::iter::repeat_n(Some(layout.candidates[0].as_str()), a_true as usize));
        votes.extend(std::iter::repeat_n(Some(layout.candidates[1].as_str()), b_true as usize));
        for c in &layout.candidates[2..] {
            votes.extend(std::iter::repeat_n(Some(c.as_str()), minor_each as usize));
        }
        votes.extend(std::iter::repeat_n(None, under as usize));
        votes.shuffle(&mut rng);
        let mut present: Vec<usize> = (0..n).collect();
        present.shuffle(&mut rng);
        present.truncate(true_nc as usize);
        present.sort_unstable();
        plans.push((
            ContestPlan {
                layout: layout.clone(),
                spec: spec_c,
                present,
                counts,
            },
            votes.into_iter().map(|v| v.map(String::from)).collect::<Vec<_>>(),
        ));
    }

    let total_faults: u64 = plans.iter().flat_map(|(p, _)| p.counts.values()).sum();
    let width = id_width(spec.ballots + total_faults);
    let mut selections: Vec<Vec<Selection>> = vec![Vec::new(); n];
    for (plan, votes) in &plans {
        for (&i, v) in plan.present.iter().zip(votes) {
            selections[i].push(match v {
                Some(c) => Selection::new(plan.layout.id.clone(), [c.clone()]),
                None => Selection::undervote(plan.layout.id.clone()),
            });
        }
    }
    if let Some(i) = selections.iter().position(Vec::is_empty) {
        return Err(bad(format!("ballot {i} carries no contest; raise some coverage to 1")));
    }
    let truth_list: Vec<Ballot> = selections
        .into_iter()
        .enumerate()
        .map(|(i, s)| Ballot::new(BallotId::padded(i as u64, width).expect("width fits"), s))
        .collect::<soba_core::Result<_>>()?;

    // Victims: distinct ballots across all faults.
    let mut used = BTreeSet::new();
    let mut victims: Vec<(FaultKind, String, usize, Option<usize>)> = Vec::new();
    for (plan, _) in &plans {
        let c = plan.layout.id.as_str();
        let runner_up = plan.layout.candidates[1].as_str();
        for (&kind, &count) in &plan.counts {
            let mut pool: Vec<usize> = (0..n)
                .filter(|i| !used.contains(i))
                .filter(|&i| {
                    let b = &truth_list[i];
                    match kind {
                        FaultKind::PhantomContest => b.selection(c).is_none(),
                        FaultKind::MissingCcvr => {
                            b.selections.len() >= 2 && b.selection(c).is_some_and(|s| s.chosen.contains(runner_up))
                        }
                        _ => b.selection(c).is_some_and(|s| s.chosen.contains(runner_up)),
                    }
                })
                .collect();
            pool.shuffle(&mut rng);
            if pool.len() < count as usize {
                return Err(bad(format!("contest {c}: not enough ballots for {count} {kind:?} faults")));
            }
            for &v in &pool[..count as usize] {
                used.insert(v);
                let host = if kind == FaultKind::Multiple {
                    let hosts: Vec<usize> = plan
                        .present
                        .iter()
                        .copied()
                        .filter(|i| !used.contains(i))
                        .collect();
                    let h = *hosts.choose(&mut rng).ok_or_else(|| bad("no host ballot left"))?;
                    used.insert(h);
                    Some(h)
                } else {
                    None
                };
                victims.push((kind, c.to_string(), v, host));
            }
        }
    }

    // CVR faults.
    let mut cvrs = truth_list.clone();
    for (kind, c, v, _) in &victims {
        let winner = &plans.iter().find(|(p, _)| &p.layout.id == c).unwrap().0.layout.candidates[0];
        let sel = cvrs[*v].selections.iter_mut().find(|s| &s.contest == c);
        match kind {
            FaultKind::CvrMisread => *sel.unwrap() = Selection::new(c.clone(), [winner.clone()]),
            FaultKind::CvrOneVote => *sel.unwrap() = Selection::undervote(c.clone()),
            _ => {}
        }
    }
    let specs: Vec<ContestSpec> = plans.iter().map(|(p, _)| p.spec.clone()).collect();
    let mut publication = publish_election(&cvrs, &specs, width, |b| format!("box {} #{}", 1 + b.id.as_str().parse::<u64>().unwrap_or(0) / 500, b.id), &mut rng)?;
    let scheme = CommitmentScheme::new(width)?;

    // Published-file faults.
    let mut next_fake = spec.ballots;
    let mut fake_id = || {
        let id = BallotId::padded(next_fake, width).expect("width fits");
        next_fake += 1;
        id
    };
    let file_of = |p: &Publication, c: &str| p.ccvrs.iter().position(|f| f.contest == c).expect("declared contest");
    let mut recorded = Vec::new();
    for (kind, c, v, host) in &victims {
        let winner = plans.iter().find(|(p, _)| &p.layout.id == c).unwrap().0.layout.candidates[0].clone();
        let vid = truth_list[*v].id.clone();
        let fi = file_of(&publication, c);
        // Lookup entries of `vid` and the file each digest sits in.
        let take_entry = |p: &mut Publication, ballot: &BallotId, contest_file: usize| -> Option<CcvrEntry> {
            let file = &p.ccvrs[contest_file];
            let digest = p
                .lookup
                .entries
                .iter()
                .filter(|l| &l.ballot_id == ballot)
                .map(|l| l.shrouded_id)
                .find(|y| file.entries.iter().any(|e| &e.shrouded_id == y))?;
            let pos = file.entries.iter().position(|e| e.shrouded_id == digest)?;
            let e = p.ccvrs[contest_file].entries.remove(pos);
            p.lookup.entries.retain(|l| l.shrouded_id != digest);
            Some(e)
        };
        let add = |p: &mut Publication, rng: &mut ChaCha20Rng, ballot: &BallotId, file: usize, chosen: BTreeSet<String>| -> Result<()> {
            let salt = fresh_salt(rng)?;
            let y = scheme.commit(ballot, &salt)?;
            p.ccvrs[file].entries.push(CcvrEntry { shrouded_id: y, chosen });
            p.lookup.entries.push(LookupEntry {
                shrouded_id: y,
                ballot_id: ballot.clone(),
                salt,
            });
            Ok(())
        };
        let win: BTreeSet<String> = [winner].into_iter().collect();
        let row_id = match kind {
            FaultKind::CvrMisread | FaultKind::CvrOneVote => vid.clone(),
            FaultKind::Orphan => {
                take_entry(&mut publication, &vid, fi).expect("victim has a CCVR");
                let f = fake_id();
                add(&mut publication, &mut rng, &f, fi, win)?;
                vid.clone()
            }
            FaultKind::Multiple => {
                take_entry(&mut publication, &vid, fi).expect("victim has a CCVR");
                let h = truth_list[host.expect("multiple has a host")].id.clone();
                add(&mut publication, &mut rng, &h, fi, win)?;
                vid.clone()
            }
            FaultKind::MissingCcvr => {
                take_entry(&mut publication, &vid, fi).expect("victim has a CCVR");
                let row = publication.ballot_style.entries.iter_mut().find(|r| r.ballot_id == vid).unwrap();
                row.contests.retain(|x| x != c);
                vid.clone()
            }
            FaultKind::PhantomContest => {
                add(&mut publication, &mut rng, &vid, fi, win)?;
                let row = publication.ballot_style.entries.iter_mut().find(|r| r.ballot_id == vid).unwrap();
                row.contests.push(c.clone());
                vid.clone()
            }
            FaultKind::MissingBallot => {
                let f = fake_id();
                for other in truth_list[*v].contests().cloned().collect::<Vec<_>>() {
                    let ofi = file_of(&publication, &other);
                    let e = take_entry(&mut publication, &vid, ofi).expect("victim has a CCVR");
                    let chosen = if &other == c { win.clone() } else { e.chosen };
                    add(&mut publication, &mut rng, &f, ofi, chosen)?;
                }
                let row = publication.ballot_style.entries.iter_mut().find(|r| r.ballot_id == vid).unwrap();
                row.ballot_id = f.clone();
                f
            }
        };
        recorded.push((*kind, row_id));
    }
    for f in &mut publication.ccvrs {
        f.sort();
    }
    publication.lookup.sort();
    refresh_manifest(&mut publication)?;

    let wrong_outcome = plans.iter().any(|(p, _)| {
        let sels: Vec<&Selection> = truth_list.iter().filter_map(|b| b.selection(&p.layout.id)).collect();
        let Ok(t) = count_valid_votes(sels, &p.spec) else { return true };
        let reported = publication.manifest.contest(&p.layout.id).unwrap().reported_outcome();
        match (compute_outcome(&t, &p.spec), reported) {
            (Ok(truth), Ok(rep)) => truth.winner_set() != rep.winner_set(),
            _ => true,
        }
    });
    let checks = run_static_checks(&publication.manifest, &publication.ballot_style, &publication.ccvrs);
    Ok(Election {
        truth: truth_list.into_iter().map(|b| (b.id.clone(), b)).collect(),
        publication,
        victims: recorded,
        wrong_outcome,
        checks,
    })
}

/// Recomputes N, N_c, and the tallies from the (possibly altered) files.
fn refresh_manifest(p: &mut Publication) -> Result<()> {
    p.manifest.ballots = p.ballot_style.len() as u64;
    for spec in &mut p.manifest.contests {
        let file = p.ccvrs.iter().find(|f| f.contest == spec.id).expect("one file per contest");
        let sels: Vec<Selection> = file.selections().collect();
        let tallies = count_valid_votes(&sels, spec)?;
        *spec = ContestSpec::new(spec.id.clone(), spec.vote_for, spec.candidates.clone(), file.len() as u64, tallies)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    /// Confirmed by the simple rule after exactly n₀ draws.
    PassedInitial,
    /// Confirmed by P_KM ≤ α, at n₀ or later.
    PassedEscalated,
    FullHandCount,
    Blocked,
}

impl TrialOutcome {
    pub fn confirmed(self) -> bool {
        matches!(self, TrialOutcome::PassedInitial | TrialOutcome::PassedEscalated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub index: u64,
    pub outcome: TrialOutcome,
    pub draws: u64,
    pub one_vote: u64,
    pub two_vote: u64,
    pub p_value: f64,
}

/// Everything a trial needs, built once per scenario and shared by threads.
pub struct Prepared {
    pub spec: ScenarioSpec,
    pub election: Election,
    ctx: Option<Arc<AuditContext>>,
    summary: FilesSummary,
}

impl Prepared {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let election = generate_election(&spec)?;
        let p = &election.publication;
        let ctx = if election.checks.overall_pass() {
            Some(Arc::new(AuditContext::new(
                p.manifest.clone(),
                p.ballot_style.clone(),
                p.ccvrs.clone(),
            )?))
        } else {
            None
        };
        let summary = FilesSummary::from(&PublishedFiles::from(p));
        Ok(Prepared {
            spec,
            election,
            ctx,
            summary,
        })
    }

    pub fn context(&self) -> Option<&Arc<AuditContext>> {
        self.ctx.as_ref()
    }

    /// Runs one audit. The official reveals exactly what the lookup file
    /// holds; the auditors read the physical ballot if one carries the id.
    pub fn run_trial(&self, revealer: &SaltRevealer<'_>, index: u64) -> Result<TrialResult> {
        let params = self.spec.params(trial_seed(&self.spec.seed, index));
        let mut s = Session::start(
            &self.summary,
            self.ctx.clone(),
            self.election.checks.clone(),
            params,
            NullSink,
            format!("trial-{index}"),
        )?;
        while !s.status().is_terminal() {
            let out = s.draw()?;
            if out.reused.is_some() {
                continue;
            }
            let p = out.draw;
            let salts = revealer.reveal(&p.ballot_id).unwrap_or_default();
            s.reveal(p.j, &p.ballot_id, salts)?;
            let reading = self.election.truth.get(&p.ballot_id).map(|b| b.selections.clone());
            s.interpret(p.j, &p.ballot_id, reading)?;
        }
        let outcome = match (s.status(), s.state().and_then(|st| st.stop_reason())) {
            (AuditStatus::Passed, Some(StopReason::SimpleRule)) => TrialOutcome::PassedInitial,
            (AuditStatus::Passed, _) => TrialOutcome::PassedEscalated,
            (AuditStatus::FullHandCountRequired, _) => TrialOutcome::FullHandCount,
            _ => TrialOutcome::Blocked,
        };
        let view = s.view();
        Ok(TrialResult {
            index,
            outcome,
            draws: view.draws,
            one_vote: view.one_vote,
            two_vote: view.two_vote,
            p_value: view.p_value.unwrap_or(1.0),
        })
    }

    /// All trials, in parallel, ordered by index.
    pub fn run(&self) -> Result<Vec<TrialResult>> {
        let p = &self.election.publication;
        let revealer = SaltRevealer::new(&p.lookup, &p.ccvrs);
        (0..self.spec.trials)
            .into_par_iter()
            .map(|i| self.run_trial(&revealer, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub trials: u64,
    pub wrong_outcome: bool,
    pub checks_passed: bool,
    pub initial_sample: Option<u64>,
    pub max_draws: Option<u64>,
    pub passed_initial: u64,
    pub passed_escalated: u64,
    pub full_hand_count: u64,
    pub blocked: u64,
    /// Share of trials that confirmed a wrong outcome; `None` when the
    /// reported outcome is right.
    pub empirical_risk: Option<f64>,
    pub mean_draws: f64,
}

pub fn summarize(prep: &Prepared, results: &[TrialResult]) -> Summary {
    let count = |o: TrialOutcome| results.iter().filter(|r| r.outcome == o).count() as u64;
    let confirmed = results.iter().filter(|r| r.outcome.confirmed()).count() as f64;
    let n = results.len().max(1) as f64;
    let derived = prep.ctx.as_ref().and_then(|c| {
        soba_core::audit::DerivedParams::compute(&prep.spec.params(SeedValue::new("")), c.margin).ok()
    });
    Summary {
        scenario: prep.spec.name.clone(),
        trials: results.len() as u64,
        wrong_outcome: prep.election.wrong_outcome,
        checks_passed: prep.election.checks.overall_pass(),
        initial_sample: derived.map(|d| d.initial_sample),
        max_draws: derived.map(|d| d.max_draws),
        passed_initial: count(TrialOutcome::PassedInitial),
        passed_escalated: count(TrialOutcome::PassedEscalated),
        full_hand_count: count(TrialOutcome::FullHandCount),
        blocked: count(TrialOutcome::Blocked),
        empirical_risk: prep.election.wrong_outcome.then_some(confirmed / n),
        mean_draws: results.iter().map(|r| r.draws as f64).sum::<f64>() / n,
    }
}

/// Builds, runs, and summarizes one scenario.
pub fn simulate(spec: ScenarioSpec) -> Result<(Summary, Vec<TrialResult>)> {
    let prep = Prepared::new(spec)?;
    let results = prep.run()?;
    Ok((summarize(&prep, &results), results))
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "scenario          {}", self.scenario).unwrap();
        writeln!(s, "trials            {}", self.trials).unwrap();
        writeln!(s, "outcome wrong     {}", self.wrong_outcome).unwrap();
        writeln!(s, "checks passed     {}", self.checks_passed).unwrap();
        if let (Some(n0), Some(d)) = (self.initial_sample, self.max_draws) {
            writeln!(s, "n0 / D            {n0} / {d}").unwrap();
        }
        writeln!(s, "passed at n0      {}", self.passed_initial).unwrap();
        writeln!(s, "passed later      {}", self.passed_escalated).unwrap();
        writeln!(s, "full hand count   {}", self.full_hand_count).unwrap();
        writeln!(s, "blocked           {}", self.blocked).unwrap();
        match self.empirical_risk {
            Some(r) => writeln!(s, "empirical risk    {r:.4}").unwrap(),
            None => writeln!(s, "empirical risk    n/a (reported outcome is correct)").unwrap(),
        }
        writeln!(s, "mean draws        {:.2}", self.mean_draws).unwrap();
        s
    }
}

pub fn results_csv(results: &[TrialResult]) -> String {
    let mut s = String::from("trial,outcome,draws,one_vote,two_vote,p_value\n");
    for r in results {
        let outcome = serde_json::to_value(r.outcome).unwrap();
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.index,
            outcome.as_str().unwrap(),
            r.draws,
            r.one_vote,
            r.two_vote,
            r.p_value
        )
        .unwrap();
    }
    s
}

/// The ways a ballot, its style row, and its CCVRs can fail to correspond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultCase {
    /// Two style rows carry the same ballot id.
    DuplicateStyleId,
    /// Two ballots share a shrouded id.
    SharedShroudedId,
    /// A style row names a ballot that does not exist, or a contest the
    /// ballot lacks.
    StyleRowWithoutBallot,
    /// A ballot carries a contest its style row omits.
    ContestMissingFromStyle,
    /// A ballot has no style row.
    BallotWithoutStyleRow,
    /// A CCVR is tied to no ballot.
    OrphanCcvr,
    /// A ballot is tied to several CCVRs in one contest.
    MultipleCcvrs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseHandling {
    /// Ruled out before any draw.
    Precluded { by: String },
    /// Sampling the affected row triggers a worst-case substitution.
    Substituted { fault: FaultKind, tags: Vec<RecordTag>, e: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseCoverage {
    pub case: FaultCase,
    pub handling: Vec<CaseHandling>,
}

fn pinned_draw(row: u64) -> DrawIndex {
    DrawIndex {
        j: 1,
        fraction: prng_fraction(&SeedValue::new("pinned"), 1),
        row,
    }
}

/// Demonstrates how each [`FaultCase`] is handled on a small election: the
/// first two by the static checks (and commitment binding), the rest by
/// evaluating the tampered row directly.
pub fn fault_case_coverage() -> Result<Vec<CaseCoverage>> {
    let mut out = Vec::new();
    let base = ScenarioSpec::two_contest("coverage", 60, 0.2, 0, "coverage");

    // Duplicate style id: check 5.
    let e = generate_election(&base)?;
    let mut p = e.publication.clone();
    p.ballot_style.entries[1].ballot_id = p.ballot_style.entries[0].ballot_id.clone();
    let r = run_static_checks(&p.manifest, &p.ballot_style, &p.ccvrs);
    if r.failed() != vec![CheckId::UniqueBallotIds] {
        return Err(bad(format!("duplicate style id failed {:?}", r.failed())));
    }
    out.push(CaseCoverage {
        case: FaultCase::DuplicateStyleId,
        handling: vec![CaseHandling::Precluded {
            by: "static check 5 (unique ballot ids)".into(),
        }],
    });

    // Shared shrouded id: a published duplicate fails check 3; a digest that
    // opens for two ballots would need a SHA-256 collision.
    let mut p = e.publication.clone();
    let dup = p.ccvrs[0].entries[0].clone();
    p.ccvrs[0].entries[1] = dup;
    p.ccvrs[0].sort();
    let r = run_static_checks(&p.manifest, &p.ballot_style, &p.ccvrs);
    if !r.failed().contains(&CheckId::UniqueShroudedIds) {
        return Err(bad("duplicate shrouded id not caught"));
    }
    out.push(CaseCoverage {
        case: FaultCase::SharedShroudedId,
        handling: vec![CaseHandling::Precluded {
            by: "static check 3 (unique shrouded ids) and commitment binding".into(),
        }],
    });

    let by_fault = |kind: FaultKind, contest: &str| -> Result<CaseHandling> {
        let spec = base.clone().with_fault(kind, contest, 1);
        let e = generate_election(&spec)?;
        if !e.checks.overall_pass() {
            return Err(bad(format!("{kind:?} tripped the static checks")));
        }
        let p = &e.publication;
        let ctx = AuditContext::new(p.manifest.clone(), p.ballot_style.clone(), p.ccvrs.clone())?;
        let revealer = SaltRevealer::new(&p.lookup, &p.ccvrs);
        let (_, row_id) = e.victims.iter().find(|(k, _)| *k == kind).expect("one victim");
        let row = p
            .ballot_style
            .entries
            .iter()
            .position(|r| &r.ballot_id == row_id)
            .expect("victim row") as u64
            + 1;
        let salts = revealer.reveal(row_id).unwrap_or_default();
        let ev = evaluate_draw(&ctx, spec.gamma, pinned_draw(row), e.truth.get(row_id), &salts)?;
        let mut tags: Vec<RecordTag> = ev.contests.iter().flat_map(|c| c.tags()).filter(|t| *t != RecordTag::Matched).collect();
        tags.sort();
        tags.dedup();
        Ok(CaseHandling::Substituted { fault: kind, tags, e: ev.e() })
    };

    out.push(CaseCoverage {
        case: FaultCase::StyleRowWithoutBallot,
        handling: vec![
            by_fault(FaultKind::MissingBallot, "mayor")?,
            by_fault(FaultKind::PhantomContest, "measure")?,
        ],
    });
    out.push(CaseCoverage {
        case: FaultCase::ContestMissingFromStyle,
        handling: vec![by_fault(FaultKind::MissingCcvr, "measure")?],
    });
    // A ballot without a row is never sampled; its id has been replaced by
    // one that names no ballot, so the row reduces to the missing-ballot case.
    out.push(CaseCoverage {
        case: FaultCase::BallotWithoutStyleRow,
        handling: vec![by_fault(FaultKind::MissingBallot, "measure")?],
    });
    out.push(CaseCoverage {
        case: FaultCase::OrphanCcvr,
        handling: vec![by_fault(FaultKind::Orphan, "mayor")?],
    });
    out.push(CaseCoverage {
        case: FaultCase::MultipleCcvrs,
        handling: vec![by_fault(FaultKind::Multiple, "mayor")?],
    });
    Ok(out)
}
