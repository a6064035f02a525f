//! Worst-case substitutions applied when a sampled row does not line up
//! with the ballot or the CCVR files.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use soba_core::audit::{evaluate_draw, AuditContext, CcvrSource, HumanSource, RecordTag};
use soba_core::commit::{BallotId, Salt};
use soba_core::model::{contest_overstatement, Ballot, ContestSpec, Ratio, Selection};
use soba_core::publish::{publish_election, reveal_salts, Publication};
use soba_core::sampler::{DrawIndex, SeedValue};

const GAMMA: f64 = 1.01;

fn id(i: u64) -> BallotId {
    BallotId::padded(i, 2).unwrap()
}

/// Contest "m" on every ballot: A 6, B 3, C 1. Contest "q" on even ballots:
/// yes 4, no 1. Ten ballots.
fn election() -> (Vec<Ballot>, Publication) {
    let contests = vec![
        ContestSpec::declare("m", 1, vec!["A".into(), "B".into(), "C".into()]).unwrap(),
        ContestSpec::declare("q", 1, vec!["yes".into(), "no".into()]).unwrap(),
    ];
    let ballots: Vec<Ballot> = (0..10)
        .map(|i| {
            let m = match i {
                0..=5 => "A",
                6..=8 => "B",
                _ => "C",
            };
            let mut sels = vec![Selection::new("m", [m])];
            if i % 2 == 0 {
                sels.push(Selection::new("q", [if i == 8 { "no" } else { "yes" }]));
            }
            Ballot::new(id(i), sels).unwrap()
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let p = publish_election(&ballots, &contests, 2, |_| String::new(), &mut rng).unwrap();
    (ballots, p)
}

fn context(p: &Publication) -> AuditContext {
    AuditContext::new(p.manifest.clone(), p.ballot_style.clone(), p.ccvrs.clone()).unwrap()
}

/// A draw pinned to `row` (the evaluator only reads `row`).
fn draw_at(ctx: &AuditContext, row: u64) -> DrawIndex {
    let seed = SeedValue::new("pin");
    (1..)
        .map(|j| DrawIndex::compute(&seed, ctx.population(), j))
        .find(|d| d.row == row)
        .unwrap()
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn honest_draws_match() {
    let (ballots, p) = election();
    let ctx = context(&p);
    assert_eq!(ctx.margin.votes, 3); // min(6-3, 4-1)
    for row in 1..=10u64 {
        let b = &ballots[row as usize - 1];
        let salts = reveal_salts(&p.lookup, &p.ccvrs, &b.id).unwrap();
        let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, row), Some(b), &salts).unwrap();
        assert_eq!(ev.e(), 0);
        assert_eq!(ev.taint, 0.0);
        for c in &ev.contests {
            assert_eq!(c.tags(), vec![RecordTag::Matched]);
        }
    }
}

#[test]
fn missing_ballot_is_a_runner_up_vote() {
    let (_, p) = election();
    let ctx = context(&p);
    // Ballot 00 voted A and yes; pretend it cannot be found.
    let salts = reveal_salts(&p.lookup, &p.ccvrs, &id(0)).unwrap();
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 1), None, &salts).unwrap();
    assert_eq!(ev.e(), 2);
    let m = ev.contests.iter().find(|c| c.contest == "m").unwrap();
    assert_eq!(m.human_source, HumanSource::BallotMissing);
    assert_eq!(m.human, set(&["B"]));
    assert_eq!(m.overstatement.epsilon, Ratio::new(2, 3));
    let q = ev.contests.iter().find(|c| c.contest == "q").unwrap();
    assert_eq!(q.human, set(&["no"]));
    assert_eq!(q.overstatement.epsilon, Ratio::new(2, 3));
    // t = ε·V/(2γ) = (2/3)·3/2.02
    assert!((ev.taint - 2.0 / 2.02).abs() < 1e-15);
    assert!(m.tags().contains(&RecordTag::MissingBallot));
}

#[test]
fn orphan_ccvr_is_a_winner_vote() {
    let (ballots, p) = election();
    let ctx = context(&p);
    // Ballot 07 voted B; the official reveals nothing for m.
    let b = &ballots[7];
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 8), Some(b), &[]).unwrap();
    let m = &ev.contests[0];
    assert_eq!(m.ccvr_source, CcvrSource::Orphan);
    assert_eq!(m.ccvr, set(&["A"]));
    assert_eq!(ev.e(), 2);
    assert!(m.tags().contains(&RecordTag::OrphanCcvr));
    // A salt that does not open anything is also an orphan.
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 8), Some(b), &[("m".into(), Salt([9; 16]))]).unwrap();
    assert_eq!(ev.contests[0].ccvr_source, CcvrSource::Orphan);
}

#[test]
fn salt_opening_another_contest_is_flagged() {
    let (ballots, p) = election();
    let ctx = context(&p);
    let b = &ballots[6]; // B, q
    let salts = reveal_salts(&p.lookup, &p.ccvrs, &b.id).unwrap();
    let q_salt = salts.iter().find(|(c, _)| c == "q").unwrap().1;
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 7), Some(b), &[("m".into(), q_salt), ("q".into(), q_salt)]).unwrap();
    assert!(ev.wrong_contest_flag());
    let m = ev.contests.iter().find(|c| c.contest == "m").unwrap();
    assert_eq!(m.ccvr_source, CcvrSource::WrongContest { found_in: "q".into() });
    assert_eq!(ev.e(), 2);
}

#[test]
fn style_and_ballot_disagree_on_contests() {
    let (ballots, p) = election();
    let ctx = context(&p);
    // Ballot 01 (odd) has only m. Pretend the ballot actually carries q=no:
    // the CCVR for q is deemed a vote for yes.
    let mut b = ballots[1].clone();
    b.selections.push(Selection::new("q", ["no"]));
    let salts = reveal_salts(&p.lookup, &p.ccvrs, &b.id).unwrap();
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 2), Some(&b), &salts).unwrap();
    let q = ev.contests.iter().find(|c| c.contest == "q").unwrap();
    assert_eq!(q.ccvr_source, CcvrSource::ContestNotInStyle);
    assert_eq!(q.ccvr, set(&["yes"]));
    assert_eq!(q.tags(), vec![RecordTag::ExtraContestOnBallot]);
    assert_eq!(ev.e(), 2);

    // Ballot 02 lists q but the physical ballot lacks it.
    let mut b = ballots[2].clone();
    b.selections.retain(|s| s.contest != "q");
    let salts = reveal_salts(&p.lookup, &p.ccvrs, &b.id).unwrap();
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 3), Some(&b), &salts).unwrap();
    let q = ev.contests.iter().find(|c| c.contest == "q").unwrap();
    assert_eq!(q.human_source, HumanSource::ContestNotOnBallot);
    assert_eq!(q.human, set(&["no"]));
    assert_eq!(q.tags(), vec![RecordTag::MissingContestOnBallot]);
    assert_eq!(ev.e(), 2);
}

#[test]
fn mismatched_ballot_is_a_protocol_error() {
    let (ballots, p) = election();
    let ctx = context(&p);
    assert!(evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 1), Some(&ballots[3]), &[]).is_err());
}

#[test]
fn substitution_beats_every_real_reading_when_cvr_shows_runner_up() {
    // CCVR shows B (the runner-up); ballot missing. A reading of C would give
    // e = 1 on (A, C); the substitute must be at least as bad.
    let (ballots, p) = election();
    let ctx = context(&p);
    let b = &ballots[6];
    let salts = reveal_salts(&p.lookup, &p.ccvrs, &b.id).unwrap();
    let ev = evaluate_draw(&ctx, GAMMA, draw_at(&ctx, 7), None, &salts).unwrap();
    let m = ev.contests.iter().find(|c| c.contest == "m").unwrap();
    let o = ctx.outcome.get("m").unwrap();
    let real = contest_overstatement(&set(&["B"]), &set(&["C"]), o);
    assert!(m.overstatement.e >= real.e);
    assert!(m.overstatement.epsilon >= real.epsilon);
}

fn all_selections(cands: &[&str], w: usize) -> Vec<BTreeSet<String>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << cands.len()) {
        let s: BTreeSet<String> = cands
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, c)| c.to_string())
            .collect();
        if s.len() <= w + 1 {
            out.push(s);
        }
    }
    out
}

proptest! {
    /// For every possible CCVR and every possible human reading in a small
    /// vote-for-W contest, the substituted comparison is at least as bad as
    /// the real one, on each side.
    #[test]
    fn substitutions_dominate(tallies in proptest::collection::vec(0u64..20, 4), w in 1u32..3) {
        let cands = ["A", "B", "C", "D"];
        let spec = ContestSpec::declare("c", w, cands.iter().map(|s| s.to_string()).collect()).unwrap();
        let t = cands.iter().map(|c| c.to_string()).zip(tallies.iter().copied()).collect();
        let Ok(o) = soba_core::model::compute_outcome(&t, &spec) else { return Ok(()); };
        let sels = all_selections(&cands, w as usize);
        let human_sub: Vec<_> = o.losers.iter().map(|x| set(&[x])).collect();
        let ccvr_sub: Vec<_> = o.winners.iter().map(|x| set(&[x])).collect();
        for cvr in &sels {
            // Ballot side substituted.
            let sub = human_sub.iter().map(|h| contest_overstatement(cvr, h, &o))
                .reduce(|a, b| a.max(b)).unwrap();
            for human in &sels {
                let real = contest_overstatement(cvr, human, &o);
                prop_assert!(sub.e >= real.e);
                prop_assert!(sub.epsilon >= real.epsilon);
                // CCVR side substituted.
                let sub_c = ccvr_sub.iter().map(|c| contest_overstatement(c, human, &o))
                    .reduce(|a, b| a.max(b)).unwrap();
                let real_c = contest_overstatement(cvr, human, &o);
                prop_assert!(sub_c.e >= real_c.e);
                prop_assert!(sub_c.epsilon >= real_c.epsilon);
                // Bounds: e in [-2, 2] and ε·V ≤ 2.
                prop_assert!((-2..=2).contains(&real.e));
                let v = o.margin() as i128;
                prop_assert!(real.epsilon.numer() as i128 * v <= 2 * real.epsilon.denom() as i128);
            }
        }
    }
}
