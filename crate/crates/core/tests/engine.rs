use proptest::prelude::*;
use soba_core::audit::{
    km_log_factor, AuditParams, AuditState, AuditStatus, DerivedParams, DrawEvaluation, StopReason,
};
use soba_core::commit::BallotId;
use soba_core::model::{DilutedMargin, Overstatement, Ratio};
use soba_core::sampler::{DrawIndex, SeedValue};

const GAMMA: f64 = 1.01;

fn margin() -> DilutedMargin {
    DilutedMargin { votes: 500, ballots: 10_000 }
}

fn params(alpha: f64) -> AuditParams {
    AuditParams::new(alpha, GAMMA, 0.2, SeedValue::new("8675309"))
}

/// A synthetic evaluation with overstatement `e` in the weakest contest.
fn eval_for(d: DrawIndex, e: i32) -> DrawEvaluation {
    let m = margin();
    let epsilon = Ratio::new(e as i64, m.votes);
    DrawEvaluation {
        draw: d,
        ballot_id: BallotId::new("1").unwrap(),
        ballot_found: true,
        contests: vec![],
        overstatement: Overstatement { e, epsilon },
        taint: soba_core::audit::taint(epsilon, m.votes, GAMMA),
    }
}

fn step(s: &mut AuditState, e: i32) -> AuditStatus {
    let d = s.next_draw().unwrap();
    s.record(&eval_for(d, e)).unwrap()
}

#[test]
fn clean_audit_passes_at_n0() {
    let mut s = AuditState::new(params(0.1), margin()).unwrap();
    for _ in 0..128 {
        assert_eq!(step(&mut s, 0), AuditStatus::AwaitingDraw);
    }
    assert_eq!(step(&mut s, 0), AuditStatus::Passed);
    assert_eq!(s.stop_reason(), Some(StopReason::SimpleRule));
    assert_eq!(s.draw_count(), 129);
}

#[test]
fn one_one_vote_error_is_tolerated_but_two_are_not() {
    let mut s = AuditState::new(params(0.1), margin()).unwrap();
    step(&mut s, 1);
    for _ in 0..128 {
        step(&mut s, 0);
    }
    assert_eq!(s.status(), AuditStatus::Passed);

    let mut s = AuditState::new(params(0.1), margin()).unwrap();
    step(&mut s, 1);
    step(&mut s, 1);
    for _ in 0..127 {
        step(&mut s, 0);
    }
    assert_eq!(s.status(), AuditStatus::Escalating);
    // Escalation continues until P_KM ≤ α.
    while s.status() == AuditStatus::Escalating {
        step(&mut s, 0);
    }
    assert_eq!(s.status(), AuditStatus::Passed);
    assert_eq!(s.stop_reason(), Some(StopReason::KaplanMarkov));
    assert!(s.raw_p_value() <= 0.1);
}

#[test]
fn persistent_errors_end_in_a_hand_count() {
    let mut s = AuditState::new(params(0.1), margin()).unwrap();
    while !s.status().is_terminal() {
        step(&mut s, 2);
    }
    assert_eq!(s.status(), AuditStatus::FullHandCountRequired);
    assert_eq!(s.draw_count(), 1290);
}

#[test]
fn out_of_order_calls_are_protocol_errors() {
    let mut s = AuditState::new(params(0.1), margin()).unwrap();
    let d1 = s.next_draw().unwrap();
    assert!(matches!(s.next_draw(), Err(soba_core::Error::Protocol(_))));
    // An evaluation for a different draw is refused.
    let wrong = DrawIndex::compute(&SeedValue::new("other"), 10_000, 1);
    assert!(matches!(s.record(&eval_for(wrong, 0)), Err(soba_core::Error::Protocol(_))));
    s.record(&eval_for(d1, 0)).unwrap();
    assert!(matches!(s.record(&eval_for(d1, 0)), Err(soba_core::Error::Protocol(_))));

    let mut done = AuditState::new(params(0.1), margin()).unwrap();
    while !done.status().is_terminal() {
        step(&mut done, 0);
    }
    assert!(matches!(done.next_draw(), Err(soba_core::Error::Protocol(_))));
    assert!(done.block().is_err());

    let mut blocked = AuditState::new(params(0.1), margin()).unwrap();
    blocked.block().unwrap();
    assert!(blocked.next_draw().is_err());
}

#[test]
fn p_equal_to_alpha_passes() {
    // The P_KM path does not depend on α, only n₀ does. Record the path once
    // (with a tiny α so nothing stops it), then take α equal to the P_KM at
    // some step k past n₀ and check the audit stops exactly there.
    let mut reference = AuditState::new(params(1e-9), margin()).unwrap();
    step(&mut reference, 2);
    let (k, alpha) = loop {
        step(&mut reference, 0);
        let k = reference.draw_count();
        let alpha = reference.raw_p_value();
        if alpha < 1.0 && DerivedParams::compute(&params(alpha), margin()).is_ok_and(|d| d.initial_sample < k) {
            break (k as usize, alpha);
        }
        assert!(k < 2000, "no step past n0");
    };

    let mut s = AuditState::new(params(alpha).with_max_draws(5000), margin()).unwrap();
    step(&mut s, 2);
    while (s.draw_count() as usize) < k - 1 {
        assert!(!step(&mut s, 0).is_terminal(), "stopped early at {}", s.draw_count());
    }
    assert_eq!(step(&mut s, 0), AuditStatus::Passed);
    assert_eq!(s.raw_p_value(), alpha);
    assert_eq!(s.stop_reason(), Some(StopReason::KaplanMarkov));

    // One ulp below α, step k does not stop.
    let below = f64::from_bits(alpha.to_bits() - 1);
    let mut s = AuditState::new(params(below).with_max_draws(5000), margin()).unwrap();
    step(&mut s, 2);
    while (s.draw_count() as usize) < k {
        step(&mut s, 0);
    }
    assert_eq!(s.status(), AuditStatus::Escalating);
}

#[test]
fn taint_one_never_reaches_the_engine() {
    // ε·V ≤ 2 and γ > 1 keep t ≤ 1/γ < 1.
    let t = soba_core::audit::taint(Ratio::new(2, 500), 500, GAMMA);
    assert!(t < 1.0 / GAMMA + 1e-15);
}

proptest! {
    #[test]
    fn clean_draws_strictly_decrease_p(votes in 1u64..5000, extra in 0u64..100_000, gamma in 1.0001f64..3.0, n in 1usize..300) {
        let m = DilutedMargin { votes, ballots: votes + extra };
        let u = 2.0 * gamma * m.ballots as f64 / m.votes as f64;
        let f = km_log_factor(0.0, u);
        prop_assert!(f < 0.0);
        let mut log_p = 0.0f64;
        for _ in 0..n {
            let next = log_p + f;
            prop_assert!(next < log_p);
            log_p = next;
        }
    }

    #[test]
    fn overstatements_raise_p(t in 0.0f64..0.99, u in 1.01f64..1e6) {
        // A draw with taint t multiplies P by more than a clean draw does.
        prop_assert!(km_log_factor(t, u) >= km_log_factor(0.0, u));
        if t > 0.0 {
            prop_assert!(km_log_factor(t, u) > km_log_factor(0.0, u));
        }
    }
}
