use std::fs::{self, OpenOptions};
use std::io::Write;

use soba::formats::PublishedFiles;
use soba::session::{recover, replay, Session, SessionError};
use soba::sim::{generate_election, Election, FaultKind, ScenarioSpec};
use soba::transcript::{Event, FileSink, MemorySink, Transcript};
use soba_core::audit::{AuditParams, AuditStatus};
use soba_core::model::Selection;
use soba_core::publish::SaltRevealer;
use soba_core::sampler::SeedValue;

fn election(ballots: u64, margin: f64) -> Election {
    generate_election(&ScenarioSpec::two_contest("t", ballots, margin, 0, "session-tests")).unwrap()
}

fn params(seed: &str) -> AuditParams {
    AuditParams::new(0.1, 1.01, 0.2, SeedValue::new(seed))
}

/// Plays the official and the auditors honestly until `stop` says so.
fn drive<S: soba::transcript::EventSink>(s: &mut Session<S>, e: &Election, mut stop: impl FnMut(&Session<S>) -> bool) {
    let p = &e.publication;
    let revealer = SaltRevealer::new(&p.lookup, &p.ccvrs);
    while !s.status().is_terminal() && !stop(s) {
        let pending = match s.pending() {
            Some(p) => p.clone(),
            None => {
                let out = s.draw().unwrap();
                if out.reused.is_some() {
                    continue;
                }
                out.draw
            }
        };
        if !pending.reveal_received {
            let salts = revealer.reveal(&pending.ballot_id).unwrap();
            s.reveal(pending.j, &pending.ballot_id, salts).unwrap();
            if stop(s) {
                break;
            }
        }
        let reading = e.truth.get(&pending.ballot_id).map(|b| b.selections.clone());
        s.interpret(pending.j, &pending.ballot_id, reading).unwrap();
    }
}

#[test]
fn honest_session_replays_bit_for_bit() {
    let e = election(2000, 0.1);
    let files = PublishedFiles::from(&e.publication);
    let mut s = Session::create(&files, params("11"), MemorySink::default()).unwrap();
    drive(&mut s, &e, |_| false);
    assert_eq!(s.status(), AuditStatus::Passed);
    let entries = s.sink().entries.clone();
    let r = replay(&files, &entries).unwrap();
    assert_eq!(r.mismatch, None);
    assert_eq!(r.verified, entries.len());
    assert!(r.missing_tail.is_empty());
    assert_eq!(r.session.view(), s.view());
    assert_eq!(r.session.state(), s.state());
}

#[test]
fn tampering_is_detected() {
    let e = election(2000, 0.1);
    let files = PublishedFiles::from(&e.publication);
    let mut s = Session::create(&files, params("12"), MemorySink::default()).unwrap();
    drive(&mut s, &e, |_| false);
    let entries = s.sink().entries.clone();

    // An altered interpretation.
    let mut t = entries.clone();
    let i = t.iter().position(|x| matches!(x.event, Event::Interpretation { .. })).unwrap();
    if let Event::Interpretation { selections, .. } = &mut t[i].event {
        let other = if selections[0].chosen.contains("bob") { "alice" } else { "bob" };
        selections[0] = Selection::new(selections[0].contest.clone(), [other]);
    }
    let r = replay(&files, &t).unwrap();
    assert!(r.mismatch.unwrap().contains(&format!("entry {}", t[i + 1].seq)));

    // An altered taint.
    let mut t = entries.clone();
    let i = t.iter().position(|x| matches!(x.event, Event::Evaluation { .. })).unwrap();
    if let Event::Evaluation { taint, .. } = &mut t[i].event {
        *taint = f64::from_bits(taint.to_bits() + 1);
    }
    assert!(replay(&files, &t).unwrap().mismatch.is_some());

    // An altered row.
    let mut t = entries.clone();
    let i = t.iter().position(|x| matches!(x.event, Event::Draw { .. })).unwrap();
    if let Event::Draw { row, .. } = &mut t[i].event {
        *row += 1;
    }
    assert!(replay(&files, &t).unwrap().mismatch.is_some());

    // An altered published file.
    let mut f2 = files.clone();
    f2.ccvrs[0].entries[0].chosen = ["carol".to_string()].into_iter().collect();
    let m = replay(&f2, &entries).unwrap().mismatch.unwrap();
    assert!(m.contains("ccvr_"), "{m}");
}

#[test]
fn repeated_rows_reuse_the_first_evaluation() {
    let e = election(12, 0.5);
    let files = PublishedFiles::from(&e.publication);
    let mut s = Session::create(&files, params("3").with_max_draws(40), MemorySink::default()).unwrap();
    drive(&mut s, &e, |_| false);
    let entries = &s.sink().entries;
    let repeats: Vec<_> = entries
        .iter()
        .filter_map(|x| match &x.event {
            Event::Draw { repeat_of: Some(j), row, .. } => Some((*j, *row)),
            _ => None,
        })
        .collect();
    assert!(!repeats.is_empty(), "12 rows and several draws must repeat");
    for (j, row) in repeats {
        let first = s.state().unwrap().draws().iter().find(|d| d.j == j).unwrap();
        assert_eq!(first.row, row);
    }
    // Only first draws of a row ask for a reveal.
    let reveals = entries.iter().filter(|x| matches!(x.event, Event::SaltReveal { .. })).count();
    let draws = entries.iter().filter(|x| matches!(x.event, Event::Draw { .. })).count();
    let reused = entries.iter().filter(|x| matches!(x.event, Event::Evaluation { reused: true, .. })).count();
    assert_eq!(reveals + reused, draws);
    assert_eq!(replay(&files, entries).unwrap().mismatch, None);
}

#[test]
fn out_of_order_requests_are_refused() {
    let e = election(500, 0.1);
    let files = PublishedFiles::from(&e.publication);
    let mut s = Session::create(&files, params("9"), MemorySink::default()).unwrap();
    let revealer = SaltRevealer::new(&e.publication.lookup, &e.publication.ccvrs);
    let protocol = |r: Result<_, SessionError>| matches!(r, Err(SessionError::Protocol(_)));

    let d = s.draw().unwrap().draw;
    assert!(protocol(s.draw().map(|_| ())));
    let id = d.ballot_id.clone();
    let reading = e.truth[&id].selections.clone();
    assert!(protocol(s.interpret(d.j, &id, Some(reading.clone())).map(|_| ())));
    let salts = revealer.reveal(&id).unwrap();
    assert!(protocol(s.reveal(d.j + 1, &id, salts.clone())));
    let other = e.truth.keys().find(|k| **k != id).unwrap().clone();
    assert!(protocol(s.reveal(d.j, &other, salts.clone())));
    s.reveal(d.j, &id, salts.clone()).unwrap();
    assert!(protocol(s.reveal(d.j, &id, salts)));
    let bogus = vec![Selection::new("mayor", ["zed"])];
    assert!(matches!(s.interpret(d.j, &id, Some(bogus)), Err(SessionError::Invalid(_))));
    s.interpret(d.j, &id, Some(reading.clone())).unwrap();
    assert!(protocol(s.interpret(d.j, &id, Some(reading)).map(|_| ())));
}

#[test]
fn failing_checks_block_the_session() {
    let e = election(300, 0.1);
    let mut files = PublishedFiles::from(&e.publication);
    files.ballot_style.entries[1].ballot_id = files.ballot_style.entries[0].ballot_id.clone();
    let mut s = Session::create(&files, params("1"), MemorySink::default()).unwrap();
    assert_eq!(s.status(), AuditStatus::Blocked);
    assert_eq!(s.view().failed_checks, vec![5]);
    assert!(matches!(s.draw(), Err(SessionError::Protocol(_))));
    match &s.sink().entries[1].event {
        Event::SessionCreated { failed_checks, status, .. } => {
            assert_eq!(failed_checks, &vec![5]);
            assert_eq!(*status, AuditStatus::Blocked);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn crash_recovery_resumes_where_it_stopped() {
    let e = generate_election(
        &ScenarioSpec::two_contest("t", 3000, 0.05, 0, "crash").with_fault(FaultKind::CvrOneVote, "mayor", 60),
    )
    .unwrap();
    let files = PublishedFiles::from(&e.publication);
    let dir = tempfile::tempdir().unwrap();

    // Uninterrupted reference run.
    let mut reference = Session::create(&files, params("2718"), MemorySink::default()).unwrap();
    drive(&mut reference, &e, |_| false);

    let path = dir.path().join("audit.jsonl");
    let mut s = Session::create(&files, params("2718"), FileSink::create(&path).unwrap()).unwrap();
    let id = s.id().to_string();
    drive(&mut s, &e, |s| s.view().draws == 40 && s.pending().is_some_and(|p| p.reveal_received));
    drop(s);

    // Crash 1: a torn half-written line at the end.
    {
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":999,\"at_ms\":1,\"event\":\"dr").unwrap();
    }
    let mut s = recover(&files, &path).unwrap();
    assert_eq!(s.id(), id);
    assert_eq!(s.view().draws, 40);
    assert!(s.pending().unwrap().reveal_received);
    drive(&mut s, &e, |s| s.view().draws == 80 && s.pending().is_none());
    drop(s);

    // Crash 2: the interpretation was persisted, its evaluation was not.
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.last().unwrap().contains("\"evaluation\""));
    fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let mut s = recover(&files, &path).unwrap();
    assert_eq!(s.view().draws, 80);
    drive(&mut s, &e, |_| false);

    assert_eq!(s.view(), {
        let mut v = reference.view();
        v.session_id = id.clone();
        v
    });
    let t = Transcript::read(&path).unwrap();
    assert!(!t.torn_tail);
    let r = replay(&files, &t.entries).unwrap();
    assert_eq!(r.mismatch, None);
    assert_eq!(r.verified, t.entries.len());
    // Same evaluations as the uninterrupted run.
    let evals = |entries: &[soba::transcript::Entry]| -> Vec<String> {
        entries
            .iter()
            .filter(|x| matches!(x.event, Event::Evaluation { .. }))
            .map(|x| serde_json::to_string(&x.event).unwrap())
            .collect()
    };
    assert_eq!(evals(&t.entries), evals(&reference.sink().entries));
}

#[test]
fn recovery_refuses_a_tampered_file() {
    let e = election(1000, 0.1);
    let files = PublishedFiles::from(&e.publication);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let mut s = Session::create(&files, params("5"), FileSink::create(&path).unwrap()).unwrap();
    drive(&mut s, &e, |s| s.view().draws == 10);
    drop(s);
    let text = fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"found\":true", "\"found\":false", 1);
    assert_ne!(text, tampered);
    fs::write(&path, tampered).unwrap();
    assert!(recover(&files, &path).is_err());
    // A second session cannot silently overwrite a transcript.
    assert!(FileSink::create(&path).is_err());
}
