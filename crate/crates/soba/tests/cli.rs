use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn soba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soba")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 300 ballots: ann 180, ben 120 for governor; 200 of them also carry a measure.
fn write_inputs(dir: &Path, flip: bool) {
    fs::write(dir.join("contests.csv"), "contest_id,vote_for,candidates\ngov,1,ann;ben\nmeasure,1,no;yes\n").unwrap();
    let mut cvrs = String::from("ballot_id,locator,contest_id,selection\n");
    for i in 1..=300 {
        let gov = if (i <= 180) != flip { "ann" } else { "ben" };
        cvrs += &format!("{i:03},batch{}-{},gov,{gov}\n", i / 50, i % 50);
        if i <= 200 {
            let m = if i % 3 == 0 { "no" } else { "yes" };
            cvrs += &format!("{i:03},batch{}-{},measure,{m}\n", i / 50, i % 50);
        }
    }
    let name = if flip { "flipped.csv" } else { "cvrs.csv" };
    fs::write(dir.join(name), cvrs).unwrap();
}

fn publish(dir: &Path) {
    write_inputs(dir, false);
    write_inputs(dir, true);
    let o = soba(&[
        "publish",
        "--contests",
        dir.join("contests.csv").to_str().unwrap(),
        "--cvrs",
        dir.join("cvrs.csv").to_str().unwrap(),
        "--out",
        dir.join("public").to_str().unwrap(),
        "--lookup",
        dir.join("lookup.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("sha256"));
    assert!(!dir.join("public/lookup.csv").exists());
}

fn audit(dir: &Path, readings: &str, transcript: &str) -> Output {
    soba(&[
        "audit",
        "--files-dir",
        dir.join("public").to_str().unwrap(),
        "--lookup",
        dir.join("lookup.csv").to_str().unwrap(),
        "--interpretations",
        dir.join(readings).to_str().unwrap(),
        "--transcript",
        dir.join(transcript).to_str().unwrap(),
        "--seed",
        "20240611",
    ])
}

#[test]
fn publish_check_audit_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    publish(dir);

    let o = soba(&["check", "--files-dir", dir.join("public").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(" pass ").count() + stdout(&o).matches("PASS").count(), 5, "{}", stdout(&o));

    let o = audit(dir, "cvrs.csv", "t.jsonl");
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Passed"));

    let o = soba(&[
        "replay",
        "--files-dir",
        dir.join("public").to_str().unwrap(),
        "--transcript",
        dir.join("t.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("entries verified"));

    // A flipped reading in the transcript no longer replays.
    let text = fs::read_to_string(dir.join("t.jsonl")).unwrap();
    let tampered = text.replacen("\"chosen\":[\"ann\"]", "\"chosen\":[\"ben\"]", 1);
    assert_ne!(text, tampered);
    fs::write(dir.join("bad.jsonl"), tampered).unwrap();
    let o = soba(&[
        "replay",
        "--files-dir",
        dir.join("public").to_str().unwrap(),
        "--transcript",
        dir.join("bad.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("does NOT replay"));
}

#[test]
fn wrong_outcome_goes_to_a_hand_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    publish(dir);
    let o = audit(dir, "flipped.csv", "t.jsonl");
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("FullHandCountRequired"));
}

#[test]
fn failed_checks_block_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    publish(dir);
    let style = dir.join("public/ballot_style.csv");
    let text = fs::read_to_string(&style).unwrap();
    fs::write(&style, text.replacen("002,", "001,", 1)).unwrap();
    let o = soba(&["check", "--files-dir", dir.join("public").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
    let o = audit(dir, "cvrs.csv", "t.jsonl");
    assert_eq!(o.status.code(), Some(4), "{}", stdout(&o));
}

#[test]
fn lookup_inside_the_public_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_inputs(dir, false);
    let o = soba(&[
        "publish",
        "--contests",
        dir.join("contests.csv").to_str().unwrap(),
        "--cvrs",
        dir.join("cvrs.csv").to_str().unwrap(),
        "--out",
        dir.join("public").to_str().unwrap(),
        "--lookup",
        dir.join("public/secret.csv").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(!dir.join("public/secret.csv").exists());
}

#[test]
fn params_and_draw_match_the_worked_example() {
    let o = soba(&["params", "--margin", "0.05", "--ballots", "10000"]);
    let out = stdout(&o);
    assert!(out.contains("rho = 6.424793"), "{out}");
    assert!(out.contains("n0 = 129"), "{out}");
    assert!(out.contains("D = 1290"), "{out}");

    let o = soba(&["draw", "--dice", "3 1 4 1 5 9", "--population", "10000", "--count", "3"]);
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(rows, ["5641", "8616", "3512"]);
}
