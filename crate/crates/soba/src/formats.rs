//! On-disk CSV formats.
//!
//! Every file is UTF-8 with a one-line header, LF line endings, and unquoted
//! fields. Lists inside a field are joined with `;`. Parsing is strict: a
//! wrong header, column count, token, or digest is an error naming the line.
//! Counting problems (too few lines, duplicate ballot ids in the style file)
//! parse fine and are left to the static checks.
//!
//! | file | header |
//! |------|--------|
//! | `manifest.csv` | `kind,contest,key,value` |
//! | `ballot_style.csv` | `ballot_id,contests,locator` |
//! | `ccvr_<contest>.csv` | `shrouded_id,selection` |
//! | `lookup.csv` (secret) | `shrouded_id,ballot_id,salt_hex` |
//! | `contests.csv` (input) | `contest_id,vote_for,candidates` |
//! | `cvrs.csv` (input, also used for hand interpretations) | `ballot_id,locator,contest_id,selection` |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use soba_core::checks::{ccvr_file_name, BALLOT_STYLE_FILE};
use soba_core::commit::{BallotId, Commitment, Salt};
use soba_core::model::{Ballot, CandidateId, ContestSpec, Selection};
use soba_core::publish::{
    BallotStyleEntry, BallotStyleFile, CcvrEntry, CcvrFile, LookupEntry, LookupFile, Manifest, Publication,
};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LOOKUP_FILE: &str = "lookup.csv";

const MANIFEST_HEADER: &str = "kind,contest,key,value";
const STYLE_HEADER: &str = "ballot_id,contests,locator";
const CCVR_HEADER: &str = "shrouded_id,selection";
const LOOKUP_HEADER: &str = "shrouded_id,ballot_id,salt_hex";
const CONTESTS_HEADER: &str = "contest_id,vote_for,candidates";
const CVRS_HEADER: &str = "ballot_id,locator,contest_id,selection";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T, E = FormatError> = std::result::Result<T, E>;

/// Line-oriented reader that tracks positions for error messages.
struct Lines<'a> {
    file: &'a str,
    rows: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(file: &'a str, text: &'a str, header: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').ok_or_else(|| FormatError::Parse {
            file: file.into(),
            line: text.lines().count().max(1),
            message: "file must end with a newline".into(),
        })?;
        let mut lines = body.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().expect("split yields at least one item");
        let lines_vec: Vec<_> = lines.collect();
        let me = Lines {
            file,
            rows: lines_vec,
            pos: 0,
        };
        if first != header {
            return Err(me.err(1, format!("expected header {header:?}, found {first:?}")));
        }
        for &(n, l) in &me.rows {
            if l.contains('\r') {
                return Err(me.err(n, "CR characters are not allowed; use LF line endings"));
            }
        }
        Ok(me)
    }

    fn err(&self, line: usize, message: impl Into<String>) -> FormatError {
        FormatError::Parse {
            file: self.file.into(),
            line,
            message: message.into(),
        }
    }

    fn next_fields<const N: usize>(&mut self) -> Option<Result<(usize, [&'a str; N])>> {
        let &(n, line) = self.rows.get(self.pos)?;
        self.pos += 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != N {
            return Some(Err(self.err(n, format!("expected {N} fields, found {}", fields.len()))));
        }
        Some(Ok((n, fields.try_into().expect("length checked"))))
    }
}

/// Contest and candidate ids end up in file names and `;` lists, so they are
/// restricted to `[A-Za-z0-9_.-]+`.
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

fn token<'a>(lines: &Lines, line: usize, s: &'a str, what: &str) -> Result<&'a str> {
    if is_token(s) {
        Ok(s)
    } else {
        Err(lines.err(line, format!("{what} {s:?} must match [A-Za-z0-9_.-]+")))
    }
}

fn token_list(lines: &Lines, line: usize, s: &str, what: &str) -> Result<Vec<String>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(|t| token(lines, line, t, what).map(String::from)).collect()
}

fn selection_set(lines: &Lines, line: usize, s: &str) -> Result<BTreeSet<CandidateId>> {
    let list = token_list(lines, line, s, "candidate")?;
    let set: BTreeSet<_> = list.iter().cloned().collect();
    if set.len() != list.len() {
        return Err(lines.err(line, "candidate repeated in selection"));
    }
    if list.windows(2).any(|w| w[0] > w[1]) {
        return Err(lines.err(line, "selection candidates must be sorted"));
    }
    Ok(set)
}

fn join_set(set: &BTreeSet<CandidateId>) -> String {
    set.iter().map(String::as_str).collect::<Vec<_>>().join(";")
}

fn number<T: std::str::FromStr>(lines: &Lines, line: usize, s: &str, what: &str) -> Result<T> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return Err(lines.err(line, format!("{what} {s:?} is not a canonical decimal number")));
    }
    s.parse().map_err(|_| lines.err(line, format!("{what} {s:?} out of range")))
}

fn ballot_id(lines: &Lines, line: usize, s: &str) -> Result<BallotId> {
    BallotId::new(s).map_err(|e| lines.err(line, e.to_string()))
}

// ---- manifest -------------------------------------------------------------

pub fn serialize_manifest(m: &Manifest) -> String {
    let mut out = String::new();
    writeln!(out, "{MANIFEST_HEADER}").unwrap();
    writeln!(out, "election,,ballots,{}", m.ballots).unwrap();
    writeln!(out, "election,,contests,{}", m.contests.len()).unwrap();
    writeln!(out, "election,,id_length,{}", m.id_length).unwrap();
    writeln!(out, "election,,salt_bytes,{}", m.salt_bytes).unwrap();
    writeln!(out, "election,,commitment,{}", m.commitment).unwrap();
    for c in &m.contests {
        writeln!(out, "contest,{},vote_for,{}", c.id, c.vote_for).unwrap();
        writeln!(out, "contest,{},candidates,{}", c.id, c.candidates.join(";")).unwrap();
        writeln!(out, "contest,{},ballots,{}", c.id, c.reported_ballots).unwrap();
        for cand in &c.candidates {
            writeln!(out, "tally,{},{},{}", c.id, cand, c.reported_tallies.get(cand).copied().unwrap_or(0)).unwrap();
        }
    }
    out
}

struct ManifestRecord {
    line: usize,
    contest: String,
    key: String,
    value: String,
}

fn manifest_record(lines: &mut Lines, kind: &str) -> Result<ManifestRecord> {
    let Some(r) = lines.next_fields::<4>() else {
        return Err(FormatError::Invalid {
            file: MANIFEST_FILE.into(),
            message: format!("ended early; expected a {kind} record"),
        });
    };
    let (line, [k, contest, key, value]) = r?;
    if k != kind {
        return Err(lines.err(line, format!("expected kind {kind:?}, found {k:?}")));
    }
    Ok(ManifestRecord {
        line,
        contest: contest.into(),
        key: key.into(),
        value: value.into(),
    })
}

fn expect_record(lines: &mut Lines, kind: &str, contest: &str, key: &str) -> Result<ManifestRecord> {
    let r = manifest_record(lines, kind)?;
    if r.contest != contest {
        return Err(lines.err(r.line, format!("expected contest {contest:?}, found {:?}", r.contest)));
    }
    if r.key != key {
        return Err(lines.err(r.line, format!("expected key {key:?}, found {:?}", r.key)));
    }
    Ok(r)
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = Lines::new(MANIFEST_FILE, text, MANIFEST_HEADER)?;
    let r = expect_record(&mut lines, "election", "", "ballots")?;
    let ballots: u64 = number(&lines, r.line, &r.value, "ballots")?;
    let r = expect_record(&mut lines, "election", "", "contests")?;
    let count: usize = number(&lines, r.line, &r.value, "contests")?;
    let r = expect_record(&mut lines, "election", "", "id_length")?;
    let id_length: usize = number(&lines, r.line, &r.value, "id_length")?;
    let r = expect_record(&mut lines, "election", "", "salt_bytes")?;
    let salt_bytes: usize = number(&lines, r.line, &r.value, "salt_bytes")?;
    let commitment = expect_record(&mut lines, "election", "", "commitment")?.value;

    let mut contests = Vec::with_capacity(count);
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let r = manifest_record(&mut lines, "contest")?;
        let id = token(&lines, r.line, &r.contest, "contest id")?.to_string();
        if r.key != "vote_for" {
            return Err(lines.err(r.line, format!("expected key \"vote_for\", found {:?}", r.key)));
        }
        if !seen.insert(id.clone()) {
            return Err(lines.err(r.line, format!("contest {id} declared twice")));
        }
        let vote_for: u32 = number(&lines, r.line, &r.value, "vote_for")?;
        let r = expect_record(&mut lines, "contest", &id, "candidates")?;
        let candidates = token_list(&lines, r.line, &r.value, "candidate")?;
        let r = expect_record(&mut lines, "contest", &id, "ballots")?;
        let reported_ballots: u64 = number(&lines, r.line, &r.value, "ballots")?;
        let mut tallies = BTreeMap::new();
        let mut last = r.line;
        for cand in &candidates {
            let r = expect_record(&mut lines, "tally", &id, cand)?;
            tallies.insert(cand.clone(), number(&lines, r.line, &r.value, "tally")?);
            last = r.line;
        }
        let spec = ContestSpec::new(id, vote_for, candidates, reported_ballots, tallies)
            .map_err(|e| lines.err(last, e.to_string()))?;
        contests.push(spec);
    }
    if let Some(r) = lines.next_fields::<4>() {
        let (n, _) = r?;
        return Err(lines.err(n, "unexpected record after the last contest"));
    }
    Ok(Manifest {
        ballots,
        id_length,
        salt_bytes,
        commitment,
        contests,
    })
}

// ---- ballot style ---------------------------------------------------------

pub fn serialize_ballot_style(f: &BallotStyleFile) -> String {
    let mut out = String::with_capacity(32 * (f.len() + 1));
    writeln!(out, "{STYLE_HEADER}").unwrap();
    for e in &f.entries {
        writeln!(out, "{},{},{}", e.ballot_id, e.contests.join(";"), e.locator).unwrap();
    }
    out
}

pub fn parse_ballot_style(text: &str) -> Result<BallotStyleFile> {
    let mut lines = Lines::new(BALLOT_STYLE_FILE, text, STYLE_HEADER)?;
    let mut entries = Vec::new();
    while let Some(r) = lines.next_fields::<3>() {
        let (n, [id, contests, locator]) = r?;
        let ballot_id = ballot_id(&lines, n, id)?;
        let contests = token_list(&lines, n, contests, "contest id")?;
        if contests.is_empty() {
            return Err(lines.err(n, "a ballot must list at least one contest"));
        }
        if contests.iter().collect::<BTreeSet<_>>().len() != contests.len() {
            return Err(lines.err(n, "contest listed twice"));
        }
        entries.push(BallotStyleEntry {
            ballot_id,
            contests,
            locator: locator.to_string(),
        });
    }
    Ok(BallotStyleFile { entries })
}

// ---- CCVR -----------------------------------------------------------------

pub fn serialize_ccvr(f: &CcvrFile) -> String {
    let mut out = String::with_capacity(80 * (f.len() + 1));
    writeln!(out, "{CCVR_HEADER}").unwrap();
    for e in &f.entries {
        writeln!(out, "{},{}", e.shrouded_id, join_set(&e.chosen)).unwrap();
    }
    out
}

/// Entries must be in non-decreasing digest order; equal digests are left
/// for check 3 to report.
pub fn parse_ccvr(contest: &str, text: &str) -> Result<CcvrFile> {
    let name = ccvr_file_name(contest);
    let mut lines = Lines::new(&name, text, CCVR_HEADER)?;
    let mut entries: Vec<CcvrEntry> = Vec::new();
    while let Some(r) = lines.next_fields::<2>() {
        let (n, [digest, selection]) = r?;
        let shrouded_id = Commitment::from_hex(digest).map_err(|e| lines.err(n, e.to_string()))?;
        if entries.last().is_some_and(|p| p.shrouded_id > shrouded_id) {
            return Err(lines.err(n, "entries are not sorted by shrouded id"));
        }
        entries.push(CcvrEntry {
            shrouded_id,
            chosen: selection_set(&lines, n, selection)?,
        });
    }
    Ok(CcvrFile {
        contest: contest.to_string(),
        entries,
    })
}

// ---- lookup ---------------------------------------------------------------

pub fn serialize_lookup(f: &LookupFile) -> String {
    let mut out = String::with_capacity(120 * (f.len() + 1));
    writeln!(out, "{LOOKUP_HEADER}").unwrap();
    for e in &f.entries {
        writeln!(out, "{},{},{}", e.shrouded_id, e.ballot_id, e.salt.to_hex()).unwrap();
    }
    out
}

pub fn parse_lookup(text: &str) -> Result<LookupFile> {
    let mut lines = Lines::new(LOOKUP_FILE, text, LOOKUP_HEADER)?;
    let mut entries: Vec<LookupEntry> = Vec::new();
    while let Some(r) = lines.next_fields::<3>() {
        let (n, [digest, id, salt]) = r?;
        let shrouded_id = Commitment::from_hex(digest).map_err(|e| lines.err(n, e.to_string()))?;
        if let Some(p) = entries.last() {
            if p.shrouded_id == shrouded_id {
                return Err(lines.err(n, format!("duplicate shrouded id {shrouded_id}")));
            }
            if p.shrouded_id > shrouded_id {
                return Err(lines.err(n, "entries are not sorted by shrouded id"));
            }
        }
        entries.push(LookupEntry {
            shrouded_id,
            ballot_id: ballot_id(&lines, n, id)?,
            salt: Salt::from_hex(salt).map_err(|e| lines.err(n, e.to_string()))?,
        });
    }
    Ok(LookupFile { entries })
}

// ---- publication inputs ---------------------------------------------------

pub fn serialize_contests(contests: &[ContestSpec]) -> String {
    let mut out = String::new();
    writeln!(out, "{CONTESTS_HEADER}").unwrap();
    for c in contests {
        writeln!(out, "{},{},{}", c.id, c.vote_for, c.candidates.join(";")).unwrap();
    }
    out
}

/// Contest declarations; reported results are filled in at publication.
pub fn parse_contests(text: &str) -> Result<Vec<ContestSpec>> {
    let mut lines = Lines::new("contests.csv", text, CONTESTS_HEADER)?;
    let mut out: Vec<ContestSpec> = Vec::new();
    while let Some(r) = lines.next_fields::<3>() {
        let (n, [id, w, cands]) = r?;
        let id = token(&lines, n, id, "contest id")?;
        if out.iter().any(|c| c.id == id) {
            return Err(lines.err(n, format!("contest {id} declared twice")));
        }
        let w: u32 = number(&lines, n, w, "vote_for")?;
        let cands = token_list(&lines, n, cands, "candidate")?;
        out.push(ContestSpec::declare(id, w, cands).map_err(|e| lines.err(n, e.to_string()))?);
    }
    Ok(out)
}

/// A ballot with its locator, as read from `cvrs.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedBallot {
    pub ballot: Ballot,
    pub locator: String,
}

pub fn serialize_cvrs(ballots: &[LocatedBallot]) -> String {
    let mut out = String::new();
    writeln!(out, "{CVRS_HEADER}").unwrap();
    for b in ballots {
        for s in &b.ballot.selections {
            writeln!(out, "{},{},{},{}", b.ballot.id, b.locator, s.contest, join_set(&s.chosen)).unwrap();
        }
    }
    out
}

/// Long format: one row per (ballot, contest). Ballots keep the order of
/// their first row. A repeated (ballot, contest) pair is a duplicate ballot
/// record and rejected.
pub fn parse_cvrs(file: &str, text: &str) -> Result<Vec<LocatedBallot>> {
    let mut lines = Lines::new(file, text, CVRS_HEADER)?;
    let mut order: Vec<LocatedBallot> = Vec::new();
    let mut slot: HashMap<BallotId, usize> = HashMap::new();
    while let Some(r) = lines.next_fields::<4>() {
        let (n, [id, locator, contest, selection]) = r?;
        let id = ballot_id(&lines, n, id)?;
        let contest = token(&lines, n, contest, "contest id")?;
        let chosen = selection_set(&lines, n, selection)?;
        let i = *slot.entry(id.clone()).or_insert_with(|| {
            order.push(LocatedBallot {
                ballot: Ballot {
                    id: id.clone(),
                    selections: Vec::new(),
                },
                locator: locator.to_string(),
            });
            order.len() - 1
        });
        let entry = &mut order[i];
        if entry.locator != locator {
            return Err(lines.err(n, format!("ballot {id} has two different locators")));
        }
        if entry.ballot.selection(contest).is_some() {
            return Err(lines.err(n, format!("duplicate ballot id {id} for contest {contest}")));
        }
        entry.ballot.selections.push(Selection {
            contest: contest.to_string(),
            chosen,
        });
    }
    Ok(order)
}

// ---- directories ----------------------------------------------------------

/// The public files of one election.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedFiles {
    pub manifest: Manifest,
    pub ballot_style: BallotStyleFile,
    pub ccvrs: Vec<CcvrFile>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.into(),
        source,
    })
}

impl PublishedFiles {
    /// Reads `manifest.csv`, `ballot_style.csv`, and one `ccvr_<c>.csv` per
    /// manifest contest. Missing CCVR files load as empty so check 1 reports them.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = parse_manifest(&read(&dir.join(MANIFEST_FILE))?)?;
        let ballot_style = parse_ballot_style(&read(&dir.join(BALLOT_STYLE_FILE))?)?;
        let mut ccvrs = Vec::new();
        for c in &manifest.contests {
            let path = dir.join(ccvr_file_name(&c.id));
            if path.exists() {
                ccvrs.push(parse_ccvr(&c.id, &read(&path)?)?);
            }
        }
        Ok(PublishedFiles {
            manifest,
            ballot_style,
            ccvrs,
        })
    }

    /// (file name, contents) for every public file, in a fixed order.
    pub fn render(&self) -> Vec<(String, String)> {
        let mut out = vec![
            (MANIFEST_FILE.to_string(), serialize_manifest(&self.manifest)),
            (BALLOT_STYLE_FILE.to_string(), serialize_ballot_style(&self.ballot_style)),
        ];
        for f in &self.ccvrs {
            out.push((ccvr_file_name(&f.contest), serialize_ccvr(f)));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, text) in self.render() {
            write(&dir.join(name), &text)?;
        }
        Ok(())
    }

    /// SHA-256 of each public file's bytes, for pinning the publication.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.render()
            .into_iter()
            .map(|(name, text)| (name, hex::encode(Sha256::digest(text.as_bytes()))))
            .collect()
    }
}

impl From<&Publication> for PublishedFiles {
    fn from(p: &Publication) -> Self {
        PublishedFiles {
            manifest: p.manifest.clone(),
            ballot_style: p.ballot_style.clone(),
            ccvrs: p.ccvrs.clone(),
        }
    }
}

pub fn load_lookup(path: &Path) -> Result<LookupFile> {
    parse_lookup(&read(path)?)
}

pub fn save_lookup(path: &Path, lookup: &LookupFile) -> Result<()> {
    write(path, &serialize_lookup(lookup))
}

pub fn load_contests(path: &Path) -> Result<Vec<ContestSpec>> {
    parse_contests(&read(path)?)
}

pub fn load_cvrs(path: &Path) -> Result<Vec<LocatedBallot>> {
    let name = path.file_name().map_or("cvrs.csv".into(), |n| n.to_string_lossy().into_owned());
    parse_cvrs(&name, &read(path)?)
}
