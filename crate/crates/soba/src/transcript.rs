//! Append-only JSON-lines audit transcript.
//!
//! Every entry carries a sequence number and a wall-clock time. Input events
//! (session creation, draw requests, salt reveals, interpretations) are
//! written before the state changes; derived events (evaluations) follow.
//! A replay re-derives everything from the inputs.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use soba_core::audit::{AuditParams, AuditStatus, ContestRecord, DerivedParams, StopReason};
use soba_core::commit::BallotId;
use soba_core::model::{ContestId, Ratio, Selection};

pub const TRANSCRIPT_FORMAT: &str = "soba-transcript/1";

/// Stated in every header so readers know which definitions were used.
pub const ASSUMPTIONS: &str = "U = 2*gamma/mu; V = mu*N (smallest margin in votes); \
missing ballots and contests read as runner-up votes, orphan CCVRs as winner votes, \
each maximised over candidates";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    Header {
        format: String,
        commitment: String,
        assumptions: String,
        /// SHA-256 of each public file.
        files: BTreeMap<String, String>,
    },
    SessionCreated {
        session_id: String,
        params: AuditParams,
        /// `None` when the static checks failed.
        derived: Option<DerivedParams>,
        failed_checks: Vec<u8>,
        status: AuditStatus,
    },
    Draw {
        j: u64,
        hash_input: String,
        numerator_hex: String,
        row: u64,
        ballot_id: BallotId,
        locator: String,
        /// Earlier draw of the same row whose evaluation is reused.
        repeat_of: Option<u64>,
    },
    SaltReveal {
        j: u64,
        ballot_id: BallotId,
        /// (contest, salt hex).
        salts: Vec<(ContestId, String)>,
    },
    Interpretation {
        j: u64,
        ballot_id: BallotId,
        found: bool,
        selections: Vec<Selection>,
    },
    Evaluation {
        j: u64,
        row: u64,
        e: i32,
        epsilon: Ratio,
        taint: f64,
        log_p: f64,
        p_value: f64,
        status: AuditStatus,
        stop_reason: Option<StopReason>,
        wrong_contest_flag: bool,
        reused: bool,
        contests: Vec<ContestRecord>,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Header { .. } => "header",
            Event::SessionCreated { .. } => "session-created",
            Event::Draw { .. } => "draw",
            Event::SaltReveal { .. } => "salt-reveal",
            Event::Interpretation { .. } => "interpretation",
            Event::Evaluation { .. } => "evaluation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

impl Entry {
    pub fn new(seq: u64, event: Event) -> Self {
        let at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        Entry { seq, at_ms, event }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("transcript entries serialize")
    }

    /// Canonical form without the timestamp; floats print in shortest
    /// round-trip form, so equal strings mean bit-identical values.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(&(self.seq, &self.event)).expect("transcript entries serialize")
    }
}

pub trait EventSink: Send {
    /// Must not return until the entry is durable.
    fn append(&mut self, entry: &Entry) -> io::Result<()>;
}

impl<S: EventSink + ?Sized> EventSink for Box<S> {
    fn append(&mut self, entry: &Entry) -> io::Result<()> {
        (**self).append(entry)
    }
}

/// Discards everything. Used by the simulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _: &Entry) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub entries: Vec<Entry>,
}

impl EventSink for MemorySink {
    fn append(&mut self, entry: &Entry) -> io::Result<()> {
        self.entries.push(entry.clone());
        Ok(())
    }
}

/// Appends to a file, flushing and syncing each line.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    /// Creates a new transcript; refuses to overwrite an existing one.
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(path)?;
        Ok(FileSink { path: path.into(), file })
    }

    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(FileSink { path: path.into(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for FileSink {
    fn append(&mut self, entry: &Entry) -> io::Result<()> {
        let mut line = entry.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parsed transcript. A final line without a newline that does not parse is
/// a torn write from a crash and is dropped (reported in `torn_tail`).
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    pub entries: Vec<Entry>,
    pub torn_tail: bool,
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Self, ReadError> {
        let mut out = Transcript::default();
        let complete = text.ends_with('\n') || text.is_empty();
        let lines: Vec<&str> = text.split_terminator('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<Entry>(line) {
                Ok(e) => {
                    if e.seq != out.entries.len() as u64 + 1 {
                        return Err(ReadError::Parse {
                            line: i + 1,
                            message: format!("sequence number {} out of order", e.seq),
                        });
                    }
                    out.entries.push(e)
                }
                Err(_) if !complete && i + 1 == lines.len() => out.torn_tail = true,
                Err(err) => {
                    return Err(ReadError::Parse {
                        line: i + 1,
                        message: err.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self, ReadError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Rewrites `path` to hold exactly `entries`, dropping a torn tail.
pub fn rewrite(path: &Path, entries: &[Entry]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        for e in entries {
            writeln!(f, "{}", e.to_line())?;
        }
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}
