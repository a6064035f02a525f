//! One audit session: static checks, draws, salt reveals, interpretations,
//! evaluations, and the transcript that records them.
//!
//! The batch CLI, the HTTP service, and the simulator all drive this type.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use soba_core::audit::{
    evaluate_draw, AuditContext, AuditParams, AuditState, AuditStatus, ContestRecord, DerivedParams, DrawEvaluation,
    StopReason,
};
use soba_core::checks::{run_static_checks, CheckReport};
use soba_core::commit::{BallotId, Salt};
use soba_core::model::{Ballot, ContestId, Ratio, Selection};
use soba_core::sampler::hash_input;

use crate::formats::PublishedFiles;
use crate::transcript::{self, Entry, Event, EventSink, FileSink, MemorySink, ReadError, Transcript, ASSUMPTIONS, TRANSCRIPT_FORMAT};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    /// The request is out of order for the session's state.
    #[error("protocol violation: {0}")]
    Protocol(String),
    /// The request is well ordered but its content is unacceptable.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("transcript write failed: {0}")]
    Io(#[from] io::Error),
}

impl From<soba_core::Error> for SessionError {
    fn from(e: soba_core::Error) -> Self {
        match e {
            soba_core::Error::Protocol(m) => SessionError::Protocol(m),
            other => SessionError::Invalid(other.to_string()),
        }
    }
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PendingDraw {
    pub j: u64,
    pub row: u64,
    pub ballot_id: BallotId,
    pub locator: String,
    pub reveal_received: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub j: u64,
    pub row: u64,
    pub e: i32,
    pub epsilon: Ratio,
    pub taint: f64,
    pub log_p: f64,
    pub p_value: f64,
    pub status: AuditStatus,
    pub stop_reason: Option<StopReason>,
    pub wrong_contest_flag: bool,
    pub reused: bool,
    pub contests: Vec<ContestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawOutcome {
    pub draw: PendingDraw,
    /// Present when the row was drawn before and its evaluation was reused.
    pub reused: Option<EvaluationSummary>,
}

/// Public view of a session, as served by `GET /session/state`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: AuditStatus,
    pub stop_reason: Option<StopReason>,
    pub failed_checks: Vec<u8>,
    pub population: u64,
    pub initial_sample: Option<u64>,
    pub max_draws: Option<u64>,
    pub draws: u64,
    pub one_vote: u64,
    pub two_vote: u64,
    pub p_value: Option<f64>,
    pub pending: Option<PendingDraw>,
}

/// What a transcript header records about the published files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilesSummary {
    pub digests: BTreeMap<String, String>,
    pub commitment: String,
    pub population: u64,
}

impl From<&PublishedFiles> for FilesSummary {
    fn from(files: &PublishedFiles) -> Self {
        FilesSummary {
            digests: files.digests(),
            commitment: files.manifest.commitment.clone(),
            population: files.ballot_style.len() as u64,
        }
    }
}

struct Active {
    ctx: Arc<AuditContext>,
    state: AuditState,
    /// First evaluation of each row, for reuse on repeat draws.
    evaluated: HashMap<u64, (u64, DrawEvaluation)>,
    pending: Option<PendingDraw>,
    reveal: Option<Vec<(ContestId, Salt)>>,
}

pub struct Session<S: EventSink> {
    id: String,
    params: AuditParams,
    population: u64,
    report: CheckReport,
    active: Option<Active>,
    sink: S,
    seq: u64,
}

fn random_id() -> String {
    hex::encode(rand::rng().random::<[u8; 8]>())
}

impl<S: EventSink> Session<S> {
    /// Runs the static checks and opens a session. A session whose checks
    /// fail is created in the `Blocked` state and never draws.
    pub fn create(files: &PublishedFiles, params: AuditParams, sink: S) -> Result<Self> {
        Self::create_with_id(files, params, sink, random_id())
    }

    pub fn create_with_id(files: &PublishedFiles, params: AuditParams, sink: S, id: String) -> Result<Self> {
        let report = run_static_checks(&files.manifest, &files.ballot_style, &files.ccvrs);
        let ctx = if report.overall_pass() {
            Some(Arc::new(AuditContext::new(
                files.manifest.clone(),
                files.ballot_style.clone(),
                files.ccvrs.clone(),
            )?))
        } else {
            None
        };
        Self::start(&FilesSummary::from(files), ctx, report, params, sink, id)
    }

    /// Opens a session on a context built elsewhere; `report` must be the
    /// static check report for the same files.
    pub fn start(
        files: &FilesSummary,
        ctx: Option<Arc<AuditContext>>,
        report: CheckReport,
        params: AuditParams,
        sink: S,
        id: String,
    ) -> Result<Self> {
        params.validate()?;
        let active = match ctx {
            Some(ctx) if report.overall_pass() => Some(Active {
                state: AuditState::new(params.clone(), ctx.margin)?,
                ctx,
                evaluated: HashMap::new(),
                pending: None,
                reveal: None,
            }),
            _ => None,
        };
        let mut s = Session {
            id,
            population: files.population,
            params,
            report,
            active,
            sink,
            seq: 0,
        };
        s.emit(Event::Header {
            format: TRANSCRIPT_FORMAT.into(),
            commitment: files.commitment.clone(),
            assumptions: ASSUMPTIONS.into(),
            files: files.digests.clone(),
        })?;
        s.emit(Event::SessionCreated {
            session_id: s.id.clone(),
            params: s.params.clone(),
            derived: s.derived().copied(),
            failed_checks: s.report.failed().iter().map(|c| c.number()).collect(),
            status: s.status(),
        })?;
        Ok(s)
    }

    fn emit(&mut self, event: Event) -> io::Result<()> {
        let entry = Entry::new(self.seq + 1, event);
        self.sink.append(&entry)?;
        self.seq += 1;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    /// Moves the session onto another sink, keeping its sequence numbering.
    pub fn with_sink<T: EventSink>(self, sink: T) -> Session<T> {
        Session {
            id: self.id,
            params: self.params,
            population: self.population,
            report: self.report,
            active: self.active,
            sink,
            seq: self.seq,
        }
    }

    pub fn check_report(&self) -> &CheckReport {
        &self.report
    }

    pub fn params(&self) -> &AuditParams {
        &self.params
    }

    pub fn derived(&self) -> Option<&DerivedParams> {
        self.active.as_ref().map(|a| &a.state.derived)
    }

    pub fn state(&self) -> Option<&AuditState> {
        self.active.as_ref().map(|a| &a.state)
    }

    pub fn context(&self) -> Option<&Arc<AuditContext>> {
        self.active.as_ref().map(|a| &a.ctx)
    }

    pub fn status(&self) -> AuditStatus {
        self.active.as_ref().map_or(AuditStatus::Blocked, |a| a.state.status())
    }

    pub fn pending(&self) -> Option<&PendingDraw> {
        self.active.as_ref().and_then(|a| a.pending.as_ref())
    }

    pub fn view(&self) -> SessionView {
        let a = self.active.as_ref();
        let (ones, twos) = a.map_or((0, 0), |a| a.state.overstatement_counts());
        SessionView {
            session_id: self.id.clone(),
            status: self.status(),
            stop_reason: a.and_then(|a| a.state.stop_reason()),
            failed_checks: self.report.failed().iter().map(|c| c.number()).collect(),
            population: self.population,
            initial_sample: a.map(|a| a.state.derived.initial_sample),
            max_draws: a.map(|a| a.state.derived.max_draws),
            draws: a.map_or(0, |a| a.state.draw_count()),
            one_vote: ones,
            two_vote: twos,
            p_value: a.map(|a| a.state.p_value()),
            pending: a.and_then(|a| a.pending.clone()),
        }
    }

    fn active(&mut self) -> Result<&mut Active> {
        self.active
            .as_mut()
            .ok_or_else(|| SessionError::Protocol("session is blocked by failing static checks".into()))
    }

    /// Draws the next row. A row drawn before reuses its evaluation at once,
    /// so the returned draw then needs no reveal or interpretation.
    pub fn draw(&mut self) -> Result<DrawOutcome> {
        let a = self.active()?;
        let d = a.state.peek_draw()?;
        let entry = a
            .ctx
            .ballot_style
            .row(d.row)
            .expect("sampled rows are within the style file");
        let pending = PendingDraw {
            j: d.j,
            row: d.row,
            ballot_id: entry.ballot_id.clone(),
            locator: entry.locator.clone(),
            reveal_received: false,
        };
        let repeat_of = a.evaluated.get(&d.row).map(|(j, _)| *j);
        self.emit(Event::Draw {
            j: d.j,
            hash_input: hash_input(&self.params.seed, d.j),
            numerator_hex: d.fraction.numerator_hex(),
            row: d.row,
            ballot_id: pending.ballot_id.clone(),
            locator: pending.locator.clone(),
            repeat_of,
        })?;
        let a = self.active.as_mut().expect("checked above");
        a.state.next_draw()?;
        if let Some((_, earlier)) = a.evaluated.get(&d.row) {
            let mut eval = earlier.clone();
            eval.draw = d;
            let summary = self.fold(eval, true)?;
            return Ok(DrawOutcome {
                draw: pending,
                reused: Some(summary),
            });
        }
        a.pending = Some(pending.clone());
        a.reveal = None;
        Ok(DrawOutcome {
            draw: pending,
            reused: None,
        })
    }

    fn expect_pending(&mut self, j: u64, ballot_id: &BallotId) -> Result<PendingDraw> {
        let a = self.active()?;
        let p = a
            .pending
            .clone()
            .ok_or_else(|| SessionError::Protocol(format!("no draw is awaiting input (status {:?})", a.state.status())))?;
        if p.j != j {
            return Err(SessionError::Protocol(format!("input is for draw {j}, but draw {} is pending", p.j)));
        }
        if &p.ballot_id != ballot_id {
            return Err(SessionError::Protocol(format!(
                "input names ballot {ballot_id}, but draw {j} selected ballot {}",
                p.ballot_id
            )));
        }
        Ok(p)
    }

    /// The official reveals the salts for the pending ballot, one per
    /// contest. Revealing nothing is allowed and makes every CCVR an orphan.
    pub fn reveal(&mut self, j: u64, ballot_id: &BallotId, salts: Vec<(ContestId, Salt)>) -> Result<()> {
        let p = self.expect_pending(j, ballot_id)?;
        if p.reveal_received {
            return Err(SessionError::Protocol(format!("salts for draw {j} were already revealed")));
        }
        self.emit(Event::SaltReveal {
            j,
            ballot_id: ballot_id.clone(),
            salts: salts.iter().map(|(c, s)| (c.clone(), s.to_hex())).collect(),
        })?;
        let a = self.active.as_mut().expect("pending implies active");
        a.reveal = Some(salts);
        a.pending.as_mut().expect("checked").reveal_received = true;
        Ok(())
    }

    /// The auditors' reading of the pending ballot, or `None` when it cannot
    /// be found. Requires the reveal to have happened.
    pub fn interpret(&mut self, j: u64, ballot_id: &BallotId, reading: Option<Vec<Selection>>) -> Result<EvaluationSummary> {
        let p = self.expect_pending(j, ballot_id)?;
        if !p.reveal_received {
            return Err(SessionError::Protocol(format!("salts for draw {j} have not been revealed")));
        }
        let ballot = match &reading {
            Some(sels) => Some(Ballot::new(ballot_id.clone(), sels.clone())?),
            None => None,
        };
        let a = self.active.as_ref().expect("pending implies active");
        let d = *a.state.pending().expect("pending draw");
        let eval = evaluate_draw(
            &a.ctx,
            self.params.gamma,
            d,
            ballot.as_ref(),
            a.reveal.as_deref().unwrap_or_default(),
        )?;
        self.emit(Event::Interpretation {
            j,
            ballot_id: ballot_id.clone(),
            found: reading.is_some(),
            selections: reading.unwrap_or_default(),
        })?;
        let a = self.active.as_mut().expect("pending implies active");
        a.pending = None;
        a.reveal = None;
        a.evaluated.insert(d.row, (d.j, eval.clone()));
        self.fold(eval, false)
    }

    fn fold(&mut self, eval: DrawEvaluation, reused: bool) -> Result<EvaluationSummary> {
        let a = self.active.as_mut().expect("fold needs an active session");
        let status = a.state.record(&eval)?;
        let rec = *a.state.draws().last().expect("just recorded");
        let summary = EvaluationSummary {
            j: rec.j,
            row: rec.row,
            e: rec.e,
            epsilon: rec.epsilon,
            taint: rec.taint,
            log_p: rec.log_p,
            p_value: a.state.p_value(),
            status,
            stop_reason: a.state.stop_reason(),
            wrong_contest_flag: eval.wrong_contest_flag(),
            reused,
            contests: eval.contests,
        };
        self.emit(Event::Evaluation {
            j: summary.j,
            row: summary.row,
            e: summary.e,
            epsilon: summary.epsilon,
            taint: summary.taint,
            log_p: summary.log_p,
            p_value: summary.p_value,
            status: summary.status,
            stop_reason: summary.stop_reason,
            wrong_contest_flag: summary.wrong_contest_flag,
            reused,
            contests: summary.contests.clone(),
        })?;
        Ok(summary)
    }
}

/// Outcome of re-deriving a transcript from its inputs.
#[derive(Debug)]
pub struct Replay {
    pub session: Session<MemorySink>,
    /// Number of transcript entries that matched.
    pub verified: usize,
    /// First divergence between the transcript and the re-derivation.
    pub mismatch: Option<String>,
    /// Derived entries the transcript was missing at its end (a crash after
    /// an input was persisted but before its evaluation was).
    pub missing_tail: Vec<Entry>,
}

impl<S: EventSink> std::fmt::Debug for Session<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("status", &self.status()).finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("transcript does not start with a header and session record")]
    NoSession,
    #[error("replaying entry {seq}: {source}")]
    Session {
        seq: u64,
        #[source]
        source: SessionError,
    },
}

fn salts_from_hex(salts: &[(ContestId, String)]) -> std::result::Result<Vec<(ContestId, Salt)>, SessionError> {
    salts
        .iter()
        .map(|(c, s)| Ok((c.clone(), Salt::from_hex(s)?)))
        .collect()
}

/// Replays `entries` against `files`. Every input is re-applied in order and
/// every entry, inputs included, must match the re-derivation bit for bit
/// (timestamps aside).
pub fn replay(files: &PublishedFiles, entries: &[Entry]) -> Result<Replay, ReplayError> {
    let (Some(_), Some(created)) = (entries.first(), entries.get(1)) else {
        return Err(ReplayError::NoSession);
    };
    let Event::SessionCreated { session_id, params, .. } = &created.event else {
        return Err(ReplayError::NoSession);
    };
    let session = Session::create_with_id(files, params.clone(), MemorySink::default(), session_id.clone())
        .map_err(|source| ReplayError::Session { seq: 2, source })?;
    let mut out = Replay {
        session,
        verified: 0,
        mismatch: None,
        missing_tail: Vec::new(),
    };

    let mut cursor = 2;
    let check = |out: &mut Replay, upto: usize, cursor: &mut usize| {
        let produced = &out.session.sink.entries;
        while *cursor < upto.min(produced.len()) {
            let (Some(want), got) = (entries.get(*cursor), &produced[*cursor]) else {
                break;
            };
            if want.fingerprint() != got.fingerprint() {
                out.mismatch = Some(format!(
                    "entry {} ({}) differs from the re-derived {} entry",
                    want.seq,
                    want.event.name(),
                    got.event.name()
                ));
                return false;
            }
            *cursor += 1;
        }
        true
    };
    // Header and session record.
    {
        let produced = &out.session.sink.entries;
        for (i, got) in produced.iter().enumerate().take(2) {
            if entries[i].fingerprint() != got.fingerprint() {
                out.mismatch = Some(match &entries[i].event {
                    Event::Header { files: recorded, .. } => {
                        let now = files.digests();
                        let changed: Vec<_> = now
                            .iter()
                            .filter(|(k, v)| recorded.get(*k) != Some(v))
                            .map(|(k, _)| k.as_str())
                            .collect();
                        format!("published files differ from those in the header: {}", changed.join(", "))
                    }
                    _ => "session record differs from the re-derived one".into(),
                });
                return Ok(out);
            }
        }
    }

    while cursor < entries.len() {
        let entry = &entries[cursor];
        let r = match &entry.event {
            Event::Draw { .. } => out.session.draw().map(|_| ()),
            Event::SaltReveal { j, ballot_id, salts } => {
                salts_from_hex(salts).and_then(|s| out.session.reveal(*j, ballot_id, s))
            }
            Event::Interpretation {
                j,
                ballot_id,
                found,
                selections,
            } => out
                .session
                .interpret(*j, ballot_id, found.then(|| selections.clone()))
                .map(|_| ()),
            other => {
                out.mismatch = Some(format!("entry {} ({}) is not an input at this point", entry.seq, other.name()));
                break;
            }
        };
        if let Err(e) = r {
            out.mismatch = Some(format!("entry {} ({}) rejected: {e}", entry.seq, entry.event.name()));
            break;
        }
        let produced = out.session.sink.entries.len();
        if !check(&mut out, produced, &mut cursor) {
            break;
        }
    }
    out.verified = cursor;
    if out.mismatch.is_none() {
        out.missing_tail = out.session.sink.entries[cursor..].to_vec();
    }
    Ok(out)
}

/// Reopens a crashed or stopped session from its transcript file. The file
/// is verified by replay; missing derived entries and a torn last line are
/// repaired before appending resumes.
pub fn recover(files: &PublishedFiles, path: &Path) -> Result<Session<FileSink>, RecoverError> {
    let t = Transcript::read(path)?;
    let r = replay(files, &t.entries)?;
    if let Some(m) = r.mismatch {
        return Err(RecoverError::Tampered(m));
    }
    if t.torn_tail || !r.missing_tail.is_empty() {
        transcript::rewrite(path, &r.session.sink.entries)?;
    }
    let sink = FileSink::append_to(path)?;
    Ok(r.session.with_sink(sink))
}

#[derive(Debug, thiserror::Error)]
pub enum RecoverError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("transcript does not replay: {0}")]
    Tampered(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
