use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use soba::formats::{self, PublishedFiles, LOOKUP_FILE};
use soba::service::{self, AppState, DEFAULT_BIND};
use soba::session::{self, Session, SessionError};
use soba::sim::{self, ScenarioSpec};
use soba::transcript::{FileSink, Transcript};
use soba_core::audit::{compute_rho, initial_sample_size, AuditParams, AuditStatus, DerivedParams};
use soba_core::checks::{required_action, CheckId};
use soba_core::model::DilutedMargin;
use soba_core::publish::{publish_election, SaltRevealer};
use soba_core::sampler::{draw_sequence, SeedValue};

/// Exit codes. 0 means success (or an audit that confirmed the outcome).
mod exit {
    pub const DATA: u8 = 1;
    pub const PROTOCOL: u8 = 2;
    pub const HAND_COUNT: u8 = 3;
    pub const BLOCKED: u8 = 4;
}

#[derive(Parser)]
#[command(name = "soba", version, about = "Secrecy-preserving ballot-level risk-limiting audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split CVRs into shrouded per-contest files and write the public files.
    Publish(PublishArgs),
    /// Run the five static checks on published files.
    Check(FilesArg),
    /// Print rho, the initial sample size, and the escalation bound.
    Params(ParamsArgs),
    /// List the rows selected by a seed.
    Draw(DrawArgs),
    /// Run an audit in batch from a lookup file and hand interpretations.
    Audit(AuditArgs),
    /// Monte Carlo simulation of a scenario file.
    Simulate(SimulateArgs),
    /// Re-derive a transcript from its inputs and report any divergence.
    Replay(ReplayArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct FilesArg {
    /// Directory with manifest.csv, ballot_style.csv, and ccvr_<contest>.csv.
    #[arg(long)]
    files_dir: PathBuf,
}

#[derive(Args)]
struct PublishArgs {
    /// contest_id,vote_for,candidates
    #[arg(long)]
    contests: PathBuf,
    /// ballot_id,locator,contest_id,selection
    #[arg(long)]
    cvrs: PathBuf,
    /// Output directory for the public files.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the secret lookup file. Must lie outside `--out`.
    #[arg(long)]
    lookup: PathBuf,
}

#[derive(Args, Clone)]
struct RiskArgs {
    #[arg(long, visible_alias = "risk-limit", default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Public seed, used verbatim.
    #[arg(long, conflicts_with = "dice")]
    seed: Option<String>,
    /// Ten-sided dice rolls, e.g. "3 1 4 1 5 9 2 6 5 3".
    #[arg(long)]
    dice: Option<String>,
}

impl SeedArgs {
    fn value(&self) -> anyhow::Result<SeedValue> {
        match (&self.seed, &self.dice) {
            (Some(s), None) => Ok(SeedValue::new(s.clone())),
            (None, Some(d)) => Ok(SeedValue::from_dice(d)?),
            _ => bail!("give --seed or --dice"),
        }
    }
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    risk: RiskArgs,
    /// Diluted margin as a decimal, e.g. 0.05.
    #[arg(long)]
    margin: String,
    /// N, for the escalation bound D and the error bound U.
    #[arg(long)]
    ballots: Option<u64>,
    #[arg(long)]
    max_draws: Option<u64>,
}

#[derive(Args)]
struct DrawArgs {
    #[command(flatten)]
    seed: SeedArgs,
    /// N, the number of ballot style rows.
    #[arg(long)]
    population: u64,
    #[arg(long, default_value_t = 10)]
    count: u64,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    files_dir: PathBuf,
    /// The secret lookup file, standing in for the official's reveals.
    #[arg(long)]
    lookup: PathBuf,
    /// Hand interpretations in cvrs.csv layout. Ballots absent from the
    /// file are treated as not found.
    #[arg(long)]
    interpretations: PathBuf,
    /// JSON-lines transcript. An existing transcript is verified and resumed.
    #[arg(long)]
    transcript: PathBuf,
    #[command(flatten)]
    risk: RiskArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long)]
    max_draws: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's trial count.
    #[arg(long)]
    trials: Option<u64>,
    /// Write per-trial results here as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print the summary as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    files_dir: PathBuf,
    #[arg(long)]
    transcript: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    files_dir: PathBuf,
    #[arg(long, default_value = DEFAULT_BIND)]
    bind: SocketAddr,
    /// Directory for per-session transcripts.
    #[arg(long)]
    transcript_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Publish(a) => publish(a),
        Command::Check(a) => check(a),
        Command::Params(a) => params(a),
        Command::Draw(a) => draw(a),
        Command::Audit(a) => audit(a),
        Command::Simulate(a) => simulate(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve(a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<SessionError>() {
                Some(SessionError::Protocol(_)) => exit::PROTOCOL,
                _ => exit::DATA,
            };
            ExitCode::from(code)
        }
    }
}

fn publish(a: PublishArgs) -> anyhow::Result<u8> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = fs::canonicalize(&a.out).with_context(|| format!("output directory {}", a.out.display()))?;
    let lookup_parent = a.lookup.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if fs::canonicalize(lookup_parent)?.starts_with(&out) {
        bail!("the lookup file is secret and must not be written inside the public directory");
    }
    let contests = formats::load_contests(&a.contests)?;
    let located = formats::load_cvrs(&a.cvrs)?;
    let id_len = located.first().map_or(0, |b| b.ballot.id.len());
    if let Some(b) = located.iter().find(|b| b.ballot.id.len() != id_len) {
        bail!("ballot id {} differs in length from {id_len}", b.ballot.id);
    }
    let locators: HashMap<_, _> = located.iter().map(|b| (b.ballot.id.clone(), b.locator.clone())).collect();
    let cvrs: Vec<_> = located.into_iter().map(|b| b.ballot).collect();
    let mut rng = rand::rng();
    let p = publish_election(&cvrs, &contests, id_len, |b| locators[&b.id].clone(), &mut rng)?;
    let files = PublishedFiles::from(&p);
    files.save(&out)?;
    formats::save_lookup(&a.lookup, &p.lookup)?;
    println!("published {} ballots, {} contests", p.manifest.ballots, p.manifest.contests.len());
    for (name, digest) in files.digests() {
        println!("sha256 {digest}  {name}");
    }
    println!("secret lookup written to {} (do not publish)", a.lookup.display());
    Ok(0)
}

fn check(a: FilesArg) -> anyhow::Result<u8> {
    let files = PublishedFiles::load(&a.files_dir)?;
    if a.files_dir.join(LOOKUP_FILE).exists() {
        eprintln!("warning: {LOOKUP_FILE} is secret but sits in the public directory");
    }
    let report = soba_core::checks::run_static_checks(&files.manifest, &files.ballot_style, &files.ccvrs);
    for r in &report.checks {
        let mark = if r.passed() { "pass" } else { "FAIL" };
        println!("check {} {mark}  {}", r.check.number(), r.check.describe());
        for v in &r.violations {
            println!("    {v}");
        }
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let action = required_action(&report);
    if action.may_proceed() {
        println!("all checks passed; the audit may proceed");
        return Ok(0);
    }
    if !action.hand_count.is_empty() {
        println!("full hand count required for: {}", action.hand_count.join(", "));
    }
    if !action.blocked_by.is_empty() {
        let ids: Vec<_> = action.blocked_by.iter().map(|c: &CheckId| c.number().to_string()).collect();
        println!("audit blocked until checks {} pass", ids.join(", "));
    }
    Ok(exit::BLOCKED)
}

/// Parses a decimal such as "0.05" exactly into votes/ballots.
fn decimal_margin(s: &str) -> anyhow::Result<DilutedMargin> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        bail!("margin {s:?} must be a plain decimal such as 0.05");
    }
    let den = 10u64.pow(frac.len() as u32);
    let votes: u64 = format!("{int}{frac}").parse()?;
    if votes == 0 || votes > den {
        bail!("margin {s} must be in (0, 1]");
    }
    Ok(DilutedMargin { votes, ballots: den })
}

fn params(a: ParamsArgs) -> anyhow::Result<u8> {
    let rho = compute_rho(a.risk.alpha, a.risk.gamma, a.risk.lambda)?;
    let mu = decimal_margin(&a.margin)?;
    let n0 = initial_sample_size(rho, mu)?;
    println!("rho = {rho:.6}");
    println!("n0 = {n0}");
    println!("one-vote allowance = {:.4}", a.risk.lambda * mu.to_f64() * n0 as f64);
    if let Some(n) = a.ballots {
        let votes = (mu.to_f64() * n as f64).round() as u64;
        let margin = DilutedMargin { votes, ballots: n };
        let mut p = AuditParams::new(a.risk.alpha, a.risk.gamma, a.risk.lambda, SeedValue::new(""));
        p.max_draws = a.max_draws;
        let d = DerivedParams::compute(&p, margin)?;
        println!("V = {} votes, U = {:.4}, D = {}", d.min_margin, d.error_bound, d.max_draws);
        if d.initial_sample != n0 {
            println!("n0 for V/N = {votes}/{n} is {}", d.initial_sample);
        }
    }
    Ok(0)
}

fn draw(a: DrawArgs) -> anyhow::Result<u8> {
    if a.population == 0 {
        bail!("population must be positive");
    }
    let seed = a.seed.value()?;
    println!("j,row,r");
    for d in draw_sequence(&seed, a.population, a.count) {
        println!("{},{},{:.16}", d.j, d.row, d.fraction.to_f64());
    }
    Ok(0)
}

fn status_code(s: AuditStatus) -> u8 {
    match s {
        AuditStatus::Passed => 0,
        AuditStatus::FullHandCountRequired => exit::HAND_COUNT,
        AuditStatus::Blocked => exit::BLOCKED,
        _ => exit::PROTOCOL,
    }
}

fn audit(a: AuditArgs) -> anyhow::Result<u8> {
    let files = PublishedFiles::load(&a.files_dir)?;
    let lookup = formats::load_lookup(&a.lookup)?;
    let readings: HashMap<_, _> = formats::load_cvrs(&a.interpretations)?
        .into_iter()
        .map(|b| (b.ballot.id.clone(), b.ballot.selections))
        .collect();
    let mut params = AuditParams::new(a.risk.alpha, a.risk.gamma, a.risk.lambda, a.seed.value()?);
    params.max_draws = a.max_draws;

    let mut s = if a.transcript.exists() {
        let s = session::recover(&files, &a.transcript)?;
        if s.params() != &params {
            bail!("transcript {} was started with different parameters", a.transcript.display());
        }
        println!("resumed session {} after {} draws", s.id(), s.view().draws);
        s
    } else {
        Session::create(&files, params, FileSink::create(&a.transcript)?)?
    };

    if s.status() == AuditStatus::Blocked {
        for c in s.check_report().failed() {
            println!("check {} failed: {}", c.number(), c.describe());
        }
        println!("audit blocked by the static checks");
        return Ok(exit::BLOCKED);
    }
    let d = *s.derived().expect("active session");
    println!(
        "N = {}, V = {}, n0 = {}, D = {}, U = {:.4}",
        s.view().population,
        d.min_margin,
        d.initial_sample,
        d.max_draws,
        d.error_bound
    );
    let revealer = SaltRevealer::new(&lookup, &files.ccvrs);
    while !s.status().is_terminal() {
        let p = match s.pending() {
            Some(p) => p.clone(),
            None => {
                let out = s.draw()?;
                if out.reused.is_some() {
                    continue;
                }
                out.draw
            }
        };
        if !p.reveal_received {
            let salts = revealer.reveal(&p.ballot_id).unwrap_or_default();
            s.reveal(p.j, &p.ballot_id, salts)?;
        }
        let ev = s.interpret(p.j, &p.ballot_id, readings.get(&p.ballot_id).cloned())?;
        if ev.e != 0 || ev.wrong_contest_flag {
            println!("draw {} row {} ballot {}: e = {}, taint = {:.6}", ev.j, ev.row, p.ballot_id, ev.e, ev.taint);
        }
    }
    let v = s.view();
    println!(
        "{:?} after {} draws ({} one-vote, {} two-vote), P_KM = {:.6}",
        v.status,
        v.draws,
        v.one_vote,
        v.two_vote,
        v.p_value.unwrap_or(1.0)
    );
    if let Some(r) = v.stop_reason {
        println!("stopped by {r:?}");
    }
    println!("transcript: {}", a.transcript.display());
    Ok(status_code(v.status))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<u8> {
    let text = fs::read_to_string(&a.scenario).with_context(|| a.scenario.display().to_string())?;
    let mut spec = ScenarioSpec::from_toml(&text)?;
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    let (summary, results) = sim::simulate(spec)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", summary.to_text());
    }
    if let Some(path) = a.csv {
        fs::write(&path, sim::results_csv(&results)).with_context(|| path.display().to_string())?;
    }
    Ok(0)
}

fn replay(a: ReplayArgs) -> anyhow::Result<u8> {
    let files = PublishedFiles::load(&a.files_dir)?;
    let t = Transcript::read(&a.transcript)?;
    let r = session::replay(&files, &t.entries)?;
    if t.torn_tail {
        println!("note: last line is incomplete and was ignored");
    }
    match r.mismatch {
        Some(m) => {
            println!("transcript does NOT replay: {m}");
            println!("{} entries verified before the divergence", r.verified);
            Ok(exit::PROTOCOL)
        }
        None => {
            println!("{} entries verified", r.verified);
            if !r.missing_tail.is_empty() {
                println!("{} derived entries missing at the end", r.missing_tail.len());
            }
            let v = r.session.view();
            println!("status {:?} after {} draws", v.status, v.draws);
            Ok(0)
        }
    }
}

fn serve(a: ServeArgs) -> anyhow::Result<u8> {
    let files = PublishedFiles::load(&a.files_dir)?;
    if !a.bind.ip().is_loopback() {
        eprintln!("warning: listening on non-loopback address {}", a.bind);
    }
    if let Some(dir) = &a.transcript_dir {
        fs::create_dir_all(dir)?;
    }
    let state = AppState::new(files, a.transcript_dir);
    let rt = tokio::runtime::Runtime::new()?;
    println!("listening on http://{}", a.bind);
    rt.block_on(service::serve(a.bind, state)).map_err(|e| anyhow!(e))?;
    Ok(0)
}
