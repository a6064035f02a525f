//! The audit session state machine: initial sample, simple stopping rule,
//! Kaplan-Markov escalation, and the full hand count fallback.

use alloc::format;
use alloc::vec::Vec;

use super::evaluate::DrawEvaluation;
use super::params::{AuditParams, DerivedParams};
use crate::model::{DilutedMargin, Ratio};
use crate::sampler::DrawIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AuditStatus {
    /// Drawing the initial sample.
    AwaitingDraw,
    /// A row has been drawn; its evaluation is outstanding.
    AwaitingInterpretation,
    /// Past n₀ without confirmation; drawing more.
    Escalating,
    Passed,
    FullHandCountRequired,
    /// The static checks failed; no draws allowed.
    Blocked,
}

impl AuditStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            AuditStatus::Passed | AuditStatus::FullHandCountRequired | AuditStatus::Blocked
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StopReason {
    /// No two-vote and at most λμn₀ one-vote overstatements in the first n₀ draws.
    SimpleRule,
    /// P_KM ≤ α.
    KaplanMarkov,
}

/// Simple stopping rule: stop iff no e = 2 and at most λ·μ·n₀ draws with e = 1.
/// The bound is compared as a real number, never rounded.
pub fn simple_stop_rule(twos: u64, ones: u64, lambda: f64, margin: DilutedMargin, n0: u64) -> bool {
    // ones ≤ λ·(V/N)·n₀  ⇔  ones·N ≤ λ·V·n₀
    twos == 0 && (ones as f64) * (margin.ballots as f64) <= lambda * (margin.votes as f64 * n0 as f64)
}

/// Log of one draw's Kaplan-Markov factor (1 − 1/U)/(1 − t).
pub fn km_log_factor(taint: f64, error_bound: f64) -> f64 {
    assert!(taint < 1.0, "taint {taint} >= 1");
    libm::log1p(-1.0 / error_bound) - libm::log1p(-taint)
}

/// P_KM = Π (1 − 1/U)/(1 − t_j), summed in the log domain. Unclamped.
pub fn km_p_value<I: IntoIterator<Item = f64>>(taints: I, error_bound: f64) -> f64 {
    libm::exp(taints.into_iter().map(|t| km_log_factor(t, error_bound)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DrawRecord {
    pub j: u64,
    pub row: u64,
    pub e: i32,
    pub epsilon: Ratio,
    pub taint: f64,
    /// ln P_KM after this draw.
    pub log_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditState {
    pub params: AuditParams,
    pub derived: DerivedParams,
    population: u64,
    draws: Vec<DrawRecord>,
    ones: u64,
    twos: u64,
    log_p: f64,
    status: AuditStatus,
    pending: Option<DrawIndex>,
    stop: Option<StopReason>,
}

impl AuditState {
    pub fn new(params: AuditParams, margin: DilutedMargin) -> Result<Self> {
        let derived = DerivedParams::compute(&params, margin)?;
        Ok(AuditState {
            params,
            derived,
            population: margin.ballots,
            draws: Vec::new(),
            ones: 0,
            twos: 0,
            log_p: 0.0,
            status: AuditStatus::AwaitingDraw,
            pending: None,
            stop: None,
        })
    }

    pub fn status(&self) -> AuditStatus {
        self.status
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn draws(&self) -> &[DrawRecord] {
        &self.draws
    }

    pub fn draw_count(&self) -> u64 {
        self.draws.len() as u64
    }

    /// Draws with e = 1 and e = 2, with multiplicity.
    pub fn overstatement_counts(&self) -> (u64, u64) {
        (self.ones, self.twos)
    }

    pub fn pending(&self) -> Option<&DrawIndex> {
        self.pending.as_ref()
    }

    pub fn log_p_value(&self) -> f64 {
        self.log_p
    }

    /// Raw P_KM, possibly above 1.
    pub fn raw_p_value(&self) -> f64 {
        libm::exp(self.log_p)
    }

    /// P_KM clamped to 1 for reporting.
    pub fn p_value(&self) -> f64 {
        self.raw_p_value().min(1.0)
    }

    /// λ·μ·n₀.
    pub fn one_vote_allowance(&self) -> f64 {
        self.params.lambda * self.derived.margin.to_f64() * self.derived.initial_sample as f64
    }

    pub fn block(&mut self) -> Result<()> {
        if self.status.is_terminal() || !self.draws.is_empty() {
            return Err(Error::Protocol("only a fresh session can be blocked".into()));
        }
        self.status = AuditStatus::Blocked;
        Ok(())
    }

    /// The draw `next_draw` would make, without changing state.
    pub fn peek_draw(&self) -> Result<DrawIndex> {
        match self.status {
            AuditStatus::AwaitingDraw | AuditStatus::Escalating => {}
            AuditStatus::AwaitingInterpretation => {
                return Err(Error::Protocol("previous draw has not been evaluated".into()))
            }
            s => return Err(Error::Protocol(format!("audit is {s:?}; no more draws"))),
        }
        Ok(DrawIndex::compute(&self.params.seed, self.population, self.draw_count() + 1))
    }

    /// Draws the next row. The stream is the same one any observer computes
    /// from the seed, so draw j is always the j-th hash.
    pub fn next_draw(&mut self) -> Result<DrawIndex> {
        let d = self.peek_draw()?;
        self.pending = Some(d);
        self.status = AuditStatus::AwaitingInterpretation;
        Ok(d)
    }

    /// Folds one evaluated draw into the state and applies the stopping rules.
    pub fn record(&mut self, eval: &DrawEvaluation) -> Result<AuditStatus> {
        if self.status != AuditStatus::AwaitingInterpretation {
            return Err(Error::Protocol(format!(
                "cannot record a draw while the audit is {:?}",
                self.status
            )));
        }
        let pending = self.pending.expect("pending draw while awaiting interpretation");
        if eval.draw != pending {
            return Err(Error::Protocol(format!(
                "evaluation is for draw {} (row {}), expected draw {} (row {})",
                eval.draw.j, eval.draw.row, pending.j, pending.row
            )));
        }
        self.pending = None;
        match eval.e() {
            1 => self.ones += 1,
            2 => self.twos += 1,
            _ => {}
        }
        let factor = if eval.taint == 0.0 {
            self.derived.clean_log_factor
        } else {
            km_log_factor(eval.taint, self.derived.error_bound)
        };
        self.log_p += factor;
        self.draws.push(DrawRecord {
            j: pending.j,
            row: pending.row,
            e: eval.e(),
            epsilon: eval.epsilon(),
            taint: eval.taint,
            log_p: self.log_p,
        });
        self.status = self.next_status();
        Ok(self.status)
    }

    fn next_status(&mut self) -> AuditStatus {
        let n = self.draw_count();
        let n0 = self.derived.initial_sample;
        if n < n0 {
            return AuditStatus::AwaitingDraw;
        }
        if n == n0
            && simple_stop_rule(self.twos, self.ones, self.params.lambda, self.derived.margin, n0)
        {
            self.stop = Some(StopReason::SimpleRule);
            return AuditStatus::Passed;
        }
        if self.raw_p_value() <= self.params.risk_limit {
            self.stop = Some(StopReason::KaplanMarkov);
            return AuditStatus::Passed;
        }
        if n >= self.derived.max_draws {
            return AuditStatus::FullHandCountRequired;
        }
        AuditStatus::Escalating
    }
}
