//! The statistical audit: parameters, per-draw evaluation, and the
//! Kaplan-Markov stopping rule.
//!
//! The Kaplan-Markov P-value uses `U = 2γ/μ` and `V = μ·N` (the smallest
//! margin in votes), the usual super-simple definitions. With these the
//! simple stopping rule implies `P_KM ≤ α`.

mod context;
mod engine;
mod evaluate;
mod params;

pub use context::AuditContext;
pub use engine::{km_log_factor, km_p_value, simple_stop_rule, AuditState, AuditStatus, DrawRecord, StopReason};
pub use evaluate::{evaluate_draw, taint, CcvrSource, ContestRecord, DrawEvaluation, HumanSource, RecordTag};
pub use params::{compute_rho, initial_sample_size, AuditParams, DerivedParams};
