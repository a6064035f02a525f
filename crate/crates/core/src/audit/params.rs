use alloc::format;

use crate::model::DilutedMargin;
use crate::sampler::SeedValue;
use crate::{Error, Result};

/// Operator-chosen audit parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuditParams {
    /// α.
    pub risk_limit: f64,
    /// γ, the error bound inflator.
    pub gamma: f64,
    /// λ, the error tolerance of the initial sample.
    pub lambda: f64,
    /// D. Defaults to `min(N, 10·n₀)`, never below n₀.
    pub max_draws: Option<u64>,
    pub seed: SeedValue,
}

impl AuditParams {
    pub fn new(risk_limit: f64, gamma: f64, lambda: f64, seed: SeedValue) -> Self {
        AuditParams {
            risk_limit,
            gamma,
            lambda,
            max_draws: None,
            seed,
        }
    }

    pub fn with_max_draws(mut self, max_draws: u64) -> Self {
        self.max_draws = Some(max_draws);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda {} must be in (0, 1)", self.lambda)));
        }
        check_common(self.risk_limit, self.gamma)
    }
}

fn check_common(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("risk limit {alpha} must be in (0, 1)")));
    }
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma {gamma} must exceed 1")));
    }
    Ok(())
}

/// ρ = −ln α / (1/(2γ) + λ·ln(1 − 1/(2γ))).
///
/// λ = 0 is accepted here (it reduces ρ to −2γ·ln α) even though an audit
/// needs λ > 0.
pub fn compute_rho(alpha: f64, gamma: f64, lambda: f64) -> Result<f64> {
    check_common(alpha, gamma)?;
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} must be in [0, 1)")));
    }
    let half_inv = 1.0 / (2.0 * gamma);
    let denom = half_inv + lambda * libm::log1p(-half_inv);
    assert!(denom > 0.0, "denominator of rho must be positive for gamma > 1, lambda < 1");
    Ok(-libm::log(alpha) / denom)
}

/// n₀ = ⌈ρ/μ⌉.
pub fn initial_sample_size(rho: f64, margin: DilutedMargin) -> Result<u64> {
    if margin.votes == 0 || margin.ballots == 0 {
        return Err(Error::NoUniqueOutcome {
            contest: "(smallest margin)".into(),
        });
    }
    Ok(libm::ceil(rho * margin.ballots as f64 / margin.votes as f64) as u64)
}

/// Quantities fixed once the margin is known.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DerivedParams {
    pub rho: f64,
    pub margin: DilutedMargin,
    /// n₀.
    pub initial_sample: u64,
    /// U = 2γ/μ.
    pub error_bound: f64,
    /// V = μ·N, the smallest margin in votes.
    pub min_margin: u64,
    /// D.
    pub max_draws: u64,
    /// ln(1 − 1/U): the log-domain factor of an error-free draw.
    pub clean_log_factor: f64,
}

impl DerivedParams {
    pub fn compute(params: &AuditParams, margin: DilutedMargin) -> Result<Self> {
        params.validate()?;
        let rho = compute_rho(params.risk_limit, params.gamma, params.lambda)?;
        let n0 = initial_sample_size(rho, margin)?;
        let max_draws = match params.max_draws {
            Some(d) if d < n0 => {
                return Err(Error::Config(format!(
                    "max draws {d} is below the initial sample size {n0}"
                )))
            }
            Some(d) => d,
            None => margin.ballots.min(n0.saturating_mul(10)).max(n0),
        };
        let error_bound = 2.0 * params.gamma * margin.ballots as f64 / margin.votes as f64;
        debug_assert!(error_bound > 1.0);
        Ok(DerivedParams {
            rho,
            margin,
            initial_sample: n0,
            error_bound,
            min_margin: margin.votes,
            max_draws,
            clean_log_factor: libm::log1p(-1.0 / error_bound),
        })
    }
}
