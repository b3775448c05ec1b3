//! Martingale and epistemic-uncertainty diagnostics.
//!
//! `T1` and `T2` check that the predictive mean does not move along a
//! generated path; they are compared against bootstrap confidence intervals
//! from an exact Bayesian reference. `T3` measures the spread of the
//! approximate martingale posterior and is tracked across `n` to read off its
//! scaling rate.

mod bootstrap;
mod fact3;
mod posterior;
mod statistics;

pub use bootstrap::{bootstrap_ci, bootstrap_cis, evaluate_statistics, MIN_REPLICATES};
pub use fact3::{fact3_check, ConjugatePrior, Fact3Outcome};
pub use posterior::{martingale_posterior_samples, scaling_experiment, MRule, ScalingPoint};
pub use statistics::{mle, t1, t2, t3, Family, TestFunction};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T1` with a test function or `T2` with a lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Statistic {
    T1 { g: TestFunction },
    T2 { k: usize },
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::T1 { .. } => "T1",
            Statistic::T2 { .. } => "T2",
        }
    }

    /// Parameter column of the results table: `g=z`, `k=3`, ...
    pub fn parameter(&self) -> String {
        match self {
            Statistic::T1 { g } => format!("g={}", g.name()),
            Statistic::T2 { k } => format!("k={k}"),
        }
    }
}

/// Which samples a statistic is computed on. Language-task ensembles are
/// split by the value of `x` first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    All,
    XEquals0,
    XEquals1,
}

impl Subset {
    pub fn label(&self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::XEquals0 => "x=0",
            Subset::XEquals1 => "x=1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub statistic: Statistic,
    pub subset: Subset,
}

impl StatisticSpec {
    pub fn all(statistic: Statistic) -> Self {
        Self {
            statistic,
            subset: Subset::All,
        }
    }
}

/// Sizes of the run a statistic or interval was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub n: usize,
    pub m: usize,
    pub j: usize,
    /// Retained paths after filtering (for intervals: of the last replicate).
    pub retained: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Number of bootstrap replicates.
    pub replicates: usize,
    pub metadata: RunMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    PassWithinBand,
    Fail,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::PassWithinBand => "pass-within-band",
            Verdict::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticResult {
    pub statistic: StatisticSpec,
    pub observed: f64,
    pub ci: ConfidenceInterval,
    pub band_halfwidth: f64,
    pub verdict: Verdict,
    pub metadata: RunMetadata,
}

/// Half-width of the acceptable-deviation band around a CI: `0.1 / n`.
pub fn acceptable_band(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("acceptable band needs n >= 1".into()));
    }
    Ok(0.1 / n as f64)
}

/// Pass inside the CI, pass-within-band inside the CI widened by `band` on
/// both sides, fail otherwise.
pub fn verdict(observed: f64, ci: &ConfidenceInterval, band: f64) -> Verdict {
    if (ci.lower..=ci.upper).contains(&observed) {
        Verdict::Pass
    } else if (ci.lower - band..=ci.upper + band).contains(&observed) {
        Verdict::PassWithinBand
    } else {
        Verdict::Fail
    }
}

/// Assemble a [`DiagnosticResult`]. The statistic and the interval must come
/// from runs with the same `n`, `m` and `J`.
pub fn run_check(
    statistic: StatisticSpec,
    observed: f64,
    metadata: RunMetadata,
    ci: &ConfidenceInterval,
    band: f64,
) -> Result<DiagnosticResult> {
    let (a, b) = (&metadata, &ci.metadata);
    if (a.n, a.m, a.j) != (b.n, b.m, b.j) {
        return Err(Error::MetadataMismatch(format!(
            "statistic from (n={}, m={}, J={}) but interval from (n={}, m={}, J={})",
            a.n, a.m, a.j, b.n, b.m, b.j
        )));
    }
    if !observed.is_finite() {
        return Err(Error::InvalidArgument(format!("observed statistic is {observed}")));
    }
    Ok(DiagnosticResult {
        statistic,
        observed,
        ci: *ci,
        band_halfwidth: band,
        verdict: verdict(observed, ci, band),
        metadata,
    })
}
