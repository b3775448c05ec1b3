//! Sequential predictive models.
//!
//! The free functions compute one-step posterior predictives in closed form
//! from a context. [`SyntheticModel`] wraps them as a
//! [`SequentialPredictiveModel`] that generates whole paths, carrying
//! sufficient statistics forward instead of recounting the context at every
//! step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PathGenerationError, Result};
use crate::rng::RngStream;
use crate::types::{Sample, TaskKind};

/// One-step predictive `p(Z_{n+1} | Z_{1:n})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictiveDistribution {
    Bernoulli { p1: f64 },
    Gaussian { mean: f64, variance: f64 },
    Pair { p_x1: f64, p_y1_given_x0: f64, p_y1_given_x1: f64 },
}

impl PredictiveDistribution {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} = {p} is not a probability")))
            }
        };
        match *self {
            PredictiveDistribution::Bernoulli { p1 } => prob(p1, "p1"),
            PredictiveDistribution::Gaussian { mean, variance } => {
                if mean.is_finite() && variance > 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "gaussian predictive needs finite mean and positive variance, got ({mean}, {variance})"
                    )))
                }
            }
            PredictiveDistribution::Pair {
                p_x1,
                p_y1_given_x0,
                p_y1_given_x1,
            } => {
                prob(p_x1, "p_x1")?;
                prob(p_y1_given_x0, "p_y1_given_x0")?;
                prob(p_y1_given_x1, "p_y1_given_x1")
            }
        }
    }

    /// Mean of the numeric sample value (`y` for pairs).
    pub fn mean_value(&self) -> f64 {
        match *self {
            PredictiveDistribution::Bernoulli { p1 } => p1,
            PredictiveDistribution::Gaussian { mean, .. } => mean,
            PredictiveDistribution::Pair {
                p_x1,
                p_y1_given_x0,
                p_y1_given_x1,
            } => p_x1 * p_y1_given_x1 + (1.0 - p_x1) * p_y1_given_x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(Self { a, b })
        } else {
            Err(Error::InvalidArgument(format!(
                "beta parameters must be positive and finite, got ({a}, {b})"
            )))
        }
    }

    /// The flat `Beta(1, 1)` prior.
    pub fn uniform() -> Self {
        Self { a: 1.0, b: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.a, self.b).map(|_| ())
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Normal prior on the mean of a unit-variance Gaussian likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPriorParams {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPriorParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if mean.is_finite() && variance > 0.0 && variance.is_finite() {
            Ok(Self { mean, variance })
        } else {
            Err(Error::InvalidArgument(format!(
                "gaussian prior needs finite mean and positive variance, got ({mean}, {variance})"
            )))
        }
    }

    /// The weakly informative `N(0, 100)` prior.
    pub fn flat() -> Self {
        Self {
            mean: 0.0,
            variance: 100.0,
        }
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.mean, self.variance).map(|_| ())
    }
}

impl Default for GaussianPriorParams {
    fn default() -> Self {
        Self::flat()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftDirection {
    Up,
    Down,
}

impl DriftDirection {
    fn sign(self) -> f64 {
        match self {
            DriftDirection::Up => 1.0,
            DriftDirection::Down => -1.0,
        }
    }
}

/// Per-generated-step shift of the predictive mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub delta: f64,
    pub direction: DriftDirection,
}

impl DriftSpec {
    pub fn new(delta: f64, direction: DriftDirection) -> Result<Self> {
        if delta.abs() < 1.0 {
            Ok(Self { delta, direction })
        } else {
            Err(Error::InvalidArgument(format!("drift must satisfy |delta| < 1, got {delta}")))
        }
    }

    pub fn up(delta: f64) -> Result<Self> {
        Self::new(delta, DriftDirection::Up)
    }
}

/// `(n, number of ones)` of a binary context.
fn binary_counts(context: &[Sample]) -> Result<(u64, u64)> {
    let mut ones = 0;
    for s in context {
        match s {
            Sample::Binary(b) => ones += u64::from(*b),
            other => {
                return Err(Error::KindMismatch {
                    expected: TaskKind::Bernoulli,
                    found: other.kind(),
                })
            }
        }
    }
    Ok((context.len() as u64, ones))
}

/// Beta-Bernoulli posterior predictive: `p1 = (a + s) / (a + b + n)`.
pub fn beta_bernoulli_predictive(prior: &BetaParams, context: &[Sample]) -> Result<PredictiveDistribution> {
    prior.validate()?;
    let (n, s) = binary_counts(context)?;
    Ok(PredictiveDistribution::Bernoulli {
        p1: (prior.a + s as f64) / (prior.a + prior.b + n as f64),
    })
}

/// Sum of one-decimal reals, computed on the integer grid so the result does
/// not depend on summation order.
fn real_sum(context: &[Sample]) -> Result<f64> {
    let mut tenths: i64 = 0;
    for s in context {
        match s {
            Sample::Real(v) => tenths += (v * 10.0).round() as i64,
            other => {
                return Err(Error::KindMismatch {
                    expected: TaskKind::Gaussian,
                    found: other.kind(),
                })
            }
        }
    }
    Ok(tenths as f64 / 10.0)
}

/// Normal-normal posterior predictive for a unit-variance likelihood.
pub fn gaussian_predictive(prior: &GaussianPriorParams, context: &[Sample]) -> Result<PredictiveDistribution> {
    prior.validate()?;
    let sum = real_sum(context)?;
    let precision = 1.0 / prior.variance + context.len() as f64;
    let mean = (prior.mean / prior.variance + sum) / precision;
    Ok(PredictiveDistribution::Gaussian {
        mean,
        variance: 1.0 + 1.0 / precision,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("fractional power must lie in (0, 1], got {alpha}")))
    }
}

/// Predictive of the alpha-fractional posterior (likelihood raised to
/// `alpha`): `p1 = (a + alpha s) / (a + b + alpha n)`.
pub fn fractional_bernoulli_predictive(
    prior: &BetaParams,
    alpha: f64,
    context: &[Sample],
) -> Result<PredictiveDistribution> {
    prior.validate()?;
    check_alpha(alpha)?;
    let (n, s) = binary_counts(context)?;
    Ok(PredictiveDistribution::Bernoulli {
        p1: (prior.a + alpha * s as f64) / (prior.a + prior.b + alpha * n as f64),
    })
}

/// Beta-Bernoulli predictive on `context` shifted by `delta` per generated
/// sample and clamped to `[0, 1]`.
pub fn drift_predictive(
    base_prior: &BetaParams,
    drift: &DriftSpec,
    context: &[Sample],
    generated_count: usize,
) -> Result<PredictiveDistribution> {
    let PredictiveDistribution::Bernoulli { p1 } = beta_bernoulli_predictive(base_prior, context)? else {
        unreachable!("beta-bernoulli predictive is always Bernoulli");
    };
    let shifted = p1 + drift.direction.sign() * drift.delta * generated_count as f64;
    Ok(PredictiveDistribution::Bernoulli {
        p1: shifted.clamp(0.0, 1.0),
    })
}

/// Reference model of the language task: independent Beta-Bernoulli models
/// for the `x` marginal and for `y` within each `x` stratum.
pub fn nl_reference_predictive(
    prior_x: &BetaParams,
    prior_y0: &BetaParams,
    prior_y1: &BetaParams,
    context: &[Sample],
) -> Result<PredictiveDistribution> {
    let mut counts = PairCounts::new(prior_x, prior_y0, prior_y1)?;
    for s in context {
        counts.push(s)?;
    }
    Ok(counts.predictive())
}

/// Draw one sample. Real draws are quantized to one decimal.
pub fn sample_from(pred: &PredictiveDistribution, rng: &mut RngStream) -> Sample {
    match *pred {
        PredictiveDistribution::Bernoulli { p1 } => Sample::Binary(rng.bernoulli(p1)),
        PredictiveDistribution::Gaussian { mean, variance } => {
            let z: f64 = rng.sample(StandardNormal);
            Sample::real(mean + variance.sqrt() * z)
        }
        PredictiveDistribution::Pair {
            p_x1,
            p_y1_given_x0,
            p_y1_given_x1,
        } => {
            let x = rng.bernoulli(p_x1);
            let y = rng.bernoulli(if x { p_y1_given_x1 } else { p_y1_given_x0 });
            Sample::Pair { x, y }
        }
    }
}

/// Anything that can continue an observed context with `m` samples.
///
/// The local conjugate models implement this by repeated one-step sampling;
/// the remote LLM adapter implements it with completion or chat requests.
pub trait SequentialPredictiveModel: Send + Sync {
    fn task_kind(&self) -> TaskKind;

    /// Short identifier used in reports.
    fn label(&self) -> String;

    fn sample_path(
        &self,
        context: &[Sample],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Sample>, PathGenerationError>;
}

/// Locally simulated models: the exact conjugate references, the fractional
/// posterior and the drifting negative control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticModel {
    BetaBernoulli {
        prior: BetaParams,
    },
    Gaussian {
        prior: GaussianPriorParams,
    },
    /// Tempered posterior on the observed data. Generated samples are draws
    /// from its posterior predictive, so they update at full weight.
    Fractional {
        prior: BetaParams,
        alpha: f64,
    },
    Drift {
        prior: BetaParams,
        drift: DriftSpec,
    },
    NaturalLanguage {
        prior_x: BetaParams,
        prior_y0: BetaParams,
        prior_y1: BetaParams,
    },
}

impl SyntheticModel {
    /// Exact Bayesian reference with the default flat priors.
    pub fn reference(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Bernoulli => SyntheticModel::BetaBernoulli {
                prior: BetaParams::uniform(),
            },
            TaskKind::Gaussian => SyntheticModel::Gaussian {
                prior: GaussianPriorParams::flat(),
            },
            TaskKind::NaturalLanguage => SyntheticModel::NaturalLanguage {
                prior_x: BetaParams::uniform(),
                prior_y0: BetaParams::uniform(),
                prior_y1: BetaParams::uniform(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SyntheticModel::BetaBernoulli { prior } => prior.validate(),
            SyntheticModel::Gaussian { prior } => prior.validate(),
            SyntheticModel::Fractional { prior, alpha } => {
                prior.validate()?;
                check_alpha(*alpha)
            }
            SyntheticModel::Drift { prior, drift } => {
                prior.validate()?;
                DriftSpec::new(drift.delta, drift.direction).map(|_| ())
            }
            SyntheticModel::NaturalLanguage {
                prior_x,
                prior_y0,
                prior_y1,
            } => {
                prior_x.validate()?;
                prior_y0.validate()?;
                prior_y1.validate()
            }
        }
    }

    /// True for the exchangeable Bayesian references usable as a CI baseline.
    pub fn is_exact_reference(&self) -> bool {
        matches!(
            self,
            SyntheticModel::BetaBernoulli { .. }
                | SyntheticModel::Gaussian { .. }
                | SyntheticModel::NaturalLanguage { .. }
        )
    }

    /// Predictive for the next sample after `observed` followed by `generated`.
    pub fn predictive(&self, observed: &[Sample], generated: &[Sample]) -> Result<PredictiveDistribution> {
        let joined = || -> Vec<Sample> { observed.iter().chain(generated).copied().collect() };
        match self {
            SyntheticModel::BetaBernoulli { prior } => beta_bernoulli_predictive(prior, &joined()),
            SyntheticModel::Gaussian { prior } => gaussian_predictive(prior, &joined()),
            SyntheticModel::Fractional { prior, alpha } => {
                check_alpha(*alpha)?;
                let (n, s) = binary_counts(observed)?;
                let (g, sg) = binary_counts(generated)?;
                let a = prior.a + alpha * s as f64 + sg as f64;
                let b = prior.b + alpha * (n - s) as f64 + (g - sg) as f64;
                Ok(PredictiveDistribution::Bernoulli { p1: a / (a + b) })
            }
            SyntheticModel::Drift { prior, drift } => drift_predictive(prior, drift, &joined(), generated.len()),
            SyntheticModel::NaturalLanguage {
                prior_x,
                prior_y0,
                prior_y1,
            } => nl_reference_predictive(prior_x, prior_y0, prior_y1, &joined()),
        }
    }

    fn start(&self, context: &[Sample]) -> Result<PathState> {
        self.validate()?;
        Ok(match self {
            SyntheticModel::BetaBernoulli { prior } => PathState::Beta(BetaCounts::observe(*prior, 1.0, context)?),
            SyntheticModel::Fractional { prior, alpha } => {
                PathState::Beta(BetaCounts::observe(*prior, *alpha, context)?)
            }
            SyntheticModel::Drift { prior, drift } => PathState::Drift {
                counts: BetaCounts::observe(*prior, 1.0, context)?,
                drift: *drift,
                generated: 0,
            },
            SyntheticModel::Gaussian { prior } => {
                let precision = 1.0 / prior.variance + context.len() as f64;
                PathState::Gaussian {
                    precision,
                    weighted_sum: prior.mean / prior.variance + real_sum(context)?,
                }
            }
            SyntheticModel::NaturalLanguage {
                prior_x,
                prior_y0,
                prior_y1,
            } => {
                let mut counts = PairCounts::new(prior_x, prior_y0, prior_y1)?;
                for s in context {
                    counts.push(s)?;
                }
                PathState::Pair(counts)
            }
        })
    }
}

impl SequentialPredictiveModel for SyntheticModel {
    fn task_kind(&self) -> TaskKind {
        match self {
            SyntheticModel::Gaussian { .. } => TaskKind::Gaussian,
            SyntheticModel::NaturalLanguage { .. } => TaskKind::NaturalLanguage,
            _ => TaskKind::Bernoulli,
        }
    }

    fn label(&self) -> String {
        match self {
            SyntheticModel::BetaBernoulli { prior } => format!("beta-bernoulli(a={},b={})", prior.a, prior.b),
            SyntheticModel::Gaussian { prior } => {
                format!("normal-normal(mean={},var={})", prior.mean, prior.variance)
            }
            SyntheticModel::Fractional { alpha, .. } => format!("fractional(alpha={alpha})"),
            SyntheticModel::Drift { drift, .. } => format!("drift(delta={})", drift.direction.sign() * drift.delta),
            SyntheticModel::NaturalLanguage { .. } => "nl-reference".to_string(),
        }
    }

    fn sample_path(
        &self,
        context: &[Sample],
        m: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<Sample>, PathGenerationError> {
        let mut state = self.start(context).map_err(|e| PathGenerationError::new(e.to_string()))?;
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            let s = sample_from(&state.predictive(), rng);
            state.push(&s);
            out.push(s);
        }
        Ok(out)
    }
}

/// Effective Beta hyperparameters after conditioning.
#[derive(Debug, Clone, Copy)]
struct BetaCounts {
    a: f64,
    b: f64,
}

impl BetaCounts {
    fn observe(prior: BetaParams, weight: f64, context: &[Sample]) -> Result<Self> {
        let (n, s) = binary_counts(context)?;
        Ok(Self {
            a: prior.a + weight * s as f64,
            b: prior.b + weight * (n - s) as f64,
        })
    }

    fn p1(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    fn push(&mut self, one: bool) {
        if one {
            self.a += 1.0;
        } else {
            self.b += 1.0;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PairCounts {
    x: BetaCounts,
    y0: BetaCounts,
    y1: BetaCounts,
}

impl PairCounts {
    fn new(prior_x: &BetaParams, prior_y0: &BetaParams, prior_y1: &BetaParams) -> Result<Self> {
        prior_x.validate()?;
        prior_y0.validate()?;
        prior_y1.validate()?;
        let c = |p: &BetaParams| BetaCounts { a: p.a, b: p.b };
        Ok(Self {
            x: c(prior_x),
            y0: c(prior_y0),
            y1: c(prior_y1),
        })
    }

    fn push(&mut self, s: &Sample) -> Result<()> {
        let Sample::Pair { x, y } = *s else {
            return Err(Error::KindMismatch {
                expected: TaskKind::NaturalLanguage,
                found: s.kind(),
            });
        };
        self.x.push(x);
        if x {
            self.y1.push(y);
        } else {
            self.y0.push(y);
        }
        Ok(())
    }

    fn predictive(&self) -> PredictiveDistribution {
        PredictiveDistribution::Pair {
            p_x1: self.x.p1(),
            p_y1_given_x0: self.y0.p1(),
            p_y1_given_x1: self.y1.p1(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PathState {
    Beta(BetaCounts),
    Drift {
        counts: BetaCounts,
        drift: DriftSpec,
        generated: usize,
    },
    Gaussian {
        precision: f64,
        weighted_sum: f64,
    },
    Pair(PairCounts),
}

impl PathState {
    fn predictive(&self) -> PredictiveDistribution {
        match *self {
            PathState::Beta(c) => PredictiveDistribution::Bernoulli { p1: c.p1() },
            PathState::Drift {
                counts,
                drift,
                generated,
            } => PredictiveDistribution::Bernoulli {
                p1: (counts.p1() + drift.direction.sign() * drift.delta * generated as f64).clamp(0.0, 1.0),
            },
            PathState::Gaussian {
                precision,
                weighted_sum,
            } => PredictiveDistribution::Gaussian {
                mean: weighted_sum / precision,
                variance: 1.0 + 1.0 / precision,
            },
            PathState::Pair(c) => c.predictive(),
        }
    }

    // Samples come from `predictive()` of the same state, so kinds always match.
    fn push(&mut self, s: &Sample) {
        match (self, s) {
            (PathState::Beta(c), Sample::Binary(b)) => c.push(*b),
            (
                PathState::Drift {
                    counts, generated, ..
                },
                Sample::Binary(b),
            ) => {
                counts.push(*b);
                *generated += 1;
            }
            (
                PathState::Gaussian {
                    precision,
                    weighted_sum,
                },
                Sample::Real(v),
            ) => {
                *precision += 1.0;
                *weighted_sum += v;
            }
            (PathState::Pair(c), s) => {
                let _ = c.push(s);
            }
            (state, s) => unreachable!("sample {s:?} does not match path state {state:?}"),
        }
    }
}
