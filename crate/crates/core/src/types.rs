//! Domain types shared by every module: samples, tasks, datasets and path
//! ensembles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three task families audited by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Bernoulli,
    Gaussian,
    NaturalLanguage,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Bernoulli => "bernoulli",
            TaskKind::Gaussian => "gaussian",
            TaskKind::NaturalLanguage => "natural-language",
        })
    }
}

/// Snap a real value onto the one-decimal grid used everywhere real samples
/// are stored or rendered.
pub fn quantize(value: f64) -> f64 {
    // `+ 0.0` folds -0.0 into 0.0 so rendering never emits "-0.0".
    (value * 10.0).round() / 10.0 + 0.0
}

/// A single draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sample {
    Binary(bool),
    /// Always on the one-decimal grid; build through [`Sample::real`].
    Real(f64),
    /// (fever, diagnosis) record of the language task.
    Pair { x: bool, y: bool },
}

impl Sample {
    pub fn binary(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Sample::Binary(false)),
            1 => Ok(Sample::Binary(true)),
            other => Err(Error::InvalidArgument(format!(
                "binary sample must be 0 or 1, got {other}"
            ))),
        }
    }

    pub fn real(value: f64) -> Self {
        Sample::Real(quantize(value))
    }

    pub fn pair(x: bool, y: bool) -> Self {
        Sample::Pair { x, y }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Sample::Binary(_) => TaskKind::Bernoulli,
            Sample::Real(_) => TaskKind::Gaussian,
            Sample::Pair { .. } => TaskKind::NaturalLanguage,
        }
    }

    /// Numeric value used by the statistics. Pairs map to their outcome `y`.
    pub fn value(&self) -> f64 {
        match *self {
            Sample::Binary(b) => f64::from(u8::from(b)),
            Sample::Real(v) => v,
            Sample::Pair { y, .. } => f64::from(u8::from(y)),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Sample::Binary(b) => Some(b),
            _ => None,
        }
    }

    pub fn expect_kind(&self, kind: TaskKind) -> Result<()> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(Error::KindMismatch {
                expected: kind,
                found: self.kind(),
            })
        }
    }
}

/// Parameters of the language task: `X ~ Bern(p_x)`, `Y | X ~ Bern(base + effect * X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBernoulli {
    pub p_x: f64,
    pub base: f64,
    pub effect: f64,
}

impl Default for ConditionalBernoulli {
    fn default() -> Self {
        Self {
            p_x: 0.5,
            base: 0.3,
            effect: 0.4,
        }
    }
}

impl ConditionalBernoulli {
    pub fn p_y_given(&self, x: bool) -> f64 {
        if x {
            self.base + self.effect
        } else {
            self.base
        }
    }
}

/// A task and, when data is to be simulated, its true parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    /// `Z ~ Bern(theta)`.
    Bernoulli { theta: Option<f64> },
    /// `Z ~ N(theta, 1)`.
    Gaussian { theta: Option<f64> },
    NaturalLanguage { params: Option<ConditionalBernoulli> },
}

impl TaskSpec {
    pub fn bernoulli(theta: f64) -> Self {
        TaskSpec::Bernoulli { theta: Some(theta) }
    }

    pub fn gaussian(theta: f64) -> Self {
        TaskSpec::Gaussian { theta: Some(theta) }
    }

    pub fn natural_language() -> Self {
        TaskSpec::NaturalLanguage {
            params: Some(ConditionalBernoulli::default()),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Bernoulli { .. } => TaskKind::Bernoulli,
            TaskSpec::Gaussian { .. } => TaskKind::Gaussian,
            TaskSpec::NaturalLanguage { .. } => TaskKind::NaturalLanguage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        match *self {
            TaskSpec::Bernoulli { theta: Some(t) } if !in_unit(t) => Err(Error::InvalidArgument(
                format!("bernoulli theta must lie in [0,1], got {t}"),
            )),
            TaskSpec::Gaussian { theta: Some(t) } if !t.is_finite() => Err(
                Error::InvalidArgument(format!("gaussian theta must be finite, got {t}")),
            ),
            TaskSpec::NaturalLanguage { params: Some(p) } => {
                if in_unit(p.p_x) && in_unit(p.p_y_given(false)) && in_unit(p.p_y_given(true)) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "language task parameters give probabilities outside [0,1]: {p:?}"
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

/// The ordered in-context dataset `z_1..z_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedDataset {
    task: TaskSpec,
    samples: Vec<Sample>,
    generation_seed: Option<u64>,
}

impl ObservedDataset {
    pub fn new(task: TaskSpec, samples: Vec<Sample>, generation_seed: Option<u64>) -> Result<Self> {
        task.validate()?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument("observed dataset must hold at least one sample".into()));
        }
        for s in &samples {
            s.expect_kind(task.kind())?;
        }
        Ok(Self {
            task,
            samples,
            generation_seed,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn generation_seed(&self) -> Option<u64> {
        self.generation_seed
    }

    /// Reorder the samples; `order[i]` is the index of the sample placed at `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.n())?;
        Ok(Self {
            task: self.task,
            samples: order.iter().map(|&i| self.samples[i]).collect(),
            generation_seed: self.generation_seed,
        })
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has length {} but dataset has {n} samples",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("not a permutation of 0..{n}: {order:?}")));
        }
    }
    Ok(())
}

/// One autoregressive continuation `z_{n+1}..z_{n+m}`.
///
/// `permutation` is 0-based: entry `i` names the observed sample that sat at
/// position `i` of the context when the path was generated. The path was drawn
/// from `RngStream::new(ensemble_seed, path_seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub values: Vec<Sample>,
    pub path_seed: u64,
    pub permutation: Vec<usize>,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numeric(&self) -> Vec<f64> {
        self.values.iter().map(Sample::value).collect()
    }
}

/// A path that could not be generated; recorded so reports can surface the
/// shortfall against the nominal `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedPath {
    pub path_seed: u64,
    pub reason: String,
}

/// A set of sample paths plus the outlier-filter mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub kind: TaskKind,
    /// Nominal path length. Sub-ensembles produced by the per-X split hold
    /// paths shorter than this.
    pub m: usize,
    pub paths: Vec<SamplePath>,
    pub retained: Vec<bool>,
    pub ensemble_seed: u64,
    pub nominal_j: usize,
    pub failed: Vec<FailedPath>,
    /// Set on sub-ensembles whose paths have individual lengths.
    #[serde(default)]
    pub variable_length: bool,
}

impl PathEnsemble {
    /// Build an ensemble with every path retained.
    pub fn new(kind: TaskKind, m: usize, paths: Vec<SamplePath>, ensemble_seed: u64) -> Result<Self> {
        for p in &paths {
            if p.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "path {} has length {} but the ensemble length is {m}",
                    p.path_seed,
                    p.len()
                )));
            }
            for s in &p.values {
                s.expect_kind(kind)?;
            }
        }
        let j = paths.len();
        Ok(Self {
            kind,
            m,
            retained: vec![true; j],
            paths,
            ensemble_seed,
            nominal_j: j,
            failed: Vec::new(),
            variable_length: false,
        })
    }

    pub fn retained_paths(&self) -> impl Iterator<Item = &SamplePath> {
        self.paths
            .iter()
            .zip(&self.retained)
            .filter_map(|(p, &keep)| keep.then_some(p))
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().filter(|&&k| k).count()
    }
}
