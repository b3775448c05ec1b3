//! Experiment configuration: TOML schema, presets and validation.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use mprobe::diagnostics::{ConjugatePrior, MRule, Statistic, StatisticSpec, Subset, TestFunction};
use mprobe::llm_client::EndpointConfig;
use mprobe::models::{BetaParams, DriftDirection, DriftSpec, SyntheticModel};
use mprobe::prompts::PromptTemplate;
use mprobe::sampler::Ordering;
use mprobe::{TaskKind, TaskSpec};
use serde::{Deserialize, Serialize};

pub const PRESETS: [&str; 4] = ["bernoulli-paper", "gaussian-paper", "nl-paper", "nl-appendix"];

/// Path length: a literal or a rule in `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MSetting {
    Literal(usize),
    Rule(RuleName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleName {
    #[serde(rename = "n/2")]
    HalfN,
    #[serde(rename = "2n")]
    TwoN,
}

impl MSetting {
    /// Rules round down to an even length so `T1` can halve every path.
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            MSetting::Literal(m) => m,
            MSetting::Rule(RuleName::HalfN) => (n / 2) & !1,
            MSetting::Rule(RuleName::TwoN) => 2 * n,
        }
    }

    pub fn as_rule(&self) -> MRule {
        match *self {
            MSetting::Literal(m) => MRule::Literal(m),
            MSetting::Rule(RuleName::HalfN) => MRule::HalfN,
            MSetting::Rule(RuleName::TwoN) => MRule::TwoN,
        }
    }
}

/// The model whose paths are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// The exact conjugate model with flat priors.
    Reference,
    /// Bernoulli posterior with the observed likelihood tempered by `alpha`.
    Fractional { alpha: f64 },
    /// Beta-Bernoulli whose predictive mean moves by `delta` per generated step.
    Drift {
        delta: f64,
        #[serde(default = "drift_up")]
        direction: DriftDirection,
    },
    Remote {
        endpoint: EndpointConfig,
        #[serde(default)]
        template: Option<PromptTemplate>,
    },
}

fn drift_up() -> DriftDirection {
    DriftDirection::Up
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Reference
    }
}

impl ModelSpec {
    /// Parse the `--model` flag: `reference`, `fractional:<alpha>`,
    /// `drift:<delta>` or `remote`.
    pub fn from_flag(flag: &str, current: &ModelSpec) -> Result<Self> {
        let (name, arg) = match flag.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (flag, None),
        };
        let number = |what: &str| -> Result<f64> {
            arg.with_context(|| format!("--model {name} needs a value, e.g. {name}:{what}"))?
                .parse()
                .with_context(|| format!("bad number in --model {flag}"))
        };
        Ok(match name {
            "reference" => ModelSpec::Reference,
            "fractional" => ModelSpec::Fractional { alpha: number("0.5")? },
            "drift" => ModelSpec::Drift {
                delta: number("0.005")?,
                direction: DriftDirection::Up,
            },
            "remote" => match current {
                ModelSpec::Remote { .. } => current.clone(),
                _ => ModelSpec::Remote {
                    endpoint: EndpointConfig::default(),
                    template: None,
                },
            },
            other => bail!("unknown model {other:?}; expected reference, fractional:<alpha>, drift:<delta> or remote"),
        })
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Reference => "reference".into(),
            ModelSpec::Fractional { alpha } => format!("fractional({alpha})"),
            ModelSpec::Drift { delta, direction } => match direction {
                DriftDirection::Up => format!("drift({delta})"),
                DriftDirection::Down => format!("drift(-{delta})"),
            },
            ModelSpec::Remote { endpoint, .. } => format!("remote({})", endpoint.model_name),
        }
    }

    /// The local model, or `None` for a remote one.
    pub fn synthetic(&self, kind: TaskKind) -> Result<Option<SyntheticModel>> {
        let bernoulli_only = |what: &str| -> Result<()> {
            ensure!(kind == TaskKind::Bernoulli, "the {what} model is only defined for the bernoulli task");
            Ok(())
        };
        let model = match self {
            ModelSpec::Reference => SyntheticModel::reference(kind),
            ModelSpec::Fractional { alpha } => {
                bernoulli_only("fractional")?;
                SyntheticModel::Fractional {
                    prior: BetaParams::uniform(),
                    alpha: *alpha,
                }
            }
            ModelSpec::Drift { delta, direction } => {
                bernoulli_only("drift")?;
                SyntheticModel::Drift {
                    prior: BetaParams::uniform(),
                    drift: DriftSpec::new(*delta, *direction)?,
                }
            }
            ModelSpec::Remote { .. } => return Ok(None),
        };
        model.validate()?;
        Ok(Some(model))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsConfig {
    /// Test functions for `T1`; empty disables it.
    pub t1: Option<Vec<TestFunction>>,
    /// Lags for `T2`; empty disables it.
    pub t2: Option<Vec<usize>>,
    #[serde(default)]
    pub t3: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_scaling_m")]
    pub m: MSetting,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Paths per run; defaults to the top-level `j`.
    pub j: Option<usize>,
    /// Fractional reference curves. Defaults to {0.5, 0.25} on the bernoulli
    /// task and none elsewhere.
    pub alphas: Option<Vec<f64>>,
}

fn default_grid() -> Vec<usize> {
    vec![20, 50, 100, 200, 400]
}

fn default_scaling_m() -> MSetting {
    MSetting::Rule(RuleName::HalfN)
}

fn default_runs() -> usize {
    9
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            n_grid: default_grid(),
            m: default_scaling_m(),
            runs: default_runs(),
            j: None,
            alphas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fact3Config {
    #[serde(default = "default_fact3_prior")]
    pub prior: ConjugatePrior,
    #[serde(default = "default_fact3_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_num_mc")]
    pub num_mc: usize,
}

fn default_fact3_prior() -> ConjugatePrior {
    ConjugatePrior::Beta(BetaParams::uniform())
}

fn default_fact3_n() -> Vec<usize> {
    vec![0, 5, 20]
}

fn default_num_mc() -> usize {
    100_000
}

impl Default for Fact3Config {
    fn default() -> Self {
        Self {
            prior: default_fact3_prior(),
            n: default_fact3_n(),
            num_mc: default_num_mc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub n: usize,
    pub m: MSetting,
    #[serde(default = "default_j")]
    pub j: usize,
    /// Bootstrap replicates `K`.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub statistics: StatisticsConfig,
    #[serde(default = "default_ordering")]
    pub ordering: Ordering,
    #[serde(default)]
    pub model: ModelSpec,
    /// Model the bootstrap intervals are drawn from; the exact reference for
    /// the task when absent.
    pub reference: Option<SyntheticModel>,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Observed data to load instead of simulating it.
    pub dataset_file: Option<PathBuf>,
    /// Transcript cache for remote models; `<out_dir>/transcript.jsonl` when absent.
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub fact3: Fact3Config,
}

fn default_j() -> usize {
    200
}

fn default_k() -> usize {
    300
}

fn default_level() -> f64 {
    0.95
}

fn default_ordering() -> Ordering {
    Ordering::PermutePerPath
}

impl ExperimentConfig {
    fn base(task: TaskSpec, n: usize) -> Self {
        Self {
            task,
            n,
            m: MSetting::Rule(RuleName::HalfN),
            j: default_j(),
            k: default_k(),
            level: default_level(),
            statistics: StatisticsConfig::default(),
            ordering: default_ordering(),
            model: ModelSpec::Reference,
            reference: None,
            seed: 0,
            out_dir: None,
            dataset_file: None,
            transcript: None,
            scaling: ScalingConfig::default(),
            fact3: Fact3Config::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = match name {
            "bernoulli-paper" => Self::base(TaskSpec::bernoulli(0.5), 50),
            "gaussian-paper" => Self::base(TaskSpec::gaussian(-1.0), 100),
            "nl-paper" => Self {
                j: 80,
                ..Self::base(TaskSpec::natural_language(), 80)
            },
            "nl-appendix" => Self {
                j: 80,
                ..Self::base(TaskSpec::natural_language(), 100)
            },
            other => bail!("unknown preset {other:?}; available: {}", PRESETS.join(", ")),
        };
        cfg.out_dir = Some(PathBuf::from("runs").join(name));
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid experiment config")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    pub fn kind(&self) -> TaskKind {
        self.task.kind()
    }

    pub fn resolved_m(&self) -> usize {
        self.m.resolve(self.n)
    }

    pub fn reference_model(&self) -> SyntheticModel {
        self.reference.unwrap_or_else(|| SyntheticModel::reference(self.kind()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(self.kind().to_string()))
    }

    /// Fill every defaulted field with its concrete value so the config
    /// written next to a report is complete.
    pub fn resolve(mut self) -> Result<Self> {
        let kind = self.kind();
        let stats = &mut self.statistics;
        if stats.t1.is_none() {
            stats.t1 = Some(match kind {
                TaskKind::Gaussian => vec![TestFunction::Identity, TestFunction::Square],
                _ => vec![TestFunction::Identity],
            });
        }
        if stats.t2.is_none() {
            stats.t2 = Some(vec![2, 3, 4, 5]);
        }
        if self.reference.is_none() {
            self.reference = Some(SyntheticModel::reference(kind));
        }
        if self.scaling.j.is_none() {
            self.scaling.j = Some(self.j);
        }
        if self.scaling.alphas.is_none() {
            self.scaling.alphas = Some(if kind == TaskKind::Bernoulli { vec![0.5, 0.25] } else { vec![] });
        }
        if self.out_dir.is_none() {
            self.out_dir = Some(self.out_dir());
        }
        self.validate()?;
        Ok(self)
    }

    /// Statistic specs in report order. The language task is checked on each
    /// side of the split by `x`.
    pub fn statistic_specs(&self) -> Vec<StatisticSpec> {
        let mut stats: Vec<Statistic> = Vec::new();
        for g in self.statistics.t1.iter().flatten() {
            stats.push(Statistic::T1 { g: *g });
        }
        for k in self.statistics.t2.iter().flatten() {
            stats.push(Statistic::T2 { k: *k });
        }
        let subsets: &[Subset] = if self.kind() == TaskKind::NaturalLanguage {
            &[Subset::XEquals0, Subset::XEquals1]
        } else {
            &[Subset::All]
        };
        subsets
            .iter()
            .flat_map(|&subset| stats.iter().map(move |&statistic| StatisticSpec { statistic, subset }))
            .collect()
    }

    pub fn wants_t1(&self) -> bool {
        self.statistics.t1.as_ref().map_or(true, |g| !g.is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        ensure!(self.n >= 1, "n must be at least 1");
        let m = self.resolved_m();
        ensure!(m >= 1, "m resolves to {m} for n = {}; need at least 1", self.n);
        if self.wants_t1() {
            ensure!(m % 2 == 0, "T1 needs an even path length, but m = {m}");
        }
        ensure!(self.j >= 4, "J must be at least 4 for the outlier filter and T3, got {}", self.j);
        ensure!(
            self.k >= mprobe::diagnostics::MIN_REPLICATES,
            "K must be at least {} bootstrap replicates, got {}",
            mprobe::diagnostics::MIN_REPLICATES,
            self.k
        );
        ensure!(self.level > 0.0 && self.level < 1.0, "confidence level must lie in (0, 1), got {}", self.level);
        for &k in self.statistics.t2.iter().flatten() {
            ensure!(k >= 2, "T2 lag k must be at least 2, got {k}");
            ensure!(k + 2 <= m, "T2 lag k = {k} needs m >= {}, got m = {m}", k + 2);
        }
        self.model.synthetic(self.kind())?;
        if let ModelSpec::Remote { endpoint, template } = &self.model {
            endpoint.validate()?;
            if let Some(t) = template {
                t.validate()?;
            }
        }
        let reference = self.reference_model();
        reference.validate()?;
        if !reference.is_exact_reference() {
            log::warn!("bootstrap reference {reference:?} is not an exchangeable model");
        }
        let s = &self.scaling;
        ensure!(s.runs >= 1, "scaling needs at least one run");
        ensure!(s.j.unwrap_or(self.j) >= 4, "scaling J must be at least 4");
        for &alpha in s.alphas.iter().flatten() {
            ensure!(self.kind() == TaskKind::Bernoulli, "fractional scaling curves need the bernoulli task");
            ensure!(alpha > 0.0 && alpha <= 1.0, "fractional alpha must lie in (0, 1], got {alpha}");
        }
        ensure!(self.fact3.num_mc >= 2, "fact3 num_mc must be at least 2, got {}", self.fact3.num_mc);
        Ok(())
    }

    /// Scaling-specific checks, run only by `check-scaling`.
    pub fn validate_scaling(&self) -> Result<()> {
        let grid = &self.scaling.n_grid;
        ensure!(grid.len() >= 3, "scaling grid needs at least 3 values of n, got {}", grid.len());
        ensure!(
            grid[0] >= 1 && grid.windows(2).all(|w| w[0] < w[1]),
            "scaling grid must be positive and strictly increasing: {grid:?}"
        );
        for &n in grid {
            ensure!(self.scaling.m.as_rule().resolve(n) >= 1, "scaling m is 0 at n = {n}");
        }
        Ok(())
    }
}
