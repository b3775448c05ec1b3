//! Experiment orchestration. Everything here is pure given the config and
//! the model; file output lives in [`crate::report`].

use std::path::Path;
use std::time::Duration;

use anyhow::{ensure, Context, Result};
use mprobe::data_gen::generate_dataset;
use mprobe::diagnostics::{
    acceptable_band, bootstrap_cis, evaluate_statistics, fact3_check, run_check, scaling_experiment, t3,
    ConjugatePrior, DiagnosticResult, Fact3Outcome, Family, RunMetadata, ScalingPoint, StatisticSpec, Verdict,
};
use mprobe::llm_client::{estimate_cost, CostEstimate, LlmClient, RemoteModel, TranscriptCache, UreqTransport};
use mprobe::models::{BetaParams, SequentialPredictiveModel, SyntheticModel};
use mprobe::numeric::{loglog_slope, quantile};
use mprobe::prompts::PromptTemplate;
use mprobe::rng::{derive_seed, tags, RngStream};
use mprobe::sampler::{filter_outlier_paths, generate_ensemble, SamplingProtocol};
use mprobe::{io, ObservedDataset, PathEnsemble};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelSpec};

/// Build the model under test. Remote models share one transcript file.
pub fn build_model(cfg: &ExperimentConfig, transcript: &Path) -> Result<Box<dyn SequentialPredictiveModel>> {
    if let Some(model) = cfg.model.synthetic(cfg.kind())? {
        return Ok(Box::new(model));
    }
    let ModelSpec::Remote { endpoint, template } = &cfg.model else {
        unreachable!("non-remote models are synthetic");
    };
    if let Some(dir) = transcript.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let cache = TranscriptCache::open(transcript)?;
    let transport = UreqTransport::new(Duration::from_secs_f64(endpoint.request_timeout_secs));
    let template = template.clone().unwrap_or_else(|| PromptTemplate::default_for(cfg.kind()));
    let client = LlmClient::new(endpoint.clone(), Box::new(transport), cache, template, cfg.kind())?;
    Ok(Box::new(RemoteModel::new(client)))
}

/// Request and token estimate for `paths` remote paths of length `m` after
/// `n` observations.
pub fn remote_estimate(cfg: &ExperimentConfig, runs: &[(usize, usize, usize)]) -> Option<CostEstimate> {
    let ModelSpec::Remote { endpoint, template } = &cfg.model else {
        return None;
    };
    let template = template.clone().unwrap_or_else(|| PromptTemplate::default_for(cfg.kind()));
    let mut total = CostEstimate {
        requests: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
    };
    for &(n, m, paths) in runs {
        let e = estimate_cost(endpoint, &template, cfg.kind(), n, m, paths);
        total.requests += e.requests;
        total.prompt_tokens += e.prompt_tokens;
        total.completion_tokens += e.completion_tokens;
    }
    Some(total)
}

pub fn dataset_for(cfg: &ExperimentConfig, seed: u64) -> Result<ObservedDataset> {
    if let Some(path) = &cfg.dataset_file {
        let data = io::read_dataset(path, Some(cfg.task)).with_context(|| format!("loading {}", path.display()))?;
        ensure!(
            data.n() == cfg.n,
            "{} holds {} samples but the config sets n = {}",
            path.display(),
            data.n(),
            cfg.n
        );
        return Ok(data);
    }
    let mut rng = RngStream::new(derive_seed(seed, tags::DATASET, 0), 0);
    Ok(generate_dataset(&cfg.task, cfg.n, &mut rng)?)
}

pub struct MartingaleOutcome {
    pub dataset: ObservedDataset,
    /// Every generated path; `retained` marks the survivors of the filter.
    pub ensemble: PathEnsemble,
    pub results: Vec<DiagnosticResult>,
    /// `T3` of the unfiltered ensemble, when requested.
    pub t3: Option<f64>,
}

impl MartingaleOutcome {
    pub fn any_fail(&self) -> bool {
        self.results.iter().any(|r| r.verdict == Verdict::Fail)
    }
}

/// Generate, filter, score and compare against bootstrap intervals from the
/// reference model. `seed` stands in for `cfg.seed`.
pub fn check_martingale(
    cfg: &ExperimentConfig,
    model: &dyn SequentialPredictiveModel,
    seed: u64,
) -> Result<MartingaleOutcome> {
    let dataset = dataset_for(cfg, seed)?;
    let protocol = SamplingProtocol {
        ordering: cfg.ordering,
        j: cfg.j,
        m: cfg.resolved_m(),
        ensemble_seed: derive_seed(seed, tags::ENSEMBLE, 0),
    };
    let raw = generate_ensemble(model, &protocol, &dataset)?;
    let t3 = if cfg.statistics.t3 {
        Some(t3(&raw, Family::for_kind(cfg.kind())?)?)
    } else {
        None
    };
    let ensemble = filter_outlier_paths(&raw)?;
    let specs: Vec<StatisticSpec> = cfg.statistic_specs();
    let observed = evaluate_statistics(&ensemble, &specs)?;
    let cis = bootstrap_cis(&cfg.reference_model(), &dataset, &protocol, &specs, cfg.k, cfg.level)?;
    let band = acceptable_band(dataset.n())?;
    let metadata = RunMetadata {
        n: dataset.n(),
        m: protocol.m,
        j: protocol.j,
        retained: ensemble.retained_count(),
    };
    let results = specs
        .iter()
        .zip(observed)
        .zip(&cis)
        .map(|((spec, value), ci)| run_check(*spec, value, metadata, ci, band))
        .collect::<mprobe::Result<Vec<_>>>()?;
    Ok(MartingaleOutcome {
        dataset,
        ensemble,
        results,
        t3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub label: String,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of log median `T3` against log `n`.
    pub slope: f64,
}

/// Median-`T3` curves for the model under test, the exact reference and the
/// fractional references, all on common random numbers.
pub fn check_scaling(
    cfg: &ExperimentConfig,
    model: &dyn SequentialPredictiveModel,
    model_label: &str,
) -> Result<Vec<ScalingCurve>> {
    cfg.validate_scaling()?;
    let s = &cfg.scaling;
    let j = s.j.unwrap_or(cfg.j);
    let curve = |label: String, m: &dyn SequentialPredictiveModel| -> Result<ScalingCurve> {
        let points = scaling_experiment(m, &cfg.task, &s.n_grid, s.m.as_rule(), j, s.runs, cfg.seed)?;
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.median_t3)).collect();
        let slope = loglog_slope(&xy).with_context(|| format!("slope of the {label} curve"))?;
        Ok(ScalingCurve { label, points, slope })
    };
    let mut curves = vec![curve(model_label.to_string(), model)?];
    if cfg.model != ModelSpec::Reference {
        curves.push(curve("reference".into(), &SyntheticModel::reference(cfg.kind()))?);
    }
    for &alpha in s.alphas.iter().flatten() {
        let label = format!("fractional({alpha})");
        if label == model_label {
            continue;
        }
        let m = SyntheticModel::Fractional {
            prior: BetaParams::uniform(),
            alpha,
        };
        curves.push(curve(label, &m)?);
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact3Row {
    pub n: usize,
    pub num_mc: usize,
    #[serde(flatten)]
    pub outcome: Fact3Outcome,
    pub within_3se: bool,
}

pub fn run_fact3(prior: &ConjugatePrior, ns: &[usize], num_mc: usize, seed: u64) -> Result<Vec<Fact3Row>> {
    ensure!(!ns.is_empty(), "fact3 needs at least one n");
    ns.iter()
        .map(|&n| {
            let mut rng = RngStream::new(derive_seed(seed, tags::FACT3, n as u64), 0);
            let outcome = fact3_check(prior, n, num_mc, &mut rng)?;
            Ok(Fact3Row {
                n,
                num_mc,
                outcome,
                within_3se: outcome.within(3.0),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub statistic: String,
    pub subset: String,
    pub k_or_g: String,
    pub replications: usize,
    pub pass: usize,
    pub pass_within_band: usize,
    pub fail: usize,
    pub fail_frequency: f64,
}

/// Run `check_martingale` `replications` times; replication `r` uses the
/// root seed `derive_seed(cfg.seed, REPLICATION, r)`.
pub fn replicate(
    cfg: &ExperimentConfig,
    model: &dyn SequentialPredictiveModel,
    replications: usize,
) -> Result<Vec<ReplicationSummary>> {
    ensure!(replications >= 10, "replicate needs R >= 10, got {replications}");
    let specs = cfg.statistic_specs();
    let mut counts = vec![[0usize; 3]; specs.len()];
    for r in 0..replications as u64 {
        let outcome = check_martingale(cfg, model, derive_seed(cfg.seed, tags::REPLICATION, r))
            .with_context(|| format!("replication {r}"))?;
        for (c, res) in counts.iter_mut().zip(&outcome.results) {
            let slot = match res.verdict {
                Verdict::Pass => 0,
                Verdict::PassWithinBand => 1,
                Verdict::Fail => 2,
            };
            c[slot] += 1;
        }
        log::info!("replication {}/{replications} done", r + 1);
    }
    Ok(specs
        .iter()
        .zip(counts)
        .map(|(spec, [pass, pass_within_band, fail])| ReplicationSummary {
            statistic: spec.statistic.name().into(),
            subset: spec.subset.label().into(),
            k_or_g: spec.statistic.parameter(),
            replications,
            pass,
            pass_within_band,
            fail,
            fail_frequency: fail as f64 / replications as f64,
        })
        .collect())
}

/// Lower and upper quartiles of a scaling point's runs.
pub fn run_quartiles(point: &ScalingPoint) -> Result<(f64, f64)> {
    Ok((quantile(&point.runs, 0.25)?, quantile(&point.runs, 0.75)?))
}
