//! Report files. Every file is a pure function of its inputs, so reruns with
//! the same config produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mprobe::diagnostics::{DiagnosticResult, Statistic, Subset};
use mprobe::io;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::runner::{run_quartiles, Fact3Row, MartingaleOutcome, ReplicationSummary, ScalingCurve};

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

const CSV_HEADER: &str = "task,model,n,m,J,statistic,k_or_g,value,ci_lo,ci_hi,band,verdict";

/// One statistic of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub task: String,
    pub model: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub retained: usize,
    pub statistic: String,
    pub subset: String,
    pub k_or_g: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub replicates: usize,
    pub band: f64,
    pub verdict: String,
}

impl ResultRow {
    pub fn new(task: &str, model: &str, r: &DiagnosticResult) -> Self {
        let k_or_g = match r.statistic.statistic {
            Statistic::T1 { g } => g.name().to_string(),
            Statistic::T2 { k } => k.to_string(),
        };
        Self {
            task: task.into(),
            model: model.into(),
            n: r.metadata.n,
            m: r.metadata.m,
            j: r.metadata.j,
            retained: r.metadata.retained,
            statistic: r.statistic.statistic.name().into(),
            subset: r.statistic.subset.label().into(),
            k_or_g,
            value: r.observed,
            ci_lo: r.ci.lower,
            ci_hi: r.ci.upper,
            level: r.ci.level,
            replicates: r.ci.replicates,
            band: r.band_halfwidth,
            verdict: r.verdict.as_str().into(),
        }
    }

    /// Statistic name with the language-task side appended.
    fn qualified_statistic(&self) -> String {
        if self.subset == Subset::All.label() {
            self.statistic.clone()
        } else {
            format!("{}[{}]", self.statistic, self.subset)
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.model,
            self.n,
            self.m,
            self.j,
            self.qualified_statistic(),
            self.k_or_g,
            self.value,
            self.ci_lo,
            self.ci_hi,
            self.band,
            self.verdict
        )
    }
}

pub fn rows(cfg: &ExperimentConfig, model_label: &str, outcome: &MartingaleOutcome) -> Vec<ResultRow> {
    let task = cfg.kind().to_string();
    outcome.results.iter().map(|r| ResultRow::new(&task, model_label, r)).collect()
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, CONFIG_FILE, &cfg.to_toml()?)
}

#[derive(Serialize)]
struct MartingaleReport<'a> {
    config: &'a ExperimentConfig,
    model: &'a str,
    results: &'a [ResultRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    t3: Option<f64>,
    failed_paths: usize,
}

pub fn write_martingale(dir: &Path, cfg: &ExperimentConfig, model_label: &str, outcome: &MartingaleOutcome) -> Result<()> {
    write_config(dir, cfg)?;
    io::write_dataset(&dir.join("dataset.tsv"), &outcome.dataset)?;
    io::write_ensemble(&dir.join("ensemble.tsv"), &outcome.ensemble)?;
    let rows = rows(cfg, model_label, outcome);
    let report = MartingaleReport {
        config: cfg,
        model: model_label,
        results: &rows,
        t3: outcome.t3,
        failed_paths: outcome.ensemble.failed.len(),
    };
    write(dir, RESULTS_JSON, &json(&report)?)?;
    write(dir, RESULTS_CSV, &results_csv(&rows))?;

    let mut plot = String::from("label\tx\ty\tci_lo\tci_hi\tband\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            plot,
            "{}:{}\t{i}\t{}\t{}\t{}\t{}",
            r.qualified_statistic(),
            r.k_or_g,
            r.value,
            r.ci_lo,
            r.ci_hi,
            r.band
        );
    }
    write(dir, "plot_martingale.tsv", &plot)
}

#[derive(Serialize)]
struct ScalingReport<'a> {
    config: &'a ExperimentConfig,
    curves: &'a [ScalingCurve],
}

pub fn write_scaling(dir: &Path, cfg: &ExperimentConfig, curves: &[ScalingCurve]) -> Result<()> {
    write_config(dir, cfg)?;
    write(dir, "scaling.json", &json(&ScalingReport { config: cfg, curves })?)?;
    let mut csv = String::from("curve,n,m,median_t3,q25,q75,slope\n");
    let mut plot = String::from("curve\tx\ty\terr_lo\terr_hi\n");
    for c in curves {
        for p in &c.points {
            let (lo, hi) = run_quartiles(p)?;
            let _ = writeln!(csv, "{},{},{},{},{lo},{hi},{}", c.label, p.n, p.m, p.median_t3, c.slope);
            let _ = writeln!(plot, "{}\t{}\t{}\t{lo}\t{hi}", c.label, p.n, p.median_t3);
        }
    }
    write(dir, "scaling.csv", &csv)?;
    write(dir, "plot_scaling.tsv", &plot)
}

#[derive(Serialize)]
struct Fact3Report<'a> {
    prior: &'a mprobe::diagnostics::ConjugatePrior,
    seed: u64,
    rows: &'a [Fact3Row],
}

pub fn write_fact3(dir: &Path, cfg: &ExperimentConfig, rows: &[Fact3Row]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = Fact3Report {
        prior: &cfg.fact3.prior,
        seed: cfg.seed,
        rows,
    };
    write(dir, "fact3.json", &json(&report)?)?;
    let mut csv = String::from("n,num_mc,lhs,rhs,mc_standard_error,within_3se\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.n, r.num_mc, r.outcome.lhs, r.outcome.rhs, r.outcome.mc_standard_error, r.within_3se
        );
    }
    write(dir, "fact3.csv", &csv)
}

#[derive(Serialize)]
struct ReplicateReport<'a> {
    config: &'a ExperimentConfig,
    model: &'a str,
    summary: &'a [ReplicationSummary],
}

pub fn write_replicate(dir: &Path, cfg: &ExperimentConfig, model_label: &str, summary: &[ReplicationSummary]) -> Result<()> {
    write_config(dir, cfg)?;
    let report = ReplicateReport {
        config: cfg,
        model: model_label,
        summary,
    };
    write(dir, "replicate.json", &json(&report)?)?;
    let mut csv = String::from("statistic,subset,k_or_g,replications,pass,pass_within_band,fail,fail_frequency\n");
    for s in summary {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s.statistic, s.subset, s.k_or_g, s.replications, s.pass, s.pass_within_band, s.fail, s.fail_frequency
        );
    }
    write(dir, "replicate.csv", &csv)
}

/// Dry-run estimate written before any remote call.
pub fn write_estimate(dir: &Path, estimate: &mprobe::llm_client::CostEstimate) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "cost_estimate.json", &json(estimate)?)
}
