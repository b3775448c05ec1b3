use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mprobe::diagnostics::ConjugatePrior;
use mprobe::models::{BetaParams, GaussianPriorParams};
use mprobe_cli::config::{ExperimentConfig, ModelSpec};
use mprobe_cli::report;
use mprobe_cli::runner;

/// Martingale-property diagnostics for sequential predictive models.
#[derive(Parser)]
#[command(name = "mprobe", version)]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: bernoulli-paper, gaussian-paper, nl-paper, nl-appendix.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Model under test: reference, fractional:<alpha>, drift:<delta> or remote.
    #[arg(long)]
    model: Option<String>,
    /// Base URL of an OpenAI-compatible endpoint (implies a remote model).
    #[arg(long)]
    endpoint_url: Option<String>,
    /// Allow network calls; without it remote runs only print a cost estimate.
    #[arg(long)]
    confirm_network: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compare T1/T2 of the model's paths against reference bootstrap intervals.
    CheckMartingale {
        #[command(flatten)]
        common: Common,
        /// Observed data file to use instead of simulating it.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Median-T3 scaling curves over a grid of n.
    CheckScaling {
        #[command(flatten)]
        common: Common,
        /// Comma-separated grid, e.g. 20,50,100,200,400.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
    /// Monte Carlo check of expected posterior variance against expected squared error.
    Fact3 {
        #[command(flatten)]
        common: Common,
        /// beta:<a>,<b> or gaussian:<mean>,<variance>.
        #[arg(long)]
        prior: Option<String>,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long)]
        num_mc: Option<usize>,
    },
    /// Repeat check-martingale with derived seeds and report verdict frequencies.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short = 'r', default_value_t = 100)]
        replications: usize,
    },
}

const EXIT_FAIL: u8 = 2;

fn parse_prior(text: &str) -> Result<ConjugatePrior> {
    let (family, args) = text.split_once(':').context("prior must look like beta:1,1 or gaussian:0,100")?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad prior parameters in {text:?}"))?;
    let [p, q] = nums[..] else {
        bail!("prior {text:?} needs exactly two parameters");
    };
    Ok(match family {
        "beta" => ConjugatePrior::Beta(BetaParams::new(p, q)?),
        "gaussian" => ConjugatePrior::Gaussian(GaussianPriorParams::new(p, q)?),
        other => bail!("unknown prior family {other:?}"),
    })
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset("bernoulli-paper")?,
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &c.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(flag) = &c.model {
        cfg.model = ModelSpec::from_flag(flag, &cfg.model)?;
    }
    if let Some(url) = &c.endpoint_url {
        if !matches!(cfg.model, ModelSpec::Remote { .. }) {
            cfg.model = ModelSpec::from_flag("remote", &cfg.model)?;
        }
        if let ModelSpec::Remote { endpoint, .. } = &mut cfg.model {
            endpoint.base_url = url.clone();
        }
    }
    Ok(cfg)
}

/// For remote models without `--confirm-network`, print and save the cost
/// estimate. Returns true when the run should stop here.
fn dry_run(cfg: &ExperimentConfig, common: &Common, runs: &[(usize, usize, usize)]) -> Result<bool> {
    let Some(estimate) = runner::remote_estimate(cfg, runs) else {
        return Ok(false);
    };
    if common.confirm_network {
        return Ok(false);
    }
    report::write_estimate(&cfg.out_dir(), &estimate)?;
    println!(
        "dry run: {} requests, ~{} prompt tokens, ~{} completion tokens (rerun with --confirm-network to send)",
        estimate.requests, estimate.prompt_tokens, estimate.completion_tokens
    );
    Ok(true)
}

fn transcript_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.transcript.clone().unwrap_or_else(|| cfg.out_dir().join(report::TRANSCRIPT_FILE))
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::CheckMartingale { common, dataset } => {
            let mut cfg = load_config(&common)?;
            if dataset.is_some() {
                cfg.dataset_file = dataset;
            }
            let cfg = cfg.resolve()?;
            if dry_run(&cfg, &common, &[(cfg.n, cfg.resolved_m(), cfg.j)])? {
                return Ok(0);
            }
            let model = runner::build_model(&cfg, &transcript_path(&cfg))?;
            let label = cfg.model.label();
            let outcome = runner::check_martingale(&cfg, model.as_ref(), cfg.seed)?;
            let dir = cfg.out_dir();
            report::write_martingale(&dir, &cfg, &label, &outcome)?;
            println!("{:<6} {:<5} {:>5} {:>12} {:>12} {:>12}  verdict", "stat", "side", "k/g", "value", "ci_lo", "ci_hi");
            for r in report::rows(&cfg, &label, &outcome) {
                println!(
                    "{:<6} {:<5} {:>5} {:>12.6} {:>12.6} {:>12.6}  {}",
                    r.statistic, r.subset, r.k_or_g, r.value, r.ci_lo, r.ci_hi, r.verdict
                );
            }
            println!("reports written to {}", dir.display());
            Ok(if outcome.any_fail() { EXIT_FAIL } else { 0 })
        }
        Command::CheckScaling { common, n_grid } => {
            let mut cfg = load_config(&common)?;
            if let Some(grid) = n_grid {
                cfg.scaling.n_grid = grid;
            }
            let cfg = cfg.resolve()?;
            cfg.validate_scaling()?;
            let s = &cfg.scaling;
            let j = s.j.unwrap_or(cfg.j);
            let runs: Vec<_> = s.n_grid.iter().map(|&n| (n, s.m.as_rule().resolve(n), j * s.runs)).collect();
            if dry_run(&cfg, &common, &runs)? {
                return Ok(0);
            }
            let model = runner::build_model(&cfg, &transcript_path(&cfg))?;
            let curves = runner::check_scaling(&cfg, model.as_ref(), &cfg.model.label())?;
            report::write_scaling(&cfg.out_dir(), &cfg, &curves)?;
            for c in &curves {
                let medians: Vec<String> = c.points.iter().map(|p| format!("{}:{:.5}", p.n, p.median_t3)).collect();
                println!("{:<18} slope {:+.3}  {}", c.label, c.slope, medians.join(" "));
            }
            Ok(0)
        }
        Command::Fact3 {
            common,
            prior,
            n,
            num_mc,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = prior {
                cfg.fact3.prior = parse_prior(&p)?;
            }
            if let Some(n) = n {
                cfg.fact3.n = n;
            }
            if let Some(num_mc) = num_mc {
                cfg.fact3.num_mc = num_mc;
            }
            if cfg.fact3.num_mc < 2 {
                bail!("num_mc must be at least 2, got {}", cfg.fact3.num_mc);
            }
            let rows = runner::run_fact3(&cfg.fact3.prior, &cfg.fact3.n, cfg.fact3.num_mc, cfg.seed)?;
            report::write_fact3(&cfg.out_dir(), &cfg, &rows)?;
            for r in &rows {
                println!(
                    "n={:<5} lhs={:.6} rhs={:.6} se={:.2e} {}",
                    r.n,
                    r.outcome.lhs,
                    r.outcome.rhs,
                    r.outcome.mc_standard_error,
                    if r.within_3se { "within 3 SE" } else { "OUTSIDE 3 SE" }
                );
            }
            Ok(if rows.iter().all(|r| r.within_3se) { 0 } else { EXIT_FAIL })
        }
        Command::Replicate { common, replications } => {
            let cfg = load_config(&common)?.resolve()?;
            if replications < 10 {
                bail!("replicate needs R >= 10, got {replications}");
            }
            if dry_run(&cfg, &common, &[(cfg.n, cfg.resolved_m(), cfg.j * replications)])? {
                return Ok(0);
            }
            let model = runner::build_model(&cfg, &transcript_path(&cfg))?;
            let label = cfg.model.label();
            let summary = runner::replicate(&cfg, model.as_ref(), replications)?;
            report::write_replicate(&cfg.out_dir(), &cfg, &label, &summary)?;
            for s in &summary {
                println!(
                    "{:<4} {:<5} {:<6} pass {:>4}  band {:>4}  fail {:>4}  ({:.3})",
                    s.statistic, s.subset, s.k_or_g, s.pass, s.pass_within_band, s.fail, s.fail_frequency
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
