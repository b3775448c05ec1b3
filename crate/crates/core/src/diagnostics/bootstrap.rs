use rayon::prelude::*;

use super::statistics::{t1, t2};
use super::{ConfidenceInterval, RunMetadata, Statistic, StatisticSpec, Subset};
use crate::error::{Error, Result};
use crate::models::SyntheticModel;
use crate::numeric::quantile_sorted;
use crate::rng::{derive_seed, tags};
use crate::sampler::{filter_outlier_paths, generate_ensemble, split_ensemble_by_x, SamplingProtocol};
use crate::types::{ObservedDataset, PathEnsemble, TaskKind};

/// Smallest replicate count accepted for an interval.
pub const MIN_REPLICATES: usize = 20;

/// Evaluate statistics on an already filtered ensemble. Language-task
/// ensembles are split by `x` once and shared across statistics.
pub fn evaluate_statistics(ensemble: &PathEnsemble, specs: &[StatisticSpec]) -> Result<Vec<f64>> {
    let needs_split = specs.iter().any(|s| s.subset != Subset::All);
    let split = if needs_split {
        Some(split_ensemble_by_x(ensemble)?)
    } else {
        None
    };
    specs
        .iter()
        .map(|spec| {
            let target = match (spec.subset, &split) {
                (Subset::All, _) => ensemble,
                (Subset::XEquals0, Some((x0, _))) => x0,
                (Subset::XEquals1, Some((_, x1))) => x1,
                _ => unreachable!("split computed whenever a subset is requested"),
            };
            match spec.statistic {
                Statistic::T1 { g } => t1(target, g),
                Statistic::T2 { k } => t2(target, k),
            }
        })
        .collect()
}

/// Bootstrap intervals for several statistics at once.
///
/// Each of the `replicates` replicates draws a fresh ensemble of `J` paths of
/// length `m` from `reference` conditioned on `observed` (same ordering
/// protocol), filters it and evaluates every statistic. Replicate `r` uses
/// ensemble seed `derive_seed(protocol.ensemble_seed, BOOTSTRAP, r)`. The
/// interval endpoints are the type-7 `(1-level)/2` and `(1+level)/2`
/// quantiles of the replicate values.
pub fn bootstrap_cis(
    reference: &SyntheticModel,
    observed: &ObservedDataset,
    protocol: &SamplingProtocol,
    specs: &[StatisticSpec],
    replicates: usize,
    level: f64,
) -> Result<Vec<ConfidenceInterval>> {
    if replicates < MIN_REPLICATES {
        return Err(Error::TooFewReplicates(replicates));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    protocol.validate()?;
    let per_replicate: Vec<(Vec<f64>, usize)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let p = SamplingProtocol {
                ensemble_seed: derive_seed(protocol.ensemble_seed, tags::BOOTSTRAP, r),
                ..*protocol
            };
            let ensemble = filter_outlier_paths(&generate_ensemble(reference, &p, observed)?)?;
            Ok((evaluate_statistics(&ensemble, specs)?, ensemble.retained_count()))
        })
        .collect::<Result<_>>()?;

    let retained = per_replicate.last().map_or(0, |r| r.1);
    let alpha = 1.0 - level;
    (0..specs.len())
        .map(|i| {
            let mut values: Vec<f64> = per_replicate.iter().map(|(v, _)| v[i]).collect();
            values.sort_by(f64::total_cmp);
            Ok(ConfidenceInterval {
                lower: quantile_sorted(&values, alpha / 2.0)?,
                upper: quantile_sorted(&values, 1.0 - alpha / 2.0)?,
                level,
                replicates,
                metadata: RunMetadata {
                    n: observed.n(),
                    m: protocol.m,
                    j: protocol.j,
                    retained,
                },
            })
        })
        .collect()
}

/// Single-statistic form of [`bootstrap_cis`].
pub fn bootstrap_ci(
    reference: &SyntheticModel,
    observed: &ObservedDataset,
    protocol: &SamplingProtocol,
    spec: StatisticSpec,
    replicates: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    if spec.subset != Subset::All && observed.task().kind() != TaskKind::NaturalLanguage {
        return Err(Error::InvalidArgument("x subsets only exist for the language task".into()));
    }
    Ok(bootstrap_cis(reference, observed, protocol, &[spec], replicates, level)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::TestFunction;
    use crate::models::BetaParams;
    use crate::numeric::quantile;
    use crate::sampler::Ordering;
    use crate::types::{Sample, TaskSpec};

    fn data() -> ObservedDataset {
        let v = (0..20).map(|i| Sample::Binary(i % 3 == 0)).collect();
        ObservedDataset::new(TaskSpec::bernoulli(0.5), v, None).unwrap()
    }

    fn protocol(seed: u64) -> SamplingProtocol {
        SamplingProtocol {
            ordering: Ordering::PermutePerPath,
            j: 50,
            m: 10,
            ensemble_seed: seed,
        }
    }

    const T1Z: StatisticSpec = StatisticSpec {
        statistic: Statistic::T1 { g: TestFunction::Identity },
        subset: Subset::All,
    };

    #[test]
    fn endpoints_are_replicate_quantiles() {
        let reference = SyntheticModel::reference(TaskKind::Bernoulli);
        let ci = bootstrap_ci(&reference, &data(), &protocol(3), T1Z, 40, 0.9).unwrap();
        // Recompute the replicate statistics by hand.
        let values: Vec<f64> = (0..40)
            .map(|r| {
                let p = SamplingProtocol {
                    ensemble_seed: derive_seed(3, tags::BOOTSTRAP, r),
                    ..protocol(3)
                };
                let e = filter_outlier_paths(&generate_ensemble(&reference, &p, &data()).unwrap()).unwrap();
                t1(&e, TestFunction::Identity).unwrap()
            })
            .collect();
        assert_eq!(ci.lower, quantile(&values, 0.05).unwrap());
        assert_eq!(ci.upper, quantile(&values, 0.95).unwrap());
        assert!(ci.lower <= ci.upper);
        assert_eq!(ci.replicates, 40);
        assert_eq!((ci.metadata.n, ci.metadata.m, ci.metadata.j), (20, 10, 50));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let reference = SyntheticModel::reference(TaskKind::Bernoulli);
        let a = bootstrap_ci(&reference, &data(), &protocol(8), T1Z, 20, 0.95).unwrap();
        let b = bootstrap_ci(&reference, &data(), &protocol(8), T1Z, 20, 0.95).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_replicates() {
        let reference = SyntheticModel::reference(TaskKind::Bernoulli);
        let err = bootstrap_ci(&reference, &data(), &protocol(1), T1Z, 19, 0.95).unwrap_err();
        assert_eq!(err.to_string(), "too few replicates for the requested level: K = 19");
        assert!(bootstrap_ci(&reference, &data(), &protocol(1), T1Z, 30, 1.0).is_err());
    }

    #[test]
    fn near_deterministic_reference_collapses() {
        let reference = SyntheticModel::BetaBernoulli {
            prior: BetaParams::new(1e9, 1.0).unwrap(),
        };
        let ci = bootstrap_ci(&reference, &data(), &protocol(2), T1Z, 20, 0.95).unwrap();
        assert!(ci.lower.abs() < 1e-6 && ci.upper.abs() < 1e-6, "{ci:?}");
    }

    #[test]
    fn language_task_statistics_by_side() {
        let v = (0..30).map(|i| Sample::pair(i % 2 == 0, i % 3 == 0)).collect();
        let d = ObservedDataset::new(TaskSpec::natural_language(), v, None).unwrap();
        let reference = SyntheticModel::reference(TaskKind::NaturalLanguage);
        let specs = [
            StatisticSpec {
                statistic: Statistic::T1 { g: TestFunction::Identity },
                subset: Subset::XEquals0,
            },
            StatisticSpec {
                statistic: Statistic::T2 { k: 2 },
                subset: Subset::XEquals1,
            },
        ];
        let cis = bootstrap_cis(&reference, &d, &protocol(4), &specs, 20, 0.95).unwrap();
        assert_eq!(cis.len(), 2);
        assert!(cis.iter().all(|c| c.lower <= c.upper));
        assert!(bootstrap_ci(&reference, &data(), &protocol(4), specs[0], 20, 0.95).is_err());
    }
}
