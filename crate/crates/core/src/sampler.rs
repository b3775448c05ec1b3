//! Path-ensemble generation, the 1.5 x IQR outlier filter and the per-X split
//! of the language task.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SequentialPredictiveModel;
use crate::numeric::quantile_sorted;
use crate::rng::RngStream;
use crate::types::{FailedPath, ObservedDataset, PathEnsemble, Sample, SamplePath, TaskKind};

/// Minimum fraction of the requested paths that must succeed.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// Fresh uniform permutation of the observations for every path.
    PermutePerPath,
    /// Observations in their stored order for every path.
    FixedOrdering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingProtocol {
    pub ordering: Ordering,
    pub j: usize,
    pub m: usize,
    pub ensemble_seed: u64,
}

impl SamplingProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "sampling protocol needs J >= 1 and m >= 1, got J = {}, m = {}",
                self.j, self.m
            )));
        }
        Ok(())
    }
}

/// Generate `J` paths of length `m`. Path `j` draws its permutation and its
/// samples from `RngStream::new(ensemble_seed, j)`, so the result does not
/// depend on how rayon schedules the paths.
pub fn generate_ensemble(
    model: &dyn SequentialPredictiveModel,
    protocol: &SamplingProtocol,
    observed: &ObservedDataset,
) -> Result<PathEnsemble> {
    protocol.validate()?;
    let kind = observed.task().kind();
    if model.task_kind() != kind {
        return Err(Error::KindMismatch {
            expected: kind,
            found: model.task_kind(),
        });
    }
    let n = observed.n();
    let outcomes: Vec<Result<SamplePath, FailedPath>> = (0..protocol.j as u64)
        .into_par_iter()
        .map(|path_seed| {
            let mut rng = RngStream::new(protocol.ensemble_seed, path_seed);
            let mut permutation: Vec<usize> = (0..n).collect();
            if protocol.ordering == Ordering::PermutePerPath {
                permutation.shuffle(&mut rng);
            }
            let context: Vec<Sample> = permutation.iter().map(|&i| observed.samples()[i]).collect();
            let values = model
                .sample_path(&context, protocol.m, &mut rng)
                .map_err(|e| FailedPath {
                    path_seed,
                    reason: e.to_string(),
                })?;
            if values.len() != protocol.m || values.iter().any(|s| s.kind() != kind) {
                return Err(FailedPath {
                    path_seed,
                    reason: format!("model returned {} samples of the wrong shape", values.len()),
                });
            }
            Ok(SamplePath {
                values,
                path_seed,
                permutation,
            })
        })
        .collect();

    let mut paths = Vec::with_capacity(protocol.j);
    let mut failed = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(p) => paths.push(p),
            Err(f) => {
                log::warn!("path {} failed: {}", f.path_seed, f.reason);
                failed.push(f);
            }
        }
    }
    if (paths.len() as f64) < MIN_SUCCESS_FRACTION * protocol.j as f64 {
        return Err(Error::EnsembleFailed {
            failed: failed.len(),
            requested: protocol.j,
        });
    }
    let mut ensemble = PathEnsemble::new(kind, protocol.m, paths, protocol.ensemble_seed)?;
    ensemble.nominal_j = protocol.j;
    ensemble.failed = failed;
    Ok(ensemble)
}

/// Mean of `|value|` along a path (`|y|` for language records).
pub fn mean_abs(path: &SamplePath) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    path.values.iter().map(|s| s.value().abs()).sum::<f64>() / path.len() as f64
}

/// Drop paths whose mean absolute value lies outside
/// `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.
///
/// Quartiles are taken over every path in the ensemble, not just the ones
/// still retained, so the fence is fixed by the data and a second pass is a
/// no-op. The size check counts every path for the same reason.
pub fn filter_outlier_paths(ensemble: &PathEnsemble) -> Result<PathEnsemble> {
    if ensemble.paths.len() < 4 {
        return Err(Error::EnsembleTooSmall(ensemble.paths.len()));
    }
    let scores: Vec<f64> = ensemble.paths.iter().map(mean_abs).collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25)?;
    let q3 = quantile_sorted(&sorted, 0.75)?;
    let spread = 1.5 * (q3 - q1);
    let (lo, hi) = (q1 - spread, q3 + spread);
    let mut out = ensemble.clone();
    for (keep, score) in out.retained.iter_mut().zip(&scores) {
        *keep = *keep && (lo..=hi).contains(score);
    }
    Ok(out)
}

/// Split a language-task ensemble into the `y` sub-sequences at positions
/// with `x = 0` and `x = 1`. Sub-paths keep the parent's seed, permutation and
/// retained flag; their lengths vary.
pub fn split_ensemble_by_x(ensemble: &PathEnsemble) -> Result<(PathEnsemble, PathEnsemble)> {
    if ensemble.kind != TaskKind::NaturalLanguage {
        return Err(Error::KindMismatch {
            expected: TaskKind::NaturalLanguage,
            found: ensemble.kind,
        });
    }
    let side = |want: bool| PathEnsemble {
        kind: TaskKind::Bernoulli,
        m: ensemble.m,
        paths: ensemble
            .paths
            .iter()
            .map(|p| SamplePath {
                values: p
                    .values
                    .iter()
                    .filter_map(|s| match *s {
                        Sample::Pair { x, y } if x == want => Some(Sample::Binary(y)),
                        _ => None,
                    })
                    .collect(),
                path_seed: p.path_seed,
                permutation: p.permutation.clone(),
            })
            .collect(),
        retained: ensemble.retained.clone(),
        ensemble_seed: ensemble.ensemble_seed,
        nominal_j: ensemble.nominal_j,
        failed: ensemble.failed.clone(),
        variable_length: true,
    };
    Ok((side(false), side(true)))
}

/// Split the observed data of the language task the same way.
pub fn split_samples_by_x(samples: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
    let pick = |want: bool| {
        samples
            .iter()
            .filter_map(|s| match *s {
                Sample::Pair { x, y } if x == want => Some(Sample::Binary(y)),
                _ => None,
            })
            .collect()
    };
    (pick(false), pick(true))
}
