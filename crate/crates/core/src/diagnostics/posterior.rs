use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::statistics::{mle, t3, Family};
use crate::data_gen::generate_dataset;
use crate::error::{Error, Result};
use crate::models::SequentialPredictiveModel;
use crate::numeric::quantile;
use crate::rng::{derive_seed, tags, RngStream};
use crate::sampler::{generate_ensemble, Ordering, SamplingProtocol};
use crate::types::{ObservedDataset, TaskSpec};

/// Draws approximating the martingale posterior: the MLE of each of `j`
/// fixed-ordering continuations of length `m`.
pub fn martingale_posterior_samples(
    model: &dyn SequentialPredictiveModel,
    observed: &ObservedDataset,
    m: usize,
    j: usize,
    family: Family,
    ensemble_seed: u64,
) -> Result<Vec<f64>> {
    let protocol = SamplingProtocol {
        ordering: Ordering::FixedOrdering,
        j,
        m,
        ensemble_seed,
    };
    let ensemble = generate_ensemble(model, &protocol, observed)?;
    ensemble.paths.iter().map(|p| mle(&p.values, family)).collect()
}

/// Path length as a function of the number of observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MRule {
    /// `n / 2`, rounded down.
    HalfN,
    /// `2 n`.
    TwoN,
    Literal(usize),
}

impl MRule {
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            MRule::HalfN => n / 2,
            MRule::TwoN => 2 * n,
            MRule::Literal(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub m: usize,
    pub median_t3: f64,
    /// `T3` of every run, in run order.
    pub runs: Vec<f64>,
}

/// Median `T3` across `runs` fixed-ordering ensembles for each `n`.
///
/// For a given `seed` the dataset at each `n` and the ensemble seed of each
/// run are the same whatever the model, so curves from different models are
/// compared on common random numbers.
pub fn scaling_experiment(
    model: &dyn SequentialPredictiveModel,
    task: &TaskSpec,
    n_grid: &[usize],
    m_rule: MRule,
    j: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    if n_grid.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "scaling grid needs at least 3 values of n, got {}",
            n_grid.len()
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "scaling grid must be positive and strictly increasing: {n_grid:?}"
        )));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument("scaling experiment needs at least one run".into()));
    }
    let family = Family::for_kind(task.kind())?;
    n_grid
        .par_iter()
        .map(|&n| {
            let m = m_rule.resolve(n);
            let dataset_seed = derive_seed(seed, tags::DATASET, n as u64);
            let observed = generate_dataset(task, n, &mut RngStream::new(dataset_seed, 0))?;
            let values = (0..runs as u64)
                .map(|r| {
                    let protocol = SamplingProtocol {
                        ordering: Ordering::FixedOrdering,
                        j,
                        m,
                        ensemble_seed: derive_seed(derive_seed(seed, tags::SCALING, n as u64), tags::ENSEMBLE, r),
                    };
                    t3(&generate_ensemble(model, &protocol, &observed)?, family)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ScalingPoint {
                n,
                m,
                median_t3: quantile(&values, 0.5)?,
                runs: values,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BetaParams, SyntheticModel};
    use crate::types::{Sample, TaskKind};

    #[test]
    fn m_rules() {
        assert_eq!(MRule::HalfN.resolve(25), 12);
        assert_eq!(MRule::TwoN.resolve(25), 50);
        assert_eq!(MRule::Literal(7).resolve(25), 7);
    }

    #[test]
    fn point_mass_model_gives_identical_draws() {
        let model = SyntheticModel::BetaBernoulli {
            prior: BetaParams::new(1e12, 1e-12).unwrap(),
        };
        let d = ObservedDataset::new(TaskSpec::bernoulli(0.5), vec![Sample::Binary(false); 3], None).unwrap();
        let draws = martingale_posterior_samples(&model, &d, 30, 50, Family::Bernoulli, 1).unwrap();
        assert!(draws.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_step_draws_are_raw_samples() {
        let model = SyntheticModel::reference(TaskKind::Gaussian);
        let d = ObservedDataset::new(TaskSpec::gaussian(0.0), vec![Sample::real(0.4)], None).unwrap();
        let draws = martingale_posterior_samples(&model, &d, 1, 20, Family::GaussianKnownVariance, 5).unwrap();
        for x in draws {
            assert_eq!(Sample::real(x), Sample::Real(x));
        }
    }

    #[test]
    fn grid_validation() {
        let model = SyntheticModel::reference(TaskKind::Bernoulli);
        let task = TaskSpec::bernoulli(0.5);
        assert!(scaling_experiment(&model, &task, &[20, 50], MRule::HalfN, 20, 1, 0).is_err());
        assert!(scaling_experiment(&model, &task, &[20, 20, 50], MRule::HalfN, 20, 1, 0).is_err());
        assert!(scaling_experiment(&model, &task, &[20, 40, 80], MRule::HalfN, 20, 0, 0).is_err());
        let nl = TaskSpec::natural_language();
        let nl_model = SyntheticModel::reference(TaskKind::NaturalLanguage);
        assert!(scaling_experiment(&nl_model, &nl, &[20, 40, 80], MRule::HalfN, 20, 1, 0).is_err());
    }

    #[test]
    fn curve_shape_and_determinism() {
        let model = SyntheticModel::reference(TaskKind::Bernoulli);
        let task = TaskSpec::bernoulli(0.5);
        let a = scaling_experiment(&model, &task, &[10, 40, 160], MRule::HalfN, 100, 3, 9).unwrap();
        let b = scaling_experiment(&model, &task, &[10, 40, 160], MRule::HalfN, 100, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|p| p.m).collect::<Vec<_>>(), vec![5, 20, 80]);
        assert!(a[0].median_t3 > a[2].median_t3);
    }
}
