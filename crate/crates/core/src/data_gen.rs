//! Seeded synthetic datasets for the three tasks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{ObservedDataset, Sample, TaskSpec};

/// Draw `n` i.i.d. samples from the task's true distribution. The dataset
/// records `rng.root_seed()` as its generation seed.
pub fn generate_dataset(task: &TaskSpec, n: usize, rng: &mut RngStream) -> Result<ObservedDataset> {
    task.validate()?;
    let missing = || Error::InvalidArgument(format!("task {} has no true parameter to simulate from", task.kind()));
    let samples: Vec<Sample> = match *task {
        TaskSpec::Bernoulli { theta } => {
            let theta = theta.ok_or_else(missing)?;
            (0..n).map(|_| Sample::Binary(rng.bernoulli(theta))).collect()
        }
        TaskSpec::Gaussian { theta } => {
            let theta = theta.ok_or_else(missing)?;
            (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    Sample::real(theta + z)
                })
                .collect()
        }
        TaskSpec::NaturalLanguage { params } => {
            let params = params.ok_or_else(missing)?;
            (0..n)
                .map(|_| {
                    let x = rng.bernoulli(params.p_x);
                    let y = rng.bernoulli(params.p_y_given(x));
                    Sample::Pair { x, y }
                })
                .collect()
        }
    };
    ObservedDataset::new(*task, samples, Some(rng.root_seed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{mean, variance};

    #[test]
    fn bernoulli_mean() {
        let d = generate_dataset(&TaskSpec::bernoulli(0.5), 100_000, &mut RngStream::new(1, 0)).unwrap();
        let v: Vec<f64> = d.samples().iter().map(Sample::value).collect();
        // 3 sigma = 3 * sqrt(0.25 / 1e5) ~ 0.0047
        assert!((mean(&v).unwrap() - 0.5).abs() <= 0.005);
    }

    #[test]
    fn gaussian_moments() {
        let d = generate_dataset(&TaskSpec::gaussian(-1.0), 100_000, &mut RngStream::new(2, 0)).unwrap();
        let v: Vec<f64> = d.samples().iter().map(Sample::value).collect();
        assert!((mean(&v).unwrap() + 1.0).abs() <= 0.01);
        assert!((variance(&v).unwrap() - 1.0).abs() <= 0.02);
        for s in d.samples() {
            assert_eq!(*s, Sample::real(s.value()));
        }
    }

    #[test]
    fn language_conditional_rate() {
        let d = generate_dataset(&TaskSpec::natural_language(), 100_000, &mut RngStream::new(3, 0)).unwrap();
        let (mut x1, mut y1) = (0usize, 0usize);
        for s in d.samples() {
            if let Sample::Pair { x: true, y } = *s {
                x1 += 1;
                y1 += usize::from(y);
            }
        }
        assert!((y1 as f64 / x1 as f64 - 0.7).abs() <= 0.01);
    }

    #[test]
    fn deterministic_per_seed() {
        let task = TaskSpec::gaussian(0.0);
        let a = generate_dataset(&task, 50, &mut RngStream::new(9, 0)).unwrap();
        let b = generate_dataset(&task, 50, &mut RngStream::new(9, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.generation_seed(), Some(9));
    }

    #[test]
    fn missing_parameter_is_an_error() {
        let task = TaskSpec::Bernoulli { theta: None };
        assert!(generate_dataset(&task, 5, &mut RngStream::new(1, 0)).is_err());
    }
}
