//! Monte Carlo check that expected posterior variance equals the expected
//! squared error of the posterior mean when the truth is drawn from the prior.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BetaParams, GaussianPriorParams};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ConjugatePrior {
    Beta(BetaParams),
    Gaussian(GaussianPriorParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fact3Outcome {
    /// Mean posterior variance.
    pub lhs: f64,
    /// Mean squared distance between the true parameter and the posterior mean.
    pub rhs: f64,
    /// Standard error of `lhs - rhs` from the per-replicate differences.
    pub mc_standard_error: f64,
}

impl Fact3Outcome {
    pub fn within(&self, standard_errors: f64) -> bool {
        (self.lhs - self.rhs).abs() <= standard_errors * self.mc_standard_error
    }
}

/// Draw `theta0` from the prior and `n` observations given `theta0`, compute
/// the conjugate posterior in closed form and accumulate both sides.
pub fn fact3_check(prior: &ConjugatePrior, n: usize, num_mc: usize, rng: &mut RngStream) -> Result<Fact3Outcome> {
    if num_mc < 2 {
        return Err(Error::InvalidArgument(format!("fact3 check needs num_mc >= 2, got {num_mc}")));
    }
    let mut var_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut diffs = Vec::with_capacity(num_mc);
    match *prior {
        ConjugatePrior::Beta(p) => {
            let p = BetaParams::new(p.a, p.b)?;
            let dist = Beta::new(p.a, p.b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for _ in 0..num_mc {
                let theta0: f64 = dist.sample(rng);
                let s = (0..n).filter(|_| rng.bernoulli(theta0)).count() as f64;
                let post = BetaParams {
                    a: p.a + s,
                    b: p.b + n as f64 - s,
                };
                let (var, sq) = (post.variance(), (theta0 - post.mean()).powi(2));
                var_sum += var;
                sq_sum += sq;
                diffs.push(var - sq);
            }
        }
        ConjugatePrior::Gaussian(p) => {
            let p = GaussianPriorParams::new(p.mean, p.variance)?;
            let precision = 1.0 / p.variance + n as f64;
            for _ in 0..num_mc {
                let z: f64 = rng.sample(StandardNormal);
                let theta0 = p.mean + p.variance.sqrt() * z;
                let sum: f64 = (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        theta0 + e
                    })
                    .sum();
                let mean = (p.mean / p.variance + sum) / precision;
                let (var, sq) = (1.0 / precision, (theta0 - mean).powi(2));
                var_sum += var;
                sq_sum += sq;
                diffs.push(var - sq);
            }
        }
    }
    let count = num_mc as f64;
    let mean_diff = diffs.iter().sum::<f64>() / count;
    let sd = (diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (count - 1.0)).sqrt();
    Ok(Fact3Outcome {
        lhs: var_sum / count,
        rhs: sq_sum / count,
        mc_standard_error: sd / count.sqrt(),
    })
}
