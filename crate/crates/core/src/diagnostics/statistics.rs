//! The aggregated path statistics and the per-path MLE.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::iqr;
use crate::types::{PathEnsemble, Sample, TaskKind};

/// Test function `g` applied to raw sample values.
#[derive(Clone, Copy)]
pub enum TestFunction {
    Identity,
    Square,
    Custom { name: &'static str, f: fn(f64) -> f64 },
}

impl TestFunction {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            TestFunction::Identity => z,
            TestFunction::Square => z * z,
            TestFunction::Custom { f, .. } => f(z),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Identity => "z",
            TestFunction::Square => "z^2",
            TestFunction::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g({})", self.name())
    }
}

impl PartialEq for TestFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Serialize for TestFunction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        match name.as_str() {
            "z" | "identity" => Ok(TestFunction::Identity),
            "z^2" | "square" => Ok(TestFunction::Square),
            other => Err(serde::de::Error::custom(format!(
                "unknown test function {other:?}; expected \"z\" or \"z^2\""
            ))),
        }
    }
}

fn numeric_kind(e: &PathEnsemble) -> Result<()> {
    if e.kind == TaskKind::NaturalLanguage {
        return Err(Error::InvalidArgument(
            "language-task ensembles must be split by x before computing T1/T2".into(),
        ));
    }
    Ok(())
}

/// `T1,g`: mean of `g(z_{n+i}) - g(z_{n+i+m/2})` over the first half of each
/// retained path. Paths of a variable-length sub-ensemble are halved at their
/// own even-truncated length and the average runs over all such terms, which
/// equals `2/(Jm)` times the double sum when every path has length `m`.
pub fn t1(ensemble: &PathEnsemble, g: TestFunction) -> Result<f64> {
    numeric_kind(ensemble)?;
    if !ensemble.variable_length && ensemble.m % 2 == 1 {
        return Err(Error::InvalidArgument(format!("T1 needs an even path length, got m = {}", ensemble.m)));
    }
    if ensemble.retained_count() == 0 {
        return Err(Error::InvalidArgument("T1 of an ensemble with no retained paths".into()));
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    for path in ensemble.retained_paths() {
        let half = path.len() / 2;
        let v = &path.values;
        for i in 0..half {
            sum += g.apply(v[i].value()) - g.apply(v[i + half].value());
        }
        terms += half;
    }
    if terms == 0 {
        return Err(Error::InvalidArgument("T1: no retained path has two or more samples".into()));
    }
    Ok(sum / terms as f64)
}

/// `T2,k`: `sum_j sum_{i=1}^{m-k-1} (z_{n+i+1} - z_{n+i+k}) z_{n+i}` divided
/// by `Jm`. For variable-length sub-ensembles the divisor is the total length
/// of the contributing paths (those with at least `k + 2` samples).
pub fn t2(ensemble: &PathEnsemble, k: usize) -> Result<f64> {
    numeric_kind(ensemble)?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "T2 needs k >= 2 (k = 1 is identically zero), got {k}"
        )));
    }
    if !ensemble.variable_length && ensemble.m < k + 2 {
        return Err(Error::InvalidArgument(format!(
            "T2 with k = {k} needs m >= {}, got m = {}",
            k + 2,
            ensemble.m
        )));
    }
    let mut sum = 0.0;
    let mut norm = 0usize;
    for path in ensemble.retained_paths() {
        let len = path.len();
        if len < k + 2 {
            continue;
        }
        let v: Vec<f64> = path.numeric();
        for t in 0..len - k - 1 {
            sum += (v[t + 1] - v[t + k]) * v[t];
        }
        norm += len;
    }
    if norm == 0 {
        return Err(Error::InvalidArgument(format!("T2: no retained path has at least {} samples", k + 2)));
    }
    Ok(sum / norm as f64)
}

/// Likelihood family used for the path MLE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Bernoulli,
    GaussianKnownVariance,
}

impl Family {
    pub fn for_kind(kind: TaskKind) -> Result<Self> {
        match kind {
            TaskKind::Bernoulli => Ok(Family::Bernoulli),
            TaskKind::Gaussian => Ok(Family::GaussianKnownVariance),
            TaskKind::NaturalLanguage => Err(Error::InvalidArgument(
                "no scalar likelihood family for the language task".into(),
            )),
        }
    }

    fn kind(self) -> TaskKind {
        match self {
            Family::Bernoulli => TaskKind::Bernoulli,
            Family::GaussianKnownVariance => TaskKind::Gaussian,
        }
    }
}

/// Maximum-likelihood parameter of a path. Both families have the sample mean
/// as their closed-form argmax.
pub fn mle(values: &[Sample], family: Family) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sum = 0.0;
    for s in values {
        s.expect_kind(family.kind())?;
        sum += s.value();
    }
    Ok(sum / values.len() as f64)
}

/// `T3`: inter-quartile range of the per-path MLEs of the retained paths.
pub fn t3(ensemble: &PathEnsemble, family: Family) -> Result<f64> {
    if ensemble.retained_count() < 4 {
        return Err(Error::InvalidArgument(format!(
            "T3 needs at least 4 retained paths, got {}",
            ensemble.retained_count()
        )));
    }
    let estimates = ensemble
        .retained_paths()
        .map(|p| mle(&p.values, family))
        .collect::<Result<Vec<_>>>()?;
    iqr(&estimates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SamplePath;
    use proptest::prelude::*;

    fn ensemble(kind: TaskKind, paths: Vec<Vec<f64>>) -> PathEnsemble {
        let m = paths.first().map_or(0, Vec::len);
        let paths = paths
            .into_iter()
            .enumerate()
            .map(|(i, v)| SamplePath {
                values: v
                    .into_iter()
                    .map(|x| match kind {
                        TaskKind::Bernoulli => Sample::Binary(x != 0.0),
                        _ => Sample::real(x),
                    })
                    .collect(),
                path_seed: i as u64,
                permutation: vec![],
            })
            .collect();
        PathEnsemble::new(kind, m, paths, 0).unwrap()
    }

    /// Literal transcription of the double sums with 1-based indices.
    fn t1_oracle(paths: &[Vec<f64>], g: impl Fn(f64) -> f64) -> f64 {
        let (j, m) = (paths.len(), paths[0].len());
        let z = |p: &Vec<f64>, i: usize| p[i - 1];
        let mut acc = 0.0;
        for p in paths {
            for i in 1..=m / 2 {
                acc += g(z(p, i)) - g(z(p, i + m / 2));
            }
        }
        2.0 / (j * m) as f64 * acc
    }

    fn t2_oracle(paths: &[Vec<f64>], k: usize) -> f64 {
        let (j, m) = (paths.len(), paths[0].len());
        let z = |p: &Vec<f64>, i: usize| p[i - 1];
        let mut acc = 0.0;
        for p in paths {
            for i in 1..=(m - k - 1) {
                acc += (z(p, i + 1) - z(p, i + k)) * z(p, i);
            }
        }
        acc / (j * m) as f64
    }

    #[test]
    fn t1_examples() {
        let e = ensemble(TaskKind::Gaussian, vec![vec![1.5; 6]; 3]);
        assert_eq!(t1(&e, TestFunction::Identity).unwrap(), 0.0);
        let e = ensemble(TaskKind::Bernoulli, vec![vec![1.0, 0.0, 0.0, 0.0]]);
        assert_eq!(t1(&e, TestFunction::Identity).unwrap(), 0.5);
    }

    #[test]
    fn t1_errors() {
        let e = ensemble(TaskKind::Bernoulli, vec![vec![1.0, 0.0, 0.0]]);
        assert!(t1(&e, TestFunction::Identity).is_err());
        let mut e = ensemble(TaskKind::Bernoulli, vec![vec![1.0, 0.0]]);
        e.retained[0] = false;
        assert!(t1(&e, TestFunction::Identity).is_err());
    }

    #[test]
    fn t2_examples() {
        let e = ensemble(TaskKind::Gaussian, vec![vec![0.7; 8]; 2]);
        assert_eq!(t2(&e, 3).unwrap(), 0.0);
        let e = ensemble(TaskKind::Bernoulli, vec![vec![1.0, 1.0, 0.0, 1.0]]);
        assert_eq!(t2(&e, 2).unwrap(), 0.25);
        assert!(t2(&e, 1).is_err());
        assert!(t2(&e, 3).is_err());
    }

    #[test]
    fn variable_length_normalization() {
        let mut e = ensemble(TaskKind::Bernoulli, vec![vec![1.0, 0.0, 1.0, 1.0, 0.0]]);
        e.paths.push(SamplePath {
            values: vec![Sample::Binary(true), Sample::Binary(false), Sample::Binary(true)],
            path_seed: 1,
            permutation: vec![],
        });
        e.paths.push(SamplePath {
            values: vec![],
            path_seed: 2,
            permutation: vec![],
        });
        e.retained = vec![true; 3];
        e.variable_length = true;
        // Path 1 halves at 4: (1-1)+(0-1) = -1 over 2 terms; path 2 at 2: (1-0) over 1 term.
        assert!((t1(&e, TestFunction::Identity).unwrap() - 0.0).abs() < 1e-15);
        // k = 2: path 1 (len 5) terms t=0,1: (0-1)*1 + (1-1)*0 = -1; path 2 is shorter than k + 2.
        assert!((t2(&e, 2).unwrap() - (-1.0 / 5.0)).abs() < 1e-15);
    }

    #[test]
    fn language_ensembles_must_be_split() {
        let path = SamplePath {
            values: vec![Sample::pair(true, true); 4],
            path_seed: 0,
            permutation: vec![],
        };
        let e = PathEnsemble::new(TaskKind::NaturalLanguage, 4, vec![path], 0).unwrap();
        assert!(t1(&e, TestFunction::Identity).is_err());
        assert!(t2(&e, 2).is_err());
    }

    #[test]
    fn mle_examples() {
        let bits = |v: &[u8]| v.iter().map(|&b| Sample::binary(b).unwrap()).collect::<Vec<_>>();
        assert_eq!(mle(&bits(&[1, 1, 0, 0]), Family::Bernoulli).unwrap(), 0.5);
        assert_eq!(mle(&bits(&[1; 7]), Family::Bernoulli).unwrap(), 1.0);
        assert_eq!(
            mle(&[Sample::real(1.0), Sample::real(3.0)], Family::GaussianKnownVariance).unwrap(),
            2.0
        );
        assert!(mle(&[], Family::Bernoulli).is_err());
        assert!(mle(&[Sample::real(1.0)], Family::Bernoulli).is_err());
    }

    #[test]
    fn t3_examples() {
        let e = ensemble(TaskKind::Gaussian, vec![vec![0.2, 0.4]; 5]);
        assert_eq!(t3(&e, Family::GaussianKnownVariance).unwrap(), 0.0);
        let e = ensemble(TaskKind::Gaussian, vec![vec![0.2, 0.4]; 3]);
        assert!(t3(&e, Family::GaussianKnownVariance).is_err());
        // Path MLEs 0, 0.25, 0.5, 0.75, 1 -> IQR 0.5
        let e = ensemble(
            TaskKind::Bernoulli,
            (0..5).map(|i| (0..4).map(|t| f64::from(u8::from(t < i))).collect()).collect(),
        );
        assert_eq!(t3(&e, Family::Bernoulli).unwrap(), 0.5);
    }

    #[test]
    fn test_function_serde() {
        let json = serde_json::to_string(&[TestFunction::Identity, TestFunction::Square]).unwrap();
        assert_eq!(json, r#"["z","z^2"]"#);
        let back: Vec<TestFunction> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![TestFunction::Identity, TestFunction::Square]);
        assert!(serde_json::from_str::<TestFunction>("\"cube\"").is_err());
        let cube = TestFunction::Custom { name: "z^3", f: |z| z * z * z };
        assert_eq!(cube.apply(2.0), 8.0);
    }

    proptest! {
        #[test]
        fn t1_and_t2_match_the_literal_sums(
            (j, half) in (1usize..6, 3usize..8),
            seed in prop::collection::vec(-50i32..50, 96),
            k in 2usize..5,
        ) {
            let m = 2 * half;
            let paths: Vec<Vec<f64>> = (0..j)
                .map(|p| (0..m).map(|i| f64::from(seed[(p * m + i) % seed.len()]) / 10.0).collect())
                .collect();
            let e = ensemble(TaskKind::Gaussian, paths.clone());
            prop_assert!((t1(&e, TestFunction::Identity).unwrap() - t1_oracle(&paths, |z| z)).abs() < 1e-12);
            prop_assert!((t1(&e, TestFunction::Square).unwrap() - t1_oracle(&paths, |z| z * z)).abs() < 1e-10);
            prop_assert!((t2(&e, k).unwrap() - t2_oracle(&paths, k)).abs() < 1e-12);
        }

        #[test]
        fn statistics_are_deterministic(values in prop::collection::vec(-99i32..99, 40)) {
            let paths: Vec<Vec<f64>> = values.chunks(8).map(|c| c.iter().map(|&v| f64::from(v) / 10.0).collect()).collect();
            let e = ensemble(TaskKind::Gaussian, paths);
            prop_assert_eq!(t1(&e, TestFunction::Identity).unwrap().to_bits(), t1(&e, TestFunction::Identity).unwrap().to_bits());
            prop_assert_eq!(t2(&e, 2).unwrap().to_bits(), t2(&e, 2).unwrap().to_bits());
            prop_assert_eq!(t3(&e, Family::GaussianKnownVariance).unwrap().to_bits(), t3(&e, Family::GaussianKnownVariance).unwrap().to_bits());
        }
    }
}
