//! Columnar text persistence for datasets and ensembles.
//!
//! ```text
//! # mprobe-ensemble v1
//! # kind=bernoulli m=4 ensemble_seed=17 nominal_j=2 variable_length=0
//! path_seed	permutation	values	retained
//! 0	2,0,1	1,0,0,1	1
//! 1	0,1,2	1,1,1,1	0
//! # failed	5	reason text
//! ```
//!
//! Binary values are `0`/`1`, reals use one decimal, language records are
//! `x:y` (e.g. `1:0`). Datasets use the same layout with a single row and a
//! `# task=<json>` header line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{FailedPath, ObservedDataset, PathEnsemble, Sample, SamplePath, TaskKind, TaskSpec};

const ENSEMBLE_MAGIC: &str = "# mprobe-ensemble v1";
const DATASET_MAGIC: &str = "# mprobe-dataset v1";
const COLUMNS: &str = "path_seed\tpermutation\tvalues\tretained";

fn render_value(s: &Sample, out: &mut String) {
    match *s {
        Sample::Binary(b) => out.push(if b { '1' } else { '0' }),
        Sample::Real(v) => {
            let _ = write!(out, "{v:.1}");
        }
        Sample::Pair { x, y } => {
            let _ = write!(out, "{}:{}", u8::from(x), u8::from(y));
        }
    }
}

fn parse_value(token: &str, kind: TaskKind) -> Result<Sample> {
    let bad = || Error::Format(format!("cannot read {token:?} as a {kind} sample"));
    let bit = |t: &str| match t {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(bad()),
    };
    match kind {
        TaskKind::Bernoulli => bit(token).map(Sample::Binary),
        TaskKind::Gaussian => token.parse::<f64>().map(Sample::real).map_err(|_| bad()),
        TaskKind::NaturalLanguage => {
            let (x, y) = token.split_once(':').ok_or_else(bad)?;
            Ok(Sample::pair(bit(x)?, bit(y)?))
        }
    }
}

fn join<T>(items: &[T], mut each: impl FnMut(&T, &mut String)) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        each(item, &mut out);
    }
    out
}

fn row(out: &mut String, seed: u64, permutation: &[usize], values: &[Sample], retained: bool) {
    let perm = join(permutation, |i, o| {
        let _ = write!(o, "{i}");
    });
    let vals = join(values, render_value);
    let _ = writeln!(out, "{seed}\t{perm}\t{vals}\t{}", u8::from(retained));
}

struct Row {
    seed: u64,
    permutation: Vec<usize>,
    values: Vec<Sample>,
    retained: bool,
}

fn parse_row(line: &str, kind: TaskKind) -> Result<Row> {
    let cols: Vec<&str> = line.split('\t').collect();
    let [seed, perm, vals, retained] = cols[..] else {
        return Err(Error::Format(format!("expected 4 tab-separated columns: {line:?}")));
    };
    let seed = seed.parse().map_err(|_| Error::Format(format!("bad seed {seed:?}")))?;
    let permutation = if perm.is_empty() {
        Vec::new()
    } else {
        perm.split(',')
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad permutation entry {t:?}"))))
            .collect::<Result<_>>()?
    };
    let values = if vals.is_empty() {
        Vec::new()
    } else {
        vals.split(',').map(|t| parse_value(t, kind)).collect::<Result<_>>()?
    };
    let retained = match retained {
        "1" => true,
        "0" => false,
        other => return Err(Error::Format(format!("bad retained flag {other:?}"))),
    };
    Ok(Row {
        seed,
        permutation,
        values,
        retained,
    })
}

fn header_fields(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.trim_start_matches('#').split_whitespace().filter_map(|kv| kv.split_once('='))
}

fn kind_from_str(s: &str) -> Result<TaskKind> {
    match s {
        "bernoulli" => Ok(TaskKind::Bernoulli),
        "gaussian" => Ok(TaskKind::Gaussian),
        "natural-language" => Ok(TaskKind::NaturalLanguage),
        other => Err(Error::Format(format!("unknown task kind {other:?}"))),
    }
}

pub fn ensemble_to_string(e: &PathEnsemble) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ENSEMBLE_MAGIC}");
    let _ = writeln!(
        out,
        "# kind={} m={} ensemble_seed={} nominal_j={} variable_length={}",
        e.kind,
        e.m,
        e.ensemble_seed,
        e.nominal_j,
        u8::from(e.variable_length)
    );
    let _ = writeln!(out, "{COLUMNS}");
    for (p, &keep) in e.paths.iter().zip(&e.retained) {
        row(&mut out, p.path_seed, &p.permutation, &p.values, keep);
    }
    for f in &e.failed {
        let reason = f.reason.replace(['\n', '\t'], " ");
        let _ = writeln!(out, "# failed\t{}\t{reason}", f.path_seed);
    }
    out
}

pub fn ensemble_from_str(text: &str) -> Result<PathEnsemble> {
    let mut lines = text.lines();
    if lines.next() != Some(ENSEMBLE_MAGIC) {
        return Err(Error::Format("missing ensemble header".into()));
    }
    let meta = lines.next().ok_or_else(|| Error::Format("missing metadata line".into()))?;
    let (mut kind, mut m, mut seed, mut nominal_j) = (None, None, None, None);
    let mut variable_length = false;
    for (k, v) in header_fields(meta) {
        let num = || v.parse::<u64>().map_err(|_| Error::Format(format!("bad {k} value {v:?}")));
        match k {
            "kind" => kind = Some(kind_from_str(v)?),
            "m" => m = Some(num()? as usize),
            "ensemble_seed" => seed = Some(num()?),
            "nominal_j" => nominal_j = Some(num()? as usize),
            "variable_length" => variable_length = num()? == 1,
            _ => {}
        }
    }
    let (Some(kind), Some(m), Some(ensemble_seed), Some(nominal_j)) = (kind, m, seed, nominal_j) else {
        return Err(Error::Format(format!("incomplete metadata line {meta:?}")));
    };
    if lines.next() != Some(COLUMNS) {
        return Err(Error::Format("missing column header".into()));
    }
    let mut e = PathEnsemble {
        kind,
        m,
        paths: Vec::new(),
        retained: Vec::new(),
        ensemble_seed,
        nominal_j,
        failed: Vec::new(),
        variable_length,
    };
    for line in lines {
        if let Some(rest) = line.strip_prefix("# failed\t") {
            let (seed, reason) = rest.split_once('\t').unwrap_or((rest, ""));
            e.failed.push(FailedPath {
                path_seed: seed.parse().map_err(|_| Error::Format(format!("bad failed seed {seed:?}")))?,
                reason: reason.to_string(),
            });
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let r = parse_row(line, kind)?;
        e.paths.push(SamplePath {
            values: r.values,
            path_seed: r.seed,
            permutation: r.permutation,
        });
        e.retained.push(r.retained);
    }
    Ok(e)
}

pub fn dataset_to_string(d: &ObservedDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC}");
    let task = serde_json::to_string(d.task()).expect("task spec serializes");
    let _ = writeln!(out, "# task={task}");
    let _ = writeln!(out, "{COLUMNS}");
    let identity: Vec<usize> = (0..d.n()).collect();
    row(&mut out, d.generation_seed().unwrap_or(0), &identity, d.samples(), true);
    out
}

/// Read a dataset file. `task` overrides the task recorded in the file (its
/// kind must match); pass `None` to use the recorded one.
pub fn dataset_from_str(text: &str, task: Option<TaskSpec>) -> Result<ObservedDataset> {
    let mut lines = text.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(Error::Format("missing dataset header".into()));
    }
    let task_line = lines.next().ok_or_else(|| Error::Format("missing task line".into()))?;
    let recorded: TaskSpec = serde_json::from_str(
        task_line
            .strip_prefix("# task=")
            .ok_or_else(|| Error::Format(format!("bad task line {task_line:?}")))?,
    )
    .map_err(|e| Error::Format(format!("bad task spec: {e}")))?;
    let task = match task {
        Some(t) if t.kind() != recorded.kind() => {
            return Err(Error::KindMismatch {
                expected: t.kind(),
                found: recorded.kind(),
            })
        }
        Some(t) => t,
        None => recorded,
    };
    if lines.next() != Some(COLUMNS) {
        return Err(Error::Format("missing column header".into()));
    }
    let data = lines
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Format("dataset file has no data row".into()))?;
    let r = parse_row(data, task.kind())?;
    let d = ObservedDataset::new(task, r.values, Some(r.seed))?;
    d.permuted(&r.permutation)
}

pub fn write_ensemble(path: &Path, e: &PathEnsemble) -> Result<()> {
    Ok(std::fs::write(path, ensemble_to_string(e))?)
}

pub fn read_ensemble(path: &Path) -> Result<PathEnsemble> {
    ensemble_from_str(&std::fs::read_to_string(path)?)
}

pub fn write_dataset(path: &Path, d: &ObservedDataset) -> Result<()> {
    Ok(std::fs::write(path, dataset_to_string(d))?)
}

pub fn read_dataset(path: &Path, task: Option<TaskSpec>) -> Result<ObservedDataset> {
    dataset_from_str(&std::fs::read_to_string(path)?, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_gen::generate_dataset;
    use crate::models::SyntheticModel;
    use crate::rng::RngStream;
    use crate::sampler::{filter_outlier_paths, generate_ensemble, Ordering, SamplingProtocol};
    use proptest::prelude::*;

    #[test]
    fn ensemble_layout() {
        let paths = vec![
            SamplePath {
                values: vec![Sample::pair(true, false), Sample::pair(false, false)],
                path_seed: 0,
                permutation: vec![1, 0],
            },
            SamplePath {
                values: vec![Sample::pair(true, true), Sample::pair(true, true)],
                path_seed: 1,
                permutation: vec![0, 1],
            },
        ];
        let mut e = PathEnsemble::new(TaskKind::NaturalLanguage, 2, paths, 17).unwrap();
        e.retained[1] = false;
        e.failed.push(FailedPath {
            path_seed: 2,
            reason: "parse\tfailure".into(),
        });
        let text = ensemble_to_string(&e);
        assert_eq!(
            text,
            "# mprobe-ensemble v1\n# kind=natural-language m=2 ensemble_seed=17 nominal_j=2 variable_length=0\n\
             path_seed\tpermutation\tvalues\tretained\n0\t1,0\t1:0,0:0\t1\n1\t0,1\t1:1,1:1\t0\n\
             # failed\t2\tparse failure\n"
        );
        let back = ensemble_from_str(&text).unwrap();
        assert_eq!(back.paths, e.paths);
        assert_eq!(back.retained, e.retained);
        assert_eq!(back.failed[0].reason, "parse failure");
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(ensemble_from_str("hello").is_err());
        let good = "# mprobe-ensemble v1\n# kind=bernoulli m=1 ensemble_seed=1 nominal_j=1\n\
                    path_seed\tpermutation\tvalues\tretained\n";
        assert!(ensemble_from_str(&format!("{good}0\t\t2\t1\n")).is_err());
        assert!(ensemble_from_str(&format!("{good}0\t\t1\n")).is_err());
        assert!(ensemble_from_str(&format!("{good}0\t\t1\t1\n")).is_ok());
    }

    #[test]
    fn dataset_round_trip_with_task() {
        let task = TaskSpec::gaussian(-1.0);
        let d = generate_dataset(&task, 30, &mut RngStream::new(4, 0)).unwrap();
        let text = dataset_to_string(&d);
        assert!(text.contains("# task={\"kind\":\"gaussian\",\"theta\":-1.0}"), "{text}");
        assert_eq!(dataset_from_str(&text, None).unwrap(), d);
        assert!(dataset_from_str(&text, Some(TaskSpec::bernoulli(0.5))).is_err());
    }

    proptest! {
        #[test]
        fn ensembles_round_trip(seed in any::<u64>(), kind_idx in 0usize..3, j in 4usize..12, m in 1usize..8) {
            let kind = [TaskKind::Bernoulli, TaskKind::Gaussian, TaskKind::NaturalLanguage][kind_idx];
            let task = match kind {
                TaskKind::Bernoulli => TaskSpec::bernoulli(0.3),
                TaskKind::Gaussian => TaskSpec::gaussian(2.0),
                TaskKind::NaturalLanguage => TaskSpec::natural_language(),
            };
            let d = generate_dataset(&task, 5, &mut RngStream::new(seed, 0)).unwrap();
            let p = SamplingProtocol { ordering: Ordering::PermutePerPath, j, m, ensemble_seed: seed };
            let e = generate_ensemble(&SyntheticModel::reference(kind), &p, &d).unwrap();
            let e = filter_outlier_paths(&e).unwrap();
            prop_assert_eq!(ensemble_from_str(&ensemble_to_string(&e)).unwrap(), e);
            prop_assert_eq!(dataset_from_str(&dataset_to_string(&d), None).unwrap(), d);
        }
    }
}
