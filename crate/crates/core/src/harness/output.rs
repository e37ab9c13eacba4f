use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{Pipeline, RunRecord};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DELTA_E_FILE: &str = "delta_e.csv";
pub const SET_SIZE_FILE: &str = "set_size.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";

/// Every file written by [`emit_outputs`], in write order.
pub const OUTPUT_FILES: [&str; 5] = [SUMMARY_FILE, DELTA_E_FILE, SET_SIZE_FILE, COVERAGE_FILE, ACCURACY_FILE];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyChange {
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seeds: usize,
    pub accuracy_fed: f64,
    pub accuracy_gen: f64,
    pub delta_acc_pct: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per seed, the test accuracy of one (dataset, K, pipeline) run.
fn accuracy_by_seed(records: &[RunRecord], pipeline: Pipeline) -> BTreeMap<(String, usize), BTreeMap<u64, f64>> {
    let mut out: BTreeMap<(String, usize), BTreeMap<u64, f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.pipeline == pipeline) {
        out.entry((r.dataset.clone(), r.k)).or_default().entry(r.seed).or_insert(r.accuracy);
    }
    out
}

/// Relative change of mean test accuracy from fed to gen per (dataset, K).
pub fn accuracy_report(records: &[RunRecord]) -> Result<Vec<AccuracyChange>> {
    let fed = accuracy_by_seed(records, Pipeline::Fed);
    let gen = accuracy_by_seed(records, Pipeline::Gen);
    let mut out = Vec::new();
    for ((dataset, k), g) in &gen {
        let Some(f) = fed.get(&(dataset.clone(), *k)) else {
            continue;
        };
        if f.keys().ne(g.keys()) {
            return Err(Error::Report(format!(
                "{dataset} K={k}: fed seeds {:?} differ from gen seeds {:?}",
                f.keys().collect::<Vec<_>>(),
                g.keys().collect::<Vec<_>>()
            )));
        }
        let af = mean(&f.values().copied().collect::<Vec<_>>());
        let ag = mean(&g.values().copied().collect::<Vec<_>>());
        out.push(AccuracyChange {
            dataset: dataset.clone(),
            k: *k,
            seeds: f.len(),
            accuracy_fed: af,
            accuracy_gen: ag,
            delta_acc_pct: if af == 0.0 { 0.0 } else { (ag - af) / af * 100.0 },
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct DeltaERow<'a> {
    dataset: &'a str,
    seed: u64,
    #[serde(rename = "K")]
    k: usize,
    delta_e_pct: f64,
}

#[derive(Serialize)]
struct SetSizeRow {
    dataset: String,
    #[serde(rename = "K")]
    k: usize,
    pipeline: Pipeline,
    model: String,
    score: String,
    alpha: f64,
    qmethod: String,
    runs: usize,
    coverage_mean: f64,
    coverage_std: f64,
    inefficiency_mean: f64,
    inefficiency_std: f64,
    accuracy_mean: f64,
}

#[derive(Serialize)]
struct CoverageRow<'a> {
    dataset: &'a str,
    #[serde(rename = "K")]
    k: usize,
    pipeline: Pipeline,
    score: &'a str,
    qmethod: &'a str,
    seed: u64,
    target_coverage: f64,
    coverage: f64,
    inefficiency: f64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes the summary CSV and the per-figure long-format files into `dir`.
///
/// All content is rendered before anything touches the disk; an empty record
/// list is an error and writes nothing.
pub fn emit_outputs(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Report("no records to emit".into()));
    }

    let summary = csv_bytes(
        records,
        &[
            "dataset", "seed", "K", "pipeline", "model", "score", "alpha", "qmethod", "coverage", "inefficiency",
            "accuracy", "qhat", "delta_e_pct", "scalars_comm", "wall_ms",
        ],
    )?;

    let mut seen = BTreeSet::new();
    let delta_rows: Vec<DeltaERow> = records
        .iter()
        .filter(|r| seen.insert((r.dataset.clone(), r.seed, r.k)))
        .map(|r| DeltaERow {
            dataset: &r.dataset,
            seed: r.seed,
            k: r.k,
            delta_e_pct: r.delta_e_pct,
        })
        .collect();
    let delta_e = csv_bytes(delta_rows, &["dataset", "seed", "K", "delta_e_pct"])?;

    type GroupKey = (String, usize, Pipeline, String, String, u64, String);
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.dataset.clone(),
                r.k,
                r.pipeline,
                r.model.clone(),
                r.score.clone(),
                r.alpha.to_bits(),
                r.qmethod.clone(),
            ))
            .or_default()
            .push(r);
    }
    let set_rows = groups.iter().map(|((dataset, k, pipeline, model, score, alpha, qmethod), rs)| {
        let cov: Vec<f64> = rs.iter().map(|r| r.coverage).collect();
        let ineff: Vec<f64> = rs.iter().map(|r| r.inefficiency).collect();
        let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
        SetSizeRow {
            dataset: dataset.clone(),
            k: *k,
            pipeline: *pipeline,
            model: model.clone(),
            score: score.clone(),
            alpha: f64::from_bits(*alpha),
            qmethod: qmethod.clone(),
            runs: rs.len(),
            coverage_mean: mean(&cov),
            coverage_std: std_dev(&cov),
            inefficiency_mean: mean(&ineff),
            inefficiency_std: std_dev(&ineff),
            accuracy_mean: mean(&acc),
        }
    });
    let set_size = csv_bytes(
        set_rows,
        &[
            "dataset", "K", "pipeline", "model", "score", "alpha", "qmethod", "runs", "coverage_mean",
            "coverage_std", "inefficiency_mean", "inefficiency_std", "accuracy_mean",
        ],
    )?;

    let mut cov_rows: Vec<CoverageRow> = records
        .iter()
        .map(|r| CoverageRow {
            dataset: &r.dataset,
            k: r.k,
            pipeline: r.pipeline,
            score: &r.score,
            qmethod: &r.qmethod,
            seed: r.seed,
            target_coverage: 1.0 - r.alpha,
            coverage: r.coverage,
            inefficiency: r.inefficiency,
        })
        .collect();
    cov_rows.sort_by(|a, b| {
        (a.dataset, a.k, a.pipeline, a.score, a.qmethod, a.seed)
            .cmp(&(b.dataset, b.k, b.pipeline, b.score, b.qmethod, b.seed))
            .then(a.target_coverage.total_cmp(&b.target_coverage))
    });
    let coverage = csv_bytes(
        cov_rows,
        &[
            "dataset", "K", "pipeline", "score", "qmethod", "seed", "target_coverage", "coverage", "inefficiency",
        ],
    )?;

    let accuracy = csv_bytes(
        accuracy_report(records)?,
        &["dataset", "K", "seeds", "accuracy_fed", "accuracy_gen", "delta_acc_pct"],
    )?;

    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in OUTPUT_FILES.iter().zip([summary, delta_e, set_size, coverage, accuracy]) {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}
