//! CSV and JSON persistence for datasets, posterior draws and reports.
//!
//! Matrices are written row-major with a header row. Predictor and response
//! indices are 0-based; group ids are 1-based, as in `GroupedDesign`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceReport;
use crate::metrics::{EvaluationSummary, MeanSe};
use crate::pipeline::{BenchSummary, ReplicateOutcome};
use crate::model::{
    validate_dataset, Draw, GroupedDesign, PosteriorSamples, ResponseMatrix, SampleMetadata, TraceStats,
};

pub const X_FILE: &str = "X.csv";
pub const Y_FILE: &str = "Y.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const SAMPLES_META_FILE: &str = "samples.json";
pub const REPORT_FILE: &str = "report.json";
pub const PIP_TABLE_FILE: &str = "pip_table.csv";
pub const SUBSETS_FILE: &str = "subsets.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_DETAIL_FILE: &str = "bench_detail.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";

fn file_err(path: &Path, e: impl Display) -> Error {
    Error::File { path: path.display().to_string(), message: e.to_string() }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| file_err(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| file_err(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T>
where
    T::Err: Display,
{
    field.trim().parse().map_err(|e| parse_err(path, line, format!("{field:?}: {e}")))
}

/// Writes `m` with header `prefix1, prefix2, ...`.
pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record((1..=m.ncols()).map(|k| format!("{prefix}{k}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headered numeric CSV; every row must match the header width.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = reader(path)?;
    let width = r.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for field in rec.iter() {
            values.push(parse_field::<f64>(path, i + 2, field)?);
        }
        rows += 1;
    }
    if values.len() != rows * width {
        return Err(parse_err(path, 0, "ragged rows"));
    }
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

pub fn write_column<T: Display>(path: &Path, name: &str, values: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([name])?;
    for v in values {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_column<T: FromStr>(path: &Path) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let mut r = reader(path)?;
    if r.headers()?.len() != 1 {
        return Err(parse_err(path, 1, "expected a single column"));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| parse_field(path, i + 2, &rec?[0]))
        .collect()
}

/// Reads a 0/1 annotation column.
pub fn read_annotations(path: &Path) -> Result<Vec<u8>> {
    let raw: Vec<String> = read_column(path)?;
    raw.iter()
        .enumerate()
        .map(|(i, v)| match v.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(parse_err(path, i + 2, format!("annotation must be 0 or 1, got {other:?}"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: GroupedDesign,
    pub y: ResponseMatrix,
    pub true_b: Option<DMatrix<f64>>,
}

pub fn write_dataset(
    dir: &Path,
    design: &GroupedDesign,
    y: &ResponseMatrix,
    true_b: Option<&DMatrix<f64>>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join(X_FILE), "x", &design.x)?;
    write_matrix(&dir.join(Y_FILE), "y", &y.y)?;
    write_column(&dir.join(GROUPS_FILE), "group", &design.group_of)?;
    if let Some(b) = true_b {
        write_matrix(&dir.join(TRUTH_FILE), "b", b)?;
    }
    if let Some(a) = &design.annotations {
        write_column(&dir.join(ANNOTATIONS_FILE), "annotation", a)?;
    }
    Ok(())
}

/// Loads and validates a dataset directory. `truth.csv` and
/// `annotations.csv` are optional.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let x = read_matrix(&dir.join(X_FILE))?;
    let y = read_matrix(&dir.join(Y_FILE))?;
    let group_of = read_column(&dir.join(GROUPS_FILE))?;
    let annotations = optional(&dir.join(ANNOTATIONS_FILE), read_annotations)?;
    let true_b = optional(&dir.join(TRUTH_FILE), read_matrix)?;
    let (design, y) = validate_dataset(GroupedDesign::new(x, group_of, annotations), ResponseMatrix::new(y))?;
    if let Some(b) = &true_b {
        if b.shape() != (design.p(), y.q()) {
            return Err(Error::DimensionMismatch(format!("truth is {:?}, expected {:?}", b.shape(), (design.p(), y.q()))));
        }
    }
    Ok(Dataset { design, y, true_b })
}

fn optional<T>(path: &Path, read: impl Fn(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| file_err(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path).map_err(|e| file_err(path, e))?)?)
}

/// File names of one chain's draws, relative to the samples directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFiles {
    pub stream_id: u64,
    pub draws: usize,
    pub z: String,
    pub b: String,
    pub sigma: String,
    pub scalars: String,
}

/// JSON sidecar describing a samples directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesSidecar {
    pub metadata: SampleMetadata,
    pub chains: Vec<ChainFiles>,
    /// Free-form run settings (sampler config, priors) recorded by the caller.
    pub settings: serde_json::Value,
}

fn cell_header(name: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut h = vec!["draw".to_string()];
    for j in 0..rows {
        for k in 0..cols {
            h.push(format!("{name}_{j}_{k}"));
        }
    }
    h
}

fn write_cells<T, F>(path: &Path, header: Vec<String>, mats: &[&DMatrix<T>], fmt: F) -> Result<()>
where
    T: nalgebra::Scalar,
    F: Fn(&T) -> String,
{
    let mut w = writer(path)?;
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (t, m) in mats.iter().enumerate() {
        rec.clear();
        rec.push(t.to_string());
        for j in 0..m.nrows() {
            for k in 0..m.ncols() {
                rec.push(fmt(&m[(j, k)]));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_cells<T, F>(path: &Path, rows: usize, cols: usize, parse: F) -> Result<Vec<DMatrix<T>>>
where
    T: nalgebra::Scalar,
    F: Fn(usize, &str) -> Result<T>,
{
    let mut r = reader(path)?;
    if r.headers()?.len() != rows * cols + 1 {
        return Err(parse_err(path, 1, format!("expected {} columns", rows * cols + 1)));
    }
    let mut out = Vec::new();
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = t + 2;
        if parse_field::<usize>(path, line, &rec[0])? != t {
            return Err(parse_err(path, line, "draw index out of sequence"));
        }
        let vals = rec.iter().skip(1).map(|f| parse(line, f)).collect::<Result<Vec<T>>>()?;
        out.push(DMatrix::from_row_slice(rows, cols, &vals));
    }
    Ok(out)
}

/// Writes one set of per-chain CSVs per element of `chains` plus `samples.json`.
pub fn write_samples(dir: &Path, chains: &[PosteriorSamples], settings: serde_json::Value) -> Result<()> {
    let first = chains.first().ok_or(Error::EmptySamples)?;
    fs::create_dir_all(dir)?;
    let (p, q) = (first.p(), first.q());
    let mut files = Vec::with_capacity(chains.len());
    for (c, s) in chains.iter().enumerate() {
        s.check()?;
        if s.metadata.stream_ids.len() != 1 {
            return Err(Error::InvalidConfig("write_samples expects unmerged chains".into()));
        }
        let cf = ChainFiles {
            stream_id: s.metadata.stream_ids[0],
            draws: s.len(),
            z: format!("chain{c}_z.csv"),
            b: format!("chain{c}_b.csv"),
            sigma: format!("chain{c}_sigma.csv"),
            scalars: format!("chain{c}_scalars.csv"),
        };
        let zs: Vec<&DMatrix<bool>> = s.draws.iter().map(|d| &d.z).collect();
        write_cells(&dir.join(&cf.z), cell_header("z", p, q), &zs, |&v| if v { "1".into() } else { "0".into() })?;
        let bs: Vec<&DMatrix<f64>> = s.draws.iter().map(|d| &d.b).collect();
        write_cells(&dir.join(&cf.b), cell_header("b", p, q), &bs, f64::to_string)?;
        let sig: Vec<&DMatrix<f64>> = s.sigma.iter().collect();
        write_cells(&dir.join(&cf.sigma), cell_header("sigma", q, q), &sig, f64::to_string)?;
        write_scalars(&dir.join(&cf.scalars), s)?;
        files.push(cf);
    }
    let mut metadata = first.metadata.clone();
    metadata.stream_ids = files.iter().map(|f| f.stream_id).collect();
    write_json(&dir.join(SAMPLES_META_FILE), &SamplesSidecar { metadata, chains: files, settings })
}

fn write_scalars(path: &Path, s: &PosteriorSamples) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["draw", "sweep", "s2", "log_likelihood", "active_entries", "d1"])?;
    for t in 0..s.len() {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            t.to_string(),
            opt(s.trace.get(t).map(|tr| tr.sweep.to_string())),
            opt(s.s2.get(t).map(f64::to_string)),
            opt(s.trace.get(t).map(|tr| tr.log_likelihood.to_string())),
            opt(s.trace.get(t).map(|tr| tr.active_entries.to_string())),
            opt(s.d1.get(t).map(f64::to_string)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

type Scalars = (Vec<f64>, Vec<f64>, Vec<TraceStats>);

fn read_scalars(path: &Path, draws: usize) -> Result<Scalars> {
    let mut r = reader(path)?;
    let (mut s2, mut d1, mut trace) = (Vec::new(), Vec::new(), Vec::new());
    let mut count = 0;
    for (t, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = t + 2;
        if rec.len() != 6 {
            return Err(parse_err(path, line, "expected 6 fields"));
        }
        if !rec[2].is_empty() {
            s2.push(parse_field(path, line, &rec[2])?);
        }
        if !rec[1].is_empty() {
            trace.push(TraceStats {
                sweep: parse_field(path, line, &rec[1])?,
                log_likelihood: parse_field(path, line, &rec[3])?,
                active_entries: parse_field(path, line, &rec[4])?,
            });
        }
        if !rec[5].is_empty() {
            d1.push(parse_field(path, line, &rec[5])?);
        }
        count += 1;
    }
    if count != draws {
        return Err(parse_err(path, 0, format!("expected {draws} rows, found {count}")));
    }
    Ok((s2, d1, trace))
}

/// Reads every chain listed in `samples.json`, in order.
pub fn read_samples(dir: &Path) -> Result<(Vec<PosteriorSamples>, SamplesSidecar)> {
    let sidecar: SamplesSidecar = read_json(&dir.join(SAMPLES_META_FILE))?;
    let (p, q) = (sidecar.metadata.p, sidecar.metadata.q);
    let mut chains = Vec::with_capacity(sidecar.chains.len());
    for cf in &sidecar.chains {
        let path = |name: &str| -> PathBuf { dir.join(name) };
        let zp = path(&cf.z);
        let z = read_cells(&zp, p, q, |line, f| match f {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(&zp, line, format!("indicator must be 0 or 1, got {other:?}"))),
        })?;
        let bp = path(&cf.b);
        let b = read_cells(&bp, p, q, |line, f| parse_field(&bp, line, f))?;
        let sp = path(&cf.sigma);
        let sigma = read_cells(&sp, q, q, |line, f| parse_field(&sp, line, f))?;
        if z.len() != cf.draws || b.len() != cf.draws {
            return Err(Error::Parse(format!("chain {} has {} z and {} b draws, expected {}", cf.stream_id, z.len(), b.len(), cf.draws)));
        }
        let (s2, d1, trace) = read_scalars(&path(&cf.scalars), cf.draws)?;
        let metadata = SampleMetadata { stream_ids: vec![cf.stream_id], ..sidecar.metadata.clone() };
        let samples = PosteriorSamples {
            draws: z.into_iter().zip(b).map(|(z, b)| Draw { z, b }).collect(),
            sigma,
            s2,
            d1,
            trace,
            metadata,
        };
        samples.check()?;
        chains.push(samples);
    }
    if chains.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok((chains, sidecar))
}

/// Writes `report.json`, `pip_table.csv` and `subsets.csv`.
pub fn write_report(dir: &Path, report: &InferenceReport, group_of: Option<&[usize]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(REPORT_FILE), report)?;

    let p = report.predictor_pip.len();
    let mut selected = vec![false; p];
    for &j in &report.bfdr.selected {
        selected[j] = true;
    }
    let mut w = writer(&dir.join(PIP_TABLE_FILE))?;
    let mut header = vec!["predictor".to_string(), "group".into(), "pip".into(), "selected".into()];
    header.extend((0..report.entry_pip.ncols()).map(|k| format!("pip_{k}")));
    w.write_record(&header)?;
    for j in 0..p {
        let mut rec = vec![
            j.to_string(),
            group_of.map(|g| g[j].to_string()).unwrap_or_default(),
            report.predictor_pip[j].to_string(),
            (selected[j] as u8).to_string(),
        ];
        rec.extend(report.entry_pip.row(j).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join(SUBSETS_FILE))?;
    w.write_record(["predictor", "subset", "size", "pip", "z"])?;
    for b in &report.best_subsets {
        let subset = b.subset.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([b.predictor.to_string(), subset, b.subset.len().to_string(), b.pip.to_string(), b.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Headered CSV of any flat serializable records.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<InferenceReport> {
    read_json(&dir.join(REPORT_FILE))
}

fn mean_se_cell(m: &MeanSe) -> String {
    format!("{:.4} ({:.4})", m.mean, m.se)
}

/// One-row results table: entry-level AUC, FDR, FOR and MSE as `mean (se)`.
pub fn write_bench_table(path: &Path, scenario: &str, summary: &BenchSummary) -> Result<()> {
    let e = &summary.entry;
    let mut w = writer(path)?;
    w.write_record(["scenario", "replicates", "AUC", "FDR", "FOR", "MSE"])?;
    w.write_record([
        scenario.to_string(),
        e.replicates.to_string(),
        mean_se_cell(&e.auc),
        mean_se_cell(&e.fdr),
        mean_se_cell(&e.for_rate),
        mean_se_cell(&e.mse),
    ])?;
    w.flush()?;
    Ok(())
}

/// Numeric means and standard errors at both the entry and predictor level.
pub fn write_bench_detail(path: &Path, scenario: &str, summary: &BenchSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "scenario", "level", "replicates", "auc", "auc_se", "fdr", "fdr_se", "for", "for_se", "mse", "mse_se", "noise_mse",
    ])?;
    let mut row = |level: &str, s: &EvaluationSummary| -> Result<()> {
        let mut rec = vec![scenario.to_string(), level.to_string(), s.replicates.to_string()];
        for m in [&s.auc, &s.fdr, &s.for_rate, &s.mse] {
            rec.push(m.mean.to_string());
            rec.push(m.se.to_string());
        }
        rec.push(summary.noise_mse.to_string());
        w.write_record(&rec)?;
        Ok(())
    };
    row("entry", &summary.entry)?;
    row("predictor", &summary.predictor)?;
    w.flush()?;
    Ok(())
}

/// Per-replicate rows, flushed one at a time so partial runs leave usable output.
pub struct ReplicateLog {
    writer: csv::Writer<fs::File>,
}

impl ReplicateLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = writer(path)?;
        writer.write_record([
            "replicate", "entry_auc", "entry_fdr", "entry_for", "predictor_auc", "predictor_fdr", "predictor_for",
            "mse", "noise_mse", "exact_subsets", "causal_predictors",
        ])?;
        writer.flush()?;
        Ok(ReplicateLog { writer })
    }

    pub fn push(&mut self, o: &ReplicateOutcome) -> Result<()> {
        self.writer.write_record([
            o.replicate.to_string(),
            o.entry.auc.to_string(),
            o.entry.fdr.to_string(),
            o.entry.for_rate.to_string(),
            o.predictor.auc.to_string(),
            o.predictor.fdr.to_string(),
            o.predictor.for_rate.to_string(),
            o.entry.mse.to_string(),
            o.noise_mse.to_string(),
            o.exact_subsets.map(|e| e.to_string()).unwrap_or_default(),
            o.causal_predictors.to_string(),
        ])?;
        self.writer.flush()?;
        Ok(())
    }
}
