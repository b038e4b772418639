//! On-disk formats: datasets as CSV with a JSON metadata sidecar, graphs as
//! edge-list text, and experiment results as CSV tables. Numbers are
//! written with shortest-roundtrip formatting, so write→read is lossless
//! and identical inputs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::MetricsReport;
use crate::design::{Dataset, DesignSpec};
use crate::error::{shape, Error, Result};
use crate::experiment::{Method, RunRecord, SummaryRow};
use crate::graph::Graph;
use crate::penalty::GroupStructure;

/// Metadata stored next to a dataset CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub beta_true: Option<Vec<f64>>,
    pub groups_true: Option<Vec<usize>>,
    pub sigma_noise: f64,
    pub seed: Option<u64>,
    pub spec: Option<DesignSpec>,
}

/// The sidecar lives next to the CSV with a `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn csv_error(context: &str, e: csv::Error) -> Error {
    Error::Parse(format!("{context}: {e}"))
}

/// Writes `x1..xp,y` rows plus the JSON sidecar (generating coefficients,
/// true groups, noise level, and the design that produced the data, when
/// known).
pub fn write_dataset(path: &Path, data: &Dataset<f64>, spec: Option<&DesignSpec>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error("writing dataset", e))?;
    let p = data.p();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)
        .map_err(|e| csv_error("writing dataset", e))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..p).map(|j| data.x[(i, j)].to_string()).collect();
        row.push(data.y[i].to_string());
        w.write_record(&row)
            .map_err(|e| csv_error("writing dataset", e))?;
    }
    w.flush()?;

    let sidecar = DatasetSidecar {
        beta_true: data.beta_true.as_ref().map(|b| b.iter().copied().collect()),
        groups_true: data.groups_true.as_ref().map(|g| g.labels().to_vec()),
        sigma_noise: data.sigma_noise,
        seed: spec.map(|s| s.seed),
        spec: spec.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Parse(format!("encoding sidecar: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a dataset CSV and, when present, its sidecar. Returns the design
/// from the sidecar so callers can re-derive anything else they need.
pub fn read_dataset(path: &Path) -> Result<(Dataset<f64>, Option<DesignSpec>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error("reading dataset", e))?;
    let headers = r
        .headers()
        .map_err(|e| csv_error("reading dataset", e))?
        .clone();
    if headers.len() < 2 || headers.iter().last() != Some("y") {
        return Err(Error::Parse(format!(
            "expected columns x1..xp then y, got {} columns ending in {:?}",
            headers.len(),
            headers.iter().last()
        )));
    }
    let p = headers.len() - 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error("reading dataset", e))?;
        if record.len() != p + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                rows.len() + 2,
                record.len(),
                p + 1
            )));
        }
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("dataset has no rows".into()));
    }
    let n = rows.len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = DVector::from_fn(n, |i, _| rows[i][p]);
    let mut data = Dataset::new(x, y)?;

    let mut spec = None;
    let sidecar_file = sidecar_path(path);
    if sidecar_file.exists() {
        let text = fs::read_to_string(&sidecar_file)?;
        let sidecar: DatasetSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("decoding sidecar: {e}")))?;
        if let Some(beta) = sidecar.beta_true {
            if beta.len() != p {
                return Err(shape(format!(
                    "sidecar coefficients have length {}, data has {p} columns",
                    beta.len()
                )));
            }
            data.beta_true = Some(DVector::from_vec(beta));
        }
        if let Some(labels) = sidecar.groups_true {
            if labels.len() != p {
                return Err(shape(format!(
                    "sidecar group labels cover {} coordinates, data has {p}",
                    labels.len()
                )));
            }
            data.groups_true = Some(GroupStructure::from_labels(labels)?);
        }
        data.sigma_noise = sidecar.sigma_noise;
        spec = sidecar.spec;
    }
    Ok((data, spec))
}

/// Edge-list text: first line the vertex count, then one `u v` pair per
/// line with u < v.
pub fn write_graph(path: &Path, g: &Graph) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{}\n", g.vertex_count()));
    for (u, v) in g.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let p: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("empty graph file".into()))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad vertex count: {e}")))?;
    let mut edges = Vec::new();
    for line in lines {
        let mut it = line.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(Error::Parse(format!("expected 'u v', got {line:?}"))),
        };
        let u: u32 = u
            .parse()
            .map_err(|e| Error::Parse(format!("bad vertex {u:?}: {e}")))?;
        let v: u32 = v
            .parse()
            .map_err(|e| Error::Parse(format!("bad vertex {v:?}: {e}")))?;
        edges.push((u, v));
    }
    Graph::from_edges(p, &edges)
}

/// Raw and thresholded coefficients, one coordinate per row.
pub fn write_beta_csv(path: &Path, raw: &DVector<f64>, thresholded: &DVector<f64>) -> Result<()> {
    if raw.len() != thresholded.len() {
        return Err(shape(format!(
            "raw and thresholded lengths differ: {} vs {}",
            raw.len(),
            thresholded.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error("writing estimates", e))?;
    w.write_record(["coordinate", "raw", "thresholded"])
        .map_err(|e| csv_error("writing estimates", e))?;
    for i in 0..raw.len() {
        w.write_record([
            (i + 1).to_string(),
            raw[i].to_string(),
            thresholded[i].to_string(),
        ])
        .map_err(|e| csv_error("writing estimates", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Objective value per iteration.
pub fn write_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error("writing trace", e))?;
    w.write_record(["iteration", "objective"])
        .map_err(|e| csv_error("writing trace", e))?;
    for (i, obj) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), obj.to_string()])
            .map_err(|e| csv_error("writing trace", e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_json(path: &Path, metrics: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Parse(format!("encoding metrics: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<T>()
        .map(Some)
        .map_err(|e| Error::Parse(format!("bad {what} {s:?}: {e}")))
}

const RUN_HEADER: [&str; 12] = [
    "run",
    "method",
    "lambda",
    "t",
    "iterations",
    "converged",
    "prediction_error",
    "estimation_error",
    "sensitivity",
    "specificity",
    "clustering_accuracy",
    "error",
];

/// One row per (replication, method); absent values are empty cells.
pub fn write_run_records_csv(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error("writing run records", e))?;
    w.write_record(RUN_HEADER)
        .map_err(|e| csv_error("writing run records", e))?;
    for r in runs {
        w.write_record([
            r.run.to_string(),
            r.method.as_str().to_string(),
            opt_cell(r.lambda),
            opt_cell(r.t),
            opt_cell(r.iterations),
            opt_cell(r.converged),
            opt_cell(r.metrics.prediction_error),
            opt_cell(r.metrics.estimation_error),
            opt_cell(r.metrics.sensitivity),
            opt_cell(r.metrics.specificity),
            opt_cell(r.metrics.clustering_accuracy),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_error("writing run records", e))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "heatflow_sd" => Ok(Method::HeatflowSd),
        "heatflow_cd" => Ok(Method::HeatflowCd),
        "group_lasso" => Ok(Method::GroupLasso),
        other => Err(Error::Parse(format!("unknown method {other:?}"))),
    }
}

pub fn read_run_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error("reading run records", e))?;
    let headers = r
        .headers()
        .map_err(|e| csv_error("reading run records", e))?;
    if headers.iter().ne(RUN_HEADER) {
        return Err(Error::Parse(format!(
            "unexpected run-record header: {headers:?}"
        )));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let rec = record.map_err(|e| csv_error("reading run records", e))?;
        if rec.len() != RUN_HEADER.len() {
            return Err(Error::Parse(format!(
                "run record with {} fields",
                rec.len()
            )));
        }
        out.push(RunRecord {
            run: rec[0]
                .parse()
                .map_err(|e| Error::Parse(format!("bad run index: {e}")))?,
            method: parse_method(&rec[1])?,
            lambda: parse_opt(&rec[2], "lambda")?,
            t: parse_opt(&rec[3], "t")?,
            iterations: parse_opt(&rec[4], "iteration count")?,
            converged: parse_opt(&rec[5], "converged flag")?,
            metrics: MetricsReport {
                prediction_error: parse_opt(&rec[6], "prediction error")?,
                estimation_error: parse_opt(&rec[7], "estimation error")?,
                sensitivity: parse_opt(&rec[8], "sensitivity")?,
                specificity: parse_opt(&rec[9], "specificity")?,
                clustering_accuracy: parse_opt(&rec[10], "clustering accuracy")?,
            },
            error: if rec[11].is_empty() {
                None
            } else {
                Some(rec[11].to_string())
            },
        });
    }
    Ok(out)
}

/// Mean (standard error) per metric per method, one method per row.
pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error("writing summary", e))?;
    let mut header = vec!["method".to_string(), "runs_ok".into(), "runs_failed".into()];
    for metric in [
        "prediction_error",
        "estimation_error",
        "sensitivity",
        "specificity",
        "clustering_accuracy",
    ] {
        header.push(format!("{metric}_mean"));
        header.push(format!("{metric}_se"));
    }
    w.write_record(&header)
        .map_err(|e| csv_error("writing summary", e))?;
    for row in summary {
        let mut rec = vec![
            row.method.as_str().to_string(),
            row.runs_ok.to_string(),
            row.runs_failed.to_string(),
        ];
        for cell in [
            row.prediction_error,
            row.estimation_error,
            row.sensitivity,
            row.specificity,
            row.clustering_accuracy,
        ] {
            rec.push(opt_cell(cell.map(|s| s.mean)));
            rec.push(opt_cell(cell.map(|s| s.se)));
        }
        w.write_record(&rec)
            .map_err(|e| csv_error("writing summary", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Persist an experiment or fit configuration for reproducibility.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("encoding JSON: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("decoding {path:?}: {e}")))
}
