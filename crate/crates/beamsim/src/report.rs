//! Report emission: CSV, JSON and per-series plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use crate::error::{AppError, Result};
use crate::evaluate::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "plotdata" => Ok(Self::Plotdata),
            other => Err(AppError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn nonempty(reports: &[EvalReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(AppError::Data("no reports to emit".into()));
    }
    Ok(())
}

/// One header line, then one row per report in the order given.
pub fn write_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    nonempty(reports)?;
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r).map_err(|e| AppError::Data(format!("writing csv: {e}")))?;
    }
    w.flush().map_err(|e| AppError::Data(format!("writing csv: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<EvalReport>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| AppError::Data(format!("reading csv: {e}"))))
        .collect()
}

pub fn write_json<W: Write>(reports: &[EvalReport], mut out: W) -> Result<()> {
    nonempty(reports)?;
    serde_json::to_writer_pretty(&mut out, reports).map_err(|e| AppError::Data(format!("writing json: {e}")))?;
    out.write_all(b"\n").map_err(|e| AppError::Data(format!("writing json: {e}")))
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<EvalReport>> {
    serde_json::from_reader(input).map_err(|e| AppError::Data(format!("reading json: {e}")))
}

/// Reads reports from a `.json` or `.csv` file.
pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_json(file),
        Some("csv") => read_csv(file),
        _ => Err(AppError::Config(format!(
            "{}: report files must end in .csv or .json",
            path.display()
        ))),
    }
}

/// Writes to `path` in the format implied by its extension (JSON for
/// `.json`, CSV otherwise).
pub fn save_reports(reports: &[EvalReport], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let out = std::io::BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "json") {
        write_json(reports, out)
    } else {
        write_csv(reports, out)
    }
}

type SeriesKey = (String, String, Option<String>, Option<String>);

fn series_key(r: &EvalReport) -> SeriesKey {
    (r.policy.clone(), r.task.clone(), r.train_scenario.clone(), r.test_scenario.clone())
}

fn file_stem(key: &SeriesKey) -> String {
    let mut parts = vec![key.0.clone(), key.1.replace("->", "_to_")];
    parts.extend(key.2.iter().cloned());
    parts.extend(key.3.iter().cloned());
    parts
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

/// A plot series: points sorted by SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(snr_db, top1, mean_rate)`
    pub points: Vec<(f64, f64, Option<f64>)>,
}

/// Groups reports by policy, task and scenario pair. Noiseless reports have
/// no SNR coordinate and are skipped.
pub fn plot_series(reports: &[EvalReport]) -> Vec<Series> {
    let mut groups: BTreeMap<SeriesKey, Vec<(f64, f64, Option<f64>)>> = BTreeMap::new();
    for r in reports {
        match r.snr_db {
            Some(snr) => groups.entry(series_key(r)).or_default().push((snr, r.top1, r.mean_rate)),
            None => warn!("skipping noiseless {} report in plot data", r.policy),
        }
    }
    groups
        .into_iter()
        .map(|(key, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: file_stem(&key),
                points,
            }
        })
        .collect()
}

/// Writes one whitespace-separated `.dat` file per series into `dir`.
pub fn write_plotdata(reports: &[EvalReport], dir: &Path) -> Result<Vec<PathBuf>> {
    nonempty(reports)?;
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut written = Vec::new();
    for s in plot_series(reports) {
        let path = dir.join(format!("{}.dat", s.name));
        let mut text = String::from("# snr_db top1 mean_rate\n");
        for (x, y, rate) in &s.points {
            let rate = rate.map_or_else(|| "nan".to_string(), |v| v.to_string());
            text.push_str(&format!("{x} {y} {rate}\n"));
        }
        fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Averages reports that differ only in task, with equal weight per task.
pub fn average_tasks(reports: &[EvalReport]) -> Vec<EvalReport> {
    type Key = (String, Option<u64>, Option<String>, Option<String>);
    let mut groups: BTreeMap<Key, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let key = (
            r.policy.clone(),
            r.snr_db.map(f64::to_bits),
            r.train_scenario.clone(),
            r.test_scenario.clone(),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len() as f64;
            let mean = |f: fn(&EvalReport) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            let joined = |f: fn(&EvalReport) -> &str| {
                let mut v: Vec<&str> = g.iter().map(|r| f(r)).collect();
                v.dedup();
                v.join("+")
            };
            let same = |f: fn(&EvalReport) -> Option<f64>| {
                let first = f(g[0]);
                g.iter().all(|r| f(r) == first).then_some(first).flatten()
            };
            EvalReport {
                task: joined(|r| &r.task),
                snr_db: g[0].snr_db,
                policy: g[0].policy.clone(),
                train_scenario: g[0].train_scenario.clone(),
                test_scenario: g[0].test_scenario.clone(),
                top1: mean(|r| r.top1),
                mean_rate: g
                    .iter()
                    .map(|r| r.mean_rate)
                    .sum::<Option<f64>>()
                    .map(|s| s / n),
                mean_measurements: mean(|r| r.mean_measurements),
                samples: g.iter().map(|r| r.samples).sum(),
                scenario_hash: joined(|r| &r.scenario_hash),
                model_hash: g
                    .iter()
                    .all(|r| r.model_hash == g[0].model_hash)
                    .then(|| g[0].model_hash.clone())
                    .flatten(),
                median_infer_us: same(|r| r.median_infer_us),
            }
        })
        .collect()
}
