//! Result documents and their table renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::metrics::{MetricReport, SignificanceResult};
use crate::prompt::Strategy;

/// Temperatures of the standard sweep.
pub const STANDARD_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run: usize,
    pub metrics: BTreeMap<String, MetricReport>,
    /// Records in this run changed by the scrubber.
    pub post_edits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub baseline: String,
    pub resamples: usize,
    pub sample_ratio: f64,
    pub seed: u64,
    pub results: BTreeMap<String, SignificanceResult>,
}

/// Deterministic outcome of one experiment. Nothing in here depends on
/// timing, caching or scheduling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_digest: String,
    pub corpus: String,
    pub direction: String,
    pub strategy: Strategy,
    pub temperature: f64,
    pub segments: usize,
    pub runs: Vec<RunScores>,
    /// Per-metric mean of the run scores.
    pub mean: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<SignificanceSummary>,
    /// Edited records per direction over all runs.
    pub post_edits: BTreeMap<String, usize>,
    pub journal: String,
}

impl ExperimentReport {
    pub fn total_post_edits(&self) -> usize {
        self.post_edits.values().sum()
    }

    fn significant(&self, metric: &str) -> bool {
        self.significance.as_ref().and_then(|s| s.results.get(metric)).is_some_and(|r| r.significant)
    }
}

/// Operational counters of one invocation; these vary between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_clock_ms: u64,
    pub records: usize,
    pub resumed_records: usize,
    pub completions: u64,
    pub cache_hits: u64,
    pub network_requests: u64,
    pub cache_hit_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub temperature: f64,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub temperature: f64,
    pub metric: String,
    pub score: f64,
    pub direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub points: Vec<SweepPoint>,
    pub curve: Vec<CurveRow>,
}

impl SweepReport {
    pub fn new(name: String, points: Vec<SweepPoint>) -> SweepReport {
        let curve = points
            .iter()
            .flat_map(|p| {
                p.report.mean.iter().map(|(metric, score)| CurveRow {
                    temperature: p.temperature,
                    metric: metric.clone(),
                    score: *score,
                    direction: p.report.direction.clone(),
                })
            })
            .collect();
        SweepReport { name, points, curve }
    }

    /// Mean score per temperature for one metric, in grid order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.curve.iter().filter(|r| r.metric == metric).map(|r| (r.temperature, r.score)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for EmitFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "md" | "markdown" | "table_md" => Ok(EmitFormat::Markdown),
            "csv" => Ok(EmitFormat::Csv),
            "json" | "json_report" => Ok(EmitFormat::Json),
            other => Err(format!("unknown format `{other}` (expected md, csv or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emittable {
    Reports(Vec<ExperimentReport>),
    Sweep(SweepReport),
}

impl Emittable {
    /// Loads a `report.json` or `sweep.json`, or a run directory holding one.
    pub fn load(path: &Path) -> Result<Emittable, RunnerError> {
        let file = if path.is_dir() {
            let sweep = path.join("sweep.json");
            if sweep.exists() {
                sweep
            } else {
                path.join(super::REPORT_FILE)
            }
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| RunnerError::Io { path: file.clone(), message: e.to_string() })?;
        let parse_err = |e: serde_json::Error| RunnerError::Journal { path: file.clone(), message: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
        if value.get("curve").is_some() {
            Ok(Emittable::Sweep(serde_json::from_value(value).map_err(parse_err)?))
        } else {
            Ok(Emittable::Reports(vec![serde_json::from_value(value).map_err(parse_err)?]))
        }
    }

    fn file_name(&self, format: EmitFormat) -> &'static str {
        match (self, format) {
            (Emittable::Reports(_), EmitFormat::Markdown) => "results.md",
            (Emittable::Reports(_), EmitFormat::Csv) => "results.csv",
            (Emittable::Reports(_), EmitFormat::Json) => "results.json",
            (Emittable::Sweep(_), EmitFormat::Markdown) => "curve.md",
            (Emittable::Sweep(_), EmitFormat::Csv) => "curve.csv",
            (Emittable::Sweep(_), EmitFormat::Json) => "sweep.json",
        }
    }

    pub fn render(&self, format: EmitFormat) -> String {
        match (self, format) {
            (Emittable::Reports(r), EmitFormat::Markdown) => reports_md(r),
            (Emittable::Reports(r), EmitFormat::Csv) => reports_csv(r),
            (Emittable::Reports(r), EmitFormat::Json) => serde_json::to_string_pretty(r).expect("serializes") + "\n",
            (Emittable::Sweep(s), EmitFormat::Markdown) => sweep_md(s),
            (Emittable::Sweep(s), EmitFormat::Csv) => sweep_csv(s),
            (Emittable::Sweep(s), EmitFormat::Json) => serde_json::to_string_pretty(s).expect("serializes") + "\n",
        }
    }
}

/// Renders `what` and writes it under `out_dir`, returning the file path.
pub fn emit(what: &Emittable, format: EmitFormat, out_dir: &Path) -> Result<PathBuf, RunnerError> {
    let unwritable = |path: &Path, e: std::io::Error| RunnerError::OutputUnwritable {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| unwritable(out_dir, e))?;
    let path = out_dir.join(what.file_name(format));
    std::fs::write(&path, what.render(format)).map_err(|e| unwritable(&path, e))?;
    Ok(path)
}

fn metric_columns(reports: &[ExperimentReport]) -> Vec<String> {
    let mut cols: Vec<String> = reports.iter().flat_map(|r| r.mean.keys().cloned()).collect();
    cols.sort();
    cols.dedup();
    cols
}

fn best_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
}

fn reports_md(reports: &[ExperimentReport]) -> String {
    let cols = metric_columns(reports);
    let mut out = String::from("| system | direction | strategy | T |");
    for c in &cols {
        write!(out, " {} |", c.to_uppercase()).unwrap();
    }
    out.push_str(" post-edits |\n|---|---|---|---|");
    out.push_str(&"---|".repeat(cols.len() + 1));
    out.push('\n');
    let best: Vec<Option<f64>> = cols.iter().map(|c| best_of(reports.iter().map(|r| r.mean.get(c).copied()))).collect();
    let mut any_significant = false;
    for r in reports {
        write!(out, "| {} | {} | {} | {} |", r.name, r.direction, r.strategy, r.temperature).unwrap();
        for (c, best) in cols.iter().zip(&best) {
            match r.mean.get(c) {
                Some(v) => {
                    let mut cell = format!("{v:.2}");
                    if reports.len() > 1 && Some(*v) == *best {
                        cell = format!("**{cell}**");
                    }
                    if r.significant(c) {
                        cell.push('*');
                        any_significant = true;
                    }
                    write!(out, " {cell} |").unwrap();
                }
                None => out.push_str(" - |"),
            }
        }
        writeln!(out, " {} |", r.total_post_edits()).unwrap();
    }
    if any_significant {
        out.push_str("\n\\* significantly different from the baseline (p < 0.05)\n");
    }
    out
}

fn reports_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("name,direction,strategy,temperature,run,metric,score,significant\n");
    for r in reports {
        for run in &r.runs {
            for (metric, m) in &run.metrics {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    csv_field(&r.name),
                    r.direction,
                    r.strategy,
                    r.temperature,
                    run.run,
                    metric,
                    m.corpus_score,
                    r.significant(metric)
                )
                .unwrap();
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sweep_md(sweep: &SweepReport) -> String {
    let reports: Vec<ExperimentReport> = sweep.points.iter().map(|p| p.report.clone()).collect();
    let cols = metric_columns(&reports);
    let mut out = String::from("| T |");
    for c in &cols {
        write!(out, " {} |", c.to_uppercase()).unwrap();
    }
    out.push_str(" post-edits |\n|---|");
    out.push_str(&"---|".repeat(cols.len() + 1));
    out.push('\n');
    let best: Vec<Option<f64>> = cols.iter().map(|c| best_of(reports.iter().map(|r| r.mean.get(c).copied()))).collect();
    for p in &sweep.points {
        write!(out, "| {} |", p.temperature).unwrap();
        for (c, best) in cols.iter().zip(&best) {
            match p.report.mean.get(c) {
                Some(v) if Some(*v) == *best => write!(out, " **{v:.2}** |").unwrap(),
                Some(v) => write!(out, " {v:.2} |").unwrap(),
                None => out.push_str(" - |"),
            }
        }
        writeln!(out, " {} |", p.report.total_post_edits()).unwrap();
    }
    out
}

fn sweep_csv(sweep: &SweepReport) -> String {
    let mut out = String::from("temperature,metric,score,direction\n");
    for row in &sweep.curve {
        writeln!(out, "{},{},{},{}", row.temperature, row.metric, row.score, row.direction).unwrap();
    }
    out
}
