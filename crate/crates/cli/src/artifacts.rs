//! File names and JSON schemas of every artifact the pipeline writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use mhmm::evaluation::{ModelTag, METRICS_HEADER};
use mhmm::inference::{BlockAcceptance, McmcConfig, PosteriorSummary};
use mhmm::policy::CohortFlow;
use mhmm::simulate::SimulationConfig;
use mhmm::{ModelParameters, PriorConfig, State};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const PANEL: &str = "panel.csv";
pub const TRUTH: &str = "truth.json";
pub const SAMPLES: &str = "samples.csv";
pub const SUMMARY: &str = "summary.json";
pub const BASELINE_SAMPLES: &str = "baseline_samples.csv";
pub const BASELINE_SUMMARY: &str = "baseline_summary.json";
pub const STATES: &str = "states.csv";
pub const POLICY: &str = "policy.json";
pub const METRICS: &str = "metrics.csv";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruePath {
    pub borrower_id: String,
    pub states: Vec<State>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthArtifact {
    pub config: SimulationConfig,
    pub parameters: ModelParameters,
    pub states: Vec<TruePath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryArtifact {
    pub model: ModelTag,
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    pub covariate_names: Vec<String>,
    pub summary: PosteriorSummary,
    pub acceptance: Vec<BlockAcceptance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRow {
    pub week: usize,
    pub model: ModelTag,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetrics {
    pub model: ModelTag,
    pub weeks: Vec<usize>,
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
    pub overall_mae: f64,
    pub overall_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArtifact {
    pub summary: SummaryArtifact,
    pub baseline_summary: Option<SummaryArtifact>,
    pub flow: CohortFlow,
    pub distress_series: Vec<f64>,
    pub distress_terminal: f64,
    pub distress_time_average: f64,
    pub metrics: Vec<ModelMetrics>,
}

/// Existing input file inside the output directory.
pub fn input(dir: &Path, name: &str) -> Result<PathBuf, UsageError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(UsageError(format!("missing input {}; run the producing command first", path.display())));
    }
    Ok(path)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

pub fn read_metrics_csv(path: &Path) -> anyhow::Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(UsageError(format!("{}: header must be {}", path.display(), METRICS_HEADER.join(","))).into());
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| UsageError(format!("{} line {}: {e}", path.display(), i + 2)).into()))
        .collect()
}

/// Groups metric rows per model, keeping file order, with unweighted
/// weekly means as overall values.
pub fn group_metrics(rows: &[MetricRow]) -> Vec<ModelMetrics> {
    let mut out: Vec<ModelMetrics> = Vec::new();
    for r in rows {
        let pos = match out.iter().position(|m| m.model == r.model) {
            Some(p) => p,
            None => {
                out.push(ModelMetrics { model: r.model, weeks: vec![], mae: vec![], mse: vec![], overall_mae: 0.0, overall_mse: 0.0 });
                out.len() - 1
            }
        };
        let m = &mut out[pos];
        m.weeks.push(r.week);
        m.mae.push(r.mae);
        m.mse.push(r.mse);
    }
    for m in &mut out {
        let n = m.weeks.len().max(1) as f64;
        m.overall_mae = m.mae.iter().sum::<f64>() / n;
        m.overall_mse = m.mse.iter().sum::<f64>() / n;
    }
    out
}
