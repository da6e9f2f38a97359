use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::Context;
use mhmm::decoding::decode_panel;
use mhmm::evaluation::{predict_panel_glmm, predict_panel_hmm, weekly_metrics, write_metrics_csv, ModelTag};
use mhmm::inference::{
    fit_me_poisson, read_samples_csv, run_mcmc, summarize, write_samples_csv, GlmmParameters, ParameterSet,
    PosteriorSamples,
};
use mhmm::ingest::{aggregate_weekly, read_panel_csv, read_states_csv, read_transactions_csv, write_panel_csv, write_states_csv, TRANSACTIONS_HEADER};
use mhmm::policy::policy_report;
use mhmm::simulate::simulate_panel;
use mhmm::{ModelParameters, PanelDataset};

use crate::artifacts::{self, *};
use crate::config::RunConfig;
use crate::UsageError;

fn out(config: &RunConfig, name: &str) -> std::path::PathBuf {
    config.paths.output_dir.join(name)
}

/// Loads `paths.input`, aggregating it first when it holds transactions.
pub fn load_panel(config: &RunConfig) -> anyhow::Result<PanelDataset> {
    let path = config
        .paths
        .input
        .as_deref()
        .ok_or_else(|| UsageError("paths.input is required for this command".into()))?;
    if !path.is_file() {
        return Err(UsageError(format!("input {} does not exist", path.display())).into());
    }
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let is_transactions = first.trim_end().split(',').eq(TRANSACTIONS_HEADER);
    let file = File::open(path)?;
    let panel = if is_transactions {
        let records = read_transactions_csv(file)?;
        aggregate_weekly(&records, config.ingest.anchor()?, config.ingest.standardize)?
    } else {
        read_panel_csv(file, config.ingest.standardize)?
    };
    Ok(panel)
}

pub fn simulate(config: &RunConfig) -> anyhow::Result<()> {
    let sim_config = config.simulate.resolve();
    let sim = simulate_panel(&sim_config)?;
    write_atomic(&out(config, PANEL), |w| Ok(write_panel_csv(&sim.panel, w)?))?;
    let truth = TruthArtifact {
        config: sim_config,
        parameters: sim.truth,
        states: sim.states.into_iter().map(|p| TruePath { borrower_id: p.borrower_id, states: p.states }).collect(),
    };
    write_json(&out(config, TRUTH), &truth)
}

fn summary_artifact<P: ParameterSet>(
    model: ModelTag,
    config: &RunConfig,
    panel: &PanelDataset,
    samples: &PosteriorSamples<P>,
) -> anyhow::Result<SummaryArtifact> {
    Ok(SummaryArtifact {
        model,
        mcmc: config.mcmc,
        priors: config.model,
        covariate_names: panel.covariate_names.clone(),
        summary: summarize(samples)?,
        acceptance: samples.acceptance.clone(),
    })
}

pub fn fit(config: &RunConfig, baseline: bool) -> anyhow::Result<()> {
    let panel = load_panel(config)?;
    let samples = run_mcmc(&panel, &config.model, &config.mcmc)?;
    write_atomic(&out(config, SAMPLES), |w| Ok(write_samples_csv(&samples, w)?))?;
    write_json(&out(config, SUMMARY), &summary_artifact(ModelTag::MePoissonHmm, config, &panel, &samples)?)?;
    if baseline {
        let samples = fit_me_poisson(&panel, &config.model, &config.mcmc)?;
        write_atomic(&out(config, BASELINE_SAMPLES), |w| Ok(write_samples_csv(&samples, w)?))?;
        write_json(&out(config, BASELINE_SUMMARY), &summary_artifact(ModelTag::MePoisson, config, &panel, &samples)?)?;
    }
    Ok(())
}

fn read_samples<P: ParameterSet>(path: &Path) -> anyhow::Result<PosteriorSamples<P>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_samples_csv(BufReader::new(file))?)
}

pub fn decode(config: &RunConfig) -> anyhow::Result<()> {
    let panel = load_panel(config)?;
    let samples: PosteriorSamples<ModelParameters> = read_samples(&artifacts::input(&config.paths.output_dir, SAMPLES)?)?;
    let paths = decode_panel(&panel, &samples)?;
    write_atomic(&out(config, STATES), |w| Ok(write_states_csv(&paths, &panel, w)?))
}

pub fn policy(config: &RunConfig) -> anyhow::Result<()> {
    let file = File::open(artifacts::input(&config.paths.output_dir, STATES)?)?;
    let paths = read_states_csv(BufReader::new(file))?;
    write_json(&out(config, POLICY), &policy_report(&paths, &config.policy)?)
}

pub fn evaluate(config: &RunConfig) -> anyhow::Result<()> {
    let dir = &config.paths.output_dir;
    let hmm_path = artifacts::input(dir, SAMPLES)?;
    let glmm_path = artifacts::input(dir, BASELINE_SAMPLES)?;
    let panel = load_panel(config)?;
    let hmm: PosteriorSamples<ModelParameters> = read_samples(&hmm_path)?;
    let glmm: PosteriorSamples<GlmmParameters> = read_samples(&glmm_path)?;
    let reports = [
        weekly_metrics(&predict_panel_glmm(&panel, &glmm.median_point()?)?)?,
        weekly_metrics(&predict_panel_hmm(&panel, &hmm.median_point()?)?)?,
    ];
    write_atomic(&out(config, METRICS), |w| Ok(write_metrics_csv(&reports, w)?))
}

pub fn report(config: &RunConfig) -> anyhow::Result<()> {
    let dir = &config.paths.output_dir;
    let summary: SummaryArtifact = read_json(&artifacts::input(dir, SUMMARY)?)?;
    let baseline_summary = match artifacts::input(dir, BASELINE_SUMMARY) {
        Ok(path) => Some(read_json(&path)?),
        Err(_) => None,
    };
    let policy: mhmm::policy::PolicyReport = read_json(&artifacts::input(dir, POLICY)?)?;
    let rows = read_metrics_csv(&artifacts::input(dir, METRICS)?)?;
    let report = ReportArtifact {
        summary,
        baseline_summary,
        flow: policy.flow,
        distress_series: policy.distress_series,
        distress_terminal: policy.distress_terminal,
        distress_time_average: policy.distress_time_average,
        metrics: group_metrics(&rows),
    };
    write_json(&out(config, REPORT), &report)
}
