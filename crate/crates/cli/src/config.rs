//! Run configuration: a TOML file with one table per block, plus dotted
//! command-line overrides such as `--mcmc.chains 2`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mhmm::inference::McmcConfig;
use mhmm::policy::PolicyConfig;
use mhmm::simulate::{acceptance_config, separated_config, calibrated_config, SimulationConfig};
use mhmm::PriorConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Panel CSV or transactions CSV; the header decides which.
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { input: None, output_dir: PathBuf::from(".") }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub standardize: bool,
    /// First day of each week: mon, tue, ..., sun.
    pub week_anchor: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { standardize: true, week_anchor: "mon".into() }
    }
}

impl IngestConfig {
    pub fn anchor(&self) -> Result<chrono::Weekday, UsageError> {
        self.week_anchor
            .parse()
            .map_err(|_| UsageError(format!("ingest.week_anchor: unknown weekday {:?}", self.week_anchor)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 200 borrowers, 40 to 60 weeks, four covariates.
    #[default]
    Acceptance,
    /// Sixteen covariates with realistic weekly transaction moments.
    Calibrated,
    /// Strongly separated states for decoding checks.
    Separated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: Preset,
    pub n_borrowers: Option<usize>,
    pub weeks_min: Option<usize>,
    pub weeks_max: Option<usize>,
    pub standardize: Option<bool>,
    pub seed: Option<u64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { preset: Preset::Acceptance, n_borrowers: None, weeks_min: None, weeks_max: None, standardize: None, seed: None }
    }
}

impl SimulateConfig {
    pub fn resolve(&self) -> SimulationConfig {
        let mut c = match self.preset {
            Preset::Acceptance => acceptance_config(),
            Preset::Calibrated => calibrated_config(1000, 50, mhmm::simulate::ACCEPTANCE_SEED),
            Preset::Separated => separated_config(),
        };
        if let Some(n) = self.n_borrowers {
            c.n_borrowers = n;
        }
        if let Some(w) = self.weeks_min {
            c.weeks_min = w;
        }
        if let Some(w) = self.weeks_max {
            c.weeks_max = w;
        }
        if let Some(s) = self.standardize {
            c.standardize = s;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub model: PriorConfig,
    pub mcmc: McmcConfig,
    pub policy: PolicyConfig,
    pub ingest: IngestConfig,
    pub simulate: SimulateConfig,
}

/// Splits `--block.key value` and `--block.key=value` pairs out of argv.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), UsageError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter.next().ok_or_else(|| UsageError(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), UsageError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(UsageError(format!("override --{key} must look like --block.key")));
    }
    let block = table
        .entry(parts[0])
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| UsageError(format!("{} is not a table", parts[0])))?;
    block.insert(parts[1].to_string(), parse_value(raw));
    Ok(())
}

/// Loads the file (if any), applies overrides and `--seed`, and validates.
pub fn load(path: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, value) in overrides {
        apply_override(&mut table, key, value)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
    if let Some(seed) = seed {
        config.mcmc.seed = seed;
        config.simulate.seed = Some(seed);
    }
    config.model.validate().context("model block")?;
    config.mcmc.validate().context("mcmc block")?;
    config.simulate.resolve().validate().context("simulate block")?;
    PolicyConfig::new(config.policy.window).context("policy block")?;
    config.ingest.anchor()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_from_argv() {
        let (rest, o) = extract_overrides(args(&["mhmm", "--seed", "3", "fit", "--mcmc.chains", "2", "--policy.window=4"])).unwrap();
        assert_eq!(rest, args(&["mhmm", "--seed", "3", "fit"]));
        assert_eq!(o, vec![("mcmc.chains".into(), "2".into()), ("policy.window".into(), "4".into())]);
        assert!(extract_overrides(args(&["mhmm", "--mcmc.chains"])).is_err());
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[mcmc]\nchains = 3\niterations = 100\nburn_in = 50\n[paths]\noutput_dir = \"out\"\n").unwrap();
        let c = load(Some(&path), &[("mcmc.chains".into(), "5".into()), ("ingest.week_anchor".into(), "sun".into())], Some(9)).unwrap();
        assert_eq!(c.mcmc.chains, 5);
        assert_eq!(c.mcmc.iterations, 100);
        assert_eq!(c.mcmc.seed, 9);
        assert_eq!(c.simulate.seed, Some(9));
        assert_eq!(c.paths.output_dir, PathBuf::from("out"));
        assert_eq!(c.ingest.anchor().unwrap(), chrono::Weekday::Sun);
        assert_eq!(c.model, PriorConfig::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = load(None, &[("mcmc.chain".into(), "5".into())], None).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let err = load(None, &[("nope.x".into(), "1".into())], None).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let err = load(None, &[("mcmc.chains".into(), "many".into())], None).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(load(None, &[("policy.window".into(), "0".into())], None).is_err());
        assert!(load(None, &[("model.beta_prior_scale".into(), "-1".into())], None).is_err());
        assert!(load(None, &[("ingest.week_anchor".into(), "someday".into())], None).is_err());
    }

    #[test]
    fn presets_resolve() {
        let mut s = SimulateConfig { preset: Preset::Calibrated, n_borrowers: Some(7), ..SimulateConfig::default() };
        assert_eq!(s.resolve().covariates.len(), 16);
        assert_eq!(s.resolve().n_borrowers, 7);
        s.preset = Preset::Separated;
        assert_eq!(s.resolve().covariates.len(), 1);
    }
}
