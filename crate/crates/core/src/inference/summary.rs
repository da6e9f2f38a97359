//! Posterior medians, equal-tailed credible intervals, split-chain R-hat and
//! effective sample size.

use serde::{Deserialize, Serialize};

use super::{ParameterSet, PosteriorSamples};
use crate::error::{Error, Result};

/// Quantile levels reported per parameter: 90% and 75% intervals around the median.
pub const SUMMARY_QUANTILES: [f64; 5] = [0.05, 0.125, 0.5, 0.875, 0.95];

const MIN_DRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub median: f64,
    pub q05: f64,
    pub q125: f64,
    pub q875: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub name: String,
    pub r_hat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub n_chains: usize,
    pub parameters: Vec<ParameterSummary>,
    /// Convergence diagnostics of the fixed effects.
    pub diagnostics: Vec<Diagnostic>,
}

impl PosteriorSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn diagnostic(&self, name: &str) -> Option<&Diagnostic> {
        self.diagnostics.iter().find(|d| d.name == name)
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics: position `h = (n - 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_values(name: String, values: &[f64]) -> ParameterSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = SUMMARY_QUANTILES.map(|p| quantile(&sorted, p));
    ParameterSummary { name, q05: q[0], q125: q[1], median: q[2], q875: q[3], q95: q[4] }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Each chain cut into two halves of equal length (a middle draw is dropped
/// when the length is odd).
fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    chains
        .iter()
        .flat_map(|c| {
            let c = &c[..2 * n.min(c.len() / 2)];
            [c[..n].to_vec(), c[c.len() - n..].to_vec()]
        })
        .collect()
}

/// Within-chain variance `W` and pooled estimate `var+` over split chains.
fn variance_components(split: &[Vec<f64>]) -> (f64, f64) {
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let w = mean(&split.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b = n * variance(&means);
    (w, (n - 1.0) / n * w + b / n)
}

/// Split-chain potential scale reduction factor.
pub fn split_r_hat(chains: &[&[f64]]) -> f64 {
    let split = split_chains(chains);
    if split.is_empty() || split[0].len() < 2 {
        return f64::NAN;
    }
    let (w, var_plus) = variance_components(&split);
    if w == 0.0 {
        return if var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size over split chains, truncating the
/// autocorrelation sum with Geyer's initial monotone positive sequence.
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let split = split_chains(chains);
    if split.is_empty() || split[0].len() < 4 {
        return f64::NAN;
    }
    let m = split.len() as f64;
    let n = split[0].len();
    let (w, var_plus) = variance_components(&split);
    if w == 0.0 {
        return m * n as f64;
    }
    let rho = |lag: usize| -> f64 {
        let acov = mean(&split.iter().map(|c| autocovariance(c, lag)).collect::<Vec<_>>());
        let within = w * (n as f64 - 1.0) / n as f64;
        1.0 - (within - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / (m * n as f64).log10().max(1.0));
    m * n as f64 / tau
}

/// Medians and 75%/90% intervals for every parameter (and derived
/// quantity), with R-hat and ESS for the fixed effects.
pub fn summarize<P: ParameterSet>(samples: &PosteriorSamples<P>) -> Result<PosteriorSummary> {
    if samples.len() < MIN_DRAWS {
        return Err(Error::Summary(format!(
            "{} draws; at least {MIN_DRAWS} are required",
            samples.len()
        )));
    }
    if samples.chain_ids.len() != samples.len() {
        return Err(Error::Summary("chain ids and draws differ in length".into()));
    }
    let names = samples.draws[0].names();
    let table: Vec<Vec<f64>> = samples.draws.iter().map(ParameterSet::values).collect();
    let derived: Vec<Vec<(String, f64)>> = samples.draws.iter().map(ParameterSet::derived).collect();
    let n_chains = samples.n_chains();

    let mut parameters = Vec::with_capacity(names.len());
    let mut diagnostics = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let column: Vec<f64> = table.iter().map(|row| row[j]).collect();
        if name.starts_with("beta[") {
            let per_chain: Vec<Vec<f64>> = (0..n_chains)
                .map(|c| {
                    column
                        .iter()
                        .zip(&samples.chain_ids)
                        .filter(|(_, id)| **id == c)
                        .map(|(v, _)| *v)
                        .collect()
                })
                .filter(|c: &Vec<f64>| !c.is_empty())
                .collect();
            let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
            diagnostics.push(Diagnostic {
                name: name.clone(),
                r_hat: split_r_hat(&refs),
                ess: effective_sample_size(&refs),
            });
        }
        parameters.push(summarize_values(name.clone(), &column));
    }
    for (j, (name, _)) in derived[0].iter().enumerate() {
        let column: Vec<f64> = derived.iter().map(|row| row[j].1).collect();
        parameters.push(summarize_values(name.clone(), &column));
    }
    Ok(PosteriorSummary { n_draws: samples.len(), n_chains, parameters, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::GlmmParameters;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_samples(values: &[f64], chains: usize) -> PosteriorSamples<GlmmParameters> {
        let per = values.len() / chains;
        PosteriorSamples {
            draws: values
                .iter()
                .map(|v| GlmmParameters { beta: vec![*v], u: vec![vec![0.0]], sigma_u: vec![1.0] })
                .collect(),
            chain_ids: (0..values.len()).map(|i| i / per).collect(),
            iterations: (0..values.len()).map(|i| i % per).collect(),
            log_posterior_trace: vec![0.0; values.len()],
            acceptance: Vec::new(),
        }
    }

    #[test]
    fn quantiles_of_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_abs_diff_eq!(quantile(&values, 0.5), 50.5, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile(&values, 0.05), 5.95, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile(&values, 0.95), 95.05, epsilon = 1e-12);
        let s = summarize(&scalar_samples(&values, 1)).unwrap();
        let beta = s.parameter("beta[1][0]").unwrap();
        assert_abs_diff_eq!(beta.median, 50.5, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.q05, 5.95, epsilon = 1e-12);
        assert_abs_diff_eq!(beta.q95, 95.05, epsilon = 1e-12);
    }

    #[test]
    fn constant_draws_give_zero_width_intervals() {
        let s = summarize(&scalar_samples(&[2.5; 40], 2)).unwrap();
        let b = s.parameter("beta[1][0]").unwrap();
        assert_eq!([b.q05, b.q125, b.median, b.q875, b.q95], [2.5; 5]);
        assert_eq!(s.diagnostic("beta[1][0]").unwrap().r_hat, 1.0);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(summarize(&scalar_samples(&[1.0; 9], 1)), Err(Error::Summary(_))));
    }

    #[test]
    fn identical_chains_have_unit_r_hat() {
        // each chain repeats the same block twice so the split halves agree too
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block: Vec<f64> = (0..2_000_000).map(|_| rng.random::<f64>()).collect();
        let chain: Vec<f64> = block.iter().chain(&block).copied().collect();
        let r = split_r_hat(&[&chain, &chain]);
        assert!((r - 1.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn shifted_chains_have_large_r_hat() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 2.0).collect();
        assert!(split_r_hat(&[&a, &b]) > 1.5);
    }

    #[test]
    fn ess_of_independent_draws_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| rng.random::<f64>()).collect()).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let ess = effective_sample_size(&refs);
        assert!(ess > 3000.0 && ess < 5500.0, "{ess}");
    }

    #[test]
    fn ess_of_sticky_chain_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                x = 0.95 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let ess = effective_sample_size(&[&chain]);
        // AR(1) with coefficient 0.95: n (1 - 0.95) / (1 + 0.95) ≈ 103
        assert!(ess > 40.0 && ess < 250.0, "{ess}");
    }

    #[test]
    fn quantiles_match_sort_based_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let values: Vec<f64> = (0..257).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = summarize(&scalar_samples(&values, 1)).unwrap();
        let b = s.parameter("beta[1][0]").unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // n = 257 gives integral positions for 0.5 and fractional for the others
        assert_eq!(b.median, sorted[128]);
        let h = 256.0 * 0.05;
        let expected = sorted[12] + (h - 12.0) * (sorted[13] - sorted[12]);
        assert_eq!(b.q05, expected);
        assert!(b.q05 <= b.q125 && b.q125 <= b.median && b.median <= b.q875 && b.q875 <= b.q95);
    }
}
