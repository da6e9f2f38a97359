//! Posterior sampling by adaptive Metropolis-within-Gibbs.

mod adapt;
mod io;
mod params;
mod sampler;
mod summary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_samples_csv, write_samples_csv, SAMPLES_HEADER};
pub use params::{GlmmParameters, ParameterSet};
pub use sampler::{fit_me_poisson, run_mcmc, run_mcmc_with, FreeBlocks, SamplerOptions};
pub use summary::{
    effective_sample_size, quantile, split_r_hat, summarize, Diagnostic, ParameterSummary,
    PosteriorSummary, SUMMARY_QUANTILES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Iterations between refreshes of the adapted proposal covariances.
    pub adapt_window: usize,
    pub target_accept: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 5000,
            burn_in: 2500,
            thinning: 1,
            seed: 1,
            adapt_window: 50,
            target_accept: 0.30,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.iterations == 0 || self.thinning == 0 || self.adapt_window == 0 {
            return Err(Error::Config(
                "chains, iterations, thinning and adapt_window must be positive".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({}); no draws would be kept",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thinning)
    }
}

/// Post burn-in acceptance rate of one proposal block in one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub chain: usize,
    pub block: String,
    pub rate: f64,
}

/// Retained draws from all chains, in chain-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples<P> {
    pub draws: Vec<P>,
    pub chain_ids: Vec<usize>,
    /// Sweep index (zero-based, counting burn-in) of each draw.
    pub iterations: Vec<usize>,
    pub log_posterior_trace: Vec<f64>,
    pub acceptance: Vec<BlockAcceptance>,
}

impl<P: ParameterSet> PosteriorSamples<P> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_chains(&self) -> usize {
        self.chain_ids.iter().max().map_or(0, |c| c + 1)
    }

    /// Draws of one named scalar across all chains.
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.values()[index]).collect()
    }

    /// Parameter-wise posterior median.
    pub fn median_point(&self) -> Result<P> {
        let first = self
            .draws
            .first()
            .ok_or_else(|| Error::Summary("no posterior draws".into()))?;
        let table: Vec<Vec<f64>> = self.draws.iter().map(ParameterSet::values).collect();
        let medians: Vec<f64> = (0..table[0].len())
            .map(|j| {
                let mut col: Vec<f64> = table.iter().map(|row| row[j]).collect();
                col.sort_by(f64::total_cmp);
                quantile(&col, 0.5)
            })
            .collect();
        first.with_values(&medians)
    }

    /// Mean post burn-in acceptance rate of each block, averaged over chains.
    pub fn mean_acceptance(&self) -> Vec<(String, f64)> {
        let mut blocks: Vec<String> = Vec::new();
        for a in &self.acceptance {
            if !blocks.contains(&a.block) {
                blocks.push(a.block.clone());
            }
        }
        blocks
            .into_iter()
            .map(|b| {
                let rates: Vec<f64> =
                    self.acceptance.iter().filter(|a| a.block == b).map(|a| a.rate).collect();
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                (b, mean)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(McmcConfig::default().validate().is_ok());
        let bad = McmcConfig { burn_in: 10, iterations: 10, ..McmcConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = McmcConfig { target_accept: 1.0, ..McmcConfig::default() };
        assert!(bad.validate().is_err());
        let cfg = McmcConfig { iterations: 105, burn_in: 5, thinning: 3, ..McmcConfig::default() };
        assert_eq!(cfg.draws_per_chain(), 34);
    }
}
