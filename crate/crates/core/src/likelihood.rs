//! Marginal likelihood of the hidden-state model by the forward recursion,
//! an exhaustive-enumeration oracle, and the unnormalized log posterior.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::GlmmParameters;
use crate::model::{
    log_pmf_from_log_rate, BorrowerModel, BorrowerSeries, ModelParameters, PanelDataset,
    PriorConfig, NUM_STATES,
};

/// Longest series [`brute_force_loglik`] will enumerate.
pub const MAX_ENUMERATION_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardResult {
    pub log_likelihood: f64,
    /// `log α_t(k) = log p(y_1..y_t, Z_t = k)`.
    pub log_alpha: Vec<[f64; NUM_STATES]>,
    /// `log p(y_t | y_1..y_{t-1})`; these sum to the log-likelihood.
    pub log_norm_constants: Vec<f64>,
    /// `p(Z_t = k | y_1..y_t)`.
    pub filtered_probs: Vec<[f64; NUM_STATES]>,
}

pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp_row(row: &[f64; NUM_STATES]) -> f64 {
    log_sum_exp2(row[0], row[1])
}

/// Runs the forward recursion on precomputed log emissions.
pub(crate) fn forward_from_emissions(
    log_emissions: &[[f64; NUM_STATES]],
    initial: [f64; NUM_STATES],
    log_trans: [[f64; NUM_STATES]; NUM_STATES],
) -> Result<ForwardResult> {
    if log_emissions.is_empty() {
        return Err(Error::Validation("cannot run the forward pass on an empty series".into()));
    }
    let n = log_emissions.len();
    let mut log_alpha = Vec::with_capacity(n);
    let mut log_norm_constants = Vec::with_capacity(n);
    let mut filtered_probs = Vec::with_capacity(n);

    let mut prev_total = 0.0;
    for (t, emit) in log_emissions.iter().enumerate() {
        let mut row = [0.0; NUM_STATES];
        if t == 0 {
            for k in 0..NUM_STATES {
                row[k] = emit[k] + initial[k].ln();
            }
        } else {
            let prev: &[f64; NUM_STATES] = &log_alpha[t - 1];
            for k in 0..NUM_STATES {
                row[k] = emit[k] + log_sum_exp2(prev[0] + log_trans[0][k], prev[1] + log_trans[1][k]);
            }
        }
        let total = log_sum_exp_row(&row);
        if !total.is_finite() || row.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric {
                step: t + 1,
                what: format!("forward variable became {total}"),
            });
        }
        log_norm_constants.push(total - prev_total);
        filtered_probs.push(row.map(|v| (v - total).exp()));
        log_alpha.push(row);
        prev_total = total;
    }
    Ok(ForwardResult { log_likelihood: prev_total, log_alpha, log_norm_constants, filtered_probs })
}

/// Log-likelihood from cached log emissions; `-inf` or NaN signal an
/// impossible or pathological configuration.
pub(crate) fn loglik_from_emissions(
    log_emissions: &[[f64; NUM_STATES]],
    initial: [f64; NUM_STATES],
    log_trans: [[f64; NUM_STATES]; NUM_STATES],
) -> f64 {
    let mut alpha = [f64::NEG_INFINITY; NUM_STATES];
    for (t, emit) in log_emissions.iter().enumerate() {
        alpha = if t == 0 {
            [emit[0] + initial[0].ln(), emit[1] + initial[1].ln()]
        } else {
            [
                emit[0] + log_sum_exp2(alpha[0] + log_trans[0][0], alpha[1] + log_trans[1][0]),
                emit[1] + log_sum_exp2(alpha[0] + log_trans[0][1], alpha[1] + log_trans[1][1]),
            ]
        };
    }
    log_sum_exp2(alpha[0], alpha[1])
}

/// Forward recursion for one borrower; the result carries the exact
/// log-likelihood `log Σ_k α_T(k)`.
pub fn forward(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<ForwardResult> {
    let emissions = model.log_emissions(series)?;
    forward_from_emissions(&emissions, model.initial, model.transition.log())
}

/// Log-likelihood only, without allocating the forward trellis.
pub fn log_likelihood(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<f64> {
    let log_trans = model.transition.log();
    let p = model.beta[0].len();
    if series.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty series".into()));
    }
    let mut alpha = [0.0; NUM_STATES];
    for (t, w) in series.weeks.iter().enumerate() {
        if w.covariates.len() != p || w.design.len() != model.random_effect.len() {
            return Err(Error::Dimension(format!(
                "borrower {} week {} does not match parameter dimensions",
                series.borrower_id, w.week
            )));
        }
        let re: f64 = w.design.iter().zip(model.random_effect).map(|(d, u)| d * u).sum();
        let mut emit = [0.0; NUM_STATES];
        for k in 0..NUM_STATES {
            let eta: f64 = w.covariates.iter().zip(model.beta[k]).map(|(x, b)| x * b).sum::<f64>() + re;
            emit[k] = log_pmf_from_log_rate(w.count, eta);
        }
        alpha = if t == 0 {
            [emit[0] + model.initial[0].ln(), emit[1] + model.initial[1].ln()]
        } else {
            [
                emit[0] + log_sum_exp2(alpha[0] + log_trans[0][0], alpha[1] + log_trans[1][0]),
                emit[1] + log_sum_exp2(alpha[0] + log_trans[0][1], alpha[1] + log_trans[1][1]),
            ]
        };
    }
    let total = log_sum_exp_row(&alpha);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numeric { step: series.len(), what: format!("log-likelihood is {total}") })
    }
}

/// Exact log-likelihood by summing over all `2^T` state sequences. Test
/// oracle for the forward recursion.
pub fn brute_force_loglik(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<f64> {
    let len = series.len();
    if len > MAX_ENUMERATION_LEN {
        return Err(Error::EnumerationTooLong { len, limit: MAX_ENUMERATION_LEN });
    }
    if len == 0 {
        return Err(Error::Validation("cannot evaluate an empty series".into()));
    }
    let emissions = model.log_emissions(series)?;
    let log_trans = model.transition.log();
    let mut terms = Vec::with_capacity(1 << len);
    for mask in 0u32..(1u32 << len) {
        let state = |t: usize| ((mask >> t) & 1) as usize;
        let mut log_joint = model.initial[state(0)].ln() + emissions[0][state(0)];
        for t in 1..len {
            log_joint += log_trans[state(t - 1)][state(t)] + emissions[t][state(t)];
        }
        terms.push(log_joint);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    let sum: f64 = terms.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Per-borrower log-likelihood contributions in panel order.
pub fn borrower_logliks(panel: &PanelDataset, params: &ModelParameters) -> Result<Vec<f64>> {
    params.check_compatible(panel)?;
    panel
        .borrowers
        .par_iter()
        .enumerate()
        .map(|(i, series)| log_likelihood(series, &params.borrower(i)?))
        .collect()
}

/// Sum of per-borrower contributions, reduced in fixed panel order.
pub fn panel_loglik(panel: &PanelDataset, params: &ModelParameters) -> Result<f64> {
    Ok(borrower_logliks(panel, params)?.iter().sum())
}

pub(crate) fn normal_log_density(x: f64, scale: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - scale.ln() - 0.5 * (x / scale).powi(2)
}

pub(crate) fn half_normal_log_density(x: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 + normal_log_density(x, scale)
}

/// Log prior density, expressed on the sampler's unconstrained scale: the
/// scale parameters are sampled as `log σ`, so `log σ_u` and `log σ_v` are
/// added as Jacobian terms.
pub fn log_prior(params: &ModelParameters, priors: &PriorConfig) -> Result<f64> {
    priors.validate()?;
    if params.sigma_u.iter().any(|s| !(*s > 0.0)) || !(params.sigma_v > 0.0) {
        return Err(Error::Domain("random-effect scales must be positive".into()));
    }
    let mut lp = 0.0;
    for beta in &params.beta {
        lp += beta.iter().map(|b| normal_log_density(*b, priors.beta_prior_scale)).sum::<f64>();
    }
    lp += params
        .trans_logit_mean
        .iter()
        .map(|m| normal_log_density(*m, priors.trans_mean_prior_scale))
        .sum::<f64>();
    for u in &params.u {
        lp += u.iter().zip(&params.sigma_u).map(|(x, s)| normal_log_density(*x, *s)).sum::<f64>();
    }
    for v in &params.trans_logit_dev {
        lp += v.iter().map(|x| normal_log_density(*x, params.sigma_v)).sum::<f64>();
    }
    for s in params.sigma_u.iter().chain(std::iter::once(&params.sigma_v)) {
        lp += half_normal_log_density(*s, priors.sigma_half_normal_scale) + s.ln();
    }
    Ok(lp)
}

pub fn log_posterior(params: &ModelParameters, panel: &PanelDataset, priors: &PriorConfig) -> Result<f64> {
    let prior = log_prior(params, priors)?;
    Ok(panel_loglik(panel, params)? + prior)
}

/// Log-likelihood of one borrower under the mixed-effects Poisson baseline.
pub fn glmm_borrower_loglik(series: &BorrowerSeries, beta: &[f64], u: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for w in &series.weeks {
        let rate = crate::model::emission_rate(&w.covariates, beta, &w.design, u)?;
        total += crate::model::emission_log_pmf(w.count, rate)
            .map_err(|e| Error::Numeric { step: w.week as usize, what: e.to_string() })?;
    }
    Ok(total)
}

pub fn glmm_panel_loglik(panel: &PanelDataset, params: &GlmmParameters) -> Result<f64> {
    if params.u.len() != panel.n_borrowers() {
        return Err(Error::Dimension(format!(
            "parameters sized for {} borrowers, panel has {}",
            params.u.len(),
            panel.n_borrowers()
        )));
    }
    let terms = panel
        .borrowers
        .par_iter()
        .zip(&params.u)
        .map(|(series, u)| glmm_borrower_loglik(series, &params.beta, u))
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

/// Baseline log prior on the same unconstrained scale as [`log_prior`].
pub fn glmm_log_prior(params: &GlmmParameters, priors: &PriorConfig) -> Result<f64> {
    priors.validate()?;
    if params.sigma_u.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("random-effect scales must be positive".into()));
    }
    let mut lp: f64 = params.beta.iter().map(|b| normal_log_density(*b, priors.beta_prior_scale)).sum();
    for u in &params.u {
        lp += u.iter().zip(&params.sigma_u).map(|(x, s)| normal_log_density(*x, *s)).sum::<f64>();
    }
    for s in &params.sigma_u {
        lp += half_normal_log_density(*s, priors.sigma_half_normal_scale) + s.ln();
    }
    Ok(lp)
}

pub fn glmm_log_posterior(params: &GlmmParameters, panel: &PanelDataset, priors: &PriorConfig) -> Result<f64> {
    let prior = glmm_log_prior(params, priors)?;
    Ok(glmm_panel_loglik(panel, params)? + prior)
}
