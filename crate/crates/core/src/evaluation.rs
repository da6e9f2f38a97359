//! One-step-ahead count predictions and weekly MAE/MSE for the hidden-state
//! model and the mixed-effects Poisson baseline.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::GlmmParameters;
use crate::likelihood::forward;
use crate::model::{emission_rate, BorrowerModel, BorrowerSeries, ModelParameters, PanelDataset, NUM_STATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "ME-Poisson")]
    MePoisson,
    #[serde(rename = "ME-Poisson-HMM")]
    MePoissonHmm,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::MePoisson => "ME-Poisson",
            ModelTag::MePoissonHmm => "ME-Poisson-HMM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub week: usize,
    pub predicted: f64,
    pub actual: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model: ModelTag,
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(model: ModelTag, predictions: Vec<Prediction>) -> Result<Self> {
        if let Some(bad) = predictions.iter().find(|p| !(p.predicted >= 0.0 && p.predicted.is_finite())) {
            return Err(Error::Numeric {
                step: bad.week,
                what: format!("prediction {} is not a finite non-negative mean", bad.predicted),
            });
        }
        Ok(Self { model, predictions })
    }
}

/// Filtered one-step-ahead means: week 1 mixes the stationary
/// distribution, week t mixes the filtered state at t-1 pushed through the
/// transition matrix. Only counts before week t enter the prediction.
pub fn predict_hmm(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<Vec<f64>> {
    let rates = model.rates(series)?;
    let filtered = forward(series, model)?.filtered_probs;
    let p = &model.transition;
    Ok(rates
        .iter()
        .enumerate()
        .map(|(t, rate)| {
            let weights: [f64; NUM_STATES] = if t == 0 {
                model.initial
            } else {
                let f = filtered[t - 1];
                [0, 1].map(|k| f[0] * p.get(0, k) + f[1] * p.get(1, k))
            };
            weights[0] * rate[0] + weights[1] * rate[1]
        })
        .collect())
}

pub fn predict_glmm(series: &BorrowerSeries, beta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    series
        .weeks
        .iter()
        .map(|w| emission_rate(&w.covariates, beta, &w.design, u))
        .collect()
}

pub fn predict_panel_hmm(panel: &PanelDataset, params: &ModelParameters) -> Result<PredictionSet> {
    params.check_compatible(panel)?;
    let per_borrower = panel
        .borrowers
        .par_iter()
        .enumerate()
        .map(|(i, s)| predict_hmm(s, &params.borrower(i)?))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(ModelTag::MePoissonHmm, flatten(panel, per_borrower))
}

pub fn predict_panel_glmm(panel: &PanelDataset, params: &GlmmParameters) -> Result<PredictionSet> {
    if params.u.len() != panel.n_borrowers() {
        return Err(Error::Dimension("baseline parameters do not match the panel".into()));
    }
    let per_borrower = panel
        .borrowers
        .par_iter()
        .zip(&params.u)
        .map(|(s, u)| predict_glmm(s, &params.beta, u))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(ModelTag::MePoisson, flatten(panel, per_borrower))
}

fn flatten(panel: &PanelDataset, per_borrower: Vec<Vec<f64>>) -> Vec<Prediction> {
    panel
        .borrowers
        .iter()
        .zip(per_borrower)
        .flat_map(|(s, preds)| {
            s.weeks.iter().zip(preds).map(|(w, predicted)| Prediction {
                week: w.week as usize,
                predicted,
                actual: w.count,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekMetric {
    pub week: usize,
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: ModelTag,
    pub weekly: Vec<WeekMetric>,
    /// Unweighted means of the weekly values.
    pub overall_mae: f64,
    pub overall_mse: f64,
    /// Weeks inside the observed range that had no predictions.
    pub excluded_weeks: Vec<usize>,
}

pub fn weekly_metrics(predictions: &PredictionSet) -> Result<MetricsReport> {
    if predictions.predictions.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let horizon = predictions.predictions.iter().map(|p| p.week).max().unwrap_or(0);
    let mut abs = vec![0.0; horizon + 1];
    let mut sq = vec![0.0; horizon + 1];
    let mut n = vec![0usize; horizon + 1];
    for p in &predictions.predictions {
        let err = p.predicted - f64::from(p.actual);
        abs[p.week] += err.abs();
        sq[p.week] += err * err;
        n[p.week] += 1;
    }
    let mut weekly = Vec::new();
    let mut excluded_weeks = Vec::new();
    for week in 1..=horizon {
        if n[week] == 0 {
            excluded_weeks.push(week);
            continue;
        }
        let count = n[week] as f64;
        weekly.push(WeekMetric { week, n: n[week], mae: abs[week] / count, mse: sq[week] / count });
    }
    let weeks = weekly.len() as f64;
    Ok(MetricsReport {
        model: predictions.model,
        overall_mae: weekly.iter().map(|m| m.mae).sum::<f64>() / weeks,
        overall_mse: weekly.iter().map(|m| m.mse).sum::<f64>() / weeks,
        weekly,
        excluded_weeks,
    })
}

pub const METRICS_HEADER: [&str; 4] = ["week", "model", "mae", "mse"];

/// Writes weekly metrics of several models as `week,model,mae,mse` rows.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(METRICS_HEADER)?;
    for r in reports {
        let tag = r.model.to_string();
        for m in &r.weekly {
            out.write_record([m.week.to_string(), tag.clone(), m.mae.to_string(), m.mse.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
