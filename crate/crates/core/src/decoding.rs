//! Most-probable state paths (Viterbi) and smoothed state marginals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorSamples;
use crate::likelihood::{forward_from_emissions, log_sum_exp2};
use crate::model::{BorrowerModel, BorrowerSeries, ModelParameters, PanelDataset, State, NUM_STATES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    pub borrower_id: String,
    pub states: Vec<State>,
    /// `log p(y, z)` along the path.
    pub log_joint: f64,
}

impl StatePath {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `log p(y, z)` for an explicit state sequence.
pub fn path_log_joint(series: &BorrowerSeries, model: &BorrowerModel<'_>, states: &[State]) -> Result<f64> {
    if states.len() != series.len() {
        return Err(Error::Dimension(format!(
            "{} states for {} weeks",
            states.len(),
            series.len()
        )));
    }
    let emissions = model.log_emissions(series)?;
    let log_trans = model.transition.log();
    let mut total = 0.0;
    for (t, s) in states.iter().enumerate() {
        let k = s.index();
        total += emissions[t][k];
        total += if t == 0 {
            model.initial[k].ln()
        } else {
            log_trans[states[t - 1].index()][k]
        };
    }
    Ok(total)
}

/// MAP state sequence. Ties resolve toward state 1 at every comparison.
pub fn viterbi(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<StatePath> {
    if series.is_empty() {
        return Err(Error::Validation("cannot decode an empty series".into()));
    }
    let emissions = model.log_emissions(series)?;
    let log_trans = model.transition.log();
    let len = emissions.len();

    let mut score = [0.0; NUM_STATES];
    for k in 0..NUM_STATES {
        score[k] = model.initial[k].ln() + emissions[0][k];
    }
    let mut back = vec![[0usize; NUM_STATES]; len];
    for t in 1..len {
        let mut next = [0.0; NUM_STATES];
        for k in 0..NUM_STATES {
            let from_1 = score[0] + log_trans[0][k];
            let from_2 = score[1] + log_trans[1][k];
            let (best, arg) = if from_2 > from_1 { (from_2, 1) } else { (from_1, 0) };
            next[k] = best + emissions[t][k];
            back[t][k] = arg;
        }
        score = next;
    }
    let mut last = if score[1] > score[0] { 1 } else { 0 };
    let log_joint = score[last];
    if !log_joint.is_finite() {
        return Err(Error::Numeric { step: len, what: format!("path score is {log_joint}") });
    }
    let mut states = vec![State::Stable; len];
    for t in (0..len).rev() {
        states[t] = State::from_index(last);
        last = back[t][last];
    }
    Ok(StatePath { borrower_id: series.borrower_id.clone(), states, log_joint })
}

/// Smoothed marginals `p(Z_t = k | y_1..y_T)`.
pub fn forward_backward(series: &BorrowerSeries, model: &BorrowerModel<'_>) -> Result<Vec<[f64; NUM_STATES]>> {
    let emissions = model.log_emissions(series)?;
    let log_trans = model.transition.log();
    let fwd = forward_from_emissions(&emissions, model.initial, log_trans)?;
    let len = emissions.len();

    let mut log_beta = vec![[0.0; NUM_STATES]; len];
    for t in (0..len - 1).rev() {
        for j in 0..NUM_STATES {
            log_beta[t][j] = log_sum_exp2(
                log_trans[j][0] + emissions[t + 1][0] + log_beta[t + 1][0],
                log_trans[j][1] + emissions[t + 1][1] + log_beta[t + 1][1],
            );
        }
    }
    Ok(fwd
        .log_alpha
        .iter()
        .zip(&log_beta)
        .map(|(a, b)| {
            let joint = [a[0] + b[0], a[1] + b[1]];
            let total = log_sum_exp2(joint[0], joint[1]);
            joint.map(|v| (v - total).exp())
        })
        .collect())
}

/// Decodes every borrower at the parameter-wise posterior median.
pub fn decode_panel(
    panel: &PanelDataset,
    samples: &PosteriorSamples<ModelParameters>,
) -> Result<Vec<StatePath>> {
    let point = samples.median_point()?;
    decode_at(panel, &point)
}

/// Decodes every borrower at fixed parameters.
pub fn decode_at(panel: &PanelDataset, params: &ModelParameters) -> Result<Vec<StatePath>> {
    params.check_compatible(panel)?;
    panel
        .borrowers
        .par_iter()
        .enumerate()
        .map(|(i, series)| viterbi(series, &params.borrower(i)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RawBorrower, TransitionMatrix};
    use approx::assert_abs_diff_eq;

    fn series(counts: &[u32]) -> BorrowerSeries {
        let raw = RawBorrower {
            borrower_id: "b".into(),
            weeks: counts.iter().map(|c| (*c, vec![])).collect(),
        };
        PanelDataset::from_raw(vec![raw], vec![], false).unwrap().borrowers.remove(0)
    }

    #[test]
    fn total_tie_decodes_to_state_one() {
        let s = series(&[1, 0, 3, 2]);
        let beta = [vec![0.2], vec![0.2]];
        let model = BorrowerModel::new([&beta[0], &beta[1]], &[0.0], TransitionMatrix::from_diagonal([0.5, 0.5])).unwrap();
        let path = viterbi(&s, &model).unwrap();
        assert!(path.states.iter().all(|s| *s == State::Stable));
    }

    #[test]
    fn emissions_dominate_with_separated_rates() {
        let s = series(&[0, 0, 6, 7, 0]);
        let beta = [vec![0.1_f64.ln()], vec![5.0_f64.ln()]];
        let model = BorrowerModel::new([&beta[0], &beta[1]], &[0.0], TransitionMatrix::from_diagonal([0.95, 0.95])).unwrap();
        let path = viterbi(&s, &model).unwrap();
        let labels: Vec<u8> = path.states.iter().map(|s| s.label()).collect();
        assert_eq!(labels, vec![1, 1, 2, 2, 1]);
        let joint = path_log_joint(&s, &model, &path.states).unwrap();
        assert_abs_diff_eq!(joint, path.log_joint, epsilon = 1e-12);
    }

    #[test]
    fn single_week_smoothing_is_bayes_rule() {
        let s = series(&[2]);
        let beta = [vec![0.0], vec![1.0]];
        let model = BorrowerModel::new([&beta[0], &beta[1]], &[0.0], TransitionMatrix::from_diagonal([0.8, 0.6])).unwrap();
        let post = forward_backward(&s, &model).unwrap();
        let like = |l: f64| l * l * (-l).exp();
        let w1 = model.initial[0] * like(1.0);
        let w2 = model.initial[1] * like(1.0_f64.exp());
        assert_abs_diff_eq!(post[0][0], w1 / (w1 + w2), epsilon = 1e-14);
    }

    #[test]
    fn uninformative_emissions_give_stationary_marginals() {
        let s = series(&[4, 0, 1, 9, 2, 2]);
        let beta = [vec![0.7], vec![0.7]];
        let model = BorrowerModel::new([&beta[0], &beta[1]], &[0.0], TransitionMatrix::from_diagonal([0.9, 0.7])).unwrap();
        for row in forward_backward(&s, &model).unwrap() {
            assert_abs_diff_eq!(row[0], model.initial[0], epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], model.initial[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn final_smoothed_row_equals_final_filtered_row() {
        let s = series(&[0, 3, 8, 1, 0, 2]);
        let beta = [vec![-0.2], vec![1.5]];
        let model = BorrowerModel::new([&beta[0], &beta[1]], &[0.1], TransitionMatrix::from_diagonal([0.85, 0.7])).unwrap();
        let smoothed = forward_backward(&s, &model).unwrap();
        let filtered = crate::likelihood::forward(&s, &model).unwrap().filtered_probs;
        let (a, b) = (smoothed.last().unwrap(), filtered.last().unwrap());
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-10);
        assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-10);
    }

    #[test]
    fn label_swap_swaps_decoded_path() {
        let s = series(&[0, 5, 6, 0, 1, 7]);
        let mut params = ModelParameters::zeros(1, 1, 1);
        params.beta = [vec![-1.0], vec![1.6]];
        params.trans_logit_mean = [1.0, 0.4];
        let panel = PanelDataset::new(vec![s.clone()], vec!["intercept".into()], vec![crate::model::Standardization::IDENTITY]).unwrap();
        let before = decode_at(&panel, &params).unwrap().remove(0);
        params.swap_labels();
        let after = decode_at(&panel, &params).unwrap().remove(0);
        let swapped: Vec<State> = before.states.iter().map(|s| s.swapped()).collect();
        assert_eq!(after.states, swapped);
        assert_abs_diff_eq!(after.log_joint, before.log_joint, epsilon = 1e-12);
    }
}
