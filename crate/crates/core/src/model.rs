//! Domain types of the two-state mixed Poisson HMM and its emission and
//! transition primitives.
//!
//! Conditional on hidden state `k` and random effect `u_i`, the count of
//! borrower `i` in week `t` is `Poisson(exp(x_it·β_k + d_it·u_i))`. Each
//! borrower follows a homogeneous two-state Markov chain whose diagonal
//! persistence probabilities are `logistic(μ_k + v_ik)`, started from its
//! stationary distribution.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

pub const NUM_STATES: usize = 2;

/// Name of the constant column that leads every covariate vector.
pub const INTERCEPT: &str = "intercept";

/// Hidden financial condition of a borrower in a given week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    /// State 1, the lower baseline rate.
    Stable,
    /// State 2, the higher baseline rate (financially vulnerable).
    Vulnerable,
}

impl State {
    pub const ALL: [State; NUM_STATES] = [State::Stable, State::Vulnerable];

    /// Zero-based array position.
    pub fn index(self) -> usize {
        match self {
            State::Stable => 0,
            State::Vulnerable => 1,
        }
    }

    /// One-based label used in files and reports.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_index(index: usize) -> State {
        if index == 0 {
            State::Stable
        } else {
            State::Vulnerable
        }
    }

    pub fn from_label(label: u8) -> Result<State> {
        match label {
            1 => Ok(State::Stable),
            2 => Ok(State::Vulnerable),
            other => Err(Error::Validation(format!(
                "state label must be 1 or 2, got {other}"
            ))),
        }
    }

    pub fn swapped(self) -> State {
        match self {
            State::Stable => State::Vulnerable,
            State::Vulnerable => State::Stable,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Serialize for State {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.label())
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let label = u8::deserialize(d)?;
        State::from_label(label).map_err(serde::de::Error::custom)
    }
}

/// One borrower-week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord {
    pub week: u32,
    pub count: u32,
    /// Covariates as observed, before standardization and without the intercept.
    pub raw: Vec<f64>,
    /// Model covariates `x_it`: leading 1 followed by the standardized raw values.
    pub covariates: Vec<f64>,
    /// Random-effect design `d_it`.
    pub design: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorrowerSeries {
    pub borrower_id: String,
    pub weeks: Vec<WeekRecord>,
}

impl BorrowerSeries {
    /// Builds a series, checking that weeks run 1..=T and that all
    /// covariate and design vectors share their lengths.
    pub fn new(borrower_id: impl Into<String>, weeks: Vec<WeekRecord>) -> Result<Self> {
        let borrower_id = borrower_id.into();
        if weeks.is_empty() {
            return Err(Error::Validation(format!("borrower {borrower_id} has no weeks")));
        }
        let p = weeks[0].covariates.len();
        let q = weeks[0].design.len();
        for (t, w) in weeks.iter().enumerate() {
            if w.week as usize != t + 1 {
                return Err(Error::Validation(format!(
                    "borrower {borrower_id}: expected week {} but found {}",
                    t + 1,
                    w.week
                )));
            }
            if w.covariates.len() != p || w.design.len() != q {
                return Err(Error::Dimension(format!(
                    "borrower {borrower_id} week {}: covariate/design lengths vary",
                    w.week
                )));
            }
        }
        Ok(Self { borrower_id, weeks })
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn counts(&self) -> impl Iterator<Item = u32> + '_ {
        self.weeks.iter().map(|w| w.count)
    }

    pub fn n_covariates(&self) -> usize {
        self.weeks.first().map_or(0, |w| w.covariates.len())
    }

    pub fn n_random_effects(&self) -> usize {
        self.weeks.first().map_or(0, |w| w.design.len())
    }
}

/// Affine transform applied to one covariate column: `(raw - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, scale: 1.0 };

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }
}

/// Raw rows of one borrower before standardization: `(count, raw covariates)`
/// for weeks 1..=T in order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBorrower {
    pub borrower_id: String,
    pub weeks: Vec<(u32, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub borrowers: Vec<BorrowerSeries>,
    /// `p` labels; the first is always the intercept.
    pub covariate_names: Vec<String>,
    /// One transform per covariate; the intercept carries the identity.
    pub standardization: Vec<Standardization>,
}

impl PanelDataset {
    pub fn new(
        borrowers: Vec<BorrowerSeries>,
        covariate_names: Vec<String>,
        standardization: Vec<Standardization>,
    ) -> Result<Self> {
        if borrowers.is_empty() {
            return Err(Error::Validation("panel has no borrowers".into()));
        }
        let p = covariate_names.len();
        if standardization.len() != p {
            return Err(Error::Dimension(format!(
                "{} standardization entries for {p} covariates",
                standardization.len()
            )));
        }
        let q = borrowers[0].n_random_effects();
        let mut seen = HashSet::new();
        for b in &borrowers {
            if !seen.insert(b.borrower_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate borrower id {}",
                    b.borrower_id
                )));
            }
            if b.n_covariates() != p || b.n_random_effects() != q {
                return Err(Error::Dimension(format!(
                    "borrower {} has {} covariates and {} random effects, expected {p} and {q}",
                    b.borrower_id,
                    b.n_covariates(),
                    b.n_random_effects()
                )));
            }
        }
        Ok(Self { borrowers, covariate_names, standardization })
    }

    /// Builds model-ready covariates from raw rows: prepends the intercept,
    /// z-scores every raw column with panel-wide moments (when `standardize`
    /// is set) and uses a random intercept as the random-effect design.
    pub fn from_raw(
        raw: Vec<RawBorrower>,
        raw_names: Vec<String>,
        standardize: bool,
    ) -> Result<Self> {
        let width = raw_names.len();
        for b in &raw {
            for (count_week, (_, values)) in b.weeks.iter().enumerate() {
                if values.len() != width {
                    return Err(Error::Dimension(format!(
                        "borrower {} week {}: {} covariates, expected {width}",
                        b.borrower_id,
                        count_week + 1,
                        values.len()
                    )));
                }
                if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "borrower {}: non-finite covariate {bad}",
                        b.borrower_id
                    )));
                }
            }
        }
        let transforms: Vec<Standardization> = if standardize {
            (0..width).map(|j| column_moments(&raw, j)).collect()
        } else {
            vec![Standardization::IDENTITY; width]
        };

        let borrowers = raw
            .into_iter()
            .map(|b| {
                let weeks = b
                    .weeks
                    .into_iter()
                    .enumerate()
                    .map(|(t, (count, values))| {
                        let mut covariates = Vec::with_capacity(width + 1);
                        covariates.push(1.0);
                        covariates.extend(values.iter().zip(&transforms).map(|(v, s)| s.apply(*v)));
                        WeekRecord {
                            week: t as u32 + 1,
                            count,
                            raw: values,
                            covariates,
                            design: vec![1.0],
                        }
                    })
                    .collect();
                BorrowerSeries::new(b.borrower_id, weeks)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut names = Vec::with_capacity(width + 1);
        names.push(INTERCEPT.to_string());
        names.extend(raw_names);
        let mut standardization = Vec::with_capacity(width + 1);
        standardization.push(Standardization::IDENTITY);
        standardization.extend(transforms);
        Self::new(borrowers, names, standardization)
    }

    pub fn n_borrowers(&self) -> usize {
        self.borrowers.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_random_effects(&self) -> usize {
        self.borrowers[0].n_random_effects()
    }

    pub fn n_observations(&self) -> usize {
        self.borrowers.iter().map(BorrowerSeries::len).sum()
    }

    pub fn max_weeks(&self) -> usize {
        self.borrowers.iter().map(BorrowerSeries::len).max().unwrap_or(0)
    }

    /// True when the random effect is a plain intercept shared with the
    /// leading covariate column, so a common shift of both is unidentified
    /// by the likelihood.
    pub fn has_random_intercept(&self) -> bool {
        self.borrowers.iter().all(|b| {
            b.weeks
                .iter()
                .all(|w| w.design == [1.0] && w.covariates.first() == Some(&1.0))
        })
    }

    /// Raw names without the intercept.
    pub fn raw_names(&self) -> &[String] {
        &self.covariate_names[1..]
    }
}

/// Panel-wide mean and population standard deviation of one raw column.
/// Constant columns keep scale 1.
fn column_moments(raw: &[RawBorrower], j: usize) -> Standardization {
    let mut n = 0.0;
    let mut sum = 0.0;
    for b in raw {
        for (_, v) in &b.weeks {
            n += 1.0;
            sum += v[j];
        }
    }
    if n == 0.0 {
        return Standardization::IDENTITY;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for b in raw {
        for (_, v) in &b.weeks {
            ss += (v[j] - mean).powi(2);
        }
    }
    let sd = (ss / n).sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
    Standardization { mean, scale }
}

/// Weakly informative prior scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub beta_prior_scale: f64,
    pub trans_mean_prior_scale: f64,
    pub sigma_half_normal_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_prior_scale: 5.0,
            trans_mean_prior_scale: 2.5,
            sigma_half_normal_scale: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_prior_scale", self.beta_prior_scale),
            ("trans_mean_prior_scale", self.trans_mean_prior_scale),
            ("sigma_half_normal_scale", self.sigma_half_normal_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Full parameter vector of the hidden-state model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    /// State-indexed fixed effects `β_1, β_2`, each of length p.
    pub beta: [Vec<f64>; NUM_STATES],
    /// Per-borrower random effects `u_i`, each of length q.
    pub u: Vec<Vec<f64>>,
    pub sigma_u: Vec<f64>,
    /// Population logits `μ_k` of the diagonal persistence probabilities.
    pub trans_logit_mean: [f64; NUM_STATES],
    /// Borrower deviations `v_ik` from the population logits.
    pub trans_logit_dev: Vec<[f64; NUM_STATES]>,
    pub sigma_v: f64,
}

impl ModelParameters {
    /// All-zero coefficients, unit scales, sized for `n` borrowers.
    pub fn zeros(n: usize, p: usize, q: usize) -> Self {
        Self {
            beta: [vec![0.0; p], vec![0.0; p]],
            u: vec![vec![0.0; q]; n],
            sigma_u: vec![1.0; q],
            trans_logit_mean: [0.0; NUM_STATES],
            trans_logit_dev: vec![[0.0; NUM_STATES]; n],
            sigma_v: 1.0,
        }
    }

    pub fn n_borrowers(&self) -> usize {
        self.u.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta[0].len()
    }

    /// Checks that the parameters can be evaluated against `panel`.
    pub fn check_compatible(&self, panel: &PanelDataset) -> Result<()> {
        let (n, p, q) = (panel.n_borrowers(), panel.n_covariates(), panel.n_random_effects());
        if self.beta[0].len() != p || self.beta[1].len() != p {
            return Err(Error::Dimension(format!(
                "beta lengths ({}, {}) do not match {p} covariates",
                self.beta[0].len(),
                self.beta[1].len()
            )));
        }
        if self.u.len() != n || self.trans_logit_dev.len() != n {
            return Err(Error::Dimension(format!(
                "parameters sized for {} borrowers, panel has {n}",
                self.u.len()
            )));
        }
        if self.sigma_u.len() != q || self.u.iter().any(|u| u.len() != q) {
            return Err(Error::Dimension(format!("random effects must have length {q}")));
        }
        Ok(())
    }

    /// State 2 must carry the higher baseline (intercept) rate.
    pub fn is_identified(&self) -> bool {
        self.beta[1][0] > self.beta[0][0]
    }

    /// Exchanges the two state labels.
    pub fn swap_labels(&mut self) {
        self.beta.swap(0, 1);
        self.trans_logit_mean.swap(0, 1);
        for v in &mut self.trans_logit_dev {
            v.swap(0, 1);
        }
    }

    /// Swaps labels when the ordering constraint is violated; returns
    /// whether a swap happened.
    pub fn relabel(&mut self) -> bool {
        if self.beta[1][0] < self.beta[0][0] {
            self.swap_labels();
            true
        } else {
            false
        }
    }

    /// Diagonal persistence probabilities at the population level.
    pub fn population_persistence(&self) -> [f64; NUM_STATES] {
        self.trans_logit_mean.map(logistic)
    }

    pub fn borrower(&self, index: usize) -> Result<BorrowerModel<'_>> {
        let u = self.u.get(index).ok_or_else(|| {
            Error::Dimension(format!("borrower index {index} out of range"))
        })?;
        let transition = transition_matrix(self, index)?;
        BorrowerModel::new([&self.beta[0], &self.beta[1]], u, transition)
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-stochastic 2×2 matrix, `p[from][to]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix(pub [[f64; NUM_STATES]; NUM_STATES]);

impl TransitionMatrix {
    /// Builds the matrix from its diagonal; off-diagonals are complements.
    pub fn from_diagonal(stay: [f64; NUM_STATES]) -> Self {
        TransitionMatrix([[stay[0], 1.0 - stay[0]], [1.0 - stay[1], stay[1]]])
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[from][to]
    }

    pub fn log(&self) -> [[f64; NUM_STATES]; NUM_STATES] {
        self.0.map(|row| row.map(f64::ln))
    }
}

/// `P_kk = logistic(μ_k + v_ik)` with complementary off-diagonals.
pub fn transition_matrix(params: &ModelParameters, borrower_index: usize) -> Result<TransitionMatrix> {
    let dev = params.trans_logit_dev.get(borrower_index).ok_or_else(|| {
        Error::Dimension(format!("borrower index {borrower_index} out of range"))
    })?;
    Ok(transition_from_logits(params.trans_logit_mean, *dev))
}

pub fn transition_from_logits(mean: [f64; NUM_STATES], dev: [f64; NUM_STATES]) -> TransitionMatrix {
    TransitionMatrix::from_diagonal([logistic(mean[0] + dev[0]), logistic(mean[1] + dev[1])])
}

/// Stationary distribution of a two-state chain.
pub fn initial_distribution(p: &TransitionMatrix) -> Result<[f64; NUM_STATES]> {
    let leave_1 = p.get(0, 1);
    let leave_2 = p.get(1, 0);
    let total = leave_1 + leave_2;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateChain(format!(
            "off-diagonals {leave_1} and {leave_2} admit no unique stationary distribution"
        )));
    }
    let first = leave_2 / total;
    Ok([first, 1.0 - first])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `λ_k = exp(x·β_k + d·u_i)`.
pub fn emission_rate(x: &[f64], beta_k: &[f64], d: &[f64], u_i: &[f64]) -> Result<f64> {
    if x.len() != beta_k.len() {
        return Err(Error::Dimension(format!(
            "{} covariates but {} coefficients",
            x.len(),
            beta_k.len()
        )));
    }
    if d.len() != u_i.len() {
        return Err(Error::Dimension(format!(
            "design of length {} but {} random effects",
            d.len(),
            u_i.len()
        )));
    }
    Ok((dot(x, beta_k) + dot(d, u_i)).exp())
}

/// Poisson log mass `y log λ − λ − log y!`.
pub fn emission_log_pmf(y: u32, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("Poisson rate must be positive and finite, got {lambda}")));
    }
    Ok(f64::from(y) * lambda.ln() - lambda - ln_factorial(u64::from(y)))
}

/// Poisson log mass parameterized by the log rate, the form used in the
/// hot loops: `y η − exp(η) − log y!`.
pub fn log_pmf_from_log_rate(y: u32, log_rate: f64) -> f64 {
    f64::from(y) * log_rate - log_rate.exp() - ln_factorial(u64::from(y))
}

/// Parameters of a single borrower, resolved from [`ModelParameters`].
#[derive(Debug, Clone, Copy)]
pub struct BorrowerModel<'a> {
    pub beta: [&'a [f64]; NUM_STATES],
    pub random_effect: &'a [f64],
    pub transition: TransitionMatrix,
    pub initial: [f64; NUM_STATES],
}

impl<'a> BorrowerModel<'a> {
    pub fn new(
        beta: [&'a [f64]; NUM_STATES],
        random_effect: &'a [f64],
        transition: TransitionMatrix,
    ) -> Result<Self> {
        let initial = initial_distribution(&transition)?;
        Ok(Self { beta, random_effect, transition, initial })
    }

    /// Log emission probabilities for every week, `[t][k]`.
    pub fn log_emissions(&self, series: &BorrowerSeries) -> Result<Vec<[f64; NUM_STATES]>> {
        series
            .weeks
            .iter()
            .map(|w| {
                let mut row = [0.0; NUM_STATES];
                for (k, slot) in row.iter_mut().enumerate() {
                    let rate = emission_rate(&w.covariates, self.beta[k], &w.design, self.random_effect)?;
                    *slot = emission_log_pmf(w.count, rate).map_err(|e| match e {
                        Error::Domain(msg) => Error::Numeric { step: w.week as usize, what: msg },
                        other => other,
                    })?;
                }
                Ok(row)
            })
            .collect()
    }

    /// Emission rates for every week, `[t][k]`.
    pub fn rates(&self, series: &BorrowerSeries) -> Result<Vec<[f64; NUM_STATES]>> {
        series
            .weeks
            .iter()
            .map(|w| {
                let mut row = [0.0; NUM_STATES];
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot = emission_rate(&w.covariates, self.beta[k], &w.design, self.random_effect)?;
                }
                Ok(row)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn emission_rate_examples() {
        assert_eq!(emission_rate(&[0.0, 0.0], &[3.0, -1.0], &[1.0], &[0.0]).unwrap(), 1.0);
        let r = emission_rate(&[1.0, 0.5], &[0.2, -0.4], &[1.0], &[0.3]).unwrap();
        assert_abs_diff_eq!(r, 0.3_f64.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(r, 1.34986, epsilon = 1e-5);
        let doubled = emission_rate(&[1.0, 0.5], &[0.2, -0.4], &[1.0], &[0.6]).unwrap();
        assert_abs_diff_eq!(doubled / r, 0.3_f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn emission_rate_rejects_mismatched_dimensions() {
        assert!(matches!(emission_rate(&[1.0], &[1.0, 2.0], &[1.0], &[0.0]), Err(Error::Dimension(_))));
        assert!(matches!(emission_rate(&[1.0], &[1.0], &[1.0, 1.0], &[0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn log_pmf_examples() {
        assert_abs_diff_eq!(emission_log_pmf(0, 1.0).unwrap(), -1.0, epsilon = 1e-15);
        let expected = 3.0 * 2.0_f64.ln() - 2.0 - 6.0_f64.ln();
        assert_abs_diff_eq!(emission_log_pmf(3, 2.0).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, -1.71231, epsilon = 1e-5);

        // summed-log formulation of log(150!)
        let log_fact: f64 = (1..=150).map(|k| f64::from(k).ln()).sum();
        let direct = 150.0 * 150.0_f64.ln() - 150.0 - log_fact;
        let v = emission_log_pmf(150, 150.0).unwrap();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, direct, epsilon = 1e-9);
    }

    #[test]
    fn log_pmf_rejects_bad_rate() {
        assert!(matches!(emission_log_pmf(1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(emission_log_pmf(1, -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn transition_examples() {
        let mut params = ModelParameters::zeros(1, 1, 1);
        let p = transition_matrix(&params, 0).unwrap();
        assert_eq!(p.0, [[0.5, 0.5], [0.5, 0.5]]);

        params.trans_logit_mean = [2.1972, 2.1972];
        let p = transition_matrix(&params, 0).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.9, epsilon = 1e-4);
        assert_abs_diff_eq!(p.get(1, 1), 0.9, epsilon = 1e-4);
        assert!(transition_matrix(&params, 1).is_err());
    }

    #[test]
    fn stationary_examples() {
        let p = TransitionMatrix([[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(initial_distribution(&p).unwrap(), [0.5, 0.5]);
        let p = TransitionMatrix([[0.9, 0.1], [0.2, 0.8]]);
        let pi = initial_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-15);
        let frozen = TransitionMatrix([[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(initial_distribution(&frozen), Err(Error::DegenerateChain(_))));
    }

    #[test]
    fn relabel_swaps_state_blocks() {
        let mut params = ModelParameters::zeros(2, 2, 1);
        params.beta = [vec![1.0, 0.5], vec![-1.0, 0.2]];
        params.trans_logit_mean = [1.0, 2.0];
        params.trans_logit_dev = vec![[0.1, 0.2], [0.3, 0.4]];
        assert!(!params.is_identified());
        assert!(params.relabel());
        assert!(params.is_identified());
        assert_eq!(params.beta[0], vec![-1.0, 0.2]);
        assert_eq!(params.trans_logit_mean, [2.0, 1.0]);
        assert_eq!(params.trans_logit_dev[1], [0.4, 0.3]);
        assert!(!params.relabel());
    }

    #[test]
    fn state_labels_round_trip() {
        for s in State::ALL {
            assert_eq!(State::from_label(s.label()).unwrap(), s);
            assert_eq!(State::from_index(s.index()), s);
        }
        assert!(State::from_label(0).is_err());
        assert!(State::from_label(3).is_err());
    }

    #[test]
    fn from_raw_standardizes_with_panel_moments() {
        let raw = vec![
            RawBorrower { borrower_id: "a".into(), weeks: vec![(1, vec![1.0, 5.0]), (0, vec![3.0, 5.0])] },
            RawBorrower { borrower_id: "b".into(), weeks: vec![(2, vec![5.0, 5.0])] },
        ];
        let panel = PanelDataset::from_raw(raw, vec!["x".into(), "c".into()], true).unwrap();
        assert_eq!(panel.covariate_names, vec!["intercept", "x", "c"]);
        assert_eq!(panel.standardization[1].mean, 3.0);
        assert_abs_diff_eq!(panel.standardization[1].scale, (8.0_f64 / 3.0).sqrt(), epsilon = 1e-15);
        // constant column keeps scale 1
        assert_eq!(panel.standardization[2], Standardization { mean: 5.0, scale: 1.0 });
        let w = &panel.borrowers[0].weeks[1];
        assert_eq!(w.week, 2);
        assert_eq!(w.raw, vec![3.0, 5.0]);
        assert_eq!(w.covariates, vec![1.0, 0.0, 0.0]);
        assert!(panel.has_random_intercept());
    }

    #[test]
    fn panel_rejects_duplicate_ids() {
        let raw = vec![
            RawBorrower { borrower_id: "a".into(), weeks: vec![(1, vec![1.0])] },
            RawBorrower { borrower_id: "a".into(), weeks: vec![(2, vec![5.0])] },
        ];
        assert!(PanelDataset::from_raw(raw, vec!["x".into()], false).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(mu1 in -8.0..8.0f64, mu2 in -8.0..8.0f64, v1 in -3.0..3.0f64, v2 in -3.0..3.0f64) {
            let p = transition_from_logits([mu1, mu2], [v1, v2]);
            for row in p.0 {
                prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
                prop_assert!(row[0] > 0.0 && row[0] < 1.0 && row[1] > 0.0 && row[1] < 1.0);
            }
        }

        #[test]
        fn stationary_is_invariant(a in 0.001..0.999f64, b in 0.001..0.999f64) {
            let p = TransitionMatrix::from_diagonal([a, b]);
            let pi = initial_distribution(&p).unwrap();
            for k in 0..2 {
                let next = pi[0] * p.get(0, k) + pi[1] * p.get(1, k);
                prop_assert!((next - pi[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn pmf_sums_to_one(lambda in 0.01..200.0f64) {
            let y_max = (lambda + 20.0 * lambda.sqrt() + 50.0).ceil() as u32;
            let total: f64 = (0..=y_max).map(|y| emission_log_pmf(y, lambda).unwrap().exp()).sum();
            prop_assert!(total >= 1.0 - 1e-8);
            prop_assert!(total <= 1.0 + 1e-8);
        }

        #[test]
        fn log_rate_is_linear_in_beta(
            x in proptest::collection::vec(-2.0..2.0f64, 3),
            beta in proptest::collection::vec(-1.0..1.0f64, 3),
            j in 0usize..3,
        ) {
            let h = 1e-6;
            let base = emission_rate(&x, &beta, &[1.0], &[0.1]).unwrap().ln();
            let mut bumped = beta.clone();
            bumped[j] += h;
            let moved = emission_rate(&x, &bumped, &[1.0], &[0.1]).unwrap().ln();
            prop_assert!(((moved - base) / h - x[j]).abs() <= 1e-8);
        }
    }
}
