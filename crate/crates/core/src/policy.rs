//! Consecutive-week monitoring policy on decoded state paths.
//!
//! A borrower defaults in the week that completes `window` consecutive
//! weeks in the vulnerable state. A defaulted borrower recovers at the first
//! later week in the stable state; until then they count as distressed.

use serde::{Deserialize, Serialize};

use crate::decoding::StatePath;
use crate::error::{Error, Result};
use crate::model::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { window: 12 }
    }
}

impl PolicyConfig {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("policy window must be at least one week".into()));
        }
        Ok(Self { window })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    NonDefault,
    DefaultRecovered,
    DefaultNonRecovered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BorrowerOutcome {
    pub borrower_id: String,
    pub classification: Classification,
    /// One-based week in which the default window completed.
    pub default_week: Option<usize>,
    /// One-based week of the first return to the stable state after default.
    pub recovery_week: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CohortFlow {
    pub non_default: usize,
    pub default: usize,
    pub recovered: usize,
    pub non_recovered: usize,
}

impl CohortFlow {
    pub fn total(&self) -> usize {
        self.non_default + self.default
    }
}

/// One-based week in which the `window`-th consecutive vulnerable week
/// completes, if any.
pub fn detect_default(states: &[State], config: &PolicyConfig) -> Result<Option<usize>> {
    if states.is_empty() {
        return Err(Error::Validation("state sequence is empty".into()));
    }
    if config.window == 0 {
        return Err(Error::Config("policy window must be at least one week".into()));
    }
    let mut run = 0;
    for (t, s) in states.iter().enumerate() {
        if *s == State::Vulnerable {
            run += 1;
            if run == config.window {
                return Ok(Some(t + 1));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

/// Validates raw state labels before applying the policy.
pub fn states_from_labels(labels: &[u8]) -> Result<Vec<State>> {
    labels.iter().map(|l| State::from_label(*l)).collect()
}

fn recovery_after(states: &[State], default_week: usize) -> Option<usize> {
    states[default_week..]
        .iter()
        .position(|s| *s == State::Stable)
        .map(|offset| default_week + offset + 1)
}

pub fn classify_states(borrower_id: &str, states: &[State], config: &PolicyConfig) -> Result<BorrowerOutcome> {
    let default_week = detect_default(states, config)?;
    let recovery_week = default_week.and_then(|w| recovery_after(states, w));
    let classification = match (default_week, recovery_week) {
        (None, _) => Classification::NonDefault,
        (Some(_), Some(_)) => Classification::DefaultRecovered,
        (Some(_), None) => Classification::DefaultNonRecovered,
    };
    Ok(BorrowerOutcome {
        borrower_id: borrower_id.to_string(),
        classification,
        default_week,
        recovery_week,
    })
}

pub fn classify(path: &StatePath, config: &PolicyConfig) -> Result<BorrowerOutcome> {
    classify_states(&path.borrower_id, &path.states, config)
}

/// Share of borrowers observed in each calendar week who are inside a
/// completed, not yet recovered default episode. Index 0 is week 1.
pub fn distress_series(paths: &[StatePath], config: &PolicyConfig) -> Result<Vec<f64>> {
    if paths.is_empty() {
        return Err(Error::Validation("no state paths".into()));
    }
    let horizon = paths.iter().map(StatePath::len).max().unwrap_or(0);
    let mut active = vec![0usize; horizon];
    let mut distressed = vec![0usize; horizon];
    for path in paths {
        let outcome = classify(path, config)?;
        for w in 0..path.len() {
            active[w] += 1;
        }
        if let Some(start) = outcome.default_week {
            let end = outcome.recovery_week.unwrap_or(path.len() + 1);
            for w in start..end {
                distressed[w - 1] += 1;
            }
        }
    }
    Ok(active
        .iter()
        .zip(&distressed)
        .map(|(a, d)| if *a == 0 { 0.0 } else { *d as f64 / *a as f64 })
        .collect())
}

pub fn cohort_flow(outcomes: &[BorrowerOutcome]) -> CohortFlow {
    let mut flow = CohortFlow::default();
    for o in outcomes {
        match o.classification {
            Classification::NonDefault => flow.non_default += 1,
            Classification::DefaultRecovered => {
                flow.default += 1;
                flow.recovered += 1;
            }
            Classification::DefaultNonRecovered => {
                flow.default += 1;
                flow.non_recovered += 1;
            }
        }
    }
    flow
}

/// Everything the policy step exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyReport {
    pub window: usize,
    pub outcomes: Vec<BorrowerOutcome>,
    pub flow: CohortFlow,
    /// Weekly share of distressed borrowers, starting at week 1.
    pub distress_series: Vec<f64>,
    pub distress_terminal: f64,
    pub distress_time_average: f64,
}

pub fn policy_report(paths: &[StatePath], config: &PolicyConfig) -> Result<PolicyReport> {
    let outcomes = paths.iter().map(|p| classify(p, config)).collect::<Result<Vec<_>>>()?;
    let series = distress_series(paths, config)?;
    let terminal = series.last().copied().unwrap_or(0.0);
    let average = series.iter().sum::<f64>() / series.len().max(1) as f64;
    Ok(PolicyReport {
        window: config.window,
        flow: cohort_flow(&outcomes),
        outcomes,
        distress_series: series,
        distress_terminal: terminal,
        distress_time_average: average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(spec: &[(u8, usize)]) -> Vec<State> {
        spec.iter()
            .flat_map(|(label, n)| std::iter::repeat_n(State::from_label(*label).unwrap(), *n))
            .collect()
    }

    fn path(id: &str, states: Vec<State>) -> StatePath {
        StatePath { borrower_id: id.into(), states, log_joint: 0.0 }
    }

    #[test]
    fn default_detection_examples() {
        let cfg = PolicyConfig::default();
        assert_eq!(detect_default(&seq(&[(2, 12), (1, 1)]), &cfg).unwrap(), Some(12));
        assert_eq!(detect_default(&seq(&[(2, 11), (1, 1), (2, 11)]), &cfg).unwrap(), None);
        assert_eq!(detect_default(&seq(&[(1, 30)]), &cfg).unwrap(), None);
        assert!(detect_default(&[], &cfg).is_err());
    }

    #[test]
    fn invalid_labels_are_rejected() {
        assert!(states_from_labels(&[1, 2, 3]).is_err());
        assert!(states_from_labels(&[0]).is_err());
        assert_eq!(states_from_labels(&[1, 2]).unwrap(), vec![State::Stable, State::Vulnerable]);
    }

    #[test]
    fn classification_examples() {
        let cfg = PolicyConfig::default();
        let o = classify_states("a", &seq(&[(2, 12), (1, 1)]), &cfg).unwrap();
        assert_eq!(o.classification, Classification::DefaultRecovered);
        assert_eq!(o.default_week, Some(12));
        assert_eq!(o.recovery_week, Some(13));
        let o = classify_states("b", &seq(&[(2, 12), (2, 5)]), &cfg).unwrap();
        assert_eq!(o.classification, Classification::DefaultNonRecovered);
        let o = classify_states("c", &seq(&[(2, 11), (1, 1), (2, 11)]), &cfg).unwrap();
        assert_eq!(o.classification, Classification::NonDefault);
        assert_eq!(o.default_week, None);
    }

    #[test]
    fn distress_series_examples() {
        let cfg = PolicyConfig::default();
        let calm = vec![path("a", seq(&[(1, 20)])), path("b", seq(&[(2, 5), (1, 10)]))];
        assert!(distress_series(&calm, &cfg).unwrap().iter().all(|v| *v == 0.0));

        // default completes week 12, recovery week 20, T = 25
        let one = vec![path("a", seq(&[(2, 19), (1, 6)]))];
        let series = distress_series(&one, &cfg).unwrap();
        assert_eq!(series.len(), 25);
        for (w, v) in series.iter().enumerate() {
            let week = w + 1;
            let expected = if (12..=19).contains(&week) { 1.0 } else { 0.0 };
            assert_eq!(*v, expected, "week {week}");
        }

        let two = vec![path("a", seq(&[(2, 40)])), path("b", seq(&[(1, 40)]))];
        let series = distress_series(&two, &cfg).unwrap();
        assert_eq!(series[10], 0.0);
        assert!(series[11..].iter().all(|v| *v == 0.5));
    }

    #[test]
    fn distress_uses_active_borrowers_only() {
        let cfg = PolicyConfig::new(2).unwrap();
        let paths = vec![path("a", seq(&[(2, 6)])), path("b", seq(&[(1, 3)]))];
        let series = distress_series(&paths, &cfg).unwrap();
        assert_eq!(series, vec![0.0, 0.5, 0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn constructed_cohort_counts() {
        let cfg = PolicyConfig::default();
        let mut outcomes = Vec::new();
        for i in 0..3 {
            outcomes.push(classify_states(&format!("n{i}"), &seq(&[(1, 20)]), &cfg).unwrap());
        }
        for i in 0..2 {
            outcomes.push(classify_states(&format!("r{i}"), &seq(&[(2, 14), (1, 2)]), &cfg).unwrap());
        }
        outcomes.push(classify_states("s", &seq(&[(1, 2), (2, 14)]), &cfg).unwrap());
        let flow = cohort_flow(&outcomes);
        assert_eq!(flow, CohortFlow { non_default: 3, default: 3, recovered: 2, non_recovered: 1 });
        outcomes.reverse();
        assert_eq!(cohort_flow(&outcomes), flow);
    }

    #[test]
    fn window_must_be_positive() {
        assert!(PolicyConfig::new(0).is_err());
    }

    fn states_strategy() -> impl Strategy<Value = Vec<State>> {
        proptest::collection::vec(prop_oneof![Just(State::Stable), Just(State::Vulnerable)], 1..60)
    }

    proptest! {
        #[test]
        fn window_one_is_first_vulnerable_week(states in states_strategy()) {
            let first = states.iter().position(|s| *s == State::Vulnerable).map(|p| p + 1);
            prop_assert_eq!(detect_default(&states, &PolicyConfig { window: 1 }).unwrap(), first);
        }

        #[test]
        fn larger_windows_never_create_defaults(states in states_strategy(), w in 1usize..20, extra in 0usize..10) {
            let small = detect_default(&states, &PolicyConfig { window: w }).unwrap();
            let large = detect_default(&states, &PolicyConfig { window: w + extra }).unwrap();
            if small.is_none() {
                prop_assert!(large.is_none());
            }
        }

        #[test]
        fn recovered_implies_stable_week_after_default(states in states_strategy(), w in 1usize..8) {
            let cfg = PolicyConfig { window: w };
            let o = classify_states("x", &states, &cfg).unwrap();
            if o.classification == Classification::DefaultRecovered {
                let d = detect_default(&states, &cfg).unwrap().unwrap();
                prop_assert!(states[d..].contains(&State::Stable));
            }
            prop_assert_eq!(o.default_week.is_some(), o.classification != Classification::NonDefault);
        }

        #[test]
        fn distress_values_are_proportions(paths in proptest::collection::vec(states_strategy(), 1..8)) {
            let paths: Vec<StatePath> = paths.into_iter().enumerate().map(|(i, s)| path(&i.to_string(), s)).collect();
            for v in distress_series(&paths, &PolicyConfig { window: 3 }).unwrap() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
