#![allow(dead_code)]

//! Exhaustive path enumeration, written from the model definition without
//! touching the library's likelihood code.

use mhmm::model::{BorrowerSeries, WeekRecord};
use mhmm::ModelParameters;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Instance {
    pub series: BorrowerSeries,
    pub params: ModelParameters,
}

pub struct Enumeration {
    pub log_marginal: f64,
    /// First path (in lexicographic order, state 1 before 2) reaching the maximum.
    pub best_path: Vec<u8>,
    pub best_log_joint: f64,
    /// Posterior state probabilities per week.
    pub marginals: Vec<[f64; 2]>,
}

fn ln_factorial(y: u32) -> f64 {
    (2..=y).map(|k| f64::from(k).ln()).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Random borrower with 2 to `max_len` weeks, counts up to 20 and moderate
/// parameters.
pub fn random_instance(rng: &mut ChaCha8Rng, max_len: usize) -> Instance {
    let len = rng.random_range(2..=max_len);
    let p = rng.random_range(1..=3);
    let n = Normal::new(0.0, 1.0).unwrap();
    let weeks = (0..len)
        .map(|t| {
            let mut covariates = vec![1.0];
            covariates.extend((1..p).map(|_| n.sample(rng)));
            WeekRecord {
                week: t as u32 + 1,
                count: rng.random_range(0..=20),
                raw: covariates[1..].to_vec(),
                covariates,
                design: vec![1.0],
            }
        })
        .collect();
    let series = BorrowerSeries::new("r", weeks).unwrap();
    let mut params = ModelParameters::zeros(1, p, 1);
    for k in 0..2 {
        params.beta[k][0] = rng.random_range(-1.0..2.5);
        for j in 1..p {
            params.beta[k][j] = 0.7 * n.sample(rng);
        }
        params.trans_logit_mean[k] = rng.random_range(-1.0..3.0);
        params.trans_logit_dev[0][k] = 0.5 * n.sample(rng);
    }
    params.u[0][0] = 0.5 * n.sample(rng);
    Instance { series, params }
}

pub fn enumerate(series: &BorrowerSeries, params: &ModelParameters) -> Enumeration {
    let len = series.weeks.len();
    assert!(len <= 16, "enumeration oracle is for short series");
    let stay = [0, 1].map(|k| sigmoid(params.trans_logit_mean[k] + params.trans_logit_dev[0][k]));
    let trans = [[stay[0], 1.0 - stay[0]], [1.0 - stay[1], stay[1]]];
    let pi1 = trans[1][0] / (trans[0][1] + trans[1][0]);
    let init = [pi1, 1.0 - pi1];
    let log_em: Vec<[f64; 2]> = series
        .weeks
        .iter()
        .map(|w| {
            [0, 1].map(|k| {
                let eta: f64 = w.covariates.iter().zip(&params.beta[k]).map(|(x, b)| x * b).sum::<f64>()
                    + w.design.iter().zip(&params.u[0]).map(|(d, u)| d * u).sum::<f64>();
                f64::from(w.count) * eta - eta.exp() - ln_factorial(w.count)
            })
        })
        .collect();

    let mut joints = Vec::with_capacity(1 << len);
    for code in 0..(1usize << len) {
        // most significant bit is week 1, so codes run in lexicographic order
        let path: Vec<usize> = (0..len).map(|t| (code >> (len - 1 - t)) & 1).collect();
        let mut lj = init[path[0]].ln() + log_em[0][path[0]];
        for t in 1..len {
            lj += trans[path[t - 1]][path[t]].ln() + log_em[t][path[t]];
        }
        joints.push((path, lj));
    }
    let max = joints.iter().map(|(_, lj)| *lj).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = joints.iter().map(|(_, lj)| (lj - max).exp()).sum();
    let log_marginal = max + total.ln();
    let (best, best_lj) = joints.iter().find(|(_, lj)| *lj == max).unwrap();
    let mut marginals = vec![[0.0; 2]; len];
    for (path, lj) in &joints {
        let w = (lj - log_marginal).exp();
        for (t, k) in path.iter().enumerate() {
            marginals[t][*k] += w;
        }
    }
    Enumeration {
        log_marginal,
        best_path: best.iter().map(|k| *k as u8 + 1).collect(),
        best_log_joint: *best_lj,
        marginals,
    }
}
