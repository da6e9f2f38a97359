//! Synthetic panels drawn from known parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{path_log_joint, StatePath};
use crate::error::{Error, Result};
use crate::model::{
    initial_distribution, transition_from_logits, ModelParameters, PanelDataset, RawBorrower, State, NUM_STATES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Clamp negative draws to zero.
    #[serde(default)]
    pub truncate: bool,
}

impl CovariateSpec {
    pub fn new(name: &str, mean: f64, sd: f64, truncate: bool) -> Self {
        Self { name: name.to_string(), mean, sd, truncate }
    }
}

/// Population-level parameters; borrower effects are drawn from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    pub beta: [Vec<f64>; NUM_STATES],
    pub sigma_u: f64,
    pub trans_logit_mean: [f64; NUM_STATES],
    pub sigma_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_borrowers: usize,
    pub weeks_min: usize,
    pub weeks_max: usize,
    pub truth: TrueParameters,
    pub covariates: Vec<CovariateSpec>,
    pub standardize: bool,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_borrowers == 0 {
            return Err(Error::Config("n_borrowers must be positive".into()));
        }
        if self.weeks_min == 0 || self.weeks_min > self.weeks_max {
            return Err(Error::Config(format!(
                "need 1 <= weeks_min <= weeks_max, got {}..{}",
                self.weeks_min, self.weeks_max
            )));
        }
        let p = self.covariates.len() + 1;
        if self.truth.beta.iter().any(|b| b.len() != p) {
            return Err(Error::Config(format!("beta vectors must have {p} entries (intercept plus covariates)")));
        }
        let finite = self.truth.beta.iter().flatten().all(|v| v.is_finite())
            && self.truth.trans_logit_mean.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("true parameters must be finite".into()));
        }
        if !(self.truth.sigma_u >= 0.0 && self.truth.sigma_v >= 0.0) {
            return Err(Error::Config("true scales must be non-negative".into()));
        }
        if let Some(c) = self.covariates.iter().find(|c| !(c.sd >= 0.0 && c.mean.is_finite() && c.sd.is_finite())) {
            return Err(Error::Config(format!("covariate {} needs a finite mean and sd >= 0", c.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub panel: PanelDataset,
    pub truth: ModelParameters,
    pub states: Vec<StatePath>,
}

/// Transaction categories in covariate order.
pub const CATEGORIES: [&str; 8] = [
    "basic_expenses",
    "discretionary_expenses",
    "non_recurrent_income",
    "basic_transfers",
    "discretionary_transfers",
    "non_recurrent_transfers",
    "recurrent_income",
    "luxury_expenses",
];

/// (amount mean, amount sd, count mean, count sd) per category.
const CATEGORY_MOMENTS: [(f64, f64, f64, f64); 8] = [
    (499.34, 184.21, 13.50, 2.34),
    (988.93, 266.42, 19.73, 2.51),
    (1049.17, 273.47, 5.57, 0.38),
    (17.24, 2.50, 0.68, 0.07),
    (90.64, 18.98, 1.34, 0.10),
    (112.19, 33.16, 0.63, 0.10),
    (479.09, 372.86, 0.67, 0.23),
    (38.76, 8.35, 1.19, 0.19),
];

pub fn amount_column(category: &str) -> String {
    format!("{category}_amount")
}

pub fn count_column(category: &str) -> String {
    format!("{category}_n_transactions")
}

/// The sixteen weekly covariates, amount then count per category.
pub fn calibrated_covariates() -> Vec<CovariateSpec> {
    CATEGORIES
        .iter()
        .zip(CATEGORY_MOMENTS)
        .flat_map(|(cat, (am, asd, cm, csd))| {
            [
                CovariateSpec::new(&amount_column(cat), am, asd, true),
                CovariateSpec::new(&count_column(cat), cm, csd, true),
            ]
        })
        .collect()
}

pub fn calibrated_config(n_borrowers: usize, weeks: usize, seed: u64) -> SimulationConfig {
    let covariates = calibrated_covariates();
    let mut beta = [vec![0.0; covariates.len() + 1], vec![0.0; covariates.len() + 1]];
    beta[0][0] = -2.0;
    beta[1][0] = -0.3;
    SimulationConfig {
        n_borrowers,
        weeks_min: weeks,
        weeks_max: weeks,
        truth: TrueParameters { beta, sigma_u: 0.5, trans_logit_mean: [2.2, 1.4], sigma_v: 0.5 },
        covariates,
        standardize: true,
        seed,
    }
}

pub const ACCEPTANCE_SEED: u64 = 20_240_601;

fn unit_covariates(p: usize) -> Vec<CovariateSpec> {
    (1..p).map(|j| CovariateSpec::new(&format!("x{j}"), 0.0, 1.0, false)).collect()
}

pub fn acceptance_config() -> SimulationConfig {
    SimulationConfig {
        n_borrowers: 200,
        weeks_min: 40,
        weeks_max: 60,
        truth: TrueParameters {
            beta: [vec![-2.0, -0.3, 0.2, -0.4, 0.1], vec![-0.3, 0.4, 0.2, 0.5, -0.1]],
            sigma_u: 0.5,
            trans_logit_mean: [2.2, 1.4],
            sigma_v: 0.5,
        },
        covariates: unit_covariates(5),
        standardize: true,
        seed: ACCEPTANCE_SEED,
    }
}

/// Canonical recovery fixture: 200 borrowers, 40 to 60 weeks, five
/// coefficients per state with three sign flips between states.
pub fn acceptance_panel() -> Result<Simulation> {
    simulate_panel(&acceptance_config())
}

/// Same truth as [`acceptance_panel`] with every series eight weeks long,
/// short enough for exhaustive enumeration.
pub fn acceptance_subpanel(n_borrowers: usize) -> Result<Simulation> {
    let mut config = acceptance_config();
    config.n_borrowers = n_borrowers;
    config.weeks_min = 8;
    config.weeks_max = 8;
    simulate_panel(&config)
}

/// Rate ratio 16 between states and population persistence near 0.97.
pub fn separated_config() -> SimulationConfig {
    SimulationConfig {
        n_borrowers: 100,
        weeks_min: 40,
        weeks_max: 60,
        truth: TrueParameters {
            beta: [vec![0.5f64.ln(), 0.2], vec![8.0f64.ln(), 0.2]],
            sigma_u: 0.2,
            trans_logit_mean: [3.5, 3.2],
            sigma_v: 0.2,
        },
        covariates: unit_covariates(2),
        standardize: true,
        seed: ACCEPTANCE_SEED + 1,
    }
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("validated moments").sample(rng)
}

struct Latent {
    weeks: Vec<(u32, Vec<f64>)>,
    u: f64,
    v: [f64; NUM_STATES],
    states: Vec<State>,
    rng: ChaCha8Rng,
}

/// Draws a panel: per borrower `T_i`, `u_i`, `v_i`, a state path and
/// covariates, then standardizes and draws the counts. Each borrower owns a
/// generator stream, so output does not depend on thread scheduling.
pub fn simulate_panel(config: &SimulationConfig) -> Result<Simulation> {
    config.validate()?;
    let truth = &config.truth;
    let latent = (0..config.n_borrowers)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(config.weeks_min..=config.weeks_max);
            let u = normal(&mut rng, 0.0, truth.sigma_u);
            let v = [normal(&mut rng, 0.0, truth.sigma_v), normal(&mut rng, 0.0, truth.sigma_v)];
            let p = transition_from_logits(truth.trans_logit_mean, v);
            let pi = initial_distribution(&p)?;
            let mut states = Vec::with_capacity(len);
            let mut k = usize::from(rng.random::<f64>() >= pi[0]);
            for t in 0..len {
                if t > 0 {
                    k = usize::from(rng.random::<f64>() >= p.get(k, 0));
                }
                states.push(State::from_index(k));
            }
            let weeks = (0..len)
                .map(|_| {
                    let values = config
                        .covariates
                        .iter()
                        .map(|c| {
                            let x = normal(&mut rng, c.mean, c.sd);
                            if c.truncate { x.max(0.0) } else { x }
                        })
                        .collect();
                    (0, values)
                })
                .collect();
            Ok(Latent { weeks, u, v, states, rng })
        })
        .collect::<Result<Vec<_>>>()?;

    let raw = latent
        .iter()
        .enumerate()
        .map(|(i, l)| RawBorrower { borrower_id: format!("B{i:05}"), weeks: l.weeks.clone() })
        .collect();
    let names = config.covariates.iter().map(|c| c.name.clone()).collect();
    let mut panel = PanelDataset::from_raw(raw, names, config.standardize)?;

    let params = ModelParameters {
        beta: truth.beta.clone(),
        u: latent.iter().map(|l| vec![l.u]).collect(),
        sigma_u: vec![truth.sigma_u],
        trans_logit_mean: truth.trans_logit_mean,
        trans_logit_dev: latent.iter().map(|l| l.v).collect(),
        sigma_v: truth.sigma_v,
    };

    let counts = panel
        .borrowers
        .par_iter()
        .zip(latent)
        .enumerate()
        .map(|(i, (series, mut l))| {
            let rates = params.borrower(i)?.rates(series)?;
            l.states
                .iter()
                .zip(rates)
                .enumerate()
                .map(|(t, (s, r))| {
                    let lambda = r[s.index()];
                    let dist = Poisson::new(lambda).map_err(|e| Error::Numeric {
                        step: t + 1,
                        what: format!("borrower {i}: Poisson rate {lambda}: {e}"),
                    })?;
                    Ok(dist.sample(&mut l.rng) as u32)
                })
                .collect::<Result<Vec<u32>>>()
                .map(|c| (c, l.states))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut states = Vec::with_capacity(counts.len());
    for (i, (series, (c, path))) in panel.borrowers.iter_mut().zip(counts).enumerate() {
        for (w, y) in series.weeks.iter_mut().zip(c) {
            w.count = y;
        }
        let log_joint = path_log_joint(series, &params.borrower(i)?, &path)?;
        states.push(StatePath { borrower_id: series.borrower_id.clone(), states: path, log_joint });
    }
    Ok(Simulation { panel, truth: params, states })
}
