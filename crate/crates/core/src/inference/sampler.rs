//! Adaptive Metropolis-within-Gibbs for the hidden-state model and the
//! mixed-effects Poisson baseline.
//!
//! One sweep of the hidden-state sampler updates, in order: `β_1`, `β_2`
//! (intercept and slopes as separate blocks per state), each `u_i`, each `(v_i1, v_i2)`,
//! `(μ_1, μ_2)`, `log σ_u`, `log σ_v`, and two location moves that shift a
//! population parameter and all borrower deviations in opposite directions
//! (the likelihood is invariant along those directions, so only prior terms
//! enter the acceptance ratio). Chains run in parallel on independent
//! ChaCha streams derived from the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::factorial::ln_factorial;

use super::adapt::{AcceptCounter, CovarianceProposal, ScaleProposal};
use super::{BlockAcceptance, GlmmParameters, McmcConfig, PosteriorSamples};
use crate::error::{Error, Result};
use crate::likelihood::{
    glmm_log_prior, half_normal_log_density, log_prior, loglik_from_emissions, normal_log_density,
};
use crate::model::{
    initial_distribution, transition_from_logits, BorrowerSeries, ModelParameters,
    PanelDataset, PriorConfig, NUM_STATES,
};

/// Stream offset separating baseline chains from hidden-state chains.
const BASELINE_STREAM_OFFSET: u64 = 1 << 32;
/// Floor applied to sample means before taking logs at initialization.
const MIN_INIT_RATE: f64 = 0.05;
const INIT_JITTER: f64 = 0.1;

/// Which parameter blocks the hidden-state sampler updates. Blocks that are
/// not free keep their initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBlocks {
    /// `None` updates every coefficient; otherwise only the listed
    /// `(state index, covariate index)` pairs, both zero-based.
    pub beta: Option<Vec<(usize, usize)>>,
    pub random_effects: bool,
    pub transition_deviations: bool,
    pub transition_means: bool,
    pub sigma_u: bool,
    pub sigma_v: bool,
    pub location_shifts: bool,
}

impl Default for FreeBlocks {
    fn default() -> Self {
        Self {
            beta: None,
            random_effects: true,
            transition_deviations: true,
            transition_means: true,
            sigma_u: true,
            sigma_v: true,
            location_shifts: true,
        }
    }
}

impl FreeBlocks {
    /// Everything fixed except the listed coefficients.
    pub fn only_beta(components: Vec<(usize, usize)>) -> Self {
        Self {
            beta: Some(components),
            random_effects: false,
            transition_deviations: false,
            transition_means: false,
            sigma_u: false,
            sigma_v: false,
            location_shifts: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SamplerOptions {
    pub free: FreeBlocks,
    /// Starting point for every chain; replaces the default initialization.
    pub initial: Option<ModelParameters>,
}

struct ChainOutput<P> {
    draws: Vec<P>,
    iterations: Vec<usize>,
    trace: Vec<f64>,
    acceptance: Vec<(String, f64)>,
}

fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn normal_noise<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn merge<P>(outputs: Vec<ChainOutput<P>>) -> PosteriorSamples<P> {
    let mut samples = PosteriorSamples {
        draws: Vec::new(),
        chain_ids: Vec::new(),
        iterations: Vec::new(),
        log_posterior_trace: Vec::new(),
        acceptance: Vec::new(),
    };
    for (chain, out) in outputs.into_iter().enumerate() {
        samples.chain_ids.extend(std::iter::repeat_n(chain, out.draws.len()));
        samples.draws.extend(out.draws);
        samples.iterations.extend(out.iterations);
        samples.log_posterior_trace.extend(out.trace);
        samples.acceptance.extend(
            out.acceptance.into_iter().map(|(block, rate)| BlockAcceptance { chain, block, rate }),
        );
    }
    samples
}

fn log_factorials(panel: &PanelDataset) -> Vec<Vec<f64>> {
    panel
        .borrowers
        .iter()
        .map(|b| b.weeks.iter().map(|w| ln_factorial(u64::from(w.count))).collect())
        .collect()
}

fn log_emission(series: &BorrowerSeries, log_fact: &[f64], t: usize, beta: &[f64], u: &[f64]) -> f64 {
    let w = &series.weeks[t];
    let eta: f64 = w.covariates.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
        + w.design.iter().zip(u).map(|(d, r)| d * r).sum::<f64>();
    f64::from(w.count) * eta - eta.exp() - log_fact[t]
}

fn borrower_emissions(
    series: &BorrowerSeries,
    log_fact: &[f64],
    beta: [&[f64]; NUM_STATES],
    u: &[f64],
) -> Vec<[f64; NUM_STATES]> {
    (0..series.len())
        .map(|t| {
            [
                log_emission(series, log_fact, t, beta[0], u),
                log_emission(series, log_fact, t, beta[1], u),
            ]
        })
        .collect()
}

/// Splits free coefficients into the intercept and the remaining slopes.
/// The intercept trades off against the random intercepts, so its
/// conditional spread is far narrower than its marginal one; keeping it out
/// of the slope block stops it from distorting the slope proposal.
fn coefficient_blocks(free: &[usize]) -> Vec<Vec<usize>> {
    let (intercept, slopes): (Vec<usize>, Vec<usize>) = free.iter().partition(|&&j| j == 0);
    [intercept, slopes].into_iter().filter(|b| !b.is_empty()).collect()
}

fn chain_loglik(emissions: &[[f64; NUM_STATES]], mean: [f64; NUM_STATES], dev: [f64; NUM_STATES]) -> f64 {
    let transition = transition_from_logits(mean, dev);
    match initial_distribution(&transition) {
        Ok(initial) => loglik_from_emissions(emissions, initial, transition.log()),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn is_valid(ll: f64) -> bool {
    ll.is_finite()
}

/// Default starting point: zero slopes, intercepts at the log of the mean
/// count of the lower and upper halves of borrowers ranked by mean count.
fn default_initial(panel: &PanelDataset, priors: &PriorConfig) -> ModelParameters {
    let (n, p, q) = (panel.n_borrowers(), panel.n_covariates(), panel.n_random_effects());
    let mut means: Vec<f64> = panel
        .borrowers
        .iter()
        .map(|b| b.counts().map(f64::from).sum::<f64>() / b.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let average = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let half = n / 2;
    let low = if half > 0 { average(&means[..half]) } else { average(&means) };
    let high = average(&means[half..]);
    let low = low.max(MIN_INIT_RATE).ln();
    let high = high.max(MIN_INIT_RATE).ln().max(low + 0.5);

    let mut params = ModelParameters::zeros(n, p, q);
    params.beta[0][0] = low;
    params.beta[1][0] = high;
    params.sigma_u = vec![priors.sigma_half_normal_scale; q];
    params.sigma_v = priors.sigma_half_normal_scale;
    params.trans_logit_mean = [(0.8_f64 / 0.2).ln(); NUM_STATES];
    params
}

#[derive(Default)]
struct HmmCounters {
    beta: [AcceptCounter; NUM_STATES],
    u: AcceptCounter,
    v: AcceptCounter,
    mu: AcceptCounter,
    sigma_u: AcceptCounter,
    sigma_v: AcceptCounter,
    intercept_shift: AcceptCounter,
    mu_shift: AcceptCounter,
}

struct HmmChain<'a> {
    panel: &'a PanelDataset,
    priors: PriorConfig,
    config: McmcConfig,
    free: FreeBlocks,
    rng: ChaCha8Rng,
    params: ModelParameters,
    log_fact: Vec<Vec<f64>>,
    emissions: Vec<Vec<[f64; NUM_STATES]>>,
    loglik: Vec<f64>,
    beta_blocks: [Vec<Vec<usize>>; NUM_STATES],
    beta_prop: [Vec<CovarianceProposal>; NUM_STATES],
    u_prop: Vec<ScaleProposal>,
    v_prop: Vec<ScaleProposal>,
    mu_prop: CovarianceProposal,
    sigma_u_prop: ScaleProposal,
    sigma_v_prop: ScaleProposal,
    intercept_shift: Option<ScaleProposal>,
    mu_shift: ScaleProposal,
    counters: HmmCounters,
    iteration: usize,
}

impl<'a> HmmChain<'a> {
    fn new(
        panel: &'a PanelDataset,
        priors: PriorConfig,
        config: McmcConfig,
        options: &SamplerOptions,
        chain: usize,
    ) -> Result<Self> {
        let mut rng = chain_rng(config.seed, chain as u64);
        let p = panel.n_covariates();
        let n = panel.n_borrowers();
        let free = options.free.clone();

        let mut beta_free: [Vec<usize>; NUM_STATES] = [Vec::new(), Vec::new()];
        match &free.beta {
            None => {
                beta_free = [(0..p).collect(), (0..p).collect()];
            }
            Some(components) => {
                for &(k, j) in components {
                    if k >= NUM_STATES || j >= p {
                        return Err(Error::Config(format!("free coefficient ({k}, {j}) out of range")));
                    }
                    if !beta_free[k].contains(&j) {
                        beta_free[k].push(j);
                    }
                }
                beta_free.iter_mut().for_each(|b| b.sort_unstable());
            }
        }

        let params = match &options.initial {
            Some(initial) => initial.clone(),
            None => {
                let mut params = default_initial(panel, &priors);
                for (k, free_k) in beta_free.iter().enumerate() {
                    for &j in free_k {
                        params.beta[k][j] += normal_noise(&mut rng, INIT_JITTER);
                    }
                }
                if free.transition_means {
                    for m in &mut params.trans_logit_mean {
                        *m += normal_noise(&mut rng, INIT_JITTER);
                    }
                }
                params.relabel();
                params
            }
        };
        params.check_compatible(panel)?;

        let log_fact = log_factorials(panel);
        let emissions: Vec<_> = panel
            .borrowers
            .iter()
            .enumerate()
            .map(|(i, s)| borrower_emissions(s, &log_fact[i], [&params.beta[0], &params.beta[1]], &params.u[i]))
            .collect();
        let loglik: Vec<f64> = emissions
            .iter()
            .zip(&params.trans_logit_dev)
            .map(|(e, dev)| chain_loglik(e, params.trans_logit_mean, *dev))
            .collect();
        let prior = log_prior(&params, &priors)
            .map_err(|e| Error::Initialization(format!("chain {chain}: {e}")))?;
        if let Some(i) = loglik.iter().position(|ll| !is_valid(*ll)) {
            return Err(Error::Initialization(format!(
                "chain {chain}: log-likelihood of borrower {} is {}",
                panel.borrowers[i].borrower_id, loglik[i]
            )));
        }
        if !prior.is_finite() {
            return Err(Error::Initialization(format!("chain {chain}: log prior is {prior}")));
        }

        let intercept_shift = (free.location_shifts
            && free.random_effects
            && panel.has_random_intercept()
            && beta_free.iter().all(|b| b.contains(&0)))
        .then(|| ScaleProposal::new(0.05));

        let beta_blocks = beta_free.map(|free| coefficient_blocks(&free));
        Ok(Self {
            panel,
            priors,
            config,
            rng,
            log_fact,
            emissions,
            loglik,
            beta_prop: [0, 1].map(|k| beta_blocks[k].iter().map(|b| CovarianceProposal::new(b.len(), 0.05)).collect()),
            beta_blocks,
            u_prop: vec![ScaleProposal::new(0.3); n],
            v_prop: vec![ScaleProposal::new(0.5); n],
            mu_prop: CovarianceProposal::new(NUM_STATES, 0.1),
            sigma_u_prop: ScaleProposal::new(0.1),
            sigma_v_prop: ScaleProposal::new(0.1),
            intercept_shift,
            mu_shift: ScaleProposal::new(0.05),
            counters: HmmCounters::default(),
            params,
            free,
            iteration: 0,
        })
    }

    fn adapting(&self) -> bool {
        self.iteration < self.config.burn_in
    }

    /// Burn-in sweeps before the empirical covariances start accumulating.
    fn collecting(&self) -> bool {
        self.adapting() && self.iteration >= self.config.burn_in / 2
    }

    fn record(counter: &mut AcceptCounter, adapting: bool, accepted: bool) {
        if !adapting {
            counter.record(accepted);
        }
    }

    fn update_beta(&mut self, k: usize) {
        for b in 0..self.beta_blocks[k].len() {
            self.update_beta_block(k, b);
        }
    }

    fn update_beta_block(&mut self, k: usize, b: usize) {
        let step = self.beta_prop[k][b].draw(&mut self.rng);
        let mut proposal = self.params.beta[k].clone();
        let mut prior_diff = 0.0;
        let scale = self.priors.beta_prior_scale;
        for (s, &j) in step.iter().zip(&self.beta_blocks[k][b]) {
            proposal[j] += s;
            prior_diff += normal_log_density(proposal[j], scale) - normal_log_density(self.params.beta[k][j], scale);
        }

        let panel = self.panel;
        let mut new_emissions = self.emissions.clone();
        let mut new_loglik = Vec::with_capacity(self.loglik.len());
        for (i, series) in panel.borrowers.iter().enumerate() {
            let em = &mut new_emissions[i];
            for (t, row) in em.iter_mut().enumerate() {
                row[k] = log_emission(series, &self.log_fact[i], t, &proposal, &self.params.u[i]);
            }
            new_loglik.push(chain_loglik(em, self.params.trans_logit_mean, self.params.trans_logit_dev[i]));
        }
        let delta: f64 = new_loglik.iter().zip(&self.loglik).map(|(a, b)| a - b).sum();
        let accepted = new_loglik.iter().all(|ll| is_valid(*ll)) && accept(&mut self.rng, delta + prior_diff);
        if accepted {
            self.params.beta[k] = proposal;
            self.emissions = new_emissions;
            self.loglik = new_loglik;
        }
        let adapting = self.adapting();
        if adapting {
            self.beta_prop[k][b].adapt(accepted, self.iteration, self.config.target_accept);
        }
        if self.collecting() {
            let current: Vec<f64> = self.beta_blocks[k][b].iter().map(|&j| self.params.beta[k][j]).collect();
            self.beta_prop[k][b].observe(&current);
        }
        Self::record(&mut self.counters.beta[k], adapting, accepted);
    }

    fn update_random_effects(&mut self) {
        let adapting = self.adapting();
        let sigma = self.params.sigma_u.clone();
        for (i, series) in self.panel.borrowers.iter().enumerate() {
            let q = sigma.len();
            let step = self.u_prop[i].draw(q, &mut self.rng);
            let current = &self.params.u[i];
            let proposal: Vec<f64> = current.iter().zip(&step).map(|(u, s)| u + s).collect();
            let prior_diff: f64 = (0..q)
                .map(|r| normal_log_density(proposal[r], sigma[r]) - normal_log_density(current[r], sigma[r]))
                .sum();
            let em = borrower_emissions(
                series,
                &self.log_fact[i],
                [&self.params.beta[0], &self.params.beta[1]],
                &proposal,
            );
            let ll = chain_loglik(&em, self.params.trans_logit_mean, self.params.trans_logit_dev[i]);
            let accepted = is_valid(ll) && accept(&mut self.rng, ll - self.loglik[i] + prior_diff);
            if accepted {
                self.params.u[i] = proposal;
                self.emissions[i] = em;
                self.loglik[i] = ll;
            }
            if adapting {
                self.u_prop[i].adapt(accepted, self.iteration, self.config.target_accept);
            }
            Self::record(&mut self.counters.u, adapting, accepted);
        }
    }

    fn update_transition_deviations(&mut self) {
        let adapting = self.adapting();
        let sigma = self.params.sigma_v;
        for i in 0..self.panel.n_borrowers() {
            let step = self.v_prop[i].draw(NUM_STATES, &mut self.rng);
            let current = self.params.trans_logit_dev[i];
            let proposal = [current[0] + step[0], current[1] + step[1]];
            let prior_diff: f64 = (0..NUM_STATES)
                .map(|k| normal_log_density(proposal[k], sigma) - normal_log_density(current[k], sigma))
                .sum();
            let ll = chain_loglik(&self.emissions[i], self.params.trans_logit_mean, proposal);
            let accepted = is_valid(ll) && accept(&mut self.rng, ll - self.loglik[i] + prior_diff);
            if accepted {
                self.params.trans_logit_dev[i] = proposal;
                self.loglik[i] = ll;
            }
            if adapting {
                self.v_prop[i].adapt(accepted, self.iteration, self.config.target_accept);
            }
            Self::record(&mut self.counters.v, adapting, accepted);
        }
    }

    fn update_transition_means(&mut self) {
        let step = self.mu_prop.draw(&mut self.rng);
        let current = self.params.trans_logit_mean;
        let proposal = [current[0] + step[0], current[1] + step[1]];
        let scale = self.priors.trans_mean_prior_scale;
        let prior_diff: f64 = (0..NUM_STATES)
            .map(|k| normal_log_density(proposal[k], scale) - normal_log_density(current[k], scale))
            .sum();
        let new_loglik: Vec<f64> = self
            .emissions
            .iter()
            .zip(&self.params.trans_logit_dev)
            .map(|(em, dev)| chain_loglik(em, proposal, *dev))
            .collect();
        let delta: f64 = new_loglik.iter().zip(&self.loglik).map(|(a, b)| a - b).sum();
        let accepted = new_loglik.iter().all(|ll| is_valid(*ll)) && accept(&mut self.rng, delta + prior_diff);
        if accepted {
            self.params.trans_logit_mean = proposal;
            self.loglik = new_loglik;
        }
        let adapting = self.adapting();
        if adapting {
            self.mu_prop.adapt(accepted, self.iteration, self.config.target_accept);
        }
        if self.collecting() {
            let current = self.params.trans_logit_mean;
            self.mu_prop.observe(&current);
        }
        Self::record(&mut self.counters.mu, adapting, accepted);
    }

    fn update_sigma_u(&mut self) {
        let q = self.params.sigma_u.len();
        let step = self.sigma_u_prop.draw(q, &mut self.rng);
        let hn = self.priors.sigma_half_normal_scale;
        let mut log_ratio = 0.0;
        let proposal: Vec<f64> = self.params.sigma_u.iter().zip(&step).map(|(s, d)| s * d.exp()).collect();
        for r in 0..q {
            let (old, new) = (self.params.sigma_u[r], proposal[r]);
            log_ratio += self
                .params
                .u
                .iter()
                .map(|u| normal_log_density(u[r], new) - normal_log_density(u[r], old))
                .sum::<f64>();
            log_ratio += half_normal_log_density(new, hn) - half_normal_log_density(old, hn) + step[r];
        }
        let accepted = accept(&mut self.rng, log_ratio);
        if accepted {
            self.params.sigma_u = proposal;
        }
        let adapting = self.adapting();
        if adapting {
            self.sigma_u_prop.adapt(accepted, self.iteration, self.config.target_accept);
        }
        Self::record(&mut self.counters.sigma_u, adapting, accepted);
    }

    fn update_sigma_v(&mut self) {
        let step = self.sigma_v_prop.draw(1, &mut self.rng)[0];
        let hn = self.priors.sigma_half_normal_scale;
        let (old, new) = (self.params.sigma_v, self.params.sigma_v * step.exp());
        let log_ratio = self
            .params
            .trans_logit_dev
            .iter()
            .flat_map(|v| v.iter())
            .map(|v| normal_log_density(*v, new) - normal_log_density(*v, old))
            .sum::<f64>()
            + half_normal_log_density(new, hn)
            - half_normal_log_density(old, hn)
            + step;
        let accepted = accept(&mut self.rng, log_ratio);
        if accepted {
            self.params.sigma_v = new;
        }
        let adapting = self.adapting();
        if adapting {
            self.sigma_v_prop.adapt(accepted, self.iteration, self.config.target_accept);
        }
        Self::record(&mut self.counters.sigma_v, adapting, accepted);
    }

    /// Moves both intercepts by `δ` and every random intercept by `-δ`.
    fn update_intercept_shift(&mut self) {
        let Some(proposal) = &self.intercept_shift else { return };
        let delta = proposal.draw(1, &mut self.rng)[0];
        let bs = self.priors.beta_prior_scale;
        let su = self.params.sigma_u[0];
        let mut log_ratio = 0.0;
        for beta in &self.params.beta {
            log_ratio += normal_log_density(beta[0] + delta, bs) - normal_log_density(beta[0], bs);
        }
        log_ratio += self
            .params
            .u
            .iter()
            .map(|u| normal_log_density(u[0] - delta, su) - normal_log_density(u[0], su))
            .sum::<f64>();
        let accepted = accept(&mut self.rng, log_ratio);
        if accepted {
            for beta in &mut self.params.beta {
                beta[0] += delta;
            }
            for u in &mut self.params.u {
                u[0] -= delta;
            }
        }
        let adapting = self.adapting();
        if adapting {
            let (iteration, target) = (self.iteration, self.config.target_accept);
            if let Some(p) = &mut self.intercept_shift {
                p.adapt(accepted, iteration, target);
            }
        }
        Self::record(&mut self.counters.intercept_shift, adapting, accepted);
    }

    /// Moves `μ` by `δ` and every borrower deviation by `-δ`.
    fn update_mu_shift(&mut self) {
        let step = self.mu_shift.draw(NUM_STATES, &mut self.rng);
        let ms = self.priors.trans_mean_prior_scale;
        let sv = self.params.sigma_v;
        let mut log_ratio = 0.0;
        for k in 0..NUM_STATES {
            let mu = self.params.trans_logit_mean[k];
            log_ratio += normal_log_density(mu + step[k], ms) - normal_log_density(mu, ms);
            log_ratio += self
                .params
                .trans_logit_dev
                .iter()
                .map(|v| normal_log_density(v[k] - step[k], sv) - normal_log_density(v[k], sv))
                .sum::<f64>();
        }
        let accepted = accept(&mut self.rng, log_ratio);
        if accepted {
            for k in 0..NUM_STATES {
                self.params.trans_logit_mean[k] += step[k];
                for v in &mut self.params.trans_logit_dev {
                    v[k] -= step[k];
                }
            }
        }
        let adapting = self.adapting();
        if adapting {
            self.mu_shift.adapt(accepted, self.iteration, self.config.target_accept);
        }
        Self::record(&mut self.counters.mu_shift, adapting, accepted);
    }

    /// Restores the ordering constraint by exchanging state labels, keeping
    /// caches and adapted proposals aligned with the new labels.
    fn relabel(&mut self) {
        if !self.params.relabel() {
            return;
        }
        for em in &mut self.emissions {
            for row in em.iter_mut() {
                row.swap(0, 1);
            }
        }
        self.beta_blocks.swap(0, 1);
        self.beta_prop.swap(0, 1);
        self.mu_prop.permute(&[1, 0]);
    }

    fn sweep(&mut self) {
        self.update_beta(0);
        self.update_beta(1);
        if self.free.random_effects {
            self.update_random_effects();
        }
        if self.free.transition_deviations {
            self.update_transition_deviations();
        }
        if self.free.transition_means {
            self.update_transition_means();
        }
        if self.free.sigma_u {
            self.update_sigma_u();
        }
        if self.free.sigma_v {
            self.update_sigma_v();
        }
        if self.free.location_shifts {
            self.update_intercept_shift();
            if self.free.transition_means && self.free.transition_deviations {
                self.update_mu_shift();
            }
        }
        self.relabel();

        let window = self.config.adapt_window;
        if self.adapting() && (self.iteration + 1) % window == 0 {
            for p in self.beta_prop.iter_mut().flatten() {
                p.refresh();
            }
            self.mu_prop.refresh();
        }
    }

    fn acceptance(&self) -> Vec<(String, f64)> {
        let c = &self.counters;
        let mut out = Vec::new();
        for k in 0..NUM_STATES {
            if !self.beta_blocks[k].is_empty() {
                out.push((format!("beta[{}]", k + 1), c.beta[k].rate()));
            }
        }
        let f = &self.free;
        let blocks = [
            ("u", f.random_effects, &c.u),
            ("v", f.transition_deviations, &c.v),
            ("mu", f.transition_means, &c.mu),
            ("sigma_u", f.sigma_u, &c.sigma_u),
            ("sigma_v", f.sigma_v, &c.sigma_v),
            ("intercept_shift", self.intercept_shift.is_some(), &c.intercept_shift),
            ("mu_shift", f.location_shifts && f.transition_means && f.transition_deviations, &c.mu_shift),
        ];
        for (name, active, counter) in blocks {
            if active {
                out.push((name.to_string(), counter.rate()));
            }
        }
        out
    }

    fn run(mut self) -> Result<ChainOutput<ModelParameters>> {
        let mut out = ChainOutput {
            draws: Vec::with_capacity(self.config.draws_per_chain()),
            iterations: Vec::new(),
            trace: Vec::new(),
            acceptance: Vec::new(),
        };
        for it in 0..self.config.iterations {
            self.iteration = it;
            self.sweep();
            if it >= self.config.burn_in && (it - self.config.burn_in) % self.config.thinning == 0 {
                let lp = self.loglik.iter().sum::<f64>() + log_prior(&self.params, &self.priors)?;
                out.draws.push(self.params.clone());
                out.iterations.push(it);
                out.trace.push(lp);
            }
        }
        out.acceptance = self.acceptance();
        Ok(out)
    }
}

/// Samples the hidden-state model's posterior with default blocks and initialization.
pub fn run_mcmc(
    panel: &PanelDataset,
    priors: &PriorConfig,
    config: &McmcConfig,
) -> Result<PosteriorSamples<ModelParameters>> {
    run_mcmc_with(panel, priors, config, &SamplerOptions::default())
}

pub fn run_mcmc_with(
    panel: &PanelDataset,
    priors: &PriorConfig,
    config: &McmcConfig,
    options: &SamplerOptions,
) -> Result<PosteriorSamples<ModelParameters>> {
    priors.validate()?;
    config.validate()?;
    let outputs = (0..config.chains)
        .into_par_iter()
        .map(|chain| HmmChain::new(panel, *priors, *config, options, chain)?.run())
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(outputs))
}

#[derive(Default)]
struct GlmmCounters {
    beta: AcceptCounter,
    u: AcceptCounter,
    sigma_u: AcceptCounter,
    intercept_shift: AcceptCounter,
}

struct GlmmChain<'a> {
    panel: &'a PanelDataset,
    priors: PriorConfig,
    config: McmcConfig,
    rng: ChaCha8Rng,
    params: GlmmParameters,
    log_fact: Vec<Vec<f64>>,
    loglik: Vec<f64>,
    beta_blocks: Vec<Vec<usize>>,
    beta_prop: Vec<CovarianceProposal>,
    u_prop: Vec<ScaleProposal>,
    sigma_u_prop: ScaleProposal,
    intercept_shift: Option<ScaleProposal>,
    counters: GlmmCounters,
    iteration: usize,
}

fn glmm_borrower(series: &BorrowerSeries, log_fact: &[f64], beta: &[f64], u: &[f64]) -> f64 {
    (0..series.len()).map(|t| log_emission(series, log_fact, t, beta, u)).sum()
}

impl<'a> GlmmChain<'a> {
    fn new(panel: &'a PanelDataset, priors: PriorConfig, config: McmcConfig, chain: usize) -> Result<Self> {
        let mut rng = chain_rng(config.seed, BASELINE_STREAM_OFFSET + chain as u64);
        let (n, p, q) = (panel.n_borrowers(), panel.n_covariates(), panel.n_random_effects());
        let total: f64 = panel.borrowers.iter().flat_map(|b| b.counts()).map(f64::from).sum();
        let mean = total / panel.n_observations() as f64;

        let mut params = GlmmParameters::zeros(n, p, q);
        params.beta[0] = mean.max(MIN_INIT_RATE).ln();
        for b in &mut params.beta {
            *b += normal_noise(&mut rng, INIT_JITTER);
        }
        params.sigma_u = vec![priors.sigma_half_normal_scale; q];

        let log_fact = log_factorials(panel);
        let loglik: Vec<f64> = panel
            .borrowers
            .iter()
            .enumerate()
            .map(|(i, s)| glmm_borrower(s, &log_fact[i], &params.beta, &params.u[i]))
            .collect();
        if let Some(i) = loglik.iter().position(|ll| !is_valid(*ll)) {
            return Err(Error::Initialization(format!(
                "baseline chain {chain}: log-likelihood of borrower {} is {}",
                panel.borrowers[i].borrower_id, loglik[i]
            )));
        }
        glmm_log_prior(&params, &priors).map_err(|e| Error::Initialization(e.to_string()))?;

        Ok(Self {
            panel,
            priors,
            config,
            rng,
            log_fact,
            loglik,
            beta_blocks: coefficient_blocks(&(0..p).collect::<Vec<_>>()),
            beta_prop: coefficient_blocks(&(0..p).collect::<Vec<_>>())
                .iter()
                .map(|b| CovarianceProposal::new(b.len(), 0.05))
                .collect(),
            u_prop: vec![ScaleProposal::new(0.3); n],
            sigma_u_prop: ScaleProposal::new(0.1),
            intercept_shift: panel.has_random_intercept().then(|| ScaleProposal::new(0.05)),
            counters: GlmmCounters::default(),
            params,
            iteration: 0,
        })
    }

    fn adapting(&self) -> bool {
        self.iteration < self.config.burn_in
    }

    fn update_beta_block(&mut self, b: usize) {
        let adapting = self.adapting();
        let block = &self.beta_blocks[b];
        let step = self.beta_prop[b].draw(&mut self.rng);
        let mut proposal = self.params.beta.clone();
        let bs = self.priors.beta_prior_scale;
        let mut prior_diff = 0.0;
        for (s, &j) in step.iter().zip(block) {
            proposal[j] += s;
            prior_diff += normal_log_density(proposal[j], bs) - normal_log_density(self.params.beta[j], bs);
        }
        let new_loglik: Vec<f64> = self
            .panel
            .borrowers
            .iter()
            .enumerate()
            .map(|(i, s)| glmm_borrower(s, &self.log_fact[i], &proposal, &self.params.u[i]))
            .collect();
        let delta: f64 = new_loglik.iter().zip(&self.loglik).map(|(a, b)| a - b).sum();
        let accepted = new_loglik.iter().all(|ll| is_valid(*ll)) && accept(&mut self.rng, delta + prior_diff);
        if accepted {
            self.params.beta = proposal;
            self.loglik = new_loglik;
        }
        if adapting {
            self.beta_prop[b].adapt(accepted, self.iteration, self.config.target_accept);
            if self.iteration >= self.config.burn_in / 2 {
                let current: Vec<f64> = self.beta_blocks[b].iter().map(|&j| self.params.beta[j]).collect();
                self.beta_prop[b].observe(&current);
            }
        } else {
            self.counters.beta.record(accepted);
        }
    }

    fn sweep(&mut self) {
        let adapting = self.adapting();
        let target = self.config.target_accept;
        let it = self.iteration;
        let panel = self.panel;

        // fixed effects
        for b in 0..self.beta_blocks.len() {
            self.update_beta_block(b);
        }
        let bs = self.priors.beta_prior_scale;

        // random effects
        let sigma = self.params.sigma_u.clone();
        for (i, series) in panel.borrowers.iter().enumerate() {
            let step = self.u_prop[i].draw(sigma.len(), &mut self.rng);
            let current = &self.params.u[i];
            let proposal: Vec<f64> = current.iter().zip(&step).map(|(u, s)| u + s).collect();
            let prior_diff: f64 = (0..sigma.len())
                .map(|r| normal_log_density(proposal[r], sigma[r]) - normal_log_density(current[r], sigma[r]))
                .sum();
            let ll = glmm_borrower(series, &self.log_fact[i], &self.params.beta, &proposal);
            let accepted = is_valid(ll) && accept(&mut self.rng, ll - self.loglik[i] + prior_diff);
            if accepted {
                self.params.u[i] = proposal;
                self.loglik[i] = ll;
            }
            if adapting {
                self.u_prop[i].adapt(accepted, it, target);
            } else {
                self.counters.u.record(accepted);
            }
        }

        // random-effect scale
        let q = self.params.sigma_u.len();
        let step = self.sigma_u_prop.draw(q, &mut self.rng);
        let hn = self.priors.sigma_half_normal_scale;
        let proposal: Vec<f64> = self.params.sigma_u.iter().zip(&step).map(|(s, d)| s * d.exp()).collect();
        let mut log_ratio = 0.0;
        for r in 0..q {
            let (old, new) = (self.params.sigma_u[r], proposal[r]);
            log_ratio += self
                .params
                .u
                .iter()
                .map(|u| normal_log_density(u[r], new) - normal_log_density(u[r], old))
                .sum::<f64>();
            log_ratio += half_normal_log_density(new, hn) - half_normal_log_density(old, hn) + step[r];
        }
        let accepted = accept(&mut self.rng, log_ratio);
        if accepted {
            self.params.sigma_u = proposal;
        }
        if adapting {
            self.sigma_u_prop.adapt(accepted, it, target);
        } else {
            self.counters.sigma_u.record(accepted);
        }

        // intercept / random-intercept location move
        if let Some(shift) = &self.intercept_shift {
            let delta = shift.draw(1, &mut self.rng)[0];
            let su = self.params.sigma_u[0];
            let b0 = self.params.beta[0];
            let log_ratio = normal_log_density(b0 + delta, bs) - normal_log_density(b0, bs)
                + self
                    .params
                    .u
                    .iter()
                    .map(|u| normal_log_density(u[0] - delta, su) - normal_log_density(u[0], su))
                    .sum::<f64>();
            let accepted = accept(&mut self.rng, log_ratio);
            if accepted {
                self.params.beta[0] += delta;
                for u in &mut self.params.u {
                    u[0] -= delta;
                }
            }
            if adapting {
                if let Some(s) = &mut self.intercept_shift {
                    s.adapt(accepted, it, target);
                }
            } else {
                self.counters.intercept_shift.record(accepted);
            }
        }

        if adapting && (it + 1) % self.config.adapt_window == 0 {
            for p in &mut self.beta_prop {
                p.refresh();
            }
        }
    }

    fn run(mut self) -> Result<ChainOutput<GlmmParameters>> {
        let mut out = ChainOutput {
            draws: Vec::with_capacity(self.config.draws_per_chain()),
            iterations: Vec::new(),
            trace: Vec::new(),
            acceptance: Vec::new(),
        };
        for it in 0..self.config.iterations {
            self.iteration = it;
            self.sweep();
            if it >= self.config.burn_in && (it - self.config.burn_in) % self.config.thinning == 0 {
                let lp = self.loglik.iter().sum::<f64>() + glmm_log_prior(&self.params, &self.priors)?;
                out.draws.push(self.params.clone());
                out.iterations.push(it);
                out.trace.push(lp);
            }
        }
        let c = &self.counters;
        out.acceptance = vec![
            ("beta[1]".to_string(), c.beta.rate()),
            ("u".to_string(), c.u.rate()),
            ("sigma_u".to_string(), c.sigma_u.rate()),
        ];
        if self.intercept_shift.is_some() {
            out.acceptance.push(("intercept_shift".to_string(), c.intercept_shift.rate()));
        }
        Ok(out)
    }
}

/// Samples the mixed-effects Poisson baseline: one coefficient vector, the
/// same random-effect structure, no hidden states.
pub fn fit_me_poisson(
    panel: &PanelDataset,
    priors: &PriorConfig,
    config: &McmcConfig,
) -> Result<PosteriorSamples<GlmmParameters>> {
    priors.validate()?;
    config.validate()?;
    let outputs = (0..config.chains)
        .into_par_iter()
        .map(|chain| GlmmChain::new(panel, *priors, *config, chain)?.run())
        .collect::<Result<Vec<_>>>()?;
    Ok(merge(outputs))
}
