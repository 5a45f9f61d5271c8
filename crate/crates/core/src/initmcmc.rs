//! Filter warm-up: fits the reduced load model (second dynamic layer frozen,
//! `σ_s,n ≡ σ_s,*` and `σ_g,n ≡ σ_g,*`) on the first `n0` days by
//! Metropolis-within-Gibbs under vague priors, then composes the initial
//! particle cloud from the fitted posterior and a completion prior on the
//! second-layer walk variances.
//!
//! The sampler runs several chains from dispersed starts, adapts its
//! random-walk proposal scales during burn-in only, and checks convergence
//! with the split-chain R-hat diagnostic before releasing draws.

use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{
    gaussian_ln_pdf, load_observation_mean, ExogenousRecord, N_DAYTYPE, STATE_DIM,
};
use crate::model::coord;
use crate::rng::{derive_seed, particle_rng, phase_rng};
use crate::truncnorm::{self, ln_std_cdf, Interval};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

/// Vague initial distribution: half-Gaussian levels and gradients with
/// variance 1e8, a `N(14, 1)` heating threshold, a flat Dirichlet on the
/// scaled daytype coefficients, and inverse-gamma variances.
#[derive(Debug, Clone)]
pub struct VaguePrior {
    /// Standard deviation of the level/gradient half-Gaussians.
    pub location_sd: f64,
    pub u_heat_mean: f64,
    pub u_heat_sd: f64,
    /// Shape and rate of every inverse-gamma variance prior.
    pub ig_shape: f64,
    pub ig_rate: f64,
}

impl Default for VaguePrior {
    fn default() -> Self {
        Self {
            location_sd: 1e4,
            u_heat_mean: 14.0,
            u_heat_sd: 1.0,
            ig_shape: 1e-2,
            ig_rate: 1e-2,
        }
    }
}

impl VaguePrior {
    fn sample_inverse_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = rng.sample(Gamma::new(self.ig_shape, 1.0).expect("valid gamma"));
        self.ig_rate / g.max(1e-300)
    }

    /// One draw of the full extended state (dynamics at time zero plus the
    /// static block), respecting every support constraint.
    pub fn sample_extended<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; STATE_DIM] {
        let mut state = [0.0; STATE_DIM];
        state[coord::S] = truncnorm::sample(0.0, self.location_sd, Interval::positive(), rng);
        state[coord::G_HEAT] =
            truncnorm::sample(0.0, self.location_sd, Interval::negative(), rng);
        state[coord::SIGMA_S_N] = self.sample_inverse_gamma(rng).sqrt();
        state[coord::SIGMA_G_N] = self.sample_inverse_gamma(rng).sqrt();
        state[coord::SIGMA_S] = self.sample_inverse_gamma(rng).sqrt();
        state[coord::SIGMA_G] = self.sample_inverse_gamma(rng).sqrt();
        state[coord::G_COOL] =
            truncnorm::sample(0.0, self.location_sd, Interval::positive(), rng);
        let z: f64 = rng.sample(StandardNormal);
        state[coord::U_HEAT] = self.u_heat_mean + self.u_heat_sd * z;
        state[coord::SIGMA_OBS] = self.sample_inverse_gamma(rng).sqrt();
        let dir = Dirichlet::new(&[1.0; N_DAYTYPE]).expect("valid dirichlet");
        let pi = rng.sample(dir);
        for (k, p) in state[coord::KAPPA..].iter_mut().zip(pi) {
            *k = N_DAYTYPE as f64 * p;
        }
        state
    }
}

/// Completion prior π̃₂: truncated normals on the second-layer walk
/// variances `σ_s²` and `σ_g²`, located at the spread of the posterior-mean
/// increments of the reduced fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionPrior {
    pub m_s: f64,
    pub s_s: f64,
    pub m_g: f64,
    pub s_g: f64,
}

/// Sampler configuration. Every value is a default, not a claim about any
/// particular dataset.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burnin_frac: f64,
    pub rhat_threshold: f64,
    /// Initial concentration of the Dirichlet proposal for κ.
    pub kappa_concentration: f64,
    /// Proposal-scale adaptation batch length (burn-in only).
    pub adapt_batch: usize,
    /// Completion-prior scale as a fraction of its location.
    pub completion_scale_ratio: f64,
    /// Floor for the completion-prior location when increments have no
    /// spread.
    pub zero_spread_floor: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 3000,
            burnin_frac: 0.5,
            rhat_threshold: 1.1,
            kappa_concentration: 200.0,
            adapt_batch: 50,
            completion_scale_ratio: 0.5,
            zero_spread_floor: 1e-6,
        }
    }
}

/// One post-burn-in draw of the reduced model's time-`n0−1` state and
/// parameters.
#[derive(Debug, Clone)]
pub struct ReducedDraw {
    pub s_last: f64,
    pub g_last: f64,
    pub sigma_s_star: f64,
    pub sigma_g_star: f64,
    pub g_cool: f64,
    pub u_heat: f64,
    pub sigma: f64,
    pub kappa: [f64; N_DAYTYPE],
}

/// Pooled posterior output of the reduced fit.
#[derive(Debug, Clone)]
pub struct McmcOutput {
    pub draws: Vec<ReducedDraw>,
    /// Posterior means of the level increments `ε_k^s`, `k = 1..n0−1`.
    pub increment_mean_s: Vec<f64>,
    /// Posterior means of the gradient increments `ε_k^g`.
    pub increment_mean_g: Vec<f64>,
    /// Posterior mean of the latent level path.
    pub path_mean_s: Vec<f64>,
    /// Posterior mean of the latent gradient path.
    pub path_mean_g: Vec<f64>,
    /// Split R-hat per monitored scalar.
    pub rhat: Vec<(String, f64)>,
}

const MONITORED: [&str; 8] = [
    "s_last",
    "g_last",
    "sigma_s_star",
    "sigma_g_star",
    "g_cool",
    "u_heat",
    "sigma",
    "kappa_0",
];

struct ChainState {
    s: Vec<f64>,
    g: Vec<f64>,
    u_heat: f64,
    g_cool: f64,
    kappa: [f64; N_DAYTYPE],
    sigma2: f64,
    sigma_s2: f64,
    sigma_g2: f64,
}

struct ChainResult {
    draws: Vec<ReducedDraw>,
    monitored: Vec<[f64; MONITORED.len()]>,
    increment_sum_s: Vec<f64>,
    increment_sum_g: Vec<f64>,
    path_sum_s: Vec<f64>,
    path_sum_g: Vec<f64>,
    kept: usize,
}

/// Fits the reduced model on `y[0..n0]` by Metropolis-within-Gibbs.
///
/// Latent paths and the threshold, cooling-gradient and κ parameters move by
/// truncation-respecting random-walk (or Dirichlet) Metropolis; the three
/// variances use conjugate inverse-gamma updates given the paths. Fails with
/// [`Error::NotConverged`] when any monitored split R-hat exceeds the
/// configured threshold.
pub fn fit_reduced_model(
    y: &[Option<f64>],
    exogenous: &[ExogenousRecord],
    prior: &VaguePrior,
    config: &McmcConfig,
    seed: u64,
) -> Result<McmcOutput> {
    let n0 = y.len();
    if exogenous.len() != n0 {
        return Err(Error::DimensionMismatch {
            expected: n0,
            got: exogenous.len(),
        });
    }
    let present = y.iter().flatten().count();
    if present < 30 {
        return Err(Error::InvalidParameter(format!(
            "warm-up needs at least 30 observed days, got {present}"
        )));
    }
    if config.chains == 0 || config.iterations < 20 {
        return Err(Error::InvalidParameter(
            "MCMC needs at least one chain and 20 iterations".into(),
        ));
    }

    let results: Vec<ChainResult> = exec::map_indexed(config.chains, |c| {
        let mut rng = phase_rng(derive_seed(seed, 0xC0A1 + c as u64));
        run_chain(y, exogenous, prior, config, c, &mut rng)
    });

    // Convergence: split every chain's kept trace in two halves.
    let mut rhat = Vec::with_capacity(MONITORED.len());
    for (p, name) in MONITORED.iter().enumerate() {
        let mut sequences: Vec<Vec<f64>> = Vec::new();
        for r in &results {
            let trace: Vec<f64> = r.monitored.iter().map(|row| row[p]).collect();
            let half = trace.len() / 2;
            sequences.push(trace[..half].to_vec());
            sequences.push(trace[half..].to_vec());
        }
        rhat.push((name.to_string(), split_rhat(&sequences)));
    }
    if let Some((name, value)) = rhat
        .iter()
        .find(|(_, v)| !v.is_finite() || *v > config.rhat_threshold)
    {
        return Err(Error::NotConverged {
            param: name.clone(),
            rhat: *value,
            threshold: config.rhat_threshold,
        });
    }

    let mut draws = Vec::new();
    let mut increment_mean_s = vec![0.0; n0.saturating_sub(1)];
    let mut increment_mean_g = vec![0.0; n0.saturating_sub(1)];
    let mut path_mean_s = vec![0.0; n0];
    let mut path_mean_g = vec![0.0; n0];
    let mut kept_total = 0usize;
    for mut r in results {
        draws.append(&mut r.draws);
        kept_total += r.kept;
        for (acc, v) in increment_mean_s.iter_mut().zip(&r.increment_sum_s) {
            *acc += v;
        }
        for (acc, v) in increment_mean_g.iter_mut().zip(&r.increment_sum_g) {
            *acc += v;
        }
        for (acc, v) in path_mean_s.iter_mut().zip(&r.path_sum_s) {
            *acc += v;
        }
        for (acc, v) in path_mean_g.iter_mut().zip(&r.path_sum_g) {
            *acc += v;
        }
    }
    let scale = 1.0 / kept_total.max(1) as f64;
    for v in increment_mean_s
        .iter_mut()
        .chain(&mut increment_mean_g)
        .chain(&mut path_mean_s)
        .chain(&mut path_mean_g)
    {
        *v *= scale;
    }

    Ok(McmcOutput {
        draws,
        increment_mean_s,
        increment_mean_g,
        path_mean_s,
        path_mean_g,
        rhat,
    })
}

/// Location of π̃₂: the spread (population sd) of the posterior-mean
/// increments, floored away from zero; scale is a fixed ratio of the
/// location.
pub fn derive_completion_prior(output: &McmcOutput, config: &McmcConfig) -> CompletionPrior {
    let spread = |xs: &[f64]| -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    let m_s = spread(&output.increment_mean_s).max(config.zero_spread_floor);
    let m_g = spread(&output.increment_mean_g).max(config.zero_spread_floor);
    CompletionPrior {
        m_s,
        s_s: (config.completion_scale_ratio * m_s).max(config.zero_spread_floor),
        m_g,
        s_g: (config.completion_scale_ratio * m_g).max(config.zero_spread_floor),
    }
}

/// Builds the initial particle cloud: π̃₁ draws supply the level, gradient
/// and reduced parameters (with the dynamic sds seeded at `σ_*`), π̃₂
/// supplies the second-layer walk variances. Weights are uniform.
///
/// With exactly `M` draws available the cloud is a permutation of them; more
/// draws are thinned evenly, fewer are bootstrap-resampled.
pub fn compose_initial_ensemble(
    output: &McmcOutput,
    completion: &CompletionPrior,
    m: usize,
    seed: u64,
) -> Result<WeightedEnsemble> {
    let available = output.draws.len();
    if available == 0 {
        return Err(Error::InsufficientDraws);
    }
    if m < 2 {
        return Err(Error::InvalidParameter(
            "particle count must be at least 2".into(),
        ));
    }
    let mut rng = phase_rng(derive_seed(seed, 0xC0E5));

    let selection: Vec<usize> = if m == available {
        let mut idx: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    } else if available > m {
        (0..m).map(|i| i * available / m).collect()
    } else {
        (0..m).map(|_| rng.gen_range(0..available)).collect()
    };

    let mut particles = vec![0.0; m * STATE_DIM];
    for (slot, &draw_idx) in selection.iter().enumerate() {
        let d = &output.draws[draw_idx];
        let sigma_s2 =
            truncnorm::sample(completion.m_s, completion.s_s, Interval::positive(), &mut rng);
        let sigma_g2 =
            truncnorm::sample(completion.m_g, completion.s_g, Interval::positive(), &mut rng);
        let p = &mut particles[slot * STATE_DIM..(slot + 1) * STATE_DIM];
        p[coord::S] = d.s_last;
        p[coord::G_HEAT] = d.g_last;
        p[coord::SIGMA_S_N] = d.sigma_s_star;
        p[coord::SIGMA_G_N] = d.sigma_g_star;
        p[coord::SIGMA_S] = sigma_s2.sqrt();
        p[coord::SIGMA_G] = sigma_g2.sqrt();
        p[coord::G_COOL] = d.g_cool;
        p[coord::U_HEAT] = d.u_heat;
        p[coord::SIGMA_OBS] = d.sigma;
        p[coord::KAPPA..].copy_from_slice(&d.kappa);
    }
    WeightedEnsemble::uniform(particles, STATE_DIM)
}

/// Draws the initial cloud directly from the vague prior. Covering both the
/// prior and posterior mass this way needs a massive particle count; the
/// bypass exists for small synthetic tests.
pub fn vague_direct_init(prior: &VaguePrior, m: usize, seed: u64) -> WeightedEnsemble {
    let base = phase_rng(derive_seed(seed, 0xAA01));
    let mut particles = vec![0.0; m * STATE_DIM];
    exec::for_each_particle(&mut particles, STATE_DIM, |j, p| {
        let mut rng = particle_rng(&base, j);
        p.copy_from_slice(&prior.sample_extended(&mut rng));
    });
    WeightedEnsemble::uniform(particles, STATE_DIM).expect("m >= 1")
}

// ---------------------------------------------------------------------------
// Sampler internals
// ---------------------------------------------------------------------------

/// Truncated-walk transition log-density for the level: `s_new > 0`.
fn trans_s_ln(s_new: f64, s_prev: f64, sd: f64) -> f64 {
    if s_new <= 0.0 {
        return f64::NEG_INFINITY;
    }
    gaussian_ln_pdf(s_new, s_prev, sd) - ln_std_cdf(s_prev / sd)
}

/// Truncated-walk transition log-density for the gradient: `g_new < 0`.
fn trans_g_ln(g_new: f64, g_prev: f64, sd: f64) -> f64 {
    if g_new >= 0.0 {
        return f64::NEG_INFINITY;
    }
    gaussian_ln_pdf(g_new, g_prev, sd) - ln_std_cdf(-g_prev / sd)
}

fn obs_mean(state: &ChainState, k: usize, ex: &ExogenousRecord) -> f64 {
    load_observation_mean(
        state.s[k],
        state.g[k],
        state.u_heat,
        state.g_cool,
        &state.kappa,
        ex,
    )
}

fn obs_ln(state: &ChainState, y: &[Option<f64>], k: usize, ex: &ExogenousRecord) -> f64 {
    match y[k] {
        Some(obs) => gaussian_ln_pdf(obs, obs_mean(state, k, ex), state.sigma2.sqrt()),
        None => 0.0,
    }
}

fn full_obs_ln(state: &ChainState, y: &[Option<f64>], exo: &[ExogenousRecord]) -> f64 {
    exo.iter()
        .enumerate()
        .map(|(k, ex)| obs_ln(state, y, k, ex))
        .sum()
}

fn init_chain(
    y: &[Option<f64>],
    exo: &[ExogenousRecord],
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> ChainState {
    let n0 = y.len();
    let present: Vec<f64> = y.iter().flatten().copied().collect();
    let mean_abs = present.iter().map(|v| v.abs()).sum::<f64>() / present.len() as f64;
    let var_y = {
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / present.len() as f64
    };
    let factor = [0.7, 0.9, 1.15, 1.4][chain % 4];
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal);

    // Backward/forward fill the level path from the observations.
    let mut s = vec![0.0; n0];
    let mut last = mean_abs.max(1.0);
    for k in 0..n0 {
        if let Some(obs) = y[k] {
            last = obs.abs().max(1e-3 * mean_abs.max(1.0));
        }
        s[k] = last * jitter(rng);
    }
    let g0 = -(0.01 * mean_abs).max(1e-3) * factor;
    let g = vec![g0; n0];

    let cool_mean = {
        let active: Vec<f64> = exo
            .iter()
            .map(|e| e.delta_cool)
            .filter(|&d| d > 0.0)
            .collect();
        if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<f64>() / active.len() as f64
        }
    };
    let g_cool = if cool_mean > 0.0 {
        (0.02 * mean_abs / cool_mean).max(1e-3) * factor
    } else {
        1.0 * factor
    };

    let chains_mid = 1.5;
    ChainState {
        s,
        g,
        u_heat: 14.0 + 0.5 * (chain as f64 - chains_mid),
        g_cool,
        kappa: [1.0; N_DAYTYPE],
        sigma2: (0.01 * var_y).max(1.0) * factor,
        sigma_s2: (0.005 * var_y).max(1.0) * factor,
        sigma_g2: (0.05 * g0 * g0).max(1e-4) * factor,
    }
}

fn run_chain(
    y: &[Option<f64>],
    exo: &[ExogenousRecord],
    prior: &VaguePrior,
    config: &McmcConfig,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> ChainResult {
    let n0 = y.len();
    let mut state = init_chain(y, exo, chain, rng);
    let burnin = ((config.iterations as f64) * config.burnin_frac) as usize;

    let prior_var = prior.location_sd * prior.location_sd;
    let ig_a = prior.ig_shape;
    let ig_b = prior.ig_rate;

    // Adaptive proposal scales, frozen after burn-in.
    let mut scale_s = vec![state.sigma_s2.sqrt().max(1e-3); n0];
    let mut scale_g = vec![state.sigma_g2.sqrt().max(1e-3); n0];
    let mut scale_u = 0.25f64;
    let mut scale_gc = (0.1 * state.g_cool.abs()).max(1e-3);
    let mut kappa_conc = config.kappa_concentration;
    let mut acc_s = vec![0u32; n0];
    let mut acc_g = vec![0u32; n0];
    let mut acc_u = 0u32;
    let mut acc_gc = 0u32;
    let mut acc_kappa = 0u32;

    let mut result = ChainResult {
        draws: Vec::with_capacity(config.iterations - burnin),
        monitored: Vec::with_capacity(config.iterations - burnin),
        increment_sum_s: vec![0.0; n0.saturating_sub(1)],
        increment_sum_g: vec![0.0; n0.saturating_sub(1)],
        path_sum_s: vec![0.0; n0],
        path_sum_g: vec![0.0; n0],
        kept: 0,
    };

    for iter in 0..config.iterations {
        let sd_s = state.sigma_s2.sqrt();
        let sd_g = state.sigma_g2.sqrt();

        // Single-site random-walk Metropolis over the level path.
        for k in 0..n0 {
            let current = state.s[k];
            let proposal = current + scale_s[k] * rng.sample::<f64, _>(StandardNormal);
            if proposal <= 0.0 {
                continue;
            }
            let local = |val: f64, st: &ChainState| -> f64 {
                let mut lp = if k == 0 {
                    -0.5 * val * val / prior_var
                } else {
                    trans_s_ln(val, st.s[k - 1], sd_s)
                };
                if k + 1 < n0 {
                    lp += trans_s_ln(st.s[k + 1], val, sd_s);
                }
                if let Some(obs) = y[k] {
                    let mean = load_observation_mean(
                        val,
                        st.g[k],
                        st.u_heat,
                        st.g_cool,
                        &st.kappa,
                        &exo[k],
                    );
                    lp += gaussian_ln_pdf(obs, mean, st.sigma2.sqrt());
                }
                lp
            };
            let delta = local(proposal, &state) - local(current, &state);
            if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                state.s[k] = proposal;
                acc_s[k] += 1;
            }
        }

        // Single-site random-walk Metropolis over the gradient path.
        for k in 0..n0 {
            let current = state.g[k];
            let proposal = current + scale_g[k] * rng.sample::<f64, _>(StandardNormal);
            if proposal >= 0.0 {
                continue;
            }
            let local = |val: f64, st: &ChainState| -> f64 {
                let mut lp = if k == 0 {
                    -0.5 * val * val / prior_var
                } else {
                    trans_g_ln(val, st.g[k - 1], sd_g)
                };
                if k + 1 < n0 {
                    lp += trans_g_ln(st.g[k + 1], val, sd_g);
                }
                if let Some(obs) = y[k] {
                    let mean = load_observation_mean(
                        st.s[k],
                        val,
                        st.u_heat,
                        st.g_cool,
                        &st.kappa,
                        &exo[k],
                    );
                    lp += gaussian_ln_pdf(obs, mean, st.sigma2.sqrt());
                }
                lp
            };
            let delta = local(proposal, &state) - local(current, &state);
            if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                state.g[k] = proposal;
                acc_g[k] += 1;
            }
        }

        // Heating threshold (Gaussian prior, unbounded support).
        {
            let current = state.u_heat;
            let proposal = current + scale_u * rng.sample::<f64, _>(StandardNormal);
            let prior_ln = |u: f64| {
                let d = (u - prior.u_heat_mean) / prior.u_heat_sd;
                -0.5 * d * d
            };
            let before = prior_ln(current) + full_obs_ln(&state, y, exo);
            state.u_heat = proposal;
            let after = prior_ln(proposal) + full_obs_ln(&state, y, exo);
            if after - before >= 0.0 || rng.gen::<f64>().ln() < after - before {
                acc_u += 1;
            } else {
                state.u_heat = current;
            }
        }

        // Cooling gradient (half-Gaussian prior on ℝ₊).
        {
            let current = state.g_cool;
            let proposal = current + scale_gc * rng.sample::<f64, _>(StandardNormal);
            if proposal > 0.0 {
                let prior_ln = |gc: f64| -0.5 * gc * gc / prior_var;
                let before = prior_ln(current) + full_obs_ln(&state, y, exo);
                state.g_cool = proposal;
                let after = prior_ln(proposal) + full_obs_ln(&state, y, exo);
                if after - before >= 0.0 || rng.gen::<f64>().ln() < after - before {
                    acc_gc += 1;
                } else {
                    state.g_cool = current;
                }
            }
        }

        // κ: Dirichlet proposal concentrated at the current point; the flat
        // simplex prior is constant so only likelihood and proposal densities
        // enter the ratio.
        {
            let current = state.kappa;
            let pi_current: Vec<f64> =
                current.iter().map(|k| k / N_DAYTYPE as f64).collect();
            let alpha: Vec<f64> = pi_current
                .iter()
                .map(|p| kappa_conc * p + 1.0)
                .collect();
            if let Ok(dir) = Dirichlet::new(&alpha) {
                let pi_prop = rng.sample(dir);
                let mut proposal = [0.0; N_DAYTYPE];
                for (t, p) in proposal.iter_mut().zip(&pi_prop) {
                    *t = N_DAYTYPE as f64 * p;
                }
                let alpha_rev: Vec<f64> =
                    pi_prop.iter().map(|p| kappa_conc * p + 1.0).collect();
                let before = full_obs_ln(&state, y, exo);
                state.kappa = proposal;
                let after = full_obs_ln(&state, y, exo);
                let delta = after - before + ln_dirichlet(&pi_current, &alpha_rev)
                    - ln_dirichlet(&pi_prop, &alpha);
                if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
                    acc_kappa += 1;
                } else {
                    state.kappa = current;
                }
            }
        }

        // Conjugate inverse-gamma updates given the paths. The truncated-walk
        // normalising constants are ignored here; they are 1 to double
        // precision whenever the paths sit away from their bounds.
        {
            let mut ssr = 0.0;
            let mut count = 0usize;
            for (k, ex) in exo.iter().enumerate() {
                if let Some(obs) = y[k] {
                    let d = obs - obs_mean(&state, k, ex);
                    ssr += d * d;
                    count += 1;
                }
            }
            state.sigma2 = sample_inverse_gamma(
                ig_a + 0.5 * count as f64,
                ig_b + 0.5 * ssr,
                rng,
            );

            let ss_s: f64 = state.s.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
            state.sigma_s2 = sample_inverse_gamma(
                ig_a + 0.5 * (n0 - 1) as f64,
                ig_b + 0.5 * ss_s,
                rng,
            );
            let ss_g: f64 = state.g.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
            state.sigma_g2 = sample_inverse_gamma(
                ig_a + 0.5 * (n0 - 1) as f64,
                ig_b + 0.5 * ss_g,
                rng,
            );
        }

        // Scale adaptation during burn-in.
        if iter < burnin && (iter + 1) % config.adapt_batch == 0 {
            let batch = config.adapt_batch as f64;
            for k in 0..n0 {
                adapt(&mut scale_s[k], acc_s[k] as f64 / batch, 0.44);
                adapt(&mut scale_g[k], acc_g[k] as f64 / batch, 0.44);
                acc_s[k] = 0;
                acc_g[k] = 0;
            }
            adapt(&mut scale_u, acc_u as f64 / batch, 0.44);
            adapt(&mut scale_gc, acc_gc as f64 / batch, 0.44);
            // Higher concentration = smaller κ steps; adaptation inverted.
            let rate = acc_kappa as f64 / batch;
            if rate < 0.15 {
                kappa_conc *= 1.5;
            } else if rate > 0.40 {
                kappa_conc = (kappa_conc / 1.5).max(1.0);
            }
            acc_u = 0;
            acc_gc = 0;
            acc_kappa = 0;
        }

        if iter >= burnin {
            let draw = ReducedDraw {
                s_last: state.s[n0 - 1],
                g_last: state.g[n0 - 1],
                sigma_s_star: state.sigma_s2.sqrt(),
                sigma_g_star: state.sigma_g2.sqrt(),
                g_cool: state.g_cool,
                u_heat: state.u_heat,
                sigma: state.sigma2.sqrt(),
                kappa: state.kappa,
            };
            result.monitored.push([
                draw.s_last,
                draw.g_last,
                draw.sigma_s_star,
                draw.sigma_g_star,
                draw.g_cool,
                draw.u_heat,
                draw.sigma,
                draw.kappa[0],
            ]);
            for k in 1..n0 {
                result.increment_sum_s[k - 1] += state.s[k] - state.s[k - 1];
                result.increment_sum_g[k - 1] += state.g[k] - state.g[k - 1];
            }
            for k in 0..n0 {
                result.path_sum_s[k] += state.s[k];
                result.path_sum_g[k] += state.g[k];
            }
            result.draws.push(draw);
            result.kept += 1;
        }
    }
    result
}

fn adapt(scale: &mut f64, rate: f64, target: f64) {
    if rate < target - 0.14 {
        *scale /= 1.5;
    } else if rate > target + 0.16 {
        *scale *= 1.5;
    }
}

fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g: f64 = rng.sample(Gamma::new(shape, 1.0).expect("valid gamma"));
    rate / g.max(1e-300)
}

fn ln_dirichlet(x: &[f64], alpha: &[f64]) -> f64 {
    let mut lp = ln_gamma(alpha.iter().sum::<f64>());
    for (xi, ai) in x.iter().zip(alpha) {
        if *xi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += (ai - 1.0) * xi.ln() - ln_gamma(*ai);
    }
    lp
}

/// Split R-hat over same-length scalar sequences.
fn split_rhat(sequences: &[Vec<f64>]) -> f64 {
    let m = sequences.len();
    let n = sequences.iter().map(|s| s.len()).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = sequences
        .iter()
        .map(|s| s[..n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = sequences
        .iter()
        .zip(&means)
        .map(|(s, mu)| {
            s[..n].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0)
        })
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        // Zero within-chain variance: identical constants converge trivially.
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize, LoadModel, LoadParams};
    use crate::filter::StateSpaceModel;
    use approx::assert_abs_diff_eq;

    fn flat_exo(n: usize) -> Vec<ExogenousRecord> {
        (0..n)
            .map(|k| {
                let t = 12.0 + 8.0 * (2.0 * std::f64::consts::PI * k as f64 / 60.0).sin();
                let cool = (t - 16.0).max(0.0);
                ExogenousRecord::new(k % N_DAYTYPE, t, cool).unwrap()
            })
            .collect()
    }

    /// Reduced-model synthetic data: the second layer is frozen by making its
    /// walk sd negligible.
    fn reduced_synthetic(
        n0: usize,
        sigma: f64,
        seed: u64,
    ) -> (LoadParams, Vec<ExogenousRecord>, Vec<Option<f64>>, Vec<f64>) {
        let params = LoadParams::new(1e-9, 1e-9, 40.0, 14.0, [1.0; N_DAYTYPE], sigma).unwrap();
        let initial = LoadDynamicState {
            s: 1000.0,
            g_heat: -30.0,
            sigma_s_n: 15.0,
            sigma_g_n: 2.0,
        };
        let exo = flat_exo(n0);
        let (states, obs) = synthesize(&params, &initial, &exo, seed);
        let y: Vec<Option<f64>> = obs.iter().copied().map(Some).collect();
        let truth: Vec<f64> = states.iter().map(|st| st.s).collect();
        (params, exo, y, truth)
    }

    fn quick_config() -> McmcConfig {
        McmcConfig {
            chains: 2,
            iterations: 900,
            rhat_threshold: 1.3,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn vague_draws_respect_supports() {
        let prior = VaguePrior::default();
        let ens = vague_direct_init(&prior, 100_000, 4);
        let mut u_sum = 0.0;
        for (p, _) in ens.iter_particles() {
            assert!(p[coord::S] > 0.0);
            assert!(p[coord::G_HEAT] < 0.0);
            assert!(p[coord::SIGMA_S_N] > 0.0);
            assert!(p[coord::SIGMA_G_N] > 0.0);
            assert!(p[coord::G_COOL] > 0.0);
            assert!(p[coord::SIGMA_OBS] > 0.0);
            let kappa_mean: f64 =
                p[coord::KAPPA..].iter().sum::<f64>() / N_DAYTYPE as f64;
            assert_abs_diff_eq!(kappa_mean, 1.0, epsilon = 1e-9);
            u_sum += p[coord::U_HEAT];
        }
        assert_abs_diff_eq!(u_sum / ens.len() as f64, 14.0, epsilon = 0.05);
    }

    #[test]
    fn mcmc_likelihood_matches_model_likelihood() {
        // The reduced sampler and the filter model must score observations
        // through the same code path.
        let model = LoadModel::standard();
        let exo = ExogenousRecord::new(2, 9.0, 0.0).unwrap();
        let state = ChainState {
            s: vec![950.0],
            g: vec![-25.0],
            u_heat: 13.5,
            g_cool: 42.0,
            kappa: [1.0; N_DAYTYPE],
            sigma2: 36.0,
            sigma_s2: 1.0,
            sigma_g2: 1.0,
        };
        let y = vec![Some(1023.0)];
        let ln_mcmc = obs_ln(&state, &y, 0, &exo);
        let mut packed = [0.0; STATE_DIM];
        packed[coord::S] = 950.0;
        packed[coord::G_HEAT] = -25.0;
        packed[coord::SIGMA_S_N] = 1.0;
        packed[coord::SIGMA_G_N] = 1.0;
        packed[coord::SIGMA_S] = 1.0;
        packed[coord::SIGMA_G] = 1.0;
        packed[coord::G_COOL] = 42.0;
        packed[coord::U_HEAT] = 13.5;
        packed[coord::SIGMA_OBS] = 6.0;
        for k in &mut packed[coord::KAPPA..] {
            *k = 1.0;
        }
        let direct = model.observation_likelihood(&packed, 1023.0, &exo);
        assert_abs_diff_eq!(ln_mcmc.exp(), direct, epsilon = 1e-15 * direct.max(1.0));
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let (_, exo, y, _) = reduced_synthetic(40, 5.0, 11);
        let cfg = McmcConfig {
            chains: 2,
            iterations: 120,
            rhat_threshold: 50.0,
            ..McmcConfig::default()
        };
        let prior = VaguePrior::default();
        let a = fit_reduced_model(&y, &exo, &prior, &cfg, 5).unwrap();
        let b = fit_reduced_model(&y, &exo, &prior, &cfg, 5).unwrap();
        assert_eq!(a.draws.len(), b.draws.len());
        for (da, db) in a.draws.iter().zip(&b.draws) {
            assert_eq!(da.s_last, db.s_last);
            assert_eq!(da.u_heat, db.u_heat);
        }
    }

    #[test]
    fn near_noiseless_data_pins_latent_path() {
        let (_, exo, y, truth) = reduced_synthetic(60, 0.5, 21);
        let prior = VaguePrior::default();
        let out = fit_reduced_model(&y, &exo, &prior, &quick_config(), 9).unwrap();
        let max_rel = out
            .path_mean_s
            .iter()
            .zip(&truth)
            .map(|(est, tr)| (est - tr).abs() / tr)
            .fold(0.0f64, f64::max);
        assert!(max_rel <= 0.01, "max relative path error {max_rel}");
    }

    #[test]
    fn calibration_over_replications() {
        // A correct sampler's 90% intervals contain the generating values in
        // at least 16 of 20 replications (binomial slack below the nominal
        // rate).
        let prior = VaguePrior::default();
        let cfg = quick_config();
        let mut hits_u = 0;
        let mut hits_gc = 0;
        for rep in 0..20 {
            let (params, exo, y, _) = reduced_synthetic(60, 4.0, 100 + rep);
            let out = fit_reduced_model(&y, &exo, &prior, &cfg, 2000 + rep).unwrap();
            let mut us: Vec<f64> = out.draws.iter().map(|d| d.u_heat).collect();
            let mut gcs: Vec<f64> = out.draws.iter().map(|d| d.g_cool).collect();
            us.sort_unstable_by(f64::total_cmp);
            gcs.sort_unstable_by(f64::total_cmp);
            let q = |v: &[f64], p: f64| v[(p * (v.len() - 1) as f64) as usize];
            if params.u_heat >= q(&us, 0.05) && params.u_heat <= q(&us, 0.95) {
                hits_u += 1;
            }
            if params.g_cool >= q(&gcs, 0.05) && params.g_cool <= q(&gcs, 0.95) {
                hits_gc += 1;
            }
        }
        assert!(hits_u >= 16, "u_heat coverage {hits_u}/20");
        assert!(hits_gc >= 16, "g_cool coverage {hits_gc}/20");
    }

    #[test]
    fn convergence_diagnostic_rejects_tight_threshold() {
        let (_, exo, y, _) = reduced_synthetic(40, 4.0, 3);
        let cfg = McmcConfig {
            chains: 2,
            iterations: 100,
            rhat_threshold: 0.5,
            ..McmcConfig::default()
        };
        let prior = VaguePrior::default();
        assert!(matches!(
            fit_reduced_model(&y, &exo, &prior, &cfg, 1),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn completion_prior_edge_cases() {
        let cfg = McmcConfig::default();
        let mut out = McmcOutput {
            draws: vec![],
            increment_mean_s: vec![3.0; 10],
            increment_mean_g: vec![-1.0; 10],
            path_mean_s: vec![],
            path_mean_g: vec![],
            rhat: vec![],
        };
        // Constant increments have zero spread: floor applies.
        let cp = derive_completion_prior(&out, &cfg);
        assert_eq!(cp.m_s, cfg.zero_spread_floor);
        assert!(cp.s_s > 0.0 && cp.s_g > 0.0);

        // Alternating ±a has population sd a.
        out.increment_mean_s = (0..10).map(|k| if k % 2 == 0 { 2.5 } else { -2.5 }).collect();
        let cp = derive_completion_prior(&out, &cfg);
        assert_abs_diff_eq!(cp.m_s, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cp.s_s, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn composed_ensemble_satisfies_invariants_and_matches_marginal() {
        let (_, exo, y, _) = reduced_synthetic(45, 4.0, 77);
        let prior = VaguePrior::default();
        let cfg = McmcConfig {
            chains: 2,
            iterations: 700,
            rhat_threshold: 2.0,
            ..McmcConfig::default()
        };
        let out = fit_reduced_model(&y, &exo, &prior, &cfg, 31).unwrap();
        let completion = derive_completion_prior(&out, &cfg);
        let m = 2 * out.draws.len(); // forces bootstrap resampling
        let ens = compose_initial_ensemble(&out, &completion, m, 8).unwrap();
        assert_eq!(ens.len(), m);
        for (p, _) in ens.iter_particles() {
            assert!(p[coord::S] > 0.0);
            assert!(p[coord::G_HEAT] < 0.0);
            assert!(p[coord::SIGMA_S_N] > 0.0);
            assert!(p[coord::SIGMA_G_N] > 0.0);
            assert!(p[coord::SIGMA_S] > 0.0);
            assert!(p[coord::SIGMA_G] > 0.0);
        }
        // The s-marginal of the cloud matches the MCMC marginal.
        let mut cloud_s: Vec<f64> = ens.iter_particles().map(|(p, _)| p[coord::S]).collect();
        let mut draw_s: Vec<f64> = out.draws.iter().map(|d| d.s_last).collect();
        cloud_s.sort_unstable_by(f64::total_cmp);
        draw_s.sort_unstable_by(f64::total_cmp);
        let ks = crate::testutil::ks_distance(&cloud_s, &draw_s);
        assert!(ks <= 0.02, "KS distance {ks}");
    }

    #[test]
    fn compose_requires_draws() {
        let out = McmcOutput {
            draws: vec![],
            increment_mean_s: vec![],
            increment_mean_g: vec![],
            path_mean_s: vec![],
            path_mean_g: vec![],
            rhat: vec![],
        };
        let cp = CompletionPrior {
            m_s: 1.0,
            s_s: 0.5,
            m_g: 1.0,
            s_g: 0.5,
        };
        assert!(matches!(
            compose_initial_ensemble(&out, &cp, 10, 1),
            Err(Error::InsufficientDraws)
        ));
    }
}
