//! The composite robust particle filter: prior-proposal sequential importance
//! sampling, degeneracy-gated residual resampling plus kernel regularisation,
//! outlier removal under critical degeneracy, missing-observation handling
//! and multi-horizon prediction.
//!
//! The proposal is fixed to the model's prior dynamic, so weights update by
//! the likelihood alone, a flat likelihood leaves them untouched, and a
//! missing observation reduces to pure propagation. Each time step is gated
//! by the effective sample size: healthy ensembles are kept, degenerate ones
//! are resampled and jittered, critically degenerate ones mean the incoming
//! observation is treated as an outlier and skipped with the previous weights
//! retained, which bounds the runtime of every step.

use crate::degeneracy::{DegeneracyReport, Health, Thresholds};
use crate::ensemble::{
    normalize_weights, weighted_mean, weighted_quantile_pair, UnnormalisedWeights,
    WeightedEnsemble,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::regularize::{
    regularize_move, silverman_bandwidth, weighted_covariance, KernelSpec,
};
use crate::resample::residual_resample;
use crate::rng::{derive_seed, particle_rng, phase, phase_rng};
use crate::truncnorm::Interval;
use rand::Rng;

/// Capabilities a state-space model must provide to be filtered: the initial
/// sampler, the transition sampler (in place), and the observation density,
/// mean and sampler. Transitions must respect any state-space bounds by
/// construction.
pub trait StateSpaceModel: Sync {
    type Exogenous: Sync;

    fn state_dim(&self) -> usize;

    /// Draw from the initial state density.
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;

    /// Replace `state` by a draw from the transition kernel.
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        state: &mut [f64],
        exogenous: &Self::Exogenous,
        rng: &mut R,
    );

    /// Noiseless observation implied by a state point.
    fn observation_mean(&self, state: &[f64], exogenous: &Self::Exogenous) -> f64;

    /// Observation density `g(y | state)`, finite and nonnegative.
    fn observation_likelihood(&self, state: &[f64], y: f64, exogenous: &Self::Exogenous) -> f64;

    /// Draw an observation given a state point.
    fn observation_sample<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        exogenous: &Self::Exogenous,
        rng: &mut R,
    ) -> f64;

    /// Per-coordinate support, used by the regularisation move to pick
    /// truncated kernels. Unbounded by default.
    fn coordinate_bounds(&self) -> Vec<Interval> {
        vec![Interval::UNBOUNDED; self.state_dim()]
    }

    /// Repair hook applied to each particle after a regularisation move, for
    /// constraints a per-coordinate truncation cannot express.
    fn constrain(&self, _state: &mut [f64]) {}
}

/// What the degeneracy gate decided at one observed time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    Kept,
    ResampledAndMoved,
    OutlierSkipped,
}

/// Per-step trace entry: the degeneracy report of the post-update weights and
/// the filtered mean computed before any resampling. `action` is `None` for
/// missing observations, where no gate applies.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time_index: usize,
    pub action: Option<StepAction>,
    pub report: DegeneracyReport,
    pub filtered_mean: f64,
}

/// Predictive summaries for one horizon: mean of the noiseless observation,
/// its credible interval, and the credible interval with observation noise
/// added.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonForecast {
    pub horizon: usize,
    pub state_mean: f64,
    pub state_lo: f64,
    pub state_hi: f64,
    pub obs_lo: f64,
    pub obs_hi: f64,
}

/// The filter's full state: the weighted ensemble, the index of the last
/// assimilated observation, and append-only logs.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    ensemble: WeightedEnsemble,
    time_index: usize,
    seed: u64,
    thresholds: Thresholds,
    outlier_log: Vec<usize>,
    step_log: Vec<StepRecord>,
}

impl FilterState {
    /// Draws `m` particles from the model's initial density, weights them by
    /// the likelihood of `y0` and applies the degeneracy gate. Total weight
    /// underflow at this stage keeps the prior draws with uniform weights and
    /// logs `y0` as an outlier.
    pub fn init<M: StateSpaceModel>(
        model: &M,
        y0: f64,
        exogenous: &M::Exogenous,
        m: usize,
        thresholds: Thresholds,
        seed: u64,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(
                "particle count must be at least 2".into(),
            ));
        }
        let dim = model.state_dim();
        let step_seed = derive_seed(seed, 0);
        let base = phase_rng(derive_seed(step_seed, phase::INIT));
        let mut particles = vec![0.0; m * dim];
        exec::for_each_particle(&mut particles, dim, |j, p| {
            let mut rng = particle_rng(&base, j);
            p.copy_from_slice(&model.sample_initial(&mut rng));
        });
        let mut state = Self {
            ensemble: WeightedEnsemble {
                particles,
                weights: vec![1.0 / m as f64; m],
                dim,
            },
            time_index: 0,
            seed,
            thresholds,
            outlier_log: Vec::new(),
            step_log: Vec::new(),
        };
        state.assimilate(model, y0, exogenous, step_seed, 0)?;
        Ok(state)
    }

    /// Starts the filter from an externally built ensemble (for instance the
    /// MCMC warm-up), with `time_index` naming the last observation that the
    /// ensemble already reflects.
    pub fn with_ensemble(
        ensemble: WeightedEnsemble,
        thresholds: Thresholds,
        seed: u64,
        time_index: usize,
    ) -> Self {
        Self {
            ensemble,
            time_index,
            seed,
            thresholds,
            outlier_log: Vec::new(),
            step_log: Vec::new(),
        }
    }

    pub fn ensemble(&self) -> &WeightedEnsemble {
        &self.ensemble
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    /// Time indices whose observations were skipped as outliers.
    pub fn outlier_log(&self) -> &[usize] {
        &self.outlier_log
    }

    pub fn step_log(&self) -> &[StepRecord] {
        &self.step_log
    }

    pub fn last_record(&self) -> Option<&StepRecord> {
        self.step_log.last()
    }

    /// Assimilates the observation at the next time index: propagates through
    /// the prior, updates weights by the likelihood, and applies the
    /// three-way degeneracy gate.
    pub fn step<M: StateSpaceModel>(
        &mut self,
        model: &M,
        y: f64,
        exogenous: &M::Exogenous,
    ) -> Result<StepAction> {
        debug_assert_eq!(model.state_dim(), self.ensemble.dim);
        let n = self.time_index + 1;
        let step_seed = derive_seed(self.seed, n as u64);
        self.propagate(model, exogenous, step_seed);
        let action = self.assimilate(model, y, exogenous, step_seed, n)?;
        Ok(action)
    }

    /// Missing-observation step: pure propagation. Under the prior proposal
    /// the weight update ratio is one, so weights stay untouched and no
    /// degeneracy gate applies.
    pub fn step_missing<M: StateSpaceModel>(&mut self, model: &M, exogenous: &M::Exogenous) {
        let n = self.time_index + 1;
        let step_seed = derive_seed(self.seed, n as u64);
        self.propagate(model, exogenous, step_seed);
        let report = DegeneracyReport::evaluate(&self.ensemble.weights, &self.thresholds);
        let filtered_mean = self.filtered_observation_mean(model, exogenous);
        self.time_index = n;
        self.step_log.push(StepRecord {
            time_index: n,
            action: None,
            report,
            filtered_mean,
        });
    }

    /// Filtered mean of the noiseless observation under the current weights.
    pub fn filtered_observation_mean<M: StateSpaceModel>(
        &self,
        model: &M,
        exogenous: &M::Exogenous,
    ) -> f64 {
        let means = exec::map_particles(&self.ensemble.particles, self.ensemble.dim, |_, p| {
            model.observation_mean(p, exogenous)
        });
        weighted_mean(&means, &self.ensemble.weights)
    }

    /// Multi-horizon prediction on a clone of the ensemble: propagates
    /// through the prior without reweighting and records, per horizon, the
    /// predictive mean, the credible interval of the noiseless observation
    /// and the credible interval with observation noise. The filter itself is
    /// untouched.
    pub fn predict<M: StateSpaceModel>(
        &self,
        model: &M,
        tau_max: usize,
        exogenous: &[M::Exogenous],
        level: f64,
    ) -> Result<Vec<HorizonForecast>> {
        if exogenous.len() < tau_max {
            return Err(Error::MissingExogenous(exogenous.len() + 1));
        }
        let next_seed = derive_seed(self.seed, (self.time_index + 1) as u64);
        let dim = self.ensemble.dim;
        let weights = &self.ensemble.weights;
        let mut cloud = self.ensemble.particles.clone();
        let q_lo = (1.0 - level) / 2.0;
        let q_hi = (1.0 + level) / 2.0;

        let mut forecasts = Vec::with_capacity(tau_max);
        for (t, ex) in exogenous.iter().enumerate().take(tau_max) {
            let tau = t + 1;
            let base = phase_rng(derive_seed(next_seed, phase::PREDICT + tau as u64));
            exec::for_each_particle(&mut cloud, dim, |j, p| {
                let mut rng = particle_rng(&base, j);
                model.sample_transition(p, ex, &mut rng);
            });

            let means = exec::map_particles(&cloud, dim, |_, p| model.observation_mean(p, ex));
            let state_mean = weighted_mean(&means, weights);
            if !state_mean.is_finite() {
                return Err(Error::NonFiniteResult);
            }
            let (state_lo, state_hi) = weighted_quantile_pair(&means, weights, q_lo, q_hi)?;

            let obs_base = phase_rng(derive_seed(next_seed, phase::OBS_NOISE + tau as u64));
            let obs = exec::map_particles(&cloud, dim, |j, p| {
                let mut rng = particle_rng(&obs_base, j);
                model.observation_sample(p, ex, &mut rng)
            });
            let (obs_lo, obs_hi) = weighted_quantile_pair(&obs, weights, q_lo, q_hi)?;

            forecasts.push(HorizonForecast {
                horizon: tau,
                state_mean,
                state_lo,
                state_hi,
                obs_lo,
                obs_hi,
            });
        }
        Ok(forecasts)
    }

    fn propagate<M: StateSpaceModel>(
        &mut self,
        model: &M,
        exogenous: &M::Exogenous,
        step_seed: u64,
    ) {
        let base = phase_rng(derive_seed(step_seed, phase::PROPAGATE));
        exec::for_each_particle(&mut self.ensemble.particles, self.ensemble.dim, |j, p| {
            let mut rng = particle_rng(&base, j);
            model.sample_transition(p, exogenous, &mut rng);
        });
    }

    /// Weight update and degeneracy gate shared by `init` and `step`.
    fn assimilate<M: StateSpaceModel>(
        &mut self,
        model: &M,
        y: f64,
        exogenous: &M::Exogenous,
        step_seed: u64,
        n: usize,
    ) -> Result<StepAction> {
        let likes = exec::map_particles(&self.ensemble.particles, self.ensemble.dim, |_, p| {
            model.observation_likelihood(p, y, exogenous)
        });
        let mut like_max = 0.0f64;
        for (j, &g) in likes.iter().enumerate() {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::NonFiniteWeight(j));
            }
            like_max = like_max.max(g);
        }

        // Scale by the largest likelihood before multiplying so the products
        // cannot underflow unless the likelihoods themselves already did.
        let updated = if like_max > 0.0 {
            let raw: Vec<f64> = self
                .ensemble
                .weights
                .iter()
                .zip(&likes)
                .map(|(&w, &g)| w * (g / like_max))
                .collect();
            match normalize_weights(UnnormalisedWeights(raw)) {
                Ok(w) => Some(w),
                Err(Error::AllWeightsZero) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };

        let m = self.ensemble.len();
        let (report, action) = match updated {
            // Total weight underflow is by definition critical degeneracy:
            // keep the propagated particles and the previous weights (uniform
            // at initialisation) and skip the observation.
            None => (
                DegeneracyReport::total_degeneracy(m),
                StepAction::OutlierSkipped,
            ),
            Some(w) => {
                let report = DegeneracyReport::evaluate(&w, &self.thresholds);
                let action = match report.health {
                    Health::Critical => StepAction::OutlierSkipped,
                    Health::Degenerate => {
                        self.ensemble.weights = w;
                        StepAction::ResampledAndMoved
                    }
                    Health::Healthy => {
                        self.ensemble.weights = w;
                        StepAction::Kept
                    }
                };
                (report, action)
            }
        };

        // Filtered summaries must come from the pre-resampling weights.
        let filtered_mean = self.filtered_observation_mean(model, exogenous);

        if action == StepAction::ResampledAndMoved {
            self.resample_and_move(model, step_seed)?;
        }
        if action == StepAction::OutlierSkipped {
            self.outlier_log.push(n);
        }
        self.time_index = n;
        self.step_log.push(StepRecord {
            time_index: n,
            action: Some(action),
            report,
            filtered_mean,
        });
        Ok(action)
    }

    fn resample_and_move<M: StateSpaceModel>(&mut self, model: &M, step_seed: u64) -> Result<()> {
        let mut rng = phase_rng(derive_seed(step_seed, phase::RESAMPLE));
        let (resampled, _) = residual_resample(&self.ensemble, &mut rng);
        self.ensemble = resampled;

        match weighted_covariance(&self.ensemble) {
            Ok(wt) => {
                let h = silverman_bandwidth(self.ensemble.len(), self.ensemble.dim);
                let spec = KernelSpec::new(h, model.coordinate_bounds())?;
                let base = phase_rng(derive_seed(step_seed, phase::REGULARIZE));
                regularize_move(&mut self.ensemble, &spec, &wt, &base);
                exec::for_each_particle(&mut self.ensemble.particles, self.ensemble.dim, |_, p| {
                    model.constrain(p)
                });
            }
            // All particles identical: the kernel move would be a no-op.
            Err(Error::DegenerateCovariance) => {}
            Err(e) => return Err(e),
        }
        Ok(())
    }
}
