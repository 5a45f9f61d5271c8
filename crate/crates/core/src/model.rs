//! Nonlinear electricity-load state-space model: a daytype-scaled seasonal
//! level plus temperature-driven heating and cooling parts, with truncated
//! Gaussian random-walk dynamics on the level and the heating gradient and a
//! second random-walk layer on their innovation standard deviations. The
//! static parameter block is carried inside the state (extended state), so
//! parameters are filtered jointly with the dynamics.

use crate::error::{Error, Result};
use crate::filter::StateSpaceModel;
use crate::initmcmc::VaguePrior;
use crate::truncnorm::{self, Interval};
use rand::Rng;
use rand_distr::StandardNormal;

/// Number of daytype classes in the calendar.
pub const N_DAYTYPE: usize = 9;
/// Time-varying components: s, g_heat, σ_s,n, σ_g,n.
pub const DYNAMIC_DIM: usize = 4;
/// Static block: σ_s, σ_g, g_cool, u_heat, σ, κ_0..κ_8.
pub const STATIC_DIM: usize = 5 + N_DAYTYPE;
/// Extended-state dimension.
pub const STATE_DIM: usize = DYNAMIC_DIM + STATIC_DIM;

/// Coordinate layout of the packed extended state.
pub mod coord {
    /// Seasonal level `s_n` (MW), > 0.
    pub const S: usize = 0;
    /// Heating gradient `g_heat,n` (MW/°C), < 0.
    pub const G_HEAT: usize = 1;
    /// Innovation sd of the level walk, > 0.
    pub const SIGMA_S_N: usize = 2;
    /// Innovation sd of the gradient walk, > 0.
    pub const SIGMA_G_N: usize = 3;
    /// Walk sd of `σ_s,n` (static), > 0.
    pub const SIGMA_S: usize = 4;
    /// Walk sd of `σ_g,n` (static), > 0.
    pub const SIGMA_G: usize = 5;
    /// Cooling gradient (MW per cooling degree), ≥ 0.
    pub const G_COOL: usize = 6;
    /// Heating threshold (°C), unbounded.
    pub const U_HEAT: usize = 7;
    /// Observation noise sd (MW), > 0.
    pub const SIGMA_OBS: usize = 8;
    /// First of the `N_DAYTYPE` seasonal coefficients, each ≥ 0, mean 1.
    pub const KAPPA: usize = 9;
}

/// Static parameter block θ, constant over time in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadParams {
    pub sigma_s: f64,
    pub sigma_g: f64,
    pub g_cool: f64,
    pub u_heat: f64,
    pub kappa: [f64; N_DAYTYPE],
    pub sigma: f64,
}

impl LoadParams {
    pub fn new(
        sigma_s: f64,
        sigma_g: f64,
        g_cool: f64,
        u_heat: f64,
        kappa: [f64; N_DAYTYPE],
        sigma: f64,
    ) -> Result<Self> {
        let p = Self {
            sigma_s,
            sigma_g,
            g_cool,
            u_heat,
            kappa,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0 && self.sigma_g > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(
                "walk and observation sds must be positive".into(),
            ));
        }
        if self.g_cool < 0.0 {
            return Err(Error::InvalidParameter(
                "cooling gradient must be nonnegative".into(),
            ));
        }
        let mean: f64 = self.kappa.iter().sum::<f64>() / N_DAYTYPE as f64;
        if self.kappa.iter().any(|&k| k < 0.0) || (mean - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(
                "kappa must be nonnegative with mean exactly one".into(),
            ));
        }
        Ok(())
    }
}

/// Time-varying components of the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadDynamicState {
    pub s: f64,
    pub g_heat: f64,
    pub sigma_s_n: f64,
    pub sigma_g_n: f64,
}

impl LoadDynamicState {
    pub fn validate(&self) -> Result<()> {
        if self.s > 0.0 && self.g_heat < 0.0 && self.sigma_s_n > 0.0 && self.sigma_g_n > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "dynamic state violates sign constraints: {self:?}"
            )))
        }
    }
}

/// Exogenous inputs for one instant-day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExogenousRecord {
    /// Calendar class in `[0, N_DAYTYPE)`.
    pub daytype: usize,
    /// Smoothed heating temperature (°C).
    pub t_heat: f64,
    /// Precomputed cooling degrees, ≥ 0.
    pub delta_cool: f64,
}

impl ExogenousRecord {
    pub fn new(daytype: usize, t_heat: f64, delta_cool: f64) -> Result<Self> {
        if daytype >= N_DAYTYPE {
            return Err(Error::InvalidParameter(format!(
                "daytype {daytype} out of range 0..{N_DAYTYPE}"
            )));
        }
        if !t_heat.is_finite() || !(delta_cool >= 0.0) {
            return Err(Error::InvalidParameter(
                "temperature must be finite and cooling degrees nonnegative".into(),
            ));
        }
        Ok(Self {
            daytype,
            t_heat,
            delta_cool,
        })
    }
}

/// One extended-state point: dynamics plus the static block.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStatePoint {
    pub dynamic: LoadDynamicState,
    pub params: LoadParams,
}

impl ExtendedStatePoint {
    pub fn pack(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        out[coord::S] = self.dynamic.s;
        out[coord::G_HEAT] = self.dynamic.g_heat;
        out[coord::SIGMA_S_N] = self.dynamic.sigma_s_n;
        out[coord::SIGMA_G_N] = self.dynamic.sigma_g_n;
        out[coord::SIGMA_S] = self.params.sigma_s;
        out[coord::SIGMA_G] = self.params.sigma_g;
        out[coord::G_COOL] = self.params.g_cool;
        out[coord::U_HEAT] = self.params.u_heat;
        out[coord::SIGMA_OBS] = self.params.sigma;
        out[coord::KAPPA..STATE_DIM].copy_from_slice(&self.params.kappa);
        out
    }

    pub fn unpack(state: &[f64]) -> Result<Self> {
        if state.len() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                got: state.len(),
            });
        }
        let mut kappa = [0.0; N_DAYTYPE];
        kappa.copy_from_slice(&state[coord::KAPPA..STATE_DIM]);
        Ok(Self {
            dynamic: LoadDynamicState {
                s: state[coord::S],
                g_heat: state[coord::G_HEAT],
                sigma_s_n: state[coord::SIGMA_S_N],
                sigma_g_n: state[coord::SIGMA_G_N],
            },
            params: LoadParams {
                sigma_s: state[coord::SIGMA_S],
                sigma_g: state[coord::SIGMA_G],
                g_cool: state[coord::G_COOL],
                u_heat: state[coord::U_HEAT],
                kappa,
                sigma: state[coord::SIGMA_OBS],
            },
        })
    }
}

/// Rescales raw nonnegative coefficients so their mean is exactly one.
pub fn enforce_kappa_constraint(kappa_raw: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = kappa_raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZero);
    }
    let scale = kappa_raw.len() as f64 / total;
    Ok(kappa_raw.iter().map(|k| k * scale).collect())
}

/// Observation mean: `s·κ_daytype + g_heat·(T − u)·1{T < u} + g_cool·Δ`.
/// The heating part is nonnegative because the gradient is negative and only
/// multiplies negative temperature deficits; the cooling part is nonnegative
/// by sign constraints.
pub fn load_observation_mean(
    s: f64,
    g_heat: f64,
    u_heat: f64,
    g_cool: f64,
    kappa: &[f64],
    ex: &ExogenousRecord,
) -> f64 {
    let seasonal = s * kappa[ex.daytype];
    let heating = if ex.t_heat < u_heat {
        g_heat * (ex.t_heat - u_heat)
    } else {
        0.0
    };
    seasonal + heating + g_cool * ex.delta_cool
}

pub(crate) fn gaussian_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let d = (y - mean) / sd;
    (-0.5 * d * d).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

pub(crate) fn gaussian_ln_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let d = (y - mean) / sd;
    -0.5 * d * d - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// The load model as a filterable state-space model over packed extended
/// states. Initial draws come from the vague prior; production runs start
/// from an MCMC-built ensemble instead.
#[derive(Debug, Clone)]
pub struct LoadModel {
    init_prior: VaguePrior,
}

impl LoadModel {
    pub fn new(init_prior: VaguePrior) -> Self {
        Self { init_prior }
    }

    pub fn standard() -> Self {
        Self::new(VaguePrior::default())
    }

    pub fn init_prior(&self) -> &VaguePrior {
        &self.init_prior
    }
}

impl StateSpaceModel for LoadModel {
    type Exogenous = ExogenousRecord;

    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.init_prior.sample_extended(rng).to_vec()
    }

    /// Truncated random-walk dynamics. The innovation sds move first (they
    /// parameterise time n), then the level and gradient walk with the new
    /// sds. Truncation keeps every sign constraint exact; the static block is
    /// copied unchanged.
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        state: &mut [f64],
        _ex: &ExogenousRecord,
        rng: &mut R,
    ) {
        let sig_s_prev = state[coord::SIGMA_S_N];
        state[coord::SIGMA_S_N] = sig_s_prev
            + truncnorm::sample(
                0.0,
                state[coord::SIGMA_S],
                Interval::above(-sig_s_prev),
                rng,
            );
        let sig_g_prev = state[coord::SIGMA_G_N];
        state[coord::SIGMA_G_N] = sig_g_prev
            + truncnorm::sample(
                0.0,
                state[coord::SIGMA_G],
                Interval::above(-sig_g_prev),
                rng,
            );
        let s_prev = state[coord::S];
        state[coord::S] = s_prev
            + truncnorm::sample(0.0, state[coord::SIGMA_S_N], Interval::above(-s_prev), rng);
        let g_prev = state[coord::G_HEAT];
        state[coord::G_HEAT] = g_prev
            + truncnorm::sample(0.0, state[coord::SIGMA_G_N], Interval::below(-g_prev), rng);
    }

    fn observation_mean(&self, state: &[f64], ex: &ExogenousRecord) -> f64 {
        load_observation_mean(
            state[coord::S],
            state[coord::G_HEAT],
            state[coord::U_HEAT],
            state[coord::G_COOL],
            &state[coord::KAPPA..STATE_DIM],
            ex,
        )
    }

    fn observation_likelihood(&self, state: &[f64], y: f64, ex: &ExogenousRecord) -> f64 {
        gaussian_pdf(y, self.observation_mean(state, ex), state[coord::SIGMA_OBS])
    }

    fn observation_sample<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        ex: &ExogenousRecord,
        rng: &mut R,
    ) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.observation_mean(state, ex) + state[coord::SIGMA_OBS] * z
    }

    fn coordinate_bounds(&self) -> Vec<Interval> {
        let mut bounds = vec![Interval::positive(); STATE_DIM];
        bounds[coord::G_HEAT] = Interval::negative();
        bounds[coord::U_HEAT] = Interval::UNBOUNDED;
        bounds
    }

    /// Jitter can break the identifiability constraint on κ; rescale its
    /// mean back to exactly one.
    fn constrain(&self, state: &mut [f64]) {
        let total: f64 = state[coord::KAPPA..STATE_DIM].iter().sum();
        if total > 0.0 {
            let scale = N_DAYTYPE as f64 / total;
            for k in &mut state[coord::KAPPA..STATE_DIM] {
                *k *= scale;
            }
        }
    }
}

/// Forward-simulates states and observations; the acceptance suite uses this
/// as ground truth. Index 0 observes the initial state; every later index
/// first applies the transition.
pub fn synthesize(
    params: &LoadParams,
    initial: &LoadDynamicState,
    exogenous: &[ExogenousRecord],
    seed: u64,
) -> (Vec<LoadDynamicState>, Vec<f64>) {
    let model = LoadModel::standard();
    let mut rng = crate::rng::phase_rng(seed);
    let mut state = ExtendedStatePoint {
        dynamic: *initial,
        params: params.clone(),
    }
    .pack();

    let mut states = Vec::with_capacity(exogenous.len());
    let mut observations = Vec::with_capacity(exogenous.len());
    for (k, ex) in exogenous.iter().enumerate() {
        if k > 0 {
            model.sample_transition(&mut state, ex, &mut rng);
        }
        states.push(LoadDynamicState {
            s: state[coord::S],
            g_heat: state[coord::G_HEAT],
            sigma_s_n: state[coord::SIGMA_S_N],
            sigma_g_n: state[coord::SIGMA_G_N],
        });
        observations.push(model.observation_sample(&state, ex, &mut rng));
    }
    (states, observations)
}
