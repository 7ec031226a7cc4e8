//! Fixed-step time integration of the Galerkin SDE.
//!
//! Two schemes share the same keyed Wiener increments:
//!
//! * `imex_em_ito`: Euler–Maruyama on the Itô form, with the diagonal linear
//!   symbol `β₁Δ − β₂Δ²` taken implicitly and everything else explicit;
//! * `heun_strat`: fully explicit stochastic Heun on the Stratonovich form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate, ModelParams, TruncationConfig};
use crate::noise::{NoiseKeys, NoiseModel, WienerIncrement};
use crate::scalar::Scalar;
use crate::spectral::{lp_norm, sobolev_norm, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEmIto,
    HeunStrat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    pub dt: T,
    pub t_end: T,
    pub scheme: Scheme,
    /// Stop once `‖u‖_{H¹}` exceeds this value.
    pub blowup_k: T,
    pub record_every: usize,
    pub seed: u64,
    /// Path index used to key the increments.
    pub path: u64,
    /// Brownian refinement: each step consumes this many fine increments.
    pub brownian_substeps: u32,
    pub truncation: TruncationConfig<T>,
    /// Store full coefficient snapshots every this many steps.
    pub snapshot_every: Option<usize>,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(dt: T, t_end: T) -> Self {
        Self {
            dt,
            t_end,
            scheme: Scheme::ImexEmIto,
            blowup_k: T::infinity(),
            record_every: 1,
            seed: 0,
            path: 0,
            brownian_substeps: 1,
            truncation: TruncationConfig::off(),
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return bad("solver.dt", format!("{} must be > 0", self.dt));
        }
        if !(self.t_end > T::zero() && self.t_end.is_finite()) {
            return bad("solver.t_end", format!("{} must be > 0", self.t_end));
        }
        if !(self.dt < self.t_end) {
            return bad("solver.dt", format!("dt = {} must be < t_end = {}", self.dt, self.t_end));
        }
        if !(self.blowup_k > T::zero()) {
            return bad("solver.blowup_k", format!("{} must be > 0", self.blowup_k));
        }
        if self.record_every == 0 {
            return bad("solver.record_every", "must be >= 1".into());
        }
        if self.brownian_substeps == 0 {
            return bad("solver.brownian_substeps", "must be >= 1".into());
        }
        if self.snapshot_every == Some(0) {
            return bad("solver.snapshot_every", "must be >= 1".into());
        }
        if self.truncation.mode == crate::model::TruncationMode::On
            && !(self.truncation.radius > T::zero())
        {
            return bad("truncation.radius", "must be > 0 when truncation is on".into());
        }
        Ok(())
    }

    /// Number of steps: `round(t_end / dt)`.
    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round().to_u64().unwrap_or(0).max(1)
    }

    pub fn keys(&self) -> NoiseKeys {
        NoiseKeys {
            seed: self.seed,
            path: self.path,
            substeps: self.brownian_substeps,
        }
    }

    /// Step time `m · dt`.
    pub fn time(&self, step: u64) -> T {
        T::of(step as f64) * self.dt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState<T: Scalar> {
    pub t: T,
    pub u: SpectralField<T>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    BlowupK,
    Nonfinite,
    Denominator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    L4,
    H1,
    H2,
    H3,
    GradL2,
}

/// Norms of the state at one sampled time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSample<T> {
    pub t: T,
    pub l2: T,
    pub l4: T,
    pub h1: T,
    pub h2: T,
    pub h3: T,
    pub grad_l2: T,
    /// Argument of θ_R, i.e. `‖∇u‖_{L²}`.
    pub theta_arg: T,
}

impl<T: Scalar> NormSample<T> {
    pub fn measure(t: T, u: &SpectralField<T>) -> Self {
        let grad = u.grad_norm_sq().sqrt();
        let norm = |s: f64| sobolev_norm(u, T::of(s), false).expect("non-negative order");
        Self {
            t,
            l2: u.l2_norm(),
            l4: lp_norm(u, 4.0).expect("supported exponent"),
            h1: norm(1.0),
            h2: norm(2.0),
            h3: norm(3.0),
            grad_l2: grad,
            theta_arg: grad,
        }
    }

    pub fn get(&self, kind: NormKind) -> T {
        match kind {
            NormKind::L2 => self.l2,
            NormKind::L4 => self.l4,
            NormKind::H1 => self.h1,
            NormKind::H2 => self.h2,
            NormKind::H3 => self.h3,
            NormKind::GradL2 => self.grad_l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord<T: Scalar> {
    pub samples: Vec<NormSample<T>>,
    pub stop_reason: StopReason,
    pub stop_time: T,
    pub steps_taken: u64,
    pub dt: T,
    pub keys: NoiseKeys,
    pub snapshots: Vec<SolverState<T>>,
    pub final_state: SolverState<T>,
}

impl<T: Scalar> TrajectoryRecord<T> {
    pub fn times(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, kind: NormKind) -> Vec<T> {
        self.samples.iter().map(|s| s.get(kind)).collect()
    }
}

/// Implicit per-mode divisor `1 + dt(β₁λ + β₂λ²)`.
pub fn linear_factor<T: Scalar>(lambda: T, dt: T, params: &ModelParams<T>) -> Result<T> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be > 0")));
    }
    let factor = T::one() + dt * (params.beta1 * lambda + params.beta2 * lambda * lambda);
    if !(factor > T::of(1e-8)) {
        return Err(Error::Denominator {
            lambda: lambda.as_f64(),
            factor: factor.as_f64(),
        });
    }
    Ok(factor)
}

struct Stepper<'a, T> {
    params: &'a ModelParams<T>,
    noise: &'a NoiseModel<T>,
    trunc: &'a TruncationConfig<T>,
    dt: T,
    factors: Vec<T>,
}

impl<'a, T: Scalar> Stepper<'a, T> {
    fn new(
        params: &'a ModelParams<T>,
        noise: &'a NoiseModel<T>,
        trunc: &'a TruncationConfig<T>,
        dt: T,
        implicit: bool,
    ) -> Result<Self> {
        let factors = if implicit {
            noise
                .space()
                .eigenvalues()
                .iter()
                .map(|&l| linear_factor(l, dt, params))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            params,
            noise,
            trunc,
            dt,
            factors,
        })
    }

    fn check_increments(&self, inc: &WienerIncrement<T>) -> Result<()> {
        if inc.dw.len() != self.noise.len() {
            return Err(Error::InvalidArgument(format!(
                "{} increments for {} noise modes",
                inc.dw.len(),
                self.noise.len()
            )));
        }
        Ok(())
    }

    fn imex(&self, state: &SolverState<T>, inc: &WienerIncrement<T>) -> Result<SolverState<T>> {
        self.check_increments(inc)?;
        let eval = evaluate(&state.u, self.params, self.noise, self.trunc, true);
        let mut rhs = state.u.clone();
        rhs.add_scaled(self.dt, &eval.terms.explicit_ito());
        for (g, &dw) in eval.diffusions.iter().zip(&inc.dw) {
            rhs.add_scaled(dw, g);
        }
        for comp in rhs.coeffs_mut().iter_mut() {
            for (c, &f) in comp.iter_mut().zip(&self.factors) {
                *c = *c / f;
            }
        }
        finish(state, rhs, self.dt)
    }

    fn heun(&self, state: &SolverState<T>, inc: &WienerIncrement<T>) -> Result<SolverState<T>> {
        self.check_increments(inc)?;
        let first = evaluate(&state.u, self.params, self.noise, self.trunc, false);
        let drift = first.terms.stratonovich();
        let mut predictor = state.u.clone();
        predictor.add_scaled(self.dt, &drift);
        for (g, &dw) in first.diffusions.iter().zip(&inc.dw) {
            predictor.add_scaled(dw, g);
        }
        let second = evaluate(&predictor, self.params, self.noise, self.trunc, false);
        let half = T::of(0.5);
        let mut next = state.u.clone();
        next.add_scaled(half * self.dt, &drift);
        next.add_scaled(half * self.dt, &second.terms.stratonovich());
        for ((g0, g1), &dw) in first.diffusions.iter().zip(&second.diffusions).zip(&inc.dw) {
            next.add_scaled(half * dw, g0);
            next.add_scaled(half * dw, g1);
        }
        finish(state, next, self.dt)
    }
}

fn finish<T: Scalar>(state: &SolverState<T>, u: SpectralField<T>, dt: T) -> Result<SolverState<T>> {
    let step = state.step + 1;
    let t = T::of(step as f64) * dt;
    if !u.is_finite() {
        return Err(Error::NonFinite {
            step,
            t: t.as_f64(),
        });
    }
    Ok(SolverState { t, u, step })
}

fn check_inputs<T: Scalar>(
    u: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
) -> Result<()> {
    ModelParams::reduced(params.beta1, params.beta2, params.beta3, params.beta4, params.beta5)?;
    noise.check_space(u)
}

/// One semi-implicit Euler–Maruyama step:
/// `c⁺ = [c + dt·N(u) + Σ_j G_j(u) ΔW_j] / (1 + dt(β₁λ + β₂λ²))`.
pub fn imex_em_step<T: Scalar>(
    state: &SolverState<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    trunc: &TruncationConfig<T>,
    increments: &WienerIncrement<T>,
    dt: T,
) -> Result<SolverState<T>> {
    check_inputs(&state.u, params, noise)?;
    Stepper::new(params, noise, trunc, dt, true)?.imex(state, increments)
}

/// One explicit stochastic Heun step on the Stratonovich form.
pub fn heun_strat_step<T: Scalar>(
    state: &SolverState<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    trunc: &TruncationConfig<T>,
    increments: &WienerIncrement<T>,
    dt: T,
) -> Result<SolverState<T>> {
    check_inputs(&state.u, params, noise)?;
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be > 0")));
    }
    Stepper::new(params, noise, trunc, dt, false)?.heun(state, increments)
}

pub fn run_trajectory<T: Scalar>(
    u0: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    config: &SolverConfig<T>,
) -> Result<TrajectoryRecord<T>> {
    run_trajectory_observed(u0, params, noise, config, &mut |_, _| {})
}

/// Like [`run_trajectory`], calling `observer` at every recorded sample.
pub fn run_trajectory_observed<T: Scalar>(
    u0: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    config: &SolverConfig<T>,
    observer: &mut dyn FnMut(&NormSample<T>, &SpectralField<T>),
) -> Result<TrajectoryRecord<T>> {
    config.validate()?;
    check_inputs(u0, params, noise)?;
    if !u0.is_finite() {
        return Err(Error::InvalidArgument("initial data is not finite".into()));
    }
    let implicit = config.scheme == Scheme::ImexEmIto;
    let stepper = Stepper::new(params, noise, &config.truncation, config.dt, implicit)?;
    let keys = config.keys();
    let n = config.steps();

    let mut state = SolverState {
        t: T::zero(),
        u: u0.clone(),
        step: 0,
    };
    let mut samples = Vec::new();
    let mut snapshots = Vec::new();

    let first = NormSample::measure(state.t, &state.u);
    observer(&first, &state.u);
    samples.push(first);
    if config.snapshot_every.is_some() {
        snapshots.push(state.clone());
    }
    let mut stop_reason = StopReason::Completed;
    let mut stop_time = state.t;

    if first.h1 > config.blowup_k {
        stop_reason = StopReason::BlowupK;
    } else {
        for m in 0..n {
            let inc = keys.increment(m, noise.len(), config.dt)?;
            let next = match config.scheme {
                Scheme::ImexEmIto => stepper.imex(&state, &inc),
                Scheme::HeunStrat => stepper.heun(&state, &inc),
            };
            state = match next {
                Ok(s) => s,
                Err(Error::NonFinite { .. }) => {
                    stop_reason = StopReason::Nonfinite;
                    stop_time = config.time(m + 1);
                    break;
                }
                Err(Error::Denominator { .. }) => {
                    stop_reason = StopReason::Denominator;
                    stop_time = config.time(m + 1);
                    break;
                }
                Err(e) => return Err(e),
            };
            stop_time = state.t;
            let h1 = (state.u.l2_norm().powi(2) + state.u.grad_norm_sq()).sqrt();
            let crossed = h1 > config.blowup_k;
            let last = m + 1 == n;
            let due = |every: usize| (m + 1) % every as u64 == 0;
            if due(config.record_every) || last || crossed {
                let sample = NormSample::measure(state.t, &state.u);
                observer(&sample, &state.u);
                samples.push(sample);
            }
            if let Some(every) = config.snapshot_every {
                if due(every) || last || crossed {
                    snapshots.push(state.clone());
                }
            }
            if crossed {
                stop_reason = StopReason::BlowupK;
                break;
            }
        }
    }
    Ok(TrajectoryRecord {
        samples,
        stop_reason,
        stop_time,
        steps_taken: state.step,
        dt: config.dt,
        keys,
        snapshots,
        final_state: state,
    })
}

/// Initial data, resolvable on any grid over the same box.
#[derive(Clone, Debug)]
pub enum InitialData<T> {
    Constant([T; 3]),
    /// `Σ value · e_index`; modes beyond the target grid are dropped.
    Modes(Vec<crate::noise::ModeCoefficient<T>>),
    /// A stored field, resampled onto the target grid.
    Field(SpectralField<T>),
}

impl<T: Scalar> InitialData<T> {
    /// `Π_n u₀` on `space`.
    pub fn build(&self, space: &crate::spectral::SpaceRef<T>) -> Result<SpectralField<T>> {
        match self {
            InitialData::Constant(v) => Ok(SpectralField::constant(space, *v)),
            InitialData::Modes(modes) => {
                let grid = space.grid();
                let mut f = SpectralField::zeros(space);
                for m in modes {
                    if m.index.len() != grid.dim() {
                        return Err(Error::InvalidArgument(format!(
                            "initial mode {:?} has the wrong dimension",
                            m.index
                        )));
                    }
                    if let Some(flat) = grid.flat_index(&m.index) {
                        for c in 0..3 {
                            let slot = &mut f.coeffs_mut()[c][flat];
                            *slot = *slot + m.value[c];
                        }
                    }
                }
                Ok(f)
            }
            InitialData::Field(field) => field.resample(space),
        }
    }
}
