//! Monte Carlo driver and the statistics built on top of it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    run_trajectory_observed, NormKind, NormSample, SolverConfig, StopReason, TrajectoryRecord,
};
use crate::model::ModelParams;
use crate::noise::NoiseModel;
use crate::scalar::Scalar;
use crate::spectral::SpectralField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpace {
    L2,
    H1,
}

impl NormSpace {
    fn of<T: Scalar>(self, s: &NormSample<T>) -> T {
        match self {
            NormSpace::L2 => s.l2,
            NormSpace::H1 => s.h1,
        }
    }
}

/// Bounded continuous test functionals of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable<T> {
    /// `tanh(scale · ⟨u_component, e_index⟩)`
    TanhMode {
        index: Vec<usize>,
        component: usize,
        scale: T,
    },
    /// `exp(−scale · ‖u‖²_{L²})`
    ExpNegL2 { scale: T },
    /// `min(‖u‖_space, cap)`
    ClipNorm { space: NormSpace, cap: T },
}

impl<T: Scalar> Observable<T> {
    pub fn name(&self) -> String {
        match self {
            Observable::TanhMode { index, component, .. } => {
                format!("tanh_mode{index:?}[{component}]")
            }
            Observable::ExpNegL2 { .. } => "exp_neg_l2".into(),
            Observable::ClipNorm { space, .. } => format!("clip_norm_{space:?}").to_lowercase(),
        }
    }

    /// Checks that the observable can be read on `field`'s grid.
    pub fn validate(&self, field: &SpectralField<T>) -> Result<()> {
        match self {
            Observable::TanhMode { index, component, scale } => {
                if *component > 2 {
                    return Err(Error::InvalidArgument(format!("component {component} > 2")));
                }
                if field.grid().flat_index(index).is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "observable mode {index:?} is not on the grid"
                    )));
                }
                if !scale.is_finite() {
                    return Err(Error::InvalidArgument("observable scale must be finite".into()));
                }
            }
            Observable::ExpNegL2 { scale } => {
                if !(*scale >= T::zero() && scale.is_finite()) {
                    return Err(Error::InvalidArgument("exp_neg_l2 scale must be >= 0".into()));
                }
            }
            Observable::ClipNorm { cap, .. } => {
                if !(*cap > T::zero() && cap.is_finite()) {
                    return Err(Error::InvalidArgument("clip_norm cap must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// `ψ(u)`; `sample` must hold the norms of `u`.
    pub fn eval(&self, u: &SpectralField<T>, sample: &NormSample<T>) -> T {
        match self {
            Observable::TanhMode { index, component, scale } => {
                let k = u.grid().flat_index(index).expect("validated observable");
                (*scale * u.component(*component)[k]).tanh()
            }
            Observable::ExpNegL2 { scale } => (-*scale * sample.l2 * sample.l2).exp(),
            Observable::ClipNorm { space, cap } => space.of(sample).min(*cap),
        }
    }
}

/// A Monte Carlo estimate and its standard error `std / √M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: T,
    pub std_error: T,
}

impl<T: Scalar> Estimate<T> {
    /// Mean and standard error with the unbiased sample variance.
    pub fn from_samples(xs: &[T]) -> Self {
        let (mean, var) = mean_var(xs);
        let n = T::of_usize(xs.len().max(1));
        Self {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

fn mean_var<T: Scalar>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::zero(), T::zero());
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], T::zero());
    }
    let mean = xs.iter().copied().sum::<T>() / T::of_usize(xs.len());
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, ss / T::of_usize(xs.len() - 1))
}

/// Cross-path statistics of one recorded norm at each sample time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesStats<T> {
    pub kind: NormKind,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    pub std_error: Vec<T>,
    /// Paths contributing at each time (paths that stopped early drop out).
    pub count: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StopEvent<T> {
    pub path: u64,
    pub reason: StopReason,
    pub time: T,
}

#[derive(Clone, Debug)]
pub struct EnsembleStats<T: Scalar> {
    pub paths: usize,
    pub seed: u64,
    pub dt: T,
    pub horizon: T,
    /// Reference sample times (those of the longest path).
    pub times: Vec<T>,
    pub records: Vec<TrajectoryRecord<T>>,
    pub observables: Vec<Observable<T>>,
    /// `observable_series[path][observable][sample]`
    pub observable_series: Vec<Vec<Vec<T>>>,
    pub norms: Vec<SeriesStats<T>>,
    pub blowups: usize,
    pub stops: Vec<StopEvent<T>>,
}

const KINDS: [NormKind; 6] = [
    NormKind::L2,
    NormKind::L4,
    NormKind::H1,
    NormKind::H2,
    NormKind::H3,
    NormKind::GradL2,
];

/// Runs `m` paths with path keys `config.path + 0..m` on a pool of
/// `threads` workers (`None`: rayon default). Results are gathered in path
/// order, so the output does not depend on the thread count.
pub fn run_ensemble<T: Scalar>(
    u0: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    config: &SolverConfig<T>,
    m: usize,
    observables: &[Observable<T>],
    threads: Option<usize>,
) -> Result<EnsembleStats<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one path".into()));
    }
    config.validate()?;
    for o in observables {
        o.validate(u0)?;
    }
    let run_path = |p: usize| -> Result<(TrajectoryRecord<T>, Vec<Vec<T>>)> {
        let mut cfg = config.clone();
        cfg.path = config.path + p as u64;
        let mut series = vec![Vec::new(); observables.len()];
        let record = run_trajectory_observed(u0, params, noise, &cfg, &mut |s, u| {
            for (o, out) in observables.iter().zip(series.iter_mut()) {
                out.push(o.eval(u, s));
            }
        })
        .map_err(|e| Error::Path {
            path: p,
            source: Box::new(e),
        })?;
        Ok((record, series))
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<_>> = pool.install(|| (0..m).into_par_iter().map(run_path).collect());

    let mut records = Vec::with_capacity(m);
    let mut observable_series = Vec::with_capacity(m);
    for r in results {
        let (rec, series) = r?;
        records.push(rec);
        observable_series.push(series);
    }
    Ok(aggregate(config, records, observables.to_vec(), observable_series))
}

fn aggregate<T: Scalar>(
    config: &SolverConfig<T>,
    records: Vec<TrajectoryRecord<T>>,
    observables: Vec<Observable<T>>,
    observable_series: Vec<Vec<Vec<T>>>,
) -> EnsembleStats<T> {
    let longest = records
        .iter()
        .max_by_key(|r| r.samples.len())
        .expect("at least one path");
    let times = longest.times();
    let norms = KINDS
        .iter()
        .map(|&kind| {
            let mut stats = SeriesStats {
                kind,
                mean: Vec::new(),
                variance: Vec::new(),
                std_error: Vec::new(),
                count: Vec::new(),
            };
            for (i, &t) in times.iter().enumerate() {
                let xs: Vec<T> = records
                    .iter()
                    .filter_map(|r| r.samples.get(i).filter(|s| s.t == t).map(|s| s.get(kind)))
                    .collect();
                let (mean, var) = mean_var(&xs);
                stats.mean.push(mean);
                stats.variance.push(var);
                stats.std_error.push((var / T::of_usize(xs.len().max(1))).sqrt());
                stats.count.push(xs.len());
            }
            stats
        })
        .collect();
    let stops = records
        .iter()
        .filter(|r| r.stop_reason != StopReason::Completed)
        .map(|r| StopEvent {
            path: r.keys.path,
            reason: r.stop_reason,
            time: r.stop_time,
        })
        .collect::<Vec<_>>();
    EnsembleStats {
        paths: records.len(),
        seed: config.seed,
        dt: config.dt,
        horizon: config.time(config.steps()),
        times,
        blowups: stops.iter().filter(|s| s.reason == StopReason::BlowupK).count(),
        stops,
        records,
        observables,
        observable_series,
        norms,
    }
}

impl<T: Scalar> EnsembleStats<T> {
    pub fn norm(&self, kind: NormKind) -> &SeriesStats<T> {
        self.norms.iter().find(|s| s.kind == kind).expect("all kinds aggregated")
    }
}

/// Left-endpoint sum `Σ f(t_i)(t_{i+1} − t_i)` over the samples.
fn left_sum<T: Scalar>(samples: &[NormSample<T>], f: impl Fn(&NormSample<T>) -> T) -> T {
    samples.windows(2).map(|w| f(&w[0]) * (w[1].t - w[0].t)).sum()
}

/// Moment estimates for one power `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport<T> {
    pub p: T,
    /// `E sup_t ‖u‖_{L²}^{2p}`
    pub sup_l2: Estimate<T>,
    /// `E sup_t ‖u‖_{H¹}^{2p}`
    pub sup_h1: Estimate<T>,
    /// `E (∫ ‖u‖²_{H²})^p`
    pub int_h2: Estimate<T>,
    /// `E (∫ ‖u‖⁴_{L⁴})^p`
    pub int_l4: Estimate<T>,
    /// `E (∫ ‖u‖²_{H³})^p`
    pub int_h3: Estimate<T>,
}

pub fn moment_estimates<T: Scalar>(stats: &EnsembleStats<T>, p: T) -> Result<MomentReport<T>> {
    if !(p >= T::one()) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("moment power {p} must be >= 1")));
    }
    if stats.records.iter().any(|r| r.samples.is_empty()) {
        return Err(Error::InsufficientData("a path has no recorded samples".into()));
    }
    let two_p = T::of(2.0) * p;
    let per_path = |f: &dyn Fn(&[NormSample<T>]) -> T| -> Estimate<T> {
        let xs: Vec<T> = stats.records.iter().map(|r| f(&r.samples)).collect();
        Estimate::from_samples(&xs)
    };
    let sup = |kind: NormKind| {
        per_path(&|s: &[NormSample<T>]| {
            s.iter().map(|x| x.get(kind)).fold(T::zero(), T::max).powf(two_p)
        })
    };
    let int = |f: fn(&NormSample<T>) -> T| per_path(&|s: &[NormSample<T>]| left_sum(s, f).powf(p));
    Ok(MomentReport {
        p,
        sup_l2: sup(NormKind::L2),
        sup_h1: sup(NormKind::H1),
        int_h2: int(|s| s.h2 * s.h2),
        int_l4: int(|s| s.l4.powi(4)),
        int_h3: int(|s| s.h3 * s.h3),
    })
}

/// Growth test for `∫₀ᵗ E‖u‖²_{H²} ds`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport<T> {
    pub times: Vec<T>,
    pub cumulative: Vec<T>,
    pub a: T,
    pub b: T,
    pub c: T,
    /// `|c|·T/b`; zero when `c = 0`.
    pub ratio: T,
}

pub const MIN_GROWTH_SAMPLES: usize = 20;

pub fn h2_time_average<T: Scalar>(stats: &EnsembleStats<T>) -> Result<GrowthReport<T>> {
    let times = &stats.times;
    if times.len() < MIN_GROWTH_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} sample times, need at least {MIN_GROWTH_SAMPLES}",
            times.len()
        )));
    }
    let mean_sq: Vec<T> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let xs: Vec<T> = stats
                .records
                .iter()
                .filter_map(|r| r.samples.get(i).filter(|s| s.t == t).map(|s| s.h2 * s.h2))
                .collect();
            mean_var(&xs).0
        })
        .collect();
    let mut cumulative = Vec::with_capacity(times.len());
    let mut acc = T::zero();
    cumulative.push(acc);
    for i in 1..times.len() {
        acc = acc + mean_sq[i - 1] * (times[i] - times[i - 1]);
        cumulative.push(acc);
    }
    let horizon = *times.last().unwrap();
    let lo = horizon / T::of(5.0);
    let (ts, ys): (Vec<T>, Vec<T>) = times
        .iter()
        .zip(&cumulative)
        .filter(|(t, _)| **t >= lo)
        .map(|(t, y)| (*t, *y))
        .unzip();
    if ts.len() < 3 {
        return Err(Error::InsufficientData("fewer than 3 samples in the fit window".into()));
    }
    let [a, b, c] = quadratic_fit(&ts, &ys, horizon);
    let ratio = if c == T::zero() {
        T::zero()
    } else {
        c.abs() * horizon / b
    };
    Ok(GrowthReport {
        times: times.clone(),
        cumulative,
        a,
        b,
        c,
        ratio,
    })
}

/// Least squares `y ≈ a + b t + c t²`, solved in the scaled variable `t / scale`.
fn quadratic_fit<T: Scalar>(ts: &[T], ys: &[T], scale: T) -> [T; 3] {
    let mut m = [[T::zero(); 4]; 3];
    for (&t, &y) in ts.iter().zip(ys) {
        let s = t / scale;
        let basis = [T::one(), s, s * s];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = m[r][c] + basis[r] * basis[c];
            }
            m[r][3] = m[r][3] + basis[r] * y;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        if m[col][col] == T::zero() {
            continue;
        }
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] = m[r][c] - f * m[col][c];
                }
            }
        }
    }
    let coef = |i: usize| {
        if m[i][i] == T::zero() {
            T::zero()
        } else {
            m[i][3] / m[i][i]
        }
    };
    [coef(0), coef(1) / scale, coef(2) / (scale * scale)]
}

/// Path-averaged fraction of `[0, T]` spent with `‖u‖_space > R`.
///
/// Time after an early stop counts as exceeding.
pub fn tightness_statistic<T: Scalar>(stats: &EnsembleStats<T>, radius: T, space: NormSpace) -> T {
    let horizon = stats.horizon;
    let fractions: Vec<T> = stats
        .records
        .iter()
        .map(|r| {
            let s = &r.samples;
            let over = |x: &NormSample<T>| if space.of(x) > radius { T::one() } else { T::zero() };
            if horizon <= T::zero() || s.is_empty() {
                return T::zero();
            }
            let mut time = left_sum(s, over);
            let last = s.last().unwrap();
            if r.stop_reason != StopReason::Completed {
                time = time + (horizon - last.t).max(T::zero());
            }
            if s.len() == 1 && r.stop_reason == StopReason::Completed {
                return over(last);
            }
            (time / horizon).min(T::one())
        })
        .collect();
    Estimate::from_samples(&fractions).value
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window<T> {
    pub start: T,
    pub end: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionEstimate<T> {
    pub t: T,
    pub estimate: Estimate<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowAverage<T> {
    pub window: Window<T>,
    pub estimate: Estimate<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantReport<T> {
    pub observable: String,
    pub transitions: Vec<TransitionEstimate<T>>,
    pub windows: Vec<WindowAverage<T>>,
}

/// Dyadic windows `[T/4, T/2]` and `[T/2, T]`.
pub fn default_windows<T: Scalar>(horizon: T) -> Vec<Window<T>> {
    let q = horizon / T::of(4.0);
    let h = horizon / T::of(2.0);
    vec![Window { start: q, end: h }, Window { start: h, end: horizon }]
}

/// Transition estimates `Ê ψ(u(t))` and windowed time averages
/// `(1/|W|) ∫_W ψ(u(s)) ds` of observable number `which`.
pub fn invariant_average<T: Scalar>(
    stats: &EnsembleStats<T>,
    which: usize,
    burn_in: T,
    windows: &[Window<T>],
    transition_times: &[T],
) -> Result<InvariantReport<T>> {
    let obs = stats
        .observables
        .get(which)
        .ok_or_else(|| Error::InvalidArgument(format!("no observable {which}")))?;
    let horizon = stats.horizon;
    let slack = stats.dt / T::of(2.0);
    if !(horizon + slack >= T::of(2.0) * burn_in) || burn_in < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be at least twice the burn-in {burn_in}"
        )));
    }
    let default;
    let windows = if windows.is_empty() {
        default = default_windows(horizon);
        &default[..]
    } else {
        windows
    };
    for w in windows {
        if w.end > horizon + slack || w.start + slack < burn_in || !(w.start < w.end) {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}] must lie in [burn_in, horizon] = [{burn_in}, {horizon}]",
                w.start, w.end
            )));
        }
    }
    if stats.stops.iter().any(|s| s.reason != StopReason::Completed) {
        return Err(Error::InsufficientData(
            "invariant averages need every path to reach the horizon".into(),
        ));
    }

    let mut transitions = Vec::new();
    for &t in transition_times {
        let i = stats
            .times
            .iter()
            .position(|&s| (s - t).abs() <= slack)
            .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a sample time")))?;
        let xs: Vec<T> = stats.observable_series.iter().map(|p| p[which][i]).collect();
        transitions.push(TransitionEstimate {
            t,
            estimate: Estimate::from_samples(&xs),
        });
    }

    let mut out = Vec::new();
    for w in windows {
        let xs: Vec<T> = stats
            .records
            .iter()
            .zip(&stats.observable_series)
            .map(|(r, series)| {
                let vals = &series[which];
                let mut acc = T::zero();
                for (i, pair) in r.samples.windows(2).enumerate() {
                    let (t0, t1) = (pair[0].t, pair[1].t);
                    let lo = t0.max(w.start);
                    let hi = t1.min(w.end);
                    if hi > lo {
                        acc = acc + vals[i] * (hi - lo);
                    }
                }
                acc / (w.end - w.start)
            })
            .collect();
        out.push(WindowAverage {
            window: w.clone(),
            estimate: Estimate::from_samples(&xs),
        });
    }
    Ok(InvariantReport {
        observable: obs.name(),
        transitions,
        windows: out,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::noise::{build_noise_modes, EigenmodeNoise, NoiseFamily};
    use crate::spectral::{Grid, Space, SpaceRef};

    fn space1() -> SpaceRef<f64> {
        Space::new(Grid::new(&[PI], &[6]).unwrap())
    }

    fn stochastic(space: &SpaceRef<f64>) -> NoiseModel<f64> {
        let fam = NoiseFamily::Eigenmodes {
            modes: vec![EigenmodeNoise { index: vec![1], sigma: 0.3, direction: [0.0, 0.0, 1.0] }],
        };
        build_noise_modes(&fam, space).unwrap()
    }

    fn params() -> ModelParams<f64> {
        ModelParams::new(0.5, 0.2, 1.0, 0.3, 0.2).unwrap()
    }

    fn catalog() -> Vec<Observable<f64>> {
        vec![
            Observable::TanhMode { index: vec![0], component: 0, scale: 2.0 },
            Observable::ExpNegL2 { scale: 1.0 },
            Observable::ClipNorm { space: NormSpace::H1, cap: 5.0 },
        ]
    }

    fn u0(space: &SpaceRef<f64>) -> SpectralField<f64> {
        SpectralField::from_modes(space, &[(vec![0], [0.3, 0.0, 0.0]), (vec![1], [0.0, 0.1, 0.0])]).unwrap()
    }

    fn config(t_end: f64) -> SolverConfig<f64> {
        let mut c = SolverConfig::new(0.01, t_end);
        c.seed = 11;
        c.record_every = 5;
        c
    }

    #[test]
    fn single_path_has_zero_variance() {
        let space = space1();
        let s = run_ensemble(&u0(&space), &params(), &stochastic(&space), &config(0.5), 1, &catalog(), Some(1)).unwrap();
        assert_eq!(s.paths, 1);
        let l2 = s.norm(NormKind::L2);
        assert!(l2.variance.iter().all(|v| *v == 0.0));
        assert_eq!(l2.mean, s.records[0].series(NormKind::L2));
    }

    #[test]
    fn noise_off_paths_identical() {
        let space = space1();
        let noise = NoiseModel::empty(&space);
        let s = run_ensemble(&u0(&space), &params(), &noise, &config(0.5), 8, &catalog(), Some(3)).unwrap();
        for n in &s.norms {
            assert!(n.variance.iter().all(|v| *v == 0.0));
        }
        let m = moment_estimates(&s, 1.0).unwrap();
        assert_eq!(m.sup_l2.std_error, 0.0);
        let sup = s.records[0].series(NormKind::L2).into_iter().fold(0.0, f64::max);
        assert!((m.sup_l2.value - sup * sup).abs() < 1e-14);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let space = space1();
        let noise = stochastic(&space);
        let a = run_ensemble(&u0(&space), &params(), &noise, &config(0.5), 6, &catalog(), Some(1)).unwrap();
        let b = run_ensemble(&u0(&space), &params(), &noise, &config(0.5), 6, &catalog(), Some(4)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.observable_series, b.observable_series);
        assert_eq!(a.norms, b.norms);
        assert!(a.norm(NormKind::L2).variance.iter().skip(1).any(|v| *v > 0.0));
    }

    #[test]
    fn zero_dynamics() {
        let space = space1();
        let z = SpectralField::zeros(&space);
        let noise = NoiseModel::empty(&space);
        let s = run_ensemble(&z, &params(), &noise, &config(1.0), 2, &catalog(), None).unwrap();
        let m = moment_estimates(&s, 2.0).unwrap();
        for e in [m.sup_l2, m.sup_h1, m.int_h2, m.int_l4, m.int_h3] {
            assert_eq!(e.value, 0.0);
        }
        let g = h2_time_average(&s).unwrap();
        assert!(g.cumulative.iter().all(|v| *v == 0.0));
        assert_eq!((g.a, g.b, g.c, g.ratio), (0.0, 0.0, 0.0, 0.0));
        let inv = invariant_average(&s, 1, 0.0, &[], &[0.5]).unwrap();
        assert!(inv.windows.iter().all(|w| (w.estimate.value - 1.0).abs() < 1e-15));
        assert_eq!(inv.transitions[0].estimate.value, 1.0);
        assert!(moment_estimates(&s, 0.5).is_err());
    }

    #[test]
    fn fixed_point_averages() {
        let space = space1();
        let unit = SpectralField::constant(&space, [0.0, 0.6, 0.8]);
        let noise = NoiseModel::empty(&space);
        let s = run_ensemble(&unit, &params(), &noise, &config(1.0), 2, &catalog(), None).unwrap();
        let sample = NormSample::measure(0.0, &unit);
        for (k, o) in catalog().iter().enumerate() {
            let psi = o.eval(&unit, &sample);
            let inv = invariant_average(&s, k, 0.1, &[], &[]).unwrap();
            for w in inv.windows {
                assert!((w.estimate.value - psi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jensen_and_tightness_properties() {
        let space = space1();
        let s = run_ensemble(&u0(&space), &params(), &stochastic(&space), &config(1.0), 16, &catalog(), None).unwrap();
        let m1 = moment_estimates(&s, 1.0).unwrap();
        let m2 = moment_estimates(&s, 2.0).unwrap();
        assert!(m1.int_h2.value.powi(2) <= m2.int_h2.value + 1e-15);
        assert!(m1.sup_l2.value.powi(2) <= m2.sup_l2.value + 1e-15);

        let max = s.records.iter().flat_map(|r| r.samples.iter().map(|x| x.h1)).fold(0.0, f64::max);
        assert_eq!(tightness_statistic(&s, max * 1.01, NormSpace::H1), 0.0);
        assert_eq!(tightness_statistic(&s, 0.0, NormSpace::L2), 1.0);
        let mut prev = 1.0;
        for r in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let v = tightness_statistic(&s, r, NormSpace::H1);
            assert!((0.0..=1.0).contains(&v) && v <= prev);
            prev = v;
        }
    }

    #[test]
    fn linear_decay_growth_flattens() {
        let space = space1();
        let p = ModelParams::reduced(1.0, 0.1, 0.0, 0.0, 0.0).unwrap();
        let u = SpectralField::from_modes(&space, &[(vec![1], [1.0, 0.0, 0.0])]).unwrap();
        let mut c = SolverConfig::new(0.01, 20.0);
        c.record_every = 10;
        let s = run_ensemble(&u, &p, &NoiseModel::empty(&space), &c, 1, &[], None).unwrap();
        let g = h2_time_average(&s).unwrap();
        assert!(g.b.abs() < 1e-3 * g.a && g.c.abs() < 1e-4 * g.a);
        let last = *g.cumulative.last().unwrap();
        assert!(last > 0.0);
    }

    #[test]
    fn growth_needs_samples_and_windows_checked() {
        let space = space1();
        let z = SpectralField::zeros(&space);
        let mut c = SolverConfig::new(0.1, 1.0);
        c.record_every = 1;
        let s = run_ensemble(&z, &params(), &NoiseModel::empty(&space), &c, 1, &catalog(), None).unwrap();
        assert!(matches!(h2_time_average(&s), Err(Error::InsufficientData(_))));
        let bad = [Window { start: 0.5, end: 2.0 }];
        assert!(invariant_average(&s, 0, 0.0, &bad, &[]).is_err());
        assert!(invariant_average(&s, 0, 0.8, &[], &[]).is_err());
        assert!(invariant_average(&s, 9, 0.0, &[], &[]).is_err());
    }

    #[test]
    fn quadratic_fit_recovers_polynomial() {
        let ts: Vec<f64> = (0..30).map(|i| 10.0 + i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 1.5 - 0.25 * t + 0.01 * t * t).collect();
        let [a, b, c] = quadratic_fit(&ts, &ys, 40.0);
        assert!((a - 1.5).abs() < 1e-9 && (b + 0.25).abs() < 1e-10 && (c - 0.01).abs() < 1e-12);
    }

    #[test]
    fn observables_bounded_and_validated() {
        let space = space1();
        let big = SpectralField::constant(&space, [40.0, -30.0, 0.0]);
        let s = NormSample::measure(0.0, &big);
        for o in catalog() {
            let v = o.eval(&big, &s);
            assert!(v.abs() <= 5.0);
        }
        let off = Observable::TanhMode { index: vec![9], component: 0, scale: 1.0 };
        assert!(off.validate(&big).is_err());
        assert!(run_ensemble(&big, &params(), &NoiseModel::empty(&space), &config(0.1), 0, &[], None).is_err());
    }
}
