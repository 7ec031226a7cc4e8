//! Executable forms of the energy identities and solution definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    run_trajectory, InitialData, NormSample, SolverConfig, SolverState, StopReason, TrajectoryRecord,
};
use crate::model::{cubic_field, precession, ModelParams, TruncationConfig};
use crate::noise::{build_noise_modes, ito_correction, NoiseFamily, NoiseModel};
use crate::scalar::{cross, dot, Scalar};
use crate::spectral::{
    apply_laplacian, sobolev_norm, spectral_gradient, to_physical, Grid, PhysField, Space,
    SpectralField,
};

/// Signed residuals at sampled times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualSeries<T> {
    pub times: Vec<T>,
    pub values: Vec<T>,
    pub normalization: &'static str,
}

impl<T: Scalar> ResidualSeries<T> {
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// `(Π(u×Δu), u) / (‖u‖_{H¹}‖u‖_{H²})`, zero for `u = 0`.
pub fn identity_cross<T: Scalar>(u: &SpectralField<T>) -> T {
    let scale = sobolev_norm(u, T::one(), false).unwrap() * sobolev_norm(u, T::of(2.0), false).unwrap();
    if scale == T::zero() {
        return T::zero();
    }
    precession(u).inner(u) / scale
}

/// Pointwise quadratic forms `‖u·∇u‖²` and `‖|u||∇u|‖²` by padded quadrature.
fn gradient_forms<T: Scalar>(u: &SpectralField<T>) -> (T, T) {
    let space = u.space();
    let up = to_physical(u);
    let grads = spectral_gradient(u);
    let n = up.node_count();
    let mut dot_sq = vec![T::zero(); n];
    let mut mag = vec![T::zero(); n];
    let sq = up.norm_sq();
    for g in &grads {
        for j in 0..n {
            let gj = g.at(j);
            let d = dot(up.at(j), gj);
            dot_sq[j] = dot_sq[j] + d * d;
            mag[j] = mag[j] + sq[j] * dot(gj, gj);
        }
    }
    (space.integrate(&dot_sq), space.integrate(&mag))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub residual: T,
}

/// `(∇(|u|²u), ∇u) = 2‖u·∇u‖² + ‖|u||∇u|‖²`.
///
/// The left side goes through the spectral route `Σ_k λ_k (Π|u|²u)_k u_k`
/// (exact for retained `u`), the right side through padded quadrature.
pub fn identity_cubic_gradient<T: Scalar>(u: &SpectralField<T>) -> IdentityCheck<T> {
    let cubic = cubic_field(u);
    let lhs = -apply_laplacian(u, 1).inner(&cubic);
    let (dot_sq, mag) = gradient_forms(u);
    let rhs = T::of(2.0) * dot_sq + mag;
    IdentityCheck {
        lhs,
        rhs,
        residual: (lhs - rhs) / T::one().max(lhs.abs()),
    }
}

/// `(Δ(|u|²u), u) = −2‖u·∇u‖² − ‖|u||∇u|‖²`.
pub fn identity_cubic_laplacian<T: Scalar>(u: &SpectralField<T>) -> IdentityCheck<T> {
    let lhs = apply_laplacian(&cubic_field(u), 1).inner(u);
    let (dot_sq, mag) = gradient_forms(u);
    let rhs = -(T::of(2.0) * dot_sq + mag);
    IdentityCheck {
        lhs,
        rhs,
        residual: (lhs - rhs) / T::one().max(lhs.abs()),
    }
}

fn check_spacing<T: Scalar>(states: &[SolverState<T>], dt: T) -> Result<()> {
    for w in states.windows(2) {
        let gap = w[1].t - w[0].t;
        if (gap - dt).abs() > T::of(1e-9) * dt.max(T::one()) || w[1].step != w[0].step + 1 {
            return Err(Error::InvalidArgument(format!(
                "states at t = {} and t = {} are not one step dt = {} apart",
                w[0].t, w[1].t, dt
            )));
        }
    }
    Ok(())
}

/// Per-step residual of the deterministic L² energy identity
///
/// `d/dt ½‖u‖² + β₁‖∇u‖² + β₂‖Δu‖² + β₃‖u‖⁴_{L⁴} − β₃‖u‖² + β₅θ(2‖u·∇u‖² + ‖|u||∇u|‖²) = 0`
///
/// with the derivative replaced by a forward difference and everything else
/// at the left endpoint. Absolute (unnormalized) values.
pub fn energy_balance_l2<T: Scalar>(
    states: &[SolverState<T>],
    params: &ModelParams<T>,
    trunc: &TruncationConfig<T>,
    dt: T,
) -> Result<ResidualSeries<T>> {
    if states.len() < 2 {
        return Err(Error::InsufficientData("need at least two states".into()));
    }
    check_spacing(states, dt)?;
    let half = T::of(0.5);
    let two = T::of(2.0);
    let mut times = Vec::with_capacity(states.len() - 1);
    let mut values = Vec::with_capacity(states.len() - 1);
    for w in states.windows(2) {
        let u = &w[0].u;
        let energy0 = half * u.inner(u);
        let energy1 = half * w[1].u.inner(&w[1].u);
        let grad_sq = u.grad_norm_sq();
        let lap = apply_laplacian(u, 1);
        let l4 = crate::spectral::lp_norm(u, 4.0)?;
        let (dot_sq, mag) = gradient_forms(u);
        let theta = trunc.factor(grad_sq.sqrt());
        let r = (energy1 - energy0) / dt
            + params.beta1 * grad_sq
            + params.beta2 * lap.inner(&lap)
            + params.beta3 * l4.powi(4)
            - params.beta3 * u.inner(u)
            + params.beta5 * theta * (two * dot_sq + mag);
        times.push(w[0].t);
        values.push(r);
    }
    Ok(ResidualSeries {
        times,
        values,
        normalization: "absolute",
    })
}

/// Which integral identity to test: `weak` pairs against `∇φ` (test functions
/// in H¹), `very_weak` moves every derivative onto `φ` (H²).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakForm {
    Weak,
    VeryWeak,
}

/// Test function `e_index` in vector component `component`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFunction {
    pub index: Vec<usize>,
    pub component: usize,
}

fn quad_grad_pair<T: Scalar>(space: &crate::spectral::SpaceRef<T>, a: &[PhysField<T>], b: &[PhysField<T>]) -> T {
    a.iter().zip(b).map(|(x, y)| space.integrate(&x.dot(y))).sum()
}

/// Discrete residual of the integral identity tested against `φ`, with
/// left-endpoint time sums and the Stratonovich integral rewritten as Itô
/// plus the ½-correction. Returns `sup_t |lhs − rhs| / (sup_t ‖u‖_{L²} ‖φ‖)`.
///
/// Needs snapshots at every step (`snapshot_every = 1`).
pub fn weak_form_residual<T: Scalar>(
    record: &TrajectoryRecord<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    trunc: &TruncationConfig<T>,
    test: &TestFunction,
    form: WeakForm,
) -> Result<T> {
    let snaps = &record.snapshots;
    if snaps.len() < 2 || snaps.len() as u64 != record.steps_taken + 1 {
        return Err(Error::InsufficientData(
            "weak-form residual needs a snapshot at every step".into(),
        ));
    }
    let dt = record.dt;
    check_spacing(snaps, dt)?;
    let space = snaps[0].u.space().clone();
    if test.component > 2 {
        return Err(Error::InvalidArgument("test component must be 0, 1 or 2".into()));
    }
    let mut unit = [T::zero(); 3];
    unit[test.component] = T::one();
    let phi = SpectralField::from_modes(&space, &[(test.index.clone(), unit)])?;
    let phi_phys = to_physical(&phi);
    let phi_grad = spectral_gradient(&phi);
    let phi_lap = to_physical(&apply_laplacian(&phi, 1));
    let phi_norm = phi.l2_norm();

    let j_count = noise.len();
    let mut drift_sum = T::zero();
    let mut noise_sum = T::zero();
    let start = snaps[0].u.inner(&phi);
    let mut worst = T::zero();
    let mut sup_u = snaps[0].u.l2_norm();

    for (m, w) in snaps.windows(2).enumerate() {
        let u = &w[0].u;
        let up = to_physical(u);
        let grads = spectral_gradient(u);
        let n = up.node_count();
        let sq = up.norm_sq();

        let exchange = -params.beta1 * quad_grad_pair(&space, &grads, &phi_grad);
        let biharmonic = match form {
            WeakForm::Weak => {
                let lap_grad = spectral_gradient(&apply_laplacian(u, 1));
                params.beta2 * quad_grad_pair(&space, &lap_grad, &phi_grad)
            }
            WeakForm::VeryWeak => {
                let lap = to_physical(&apply_laplacian(u, 1));
                -params.beta2 * lap.inner(&phi_lap)
            }
        };
        let penalty_field = PhysField::from_pointwise(&space, n, |j| {
            let v = up.at(j);
            let s = T::one() - sq[j];
            [s * v[0], s * v[1], s * v[2]]
        });
        let penalty = params.beta3 * penalty_field.inner(&phi_phys);
        let mut prec = T::zero();
        for (g, pg) in grads.iter().zip(&phi_grad) {
            let vals: Vec<T> = (0..n).map(|j| dot(cross(up.at(j), g.at(j)), pg.at(j))).collect();
            prec = prec + space.integrate(&vals);
        }
        let precession_term = params.beta4 * prec;
        let theta = trunc.factor(u.grad_norm_sq().sqrt());
        let nonlocal = match form {
            WeakForm::Weak => {
                let two = T::of(2.0);
                let mut acc = T::zero();
                for (g, pg) in grads.iter().zip(&phi_grad) {
                    let vals: Vec<T> = (0..n)
                        .map(|j| {
                            let v = up.at(j);
                            let gj = g.at(j);
                            let d = two * dot(v, gj);
                            let grad_cubic = [
                                d * v[0] + sq[j] * gj[0],
                                d * v[1] + sq[j] * gj[1],
                                d * v[2] + sq[j] * gj[2],
                            ];
                            dot(grad_cubic, pg.at(j))
                        })
                        .collect();
                    acc = acc + space.integrate(&vals);
                }
                -params.beta5 * theta * acc
            }
            WeakForm::VeryWeak => params.beta5 * theta * up.cubic().inner(&phi_lap),
        };
        let correction = ito_correction(u, noise)?.inner(&phi);
        drift_sum = drift_sum
            + dt * (exchange + biharmonic + penalty + precession_term + nonlocal + correction);

        if j_count > 0 {
            let inc = record.keys.increment(m as u64, j_count, dt)?;
            for (j, &dw) in inc.dw.iter().enumerate() {
                let g = crate::noise::diffusion_apply(u, noise, j)?;
                noise_sum = noise_sum + g.inner(&phi) * dw;
            }
        }

        let lhs = w[1].u.inner(&phi);
        let rhs = start + drift_sum + noise_sum;
        worst = worst.max((lhs - rhs).abs());
        sup_u = sup_u.max(w[1].u.l2_norm());
    }
    let scale = sup_u * phi_norm;
    if scale == T::zero() {
        return Ok(worst);
    }
    Ok(worst / scale)
}

/// Keyed random field with coefficients `z · (1 + λ_k)^(−decay)`, `z` standard
/// normal; `sample` selects an independent draw.
pub fn random_field<T: Scalar>(space: &crate::spectral::SpaceRef<T>, seed: u64, sample: u64, decay: T) -> SpectralField<T> {
    let lambdas = space.eigenvalues();
    let coeffs = [0usize, 1, 2].map(|c| {
        lambdas
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                T::of(crate::noise::standard_normal(seed, sample, c, k as u64)) * (T::one() + l).powf(-decay)
            })
            .collect()
    });
    SpectralField::from_coeffs(space, coeffs).expect("sized to the space")
}

/// First recorded time with `‖u‖_{H¹} > K` (no interpolation).
pub fn stopping_time<T: Scalar>(samples: &[NormSample<T>], k: T) -> Option<T> {
    samples.iter().find(|s| s.h1 > k).map(|s| s.t)
}

/// Runs the same problem on `n_coarse` and `n_fine` modes per axis with
/// identical noise keys and returns `sup_t ‖u_fine − embed(u_coarse)‖_{L²}`
/// over the snapshot times (every `record_every` steps).
pub fn refinement_gap<T: Scalar>(
    base: &Grid<T>,
    u0: &InitialData<T>,
    params: &ModelParams<T>,
    family: &NoiseFamily<T>,
    config: &SolverConfig<T>,
    n_coarse: usize,
    n_fine: usize,
) -> Result<T> {
    if n_coarse >= n_fine {
        return Err(Error::InvalidArgument(format!(
            "n_coarse = {n_coarse} must be < n_fine = {n_fine}"
        )));
    }
    let dim = base.dim();
    if family.required_modes().iter().any(|&m| m > n_coarse) {
        return Err(Error::NoiseMode(format!(
            "noise family needs modes {:?}, not representable with {n_coarse} modes",
            family.required_modes()
        )));
    }
    let coarse = Space::new(base.with_modes(&vec![n_coarse; dim])?);
    let fine = Space::new(base.with_modes(&vec![n_fine; dim])?);
    let mut config = config.clone();
    config.snapshot_every = Some(config.record_every);
    let run = |space: &crate::spectral::SpaceRef<T>| -> Result<TrajectoryRecord<T>> {
        let noise = build_noise_modes(family, space)?;
        run_trajectory(&u0.build(space)?, params, &noise, &config)
    };
    let rc = run(&coarse)?;
    let rf = run(&fine)?;
    for r in [&rc, &rf] {
        if r.stop_reason != StopReason::Completed {
            return Err(Error::Stopped {
                reason: format!("{:?}", r.stop_reason),
                t: r.stop_time.as_f64(),
            });
        }
    }
    let mut gap = T::zero();
    for (c, f) in rc.snapshots.iter().zip(&rf.snapshots) {
        let diff = f.u.sub(&c.u.embed(&fine)?).l2_norm();
        gap = gap.max(diff);
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::noise::{EigenmodeNoise, ModeCoefficient};
    use crate::spectral::SpaceRef;

    fn space1(n: usize) -> SpaceRef<f64> {
        Space::new(Grid::new(&[PI], &[n]).unwrap())
    }

    fn params(b: [f64; 5]) -> ModelParams<f64> {
        ModelParams::reduced(b[0], b[1], b[2], b[3], b[4]).unwrap()
    }

    fn sample(t: f64, h1: f64) -> NormSample<f64> {
        NormSample { t, l2: 0.0, l4: 0.0, h1, h2: 0.0, h3: 0.0, grad_l2: 0.0, theta_arg: 0.0 }
    }

    #[test]
    fn cross_identity_trivial_cases() {
        let space = space1(5);
        assert_eq!(identity_cross(&SpectralField::zeros(&space)), 0.0);
        assert_eq!(identity_cross(&SpectralField::constant(&space, [1.0, -2.0, 0.5])), 0.0);
    }

    #[test]
    fn cubic_gradient_on_cosine() {
        let space = space1(6);
        let u = SpectralField::from_modes(&space, &[(vec![1], [(PI / 2.0).sqrt(), 0.0, 0.0])]).unwrap();
        let check = identity_cubic_gradient(&u);
        assert!((check.rhs - 3.0 * PI / 8.0).abs() < 1e-10);
        assert!((check.lhs - 3.0 * PI / 8.0).abs() < 1e-10);
        let c = identity_cubic_gradient(&SpectralField::constant(&space, [0.4, 0.1, 0.0]));
        assert!(c.lhs.abs() < 1e-14 && c.rhs.abs() < 1e-14);
        let ibp = identity_cubic_laplacian(&u);
        assert!((ibp.lhs + 3.0 * PI / 8.0).abs() < 1e-10);
        assert!(ibp.residual.abs() < 1e-10);
    }

    #[test]
    fn stopping_time_convention() {
        let s: Vec<_> = [0.1, 0.2, 0.5, 0.9].iter().enumerate().map(|(i, &h)| sample(i as f64, h)).collect();
        assert_eq!(stopping_time(&s, 1.0), None);
        assert_eq!(stopping_time(&s, 0.05), Some(0.0));
        assert_eq!(stopping_time(&s, 0.3), Some(2.0));
    }

    fn decay_states(dt: f64) -> Vec<SolverState<f64>> {
        let space = space1(4);
        let noise = NoiseModel::empty(&space);
        let p = params([1.0, 0.5, 0.0, 0.0, 0.0]);
        let u0 = SpectralField::from_modes(&space, &[(vec![1], [1.0, 0.5, 0.0]), (vec![2], [0.0, 0.0, 0.3])]).unwrap();
        let mut c = SolverConfig::new(dt, 0.5);
        c.snapshot_every = Some(1);
        run_trajectory(&u0, &p, &noise, &c).unwrap().snapshots
    }

    #[test]
    fn energy_balance_linear_first_order() {
        let p = params([1.0, 0.5, 0.0, 0.0, 0.0]);
        let off = TruncationConfig::off();
        let r1 = energy_balance_l2(&decay_states(0.01), &p, &off, 0.01).unwrap().max_abs();
        let r2 = energy_balance_l2(&decay_states(0.005), &p, &off, 0.005).unwrap().max_abs();
        let ratio = r1 / r2;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn energy_balance_zero_and_spacing() {
        let space = space1(4);
        let z = SpectralField::zeros(&space);
        let states: Vec<_> = (0..4).map(|m| SolverState { t: m as f64 * 0.1, u: z.clone(), step: m }).collect();
        let p = params([1.0, 1.0, 1.0, 1.0, 1.0]);
        let r = energy_balance_l2(&states, &p, &TruncationConfig::off(), 0.1).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));
        assert!(energy_balance_l2(&states, &p, &TruncationConfig::off(), 0.2).is_err());
    }

    #[test]
    fn weak_residual_zero_trajectory() {
        let space = space1(4);
        let noise = NoiseModel::empty(&space);
        let p = params([1.0, 1.0, 1.0, 1.0, 1.0]);
        let mut c = SolverConfig::new(0.1, 1.0);
        c.snapshot_every = Some(1);
        let rec = run_trajectory(&SpectralField::zeros(&space), &p, &noise, &c).unwrap();
        let test = TestFunction { index: vec![1], component: 0 };
        let off = TruncationConfig::off();
        assert_eq!(weak_form_residual(&rec, &p, &noise, &off, &test, WeakForm::Weak).unwrap(), 0.0);
        let mut sparse = c.clone();
        sparse.snapshot_every = Some(2);
        let rec = run_trajectory(&SpectralField::zeros(&space), &p, &noise, &sparse).unwrap();
        assert!(weak_form_residual(&rec, &p, &noise, &off, &test, WeakForm::Weak).is_err());
    }

    #[test]
    fn weak_forms_agree_and_constant_mode_exact() {
        let space = space1(8);
        let family = NoiseFamily::Eigenmodes {
            modes: vec![EigenmodeNoise { index: vec![1], sigma: 0.2, direction: [0.0, 0.0, 1.0] }],
        };
        let noise = build_noise_modes(&family, &space).unwrap();
        let p = params([0.5, 0.2, 1.0, 0.3, 0.2]);
        let u0 = SpectralField::from_modes(&space, &[(vec![0], [0.3, 0.0, 0.0]), (vec![2], [0.1, 0.2, 0.0])]).unwrap();
        let mut c = SolverConfig::new(0.01, 0.3);
        c.snapshot_every = Some(1);
        c.seed = 3;
        let rec = run_trajectory(&u0, &p, &noise, &c).unwrap();
        let off = TruncationConfig::off();
        for k in 1..4 {
            let t = TestFunction { index: vec![k], component: k % 3 };
            let a = weak_form_residual(&rec, &p, &noise, &off, &t, WeakForm::Weak).unwrap();
            let b = weak_form_residual(&rec, &p, &noise, &off, &t, WeakForm::VeryWeak).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let t0 = TestFunction { index: vec![0], component: 0 };
        assert!(weak_form_residual(&rec, &p, &noise, &off, &t0, WeakForm::Weak).unwrap() < 1e-12);
    }

    #[test]
    fn refinement_gap_cases() {
        let base = Grid::new(&[PI], &[8]).unwrap();
        let p = params([1.0, 0.5, 0.0, 0.0, 0.0]);
        let u0 = InitialData::Modes(vec![
            ModeCoefficient { index: vec![1], value: [1.0, 0.0, 0.0] },
            ModeCoefficient { index: vec![3], value: [0.0, 0.5, 0.0] },
        ]);
        let mut c = SolverConfig::new(0.01, 0.5);
        c.record_every = 10;
        let gap = refinement_gap(&base, &u0, &p, &NoiseFamily::none(), &c, 8, 16).unwrap();
        assert!(gap <= 1e-10);
        let zero = InitialData::Constant([0.0; 3]);
        let full = params([1.0, 0.5, 1.0, 1.0, 1.0]);
        assert_eq!(refinement_gap(&base, &zero, &full, &NoiseFamily::none(), &c, 8, 16).unwrap(), 0.0);
        let fam = NoiseFamily::Eigenmodes {
            modes: vec![EigenmodeNoise { index: vec![9], sigma: 0.1, direction: [1.0, 0.0, 0.0] }],
        };
        assert!(matches!(refinement_gap(&base, &zero, &full, &fam, &c, 8, 16), Err(Error::NoiseMode(_))));
        assert!(refinement_gap(&base, &zero, &full, &NoiseFamily::none(), &c, 16, 8).is_err());
    }

    #[test]
    fn blowup_recorded_as_data() {
        let space = space1(4);
        let noise = NoiseModel::empty(&space);
        let p = params([-2.0, 0.01, 0.0, 0.0, 0.0]);
        let u0 = SpectralField::from_modes(&space, &[(vec![1], [0.1, 0.0, 0.0])]).unwrap();
        let mut c = SolverConfig::new(0.01, 5.0);
        c.blowup_k = 1.0;
        let rec = run_trajectory(&u0, &p, &noise, &c).unwrap();
        assert_eq!(rec.stop_reason, StopReason::BlowupK);
        assert_eq!(stopping_time(&rec.samples, 1.0), Some(rec.stop_time));
    }
}
