//! Transport noise `Σ_j (−u×h_j + h_j − Δh_j) ∘ dW_j`.
//!
//! The family `{h_j}` is truncated to `J` configured fields. Wiener increments
//! come from a counter-based stream keyed by `(seed, path, j, step)` so that a
//! value never depends on evaluation order or on how paths are scheduled.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{
    apply_laplacian, sobolev_norm, to_physical, to_spectral, PhysField, SpaceRef, SpectralField,
};

/// One parametric noise field `σ · e_k · v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenmodeNoise<T> {
    pub index: Vec<usize>,
    pub sigma: T,
    pub direction: [T; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCoefficient<T> {
    pub index: Vec<usize>,
    pub value: [T; 3],
}

/// Descriptor of the noise coefficient family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily<T> {
    /// `h_j = σ_j e_{k(j)} v_j` with unit directions `v_j`.
    Eigenmodes { modes: Vec<EigenmodeNoise<T>> },
    /// Each `h_j` given by its spectral coefficients.
    Explicit { fields: Vec<Vec<ModeCoefficient<T>>> },
}

impl<T: Scalar> NoiseFamily<T> {
    pub fn none() -> Self {
        NoiseFamily::Eigenmodes { modes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        match self {
            NoiseFamily::Eigenmodes { modes } => modes.len(),
            NoiseFamily::Explicit { fields } => fields.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest mode index used along each axis, plus one.
    pub fn required_modes(&self) -> Vec<usize> {
        let indices: Vec<&Vec<usize>> = match self {
            NoiseFamily::Eigenmodes { modes } => modes.iter().map(|m| &m.index).collect(),
            NoiseFamily::Explicit { fields } => {
                fields.iter().flatten().map(|m| &m.index).collect()
            }
        };
        let dim = indices.iter().map(|i| i.len()).max().unwrap_or(0);
        (0..dim)
            .map(|a| {
                indices
                    .iter()
                    .map(|i| i.get(a).copied().unwrap_or(0) + 1)
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Immutable noise coefficients with precomputed Laplacians and `C_h`.
#[derive(Clone, Debug)]
pub struct NoiseModel<T> {
    space: SpaceRef<T>,
    h: Vec<SpectralField<T>>,
    lap_h: Vec<SpectralField<T>>,
    h_phys: Vec<PhysField<T>>,
    /// `h_j − Δh_j` on the padded grid.
    source_phys: Vec<PhysField<T>>,
    c_h: T,
    condition_bound: Option<T>,
}

impl<T: Scalar> NoiseModel<T> {
    /// `J = 0`: deterministic dynamics.
    pub fn empty(space: &SpaceRef<T>) -> Self {
        Self::from_fields(space, Vec::new())
    }

    /// Builds the model from spectral noise fields (all on `space`).
    pub fn from_fields(space: &SpaceRef<T>, h: Vec<SpectralField<T>>) -> Self {
        let lap_h: Vec<_> = h.iter().map(|f| apply_laplacian(f, 1)).collect();
        let h_phys: Vec<_> = h.iter().map(to_physical).collect();
        let source_phys = h
            .iter()
            .zip(&lap_h)
            .map(|(f, l)| to_physical(&f.sub(l)))
            .collect();
        let c_h = h
            .iter()
            .map(|f| {
                let n = sobolev_norm(f, T::of(3.0), false).expect("order 3 is valid");
                n * n
            })
            .sum();
        Self {
            space: space.clone(),
            h,
            lap_h,
            h_phys,
            source_phys,
            c_h,
            condition_bound: None,
        }
    }

    /// Converts physical samples on the padded grid; also returns the L² mass
    /// lost by the projection onto retained modes, per field.
    pub fn from_physical(space: &SpaceRef<T>, samples: &[PhysField<T>]) -> Result<(Self, Vec<T>)> {
        let mut fields = Vec::with_capacity(samples.len());
        let mut losses = Vec::with_capacity(samples.len());
        for s in samples {
            let f = crate::spectral::to_spectral_on(s, space)?;
            let total = s.inner(s);
            let kept = f.inner(&f);
            losses.push((total - kept).max(T::zero()));
            fields.push(f);
        }
        Ok((Self::from_fields(space, fields), losses))
    }

    /// Warn in [`check_noise_condition`] when `C_h` exceeds `bound`.
    pub fn with_condition_bound(mut self, bound: Option<T>) -> Self {
        self.condition_bound = bound;
        self
    }

    pub fn space(&self) -> &SpaceRef<T> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn h(&self, j: usize) -> &SpectralField<T> {
        &self.h[j]
    }

    pub fn lap_h(&self, j: usize) -> &SpectralField<T> {
        &self.lap_h[j]
    }

    pub fn c_h(&self) -> T {
        self.c_h
    }

    pub(crate) fn check_space(&self, u: &SpectralField<T>) -> Result<()> {
        if crate::spectral::Space::same_grid(&self.space, u.space()) {
            Ok(())
        } else {
            Err(Error::GridMismatch(
                "noise model and field live on different grids".into(),
            ))
        }
    }

    /// `G_j(u) = Π(−u×h_j + h_j − Δh_j)` for every `j`.
    pub(crate) fn diffusions_at(&self, u_phys: &PhysField<T>) -> Vec<SpectralField<T>> {
        (0..self.len()).map(|j| self.diffusion_at(u_phys, j)).collect()
    }

    fn diffusion_at(&self, u_phys: &PhysField<T>, j: usize) -> SpectralField<T> {
        let h = &self.h_phys[j];
        let src = &self.source_phys[j];
        let g = PhysField::from_pointwise(&self.space, u_phys.node_count(), |n| {
            let c = crate::scalar::cross(u_phys.at(n), h.at(n));
            let s = src.at(n);
            [s[0] - c[0], s[1] - c[1], s[2] - c[2]]
        });
        to_spectral(&g)
    }

    /// `−½ Σ_j Π(G_j × h_j)` from already computed `G_j`.
    pub(crate) fn correction_from(&self, diffusions: &[SpectralField<T>]) -> SpectralField<T> {
        let n = self.space.node_count();
        let mut acc = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for (g, h) in diffusions.iter().zip(&self.h_phys) {
            let g_phys = to_physical(g);
            for node in 0..n {
                let c = crate::scalar::cross(g_phys.at(node), h.at(node));
                for k in 0..3 {
                    acc[k][node] = acc[k][node] + c[k];
                }
            }
        }
        let sum = PhysField::new(&self.space, acc).expect("node count matches");
        to_spectral(&sum).scaled(-T::of(0.5))
    }
}

/// Builds `{h_j}` on `space` from a descriptor.
pub fn build_noise_modes<T: Scalar>(
    family: &NoiseFamily<T>,
    space: &SpaceRef<T>,
) -> Result<NoiseModel<T>> {
    let grid = space.grid();
    let locate = |index: &[usize]| {
        grid.flat_index(index).ok_or_else(|| {
            Error::NoiseMode(format!(
                "index {index:?} outside grid modes {:?}",
                grid.modes()
            ))
        })
    };
    let mut fields = Vec::with_capacity(family.len());
    match family {
        NoiseFamily::Eigenmodes { modes } => {
            for m in modes {
                let flat = locate(&m.index)?;
                let norm = crate::scalar::dot(m.direction, m.direction).sqrt();
                if !((norm - T::one()).abs() <= T::of(1e-9)) {
                    return Err(Error::NoiseMode(format!(
                        "direction {:?} is not a unit vector",
                        m.direction
                    )));
                }
                if !m.sigma.is_finite() {
                    return Err(Error::NoiseMode("sigma must be finite".into()));
                }
                let mut f = SpectralField::zeros(space);
                for c in 0..3 {
                    f.coeffs_mut()[c][flat] = m.sigma * m.direction[c];
                }
                fields.push(f);
            }
        }
        NoiseFamily::Explicit { fields: specs } => {
            for spec in specs {
                let mut f = SpectralField::zeros(space);
                for mc in spec {
                    let flat = locate(&mc.index)?;
                    for c in 0..3 {
                        let slot = &mut f.coeffs_mut()[c][flat];
                        *slot = *slot + mc.value[c];
                    }
                }
                fields.push(f);
            }
        }
    }
    Ok(NoiseModel::from_fields(space, fields))
}

/// Result of checking `Σ_j ‖h_j‖²_{H³} ≤ C_h < ∞`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseCondition<T> {
    pub c_h: T,
    pub bound: Option<T>,
    pub warning: Option<String>,
}

pub fn check_noise_condition<T: Scalar>(noise: &NoiseModel<T>) -> NoiseCondition<T> {
    let c_h = noise.c_h;
    let warning = match noise.condition_bound {
        Some(b) if !(c_h <= b) => Some(format!(
            "noise condition sum {c_h} exceeds configured bound {b}"
        )),
        _ if !c_h.is_finite() => Some("noise condition sum is not finite".into()),
        _ => None,
    };
    NoiseCondition {
        c_h,
        bound: noise.condition_bound,
        warning,
    }
}

/// `G_j(u) = Π(−u×h_j + h_j − Δh_j)`.
pub fn diffusion_apply<T: Scalar>(
    u: &SpectralField<T>,
    noise: &NoiseModel<T>,
    j: usize,
) -> Result<SpectralField<T>> {
    if j >= noise.len() {
        return Err(Error::InvalidArgument(format!(
            "noise index {j} out of range (J = {})",
            noise.len()
        )));
    }
    noise.check_space(u)?;
    Ok(noise.diffusion_at(&to_physical(u), j))
}

/// Stratonovich-to-Itô drift correction `−½ Σ_j Π(G_j(u) × h_j)`.
pub fn ito_correction<T: Scalar>(
    u: &SpectralField<T>,
    noise: &NoiseModel<T>,
) -> Result<SpectralField<T>> {
    noise.check_space(u)?;
    let diffusions = noise.diffusions_at(&to_physical(u));
    Ok(noise.correction_from(&diffusions))
}

/// Per-mode Wiener increments for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement<T> {
    pub step: u64,
    pub dw: Vec<T>,
}

const WORDS_PER_DRAW: u128 = 4;
const MAX_MODES: usize = 1 << 16;

/// Standard normal keyed by `(seed, path, j, step)`.
///
/// ChaCha12 with the path as stream id and the `(step, j)` pair mapped to a
/// fixed 4-word block of the keystream; Box–Muller on the two 64-bit words.
pub fn standard_normal(seed: u64, path: u64, j: usize, step: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng.set_word_pos((((step as u128) << 16) | j as u128) * WORDS_PER_DRAW);
    let a = rng.next_u64();
    let b = rng.next_u64();
    let scale = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * scale;
    let u2 = (b >> 11) as f64 * scale;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `ΔW_j ~ N(0, dt)` for `j < J` at `step`.
pub fn sample_increments<T: Scalar>(
    seed: u64,
    path: u64,
    step: u64,
    j_count: usize,
    dt: T,
) -> Result<WienerIncrement<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be > 0")));
    }
    if j_count > MAX_MODES {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_MODES} noise modes supported"
        )));
    }
    let sd = dt.as_f64().sqrt();
    let dw = (0..j_count)
        .map(|j| T::of(sd * standard_normal(seed, path, j, step)))
        .collect();
    Ok(WienerIncrement { step, dw })
}

/// Keys for a trajectory's Brownian path.
///
/// With `substeps = s` the increment of solver step `m` is the sum of the
/// fine increments at steps `m·s .. m·s + s` of size `dt/s`, so runs with
/// `dt` and `dt/2` (and `2s`) see the same Brownian path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseKeys {
    pub seed: u64,
    pub path: u64,
    pub substeps: u32,
}

impl NoiseKeys {
    pub fn new(seed: u64, path: u64) -> Self {
        Self {
            seed,
            path,
            substeps: 1,
        }
    }

    pub fn increment<T: Scalar>(&self, step: u64, j_count: usize, dt: T) -> Result<WienerIncrement<T>> {
        if self.substeps <= 1 {
            return sample_increments(self.seed, self.path, step, j_count, dt);
        }
        let s = self.substeps as u64;
        let fine_dt = dt / T::of(s as f64);
        let mut dw = vec![T::zero(); j_count];
        for sub in 0..s {
            let fine = sample_increments(self.seed, self.path, step * s + sub, j_count, fine_dt)?;
            for (acc, v) in dw.iter_mut().zip(fine.dw) {
                *acc = *acc + v;
            }
        }
        Ok(WienerIncrement { step, dw })
    }
}
