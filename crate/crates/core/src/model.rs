//! Galerkin drift terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::scalar::Scalar;
use crate::spectral::{apply_laplacian, to_physical, to_spectral, PhysField, SpectralField};

/// Coefficients β₁..β₅ of the drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub beta3: T,
    pub beta4: T,
    pub beta5: T,
}

impl<T: Scalar> ModelParams<T> {
    /// β₁ any real, β₂..β₅ strictly positive.
    pub fn new(beta1: T, beta2: T, beta3: T, beta4: T, beta5: T) -> Result<Self> {
        let p = Self {
            beta1,
            beta2,
            beta3,
            beta4,
            beta5,
        };
        p.validate()?;
        Ok(p)
    }

    /// Reduced model for oracle studies: β₂..β₅ may vanish but not be negative.
    pub fn reduced(beta1: T, beta2: T, beta3: T, beta4: T, beta5: T) -> Result<Self> {
        let p = Self {
            beta1,
            beta2,
            beta3,
            beta4,
            beta5,
        };
        p.check(false)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(true)
    }

    fn check(&self, strict: bool) -> Result<()> {
        if !self.beta1.is_finite() {
            return Err(Error::InvalidParameter {
                name: "beta1",
                reason: "must be finite".into(),
            });
        }
        let named = [
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("beta4", self.beta4),
            ("beta5", self.beta5),
        ];
        for (name, value) in named {
            let ok = value.is_finite()
                && if strict {
                    value > T::zero()
                } else {
                    value >= T::zero()
                };
            if !ok {
                let reason = if strict {
                    format!("{value} violates positivity: beta2..beta5 are positive constants")
                } else {
                    format!("{value} must be >= 0")
                };
                return Err(Error::InvalidParameter { name, reason });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    Off,
    On,
}

/// Cutoff of the nonlocal cubic term by `θ_R(‖∇u‖_{L²})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig<T> {
    pub mode: TruncationMode,
    pub radius: T,
}

impl<T: Scalar> TruncationConfig<T> {
    pub fn off() -> Self {
        Self {
            mode: TruncationMode::Off,
            radius: T::infinity(),
        }
    }

    pub fn on(radius: T) -> Result<Self> {
        if !(radius > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "truncation.radius",
                reason: format!("{radius} must be > 0"),
            });
        }
        Ok(Self {
            mode: TruncationMode::On,
            radius,
        })
    }

    /// Scale applied to the nonlocal cubic term at gradient norm `grad_norm`.
    pub fn factor(&self, grad_norm: T) -> T {
        match self.mode {
            TruncationMode::Off => T::one(),
            TruncationMode::On => smooth_cutoff(grad_norm, self.radius),
        }
    }
}

fn bump<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        (-t.recip()).exp()
    } else {
        T::zero()
    }
}

fn smooth_cutoff<T: Scalar>(x: T, r: T) -> T {
    let s = x.abs() / r;
    let up = bump(T::of(2.0) - s);
    let down = bump(s - T::one());
    up / (up + down)
}

/// C^∞ nonincreasing cutoff: exactly 1 on `[0, R]`, exactly 0 on `[2R, ∞)`.
pub fn theta_r<T: Scalar>(x: T, radius: T) -> Result<T> {
    if !(radius > T::zero()) {
        return Err(Error::InvalidArgument(format!("θ_R radius {radius} must be > 0")));
    }
    Ok(smooth_cutoff(x, radius))
}

/// `Π(|u|²u)`.
pub fn cubic_field<T: Scalar>(u: &SpectralField<T>) -> SpectralField<T> {
    to_spectral(&to_physical(u).cubic())
}

/// `Π(u × Δu)`.
pub fn precession<T: Scalar>(u: &SpectralField<T>) -> SpectralField<T> {
    let lap = to_physical(&apply_laplacian(u, 1));
    to_spectral(&to_physical(u).cross(&lap))
}

/// `θ_R(‖∇u‖) Π Δ(|u|²u)` (θ ≡ 1 when truncation is off).
pub fn nonlocal_cubic<T: Scalar>(
    u: &SpectralField<T>,
    trunc: &TruncationConfig<T>,
) -> SpectralField<T> {
    let theta = trunc.factor(u.grad_norm_sq().sqrt());
    scaled_laplacian(&cubic_field(u), theta)
}

fn scaled_laplacian<T: Scalar>(cubic: &SpectralField<T>, theta: T) -> SpectralField<T> {
    cubic.map_modes(|l, c| theta * (-l * c))
}

/// Individually retrievable pieces of the Itô drift.
#[derive(Clone, Debug)]
pub struct DriftTerms<T> {
    /// `β₁Δu`
    pub exchange: SpectralField<T>,
    /// `−β₂Δ²u`
    pub biharmonic: SpectralField<T>,
    /// `β₃(Πu − Π(|u|²u))`
    pub penalty: SpectralField<T>,
    /// `−β₄Π(u×Δu)`
    pub precession: SpectralField<T>,
    /// `β₅θ_R Π Δ(|u|²u)`
    pub nonlocal: SpectralField<T>,
    /// `−½ Σ_j Π(G_j(u) × h_j)`
    pub correction: SpectralField<T>,
    /// Value of θ_R used for the nonlocal term.
    pub theta: T,
    /// `‖∇u‖_{L²}`, the argument of θ_R.
    pub grad_norm: T,
}

impl<T: Scalar> DriftTerms<T> {
    /// Linear part treated implicitly by the IMEX scheme.
    pub fn linear(&self) -> SpectralField<T> {
        let mut out = self.exchange.clone();
        out.add_scaled(T::one(), &self.biharmonic);
        out
    }

    /// Explicit part of the Itô drift (everything except the linear part).
    pub fn explicit_ito(&self) -> SpectralField<T> {
        let mut out = self.explicit_stratonovich();
        out.add_scaled(T::one(), &self.correction);
        out
    }

    fn explicit_stratonovich(&self) -> SpectralField<T> {
        let mut out = self.penalty.clone();
        out.add_scaled(T::one(), &self.precession);
        out.add_scaled(T::one(), &self.nonlocal);
        out
    }

    /// Stratonovich drift: no Itô correction.
    pub fn stratonovich(&self) -> SpectralField<T> {
        let mut out = self.linear();
        out.add_scaled(T::one(), &self.explicit_stratonovich());
        out
    }

    /// Full Itô drift.
    pub fn total(&self) -> SpectralField<T> {
        let mut out = self.stratonovich();
        out.add_scaled(T::one(), &self.correction);
        out
    }
}

/// Drift terms and diffusion fields at one state, sharing the physical-space
/// evaluations of `u` and `Δu`.
pub(crate) struct Evaluation<T> {
    pub terms: DriftTerms<T>,
    pub diffusions: Vec<SpectralField<T>>,
}

pub(crate) fn evaluate<T: Scalar>(
    u: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    trunc: &TruncationConfig<T>,
    with_correction: bool,
) -> Evaluation<T> {
    let u_phys = to_physical(u);
    let lap = apply_laplacian(u, 1);
    let lap_phys: PhysField<T> = to_physical(&lap);

    let cubic = to_spectral(&u_phys.cubic());
    let prec = to_spectral(&u_phys.cross(&lap_phys));

    let grad_norm = u.grad_norm_sq().sqrt();
    let theta = trunc.factor(grad_norm);

    let exchange = lap.scaled(params.beta1);
    let biharmonic = apply_laplacian(&lap, 1).scaled(-params.beta2);
    let mut penalty = u.clone();
    penalty.add_scaled(-T::one(), &cubic);
    let penalty = penalty.scaled(params.beta3);
    let precession = prec.scaled(-params.beta4);
    let nonlocal = scaled_laplacian(&cubic, theta).scaled(params.beta5);

    let diffusions = noise.diffusions_at(&u_phys);
    let correction = if with_correction {
        noise.correction_from(&diffusions)
    } else {
        SpectralField::zeros(u.space())
    };

    Evaluation {
        terms: DriftTerms {
            exchange,
            biharmonic,
            penalty,
            precession,
            nonlocal,
            correction,
            theta,
            grad_norm,
        },
        diffusions,
    }
}

/// Itô-form drift `β₁Δu − β₂Δ²u + β₃Π((1−|u|²)u) − β₄Π(u×Δu) + β₅F⁵(u) − ½Σ_jΠ(G_j(u)×h_j)`.
pub fn ito_drift<T: Scalar>(
    u: &SpectralField<T>,
    params: &ModelParams<T>,
    noise: &NoiseModel<T>,
    trunc: &TruncationConfig<T>,
) -> Result<DriftTerms<T>> {
    noise.check_space(u)?;
    Ok(evaluate(u, params, noise, trunc, true).terms)
}
