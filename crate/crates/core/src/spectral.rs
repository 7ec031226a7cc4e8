//! Neumann cosine basis on rectangular boxes.
//!
//! A field is stored as three coefficient arrays (one per vector component)
//! over the retained multi-indices `k` with `k_i < N_i`, row-major with axis 0
//! slowest. The basis functions
//!
//! ```text
//! e_k(x) = prod_i c_{k_i} cos(pi k_i x_i / L_i),   c_0 = 1/sqrt(L_i), c_k = sqrt(2/L_i)
//! ```
//!
//! are L²-orthonormal eigenfunctions of the Neumann Laplacian with eigenvalue
//! `lambda_k = sum_i (pi k_i / L_i)^2`, so every retained-mode field satisfies
//! `du/dn = d(Δu)/dn = 0` on the box boundary.
//!
//! Physical evaluation uses the DCT-I nodes `x_j = j L / M`, `j = 0..=M`,
//! with `M = ceil(pad * N)` intervals per axis and trapezoid weights. The trapezoid rule integrates
//! `cos(pi m x / L)` exactly for `m < 2M`, which for `pad = 2` makes every
//! quartic product of retained modes (cubic nonlinearity tested against a
//! retained mode) exact.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rational oversampling factor for dealiased physical evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadFactor {
    pub num: u32,
    pub den: u32,
}

impl Default for PadFactor {
    fn default() -> Self {
        Self { num: 2, den: 1 }
    }
}

impl PadFactor {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num < den {
            return Err(Error::InvalidGrid(format!(
                "pad factor {num}/{den} must be a rational >= 1"
            )));
        }
        Ok(Self { num, den })
    }

    /// `ceil(pad * n)`.
    pub fn padded(&self, n: usize) -> usize {
        let (num, den) = (self.num as usize, self.den as usize);
        (num * n).div_ceil(den)
    }
}

/// Box geometry and retained mode counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    lengths: Vec<T>,
    modes: Vec<usize>,
    pad: PadFactor,
}

impl<T: Scalar> Grid<T> {
    pub fn new(lengths: &[T], modes: &[usize]) -> Result<Self> {
        Self::with_pad(lengths, modes, PadFactor::default())
    }

    pub fn with_pad(lengths: &[T], modes: &[usize], pad: PadFactor) -> Result<Self> {
        let dim = lengths.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if modes.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} lengths but {} mode counts",
                dim,
                modes.len()
            )));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > T::zero())) {
            return Err(Error::InvalidGrid("box lengths must be finite and > 0".into()));
        }
        if modes.contains(&0) {
            return Err(Error::InvalidGrid("mode counts must be >= 1".into()));
        }
        let pad = PadFactor::new(pad.num, pad.den)?;
        Ok(Self {
            lengths: lengths.to_vec(),
            modes: modes.to_vec(),
            pad,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn pad_factor(&self) -> PadFactor {
        self.pad
    }

    /// Number of padded intervals along `axis`; the axis carries one more node.
    pub fn padded_intervals(&self, axis: usize) -> usize {
        self.pad.padded(self.modes[axis])
    }

    pub fn mode_count(&self) -> usize {
        self.modes.iter().product()
    }

    pub fn node_shape(&self) -> Vec<usize> {
        (0..self.dim()).map(|a| self.padded_intervals(a) + 1).collect()
    }

    pub fn node_count(&self) -> usize {
        self.node_shape().iter().product()
    }

    pub fn volume(&self) -> T {
        self.lengths.iter().fold(T::one(), |acc, &l| acc * l)
    }

    /// Same box and pad factor, different mode counts.
    pub fn with_modes(&self, modes: &[usize]) -> Result<Self> {
        Self::with_pad(&self.lengths, modes, self.pad)
    }

    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for (&k, &n) in index.iter().zip(&self.modes) {
            if k >= n {
                return None;
            }
            flat = flat * n + k;
        }
        Some(flat)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            index[axis] = flat % self.modes[axis];
            flat /= self.modes[axis];
        }
        index
    }

    /// `sum_i (pi k_i / L_i)^2`.
    pub fn eigenvalue(&self, index: &[usize]) -> T {
        index
            .iter()
            .zip(&self.lengths)
            .map(|(&k, &l)| {
                let w = T::PI() * T::of_usize(k) / l;
                w * w
            })
            .sum()
    }
}

/// Eigenvalues and per-mode normalization constants of the retained basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis<T> {
    pub eigenvalues: Vec<T>,
    pub normalization: Vec<T>,
}

/// Eigenpairs of the Neumann Laplacian for the retained multi-indices, in the
/// flat coefficient order.
pub fn neumann_eigenpairs<T: Scalar>(grid: &Grid<T>) -> Basis<T> {
    let count = grid.mode_count();
    let mut eigenvalues = Vec::with_capacity(count);
    let mut normalization = Vec::with_capacity(count);
    for flat in 0..count {
        let index = grid.multi_index(flat);
        eigenvalues.push(grid.eigenvalue(&index));
        let norm = index
            .iter()
            .zip(grid.lengths())
            .map(|(&k, &l)| axis_norm(k, l.as_f64()))
            .product::<f64>();
        normalization.push(T::of(norm));
    }
    Basis {
        eigenvalues,
        normalization,
    }
}

fn axis_norm(k: usize, length: f64) -> f64 {
    if k == 0 {
        (1.0 / length).sqrt()
    } else {
        (2.0 / length).sqrt()
    }
}

#[derive(Debug)]
struct AxisPlan<T> {
    modes: usize,
    nodes: usize,
    points: Vec<T>,
    /// `nodes x modes`: `e_k(x_j)`.
    synth: Vec<T>,
    /// `nodes x modes`: `e_k'(x_j)`.
    deriv: Vec<T>,
    /// `modes x nodes`: `w_j e_k(x_j)`.
    analysis: Vec<T>,
}

impl<T: Scalar> AxisPlan<T> {
    fn new(length: f64, modes: usize, intervals: usize) -> Self {
        let nodes = intervals + 1;
        let h = length / intervals as f64;
        let period = 2 * intervals;
        let mut synth = vec![T::zero(); nodes * modes];
        let mut deriv = vec![T::zero(); nodes * modes];
        let mut analysis = vec![T::zero(); modes * nodes];
        for j in 0..nodes {
            let weight = if j == 0 || j == intervals { 0.5 * h } else { h };
            for k in 0..modes {
                // reduce k*j modulo the period so symmetric nodes give exact zeros
                let r = (k * j) % period;
                let angle = PI * r as f64 / intervals as f64;
                let c = axis_norm(k, length);
                let value = c * angle.cos();
                let slope = -c * (PI * k as f64 / length) * angle.sin();
                synth[j * modes + k] = T::of(value);
                deriv[j * modes + k] = T::of(slope);
                analysis[k * nodes + j] = T::of(weight * value);
            }
        }
        let points = (0..nodes).map(|j| T::of(j as f64 * h)).collect();
        Self {
            modes,
            nodes,
            points,
            synth,
            deriv,
            analysis,
        }
    }
}

/// Precomputed transform plan for one grid. Immutable once built.
#[derive(Debug)]
pub struct Space<T> {
    grid: Grid<T>,
    basis: Basis<T>,
    axes: Vec<AxisPlan<T>>,
    weights: Vec<T>,
}

pub type SpaceRef<T> = Arc<Space<T>>;

impl<T: Scalar> Space<T> {
    pub fn new(grid: Grid<T>) -> SpaceRef<T> {
        let axes: Vec<AxisPlan<T>> = (0..grid.dim())
            .map(|a| {
                AxisPlan::new(
                    grid.lengths()[a].as_f64(),
                    grid.modes()[a],
                    grid.padded_intervals(a),
                )
            })
            .collect();
        let shape = grid.node_shape();
        let count: usize = shape.iter().product();
        let mut weights = vec![T::one(); count];
        for (flat, w) in weights.iter_mut().enumerate() {
            let mut rest = flat;
            for axis in (0..grid.dim()).rev() {
                let j = rest % shape[axis];
                rest /= shape[axis];
                let plan = &axes[axis];
                let h = grid.lengths()[axis].as_f64() / (plan.nodes - 1) as f64;
                let wj = if j == 0 || j == plan.nodes - 1 { 0.5 * h } else { h };
                *w = *w * T::of(wj);
            }
        }
        let basis = neumann_eigenpairs(&grid);
        Arc::new(Self {
            grid,
            basis,
            axes,
            weights,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn basis(&self) -> &Basis<T> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.basis.eigenvalues
    }

    pub fn mode_count(&self) -> usize {
        self.basis.eigenvalues.len()
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Trapezoid weights on the padded node grid.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Coordinates of the padded nodes along `axis`.
    pub fn nodes(&self, axis: usize) -> &[T] {
        &self.axes[axis].points
    }

    /// Physical coordinates of a flat node index.
    pub fn node_point(&self, mut flat: usize) -> Vec<T> {
        let dim = self.grid.dim();
        let mut x = vec![T::zero(); dim];
        for axis in (0..dim).rev() {
            let n = self.axes[axis].nodes;
            x[axis] = self.axes[axis].points[flat % n];
            flat /= n;
        }
        x
    }

    /// Trapezoid quadrature of a scalar node function.
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.weights.len());
        values
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| v * w)
            .sum()
    }

    fn mode_shape(&self) -> Vec<usize> {
        self.grid.modes().to_vec()
    }

    fn synthesize(&self, coeffs: &[T], deriv_axis: Option<usize>) -> Vec<T> {
        let mut shape = self.mode_shape();
        let mut data = coeffs.to_vec();
        for (axis, plan) in self.axes.iter().enumerate() {
            let mat = if deriv_axis == Some(axis) {
                &plan.deriv
            } else {
                &plan.synth
            };
            data = apply_axis(&data, &shape, axis, mat, plan.nodes);
            shape[axis] = plan.nodes;
        }
        data
    }

    fn analyze(&self, values: &[T]) -> Vec<T> {
        let mut shape = self.grid.node_shape();
        let mut data = values.to_vec();
        for (axis, plan) in self.axes.iter().enumerate() {
            data = apply_axis(&data, &shape, axis, &plan.analysis, plan.modes);
            shape[axis] = plan.modes;
        }
        data
    }

    pub fn same_grid(a: &SpaceRef<T>, b: &SpaceRef<T>) -> bool {
        Arc::ptr_eq(a, b) || a.grid == b.grid
    }
}

/// Contracts `axis` of a row-major array against `mat` (`rows x shape[axis]`).
fn apply_axis<T: Scalar>(
    input: &[T],
    shape: &[usize],
    axis: usize,
    mat: &[T],
    rows: usize,
) -> Vec<T> {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); outer * rows * inner];
    for o in 0..outer {
        let src = &input[o * cols * inner..(o + 1) * cols * inner];
        let dst = &mut out[o * rows * inner..(o + 1) * rows * inner];
        for r in 0..rows {
            let row = &mat[r * cols..(r + 1) * cols];
            let d = &mut dst[r * inner..(r + 1) * inner];
            for (c, &m) in row.iter().enumerate() {
                let s = &src[c * inner..(c + 1) * inner];
                for (di, &si) in d.iter_mut().zip(s) {
                    *di = *di + m * si;
                }
            }
        }
    }
    out
}

/// ℝ³-valued field in the retained cosine basis.
#[derive(Clone, Debug)]
pub struct SpectralField<T> {
    space: SpaceRef<T>,
    coeffs: [Vec<T>; 3],
}

impl<T: Scalar> PartialEq for SpectralField<T> {
    fn eq(&self, other: &Self) -> bool {
        Space::same_grid(&self.space, &other.space) && self.coeffs == other.coeffs
    }
}

impl<T: Scalar> SpectralField<T> {
    pub fn zeros(space: &SpaceRef<T>) -> Self {
        let n = space.mode_count();
        Self {
            space: space.clone(),
            coeffs: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
        }
    }

    pub fn from_coeffs(space: &SpaceRef<T>, coeffs: [Vec<T>; 3]) -> Result<Self> {
        let n = space.mode_count();
        if coeffs.iter().any(|c| c.len() != n) {
            return Err(Error::GridMismatch(format!(
                "expected {n} coefficients per component"
            )));
        }
        Ok(Self {
            space: space.clone(),
            coeffs,
        })
    }

    /// Spatially constant field with value `v`.
    pub fn constant(space: &SpaceRef<T>, v: [T; 3]) -> Self {
        let mut f = Self::zeros(space);
        let root_volume = space.grid().volume().sqrt();
        for c in 0..3 {
            f.coeffs[c][0] = v[c] * root_volume;
        }
        f
    }

    /// Sum of basis modes `coefficient * e_index`.
    pub fn from_modes(space: &SpaceRef<T>, modes: &[(Vec<usize>, [T; 3])]) -> Result<Self> {
        let mut f = Self::zeros(space);
        for (index, value) in modes {
            let flat = space.grid().flat_index(index).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "mode {index:?} outside grid modes {:?}",
                    space.grid().modes()
                ))
            })?;
            for c in 0..3 {
                f.coeffs[c][flat] = f.coeffs[c][flat] + value[c];
            }
        }
        Ok(f)
    }

    pub fn space(&self) -> &SpaceRef<T> {
        &self.space
    }

    pub fn grid(&self) -> &Grid<T> {
        self.space.grid()
    }

    pub fn coeffs(&self) -> &[Vec<T>; 3] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<T>; 3] {
        &mut self.coeffs
    }

    pub fn component(&self, c: usize) -> &[T] {
        &self.coeffs[c]
    }

    pub fn mode_count(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| *v == T::zero())
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if Space::same_grid(&self.space, &other.space) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "fields on grids with modes {:?} and {:?}",
                self.grid().modes(),
                other.grid().modes()
            )))
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: T, other: &Self) {
        debug_assert!(Space::same_grid(&self.space, &other.space));
        for c in 0..3 {
            for (x, &y) in self.coeffs[c].iter_mut().zip(&other.coeffs[c]) {
                *x = *x + a * y;
            }
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            space: self.space.clone(),
            coeffs: self.coeffs.clone().map(|c| c.into_iter().map(&f).collect()),
        }
    }

    /// Per-mode map `(lambda_k, c) -> c'` applied to every component.
    pub fn map_modes(&self, f: impl Fn(T, T) -> T) -> Self {
        let lambdas = self.space.eigenvalues();
        let coeffs = self.coeffs.clone().map(|c| {
            c.into_iter()
                .zip(lambdas)
                .map(|(v, &l)| f(l, v))
                .collect()
        });
        Self {
            space: self.space.clone(),
            coeffs,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-T::one(), other);
        out
    }

    /// L² inner product (exact by orthonormality).
    pub fn inner(&self, other: &Self) -> T {
        (0..3)
            .map(|c| {
                self.coeffs[c]
                    .iter()
                    .zip(&other.coeffs[c])
                    .map(|(&a, &b)| a * b)
                    .sum::<T>()
            })
            .sum()
    }

    pub fn l2_norm(&self) -> T {
        self.inner(self).sqrt()
    }

    /// `sum_k lambda_k |c_k|^2 = ||∇u||²`.
    pub fn grad_norm_sq(&self) -> T {
        let lambdas = self.space.eigenvalues();
        (0..3)
            .map(|c| {
                self.coeffs[c]
                    .iter()
                    .zip(lambdas)
                    .map(|(&v, &l)| l * v * v)
                    .sum::<T>()
            })
            .sum()
    }

    /// Copies the modes shared with `target` (same box), truncating or
    /// zero-filling the rest.
    pub fn resample(&self, target: &SpaceRef<T>) -> Result<Self> {
        let src = self.grid();
        let dst = target.grid();
        if src.dim() != dst.dim() || src.lengths() != dst.lengths() {
            return Err(Error::GridMismatch("resampling requires the same box".into()));
        }
        let mut out = Self::zeros(target);
        for flat in 0..self.mode_count() {
            if let Some(to) = dst.flat_index(&src.multi_index(flat)) {
                for c in 0..3 {
                    out.coeffs[c][to] = self.coeffs[c][flat];
                }
            }
        }
        Ok(out)
    }

    /// Copies the coefficients into a grid with at least as many modes on the
    /// same box (zero-filling the new modes).
    pub fn embed(&self, target: &SpaceRef<T>) -> Result<Self> {
        let src = self.grid();
        let dst = target.grid();
        if src.dim() != dst.dim() || src.lengths() != dst.lengths() {
            return Err(Error::GridMismatch("embedding requires the same box".into()));
        }
        if src.modes().iter().zip(dst.modes()).any(|(a, b)| a > b) {
            return Err(Error::GridMismatch(format!(
                "cannot embed modes {:?} into {:?}",
                src.modes(),
                dst.modes()
            )));
        }
        let mut out = Self::zeros(target);
        for flat in 0..self.mode_count() {
            let to = dst
                .flat_index(&src.multi_index(flat))
                .expect("index fits by construction");
            for c in 0..3 {
                out.coeffs[c][to] = self.coeffs[c][flat];
            }
        }
        Ok(out)
    }
}

/// Field values on the padded node grid.
#[derive(Clone, Debug)]
pub struct PhysField<T> {
    space: SpaceRef<T>,
    values: [Vec<T>; 3],
}

impl<T: Scalar> PhysField<T> {
    pub fn new(space: &SpaceRef<T>, values: [Vec<T>; 3]) -> Result<Self> {
        let n = space.node_count();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::GridMismatch(format!(
                "expected {n} node values per component on the padded grid"
            )));
        }
        Ok(Self {
            space: space.clone(),
            values,
        })
    }

    /// Samples `f` at every padded node.
    pub fn from_fn(space: &SpaceRef<T>, f: impl Fn(&[T]) -> [T; 3]) -> Self {
        let n = space.node_count();
        let mut values = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for j in 0..n {
            let v = f(&space.node_point(j));
            for c in 0..3 {
                values[c][j] = v[c];
            }
        }
        Self {
            space: space.clone(),
            values,
        }
    }

    pub fn space(&self) -> &SpaceRef<T> {
        &self.space
    }

    pub fn values(&self) -> &[Vec<T>; 3] {
        &self.values
    }

    pub fn node_count(&self) -> usize {
        self.values[0].len()
    }

    #[inline]
    pub fn at(&self, j: usize) -> [T; 3] {
        [self.values[0][j], self.values[1][j], self.values[2][j]]
    }

    pub fn from_pointwise(space: &SpaceRef<T>, n: usize, f: impl Fn(usize) -> [T; 3]) -> Self {
        let mut values = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for j in 0..n {
            let v = f(j);
            values[0][j] = v[0];
            values[1][j] = v[1];
            values[2][j] = v[2];
        }
        Self {
            space: space.clone(),
            values,
        }
    }

    /// Pointwise `|u|²`.
    pub fn norm_sq(&self) -> Vec<T> {
        (0..self.node_count())
            .map(|j| {
                let v = self.at(j);
                v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
            })
            .collect()
    }

    /// Pointwise `self × other`.
    pub fn cross(&self, other: &Self) -> Self {
        Self::from_pointwise(&self.space, self.node_count(), |j| {
            crate::scalar::cross(self.at(j), other.at(j))
        })
    }

    /// Pointwise `self · other`.
    pub fn dot(&self, other: &Self) -> Vec<T> {
        (0..self.node_count())
            .map(|j| crate::scalar::dot(self.at(j), other.at(j)))
            .collect()
    }

    /// L² inner product by quadrature.
    pub fn inner(&self, other: &Self) -> T {
        self.space.integrate(&self.dot(other))
    }

    /// `|u|² u` pointwise.
    pub fn cubic(&self) -> Self {
        let sq = self.norm_sq();
        Self::from_pointwise(&self.space, self.node_count(), |j| {
            let v = self.at(j);
            [sq[j] * v[0], sq[j] * v[1], sq[j] * v[2]]
        })
    }
}

/// Synthesis onto the padded node grid.
pub fn to_physical<T: Scalar>(field: &SpectralField<T>) -> PhysField<T> {
    let space = field.space();
    PhysField {
        space: space.clone(),
        values: [0, 1, 2].map(|c| space.synthesize(&field.coeffs[c], None)),
    }
}

/// Analysis back to the retained modes; this is the Galerkin projection of the
/// sampled function (exact whenever the product degree stays below `2M`).
pub fn to_spectral<T: Scalar>(phys: &PhysField<T>) -> SpectralField<T> {
    let space = phys.space();
    SpectralField {
        space: space.clone(),
        coeffs: [0, 1, 2].map(|c| space.analyze(&phys.values[c])),
    }
}

/// Analysis onto an explicitly requested grid; rejects node data from another grid.
pub fn to_spectral_on<T: Scalar>(
    phys: &PhysField<T>,
    space: &SpaceRef<T>,
) -> Result<SpectralField<T>> {
    if !Space::same_grid(phys.space(), space) {
        return Err(Error::GridMismatch(
            "physical field lives on a different padded grid".into(),
        ));
    }
    Ok(to_spectral(phys))
}

/// Orthogonal projection onto modes with `k_i < cutoff_i`.
pub fn project<T: Scalar>(field: &SpectralField<T>, cutoff: &[usize]) -> Result<SpectralField<T>> {
    let grid = field.grid();
    if cutoff.len() != grid.dim() || cutoff.iter().zip(grid.modes()).any(|(c, n)| c > n) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff:?} exceeds stored modes {:?}",
            grid.modes()
        )));
    }
    let mut out = field.clone();
    for flat in 0..field.mode_count() {
        let index = grid.multi_index(flat);
        if index.iter().zip(cutoff).any(|(k, c)| k >= c) {
            for c in 0..3 {
                out.coeffs[c][flat] = T::zero();
            }
        }
    }
    Ok(out)
}

/// `Δ^power u`, i.e. multiplication by `(-lambda_k)^power`.
pub fn apply_laplacian<T: Scalar>(field: &SpectralField<T>, power: u32) -> SpectralField<T> {
    field.map_modes(|l, c| (-l).powi(power as i32) * c)
}

/// Exact spectral derivative along each axis, evaluated on the padded nodes.
pub fn spectral_gradient<T: Scalar>(field: &SpectralField<T>) -> Vec<PhysField<T>> {
    let space = field.space();
    (0..field.grid().dim())
        .map(|axis| PhysField {
            space: space.clone(),
            values: [0, 1, 2].map(|c| space.synthesize(&field.coeffs[c], Some(axis))),
        })
        .collect()
}

/// `(sum_k (1+lambda_k)^s |c_k|^2)^(1/2)`, or the seminorm with weight `lambda_k^s`.
pub fn sobolev_norm<T: Scalar>(field: &SpectralField<T>, s: T, seminorm: bool) -> Result<T> {
    if !(s >= T::zero()) {
        return Err(Error::InvalidArgument(format!("Sobolev order {s} < 0")));
    }
    let integer = s == s.round() && s < T::of(64.0);
    let weight = |l: T| {
        let base = if seminorm { l } else { T::one() + l };
        if integer {
            base.powi(s.to_i32().unwrap_or(0))
        } else {
            base.powf(s)
        }
    };
    let lambdas = field.space().eigenvalues();
    let total: T = (0..3)
        .map(|c| {
            field.coeffs[c]
                .iter()
                .zip(lambdas)
                .map(|(&v, &l)| weight(l) * v * v)
                .sum::<T>()
        })
        .sum();
    Ok(total.sqrt())
}

/// Lᵖ norm for `p ∈ {2, 4, ∞}` by quadrature on the padded grid.
pub fn lp_norm<T: Scalar>(field: &SpectralField<T>, p: f64) -> Result<T> {
    let phys = to_physical(field);
    let sq = phys.norm_sq();
    let space = field.space();
    if p == 2.0 {
        Ok(space.integrate(&sq).sqrt())
    } else if p == 4.0 {
        let quartic: Vec<T> = sq.iter().map(|&s| s * s).collect();
        Ok(space.integrate(&quartic).sqrt().sqrt())
    } else if p == f64::INFINITY {
        Ok(sq.into_iter().fold(T::zero(), T::max).sqrt())
    } else {
        Err(Error::InvalidArgument(format!(
            "unsupported Lp exponent {p}; use 2, 4 or infinity"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space1(l: f64, n: usize) -> SpaceRef<f64> {
        Space::new(Grid::new(&[l], &[n]).unwrap())
    }

    fn pseudo_random(space: &SpaceRef<f64>, seed: u64) -> SpectralField<f64> {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = space.mode_count();
        let coeffs = [0, 1, 2].map(|_| (0..n).map(|_| next()).collect());
        SpectralField::from_coeffs(space, coeffs).unwrap()
    }

    #[test]
    fn eigenvalues_closed_form() {
        let g = Grid::new(&[PI], &[4]).unwrap();
        assert_eq!(neumann_eigenpairs(&g).eigenvalues.len(), 4);
        for (k, l) in neumann_eigenpairs(&g).eigenvalues.iter().enumerate() {
            assert!((l - (k * k) as f64).abs() < 1e-12);
        }
        let g2 = Grid::new(&[PI, PI], &[3, 3]).unwrap();
        assert!((g2.eigenvalue(&[1, 1]) - 2.0).abs() < 1e-12);
        let g3 = Grid::new(&[2.0 * PI], &[4]).unwrap();
        assert!((g3.eigenvalue(&[2]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::<f64>::new(&[], &[]).is_err());
        assert!(Grid::new(&[1.0, 1.0, 1.0, 1.0], &[2, 2, 2, 2]).is_err());
        assert!(Grid::new(&[-1.0], &[2]).is_err());
        assert!(Grid::new(&[1.0], &[0]).is_err());
        assert!(PadFactor::new(1, 2).is_err());
        let g = Grid::with_pad(&[1.0], &[5], PadFactor::new(3, 2).unwrap()).unwrap();
        assert_eq!(g.padded_intervals(0), 8);
    }

    #[test]
    fn discrete_orthonormality() {
        for (lengths, modes) in [
            (vec![PI], vec![6]),
            (vec![1.3, 2.0], vec![4, 3]),
            (vec![1.0, 2.0, 0.7], vec![3, 2, 3]),
        ] {
            let space = Space::new(Grid::new(&lengths, &modes).unwrap());
            let n = space.mode_count();
            let values: Vec<Vec<f64>> = (0..n)
                .map(|k| {
                    let mut c = vec![0.0; n];
                    c[k] = 1.0;
                    space.synthesize(&c, None)
                })
                .collect();
            for a in 0..n {
                for b in 0..n {
                    let prod: Vec<f64> =
                        values[a].iter().zip(&values[b]).map(|(x, y)| x * y).collect();
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert!((space.integrate(&prod) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_mode_synthesis() {
        let space = space1(PI, 4);
        let f = SpectralField::from_modes(&space, &[(vec![1], [1.0, 0.0, 0.0])]).unwrap();
        let phys = to_physical(&f);
        for (j, x) in space.nodes(0).iter().enumerate() {
            let expected = (2.0 / PI).sqrt() * x.cos();
            assert!((phys.values()[0][j] - expected).abs() < 1e-14);
            assert_eq!(phys.values()[1][j], 0.0);
        }
    }

    #[test]
    fn constant_field_is_constant() {
        let space = Space::new(Grid::new(&[1.5, 0.5], &[3, 4]).unwrap());
        let f = SpectralField::<f64>::constant(&space, [0.3, -1.0, 2.0]);
        let phys = to_physical(&f);
        for j in 0..phys.node_count() {
            let v = phys.at(j);
            assert!((v[0] - 0.3).abs() < 1e-14);
            assert!((v[1] + 1.0).abs() < 1e-14);
            assert!((v[2] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for (lengths, modes) in [(vec![2.0], vec![9]), (vec![1.0, 3.0], vec![5, 4])] {
            let space = Space::new(Grid::new(&lengths, &modes).unwrap());
            let f = pseudo_random(&space, 11);
            let back = to_spectral(&to_physical(&f));
            let err = back.sub(&f).l2_norm() / f.l2_norm();
            assert!(err < 1e-12, "round trip error {err}");
        }
    }

    #[test]
    fn spectral_on_wrong_grid_rejected() {
        let a = space1(1.0, 4);
        let b = space1(1.0, 5);
        let phys = to_physical(&SpectralField::zeros(&a));
        assert!(to_spectral_on(&phys, &b).is_err());
        assert!(to_spectral_on(&phys, &a).is_ok());
        assert!(PhysField::new(&b, phys.values().clone()).is_err());
    }

    #[test]
    fn projection_properties() {
        let space = space1(PI, 8);
        let f = pseudo_random(&space, 3);
        let p = project(&f, &[4]).unwrap();
        for k in 0..8 {
            for c in 0..3 {
                if k >= 4 {
                    assert_eq!(p.component(c)[k], 0.0);
                } else {
                    assert_eq!(p.component(c)[k], f.component(c)[k]);
                }
            }
        }
        assert_eq!(project(&p, &[4]).unwrap(), p);
        assert!(p.l2_norm() <= f.l2_norm());
        assert!(project(&f, &[9]).is_err());
        let g = pseudo_random(&space, 4);
        let lhs = project(&f, &[5]).unwrap().inner(&g);
        let rhs = f.inner(&project(&g, &[5]).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn laplacian_powers() {
        let space = space1(PI, 4);
        let f = SpectralField::from_modes(&space, &[(vec![1], [2.0, 0.0, 0.0])]).unwrap();
        assert_eq!(apply_laplacian(&f, 1).component(0)[1], -2.0);
        assert_eq!(apply_laplacian(&f, 2).component(0)[1], 2.0);
        let c = SpectralField::constant(&space, [1.0, 2.0, 3.0]);
        assert!(apply_laplacian(&c, 1).is_zero());
        assert!(apply_laplacian(&c, 2).is_zero());
        let g = pseudo_random(&space, 9);
        assert_eq!(
            apply_laplacian(&project(&g, &[3]).unwrap(), 1),
            project(&apply_laplacian(&g, 1), &[3]).unwrap()
        );
    }

    #[test]
    fn gradient_of_cosine() {
        let space = space1(PI, 4);
        let f = SpectralField::from_modes(&space, &[(vec![1], [(PI / 2.0).sqrt(), 0.0, 0.0])])
            .unwrap();
        let grad = spectral_gradient(&f);
        for (j, x) in space.nodes(0).iter().enumerate() {
            assert!((grad[0].values()[0][j] + x.sin()).abs() < 1e-14);
        }
        let c = SpectralField::constant(&space, [1.0, 1.0, 1.0]);
        assert!(spectral_gradient(&c)[0].values().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_parseval() {
        let space = Space::new(Grid::new(&[1.0, 2.5], &[6, 5]).unwrap());
        let f = pseudo_random(&space, 21);
        let quad: f64 = spectral_gradient(&f).iter().map(|g| g.inner(g)).sum();
        let spectral = f.grad_norm_sq();
        assert!((quad - spectral).abs() / spectral < 1e-10);
    }

    #[test]
    fn sobolev_norm_cases() {
        let space = space1(PI, 4);
        let f = SpectralField::from_modes(&space, &[(vec![1], [1.0, 0.0, 0.0])]).unwrap();
        assert!((sobolev_norm(&f, 1.0, false).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        let a = 0.7;
        let c = SpectralField::constant(&space, [a, 0.0, 0.0]);
        assert!((sobolev_norm(&c, 0.0, false).unwrap() - a * PI.sqrt()).abs() < 1e-14);
        let sigma = 0.3;
        let h = f.scaled(sigma);
        let expected = 2.0 * 2f64.sqrt() * sigma;
        assert!((sobolev_norm(&h, 3.0, false).unwrap() - expected).abs() < 1e-14);
        assert!(sobolev_norm(&h, -1.0, false).is_err());
        assert!((sobolev_norm(&f, 1.0, true).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lp_norm_cases() {
        let space = space1(PI, 4);
        let a = 1.3;
        let c = SpectralField::constant(&space, [a, 0.0, 0.0]);
        let expected = (a.powi(4) * PI).powf(0.25);
        assert!((lp_norm(&c, 4.0).unwrap() - expected).abs() < 1e-12);
        let f = pseudo_random(&space, 5);
        let l2 = lp_norm(&f, 2.0).unwrap();
        assert!((l2 - sobolev_norm(&f, 0.0, false).unwrap()).abs() < 1e-10);
        let cosx = SpectralField::from_modes(&space, &[(vec![1], [(PI / 2.0).sqrt(), 0.0, 0.0])])
            .unwrap();
        assert!((lp_norm(&cosx, f64::INFINITY).unwrap() - 1.0).abs() < 1e-14);
        assert!(lp_norm(&cosx, 3.0).is_err());
    }

    #[test]
    fn embed_copies_modes() {
        let coarse = space1(2.0, 4);
        let fine = space1(2.0, 8);
        let f = pseudo_random(&coarse, 1);
        let e = f.embed(&fine).unwrap();
        assert!((e.l2_norm() - f.l2_norm()).abs() < 1e-15);
        assert!(e.embed(&coarse).is_err());
        assert!(f.embed(&space1(3.0, 8)).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let space = Space::new(Grid::new(&[std::f32::consts::PI], &[6]).unwrap());
        let f = SpectralField::from_modes(&space, &[(vec![2], [1.0f32, 0.5, -0.25])]).unwrap();
        let back = to_spectral(&to_physical(&f));
        assert!(back.sub(&f).l2_norm() < 1e-5);
    }
}
