//! TOML run configuration.
//!
//! Parsing rejects unknown keys; [`RunConfig::materialize`] fills every
//! default that depends on other fields, so the echoed configuration fully
//! determines the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{NormSpace, Observable, Window};
use crate::error::{Error, Result};
use crate::integrator::{InitialData, Scheme, SolverConfig};
use crate::model::{ModelParams, TruncationConfig, TruncationMode};
use crate::noise::{build_noise_modes, EigenmodeNoise, ModeCoefficient, NoiseFamily, NoiseModel};
use crate::spectral::{Grid, PadFactor, Space, SpaceRef};

use super::output::read_snapshot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub params: ModelParams<f64>,
    #[serde(default)]
    pub truncation: TruncationSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lengths: Vec<f64>,
    pub modes: Vec<usize>,
    #[serde(default)]
    pub pad: PadFactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    pub mode: TruncationMode,
    #[serde(default)]
    pub radius: Option<f64>,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        Self {
            mode: TruncationMode::Off,
            radius: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Eigenmodes,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: FamilyKind,
    #[serde(default)]
    pub modes: Vec<EigenmodeNoise<f64>>,
    #[serde(default)]
    pub fields: Vec<Vec<ModeCoefficient<f64>>>,
    /// Warn when `C_h` exceeds this value.
    #[serde(default)]
    pub condition_bound: Option<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            family: FamilyKind::Eigenmodes,
            modes: Vec::new(),
            fields: Vec::new(),
            condition_bound: None,
        }
    }
}

impl NoiseSpec {
    pub fn family(&self) -> NoiseFamily<f64> {
        match self.family {
            FamilyKind::Eigenmodes => NoiseFamily::Eigenmodes {
                modes: self.modes.clone(),
            },
            FamilyKind::Explicit => NoiseFamily::Explicit {
                fields: self.fields.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// `None`: never stop on the H¹ norm.
    #[serde(default)]
    pub blowup_k: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_u32")]
    pub brownian_substeps: u32,
}

fn default_scheme() -> Scheme {
    Scheme::ImexEmIto
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant { value: [f64; 3] },
    Modes { modes: Vec<ModeCoefficient<f64>> },
    Snapshot { path: PathBuf },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Constant {
            value: [1.0, 0.0, 0.0],
        }
    }
}

/// Settings for `ensemble`, `invariant`, `converge` and `check`. Fields left
/// as `None` are filled by [`RunConfig::materialize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub observables: Option<Vec<Observable<f64>>>,
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub windows: Option<Vec<Window<f64>>>,
    #[serde(default)]
    pub transition_times: Option<Vec<f64>>,
    #[serde(default = "default_radii")]
    pub tightness_radii: Vec<f64>,
    #[serde(default = "default_tightness_space")]
    pub tightness_space: NormSpace,
    #[serde(default = "default_powers")]
    pub moment_powers: Vec<f64>,
    #[serde(default = "default_halvings")]
    pub dt_halvings: u32,
    #[serde(default)]
    pub refinement_levels: Option<Vec<usize>>,
    #[serde(default = "default_check_samples")]
    pub check_samples: usize,
}

fn default_paths() -> usize {
    16
}

fn default_radii() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

fn default_tightness_space() -> NormSpace {
    NormSpace::H1
}

fn default_powers() -> Vec<f64> {
    vec![1.0, 2.0]
}

fn default_halvings() -> u32 {
    3
}

fn default_check_samples() -> usize {
    20
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            observables: None,
            burn_in: None,
            windows: None,
            transition_times: None,
            tightness_radii: default_radii(),
            tightness_space: default_tightness_space(),
            moment_powers: default_powers(),
            dt_halvings: default_halvings(),
            refinement_levels: None,
            check_samples: default_check_samples(),
        }
    }
}

fn config_error(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Re-keys validation errors raised by the core to their config key.
fn keyed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => {
            let key = if name.contains('.') {
                name.to_string()
            } else {
                format!("{prefix}.{name}")
            };
            config_error(key, reason)
        }
        Error::InvalidGrid(reason) | Error::InvalidArgument(reason) | Error::NoiseMode(reason) => {
            config_error(prefix, reason)
        }
        other => other,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parses TOML text; `origin` only labels errors.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.materialize()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        context: "reading config",
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

impl RunConfig {
    /// Validates every field and fills the derived defaults in place.
    pub fn materialize(&mut self) -> Result<()> {
        let grid = self.grid()?;
        let dim = grid.dim();
        self.params.validate().map_err(|e| keyed("params", e))?;
        self.truncation().map_err(|e| keyed("truncation", e))?;
        if let Some(b) = self.noise.condition_bound {
            if !(b > 0.0) {
                return Err(config_error("noise.condition_bound", "must be > 0"));
            }
        }
        match self.noise.family {
            FamilyKind::Eigenmodes if !self.noise.fields.is_empty() => {
                return Err(config_error("noise.fields", "only allowed with family = \"explicit\""));
            }
            FamilyKind::Explicit if !self.noise.modes.is_empty() => {
                return Err(config_error("noise.modes", "only allowed with family = \"eigenmodes\""));
            }
            _ => {}
        }
        let space = Space::new(grid.clone());
        build_noise_modes(&self.noise.family(), &space).map_err(|e| keyed("noise", e))?;
        self.solver_config().validate().map_err(|e| keyed("solver", e))?;
        if let Some(k) = self.solver.blowup_k {
            if !(k > 0.0) {
                return Err(config_error("solver.blowup_k", "must be > 0"));
            }
        }
        match &self.initial {
            InitialSpec::Constant { value } if value.iter().any(|v| !v.is_finite()) => {
                return Err(config_error("initial.value", "must be finite"));
            }
            InitialSpec::Modes { modes } => {
                for m in modes {
                    if m.index.len() != dim {
                        return Err(config_error("initial.modes", format!("index {:?} is not {dim}-dimensional", m.index)));
                    }
                }
            }
            _ => {}
        }

        let t_end = self.solver.t_end;
        let exp = &mut self.experiment;
        if exp.paths == 0 {
            return Err(config_error("experiment.paths", "must be >= 1"));
        }
        let observables = exp.observables.get_or_insert_with(|| default_observables(dim));
        let probe = crate::spectral::SpectralField::zeros(&space);
        for (i, o) in observables.iter().enumerate() {
            o.validate(&probe)
                .map_err(|e| keyed(&format!("experiment.observables[{i}]"), e))?;
        }
        let burn_in = *exp.burn_in.get_or_insert(t_end / 4.0);
        if !(burn_in >= 0.0 && 2.0 * burn_in <= t_end) {
            return Err(config_error("experiment.burn_in", "must lie in [0, t_end/2]"));
        }
        let windows = exp
            .windows
            .get_or_insert_with(|| crate::ensemble::default_windows(t_end));
        for (i, w) in windows.iter().enumerate() {
            if !(w.start >= burn_in && w.start < w.end && w.end <= t_end) {
                return Err(config_error(
                    format!("experiment.windows[{i}]"),
                    "must satisfy burn_in <= start < end <= t_end",
                ));
            }
        }
        let times = exp
            .transition_times
            .get_or_insert_with(|| vec![t_end / 2.0, t_end]);
        if times.iter().any(|t| !(*t >= 0.0 && *t <= t_end)) {
            return Err(config_error("experiment.transition_times", "must lie in [0, t_end]"));
        }
        if exp.tightness_radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(config_error("experiment.tightness_radii", "must be >= 0"));
        }
        if exp.moment_powers.iter().any(|p| !(*p >= 1.0)) {
            return Err(config_error("experiment.moment_powers", "must be >= 1"));
        }
        let base = self.grid.modes.iter().copied().max().unwrap_or(1);
        let levels = exp
            .refinement_levels
            .get_or_insert_with(|| vec![base, 2 * base, 4 * base]);
        if levels.len() < 2 || levels.windows(2).any(|w| w[0] >= w[1]) || levels[0] == 0 {
            return Err(config_error(
                "experiment.refinement_levels",
                "need at least two strictly increasing positive levels",
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::with_pad(&self.grid.lengths, &self.grid.modes, self.grid.pad).map_err(|e| keyed("grid", e))
    }

    pub fn space(&self) -> Result<SpaceRef<f64>> {
        Ok(Space::new(self.grid()?))
    }

    pub fn truncation(&self) -> Result<TruncationConfig<f64>> {
        match (self.truncation.mode, self.truncation.radius) {
            (TruncationMode::Off, _) => Ok(TruncationConfig::off()),
            (TruncationMode::On, None) => Err(config_error(
                "truncation.radius",
                "required when truncation mode is \"on\"",
            )),
            (TruncationMode::On, Some(r)) => TruncationConfig::on(r).map_err(|e| keyed("truncation", e)),
        }
    }

    pub fn noise_model(&self, space: &SpaceRef<f64>) -> Result<NoiseModel<f64>> {
        Ok(build_noise_modes(&self.noise.family(), space)
            .map_err(|e| keyed("noise", e))?
            .with_condition_bound(self.noise.condition_bound))
    }

    pub fn solver_config(&self) -> SolverConfig<f64> {
        let s = &self.solver;
        let mut c = SolverConfig::new(s.dt, s.t_end);
        c.scheme = s.scheme;
        c.blowup_k = s.blowup_k.unwrap_or(f64::INFINITY);
        c.record_every = s.record_every;
        c.seed = s.seed;
        c.brownian_substeps = s.brownian_substeps;
        c.truncation = self.truncation().unwrap_or_else(|_| TruncationConfig::off());
        c
    }

    /// Initial data; snapshot paths are resolved relative to `base_dir`.
    pub fn initial_data(&self, base_dir: &Path) -> Result<InitialData<f64>> {
        Ok(match &self.initial {
            InitialSpec::Constant { value } => InitialData::Constant(*value),
            InitialSpec::Modes { modes } => InitialData::Modes(modes.clone()),
            InitialSpec::Snapshot { path } => {
                let full = base_dir.join(path);
                let snap = read_snapshot(&full)?;
                if snap.lengths != self.grid.lengths {
                    return Err(config_error(
                        "initial.path",
                        format!("snapshot box {:?} differs from grid {:?}", snap.lengths, self.grid.lengths),
                    ));
                }
                InitialData::Field(snap.to_field(self.grid.pad)?)
            }
        })
    }
}

fn default_observables(dim: usize) -> Vec<Observable<f64>> {
    vec![
        Observable::TanhMode {
            index: vec![0; dim],
            component: 0,
            scale: 1.0,
        },
        Observable::ExpNegL2 { scale: 1.0 },
        Observable::ClipNorm {
            space: NormSpace::H1,
            cap: 10.0,
        },
    ]
}
