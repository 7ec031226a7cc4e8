//! Command line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::{parse_config, RunConfig};
use super::output::{
    prepare_output_dir, version_string, write_json, write_norm_csv, write_snapshot, write_table,
};
use crate::diagnostics::{
    identity_cross, identity_cubic_gradient, identity_cubic_laplacian, random_field, refinement_gap,
};
use crate::ensemble::{
    h2_time_average, invariant_average, moment_estimates, run_ensemble, tightness_statistic,
    EnsembleStats, GrowthReport, InvariantReport, MomentReport, StopEvent,
};
use crate::error::{Error, Result};
use crate::integrator::{run_trajectory, NormKind, NormSample, Scheme, StopReason, TrajectoryRecord};
use crate::noise::{check_noise_condition, NoiseCondition};
use crate::spectral::{SpaceRef, SpectralField};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "sllbar", version, about = "Spectral Galerkin solver for the stochastic LLBar equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory.
    Simulate(Common),
    /// Monte Carlo moments and H² growth.
    Ensemble(Common),
    /// Invariant-measure averages and tightness.
    Invariant(Common),
    /// dt-halving and Galerkin refinement studies.
    Converge(Common),
    /// Identity residuals and the noise condition.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for ensemble paths; never changes the results.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

#[derive(Serialize)]
struct Report<'a, R> {
    version: String,
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    results: R,
}

/// Whether the run ended in a way the subcommand treats as fatal.
struct Outcome {
    fatal: Option<String>,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
    threads: Option<usize>,
    base_dir: PathBuf,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn report<R: Serialize>(&self, command: &'static str, results: R) -> Result<()> {
        let report = Report {
            version: version_string(),
            command,
            seed: self.cfg.solver.seed,
            config: &self.cfg,
            results,
        };
        write_json(&self.out.join("report.json"), &report)
    }

    fn initial(&self, space: &SpaceRef<f64>) -> Result<SpectralField<f64>> {
        self.cfg.initial_data(&self.base_dir)?.build(space)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Ensemble(c) => ("ensemble", c),
        Command::Invariant(c) => ("invariant", c),
        Command::Converge(c) => ("converge", c),
        Command::Check(c) => ("check", c),
    };
    let mut cfg = match parse_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if let Some(seed) = common.seed {
        cfg.solver.seed = seed;
    }
    if let Err(e) = prepare_output_dir(&common.output_dir, common.force) {
        eprintln!("error: {e}");
        return EXIT_IO;
    }
    let ctx = Ctx {
        cfg,
        out: common.output_dir.clone(),
        quiet: common.quiet,
        threads: common.threads.map(|t| t as usize),
        base_dir: common
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let result = match name {
        "simulate" => simulate(&ctx),
        "ensemble" => ensemble(&ctx),
        "invariant" => invariant(&ctx),
        "converge" => converge(&ctx),
        _ => check(&ctx),
    };
    match result {
        Ok(Outcome { fatal: None }) => EXIT_OK,
        Ok(Outcome { fatal: Some(why) }) => {
            eprintln!("error: {why}");
            EXIT_BLOWUP
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Stopped { .. } => EXIT_BLOWUP,
        Error::Path { source, .. } => exit_code(source),
        e if e.is_config() => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn ok() -> Result<Outcome> {
    Ok(Outcome { fatal: None })
}

#[derive(Serialize)]
struct TrajectorySummary {
    stop_reason: StopReason,
    stop_time: f64,
    steps_taken: u64,
    samples: usize,
    final_norms: NormSample<f64>,
}

impl TrajectorySummary {
    fn of(r: &TrajectoryRecord<f64>) -> Self {
        Self {
            stop_reason: r.stop_reason,
            stop_time: r.stop_time,
            steps_taken: r.steps_taken,
            samples: r.samples.len(),
            final_norms: *r.samples.last().expect("initial sample always recorded"),
        }
    }
}

fn simulate(ctx: &Ctx) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let space = cfg.space()?;
    let noise = cfg.noise_model(&space)?;
    let u0 = ctx.initial(&space)?;
    let record = run_trajectory(&u0, &cfg.params, &noise, &cfg.solver_config())?;
    write_norm_csv(&ctx.out.join("series.csv"), &record.samples)?;
    write_snapshot(&ctx.out.join("final.sllb"), &record.final_state.u)?;
    #[derive(Serialize)]
    struct Results {
        trajectory: TrajectorySummary,
        noise_condition: NoiseCondition<f64>,
    }
    ctx.report(
        "simulate",
        Results {
            trajectory: TrajectorySummary::of(&record),
            noise_condition: check_noise_condition(&noise),
        },
    )?;
    ctx.say(format!(
        "simulate: {:?} at t = {} after {} steps",
        record.stop_reason, record.stop_time, record.steps_taken
    ));
    ok()
}

fn run_paths(ctx: &Ctx) -> Result<EnsembleStats<f64>> {
    let cfg = &ctx.cfg;
    let space = cfg.space()?;
    let noise = cfg.noise_model(&space)?;
    let u0 = ctx.initial(&space)?;
    let exp = &cfg.experiment;
    let observables = exp.observables.clone().unwrap_or_default();
    run_ensemble(&u0, &cfg.params, &noise, &cfg.solver_config(), exp.paths, &observables, ctx.threads)
}

fn mean_samples(stats: &EnsembleStats<f64>) -> Vec<NormSample<f64>> {
    let m = |k: NormKind, i: usize| stats.norm(k).mean[i];
    (0..stats.times.len())
        .map(|i| NormSample {
            t: stats.times[i],
            l2: m(NormKind::L2, i),
            l4: m(NormKind::L4, i),
            h1: m(NormKind::H1, i),
            h2: m(NormKind::H2, i),
            h3: m(NormKind::H3, i),
            grad_l2: m(NormKind::GradL2, i),
            theta_arg: m(NormKind::GradL2, i),
        })
        .collect()
}

fn write_ensemble_series(ctx: &Ctx, stats: &EnsembleStats<f64>) -> Result<()> {
    write_norm_csv(&ctx.out.join("mean.csv"), &mean_samples(stats))?;
    let dir = ctx.out.join("paths");
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        context: "creating paths dir",
        path: dir.clone(),
        source,
    })?;
    for r in &stats.records {
        write_norm_csv(&dir.join(format!("path_{:04}.csv", r.keys.path)), &r.samples)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EnsembleSummary {
    paths: usize,
    blowups: usize,
    stops: Vec<StopEvent<f64>>,
}

impl EnsembleSummary {
    fn of(s: &EnsembleStats<f64>) -> Self {
        Self {
            paths: s.paths,
            blowups: s.blowups,
            stops: s.stops.clone(),
        }
    }
}

fn ensemble(ctx: &Ctx) -> Result<Outcome> {
    let stats = run_paths(ctx)?;
    write_ensemble_series(ctx, &stats)?;
    let moments = ctx
        .cfg
        .experiment
        .moment_powers
        .iter()
        .map(|&p| moment_estimates(&stats, p))
        .collect::<Result<Vec<MomentReport<f64>>>>()?;
    #[derive(Serialize)]
    struct Results {
        ensemble: EnsembleSummary,
        moments: Vec<MomentReport<f64>>,
        h2_growth: Option<GrowthReport<f64>>,
        h2_growth_skipped: Option<String>,
    }
    let (h2_growth, h2_growth_skipped) = match h2_time_average(&stats) {
        Ok(g) => (Some(g), None),
        Err(e @ Error::InsufficientData(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    ctx.report(
        "ensemble",
        Results {
            ensemble: EnsembleSummary::of(&stats),
            moments,
            h2_growth,
            h2_growth_skipped,
        },
    )?;
    ctx.say(format!("ensemble: {} paths, {} blow-ups", stats.paths, stats.blowups));
    ok()
}

#[derive(Serialize)]
struct TightnessRow {
    radius: f64,
    value: f64,
}

fn invariant(ctx: &Ctx) -> Result<Outcome> {
    let stats = run_paths(ctx)?;
    write_ensemble_series(ctx, &stats)?;
    let exp = &ctx.cfg.experiment;
    #[derive(Serialize)]
    struct Results {
        ensemble: EnsembleSummary,
        observables: Vec<InvariantReport<f64>>,
        tightness_space: crate::ensemble::NormSpace,
        tightness: Vec<TightnessRow>,
        tightness_monotone: bool,
    }
    let mut radii = exp.tightness_radii.clone();
    radii.sort_by(f64::total_cmp);
    let tightness: Vec<TightnessRow> = radii
        .iter()
        .map(|&radius| TightnessRow {
            radius,
            value: tightness_statistic(&stats, radius, exp.tightness_space),
        })
        .collect();
    let tightness_monotone = tightness.windows(2).all(|w| w[1].value <= w[0].value);
    let fatal = (!stats.stops.is_empty()).then(|| {
        format!("{} of {} paths stopped before the horizon", stats.stops.len(), stats.paths)
    });
    let observables = if fatal.is_some() {
        Vec::new()
    } else {
        (0..stats.observables.len())
            .map(|i| {
                invariant_average(
                    &stats,
                    i,
                    exp.burn_in.unwrap_or(0.0),
                    exp.windows.as_deref().unwrap_or(&[]),
                    exp.transition_times.as_deref().unwrap_or(&[]),
                )
            })
            .collect::<Result<_>>()?
    };
    ctx.report(
        "invariant",
        Results {
            ensemble: EnsembleSummary::of(&stats),
            observables,
            tightness_space: exp.tightness_space,
            tightness,
            tightness_monotone,
        },
    )?;
    ctx.say(format!("invariant: {} paths", stats.paths));
    Ok(Outcome { fatal })
}

#[derive(Serialize)]
struct HalvingLevel {
    dt: f64,
    stop_reason: StopReason,
    /// `sup_t ‖u_dt − u_finest‖_{L²}` on the coarsest sample times.
    error_vs_finest: Option<f64>,
    /// `sup_t ‖u_EM − u_Heun‖_{L²}` with shared increments.
    scheme_gap: f64,
}

#[derive(Serialize)]
struct RefinementLevel {
    coarse: usize,
    fine: usize,
    gap: f64,
}

fn sup_gap(a: &TrajectoryRecord<f64>, b: &TrajectoryRecord<f64>, stride_b: usize) -> f64 {
    a.snapshots
        .iter()
        .zip(b.snapshots.iter().step_by(stride_b))
        .map(|(x, y)| x.u.sub(&y.u).l2_norm())
        .fold(0.0, f64::max)
}

fn converge(ctx: &Ctx) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let space = cfg.space()?;
    let noise = cfg.noise_model(&space)?;
    let u0 = ctx.initial(&space)?;
    let base = cfg.solver_config();
    let halvings = cfg.experiment.dt_halvings;

    let level_config = |l: u32, scheme: Scheme| {
        let mut c = base.clone();
        c.dt = base.dt / f64::from(1u32 << l);
        c.brownian_substeps = base.brownian_substeps << (halvings - l);
        c.record_every = base.record_every << l;
        c.snapshot_every = Some(c.record_every);
        c.scheme = scheme;
        c
    };
    let mut fatal = None;
    let mut runs = Vec::new();
    let mut gaps = Vec::new();
    for l in 0..=halvings {
        let main = run_trajectory(&u0, &cfg.params, &noise, &level_config(l, base.scheme))?;
        let other_scheme = match base.scheme {
            Scheme::ImexEmIto => Scheme::HeunStrat,
            Scheme::HeunStrat => Scheme::ImexEmIto,
        };
        let other = run_trajectory(&u0, &cfg.params, &noise, &level_config(l, other_scheme))?;
        for r in [&main, &other] {
            if r.stop_reason != StopReason::Completed && fatal.is_none() {
                fatal = Some(format!("dt = {}: {:?} at t = {}", r.dt, r.stop_reason, r.stop_time));
            }
        }
        gaps.push(sup_gap(&main, &other, 1));
        runs.push(main);
    }
    let finest = runs.last().expect("at least one level");
    let levels: Vec<HalvingLevel> = runs
        .iter()
        .zip(&gaps)
        .enumerate()
        .map(|(l, (r, &scheme_gap))| HalvingLevel {
            dt: r.dt,
            stop_reason: r.stop_reason,
            error_vs_finest: (l < runs.len() - 1).then(|| sup_gap(r, finest, 1)),
            scheme_gap,
        })
        .collect();

    let family = cfg.noise.family();
    let grid = cfg.grid()?;
    let steps = cfg.experiment.refinement_levels.clone().unwrap_or_default();
    let initial = cfg.initial_data(&ctx.base_dir)?;
    let mut refinement = Vec::new();
    for w in steps.windows(2) {
        match refinement_gap(&grid, &initial, &cfg.params, &family, &base, w[0], w[1]) {
            Ok(gap) => refinement.push(RefinementLevel {
                coarse: w[0],
                fine: w[1],
                gap,
            }),
            Err(Error::Stopped { reason, t }) => {
                fatal.get_or_insert(format!("refinement {} -> {}: {reason} at t = {t}", w[0], w[1]));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    #[derive(Serialize)]
    struct Results {
        dt_halving: Vec<HalvingLevel>,
        refinement: Vec<RefinementLevel>,
        refinement_strictly_decreasing: bool,
    }
    let refinement_strictly_decreasing = refinement.windows(2).all(|w| w[1].gap < w[0].gap);
    ctx.report(
        "converge",
        Results {
            dt_halving: levels,
            refinement,
            refinement_strictly_decreasing,
        },
    )?;
    ctx.say(format!("converge: {} dt levels", halvings + 1));
    Ok(Outcome { fatal })
}

fn check(ctx: &Ctx) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let space = cfg.space()?;
    let noise = cfg.noise_model(&space)?;
    let seed = cfg.solver.seed;
    let mut rows = Vec::new();
    let mut worst = [0.0f64; 3];
    for s in 0..cfg.experiment.check_samples {
        let u = random_field(&space, seed, s as u64, 1.0);
        let cross = identity_cross(&u);
        let grad = identity_cubic_gradient(&u);
        let lap = identity_cubic_laplacian(&u);
        let entries = [
            ("cross", cross, 0.0, cross),
            ("cubic_gradient", grad.lhs, grad.rhs, grad.residual),
            ("cubic_laplacian", lap.lhs, lap.rhs, lap.residual),
        ];
        for (i, (name, lhs, rhs, res)) in entries.into_iter().enumerate() {
            worst[i] = worst[i].max(res.abs());
            rows.push(vec![
                name.to_string(),
                s.to_string(),
                lhs.to_string(),
                rhs.to_string(),
                res.to_string(),
            ]);
        }
    }
    write_table(
        &ctx.out.join("identities.csv"),
        &["identity", "sample", "lhs", "rhs", "residual"],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Results {
        samples: usize,
        max_abs_residual: Vec<(&'static str, f64)>,
        noise_condition: NoiseCondition<f64>,
    }
    let condition = check_noise_condition(&noise);
    if let Some(w) = &condition.warning {
        eprintln!("warning: {w}");
    }
    ctx.report(
        "check",
        Results {
            samples: cfg.experiment.check_samples,
            max_abs_residual: vec![
                ("cross", worst[0]),
                ("cubic_gradient", worst[1]),
                ("cubic_laplacian", worst[2]),
            ],
            noise_condition: condition,
        },
    )?;
    ctx.say(format!(
        "check: max residuals cross {:e}, cubic_gradient {:e}, cubic_laplacian {:e}",
        worst[0], worst[1], worst[2]
    ));
    ok()
}
