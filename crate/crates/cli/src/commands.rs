//! The six pipelines, resolved by name from [`command_registry`].

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use qlevel_core::io::{csv_writer, fmt_f64};
use qlevel_core::levelset::{
    evaluate_family, extract_level, follow_level, interpolant_registry, intersect, stationarity_residual,
    write_points_csv, Axes, ConstantProtocol, ControlCost, LevelCurve, ParameterMesh, Statistic,
};
use qlevel_core::oct::{optimize, ControlProblem, CostConfig, OptimizeOptions};
use qlevel_core::propagator::stepper;
use qlevel_core::registry::Registry;
use qlevel_core::tracking::{tolerance_band, track, ControlOptions, TimescaleConfig, TrackOptions};
use qlevel_core::{propagate, ParameterizedHamiltonian, Role};

use crate::artifacts::ArtifactSet;
use crate::config::{build_path, RunConfig};
use crate::failure::CliError;

/// Inputs shared by every command.
pub struct Context<'a> {
    pub config: &'a RunConfig,
    /// Directory of the config file; relative input paths resolve against it.
    pub base_dir: PathBuf,
}

impl Context<'_> {
    fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    fn open(&self, p: &str, key: &str) -> Result<File, CliError> {
        File::open(self.resolve(p)).map_err(|e| CliError::io(key, &e))
    }
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;

    /// Add artifacts to `out`. Artifacts added before an error are still
    /// written, so a numerical abort can leave its partial result behind.
    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError>;
}

pub fn command_registry() -> &'static Registry<Box<dyn Command>> {
    static REG: OnceLock<Registry<Box<dyn Command>>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<Box<dyn Command>> = Registry::new("command");
        for cmd in [
            Box::new(Simulate) as Box<dyn Command>,
            Box::new(Track),
            Box::new(Optimize),
            Box::new(Mesh),
            Box::new(Contour),
            Box::new(Intersect),
        ] {
            reg.register(cmd.name(), cmd);
        }
        reg
    })
}

fn core(path: &str) -> impl Fn(qlevel_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(e, path)
}

/// Labels of the model terms with the given role, in model order.
fn labels_with_role<'a>(ctx: &'a Context<'_>, model: &ParameterizedHamiltonian, role: Role) -> Vec<&'a str> {
    let labels = ctx.config.model.as_ref().map(|m| m.labels()).unwrap_or_default();
    model
        .terms()
        .iter()
        .zip(labels)
        .filter(|(t, _)| t.role == role)
        .map(|(_, l)| l)
        .collect()
}

struct Simulate;

impl Command for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let cfg = ctx.config;
        let block = cfg.simulate.as_ref().expect("dispatched on presence");
        let model = cfg.model()?;
        let psi0 = cfg.initial_state(model.dim())?;
        let theta = cfg.observable(model.dim())?;
        let times = block.grid().times("simulate")?;
        let labels = cfg.model.as_ref().expect("model built above").labels();
        let path = build_path(times, &labels, &block.schedule, "simulate.schedule")?;
        let stepper = stepper(&block.stepper).map_err(core("simulate.stepper"))?;
        let traj = propagate(&model, &path, &psi0, &theta, stepper.as_ref()).map_err(core("simulate"))?;
        out.add("trajectory.csv", |w| traj.write_csv(w, block.write_state))
    }
}

struct Track;

impl Command for Track {
    fn name(&self) -> &'static str {
        "track"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let cfg = ctx.config;
        let block = cfg.track.as_ref().expect("dispatched on presence");
        let model = cfg.model()?;
        let psi0 = cfg.initial_state(model.dim())?;
        let theta = cfg.observable(model.dim())?;
        let times = block.grid().times("track")?;
        let system = labels_with_role(ctx, &model, Role::System);
        let path = build_path(times, &system, &block.schedule, "track.schedule")?;
        let band = &block.band;
        let ts = TimescaleConfig::new(band.t0, band.pulse_duration, band.observation_window).map_err(core("track.band"))?;
        stepper(&block.method).map_err(core("track.method"))?;
        let opts = TrackOptions {
            method: block.method.clone(),
            control: ControlOptions {
                singular_threshold: block.singular_threshold,
                bracket: (block.bracket[0], block.bracket[1]),
                ..ControlOptions::default()
            },
            tolerance: block.tolerance,
            ..TrackOptions::default()
        };
        match track(&model, &path, &psi0, &theta, &opts) {
            Ok(result) => {
                out.add("tracking.csv", |w| result.write_csv(w))?;
                let report = tolerance_band(&result.trajectory, &ts, band.band).map_err(core("track.band"))?;
                out.add("band.csv", |w| {
                    let mut csv = csv_writer(w);
                    csv.write_record(["theta_mean", "theta_amplitude", "fitted_omega", "ratio", "within_band"])?;
                    csv.write_record([
                        fmt_f64(report.theta_mean),
                        fmt_f64(report.theta_amplitude),
                        fmt_f64(report.fitted_omega),
                        fmt_f64(report.ratio),
                        report.within_band.to_string(),
                    ])?;
                    csv.flush()?;
                    Ok(())
                })
            }
            Err(abort) => {
                if let Some(partial) = abort.partial.as_ref().filter(|p| !p.is_empty()) {
                    out.add("tracking.csv", |w| partial.write_csv(w))?;
                }
                Err(CliError::from_core(abort.error, "track"))
            }
        }
    }
}

struct Optimize;

impl Command for Optimize {
    fn name(&self) -> &'static str {
        "optimize"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let cfg = ctx.config;
        let block = cfg.optimize.as_ref().expect("dispatched on presence");
        let model = cfg.model()?;
        let psi0 = cfg.initial_state(model.dim())?;
        let theta = cfg.observable(model.dim())?;
        let times = block.grid().times("optimize")?;
        let system = labels_with_role(ctx, &model, Role::System);
        let system_path = build_path(times.clone(), &system, &block.schedule, "optimize.schedule")?;
        let initial = block.initial_control.sample(&times, "optimize.initial_control")?;
        let problem = ControlProblem {
            model: &model,
            system_path: &system_path,
            psi0: &psi0,
            theta: &theta,
            cost: CostConfig {
                theta_target: block.theta_target,
                w_terminal: block.w_terminal,
                w_running: block.w_running,
                w_fluence: block.w_fluence,
                horizon: block.duration,
            },
        };
        problem.validate().map_err(core("optimize"))?;
        let defaults = OptimizeOptions::default();
        let opts = OptimizeOptions {
            max_iters: block.max_iters.unwrap_or(defaults.max_iters),
            step_size: block.step_size.unwrap_or(defaults.step_size),
            tolerance: block.tolerance.unwrap_or(defaults.tolerance),
            gradient_tolerance: block.gradient_tolerance.unwrap_or(defaults.gradient_tolerance),
            ..defaults
        };
        let result = optimize(&problem, &initial, &opts).map_err(core("optimize"))?;
        let traj = problem.forward(&result.control).map_err(core("optimize"))?;
        out.add("history.csv", |w| result.write_history_csv(w))?;
        out.add("field.csv", |w| result.write_field_csv(&times, w))?;
        out.add("trajectory.csv", |w| traj.write_csv(w, false))?;
        let last = *result.history.last().expect("history starts with the initial cost");
        out.add("summary.csv", |w| {
            let mut csv = csv_writer(w);
            csv.write_record(["status", "accepted_iterations", "terminal", "running", "fluence", "total"])?;
            csv.write_record([
                result.status.as_str().to_string(),
                result.accepted_iterations().to_string(),
                fmt_f64(last.terminal),
                fmt_f64(last.running),
                fmt_f64(last.fluence),
                fmt_f64(last.total),
            ])?;
            csv.flush()?;
            Ok(())
        })
    }
}

struct Mesh;

impl Command for Mesh {
    fn name(&self) -> &'static str {
        "mesh"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let cfg = ctx.config;
        let block = cfg.mesh.as_ref().expect("dispatched on presence");
        let model = cfg.model()?;
        let psi0 = cfg.initial_state(model.dim())?;
        let theta = cfg.observable(model.dim())?;
        let system = labels_with_role(ctx, &model, Role::System);
        if system.len() != 2 {
            return Err(CliError::validation(
                "model.terms",
                format!("mesh needs exactly two system parameters, found {}", system.len()),
            ));
        }
        let axes = Axes::new(block.axis1.nodes(), block.axis2.nodes()).map_err(core("mesh.axis1"))?;
        let statistic = block.statistic()?;
        let stepper = stepper(&block.stepper).map_err(core("mesh.stepper"))?;
        interpolant_registry().get(&block.interpolant).map_err(core("mesh.interpolant"))?;
        if block.labels.is_empty() {
            return Err(CliError::validation("mesh.labels", "at least one control label is required"));
        }
        block.grid().times("mesh")?;
        let template = ConstantProtocol {
            duration: block.duration,
            steps: block.steps,
        };
        let family = evaluate_family(&model, &template, &psi0, &theta, &axes, &block.labels, statistic, stepper.as_ref())
            .map_err(core("mesh"))?;

        out.add("labels.csv", |w| {
            let mut csv = csv_writer(w);
            csv.write_record(["index", "a3"])?;
            for (i, m) in family.iter().enumerate() {
                csv.write_record([i.to_string(), fmt_f64(m.control_label())])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        let mut level_curves: Vec<Vec<LevelCurve>> = Vec::new();
        for (i, mesh) in family.iter().enumerate() {
            out.add(format!("mesh_{i:03}.csv"), |w| mesh.write_csv(w))?;
            let curves: Vec<LevelCurve> = block.levels.iter().map(|&c| extract_level(mesh, c)).collect();
            for (k, curve) in curves.iter().enumerate() {
                out.add(format!("curve_{i:03}_{k:03}.csv"), |w| curve.write_csv(w))?;
            }
            level_curves.push(curves);
        }

        if let Some(st) = &block.stationarity {
            let cc = CostConfig {
                theta_target: st.theta_target,
                w_terminal: 0.0,
                w_running: st.w_running,
                w_fluence: 0.0,
                horizon: block.duration,
            };
            let h = ControlCost {
                w_control: st.w_control,
                w_a1: st.w_a1,
                w_a2: st.w_a2,
            };
            for (i, mesh) in family.iter().enumerate() {
                let r = stationarity_residual(&family, mesh.control_label(), &cc, &h).map_err(core("mesh.stationarity"))?;
                out.add(format!("residual_{i:03}.csv"), |w| r.write_csv(w))?;
                let zero = extract_level(&r, 0.0);
                out.add(format!("residual_curve_{i:03}.csv"), |w| zero.write_csv(w))?;
                for (k, curve) in level_curves[i].iter().enumerate() {
                    let points = intersect(curve, &zero);
                    out.add(format!("optimal_{i:03}_{k:03}.csv"), |w| write_points_csv(&points, w))?;
                }
            }
        }

        if let Some(follow) = &block.follow {
            let times = follow.grid().times("mesh.follow")?;
            let path = build_path(times.clone(), &system, &follow.schedule, "mesh.follow.schedule")?;
            let a3 = follow_level(&family, &path, follow.level, &block.interpolant).map_err(core("mesh.follow"))?;
            out.add("follow.csv", |w| {
                let mut csv = csv_writer(w);
                csv.write_record(["t", "a1", "a2", "a3"])?;
                for (k, z) in a3.iter().enumerate() {
                    let row = path.row(k);
                    csv.write_record([fmt_f64(times[k]), fmt_f64(row[0]), fmt_f64(row[1]), fmt_f64(*z)])?;
                }
                csv.flush()?;
                Ok(())
            })?;
        }
        Ok(())
    }
}

struct Contour;

impl Command for Contour {
    fn name(&self) -> &'static str {
        "contour"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let block = ctx.config.contour.as_ref().expect("dispatched on presence");
        let file = ctx.open(&block.mesh, "contour.mesh")?;
        let mesh = ParameterMesh::read_csv(file, 0.0, Statistic::Terminal).map_err(core("contour.mesh"))?;
        if block.levels.is_empty() {
            return Err(CliError::validation("contour.levels", "at least one level is required"));
        }
        for (k, &c) in block.levels.iter().enumerate() {
            if !c.is_finite() {
                return Err(CliError::validation(&format!("contour.levels[{k}]"), "must be finite"));
            }
            let curve = extract_level(&mesh, c);
            out.add(format!("curve_{k:03}.csv"), |w| curve.write_csv(w))?;
        }
        Ok(())
    }
}

struct Intersect;

impl Command for Intersect {
    fn name(&self) -> &'static str {
        "intersect"
    }

    fn run(&self, ctx: &Context<'_>, out: &mut ArtifactSet) -> Result<(), CliError> {
        let block = ctx.config.intersect.as_ref().expect("dispatched on presence");
        let read = |p: &str, key: &str| -> Result<LevelCurve, CliError> {
            LevelCurve::read_csv(ctx.open(p, key)?, 0.0).map_err(core(key))
        };
        let a = read(&block.curve_a, "intersect.curve_a")?;
        let b = read(&block.curve_b, "intersect.curve_b")?;
        let points = intersect(&a, &b);
        out.add("intersections.csv", |w| write_points_csv(&points, w))
    }
}

/// Directory of `config_path`, or `.` for a bare file name.
pub fn config_dir(config_path: &Path) -> PathBuf {
    match config_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
