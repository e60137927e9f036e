//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use num_complex::Complex64;
use qlevel_core::hamiltonian::uniform_times;
use qlevel_core::levelset::{
    extract_level, follow_level, intersect, stationarity_residual, Axes, ConstantProtocol, ControlCost,
    ParameterMesh, Statistic,
};
use qlevel_core::oct::{optimize, ControlProblem, CostConfig, OptimizeOptions};
use qlevel_core::propagator::ExactStepper;
use qlevel_core::tracking::{theta_dot, tolerance_band_series, track, TimescaleConfig, TrackOptions};
use qlevel_core::{
    expectation, propagate, Error, HermitianOperator, ParameterPath, ParameterizedHamiltonian, Role, State, Term,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sx() -> HermitianOperator {
    HermitianOperator::pauli_x()
}
fn sy() -> HermitianOperator {
    HermitianOperator::pauli_y()
}
fn sz() -> HermitianOperator {
    HermitianOperator::pauli_z()
}

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, name: &str) -> HermitianOperator {
    let mut entries = vec![c(0.0, 0.0); n * n];
    for i in 0..n {
        entries[i * n + i] = c(rng.gen_range(-1.0..1.0), 0.0);
        for j in i + 1..n {
            let z = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            entries[i * n + j] = z;
            entries[j * n + i] = z.conj();
        }
    }
    HermitianOperator::from_row_major(name, &entries).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> State {
    let amps: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let amps: Vec<Complex64> = amps.iter().map(|z| z / norm).collect();
    State::from_slice(&amps).unwrap()
}

fn equator_state(phase: f64) -> State {
    State::from_slice(&[c(FRAC_1_SQRT_2, 0.0), Complex64::from_polar(FRAC_1_SQRT_2, phase)]).unwrap()
}

fn no_system(times: Vec<f64>) -> ParameterPath {
    ParameterPath::new(times.clone(), vec![Vec::new(); times.len()]).unwrap()
}

/// (Δ/2)σz + κσy + Eσx, κ a system parameter.
fn drift_model(delta: f64) -> ParameterizedHamiltonian {
    ParameterizedHamiltonian::new(
        sz().scaled(0.5 * delta),
        vec![Term::linear("kappa", sy(), Role::System), Term::linear("E", sx(), Role::Control)],
    )
    .unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_cli(command: &str, config: &Path, out: &Path, threads: usize) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_qlevel"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .unwrap()
        .status
        .code()
}

/// Max radial distance of the level-1 vertices of x² + y² from the unit
/// circle, with grid spacing h on [−1.5, 1.5]².
fn circle_error(h: f64) -> f64 {
    let n = (3.0 / h).round() as usize + 1;
    let axes = Axes::uniform((-1.5, 1.5), n, (-1.5, 1.5), n).unwrap();
    let mesh = ParameterMesh::from_fn(axes, 0.0, Statistic::Terminal, |x, y| x * x + y * y).unwrap();
    extract_level(&mesh, 1.0)
        .vertices()
        .map(|p| (p[0].hypot(p[1]) - 1.0).abs())
        .fold(0.0, f64::max)
}

fn ehrenfest_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let n = rng.gen_range(2..=4);
        let model = ParameterizedHamiltonian::new(
            random_hermitian(&mut rng, n, "H0"),
            vec![Term::linear("E", random_hermitian(&mut rng, n, "V"), Role::Control)],
        )
        .map_err(fail)?;
        let e = rng.gen_range(-1.0..1.0);
        let theta = random_hermitian(&mut rng, n, "theta");
        let psi0 = random_state(&mut rng, n);
        let h = model.assemble(&[e]).map_err(fail)?;
        let mut errors = Vec::new();
        for dt in [0.02f64, 0.005] {
            let steps = (1.2 / dt).round() as usize;
            let path = ParameterPath::constant(uniform_times(0.0, 1.2, steps), &[e]).map_err(fail)?;
            let traj = propagate(&model, &path, &psi0, &theta, &ExactStepper).map_err(fail)?;
            let mut err: f64 = 0.0;
            for s in 1..=10 {
                let k = (0.1 * s as f64 / dt).round() as usize;
                let fd = (traj.theta_values[k + 1] - traj.theta_values[k - 1]) / (2.0 * dt);
                let rate = theta_dot(&traj.states[k], &h, &theta).map_err(fail)?;
                err = err.max((fd - rate).abs());
            }
            errors.push(err);
        }
        let ratio = errors[0] / errors[1];
        worst = (worst.0.min(ratio), worst.1.max(ratio));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 >= 14.0 && worst.1 <= 18.0 && secs < 10.0,
        format!("error ratio in [{:.3}, {:.3}] over 20 models, {secs:.2} s", worst.0, worst.1),
    )
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let theta = random_hermitian(&mut rng, 3, "theta");
    let theta_sq = HermitianOperator::new("theta^2", theta.matrix() * theta.matrix()).map_err(fail)?;
    let model = ParameterizedHamiltonian::new(
        HermitianOperator::zeros(3),
        vec![Term::linear("a1", theta.clone(), Role::System), Term::linear("a2", theta_sq, Role::Control)],
    )
    .map_err(fail)?;
    let path = ParameterPath::from_fn(uniform_times(0.0, 10.0, 10_000), |t| {
        vec![t.sin() + 0.3 * t, 1.0 + 0.5 * (3.0 * t).cos()]
    })
    .map_err(fail)?;
    let psi0 = random_state(&mut rng, 3);
    let traj = propagate(&model, &path, &psi0, &theta, &ExactStepper).map_err(fail)?;
    let v0 = traj.theta_values[0];
    let drift = traj.theta_values.iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
    check(drift < 1e-8, format!("max drift {drift:.3e} over 10000 steps"))
}

fn level_set_tracking() -> Outcome {
    let model = drift_model(0.1);
    let path = ParameterPath::from_fn(uniform_times(0.0, 10.0, 10_000), |t| vec![0.04 * t]).map_err(fail)?;
    let psi0 = equator_state(FRAC_PI_4);
    let res = track(&model, &path, &psi0, &sz(), &TrackOptions::default()).map_err(fail)?;
    let v0 = res.trajectory.theta_values[0];
    let drift = res.trajectory.theta_values.iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
    let full = res.control_path(&model, &path).map_err(fail)?;
    let replay = propagate(&model, &full, &psi0, &sz(), &ExactStepper).map_err(fail)?;
    let diff = max_abs_diff(&replay.theta_values, &res.trajectory.theta_values);
    check(
        drift < 1e-4 && diff < 1e-10,
        format!("tracking drift {drift:.3e}, replay difference {diff:.3e}"),
    )
}

fn singularity_handling() -> Outcome {
    let expect = (3.0 * PI / 4.0 / 1e-3).ceil() as usize;
    let path = ParameterPath::constant(uniform_times(0.0, 4.0, 4000), &[0.0]).map_err(fail)?;
    let err = track(&drift_model(1.0), &path, &equator_state(FRAC_PI_4), &sz(), &TrackOptions::default())
        .err()
        .ok_or("tracking did not abort")?;
    let step = match err.error {
        Error::SingularControl { step, .. } => step,
        ref e => return Err(format!("unexpected error {e}")),
    };

    let tmp = tempfile::tempdir().map_err(fail)?;
    let code = run_cli("track", &fixture("singular_track.toml"), tmp.path(), 1);
    let mut clean = true;
    let mut files = 0;
    for entry in fs::read_dir(tmp.path()).map_err(fail)? {
        let text = fs::read_to_string(entry.map_err(fail)?.path()).map_err(fail)?.to_lowercase();
        clean &= !text.contains("nan") && !text.contains("inf");
        files += 1;
    }
    check(
        step == expect && code == Some(5) && clean && files > 0,
        format!("abort at step {step} (expected {expect}), cli exit {code:?}, {files} files free of NaN: {clean}"),
    )
}

fn rabi_oracle() -> Outcome {
    let model =
        ParameterizedHamiltonian::new(HermitianOperator::zeros(2), vec![Term::linear("E", sx().scaled(0.5), Role::Control)])
            .map_err(fail)?;
    let path = ParameterPath::constant(uniform_times(0.0, 2.0 * PI, 1000), &[1.0]).map_err(fail)?;
    let traj = propagate(&model, &path, &State::basis(2, 0).map_err(fail)?, &sz(), &ExactStepper).map_err(fail)?;
    let oracle: Vec<f64> = traj.times.iter().map(|t| t.cos()).collect();
    let err = max_abs_diff(&traj.theta_values, &oracle);
    check(err < 1e-6, format!("max |<sz> - cos t| = {err:.3e}"))
}

fn adjoint_gradient() -> Outcome {
    let start = Instant::now();
    let model = ParameterizedHamiltonian::new(sz().scaled(0.5), vec![Term::linear("E", sx(), Role::Control)])
        .map_err(fail)?;
    let steps = 500;
    let sys = no_system(uniform_times(0.0, 5.0, steps));
    let psi0 = State::basis(2, 0).map_err(fail)?;
    let theta = sz();
    let control: Vec<f64> = vec![0.1; steps + 1];
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for w in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.1], [0.5, 2.0, 1.0]] {
        let p = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: CostConfig {
                theta_target: -1.0,
                w_terminal: w[0],
                w_running: w[1],
                w_fluence: w[2],
                horizon: 5.0,
            },
        };
        let (_, g) = p.cost_and_gradient(&control).map_err(fail)?;
        let mut fd = vec![0.0; control.len()];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut up = control.clone();
            let mut down = control.clone();
            up[k] += eps;
            down[k] -= eps;
            let cp = p.evaluate(&up).map_err(fail)?.total;
            let cm = p.evaluate(&down).map_err(fail)?.total;
            *slot = (cp - cm) / (2.0 * eps);
        }
        let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst = worst.max(max_abs_diff(&g, &fd) / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.3e} over 4 weight sets, {secs:.2} s"),
    )
}

fn optimization() -> Outcome {
    let model =
        ParameterizedHamiltonian::new(HermitianOperator::zeros(2), vec![Term::linear("E", sx().scaled(0.5), Role::Control)])
            .map_err(fail)?;
    let steps = 200;
    let sys = no_system(uniform_times(0.0, PI, steps));
    let psi0 = State::basis(2, 0).map_err(fail)?;
    let theta = sz();
    let p = ControlProblem {
        model: &model,
        system_path: &sys,
        psi0: &psi0,
        theta: &theta,
        cost: CostConfig {
            theta_target: -1.0,
            w_terminal: 1.0,
            w_running: 0.0,
            w_fluence: 1e-3,
            horizon: PI,
        },
    };
    let res = optimize(&p, &vec![0.5; steps + 1], &OptimizeOptions::default()).map_err(fail)?;
    let z = expectation(&theta, p.forward(&res.control).map_err(fail)?.final_state()).map_err(fail)?;
    let decreasing = res.history.windows(2).all(|w| w[1].total < w[0].total);
    let iters = res.accepted_iterations();
    check(
        z <= -0.95 && iters <= 200 && decreasing,
        format!("terminal <sz> = {z:.4} after {iters} accepted iterations, strictly decreasing: {decreasing}"),
    )
}

fn tolerance_band() -> Outcome {
    let times = uniform_times(0.0, 20.0, 20_000);
    let values: Vec<f64> = times.iter().map(|t| 1.0 + 0.01 * (50.0 * t).sin()).collect();
    let ts = TimescaleConfig::new(2.0 * PI / 50.0, 1.0, 5.0).map_err(fail)?;
    let r = tolerance_band_series(&times, &values, &ts, 0.02).map_err(fail)?;
    let rel = [
        (r.theta_mean - 1.0).abs(),
        (r.theta_amplitude - 0.01).abs() / 0.01,
        (r.fitted_omega - 50.0).abs() / 50.0,
    ];
    check(
        rel.iter().all(|&e| e < 0.01),
        format!(
            "mean {:.6}, amplitude {:.6e}, omega {:.4} (relative errors {:.1e} / {:.1e} / {:.1e})",
            r.theta_mean, r.theta_amplitude, r.fitted_omega, rel[0], rel[1], rel[2]
        ),
    )
}

fn contour_geometry() -> Outcome {
    let h = 0.05;
    let coarse = circle_error(h);
    let fine = circle_error(h / 2.0);
    let order = (coarse / fine).log2();
    check(
        coarse < h * h && (1.7..=2.3).contains(&order),
        format!("radial error {coarse:.3e} at h = {h}, {fine:.3e} at h/2, order {order:.3}"),
    )
}

/// Bilinear value on a mesh, written independently of the library.
fn bilinear(mesh: &ParameterMesh, x: f64, y: f64) -> f64 {
    let cell = |axis: &[f64], v: f64| {
        let i = axis.partition_point(|&a| a <= v).clamp(1, axis.len() - 1) - 1;
        (i, (v - axis[i]) / (axis[i + 1] - axis[i]))
    };
    let (i, s) = cell(mesh.axis1(), x);
    let (j, t) = cell(mesh.axis2(), y);
    (1.0 - s) * (1.0 - t) * mesh.value(i, j)
        + s * (1.0 - t) * mesh.value(i + 1, j)
        + (1.0 - s) * t * mesh.value(i, j + 1)
        + s * t * mesh.value(i + 1, j + 1)
}

fn follow_level_criterion() -> Outcome {
    let axes = Axes::uniform((0.0, 1.0), 5, (0.0, 1.0), 5).map_err(fail)?;
    let labels = [-1.0, 0.0, 1.0, 2.0];
    let linear: Vec<ParameterMesh> = labels
        .iter()
        .map(|&a3| ParameterMesh::from_fn(axes.clone(), a3, Statistic::Terminal, |x, _| x + a3))
        .collect::<qlevel_core::Result<_>>()
        .map_err(fail)?;
    let path = ParameterPath::from_fn(uniform_times(0.0, 1.0, 50), |t| vec![t, 0.5]).map_err(fail)?;
    let a3 = follow_level(&linear, &path, 1.0, "bilinear").map_err(fail)?;
    let oracle: Vec<f64> = path.times().iter().map(|t| 1.0 - t).collect();
    let linear_err = max_abs_diff(&a3, &oracle);

    let model = ParameterizedHamiltonian::new(
        HermitianOperator::zeros(2),
        vec![
            Term::linear("a1", sz(), Role::System),
            Term::linear("a2", sx(), Role::System),
            Term::linear("a3", sy(), Role::Control),
        ],
    )
    .map_err(fail)?;
    let axes = Axes::uniform((0.2, 1.2), 11, (-0.5, 0.5), 11).map_err(fail)?;
    let family = qlevel_core::levelset::evaluate_family(
        &model,
        &ConstantProtocol { duration: 1.0, steps: 50 },
        &State::basis(2, 0).map_err(fail)?,
        &sz(),
        &axes,
        &[-0.5, 0.0, 0.5, 1.0],
        Statistic::Terminal,
        &ExactStepper,
    )
    .map_err(fail)?;
    let level = 0.3;
    let path = ParameterPath::from_fn(uniform_times(0.0, 1.0, 20), |t| vec![0.4 + 0.4 * t, -0.2 + 0.3 * t])
        .map_err(fail)?;
    let a3 = follow_level(&family, &path, level, "bilinear").map_err(fail)?;
    let mut quantum_err: f64 = 0.0;
    for (row, &z) in path.values().iter().zip(&a3) {
        let k = family
            .windows(2)
            .position(|w| w[0].control_label() <= z && z <= w[1].control_label())
            .ok_or(format!("a3 = {z} outside the label range"))?;
        let (m0, m1) = (&family[k], &family[k + 1]);
        let u = (z - m0.control_label()) / (m1.control_label() - m0.control_label());
        let phi = (1.0 - u) * bilinear(m0, row[0], row[1]) + u * bilinear(m1, row[0], row[1]);
        quantum_err = quantum_err.max((phi - level).abs());
    }
    check(
        linear_err < 1e-9 && quantum_err < 1e-8,
        format!("linear field error {linear_err:.3e}, quantum family max |phi - c| {quantum_err:.3e}"),
    )
}

fn stationarity_and_intersection() -> Outcome {
    let h = 0.05;
    let axes = Axes::uniform((-1.0, 1.0), 41, (-1.0, 1.0), 41).map_err(fail)?;
    let labels = [-0.75, -0.25, 0.25, 0.75];
    let theta_meshes: Vec<ParameterMesh> = labels
        .iter()
        .map(|&a3| ParameterMesh::from_fn(axes.clone(), a3, Statistic::Terminal, |x, _| a3 * x))
        .collect::<qlevel_core::Result<_>>()
        .map_err(fail)?;
    let cc = CostConfig {
        theta_target: 0.0,
        w_terminal: 0.0,
        w_running: 1.0,
        w_fluence: 0.0,
        horizon: 1.0,
    };
    let residuals: Vec<ParameterMesh> = labels
        .iter()
        .map(|&a3| stationarity_residual(&theta_meshes, a3, &cc, &ControlCost::default()))
        .collect::<qlevel_core::Result<_>>()
        .map_err(fail)?;
    let path =
        ParameterPath::from_fn(uniform_times(0.0, 1.0, 40), |t| vec![-0.9 + 1.8 * t, 0.3 * t]).map_err(fail)?;
    let zero = follow_level(&residuals, &path, 0.0, "bilinear").map_err(fail)?;
    let zero_err = zero.iter().map(|z| z.abs()).fold(0.0, f64::max);

    let circle = ParameterMesh::from_fn(axes.clone(), 0.0, Statistic::Terminal, |x, y| x * x + y * y).map_err(fail)?;
    let line = ParameterMesh::from_fn(axes, 0.0, Statistic::Terminal, |x, _| x).map_err(fail)?;
    let a = extract_level(&circle, 1.0);
    let b = extract_level(&line, 0.5);
    let points = intersect(&a, &b);
    let y = 0.75f64.sqrt();
    let expected = [[0.5, -y], [0.5, y]];
    let point_err = if points.len() == 2 {
        points
            .iter()
            .zip(&expected)
            .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    check(
        zero_err < h * h && points.len() == 2 && point_err < h * h,
        format!(
            "residual zero max |a3| {zero_err:.3e}, {} intersections with max error {point_err:.3e}",
            points.len()
        ),
    )
}

fn determinism() -> Outcome {
    let runs = [
        ("simulate", "rabi.toml"),
        ("track", "drift_track.toml"),
        ("track", "singular_track.toml"),
        ("optimize", "inversion.toml"),
        ("mesh", "precession_mesh.toml"),
        ("contour", "contour.toml"),
        ("intersect", "intersect.toml"),
    ];
    let mut compared = 0;
    for (command, config) in runs {
        let dirs = [tempfile::tempdir().map_err(fail)?, tempfile::tempdir().map_err(fail)?];
        let codes: Vec<Option<i32>> = dirs
            .iter()
            .zip([1, 4])
            .map(|(d, k)| run_cli(command, &fixture(config), d.path(), k))
            .collect();
        if codes[0] != codes[1] {
            return Err(format!("{config}: exit codes differ {codes:?}"));
        }
        let listing = |d: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
            let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(d)
                .map_err(fail)?
                .map(|e| {
                    let p = e.unwrap().path();
                    (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
                })
                .collect();
            files.sort();
            Ok(files)
        };
        let (a, b) = (listing(dirs[0].path())?, listing(dirs[1].path())?);
        if a.is_empty() || a != b {
            return Err(format!("{config}: artifacts differ between 1 and 4 threads"));
        }
        compared += a.len();
    }
    check(true, format!("{compared} artifacts identical across 7 runs at 1 and 4 threads"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("ehrenfest consistency", ehrenfest_consistency),
        ("conservation", conservation),
        ("level-set tracking", level_set_tracking),
        ("singularity handling", singularity_handling),
        ("rabi oracle", rabi_oracle),
        ("adjoint gradient", adjoint_gradient),
        ("optimization", optimization),
        ("tolerance band", tolerance_band),
        ("contour geometry", contour_geometry),
        ("follow level", follow_level_criterion),
        ("stationarity and intersection", stationarity_and_intersection),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
