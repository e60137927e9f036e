//! Expectation-value tracking: pick the control so that d⟨Θ⟩/dt = 0 while
//! the system parameters follow a prescribed path.
//!
//! With i dψ/dt = Hψ the Ehrenfest rate is d⟨Θ⟩/dt = i⟨[H, Θ]⟩. Writing
//! H = H_rest + f_n(a_n)V_n, the rate is affine in f_n(a_n):
//!
//! ```text
//! d⟨Θ⟩/dt = i⟨[H_rest, Θ]⟩ + f_n(a_n)·i⟨[V_n, Θ]⟩
//! ```
//!
//! so the constancy condition fixes f_n(a_n) = −i⟨[H_rest, Θ]⟩ / i⟨[V_n, Θ]⟩.
//! A linear control inverts directly; other coefficient kinds are inverted by
//! bracketed root finding.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hamiltonian::{uniform_step, ParameterPath, ParameterizedHamiltonian};
use crate::io::{csv_writer, fmt_f64};
use crate::operator::{check_dims, HermitianOperator, LevelSetRates, State};
use crate::propagator::{stepper, Trajectory};
use crate::roots::bracketed_root;

/// i⟨ψ|[H, Θ]|ψ⟩, the instantaneous rate of ⟨Θ⟩ under H.
pub fn theta_dot(psi: &State, h: &HermitianOperator, theta: &HermitianOperator) -> Result<f64> {
    check_dims("theta_dot hamiltonian", psi.dim(), h.dim())?;
    check_dims("theta_dot observable", psi.dim(), theta.dim())?;
    // i(⟨Hψ|Θψ⟩ − ⟨Θψ|Hψ⟩) = −2 Im⟨Hψ|Θψ⟩
    let hp = h.matrix() * psi.amplitudes();
    let tp = theta.matrix() * psi.amplitudes();
    Ok(-2.0 * hp.dotc(&tp).im)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOptions {
    /// |i⟨[V_n, Θ]⟩| below this is singular. `None` uses 1e−8·‖Θ‖·‖V_n‖.
    pub singular_threshold: Option<f64>,
    /// Search interval for non-linear control coefficients.
    pub bracket: (f64, f64),
    /// Tolerance on f_n(a_n) for the non-linear inversion.
    pub root_tolerance: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            singular_threshold: None,
            bracket: (-10.0, 10.0),
            root_tolerance: 1e-12,
        }
    }
}

/// Numerator and denominator of the control law at one state.
#[derive(Clone, Copy, Debug)]
struct ControlLaw {
    drift_rate: f64,
    control_rate: f64,
}

struct ControlSolver<'a> {
    model: &'a ParameterizedHamiltonian,
    theta: &'a HermitianOperator,
    opts: &'a ControlOptions,
    threshold: f64,
}

impl<'a> ControlSolver<'a> {
    fn new(model: &'a ParameterizedHamiltonian, theta: &'a HermitianOperator, opts: &'a ControlOptions) -> Result<Self> {
        check_dims("observable", model.dim(), theta.dim())?;
        let threshold = opts
            .singular_threshold
            .unwrap_or_else(|| 1e-8 * theta.spectral_norm() * model.control_term().op.spectral_norm());
        Ok(Self {
            model,
            theta,
            opts,
            threshold,
        })
    }

    fn law(&self, system: &[f64], psi: &State) -> Result<ControlLaw> {
        let a = self.model.with_control(system, 0.0)?;
        let rest = self.model.assemble_without_control(&a)?;
        Ok(ControlLaw {
            drift_rate: theta_dot(psi, &rest, self.theta)?,
            control_rate: theta_dot(psi, &self.model.control_term().op, self.theta)?,
        })
    }

    fn check(&self, law: &ControlLaw, step: usize) -> Result<()> {
        if !(law.control_rate.abs() >= self.threshold) {
            return Err(Error::SingularControl {
                step,
                denominator: law.control_rate,
            });
        }
        Ok(())
    }

    fn invert(&self, law: &ControlLaw) -> Result<f64> {
        let target = -law.drift_rate / law.control_rate;
        let coeff = &self.model.control_term().coeff;
        match coeff.linear_slope() {
            Some(s) if s != 0.0 => Ok(target / s),
            Some(_) => Err(Error::SingularControl {
                step: 0,
                denominator: 0.0,
            }),
            None => {
                let (lo, hi) = self.opts.bracket;
                bracketed_root(|x| coeff.value(x) - target, lo, hi, self.opts.root_tolerance)
            }
        }
    }
}

/// Control value a_n that makes d⟨Θ⟩/dt vanish at ψ for system parameters
/// `system` (all parameters except the control, in model order).
pub fn solve_control(
    model: &ParameterizedHamiltonian,
    system: &[f64],
    psi: &State,
    theta: &HermitianOperator,
    opts: &ControlOptions,
) -> Result<f64> {
    let solver = ControlSolver::new(model, theta, opts)?;
    let law = solver.law(system, psi)?;
    solver.check(&law, 0)?;
    solver.invert(&law)
}

/// Level-set rates at full parameters `a`: the drift rate with the control
/// term removed and ⟨Θ_a⟩ for every parameter.
pub fn level_set_rates(
    model: &ParameterizedHamiltonian,
    a: &[f64],
    psi: &State,
    theta: &HermitianOperator,
) -> Result<LevelSetRates> {
    let rest = model.assemble_without_control(a)?;
    let theta_o = theta_dot(psi, &rest, theta)?;
    let theta_a = (0..model.n_params())
        .map(|i| theta_dot(psi, &model.grad_h(a, i)?, theta))
        .collect::<Result<Vec<_>>>()?;
    LevelSetRates::new(theta_o, theta_a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackOptions {
    pub method: String,
    pub control: ControlOptions,
    /// Residual |d⟨Θ⟩/dt| above which a step is flagged.
    pub tolerance: f64,
    pub max_fixed_point_iterations: usize,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            method: "exact".to_string(),
            control: ControlOptions::default(),
            tolerance: 1e-8,
            max_fixed_point_iterations: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualWarning {
    pub step: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResult {
    pub control_values: Vec<f64>,
    pub trajectory: Trajectory,
    pub rates: Vec<LevelSetRates>,
    pub residuals: Vec<f64>,
    pub warnings: Vec<ResidualWarning>,
}

impl TrackingResult {
    pub fn len(&self) -> usize {
        self.control_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_values.is_empty()
    }

    /// Full parameter path (system columns plus the solved control) covering
    /// the tracked prefix of `system_path`.
    pub fn control_path(&self, model: &ParameterizedHamiltonian, system_path: &ParameterPath) -> Result<ParameterPath> {
        let k = self.len();
        let prefix = ParameterPath::new(system_path.times()[..k].to_vec(), system_path.values()[..k].to_vec())?;
        prefix.with_inserted_column(model.control_index(), &self.control_values)
    }

    /// CSV with header `t,control,theta,residual,theta_o,theta_a_1..theta_a_n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        let n = self.rates.first().map_or(0, |r| r.theta_a.len());
        let mut header: Vec<String> = ["t", "control", "theta", "residual", "theta_o"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=n).map(|i| format!("theta_a_{i}")));
        out.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                fmt_f64(self.trajectory.times[k]),
                fmt_f64(self.control_values[k]),
                fmt_f64(self.trajectory.theta_values[k]),
                fmt_f64(self.residuals[k]),
                fmt_f64(self.rates[k].theta_o),
            ];
            row.extend(self.rates[k].theta_a.iter().map(|&v| fmt_f64(v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A tracking run that stopped early. `partial` holds every accepted grid
/// point before the failure.
#[derive(Debug)]
pub struct TrackAbort {
    pub error: Error,
    pub partial: Option<TrackingResult>,
}

impl std::fmt::Display for TrackAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tracking aborted: {}", self.error)
    }
}

impl std::error::Error for TrackAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrackAbort> for Error {
    fn from(a: TrackAbort) -> Self {
        a.error
    }
}

impl From<Error> for TrackAbort {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

struct Recorder {
    result: TrackingResult,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        model: &ParameterizedHamiltonian,
        theta: &HermitianOperator,
        tolerance: f64,
        step: usize,
        t: f64,
        system: &[f64],
        control: f64,
        psi: State,
    ) -> Result<()> {
        let a = model.with_control(system, control)?;
        let residual = theta_dot(&psi, &model.assemble(&a)?, theta)?.abs();
        let rates = level_set_rates(model, &a, &psi, theta)?;
        if step == 0 {
            self.result.trajectory = Trajectory::start(t, psi, theta)?;
        } else {
            self.result.trajectory.push(t, psi, theta)?;
        }
        self.result.control_values.push(control);
        self.result.rates.push(rates);
        self.result.residuals.push(residual);
        if residual > tolerance {
            self.result.warnings.push(ResidualWarning { step, residual });
        }
        Ok(())
    }

    fn abort(self, error: Error) -> TrackAbort {
        let partial = if self.result.is_empty() { None } else { Some(self.result) };
        TrackAbort { error, partial }
    }
}

/// Hold ⟨Θ⟩ fixed along `system_path` (columns = system parameters in model
/// order) by solving for the control at every grid point.
///
/// Each interval is propagated with the midpoint parameters, the control
/// entering as (E_k + E_{k+1})/2. E_{k+1} is found by fixed-point iteration
/// on the end-of-step state, so replaying the emitted control values through
/// [`crate::propagator::propagate`] reproduces the tracked states exactly.
///
/// The run aborts with [`Error::SingularControl`] when |i⟨[V_n, Θ]⟩| drops
/// below the singular threshold or changes sign between grid points (the
/// control law has a pole inside the interval).
pub fn track(
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    psi0: &State,
    theta: &HermitianOperator,
    opts: &TrackOptions,
) -> std::result::Result<TrackingResult, TrackAbort> {
    check_dims("initial state", model.dim(), psi0.dim())?;
    if system_path.n_params() + 1 != model.n_params() {
        return Err(Error::DimensionMismatch {
            context: "system path parameters",
            expected: model.n_params() - 1,
            found: system_path.n_params(),
        }
        .into());
    }
    let dt = system_path.uniform_step()?;
    let stepper = stepper(&opts.method)?;
    let solver = ControlSolver::new(model, theta, &opts.control)?;
    let times = system_path.times();

    let mut rec = Recorder {
        result: TrackingResult {
            control_values: Vec::new(),
            trajectory: Trajectory::start(times[0], psi0.clone(), theta)?,
            rates: Vec::new(),
            residuals: Vec::new(),
            warnings: Vec::new(),
        },
    };

    let law0 = solver.law(system_path.row(0), psi0)?;
    if let Err(e) = solver.check(&law0, 0) {
        return Err(rec.abort(e));
    }
    let mut control = match solver.invert(&law0) {
        Ok(c) => c,
        Err(e) => return Err(rec.abort(e)),
    };
    let mut denominator = law0.control_rate;
    let mut psi = psi0.clone();
    if let Err(e) = rec.record(model, theta, opts.tolerance, 0, times[0], system_path.row(0), control, psi.clone()) {
        return Err(rec.abort(e));
    }

    for k in 0..system_path.len() - 1 {
        let step = k + 1;
        let system_mid = system_path.midpoint(k);
        let system_next = system_path.row(step);
        let mut next_control = control;
        let mut next_psi;
        let mut next_law;
        let mut iterations = 0;
        loop {
            iterations += 1;
            let a_mid = model
                .with_control(&system_mid, 0.5 * (control + next_control))
                .and_then(|a| model.assemble(&a));
            let h = match a_mid {
                Ok(h) => h,
                Err(e) => return Err(rec.abort(e)),
            };
            next_psi = match stepper.step(&psi, &h, dt) {
                Ok(p) => p,
                Err(e) => return Err(rec.abort(e)),
            };
            next_law = match solver.law(system_next, &next_psi) {
                Ok(l) => l,
                Err(e) => return Err(rec.abort(e)),
            };
            let crossed = next_law.control_rate.signum() != denominator.signum();
            if crossed {
                return Err(rec.abort(Error::SingularControl {
                    step,
                    denominator: next_law.control_rate,
                }));
            }
            if let Err(Error::SingularControl { denominator, .. }) = solver.check(&next_law, step) {
                return Err(rec.abort(Error::SingularControl { step, denominator }));
            }
            let updated = match solver.invert(&next_law) {
                Ok(c) => c,
                Err(e) => return Err(rec.abort(e)),
            };
            let converged = (updated - next_control).abs() <= 4.0 * f64::EPSILON * updated.abs().max(1.0);
            if converged || iterations >= opts.max_fixed_point_iterations {
                break;
            }
            next_control = updated;
        }
        control = next_control;
        denominator = next_law.control_rate;
        psi = next_psi;
        if let Err(e) = rec.record(model, theta, opts.tolerance, step, times[step], system_next, control, psi.clone()) {
            return Err(rec.abort(e));
        }
    }
    Ok(rec.result)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimescaleConfig {
    /// Carrier period scale, about 1/ω_rad.
    pub t0: f64,
    /// Pulse length, a whole number of carrier periods.
    pub pulse_duration: f64,
    /// Averaging window over which ⟨Θ⟩ is judged constant.
    pub observation_window: f64,
}

impl TimescaleConfig {
    pub fn new(t0: f64, pulse_duration: f64, observation_window: f64) -> Result<Self> {
        let ts = Self {
            t0,
            pulse_duration,
            observation_window,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t0 > 0.0
            && self.t0 <= self.pulse_duration
            && self.pulse_duration <= self.observation_window
            && self.observation_window.is_finite();
        if !ok {
            return Err(Error::invalid(
                "timescales",
                format!(
                    "need 0 < t0 <= pulse_duration <= observation_window, got {} / {} / {}",
                    self.t0, self.pulse_duration, self.observation_window
                ),
            ));
        }
        Ok(())
    }
}

/// ⟨Θ⟩ summarized as mean + amplitude·sin(ωt).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToleranceBandReport {
    pub theta_mean: f64,
    pub theta_amplitude: f64,
    pub fitted_omega: f64,
    pub ratio: f64,
    pub within_band: bool,
}

pub fn tolerance_band(trajectory: &Trajectory, ts: &TimescaleConfig, band: f64) -> Result<ToleranceBandReport> {
    tolerance_band_series(&trajectory.times, &trajectory.theta_values, ts, band)
}

/// Band analysis of a uniformly sampled series.
///
/// The mean is the trailing observation-window average at the final time.
/// The oscillation is a least-squares fit of c + A·sin(ωt) + B·cos(ωt) to the
/// deviation from that mean, with ω seeded at the largest discrete Fourier
/// peak and refined within one bin.
pub fn tolerance_band_series(times: &[f64], values: &[f64], ts: &TimescaleConfig, band: f64) -> Result<ToleranceBandReport> {
    ts.validate()?;
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::GridMismatch(format!(
            "{} times and {} values",
            times.len(),
            values.len()
        )));
    }
    let dt = uniform_step(times)?;
    let span = times[times.len() - 1] - times[0];
    if ts.observation_window > span * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "tolerance band",
            format!("observation window {} exceeds trajectory span {span}", ts.observation_window),
        ));
    }

    let t_end = times[times.len() - 1];
    let start = times
        .iter()
        .position(|&t| t >= t_end - ts.observation_window - 1e-9 * dt)
        .unwrap_or(0);
    let theta_mean = trapezoid_mean(&times[start..], &values[start..]);

    let residual: Vec<f64> = values.iter().map(|v| v - theta_mean).collect();
    let scale = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let (theta_amplitude, fitted_omega) = if scale <= 1e-14 * theta_mean.abs().max(1.0) {
        (0.0, 0.0)
    } else {
        fit_sinusoid(times, &residual, dt)
    };

    let ratio = if theta_mean != 0.0 {
        theta_amplitude / theta_mean.abs()
    } else if theta_amplitude == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ToleranceBandReport {
        theta_mean,
        theta_amplitude,
        fitted_omega,
        ratio,
        within_band: ratio <= band,
    })
}

pub(crate) fn trapezoid_mean(times: &[f64], values: &[f64]) -> f64 {
    if times.len() < 2 {
        return values[0];
    }
    let area: f64 = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    area / (times[times.len() - 1] - times[0])
}

/// Sum of squared residuals and amplitude of the best c + A sin + B cos fit.
fn sinusoid_fit_at(times: &[f64], data: &[f64], omega: f64) -> (f64, f64) {
    use nalgebra::{Matrix3, Vector3};
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&t, &y) in times.iter().zip(data) {
        let row = Vector3::new(1.0, (omega * t).sin(), (omega * t).cos());
        ata += row * row.transpose();
        atb += row * y;
    }
    let Some(coef) = ata.lu().solve(&atb) else {
        return (f64::INFINITY, 0.0);
    };
    let sse = times
        .iter()
        .zip(data)
        .map(|(&t, &y)| {
            let fit = coef[0] + coef[1] * (omega * t).sin() + coef[2] * (omega * t).cos();
            (y - fit).powi(2)
        })
        .sum();
    (sse, coef[1].hypot(coef[2]))
}

fn fit_sinusoid(times: &[f64], data: &[f64], dt: f64) -> (f64, f64) {
    let n = data.len();
    let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = (1..=n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap_or(1);
    let bin = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let seed = peak as f64 * bin;

    // Coarse scan across ±1 bin, then golden-section refinement.
    let sse = |w: f64| sinusoid_fit_at(times, data, w).0;
    let samples = 40;
    let lo = (seed - bin).max(0.25 * bin);
    let hi = seed + bin;
    let step = (hi - lo) / samples as f64;
    let best = (0..=samples)
        .map(|i| lo + step * i as f64)
        .min_by(|&a, &b| sse(a).total_cmp(&sse(b)))
        .unwrap_or(seed);
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..100 {
        if (b - a) <= 1e-13 * seed.max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sse(d);
        }
    }
    let omega = 0.5 * (a + b);
    (sinusoid_fit_at(times, data, omega).1, omega)
}
