//! Optimal control of ⟨Θ⟩ with a fluence penalty.
//!
//! The control E is sampled on the grid points t_0..t_K and enters each step
//! through the midpoint value (E_k + E_{k+1})/2, exactly as in
//! [`crate::propagator::propagate`]. The discretized cost is
//!
//! ```text
//! C = w_T (⟨Θ⟩_K − Θ_E)² + w_R Σ_k w_k (⟨Θ⟩_k − Θ_E)² dt + w_F ½ Σ_k w_k E_k² dt
//! ```
//!
//! with trapezoidal weights w_k. States satisfy the discrete Schrödinger
//! equation by construction, so the multiplier term of the Lagrangian is zero
//! and the costates below give the exact gradient of the discrete cost.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hamiltonian::{midpoint_row, uniform_step, ParameterPath, ParameterizedHamiltonian};
use crate::io::{csv_writer, fmt_f64};
use crate::operator::{check_dims, CVector, HermitianOperator, State};
use crate::propagator::{Spectral, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConfig {
    pub theta_target: f64,
    pub w_terminal: f64,
    pub w_running: f64,
    pub w_fluence: f64,
    pub horizon: f64,
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_terminal, self.w_running, self.w_fluence];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("cost config", "weights must be finite and non-negative"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("cost config", "at least one weight must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("cost config", format!("horizon must be positive, got {}", self.horizon)));
        }
        if !self.theta_target.is_finite() {
            return Err(Error::invalid("cost config", "theta_target must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CostBreakdown {
    pub terminal: f64,
    pub running: f64,
    pub fluence: f64,
    pub total: f64,
}

/// Trapezoidal quadrature weights (in units of dt) for `n` grid points.
pub(crate) fn trapezoid_weights(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![1.0; n];
            w[0] = 0.5;
            w[n - 1] = 0.5;
            w
        }
    }
}

fn check_horizon(times: &[f64], cc: &CostConfig) -> Result<f64> {
    let span = times[times.len() - 1] - times[0];
    if (span - cc.horizon).abs() > 1e-9 * cc.horizon.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "trajectory spans {span}, cost horizon is {}",
            cc.horizon
        )));
    }
    uniform_step(times)
}

pub fn cost(trajectory: &Trajectory, control: &[f64], cc: &CostConfig) -> Result<CostBreakdown> {
    cc.validate()?;
    if control.len() != trajectory.len() {
        return Err(Error::GridMismatch(format!(
            "{} control samples for {} grid points",
            control.len(),
            trajectory.len()
        )));
    }
    let dt = check_horizon(&trajectory.times, cc)?;
    let w = trapezoid_weights(control.len());
    let last = trajectory.theta_values[trajectory.len() - 1];
    let terminal = cc.w_terminal * (last - cc.theta_target).powi(2);
    let running = cc.w_running
        * dt
        * trajectory
            .theta_values
            .iter()
            .zip(&w)
            .map(|(v, wk)| wk * (v - cc.theta_target).powi(2))
            .sum::<f64>();
    let fluence = cc.w_fluence * 0.5 * dt * control.iter().zip(&w).map(|(e, wk)| wk * e * e).sum::<f64>();
    Ok(CostBreakdown {
        terminal,
        running,
        fluence,
        total: terminal + running + fluence,
    })
}

/// Costates λ_k = ∂C/∂ψ_k* on the forward grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    pub times: Vec<f64>,
    pub costates: Vec<CVector>,
}

/// Parameters of step k given the system path and the control samples.
fn step_params(
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    control: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let system = midpoint_row(system_path.row(k), system_path.row(k + 1));
    model.with_control(&system, 0.5 * (control[k] + control[k + 1]))
}

fn step_spectra(
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    control: &[f64],
) -> Result<Vec<Spectral>> {
    (0..control.len().saturating_sub(1))
        .map(|k| Spectral::new(&model.assemble(&step_params(model, system_path, control, k)?)?))
        .collect()
}

fn check_problem(
    trajectory: &Trajectory,
    control: &[f64],
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
) -> Result<()> {
    if control.len() != trajectory.len() || system_path.len() != trajectory.len() {
        return Err(Error::GridMismatch(format!(
            "trajectory {} / control {} / system path {} samples",
            trajectory.len(),
            control.len(),
            system_path.len()
        )));
    }
    if system_path.n_params() + 1 != model.n_params() {
        return Err(Error::DimensionMismatch {
            context: "system path parameters",
            expected: model.n_params() - 1,
            found: system_path.n_params(),
        });
    }
    Ok(())
}

/// Backward sweep from λ_K = 2w_T(⟨Θ⟩_K − Θ_E)Θψ_K, adding the running-cost
/// source 2w_R w_k dt (⟨Θ⟩_k − Θ_E)Θψ_k at every grid point and carrying
/// λ back through the adjoint of each step propagator.
pub fn adjoint_backward(
    trajectory: &Trajectory,
    control: &[f64],
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    theta: &HermitianOperator,
    cc: &CostConfig,
) -> Result<AdjointTrajectory> {
    check_problem(trajectory, control, model, system_path)?;
    let spectra = step_spectra(model, system_path, control)?;
    adjoint_with_spectra(trajectory, &spectra, theta, cc)
}

fn adjoint_with_spectra(
    trajectory: &Trajectory,
    spectra: &[Spectral],
    theta: &HermitianOperator,
    cc: &CostConfig,
) -> Result<AdjointTrajectory> {
    cc.validate()?;
    check_dims("observable", trajectory.final_state().dim(), theta.dim())?;
    let dt = check_horizon(&trajectory.times, cc)?;
    let n = trajectory.len();
    let w = trapezoid_weights(n);
    let source = |k: usize, scale: f64| -> CVector {
        let dev = trajectory.theta_values[k] - cc.theta_target;
        (theta.matrix() * trajectory.states[k].amplitudes()).scale(2.0 * scale * dev)
    };
    let mut costates = vec![CVector::zeros(theta.dim()); n];
    costates[n - 1] = source(n - 1, cc.w_terminal + cc.w_running * w[n - 1] * dt);
    for k in (0..n - 1).rev() {
        let carried = spectra[k].apply_propagator_adjoint(&costates[k + 1], dt);
        costates[k] = if cc.w_running > 0.0 {
            carried + source(k, cc.w_running * w[k] * dt)
        } else {
            carried
        };
    }
    Ok(AdjointTrajectory {
        times: trajectory.times.clone(),
        costates,
    })
}

/// ∂C/∂E_k at every grid point.
///
/// The dynamic part of step j is 2 Re⟨λ_{j+1}| ∂U_j |ψ_j⟩ with ∂U_j the exact
/// derivative of exp(−iH_j dt) along f_n′(Ē_j)V_n; each grid sample feeds
/// half of the two steps it borders. For short steps this reduces to
/// 2 dt Im⟨λ|V_n|ψ⟩.
pub fn gradient(
    trajectory: &Trajectory,
    adjoint: &AdjointTrajectory,
    control: &[f64],
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    cc: &CostConfig,
) -> Result<Vec<f64>> {
    check_problem(trajectory, control, model, system_path)?;
    if adjoint.costates.len() != trajectory.len() {
        return Err(Error::GridMismatch("adjoint and forward grids differ".into()));
    }
    let spectra = step_spectra(model, system_path, control)?;
    gradient_with_spectra(trajectory, adjoint, control, model, system_path, &spectra, cc)
}

fn gradient_with_spectra(
    trajectory: &Trajectory,
    adjoint: &AdjointTrajectory,
    control: &[f64],
    model: &ParameterizedHamiltonian,
    system_path: &ParameterPath,
    spectra: &[Spectral],
    cc: &CostConfig,
) -> Result<Vec<f64>> {
    let dt = check_horizon(&trajectory.times, cc)?;
    let n = trajectory.len();
    let w = trapezoid_weights(n);
    let term = model.control_term();
    let mut g: Vec<f64> = control.iter().zip(&w).map(|(e, wk)| cc.w_fluence * wk * e * dt).collect();
    for j in 0..n.saturating_sub(1) {
        let a = step_params(model, system_path, control, j)?;
        let direction = term.op.scaled(term.coeff.derivative(a[model.control_index()]));
        let du = spectra[j].propagator_derivative(&direction, dt);
        let dpsi = du * trajectory.states[j].amplitudes();
        let step_grad = 2.0 * adjoint.costates[j + 1].dotc(&dpsi).re;
        g[j] += 0.5 * step_grad;
        g[j + 1] += 0.5 * step_grad;
    }
    Ok(g)
}

/// Everything that stays fixed while the control is optimized.
#[derive(Clone, Debug)]
pub struct ControlProblem<'a> {
    pub model: &'a ParameterizedHamiltonian,
    /// System parameters (model order, control omitted) on the control grid.
    pub system_path: &'a ParameterPath,
    pub psi0: &'a State,
    pub theta: &'a HermitianOperator,
    pub cost: CostConfig,
}

impl ControlProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        check_dims("initial state", self.model.dim(), self.psi0.dim())?;
        check_dims("observable", self.model.dim(), self.theta.dim())?;
        if self.system_path.n_params() + 1 != self.model.n_params() {
            return Err(Error::DimensionMismatch {
                context: "system path parameters",
                expected: self.model.n_params() - 1,
                found: self.system_path.n_params(),
            });
        }
        check_horizon(self.system_path.times(), &self.cost)?;
        Ok(())
    }

    fn check_control(&self, control: &[f64]) -> Result<()> {
        if control.len() != self.system_path.len() {
            return Err(Error::GridMismatch(format!(
                "{} control samples for {} grid points",
                control.len(),
                self.system_path.len()
            )));
        }
        if control.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("control", "non-finite control value"));
        }
        Ok(())
    }

    /// Full parameter path with `control` inserted.
    pub fn full_path(&self, control: &[f64]) -> Result<ParameterPath> {
        self.system_path.with_inserted_column(self.model.control_index(), control)
    }

    fn forward_with_spectra(&self, control: &[f64]) -> Result<(Trajectory, Vec<Spectral>)> {
        self.check_control(control)?;
        let dt = self.system_path.uniform_step()?;
        let spectra = step_spectra(self.model, self.system_path, control)?;
        let times = self.system_path.times();
        let mut traj = Trajectory::start(times[0], self.psi0.clone(), self.theta)?;
        let mut psi = self.psi0.clone();
        for (k, s) in spectra.iter().enumerate() {
            psi = State::evolved(s.apply_propagator(psi.amplitudes(), dt));
            traj.push(times[k + 1], psi.clone(), self.theta)?;
        }
        Ok((traj, spectra))
    }

    /// Forward trajectory under `control` (exact exponential steps).
    pub fn forward(&self, control: &[f64]) -> Result<Trajectory> {
        Ok(self.forward_with_spectra(control)?.0)
    }

    pub fn evaluate(&self, control: &[f64]) -> Result<CostBreakdown> {
        cost(&self.forward(control)?, control, &self.cost)
    }

    /// Cost and its gradient with respect to every control sample.
    pub fn cost_and_gradient(&self, control: &[f64]) -> Result<(CostBreakdown, Vec<f64>)> {
        let (traj, spectra) = self.forward_with_spectra(control)?;
        let c = cost(&traj, control, &self.cost)?;
        let adj = adjoint_with_spectra(&traj, &spectra, self.theta, &self.cost)?;
        let g = gradient_with_spectra(&traj, &adj, control, self.model, self.system_path, &spectra, &self.cost)?;
        Ok((c, g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Initial trial step along the steepest-descent direction.
    pub step_size: f64,
    /// Stop when |ΔC| / C of an accepted step falls below this.
    pub tolerance: f64,
    /// Stop before iterating when max |∂C/∂E_k| is at or below this.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step_size: 1.0,
            tolerance: 1e-10,
            gradient_tolerance: 1e-14,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizeStatus {
    /// Relative cost change fell below tolerance.
    Converged,
    /// Gradient vanished; no step was needed.
    Stationary,
    MaxIterations,
    /// The line search exhausted its backtracks.
    Stalled,
}

impl OptimizeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizeStatus::Converged => "converged",
            OptimizeStatus::Stationary => "stationary",
            OptimizeStatus::MaxIterations => "max_iterations",
            OptimizeStatus::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub control: Vec<f64>,
    /// Cost of the initial guess followed by every accepted iterate.
    pub history: Vec<CostBreakdown>,
    pub status: OptimizeStatus,
}

impl OptimizeResult {
    pub fn accepted_iterations(&self) -> usize {
        self.history.len() - 1
    }

    /// CSV with header `iter,terminal,running,fluence,total`.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["iter", "terminal", "running", "fluence", "total"])?;
        for (i, c) in self.history.iter().enumerate() {
            out.write_record([
                i.to_string(),
                fmt_f64(c.terminal),
                fmt_f64(c.running),
                fmt_f64(c.fluence),
                fmt_f64(c.total),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV with header `t,E`.
    pub fn write_field_csv<W: Write>(&self, times: &[f64], w: W) -> Result<()> {
        if times.len() != self.control.len() {
            return Err(Error::GridMismatch("field times do not match control samples".into()));
        }
        let mut out = csv_writer(w);
        out.write_record(["t", "E"])?;
        for (t, e) in times.iter().zip(&self.control) {
            out.write_record([fmt_f64(*t), fmt_f64(*e)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Steepest descent with Armijo backtracking.
///
/// The search direction is the L² gradient of the cost, −(∂C/∂E_k)/(w_k dt),
/// which makes step sizes independent of the grid resolution. A trial step
/// is accepted when C(E + αd) ≤ C(E) − armijo·α·⟨∇C, −d⟩ and the cost
/// strictly decreases; after an acceptance the next trial step doubles.
pub fn optimize(problem: &ControlProblem<'_>, initial: &[f64], opts: &OptimizeOptions) -> Result<OptimizeResult> {
    problem.validate()?;
    let dt = problem.system_path.uniform_step()?;
    let weights = trapezoid_weights(initial.len());
    let mut control = initial.to_vec();
    let (mut current, mut grad) = problem.cost_and_gradient(&control)?;
    let mut history = vec![current];
    let mut alpha = opts.step_size;

    let status = loop {
        let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if gmax <= opts.gradient_tolerance || dt == 0.0 {
            break OptimizeStatus::Stationary;
        }
        if history.len() > opts.max_iters {
            break OptimizeStatus::MaxIterations;
        }
        let direction: Vec<f64> = grad
            .iter()
            .zip(&weights)
            .map(|(g, w)| if *w > 0.0 { -g / (w * dt) } else { 0.0 })
            .collect();
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = control.iter().zip(&direction).map(|(e, d)| e + alpha * d).collect();
            let c = problem.evaluate(&trial)?;
            if c.total < current.total && c.total <= current.total + opts.armijo * alpha * slope {
                accepted = Some((trial, c));
                break;
            }
            alpha *= opts.backtrack;
        }
        let Some((trial, c)) = accepted else {
            break OptimizeStatus::Stalled;
        };
        let change = (current.total - c.total) / current.total.abs().max(f64::MIN_POSITIVE);
        control = trial;
        let (c2, g2) = problem.cost_and_gradient(&control)?;
        debug_assert_eq!(c2, c);
        current = c2;
        grad = g2;
        history.push(current);
        alpha *= 2.0;
        if change < opts.tolerance {
            break OptimizeStatus::Converged;
        }
    };
    Ok(OptimizeResult {
        control,
        history,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{uniform_times, Role, Term};
    use crate::operator::expectation;
    use crate::propagator::{propagate, ExactStepper};

    fn two_level(delta: f64, control_scale: f64) -> ParameterizedHamiltonian {
        ParameterizedHamiltonian::new(
            HermitianOperator::pauli_z().scaled(0.5 * delta),
            vec![Term::linear("E", HermitianOperator::pauli_x().scaled(control_scale), Role::Control)],
        )
        .unwrap()
    }

    fn no_system(times: Vec<f64>) -> ParameterPath {
        ParameterPath::new(times.clone(), vec![Vec::new(); times.len()]).unwrap()
    }

    fn cc(theta_target: f64, w: [f64; 3], horizon: f64) -> CostConfig {
        CostConfig {
            theta_target,
            w_terminal: w[0],
            w_running: w[1],
            w_fluence: w[2],
            horizon,
        }
    }

    fn synthetic_trajectory(times: Vec<f64>, theta: Vec<f64>) -> Trajectory {
        let n = times.len();
        Trajectory {
            times,
            states: vec![State::basis(2, 0).unwrap(); n],
            theta_values: theta,
            norms: vec![1.0; n],
        }
    }

    #[test]
    fn cost_examples() {
        let times = uniform_times(0.0, 2.0, 100);
        let traj = synthetic_trajectory(times.clone(), vec![0.3; 101]);
        let zero = cost(&traj, &[0.0; 101], &cc(0.3, [1.0, 1.0, 1.0], 2.0)).unwrap();
        assert_eq!(zero.total, 0.0);

        let fl = cost(&traj, &[1.0; 101], &cc(0.0, [0.0, 0.0, 1.0], 2.0)).unwrap();
        assert!((fl.fluence - 1.0).abs() < 1e-14);
        assert!((fl.total - 1.0).abs() < 1e-14);

        let mut theta = vec![0.0; 101];
        theta[100] = 0.8;
        let traj = synthetic_trajectory(times, theta);
        let t = cost(&traj, &[0.0; 101], &cc(1.0, [2.0, 0.0, 0.0], 2.0)).unwrap();
        assert!((t.total - 0.08).abs() < 1e-15);
        assert_eq!(t.total, t.terminal + t.running + t.fluence);
    }

    #[test]
    fn cost_rejects_mismatched_grids_and_bad_config() {
        let traj = synthetic_trajectory(uniform_times(0.0, 2.0, 10), vec![0.0; 11]);
        assert!(matches!(cost(&traj, &[0.0; 10], &cc(0.0, [1.0, 0.0, 0.0], 2.0)), Err(Error::GridMismatch(_))));
        assert!(matches!(cost(&traj, &[0.0; 11], &cc(0.0, [1.0, 0.0, 0.0], 3.0)), Err(Error::GridMismatch(_))));
        assert!(cost(&traj, &[0.0; 11], &cc(0.0, [0.0, 0.0, 0.0], 2.0)).is_err());
        assert!(cost(&traj, &[0.0; 11], &cc(0.0, [-1.0, 1.0, 0.0], 2.0)).is_err());
    }

    fn benchmark_adjoint(w: [f64; 3]) -> AdjointTrajectory {
        let model = two_level(1.0, 1.0);
        let times = uniform_times(0.0, 5.0, 500);
        let sys = no_system(times.clone());
        let control = vec![0.1; 501];
        let path = sys.with_inserted_column(0, &control).unwrap();
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let traj = propagate(&model, &path, &psi0, &theta, &ExactStepper).unwrap();
        adjoint_backward(&traj, &control, &model, &sys, &theta, &cc(-1.0, w, 5.0)).unwrap()
    }

    #[test]
    fn adjoint_vanishes_without_state_cost() {
        let adj = benchmark_adjoint([0.0, 0.0, 1.0]);
        assert!(adj.costates.iter().all(|l| l.norm() == 0.0));
    }

    #[test]
    fn adjoint_norm_is_conserved_without_running_cost() {
        let adj = benchmark_adjoint([1.0, 0.0, 0.0]);
        let n_end = adj.costates.last().unwrap().norm();
        assert!(n_end > 0.0);
        assert!(adj.costates.iter().all(|l| (l.norm() - n_end).abs() < 1e-9));
    }

    #[test]
    fn fluence_only_gradient() {
        let model = two_level(1.0, 1.0);
        let times = uniform_times(0.0, 1.0, 10);
        let sys = no_system(times);
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let p = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: cc(0.0, [0.0, 0.0, 2.0], 1.0),
        };
        let (_, g) = p.cost_and_gradient(&[0.7; 11]).unwrap();
        for (k, gk) in g.iter().enumerate() {
            let w = if k == 0 || k == 10 { 0.5 } else { 1.0 };
            assert!((gk - 2.0 * 0.7 * 0.1 * w).abs() < 1e-15);
        }

        let p0 = ControlProblem {
            cost: cc(0.0, [0.0, 0.0, 0.0], 1.0),
            ..p.clone()
        };
        assert!(p0.validate().is_err());
        let pz = ControlProblem {
            cost: cc(1.0, [1.0, 0.0, 0.0], 1.0),
            ..p
        };
        let traj = pz.forward(&[0.0; 11]).unwrap();
        let zero_adj = AdjointTrajectory {
            times: traj.times.clone(),
            costates: vec![CVector::zeros(2); 11],
        };
        let g = gradient(&traj, &zero_adj, &[0.0; 11], &model, &sys, &pz.cost).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_small() {
        let model = two_level(1.0, 1.0);
        let times = uniform_times(0.0, 2.0, 40);
        let sys = no_system(times);
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let control: Vec<f64> = (0..41).map(|k| 0.3 * (0.2 * k as f64).sin()).collect();
        for w in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.5, 0.1]] {
            let p = ControlProblem {
                model: &model,
                system_path: &sys,
                psi0: &psi0,
                theta: &theta,
                cost: cc(-1.0, w, 2.0),
            };
            let (_, g) = p.cost_and_gradient(&control).unwrap();
            let eps = 1e-6;
            let mut err: f64 = 0.0;
            for k in 0..control.len() {
                let mut up = control.clone();
                let mut dn = control.clone();
                up[k] += eps;
                dn[k] -= eps;
                let fd = (p.evaluate(&up).unwrap().total - p.evaluate(&dn).unwrap().total) / (2.0 * eps);
                err = err.max((fd - g[k]).abs());
            }
            let gmax = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            assert!(err / gmax < 1e-6, "{w:?}: {}", err / gmax);
        }
    }

    #[test]
    fn stored_and_repropagated_costs_agree() {
        let model = two_level(1.0, 1.0);
        let times = uniform_times(0.0, 3.0, 300);
        let sys = no_system(times);
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let control: Vec<f64> = (0..301).map(|k| 0.2 + 0.001 * k as f64).collect();
        let p = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: cc(-0.5, [1.0, 0.3, 0.2], 3.0),
        };
        let stored = p.forward(&control).unwrap();
        let path = p.full_path(&control).unwrap();
        let again = propagate(&model, &path, &psi0, &theta, &ExactStepper).unwrap();
        let a = cost(&stored, &control, &p.cost).unwrap();
        let b = cost(&again, &control, &p.cost).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn cost_invariant_under_identity_shift() {
        let model = two_level(1.0, 1.0);
        let times = uniform_times(0.0, 3.0, 300);
        let sys = no_system(times);
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let shifted = theta.try_add(&HermitianOperator::identity(2).scaled(2.5)).unwrap();
        let control = vec![0.4; 301];
        let base = cc(-0.5, [1.0, 0.3, 0.2], 3.0);
        let p1 = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: base,
        };
        let p2 = ControlProblem {
            theta: &shifted,
            cost: CostConfig {
                theta_target: base.theta_target + 2.5,
                ..base
            },
            ..p1.clone()
        };
        let a = p1.evaluate(&control).unwrap();
        let b = p2.evaluate(&control).unwrap();
        assert!((a.terminal - b.terminal).abs() < 1e-12);
        assert!((a.running - b.running).abs() < 1e-12);
        assert!((a.fluence - b.fluence).abs() < 1e-12);
    }

    #[test]
    fn fluence_only_optimum_is_zero_field() {
        let model = two_level(1.0, 1.0);
        let sys = no_system(uniform_times(0.0, 1.0, 50));
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let p = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: cc(0.0, [0.0, 0.0, 1.0], 1.0),
        };
        let init: Vec<f64> = (0..51).map(|k| 1.0 + (k as f64 * 0.3).cos()).collect();
        let res = optimize(&p, &init, &OptimizeOptions::default()).unwrap();
        assert!(res.history.last().unwrap().total < 1e-20, "{:?}", res.history.last());
        assert!(res.control.iter().all(|e| e.abs() < 1e-10));
        assert!(res.history.windows(2).all(|w| w[1].total < w[0].total));

        let again = optimize(&p, &vec![0.0; 51], &OptimizeOptions::default()).unwrap();
        assert_eq!(again.history.len(), 1);
        assert_eq!(again.status, OptimizeStatus::Stationary);
    }

    #[test]
    fn population_inversion() {
        let model = two_level(0.0, 0.5);
        let steps = 200;
        let sys = no_system(uniform_times(0.0, std::f64::consts::PI, steps));
        let psi0 = State::basis(2, 0).unwrap();
        let theta = HermitianOperator::pauli_z();
        let p = ControlProblem {
            model: &model,
            system_path: &sys,
            psi0: &psi0,
            theta: &theta,
            cost: cc(-1.0, [1.0, 0.0, 1e-3], std::f64::consts::PI),
        };
        let res = optimize(&p, &vec![0.5; steps + 1], &OptimizeOptions::default()).unwrap();
        assert!(res.accepted_iterations() <= 200);
        let traj = p.forward(&res.control).unwrap();
        let z = expectation(&theta, traj.final_state()).unwrap();
        assert!(z <= -0.95, "{z}");
        assert!(res.history.windows(2).all(|w| w[1].total < w[0].total));

        let mut buf = Vec::new();
        res.write_history_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,terminal,running,fluence,total\n0,"));
    }
}
