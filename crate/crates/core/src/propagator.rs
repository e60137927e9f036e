//! Time integration of i dψ/dt = H(a(t))ψ on a uniform grid.
//!
//! Each interval [t_k, t_{k+1}] uses the Hamiltonian at the midpoint
//! parameters (a_k + a_{k+1})/2, held constant over the step. Steppers are
//! looked up by name: `exact` (Hermitian eigendecomposition) and `rk4`.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hamiltonian::{ParameterPath, ParameterizedHamiltonian};
use crate::io::{csv_writer, fmt_f64};
use crate::operator::{check_dims, expectation, CMatrix, CVector, HermitianOperator, State};
use crate::registry::Registry;

/// Largest ‖H‖·dt used when a step size is chosen automatically.
pub const MAX_PHASE_PER_STEP: f64 = 0.05;

pub trait Stepper: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Advance ψ by `dt` under the constant Hamiltonian `h`.
    fn step(&self, psi: &State, h: &HermitianOperator, dt: f64) -> Result<State>;

    /// Norm drift this method guarantees over a run at the default step size.
    fn norm_tolerance(&self) -> f64;
}

/// exp(−iH·dt)ψ through H = QΛQ†.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactStepper;

impl Stepper for ExactStepper {
    fn name(&self) -> &str {
        "exact"
    }

    fn step(&self, psi: &State, h: &HermitianOperator, dt: f64) -> Result<State> {
        check_step(psi, h, dt)?;
        let spectral = Spectral::new(h)?;
        Ok(State::evolved(spectral.apply_propagator(psi.amplitudes(), dt)))
    }

    fn norm_tolerance(&self) -> f64 {
        1e-9
    }
}

/// Classical fourth-order Runge–Kutta on dψ/dt = −iHψ. Not unitary; the
/// norm drifts at O(dt⁵) per step and is never corrected.
#[derive(Clone, Copy, Debug, Default)]
pub struct Rk4Stepper;

impl Stepper for Rk4Stepper {
    fn name(&self) -> &str {
        "rk4"
    }

    fn step(&self, psi: &State, h: &HermitianOperator, dt: f64) -> Result<State> {
        check_step(psi, h, dt)?;
        let minus_i = Complex64::new(0.0, -1.0);
        let m = h.matrix();
        let f = |v: &CVector| (m * v) * minus_i;
        let y = psi.amplitudes();
        let k1 = f(y);
        let k2 = f(&(y + &k1 * Complex64::from(0.5 * dt)));
        let k3 = f(&(y + &k2 * Complex64::from(0.5 * dt)));
        let k4 = f(&(y + &k3 * Complex64::from(dt)));
        let next = y + (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * Complex64::from(dt / 6.0);
        Ok(State::evolved(next))
    }

    fn norm_tolerance(&self) -> f64 {
        1e-6
    }
}

fn check_step(psi: &State, h: &HermitianOperator, dt: f64) -> Result<()> {
    check_dims("propagation step", h.dim(), psi.dim())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("time step", format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

pub fn stepper_registry() -> &'static Registry<Arc<dyn Stepper>> {
    static REG: OnceLock<Registry<Arc<dyn Stepper>>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<Arc<dyn Stepper>> = Registry::new("propagation method");
        reg.register("exact", Arc::new(ExactStepper));
        reg.register("rk4", Arc::new(Rk4Stepper));
        reg
    })
}

pub fn stepper(name: &str) -> Result<Arc<dyn Stepper>> {
    stepper_registry().get(name).cloned()
}

/// Eigendecomposition of a Hermitian H, reused for the propagator and its
/// parameter derivative.
#[derive(Clone, Debug)]
pub struct Spectral {
    values: DVector<f64>,
    vectors: CMatrix,
}

impl Spectral {
    pub fn new(h: &HermitianOperator) -> Result<Self> {
        let (values, vectors) = h.eigen()?;
        Ok(Self { values, vectors })
    }

    fn phases(&self, dt: f64) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * dt))
            .collect()
    }

    /// exp(−iH·dt)v.
    pub fn apply_propagator(&self, v: &CVector, dt: f64) -> CVector {
        let mut w = self.vectors.ad_mul(v);
        for (wi, p) in w.iter_mut().zip(self.phases(dt)) {
            *wi *= p;
        }
        &self.vectors * w
    }

    /// exp(+iH·dt)v, the adjoint propagator.
    pub fn apply_propagator_adjoint(&self, v: &CVector, dt: f64) -> CVector {
        let mut w = self.vectors.ad_mul(v);
        for (wi, p) in w.iter_mut().zip(self.phases(dt)) {
            *wi *= p.conj();
        }
        &self.vectors * w
    }

    pub fn propagator(&self, dt: f64) -> CMatrix {
        let d = CVector::from_vec(self.phases(dt));
        &self.vectors * CMatrix::from_diagonal(&d) * self.vectors.adjoint()
    }

    /// Directional derivative of exp(−iH·dt) along the perturbation H → H + εD.
    ///
    /// In the eigenbasis the derivative is Q (L ∘ Q†DQ) Q† with divided
    /// differences L_jk = −i·dt·e^{−i(λ_j+λ_k)dt/2}·sinc((λ_j−λ_k)dt/2),
    /// which stays exact for degenerate eigenvalues.
    pub fn propagator_derivative(&self, direction: &HermitianOperator, dt: f64) -> CMatrix {
        let q = &self.vectors;
        let mut d = q.adjoint() * direction.matrix() * q;
        let n = self.values.len();
        for j in 0..n {
            for k in 0..n {
                let (lj, lk) = (self.values[j], self.values[k]);
                let half = 0.5 * (lj - lk) * dt;
                let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
                let l = Complex64::new(0.0, -dt) * Complex64::from_polar(sinc, -0.5 * (lj + lk) * dt);
                d[(j, k)] *= l;
            }
        }
        q * d * q.adjoint()
    }
}

/// Forward solution on the protocol grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub theta_values: Vec<f64>,
    pub norms: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn start(t0: f64, psi0: State, theta: &HermitianOperator) -> Result<Self> {
        let value = expectation(theta, &psi0)?;
        Ok(Self {
            times: vec![t0],
            norms: vec![psi0.norm()],
            states: vec![psi0],
            theta_values: vec![value],
        })
    }

    pub(crate) fn push(&mut self, t: f64, psi: State, theta: &HermitianOperator) -> Result<()> {
        let value = expectation(theta, &psi)?;
        self.times.push(t);
        self.norms.push(psi.norm());
        self.theta_values.push(value);
        self.states.push(psi);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least one point")
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    /// CSV with header `t,theta,norm`, plus `re_i,im_i` state columns when
    /// `with_state` is set.
    pub fn write_csv<W: Write>(&self, w: W, with_state: bool) -> Result<()> {
        let mut out = csv_writer(w);
        let dim = self.states.first().map_or(0, State::dim);
        let mut header = vec!["t".to_string(), "theta".to_string(), "norm".to_string()];
        if with_state {
            for i in 0..dim {
                header.push(format!("re_{i}"));
                header.push(format!("im_{i}"));
            }
        }
        out.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                fmt_f64(self.times[k]),
                fmt_f64(self.theta_values[k]),
                fmt_f64(self.norms[k]),
            ];
            if with_state {
                for z in self.states[k].amplitudes().iter() {
                    row.push(fmt_f64(z.re));
                    row.push(fmt_f64(z.im));
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Integrate from ψ₀ along `protocol`, recording ⟨Θ⟩ and ‖ψ‖ at every grid
/// point.
pub fn propagate(
    model: &ParameterizedHamiltonian,
    protocol: &ParameterPath,
    psi0: &State,
    theta: &HermitianOperator,
    stepper: &dyn Stepper,
) -> Result<Trajectory> {
    check_dims("initial state", model.dim(), psi0.dim())?;
    check_dims("observable", model.dim(), theta.dim())?;
    if protocol.n_params() != model.n_params() {
        return Err(Error::DimensionMismatch {
            context: "protocol parameters",
            expected: model.n_params(),
            found: protocol.n_params(),
        });
    }
    let dt = protocol.uniform_step()?;
    let times = protocol.times();
    let mut traj = Trajectory::start(times[0], psi0.clone(), theta)?;
    let mut psi = psi0.clone();
    for k in 0..protocol.len() - 1 {
        let h = model.assemble(&protocol.midpoint(k))?;
        psi = stepper.step(&psi, &h, dt)?;
        traj.push(times[k + 1], psi.clone(), theta)?;
    }
    Ok(traj)
}

/// Step count keeping ‖H‖·dt ≤ [`MAX_PHASE_PER_STEP`] over `duration`.
pub fn default_step_count(max_spectral_norm: f64, duration: f64) -> usize {
    let steps = (duration * max_spectral_norm / MAX_PHASE_PER_STEP).ceil();
    if steps.is_finite() && steps >= 1.0 {
        steps as usize
    } else {
        1
    }
}
