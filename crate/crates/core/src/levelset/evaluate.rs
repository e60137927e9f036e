use std::fmt;

use rayon::prelude::*;

use super::{sorted_family, Axes, ParameterMesh, Statistic};
use crate::error::{Error, Result};
use crate::hamiltonian::{uniform_times, ParameterPath, ParameterizedHamiltonian};
use crate::operator::{HermitianOperator, State};
use crate::propagator::{propagate, Stepper, Trajectory};
use crate::tracking::trapezoid_mean;

/// Time course of all model parameters given the three free constants
/// (a₁, a₂, a₃).
pub trait ProtocolTemplate: Send + Sync + fmt::Debug {
    fn path(&self, model: &ParameterizedHamiltonian, a1: f64, a2: f64, a3: f64) -> Result<ParameterPath>;
}

/// Every parameter held constant for `duration`: a₁ and a₂ fill the two
/// system parameters in model order, a₃ the control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantProtocol {
    pub duration: f64,
    pub steps: usize,
}

impl ProtocolTemplate for ConstantProtocol {
    fn path(&self, model: &ParameterizedHamiltonian, a1: f64, a2: f64, a3: f64) -> Result<ParameterPath> {
        let system = model.system_indices();
        if system.len() != 2 {
            return Err(Error::DimensionMismatch {
                context: "system parameters for a mesh",
                expected: 2,
                found: system.len(),
            });
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) || self.steps == 0 {
            return Err(Error::invalid("protocol", "duration must be positive and steps at least 1"));
        }
        let a = model.with_control(&[a1, a2], a3)?;
        ParameterPath::constant(uniform_times(0.0, self.duration, self.steps), &a)
    }
}

/// A template backed by a closure.
pub struct FnProtocol<F>(pub F);

impl<F> fmt::Debug for FnProtocol<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnProtocol")
    }
}

impl<F> ProtocolTemplate for FnProtocol<F>
where
    F: Fn(&ParameterizedHamiltonian, f64, f64, f64) -> Result<ParameterPath> + Send + Sync,
{
    fn path(&self, model: &ParameterizedHamiltonian, a1: f64, a2: f64, a3: f64) -> Result<ParameterPath> {
        (self.0)(model, a1, a2, a3)
    }
}

fn summarize(traj: &Trajectory, statistic: Statistic) -> Result<f64> {
    match statistic {
        Statistic::Terminal => Ok(traj.theta_values[traj.len() - 1]),
        Statistic::WindowAverage { window } => {
            let t_end = traj.times[traj.len() - 1];
            let span = t_end - traj.times[0];
            if !(window > 0.0) || window > span * (1.0 + 1e-12) {
                return Err(Error::invalid(
                    "statistic",
                    format!("averaging window {window} must lie in (0, {span}]"),
                ));
            }
            let slack = 1e-9 * span / traj.len() as f64;
            let start = traj.times.iter().position(|&t| t >= t_end - window - slack).unwrap_or(0);
            Ok(trapezoid_mean(&traj.times[start..], &traj.theta_values[start..]))
        }
    }
}

/// One propagation per node, run in parallel. Results land in fixed slots, so
/// the mesh does not depend on scheduling; the first failing node in
/// row-major order is reported.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mesh(
    model: &ParameterizedHamiltonian,
    template: &dyn ProtocolTemplate,
    psi0: &State,
    theta: &HermitianOperator,
    axes: &Axes,
    a3: f64,
    statistic: Statistic,
    stepper: &dyn Stepper,
) -> Result<ParameterMesh> {
    let axes = Axes::new(axes.axis1.clone(), axes.axis2.clone())?;
    let (n1, n2) = axes.shape();
    let results: Vec<Result<f64>> = (0..n1 * n2)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (axes.axis1[k / n2], axes.axis2[k % n2]);
            let path = template.path(model, x, y, a3)?;
            let traj = propagate(model, &path, psi0, theta, stepper)?;
            summarize(&traj, statistic)
        })
        .collect();
    let mut values = Vec::with_capacity(n1 * n2);
    for (k, r) in results.into_iter().enumerate() {
        values.push(r.map_err(|e| Error::MeshNode {
            i: k / n2,
            j: k % n2,
            source: Box::new(e),
        })?);
    }
    ParameterMesh::new(axes, a3, values, statistic)
}

/// [`evaluate_mesh`] at each control label, returned in ascending label order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_family(
    model: &ParameterizedHamiltonian,
    template: &dyn ProtocolTemplate,
    psi0: &State,
    theta: &HermitianOperator,
    axes: &Axes,
    labels: &[f64],
    statistic: Statistic,
    stepper: &dyn Stepper,
) -> Result<Vec<ParameterMesh>> {
    let meshes = labels
        .iter()
        .map(|&a3| evaluate_mesh(model, template, psi0, theta, axes, a3, statistic, stepper))
        .collect::<Result<Vec<_>>>()?;
    Ok(sorted_family(&meshes)?.into_iter().cloned().collect())
}
