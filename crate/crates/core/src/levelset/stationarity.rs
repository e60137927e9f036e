use super::{sorted_family, Axes, ParameterMesh, Statistic};
use crate::error::{Error, Result};
use crate::oct::CostConfig;

/// Control cost h(a₁, a₂, a₃) = ½(w_control·a₃² + w_a1·a₁² + w_a2·a₂²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlCost {
    pub w_control: f64,
    pub w_a1: f64,
    pub w_a2: f64,
}

impl Default for ControlCost {
    fn default() -> Self {
        Self {
            w_control: 1.0,
            w_a1: 0.0,
            w_a2: 0.0,
        }
    }
}

impl ControlCost {
    pub fn value(&self, a1: f64, a2: f64, a3: f64) -> f64 {
        0.5 * (self.w_control * a3 * a3 + self.w_a1 * a1 * a1 + self.w_a2 * a2 * a2)
    }

    pub fn d_control(&self, a3: f64) -> f64 {
        self.w_control * a3
    }
}

/// h tabulated over `axes` at fixed a₃.
pub fn cost_surface(axes: &Axes, a3: f64, h: &ControlCost) -> Result<ParameterMesh> {
    ParameterMesh::from_fn(axes.clone(), a3, Statistic::Terminal, |a1, a2| h.value(a1, a2, a3))
}

/// Residual r = g′(Φ)·∂Φ/∂a₃ + ∂h/∂a₃ of the optimality condition, on the
/// mesh whose label is `a3`, with g(Φ) = w_running·(Φ − Θ_E)².
///
/// ∂Φ/∂a₃ is the three-point finite difference across the neighbouring
/// labels (one-sided at the ends of the family), exact for Φ quadratic in
/// a₃ on non-uniform labels. All meshes must share one grid.
pub fn stationarity_residual(theta_meshes: &[ParameterMesh], a3: f64, cc: &CostConfig, h: &ControlCost) -> Result<ParameterMesh> {
    let family = sorted_family(theta_meshes)?;
    if family.len() < 3 {
        return Err(Error::invalid(
            "stationarity residual",
            format!("needs meshes at 3 or more control labels, got {}", family.len()),
        ));
    }
    if family.iter().any(|m| m.axes() != family[0].axes()) {
        return Err(Error::GridMismatch("theta meshes use different grids".into()));
    }
    let k = family
        .iter()
        .position(|m| m.control_label() == a3)
        .ok_or_else(|| Error::invalid("stationarity residual", format!("no mesh with control label {a3}")))?;
    let centre = k.clamp(1, family.len() - 2);
    let x: [f64; 3] = std::array::from_fn(|q| family[centre - 1 + q].control_label());
    let w = lagrange_derivative_weights(x, a3);
    let mesh = family[k];
    let n = mesh.values().len();
    let values = (0..n)
        .map(|p| {
            let dphi: f64 = (0..3).map(|q| w[q] * family[centre - 1 + q].values()[p]).sum();
            let g_prime = 2.0 * cc.w_running * (mesh.values()[p] - cc.theta_target);
            g_prime * dphi + h.d_control(a3)
        })
        .collect();
    ParameterMesh::new(mesh.axes().clone(), a3, values, mesh.statistic())
}

/// Weights of f(x₀), f(x₁), f(x₂) in the derivative of their interpolating
/// parabola at `at`.
fn lagrange_derivative_weights(x: [f64; 3], at: f64) -> [f64; 3] {
    std::array::from_fn(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        ((at - x[j]) + (at - x[k])) / ((x[i] - x[j]) * (x[i] - x[k]))
    })
}
