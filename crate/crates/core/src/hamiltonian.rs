//! Separable parameterized Hamiltonians H(a) = H₀ + Σᵢ fᵢ(aᵢ)Vᵢ.
//!
//! Every parameter owns exactly one coupling term. One term is designated the
//! control (the field amplitude of a dipole coupling, V = −μ); the rest are
//! system parameters whose time course is prescribed. Parameter-independent
//! parts, kinetic energy included, live in H₀, so ∂H/∂aᵢ = fᵢ′(aᵢ)Vᵢ exactly.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::operator::{check_dims, i_commutator, HermitianOperator};
use crate::registry::Registry;

/// Scalar coefficient function fᵢ with its derivative.
pub trait Coefficient: Send + Sync + fmt::Debug {
    fn kind(&self) -> &str;
    fn params(&self) -> Vec<f64>;
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;

    /// `Some(s)` when f(x) = s·x.
    fn linear_slope(&self) -> Option<f64> {
        None
    }
}

/// Builds a coefficient from its configured parameter list.
pub type CoefficientFactory = fn(&[f64]) -> Result<Arc<dyn Coefficient>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub scale: f64,
}

impl Coefficient for Linear {
    fn kind(&self) -> &str {
        "linear"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.scale]
    }
    fn value(&self, x: f64) -> f64 {
        self.scale * x
    }
    fn derivative(&self, _x: f64) -> f64 {
        self.scale
    }
    fn linear_slope(&self) -> Option<f64> {
        Some(self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadratic {
    pub scale: f64,
}

impl Coefficient for Quadratic {
    fn kind(&self) -> &str {
        "quadratic"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.scale]
    }
    fn value(&self, x: f64) -> f64 {
        self.scale * x * x
    }
    fn derivative(&self, x: f64) -> f64 {
        2.0 * self.scale * x
    }
}

/// s·sin(k·x), for couplings periodic in the parameter (angles, phases).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sine {
    pub scale: f64,
    pub wavenumber: f64,
}

impl Coefficient for Sine {
    fn kind(&self) -> &str {
        "sine"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.scale, self.wavenumber]
    }
    fn value(&self, x: f64) -> f64 {
        self.scale * (self.wavenumber * x).sin()
    }
    fn derivative(&self, x: f64) -> f64 {
        self.scale * self.wavenumber * (self.wavenumber * x).cos()
    }
}

fn param_list<const K: usize>(kind: &str, params: &[f64], defaults: [f64; K]) -> Result<[f64; K]> {
    if params.len() > K {
        return Err(Error::invalid(
            "coefficient",
            format!("`{kind}` takes at most {K} parameter(s), got {}", params.len()),
        ));
    }
    let mut out = defaults;
    out[..params.len()].copy_from_slice(params);
    if out.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("coefficient", format!("`{kind}` has non-finite parameters")));
    }
    Ok(out)
}

/// The closed catalog of coefficient kinds: `linear` [scale], `quadratic`
/// [scale], `sine` [scale, wavenumber]. Omitted parameters default to 1.
pub fn coefficient_registry() -> &'static Registry<CoefficientFactory> {
    static REG: OnceLock<Registry<CoefficientFactory>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<CoefficientFactory> = Registry::new("coefficient kind");
        reg.register("linear", |p| {
            let [scale] = param_list("linear", p, [1.0])?;
            Ok(Arc::new(Linear { scale }))
        });
        reg.register("quadratic", |p| {
            let [scale] = param_list("quadratic", p, [1.0])?;
            Ok(Arc::new(Quadratic { scale }))
        });
        reg.register("sine", |p| {
            let [scale, wavenumber] = param_list("sine", p, [1.0, 1.0])?;
            Ok(Arc::new(Sine { scale, wavenumber }))
        });
        reg
    })
}

pub fn coefficient(kind: &str, params: &[f64]) -> Result<Arc<dyn Coefficient>> {
    (coefficient_registry().get(kind)?)(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    System,
    Control,
}

#[derive(Clone, Debug)]
pub struct Term {
    pub label: String,
    pub op: HermitianOperator,
    pub coeff: Arc<dyn Coefficient>,
    pub role: Role,
}

impl Term {
    pub fn new(label: impl Into<String>, op: HermitianOperator, coeff: Arc<dyn Coefficient>, role: Role) -> Self {
        Self {
            label: label.into(),
            op,
            coeff,
            role,
        }
    }

    pub fn linear(label: impl Into<String>, op: HermitianOperator, role: Role) -> Self {
        Self::new(label, op, Arc::new(Linear { scale: 1.0 }), role)
    }
}

#[derive(Clone, Debug)]
pub struct ParameterizedHamiltonian {
    base: HermitianOperator,
    terms: Vec<Term>,
    control_index: usize,
}

impl ParameterizedHamiltonian {
    /// Exactly one term must carry [`Role::Control`].
    pub fn new(base: HermitianOperator, terms: Vec<Term>) -> Result<Self> {
        let dim = base.dim();
        for t in &terms {
            check_dims("coupling operator", dim, t.op.dim())?;
        }
        let controls: Vec<usize> = terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Control)
            .map(|(i, _)| i)
            .collect();
        let control_index = match controls.as_slice() {
            [i] => *i,
            _ => {
                return Err(Error::invalid(
                    "model",
                    format!("expected exactly one control term, found {}", controls.len()),
                ))
            }
        };
        Ok(Self {
            base,
            terms,
            control_index,
        })
    }

    pub fn base(&self) -> &HermitianOperator {
        &self.base
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn n_params(&self) -> usize {
        self.terms.len()
    }

    pub fn control_index(&self) -> usize {
        self.control_index
    }

    pub fn control_term(&self) -> &Term {
        &self.terms[self.control_index]
    }

    /// Indices of the system (non-control) parameters, in order.
    pub fn system_indices(&self) -> Vec<usize> {
        (0..self.n_params()).filter(|&i| i != self.control_index).collect()
    }

    /// Full parameter vector from system values and a control value.
    pub fn with_control(&self, system: &[f64], control: f64) -> Result<Vec<f64>> {
        if system.len() + 1 != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "system parameter vector",
                expected: self.n_params() - 1,
                found: system.len(),
            });
        }
        let mut a = Vec::with_capacity(self.n_params());
        a.extend_from_slice(&system[..self.control_index]);
        a.push(control);
        a.extend_from_slice(&system[self.control_index..]);
        Ok(a)
    }

    fn check_len(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.n_params(),
                found: a.len(),
            });
        }
        Ok(())
    }

    fn coefficient_at(&self, i: usize, x: f64) -> Result<f64> {
        let term = &self.terms[i];
        let v = term.coeff.value(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteCoefficient {
                term: i,
                kind: term.coeff.kind().to_string(),
                argument: x,
            });
        }
        Ok(v)
    }

    /// H₀ + Σᵢ fᵢ(aᵢ)Vᵢ.
    pub fn assemble(&self, a: &[f64]) -> Result<HermitianOperator> {
        self.check_len(a)?;
        let mut h = self.base.clone();
        for (i, term) in self.terms.iter().enumerate() {
            let f = self.coefficient_at(i, a[i])?;
            if f != 0.0 {
                h.axpy(f, &term.op);
            }
        }
        Ok(h)
    }

    /// H with the control term removed (a_n = 0 for a linear control).
    pub fn assemble_without_control(&self, a: &[f64]) -> Result<HermitianOperator> {
        self.check_len(a)?;
        let mut h = self.base.clone();
        for (i, term) in self.terms.iter().enumerate() {
            if i == self.control_index {
                continue;
            }
            let f = self.coefficient_at(i, a[i])?;
            if f != 0.0 {
                h.axpy(f, &term.op);
            }
        }
        Ok(h)
    }

    /// ∂H/∂aᵢ = fᵢ′(aᵢ)Vᵢ.
    pub fn grad_h(&self, a: &[f64], i: usize) -> Result<HermitianOperator> {
        self.check_len(a)?;
        let term = self.terms.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.n_params(),
        })?;
        Ok(term.op.scaled(term.coeff.derivative(a[i])))
    }

    /// Θ_a = i[∂H/∂aᵢ, Θ].
    pub fn theta_a_op(&self, a: &[f64], theta: &HermitianOperator, i: usize) -> Result<HermitianOperator> {
        i_commutator(&self.grad_h(a, i)?, theta)
    }
}

/// Sampled parameter trajectory a(t) on a strictly increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    velocities: Option<Vec<Vec<f64>>>,
}

impl ParameterPath {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("parameter path", "empty time grid"));
        }
        if times.len() != values.len() {
            return Err(Error::GridMismatch(format!(
                "{} times but {} parameter rows",
                times.len(),
                values.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameter path", "non-finite time"));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "parameter path",
                format!("times not strictly increasing at index {}", k + 1),
            ));
        }
        let width = values[0].len();
        for (k, row) in values.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid("parameter path", format!("row {k} has {} entries, expected {width}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("parameter path", format!("non-finite value in row {k}")));
            }
        }
        Ok(Self {
            times,
            values,
            velocities: None,
        })
    }

    /// Same parameters at every grid time.
    pub fn constant(times: Vec<f64>, a: &[f64]) -> Result<Self> {
        let values = vec![a.to_vec(); times.len()];
        Self::new(times, values)
    }

    /// Sample `f` on `times`.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn with_velocities(mut self, velocities: Vec<Vec<f64>>) -> Result<Self> {
        if velocities.len() != self.times.len() || velocities.iter().any(|r| r.len() != self.n_params()) {
            return Err(Error::GridMismatch("velocity rows do not match the parameter grid".into()));
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.values[0].len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }

    /// Parameters at the midpoint of interval k (linear interpolation).
    pub fn midpoint(&self, k: usize) -> Vec<f64> {
        midpoint_row(&self.values[k], &self.values[k + 1])
    }

    /// u_a = da/dt at grid point k: stored velocities when present, else
    /// central differences (one-sided at the ends, zero on a single point).
    pub fn velocity(&self, k: usize) -> Vec<f64> {
        if let Some(v) = &self.velocities {
            return v[k].clone();
        }
        let n = self.len();
        if n == 1 {
            return vec![0.0; self.n_params()];
        }
        let (lo, hi) = match k {
            0 => (0, 1),
            k if k == n - 1 => (n - 2, n - 1),
            k => (k - 1, k + 1),
        };
        let dt = self.times[hi] - self.times[lo];
        self.values[hi]
            .iter()
            .zip(&self.values[lo])
            .map(|(b, a)| (b - a) / dt)
            .collect()
    }

    /// The grid spacing, or an error if the grid is not uniform to 1e-9
    /// relative. A single-point grid has spacing zero.
    pub fn uniform_step(&self) -> Result<f64> {
        uniform_step(&self.times)
    }

    /// Insert `column` as parameter `index`, shifting later parameters right.
    pub fn with_inserted_column(&self, index: usize, column: &[f64]) -> Result<Self> {
        if column.len() != self.len() {
            return Err(Error::GridMismatch(format!(
                "inserted column has {} samples, grid has {}",
                column.len(),
                self.len()
            )));
        }
        if index > self.n_params() {
            return Err(Error::IndexOutOfRange {
                index,
                count: self.n_params() + 1,
            });
        }
        let values = self
            .values
            .iter()
            .zip(column)
            .map(|(row, &c)| {
                let mut r = row.clone();
                r.insert(index, c);
                r
            })
            .collect();
        Self::new(self.times.clone(), values)
    }
}

pub(crate) fn midpoint_row(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// `steps + 1` evenly spaced times on [t0, t_end].
pub fn uniform_times(t0: f64, t_end: f64, steps: usize) -> Vec<f64> {
    if steps == 0 {
        return vec![t0];
    }
    let span = t_end - t0;
    (0..=steps).map(|k| t0 + span * (k as f64) / (steps as f64)).collect()
}

pub(crate) fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Ok(0.0);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (k, w) in times.windows(2).enumerate() {
        let dev = ((w[1] - w[0]) - dt).abs();
        if dev > 1e-9 * dt {
            return Err(Error::NonUniformGrid { step: k, deviation: dev });
        }
    }
    Ok(dt)
}
