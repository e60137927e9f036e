//! Run configuration: one TOML file per run with exactly one command block.

use std::collections::BTreeMap;

use num_complex::Complex64;
use qlevel_core::hamiltonian::{coefficient, uniform_times};
use qlevel_core::levelset::{linspace, Statistic};
use qlevel_core::operator::CMatrix;
use qlevel_core::{HermitianOperator, ParameterPath, ParameterizedHamiltonian, Role, State, Term};
use serde::{Deserialize, Serialize};

use crate::failure::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Artifact directory, relative to the config file. `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Reserved for randomized initial guesses; no command draws from it yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Amplitudes as `[re, im]` pairs; normalized on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<ContourBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersect: Option<IntersectBlock>,
}

/// A Hermitian operator: a built-in name such as `sigma_x` or
/// `number_op(4)`, an explicit matrix, or a scaled sum of those.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Name(String),
    Real {
        real: Vec<Vec<f64>>,
    },
    Complex {
        /// Rows of `[re, im]` entries.
        complex: Vec<Vec<[f64; 2]>>,
    },
    Scaled {
        scale: f64,
        op: Box<OperatorSpec>,
    },
    Sum {
        sum: Vec<OperatorSpec>,
    },
}

impl OperatorSpec {
    /// Build the operator; `path` names it in error messages.
    pub fn build(&self, path: &str) -> Result<HermitianOperator, CliError> {
        let core = |e| CliError::from_core(e, path);
        match self {
            OperatorSpec::Name(name) => HermitianOperator::builtin(name).map_err(core),
            OperatorSpec::Real { real } => {
                let rows: Vec<Vec<[f64; 2]>> = real.iter().map(|r| r.iter().map(|&x| [x, 0.0]).collect()).collect();
                matrix_operator(&rows, path)
            }
            OperatorSpec::Complex { complex } => matrix_operator(complex, path),
            OperatorSpec::Scaled { scale, op } => Ok(op.build(path)?.scaled(*scale)),
            OperatorSpec::Sum { sum } => {
                let mut parts = sum.iter().enumerate().map(|(k, s)| s.build(&format!("{path}.sum[{k}]")));
                let first = parts
                    .next()
                    .ok_or_else(|| CliError::validation(path, "empty operator sum"))??;
                parts.try_fold(first, |acc, p| acc.try_add(&p?).map_err(core))
            }
        }
    }
}

fn matrix_operator(rows: &[Vec<[f64; 2]>], path: &str) -> Result<HermitianOperator, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::validation(path, "matrix must be square and non-empty"));
    }
    let m = CMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1]));
    HermitianOperator::new(path, m).map_err(|e| CliError::from_core(e, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Parameter-independent part; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<OperatorSpec>,
    pub terms: Vec<TermConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    System,
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub label: String,
    pub op: OperatorSpec,
    #[serde(default = "default_coeff")]
    pub coeff: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coeff_params: Vec<f64>,
    pub role: RoleName,
}

fn default_coeff() -> String {
    "linear".to_string()
}

impl ModelConfig {
    pub fn build(&self) -> Result<ParameterizedHamiltonian, CliError> {
        if self.terms.is_empty() {
            return Err(CliError::validation("model.terms", "at least one term is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut terms = Vec::with_capacity(self.terms.len());
        for (k, t) in self.terms.iter().enumerate() {
            let path = format!("model.terms[{k}]");
            if !seen.insert(t.label.as_str()) {
                return Err(CliError::validation(&format!("{path}.label"), format!("duplicate label `{}`", t.label)));
            }
            let op = t.op.build(&format!("{path}.op"))?;
            let coeff = coefficient(&t.coeff, &t.coeff_params).map_err(|e| CliError::from_core(e, &format!("{path}.coeff")))?;
            let role = match t.role {
                RoleName::System => Role::System,
                RoleName::Control => Role::Control,
            };
            terms.push(Term::new(t.label.clone(), op, coeff, role));
        }
        let dim = terms[0].op.dim();
        let base = match &self.base {
            Some(spec) => spec.build("model.base")?,
            None => HermitianOperator::zeros(dim),
        };
        ParameterizedHamiltonian::new(base, terms).map_err(|e| CliError::from_core(e, "model"))
    }

    pub fn labels(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.label.as_str()).collect()
    }
}

pub fn build_state(amps: &[[f64; 2]]) -> Result<State, CliError> {
    let v: Vec<Complex64> = amps.iter().map(|a| Complex64::new(a[0], a[1])).collect();
    State::normalized(qlevel_core::operator::CVector::from_vec(v)).map_err(|e| CliError::from_core(e, "initial_state"))
}

/// Time course of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        value: f64,
    },
    /// Linear from `from` at the start to `to` at the end.
    Ramp {
        from: f64,
        to: f64,
    },
    /// offset + amplitude·sin(omega·t + phase).
    Sine {
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// One value per grid point.
    Samples {
        values: Vec<f64>,
    },
}

impl Schedule {
    pub fn sample(&self, times: &[f64], path: &str) -> Result<Vec<f64>, CliError> {
        let t0 = times[0];
        let span = times[times.len() - 1] - t0;
        let values: Vec<f64> = match self {
            Schedule::Constant { value } => vec![*value; times.len()],
            Schedule::Ramp { from, to } => times.iter().map(|t| from + (to - from) * (t - t0) / span).collect(),
            Schedule::Sine {
                offset,
                amplitude,
                omega,
                phase,
            } => times.iter().map(|t| offset + amplitude * (omega * t + phase).sin()).collect(),
            Schedule::Samples { values } => {
                if values.len() != times.len() {
                    return Err(CliError::validation(
                        path,
                        format!("{} samples for {} grid points", values.len(), times.len()),
                    ));
                }
                values.clone()
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::validation(path, "schedule produces non-finite values"));
        }
        Ok(values)
    }
}

/// Uniform time grid shared by the time-dependent commands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub duration: f64,
    pub steps: usize,
}

impl Grid {
    pub fn times(&self, path: &str) -> Result<Vec<f64>, CliError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(CliError::validation(&format!("{path}.duration"), "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(CliError::validation(&format!("{path}.steps"), "must be at least 1"));
        }
        Ok(uniform_times(0.0, self.duration, self.steps))
    }
}

/// Sample `schedule[label]` for every label in `labels`, in that order.
pub fn build_path(
    times: Vec<f64>,
    labels: &[&str],
    schedule: &BTreeMap<String, Schedule>,
    path: &str,
) -> Result<ParameterPath, CliError> {
    if let Some(extra) = schedule.keys().find(|k| !labels.contains(&k.as_str())) {
        return Err(CliError::validation(
            &format!("{path}.{extra}"),
            format!("not a scheduled parameter here (expected one of: {})", labels.join(", ")),
        ));
    }
    let columns = labels
        .iter()
        .map(|l| {
            let p = format!("{path}.{l}");
            schedule
                .get(*l)
                .ok_or_else(|| CliError::validation(&p, "missing schedule"))?
                .sample(&times, &p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows = (0..times.len()).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
    ParameterPath::new(times, rows).map_err(|e| CliError::from_core(e, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub duration: f64,
    pub steps: usize,
    #[serde(default = "default_stepper")]
    pub stepper: String,
    /// Also write the state amplitudes.
    #[serde(default)]
    pub write_state: bool,
    /// One schedule per model parameter, keyed by term label.
    pub schedule: BTreeMap<String, Schedule>,
}

fn default_stepper() -> String {
    "exact".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackBlock {
    pub duration: f64,
    pub steps: usize,
    #[serde(default = "default_stepper")]
    pub method: String,
    #[serde(default = "default_residual_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singular_threshold: Option<f64>,
    #[serde(default = "default_bracket")]
    pub bracket: [f64; 2],
    /// Schedules for the system parameters only.
    pub schedule: BTreeMap<String, Schedule>,
    pub band: BandBlock,
}

fn default_residual_tolerance() -> f64 {
    1e-8
}

fn default_bracket() -> [f64; 2] {
    [-10.0, 10.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandBlock {
    pub t0: f64,
    pub pulse_duration: f64,
    pub observation_window: f64,
    #[serde(default = "default_band")]
    pub band: f64,
}

fn default_band() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    pub duration: f64,
    pub steps: usize,
    pub theta_target: f64,
    #[serde(default)]
    pub w_terminal: f64,
    #[serde(default)]
    pub w_running: f64,
    #[serde(default)]
    pub w_fluence: f64,
    pub initial_control: Schedule,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub schedule: BTreeMap<String, Schedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tolerance: Option<f64>,
}

/// Either evenly spaced nodes or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Range { from: f64, to: f64, count: usize },
    List(Vec<f64>),
}

impl AxisSpec {
    pub fn nodes(&self) -> Vec<f64> {
        match self {
            AxisSpec::Range { from, to, count } => linspace((*from, *to), *count),
            AxisSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticName {
    Terminal,
    WindowAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub duration: f64,
    pub steps: usize,
    #[serde(default = "default_stepper")]
    pub stepper: String,
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
    /// Control values a₃, one mesh each.
    pub labels: Vec<f64>,
    #[serde(default = "default_statistic")]
    pub statistic: StatisticName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default = "default_interpolant")]
    pub interpolant: String,
    /// Iso-values contoured on every mesh.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow: Option<FollowBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<StationarityBlock>,
}

fn default_statistic() -> StatisticName {
    StatisticName::Terminal
}

fn default_interpolant() -> String {
    "bilinear".to_string()
}

impl MeshBlock {
    pub fn statistic(&self) -> Result<Statistic, CliError> {
        match (self.statistic, self.window) {
            (StatisticName::Terminal, None) => Ok(Statistic::Terminal),
            (StatisticName::Terminal, Some(_)) => {
                Err(CliError::validation("mesh.window", "only used with statistic = \"window_average\""))
            }
            (StatisticName::WindowAverage, Some(window)) => Ok(Statistic::WindowAverage { window }),
            (StatisticName::WindowAverage, None) => Err(CliError::validation("mesh.window", "required for window_average")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowBlock {
    pub level: f64,
    pub duration: f64,
    pub steps: usize,
    /// Schedules for the two system parameters.
    pub schedule: BTreeMap<String, Schedule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityBlock {
    pub theta_target: f64,
    pub w_running: f64,
    #[serde(default = "one")]
    pub w_control: f64,
    #[serde(default)]
    pub w_a1: f64,
    #[serde(default)]
    pub w_a2: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourBlock {
    /// Mesh CSV, relative to the config file.
    pub mesh: String,
    pub levels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectBlock {
    pub curve_a: String,
    pub curve_b: String,
}

macro_rules! timed_block {
    ($($block:ty),*) => {$(
        impl $block {
            pub fn grid(&self) -> Grid {
                Grid {
                    duration: self.duration,
                    steps: self.steps,
                }
            }
        }
    )*};
}

timed_block!(SimulateBlock, TrackBlock, OptimizeBlock, MeshBlock, FollowBlock);

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            CliError::validation(&path, e.into_inner().message().trim().to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// Name of the single command block.
    pub fn command(&self) -> Result<&'static str, CliError> {
        let present: Vec<&'static str> = [
            ("simulate", self.simulate.is_some()),
            ("track", self.track.is_some()),
            ("optimize", self.optimize.is_some()),
            ("mesh", self.mesh.is_some()),
            ("contour", self.contour.is_some()),
            ("intersect", self.intersect.is_some()),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.then_some(n))
        .collect();
        match present.as_slice() {
            [one] => Ok(one),
            [] => Err(CliError::validation("", "no command block present")),
            many => Err(CliError::validation("", format!("exactly one command block allowed, found {}", many.join(", ")))),
        }
    }

    pub fn model(&self) -> Result<ParameterizedHamiltonian, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::validation("model", "required for this command"))?
            .build()
    }

    pub fn initial_state(&self, dim: usize) -> Result<State, CliError> {
        let amps = self
            .initial_state
            .as_ref()
            .ok_or_else(|| CliError::validation("initial_state", "required for this command"))?;
        if amps.len() != dim {
            return Err(CliError::validation(
                "initial_state",
                format!("{} amplitudes for a {dim}-level model", amps.len()),
            ));
        }
        build_state(amps)
    }

    pub fn observable(&self, dim: usize) -> Result<HermitianOperator, CliError> {
        let op = self
            .observable
            .as_ref()
            .ok_or_else(|| CliError::validation("observable", "required for this command"))?
            .build("observable")?;
        if op.dim() != dim {
            return Err(CliError::validation(
                "observable",
                format!("dimension {} does not match the model ({dim})", op.dim()),
            ));
        }
        Ok(op)
    }
}
