//! Level sets of ⟨Θ⟩ over the plane of two system parameters (a₁, a₂) with
//! the control amplitude a₃ held fixed on each mesh.

mod contour;
mod evaluate;
mod follow;
mod interp;
mod intersect;
mod stationarity;

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, fmt_f64, parse_f64};

pub use contour::{extract_level, LevelCurve};
pub use evaluate::{evaluate_family, evaluate_mesh, ConstantProtocol, FnProtocol, ProtocolTemplate};
pub use follow::follow_level;
pub use interp::{interpolant, interpolant_registry, interpolate, mesh_gradient, Interpolant, InterpolantFactory};
pub use intersect::{intersect, write_points_csv};
pub use stationarity::{cost_surface, stationarity_residual, ControlCost};

/// Which summary of ⟨Θ⟩(t) a mesh node stores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Statistic {
    /// ⟨Θ⟩ at the final time.
    Terminal,
    /// Trapezoidal mean of ⟨Θ⟩ over the trailing `window` of the run.
    WindowAverage { window: f64 },
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Terminal => "terminal",
            Statistic::WindowAverage { .. } => "window_average",
        }
    }
}

/// A rectangular grid over (a₁, a₂).
#[derive(Clone, Debug, PartialEq)]
pub struct Axes {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
}

impl Axes {
    pub fn new(axis1: Vec<f64>, axis2: Vec<f64>) -> Result<Self> {
        check_axis("axis1", &axis1)?;
        check_axis("axis2", &axis2)?;
        Ok(Self { axis1, axis2 })
    }

    /// `n1` × `n2` evenly spaced nodes covering the two closed intervals.
    pub fn uniform(range1: (f64, f64), n1: usize, range2: (f64, f64), n2: usize) -> Result<Self> {
        Self::new(linspace(range1, n1), linspace(range2, n2))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axis1.len(), self.axis2.len())
    }
}

pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

fn check_axis(name: &'static str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid("mesh axis", format!("{name} is empty")));
    }
    if axis.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("mesh axis", format!("{name} has non-finite entries")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("mesh axis", format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Φ sampled on a grid over (a₁, a₂) at fixed a₃ = `control_label`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMesh {
    axes: Axes,
    control_label: f64,
    /// Row-major: `values[i * n2 + j]` is Φ(axis1[i], axis2[j]).
    values: Vec<f64>,
    statistic: Statistic,
}

impl ParameterMesh {
    pub fn new(axes: Axes, control_label: f64, values: Vec<f64>, statistic: Statistic) -> Result<Self> {
        check_axis("axis1", &axes.axis1)?;
        check_axis("axis2", &axes.axis2)?;
        let (n1, n2) = axes.shape();
        if values.len() != n1 * n2 {
            return Err(Error::DimensionMismatch {
                context: "mesh values",
                expected: n1 * n2,
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "mesh values",
                format!("non-finite value at node ({}, {})", k / n2, k % n2),
            ));
        }
        if !control_label.is_finite() {
            return Err(Error::invalid("mesh", "control label must be finite"));
        }
        Ok(Self {
            axes,
            control_label,
            values,
            statistic,
        })
    }

    /// Tabulate `f(a₁, a₂)`; handy for synthetic fields.
    pub fn from_fn(axes: Axes, control_label: f64, statistic: Statistic, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = axes
            .axis1
            .iter()
            .flat_map(|&x| axes.axis2.iter().map(move |&y| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(axes, control_label, values, statistic)
    }

    pub fn axes(&self) -> &Axes {
        &self.axes
    }

    pub fn axis1(&self) -> &[f64] {
        &self.axes.axis1
    }

    pub fn axis2(&self) -> &[f64] {
        &self.axes.axis2
    }

    pub fn shape(&self) -> (usize, usize) {
        self.axes.shape()
    }

    pub fn control_label(&self) -> f64 {
        self.control_label
    }

    pub fn statistic(&self) -> Statistic {
        self.statistic
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axes.axis2.len() + j]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Same grid and label, new values.
    pub fn map(&self, f: impl Fn(f64, f64, f64) -> f64) -> Result<Self> {
        let n2 = self.axes.axis2.len();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(self.axes.axis1[k / n2], self.axes.axis2[k % n2], v))
            .collect();
        Self::new(self.axes.clone(), self.control_label, values, self.statistic)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let inside = |axis: &[f64], v: f64| {
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            let slack = 1e-12 * (hi - lo).abs().max(lo.abs()).max(hi.abs()).max(1.0);
            v >= lo - slack && v <= hi + slack
        };
        inside(&self.axes.axis1, x) && inside(&self.axes.axis2, y)
    }

    /// Header row `a1\a2,<axis2...>`, then one row per axis1 value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        let mut header = vec!["a1\\a2".to_string()];
        header.extend(self.axes.axis2.iter().map(|&y| fmt_f64(y)));
        out.write_record(&header)?;
        let n2 = self.axes.axis2.len();
        for (i, &x) in self.axes.axis1.iter().enumerate() {
            let mut row = vec![fmt_f64(x)];
            row.extend(self.values[i * n2..(i + 1) * n2].iter().map(|&v| fmt_f64(v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`ParameterMesh::write_csv`]; label and statistic are not
    /// stored in the file and are supplied by the caller.
    pub fn read_csv<R: Read>(r: R, control_label: f64, statistic: Statistic) -> Result<Self> {
        let mut rdr = csv_reader(r, false);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::invalid("mesh csv", "empty file"))??;
        let axis2 = header
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, "mesh csv axis2"))
            .collect::<Result<Vec<_>>>()?;
        let mut axis1 = Vec::new();
        let mut values = Vec::new();
        for rec in records {
            let rec = rec?;
            if rec.len() != axis2.len() + 1 {
                return Err(Error::invalid(
                    "mesh csv",
                    format!("row {} has {} fields, expected {}", axis1.len() + 1, rec.len(), axis2.len() + 1),
                ));
            }
            let mut fields = rec.iter();
            axis1.push(parse_f64(fields.next().unwrap_or(""), "mesh csv axis1")?);
            for f in fields {
                values.push(parse_f64(f, "mesh csv value")?);
            }
        }
        Self::new(Axes::new(axis1, axis2)?, control_label, values, statistic)
    }
}

/// Family of meshes sorted by control label; labels must be distinct and the
/// family non-empty.
pub(crate) fn sorted_family(meshes: &[ParameterMesh]) -> Result<Vec<&ParameterMesh>> {
    if meshes.is_empty() {
        return Err(Error::invalid("mesh family", "no meshes given"));
    }
    let mut family: Vec<&ParameterMesh> = meshes.iter().collect();
    family.sort_by(|a, b| a.control_label.total_cmp(&b.control_label));
    if family.windows(2).any(|w| w[0].control_label == w[1].control_label) {
        return Err(Error::invalid("mesh family", "control labels must be distinct"));
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let axes = Axes::new(vec![-1.0, 0.1, 0.7], vec![0.0, 1.0 / 3.0]).unwrap();
        let mesh = ParameterMesh::from_fn(axes, 0.25, Statistic::Terminal, |x, y| x.sin() * y.exp()).unwrap();
        let mut buf = Vec::new();
        mesh.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a1\\a2,0.0000000000000000e0,3.3333333333333331e-1\n"));
        assert_eq!(text.lines().count(), 4);
        let back = ParameterMesh::read_csv(buf.as_slice(), 0.25, Statistic::Terminal).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn rejects_bad_meshes() {
        let axes = Axes::new(vec![0.0, 1.0], vec![0.0]).unwrap();
        assert!(ParameterMesh::new(axes.clone(), 0.0, vec![1.0], Statistic::Terminal).is_err());
        assert!(ParameterMesh::new(axes, 0.0, vec![1.0, f64::NAN], Statistic::Terminal).is_err());
        assert!(Axes::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Axes::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn linspace_hits_endpoints() {
        let v = linspace((-2.0, 2.0), 81);
        assert_eq!(v[0], -2.0);
        assert_eq!(v[80], 2.0);
        assert_eq!(v[40], 0.0);
        assert_eq!(linspace((3.0, 4.0), 1), vec![3.0]);
    }
}
