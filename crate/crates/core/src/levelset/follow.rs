use super::{interpolant, sorted_family};
use super::ParameterMesh;
use crate::error::{Error, Result};
use crate::hamiltonian::ParameterPath;
use crate::roots::bracketed_root;

const ROOT_TOLERANCE: f64 = 1e-10;

/// a₃(t) keeping Φ(a₁(t), a₂(t); a₃) = `c` along a two-column system path.
///
/// Between adjacent mesh labels Φ is interpolated linearly in a₃. At each
/// sample the first label interval (in ascending a₃) whose end values do not
/// share a strict sign with respect to `c` is searched; when Φ equals `c`
/// exactly at a label, the lowest such label is returned.
pub fn follow_level(meshes: &[ParameterMesh], system_path: &ParameterPath, c: f64, kind: &str) -> Result<Vec<f64>> {
    if system_path.n_params() != 2 {
        return Err(Error::DimensionMismatch {
            context: "system path for level following",
            expected: 2,
            found: system_path.n_params(),
        });
    }
    if !c.is_finite() {
        return Err(Error::invalid("level", "must be finite"));
    }
    let family = sorted_family(meshes)?;
    let labels: Vec<f64> = family.iter().map(|m| m.control_label()).collect();
    let surfaces = family
        .iter()
        .map(|m| interpolant(m, kind))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(system_path.len());
    for (sample, row) in system_path.values().iter().enumerate() {
        let phi = surfaces
            .iter()
            .map(|s| s.value(row[0], row[1]))
            .collect::<Result<Vec<f64>>>()?;
        let dev: Vec<f64> = phi.iter().map(|v| v - c).collect();
        let no_bracket = || {
            let (min, max) = phi.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            Error::NoBracket {
                sample,
                level: c,
                min,
                max,
            }
        };
        if labels.len() == 1 {
            if dev[0].abs() <= ROOT_TOLERANCE {
                out.push(labels[0]);
                continue;
            }
            return Err(no_bracket());
        }
        let Some(m) = (0..labels.len() - 1).find(|&m| dev[m] == 0.0 || dev[m].signum() != dev[m + 1].signum()) else {
            return Err(no_bracket());
        };
        let (l0, l1) = (labels[m], labels[m + 1]);
        let line = |a3: f64| {
            let s = (a3 - l0) / (l1 - l0);
            dev[m] + s * (dev[m + 1] - dev[m])
        };
        out.push(bracketed_root(line, l0, l1, ROOT_TOLERANCE)?);
    }
    Ok(out)
}
