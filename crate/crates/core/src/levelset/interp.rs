use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::ParameterMesh;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// A continuous surface through the nodes of one mesh.
pub trait Interpolant: Send + Sync + fmt::Debug {
    fn value(&self, x: f64, y: f64) -> Result<f64>;
}

pub type InterpolantFactory = fn(&ParameterMesh) -> Result<Box<dyn Interpolant>>;

/// Built-in interpolants: `bilinear` and `bicubic`.
pub fn interpolant_registry() -> &'static Registry<InterpolantFactory> {
    static REG: OnceLock<Registry<InterpolantFactory>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<InterpolantFactory> = Registry::new("interpolant");
        reg.register("bilinear", |m| Ok(Box::new(Bilinear { mesh: m.clone() })));
        reg.register("bicubic", |m| Ok(Box::new(Bicubic::new(m)?)));
        reg
    })
}

pub fn interpolant(mesh: &ParameterMesh, kind: &str) -> Result<Box<dyn Interpolant>> {
    (interpolant_registry().get(kind)?)(mesh)
}

/// One-off evaluation. Build the interpolant once with [`interpolant`] when
/// querying repeatedly.
pub fn interpolate(mesh: &ParameterMesh, p: [f64; 2], kind: &str) -> Result<f64> {
    interpolant(mesh, kind)?.value(p[0], p[1])
}

/// Cell index and fractional position of `v`; the point must already be
/// known to lie within the axis span.
fn locate(axis: &[f64], v: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 {
        return (0, 0.0);
    }
    let i = axis.partition_point(|&a| a <= v).clamp(1, n - 1) - 1;
    let t = ((v - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
    (i, t)
}

fn check_hull(mesh: &ParameterMesh, x: f64, y: f64) -> Result<()> {
    if mesh.contains(x, y) {
        Ok(())
    } else {
        Err(Error::OutOfHull(x, y))
    }
}

#[derive(Debug)]
struct Bilinear {
    mesh: ParameterMesh,
}

impl Interpolant for Bilinear {
    fn value(&self, x: f64, y: f64) -> Result<f64> {
        check_hull(&self.mesh, x, y)?;
        let (n1, n2) = self.mesh.shape();
        let (i, s) = locate(self.mesh.axis1(), x);
        let (j, t) = locate(self.mesh.axis2(), y);
        let i1 = (i + 1).min(n1 - 1);
        let j1 = (j + 1).min(n2 - 1);
        let v = |a, b| self.mesh.value(a, b);
        if s == 0.0 && t == 0.0 {
            return Ok(v(i, j));
        }
        let lo = v(i, j) + t * (v(i, j1) - v(i, j));
        let hi = v(i1, j) + t * (v(i1, j1) - v(i1, j));
        Ok(lo + s * (hi - lo))
    }
}

/// Linear map from node values to the second derivatives of the
/// interpolating cubic spline with not-a-knot ends.
fn spline_second_derivative_map(x: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.len();
    if n <= 2 {
        return Ok(DMatrix::zeros(n, n));
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    if n == 3 {
        // The not-a-knot spline on three points is the interpolating parabola.
        let mut s = DMatrix::zeros(3, 3);
        let denom = h[0] + h[1];
        for r in 0..3 {
            s[(r, 0)] = 2.0 / (h[0] * denom);
            s[(r, 1)] = -2.0 / (h[0] * h[1]);
            s[(r, 2)] = 2.0 / (h[1] * denom);
        }
        return Ok(s);
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut d = DMatrix::<f64>::zeros(n, n);
    a[(0, 0)] = h[1];
    a[(0, 1)] = -(h[0] + h[1]);
    a[(0, 2)] = h[0];
    a[(n - 1, n - 3)] = h[n - 2];
    a[(n - 1, n - 2)] = -(h[n - 3] + h[n - 2]);
    a[(n - 1, n - 1)] = h[n - 3];
    for i in 1..n - 1 {
        a[(i, i - 1)] = h[i - 1];
        a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
        a[(i, i + 1)] = h[i];
        d[(i, i - 1)] = 6.0 / h[i - 1];
        d[(i, i)] = -6.0 / h[i - 1] - 6.0 / h[i];
        d[(i, i + 1)] = 6.0 / h[i];
    }
    a.lu()
        .solve(&d)
        .ok_or_else(|| Error::invalid("bicubic interpolant", "singular spline system"))
}

/// Tensor-product cubic spline with not-a-knot boundaries.
///
/// Stores the node values together with ∂²/∂x², ∂²/∂y² and ∂⁴/∂x²∂y² of the
/// spline at every node; each cell is then a fixed bicubic.
#[derive(Debug)]
struct Bicubic {
    mesh: ParameterMesh,
    mxx: DMatrix<f64>,
    myy: DMatrix<f64>,
    mxxyy: DMatrix<f64>,
}

impl Bicubic {
    fn new(mesh: &ParameterMesh) -> Result<Self> {
        let (n1, n2) = mesh.shape();
        let f = DMatrix::from_row_slice(n1, n2, mesh.values());
        let s1 = spline_second_derivative_map(mesh.axis1())?;
        let s2 = spline_second_derivative_map(mesh.axis2())?;
        let mxx = &s1 * &f;
        let myy = &f * s2.transpose();
        let mxxyy = &mxx * s2.transpose();
        Ok(Self {
            mesh: mesh.clone(),
            mxx,
            myy,
            mxxyy,
        })
    }
}

/// Weights of (y_i, y_{i+1}, M_i, M_{i+1}) in the cubic on one interval.
fn cubic_weights(axis: &[f64], i: usize, t: f64) -> ([usize; 2], [f64; 4]) {
    if axis.len() == 1 {
        return ([0, 0], [1.0, 0.0, 0.0, 0.0]);
    }
    let h = axis[i + 1] - axis[i];
    let a = 1.0 - t;
    let b = t;
    let c = (a * a * a - a) * h * h / 6.0;
    let d = (b * b * b - b) * h * h / 6.0;
    ([i, i + 1], [a, b, c, d])
}

impl Interpolant for Bicubic {
    fn value(&self, x: f64, y: f64) -> Result<f64> {
        check_hull(&self.mesh, x, y)?;
        let (i, s) = locate(self.mesh.axis1(), x);
        let (j, t) = locate(self.mesh.axis2(), y);
        if s == 0.0 && t == 0.0 {
            return Ok(self.mesh.value(i, j));
        }
        let (ri, wx) = cubic_weights(self.mesh.axis1(), i, s);
        let (cj, wy) = cubic_weights(self.mesh.axis2(), j, t);
        let mut total = 0.0;
        for (p, &wxp) in wx.iter().enumerate() {
            let row = ri[p % 2];
            let curv_x = p >= 2;
            for (q, &wyq) in wy.iter().enumerate() {
                let col = cj[q % 2];
                let curv_y = q >= 2;
                let node = match (curv_x, curv_y) {
                    (false, false) => self.mesh.value(row, col),
                    (true, false) => self.mxx[(row, col)],
                    (false, true) => self.myy[(row, col)],
                    (true, true) => self.mxxyy[(row, col)],
                };
                total += wxp * wyq * node;
            }
        }
        Ok(total)
    }
}

/// Gradient of the chosen interpolant by central differences over half the
/// local cell width; at the hull boundary the stencil is cut off and the
/// difference becomes one-sided. A single-node axis contributes zero.
pub fn mesh_gradient(mesh: &ParameterMesh, p: [f64; 2], kind: &str) -> Result<[f64; 2]> {
    check_hull(mesh, p[0], p[1])?;
    let f = interpolant(mesh, kind)?;
    let partial = |axis: &[f64], along_x: bool| -> Result<f64> {
        if axis.len() == 1 {
            return Ok(0.0);
        }
        let v = if along_x { p[0] } else { p[1] };
        let (i, _) = locate(axis, v);
        let half = 0.25 * (axis[i + 1] - axis[i]);
        let lo = (v - half).max(axis[0]);
        let hi = (v + half).min(axis[axis.len() - 1]);
        let (flo, fhi) = if along_x {
            (f.value(lo, p[1])?, f.value(hi, p[1])?)
        } else {
            (f.value(p[0], lo)?, f.value(p[0], hi)?)
        };
        Ok((fhi - flo) / (hi - lo))
    };
    Ok([partial(mesh.axis1(), true)?, partial(mesh.axis2(), false)?])
}
