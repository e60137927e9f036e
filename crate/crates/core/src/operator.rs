//! Dense complex algebra for finite-dimensional systems.
//!
//! Units follow ħ = 1, so a Hamiltonian's entries are energies and times are
//! inverse energies. Matrices are stored densely; the systems handled here
//! are small truncated bases (N up to a few dozen).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Normalized pure state |ψ⟩.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    amps: CVector,
}

impl State {
    /// Allowed deviation of ‖ψ‖ from one when constructing from user data.
    pub const NORM_TOLERANCE: f64 = 1e-9;

    pub fn new(amps: CVector) -> Result<Self> {
        if amps.len() < 2 {
            return Err(Error::StateTooSmall(amps.len()));
        }
        let norm = amps.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { amps })
    }

    /// Rescale `amps` to unit norm. This is the only place renormalization
    /// happens.
    pub fn normalized(amps: CVector) -> Result<Self> {
        let norm = amps.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Self::new(amps.unscale(norm))
    }

    pub fn from_slice(amps: &[Complex64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amps))
    }

    /// Computational basis vector |k⟩ in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, count: dim });
        }
        let mut amps = CVector::zeros(dim);
        amps[k] = Complex64::new(1.0, 0.0);
        Self::new(amps)
    }

    /// Wraps the output of a propagation step. The norm is whatever the
    /// integrator produced and is recorded, not corrected.
    pub(crate) fn evolved(amps: CVector) -> Self {
        Self { amps }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }
}

/// Hermitian N×N operator. Hermiticity is checked on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    m: CMatrix,
}

impl HermitianOperator {
    /// Entrywise tolerance on |A - A^H|, relative to max(1, max |A_ij|).
    pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

    pub fn new(name: &str, m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid(
                "operator",
                format!("`{name}` is {}x{}, not square", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("operator", format!("`{name}` has non-finite entries")));
        }
        let deviation = hermitian_deviation(&m);
        let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
        if deviation > Self::HERMITIAN_TOLERANCE * scale {
            return Err(Error::NotHermitian {
                name: name.to_string(),
                deviation,
            });
        }
        Ok(Self { m })
    }

    /// Build from a matrix already known to be Hermitian up to rounding,
    /// projecting onto the Hermitian part.
    pub(crate) fn hermitize(m: CMatrix) -> Self {
        let h = (&m + m.adjoint()).scale(0.5);
        Self { m: h }
    }

    /// Row-major entries, length N².
    pub fn from_row_major(name: &str, entries: &[Complex64]) -> Result<Self> {
        let n = (entries.len() as f64).sqrt().round() as usize;
        if n * n != entries.len() || n == 0 {
            return Err(Error::invalid(
                "operator",
                format!("`{name}` has {} entries, not a perfect square", entries.len()),
            ));
        }
        Self::new(name, CMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = CVector::from_iterator(diag.len(), diag.iter().map(|&x| Complex64::new(x, 0.0)));
        Self {
            m: CMatrix::from_diagonal(&d),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: CMatrix::zeros(n, n),
        }
    }

    pub fn pauli_x() -> Self {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        Self {
            m: CMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        }
    }

    pub fn pauli_y() -> Self {
        let o = Complex64::new(0.0, 0.0);
        Self {
            m: CMatrix::from_row_slice(2, 2, &[o, -I, I, o]),
        }
    }

    pub fn pauli_z() -> Self {
        Self::from_real_diagonal(&[1.0, -1.0])
    }

    /// a†a on an `n`-level truncated oscillator.
    pub fn number_op(n: usize) -> Self {
        Self::from_real_diagonal(&(0..n).map(|k| k as f64).collect::<Vec<_>>())
    }

    /// (a + a†)/√2 on an `n`-level truncated oscillator.
    pub fn position_op(n: usize) -> Self {
        let a = lowering(n);
        Self::hermitize((&a + a.adjoint()).unscale(std::f64::consts::SQRT_2))
    }

    /// i(a† − a)/√2 on an `n`-level truncated oscillator.
    pub fn momentum_op(n: usize) -> Self {
        let a = lowering(n);
        Self::hermitize((a.adjoint() - &a).scale(1.0 / std::f64::consts::SQRT_2) * I)
    }

    /// |k⟩⟨k| in dimension `n`.
    pub fn projector(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, count: n });
        }
        let mut diag = vec![0.0; n];
        diag[k] = 1.0;
        Ok(Self::from_real_diagonal(&diag))
    }

    /// Resolve a builtin by name: `pauli_x`, `pauli_y`, `pauli_z`,
    /// `identity(N)`, `zero(N)`, `number_op(N)`, `position_op(N)`,
    /// `momentum_op(N)`, `projector(N,k)`.
    pub fn builtin(name: &str) -> Result<Self> {
        let name = name.trim();
        let (head, args) = match name.split_once('(') {
            Some((head, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(|| {
                    Error::invalid("operator", format!("unbalanced parentheses in `{name}`"))
                })?;
                let args = inner
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::invalid("operator", format!("`{name}`: {e}")))?;
                (head.trim(), args)
            }
            None => (name, Vec::new()),
        };
        let arity = |k: usize| -> Result<()> {
            if args.len() != k {
                return Err(Error::invalid(
                    "operator",
                    format!("`{head}` takes {k} argument(s), got {}", args.len()),
                ));
            }
            Ok(())
        };
        let size = |n: usize| -> Result<usize> {
            if n < 2 {
                return Err(Error::invalid("operator", format!("`{name}`: dimension must be >= 2")));
            }
            Ok(n)
        };
        match head {
            "pauli_x" | "sigma_x" => arity(0).map(|_| Self::pauli_x()),
            "pauli_y" | "sigma_y" => arity(0).map(|_| Self::pauli_y()),
            "pauli_z" | "sigma_z" => arity(0).map(|_| Self::pauli_z()),
            "identity" => arity(1).and_then(|_| Ok(Self::identity(size(args[0])?))),
            "zero" => arity(1).and_then(|_| Ok(Self::zeros(size(args[0])?))),
            "number_op" => arity(1).and_then(|_| Ok(Self::number_op(size(args[0])?))),
            "position_op" => arity(1).and_then(|_| Ok(Self::position_op(size(args[0])?))),
            "momentum_op" => arity(1).and_then(|_| Ok(Self::momentum_op(size(args[0])?))),
            "projector" => arity(2).and_then(|_| Self::projector(size(args[0])?, args[1])),
            _ => Err(Error::UnknownStrategy {
                kind: "builtin operator",
                name: head.to_string(),
                known: "pauli_x, pauli_y, pauli_z, identity(N), zero(N), number_op(N), \
                        position_op(N), momentum_op(N), projector(N,k)"
                    .to_string(),
            }),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { m: self.m.scale(s) }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        check_dims("operator sum", self.dim(), other.dim())?;
        Ok(Self { m: &self.m + &other.m })
    }

    /// self + s·other, in place.
    pub(crate) fn axpy(&mut self, s: f64, other: &Self) {
        self.m.zip_apply(&other.m, |a, b| *a += b * s);
    }

    /// Real eigenvalues (ascending order not guaranteed) and unitary eigenvectors.
    pub fn eigen(&self) -> Result<(DVector<f64>, CMatrix)> {
        let eig = SymmetricEigen::try_new(self.m.clone(), 1e-15, 10_000).ok_or(Error::EigenFailure)?;
        Ok((eig.eigenvalues, eig.eigenvectors))
    }

    /// Largest |eigenvalue|.
    pub fn spectral_norm(&self) -> f64 {
        match self.eigen() {
            Ok((vals, _)) => vals.iter().fold(0.0, |acc, v| acc.max(v.abs())),
            // Frobenius norm bounds the spectral norm from above.
            Err(_) => self.m.norm(),
        }
    }

    /// Θψ as a plain vector.
    pub fn apply(&self, psi: &State) -> Result<CVector> {
        check_dims("operator application", self.dim(), psi.dim())?;
        Ok(&self.m * psi.amplitudes())
    }
}

/// Largest entrywise |M - M^H|.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Truncated lowering operator a with a|k⟩ = √k |k−1⟩.
pub fn lowering(n: usize) -> CMatrix {
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub(crate) fn check_dims(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// AB − BA.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<CMatrix> {
    check_dims("commutator", a.dim(), b.dim())?;
    Ok(a.matrix() * b.matrix() - b.matrix() * a.matrix())
}

/// i[A, B], which is Hermitian whenever A and B are.
pub fn i_commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<HermitianOperator> {
    Ok(HermitianOperator::hermitize(commutator(a, b)? * I))
}

/// ⟨ψ|Θ|ψ⟩.
pub fn expectation(theta: &HermitianOperator, psi: &State) -> Result<f64> {
    let z = psi.amplitudes().dotc(&theta.apply(psi)?);
    let scale = theta.matrix().iter().map(|z| z.norm()).fold(1.0, f64::max);
    if z.im.abs() > 1e-10 * scale {
        return Err(Error::ImaginaryResidual(z.im));
    }
    Ok(z.re)
}

/// Ingredients of the level-set condition at one instant: the drift rate
/// i⟨[H_rest, Θ]⟩ with the control term removed, and ⟨Θ_a⟩ = ⟨i[∂H/∂a_i, Θ]⟩
/// for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetRates {
    pub theta_o: f64,
    pub theta_a: Vec<f64>,
}

impl LevelSetRates {
    pub fn new(theta_o: f64, theta_a: Vec<f64>) -> Result<Self> {
        if !theta_o.is_finite() || theta_a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("level-set rates", "non-finite entry"));
        }
        Ok(Self { theta_o, theta_a })
    }

    /// Contraction u_a·⟨Θ_a⟩ with a parameter velocity.
    pub fn contract(&self, velocity: &[f64]) -> f64 {
        self.theta_a.iter().zip(velocity).map(|(t, u)| t * u).sum()
    }
}
