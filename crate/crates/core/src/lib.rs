//! Quantum control of expectation values on finite-dimensional systems.
//!
//! The crate covers three connected tasks:
//!
//! * [`tracking`]: choose the control field instant by instant so that a
//!   chosen observable ⟨Θ⟩ stays constant while system parameters drift.
//! * [`oct`]: adjoint-based optimal control of a terminal and running
//!   deviation cost plus a fluence penalty, with gradient descent.
//! * [`levelset`]: level sets of ⟨Θ⟩ and of control cost over a
//!   two-parameter plane, their intersections, and level following.
//!
//! Interchangeable algorithms (propagation methods, coefficient kinds,
//! interpolants) are resolved by name through [`registry::Registry`].

pub mod error;
pub mod hamiltonian;
pub mod io;
pub mod levelset;
pub mod oct;
pub mod operator;
pub mod propagator;
pub mod registry;
pub mod roots;
pub mod tracking;

pub use error::{Error, Result};
pub use hamiltonian::{ParameterPath, ParameterizedHamiltonian, Role, Term};
pub use operator::{commutator, expectation, HermitianOperator, LevelSetRates, State};
pub use propagator::{propagate, Stepper, Trajectory};
