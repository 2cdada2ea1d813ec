//! Simulation and stability analysis of linear first-order hyperbolic
//! systems on the unit interval with reflection boundary conditions.
//!
//! The toolkit evolves `∂_t u + a(x,t) ∂_x u + b(x,t) u = 0` on `[0,1]`
//! by a semi-Lagrangian method of characteristics, decides finite-time
//! extinction of the boundary reflection cascade, fits exponential
//! decay/growth rates of perturbed systems, probes `L² → C¹` smoothing
//! under grid refinement, and solves the characteristic quasipolynomial
//! equations of the autonomous examples as an independent rate oracle.
//!
//! Entry points:
//!
//! - [`system::SystemSpec`] describes one problem (speeds, coupling,
//!   reflection matrix); [`system::builtin`] provides the shipped examples.
//! - [`solver::evolve`] runs the simulation and records norm series and
//!   boundary traces.
//! - [`stability`] hosts the boundary operators, extinction order test,
//!   decay fits, perturbation sweeps, and the smoothing probe.
//! - [`spectral`] locates quasipolynomial roots by the argument principle.
//! - [`config`] + [`runner`] implement the config-driven CLI.

pub mod characteristics;
pub mod expr;
pub mod spectral;
pub mod stability;
pub mod solver;
pub mod system;
