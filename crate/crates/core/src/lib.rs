//! Isogeometric Galerkin analysis on Catmull-Clark subdivision surfaces.
//!
//! The crate provides:
//!
//! - [`mesh`]: quad control meshes with adjacency, boundary detection,
//!   element-patch classification and OBJ I/O;
//! - [`subdivision`]: Lane-Riesenfeld curve refinement, Catmull-Clark mesh
//!   refinement and the extended subdivision operators used to evaluate
//!   elements containing an extraordinary vertex;
//! - [`basis`]: exact limit-surface evaluation (basis values and parametric
//!   derivatives) on regular, boundary and irregular element patches;
//! - [`quadrature`]: tensor-product Gauss rules and the adaptive rule that
//!   grades quadrature cells towards an extraordinary vertex;
//! - [`fitting`]: least-squares geometry fitting and the built-in plate,
//!   cylinder and hemisphere control-mesh generators;
//! - [`solver`]: Galerkin assembly of the Laplace-Beltrami weak form with
//!   penalty Dirichlet conditions, manufactured solutions and error norms;
//! - [`harness`]: named experiment cases producing convergence, point-wise
//!   error, sparsity and timing reports as CSV files.

pub mod basis;
pub mod fitting;
pub mod harness;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod subdivision;
