//! Finite element solver for linear-quadratic Dirichlet boundary control
//! problems with energy regularization on polygonal domains.
//!
//! The library solves
//!
//! ```text
//!   min J(u) = 1/2 ||y - y_d||^2_{L2} + kappa/2 |u - u_d|^2_{H^{1/2}}
//!   s.t. -div(A grad y) + b . grad y + a0 y = 0,   y = u on the boundary,
//! ```
//!
//! where the control `u` lives on the boundary of a polygon and the
//! `H^{1/2}`-seminorm is realized through harmonic extension. The main
//! pieces are:
//!
//! - [`mesh`]: graded triangulations of rectilinear polygons by
//!   newest-vertex bisection, with nodal prolongation between levels
//! - [`quadrature`]: triangle rules for coefficient sampling, load
//!   vectors and error integrals
//! - [`sparse`]: a small CSR matrix type with submatrix extraction
//! - [`assemble`]: P1 mass, stiffness, advection-diffusion and load assembly
//! - [`solver`]: sparse LU/Cholesky factorization handles and a
//!   matrix-free preconditioned conjugate gradient loop
//! - [`control`]: the reduced boundary-control operator, its factorized
//!   context, and reduced/monolithic solvers
//! - [`convergence`]: H1-type error norms, manufactured solutions and
//!   observed convergence orders
//! - [`experiments`]: canned experiment setups, table generation and the
//!   configuration surface of the command line interface

pub mod assemble;
pub mod control;
pub mod convergence;
pub mod experiments;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assemble::{
    assemble_load, assemble_mass, assemble_operator, assemble_stiffness, interpolate,
    CoefficientSet, ScalarField, VectorField,
};
pub use control::{solve_monolithic, ControlProblem, MonolithicSolution, ReducedSystem};
pub use convergence::{
    bump, bump_d1, bump_d2, eoc, h1_error, h1_seminorm_error, l2_error, singular_gradient,
    singular_value,
};
pub use experiments::{
    example1, example2, extrapolate_objective, parse_csv, run, run_study, run_with, to_csv,
    to_markdown, ConvergenceRow, ErrorMode, ExactSolution, Example, RunConfig, SolverChoice,
    Study,
};
pub use mesh::{initial_mesh, make_lshape, prolong_nodal, refine_graded, PolygonSpec, TriMesh};
pub use quadrature::QuadRule;
pub use solver::{pcg, Factorization, PcgReport};
pub use sparse::CsrMatrix;

/// Errors produced by mesh construction, assembly and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The polygon is not supported by the mesh generator.
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    /// Two meshes passed to a hierarchy operation are not parent and child.
    #[error("meshes are not nested: {0}")]
    NotNested(String),
    /// An index set refers to entries outside the matrix.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    /// Matrix factorization failed.
    #[error("factorization failed: {0}")]
    Factorization(String),
    /// The conjugate gradient iteration stopped without reaching the
    /// requested tolerance.
    #[error("pcg did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    /// A numerical result is outside the range the caller can accept.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The experiment configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// File input or output failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
