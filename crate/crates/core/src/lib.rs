//! Solver library for two-player semidefinite games.
//!
//! Strategies are real symmetric positive semidefinite matrices with trace
//! one (density matrices). Nash equilibria are characterized by a
//! semidefinite complementarity system `X·W = 0`, `Y·V = 0` with PSD slack
//! matrices `W = w·I − Φ_A(Y)` and `V = v·I − Φ'_B(X)`. The solver perturbs
//! the game with a bonus parameter `t` that makes a chosen diagonal strategy
//! dominant, then numerically traces the resulting solution curve back to
//! `t = 0` with a pseudo-arclength predictor-corrector, switching eigenvalue
//! active sets at the event points where strict complementarity fails.
//!
//! Modules:
//! - [`linalg`]: dense symmetric eigensolver utilities, simultaneous
//!   diagonalization, numerical rank.
//! - [`game`]: payoff tensors, payoff operators, slack matrices, best
//!   responses, Nash verification.
//! - [`bimatrix`]: classical Lemke-Howson pivoting and support enumeration,
//!   used as independent oracles through the diagonal embedding.
//! - [`tracer`]: the homotopy core (residual system, Jacobian, start point,
//!   predictor-corrector stepping).
//! - [`events`]: event detection, refinement, branch switching, Puiseux
//!   exponent fitting, non-degeneracy probes.
//! - [`io`]: file formats for games, strategies and traces.
//! - [`fixtures`]: small reference games used across the test suites.

pub mod bimatrix;
pub mod events;
pub mod fixtures;
pub mod game;
pub mod io;
pub mod linalg;
pub mod tracer;

pub use game::{DensityMatrix, NashCertificate, PayoffTensor, SdGame, StructureMask};
pub use linalg::SymMatrix;
