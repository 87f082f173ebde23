//! Optimal probabilistic (abstention-based) phase estimation for `n` qubits
//! under local dephasing noise.
//!
//! The toolkit decomposes a dephased symmetric probe into total-spin blocks,
//! solves the per-block constrained ground-state problem that yields the
//! optimal measurement filter at a given success probability, assembles the
//! global fidelity-vs-success trade-off curve (with an independent
//! semidefinite-programming cross-solver), evaluates the closed-form
//! asymptotics, and validates everything against a brute-force dense oracle
//! at small qubit counts.

pub mod asymptotics;
pub mod error;
pub mod filter;
pub mod fmt;
pub mod oracle;
pub mod probe_opt;
pub mod sdp;
pub mod solver;
pub mod spin;
pub mod tradeoff;
pub mod tridiag;
pub mod verify;

pub use error::{Error, Result};
pub use spin::{
    decompose, BlockDecomposition, DecomposeOptions, NoiseModel, ProbeKind, ProbeSpec, SpinBlock,
};
