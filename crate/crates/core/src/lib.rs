//! Classical simulation laboratory for the variational quantum-neural hybrid
//! eigensolver (VQNHE).
//!
//! A parameterized circuit prepares `|ψ⟩ = U(θ)|init⟩`, a classical network
//! rescales each computational-basis amplitude by `f_φ(s)`, and the energy of
//! the rescaled state is estimated from bitstring samples of `U` and of `U`
//! followed by a short per-term measurement circuit.
//!
//! Module map:
//! - [`qsim`]: dense statevector simulation, circuits, sampling.
//! - [`pauli`]: Pauli strings, Hamiltonians, model builders, exact diagonalization.
//! - [`measure`]: star-qubit measurement circuits `V` and `V'`.
//! - [`postproc`]: Jastrow, gated MLP, RBM post-processors with analytic gradients.
//! - [`estimate`]: exact, infinite-shot and sampled energy estimators, shot budgets.
//! - [`ansatz`]: the circuit families used by the benchmarks.
//! - [`train`]: parameter-shift and adjoint gradients, Adam, staged joint training.
//! - [`bench`]: named experiments, result records, shot studies, CSV export.

pub mod ansatz;
pub mod bench;
pub mod error;
pub mod estimate;
pub mod measure;
pub mod pauli;
pub mod postproc;
pub mod qsim;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
