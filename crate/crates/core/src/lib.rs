//! Floquet quasienergy bundles, their local atlases and the bundle gerbe
//! built from them, for periodically kicked and smoothly driven systems.

pub mod atlas;
pub mod cli;
pub mod error;
pub mod floquet;
pub mod gerbe;
pub mod holonomy;
pub mod linalg;
pub mod numerics;
pub mod propagator;

pub use error::{Error, Result};
pub use floquet::{
    floquet_decompose, moore_stedman_phase_split, quasienergy_expectation_residual, quasienergy_state,
    FloquetDecomposition, FloquetSystem, QuasienergyState, ThetaPropagator,
};
pub use linalg::{CMatrix, CVector, UnitaryMatrix, C64};
pub use propagator::{KickedTwoLevelModel, PeriodicHamiltonianModel};
