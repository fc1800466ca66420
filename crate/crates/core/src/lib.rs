//! Simulator for the one-phase Muskat problem in a periodic porous strip whose
//! permeability jumps across a fixed internal curve.
//!
//! The moving fluid domain is pulled back onto two fixed reference strips by
//! the harmonic-extension map `ψ = e + (0, δψ)`. On the strips the pulled-back
//! hydraulic head solves a variable-coefficient elliptic problem, and the
//! interface moves with the semi-ALE velocity `h_t = w₂⁺`.

pub mod diagnostics;
pub mod diffeo;
pub mod error;
pub mod evolution;
pub mod io;
pub mod pressure;
pub mod spectral;

pub use diffeo::{PermeabilityProfile, Strip, StripField, StripGrid};
pub use error::{MuskatError, Result};
pub use pressure::{HeadSolution, SolverKind};
pub use spectral::{PeriodicField1D, SobolevIndex};
