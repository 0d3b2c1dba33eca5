//! Local orthonormal systems over binary filtrations.
//!
//! The crate builds orthonormal difference systems for a local function space
//! refined along a binary filtration, and provides the diagnostics used to
//! study them: Remez-type level-set certificates, projector bounds, stopped
//! processes with a three-part decomposition, unconditionality and democracy
//! sweeps, and the non-binary (r-way and tensor) extensions.

pub mod analysis;
pub mod error;
pub mod gundy;
pub mod measure;
pub mod nonbinary;
pub mod ortho;
pub mod quad;
pub mod space;
pub mod tensor2d;

pub use error::{Error, Result};
