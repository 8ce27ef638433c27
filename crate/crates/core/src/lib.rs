//! Time-domain full-waveform inversion of the Lamé parameters in PML-truncated
//! elastic half-spaces, discretized with 27-node spectral elements.

pub mod adjoint;
pub mod error;
pub mod forward;
pub mod gradient;
pub mod harness;
pub mod inversion;
pub mod medium;
pub mod operators;
pub mod specgrid;

pub use error::{FwiError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    mod inversion {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
}
