//! Markov chain Monte Carlo samplers for heavy-tailed targets.
//!
//! The crate bundles six one-step kernels (random-walk Metropolis with light
//! and heavy-tailed proposals, MALA, ULA, the independence sampler, the
//! stereographic projection sampler and an Euler chain driven by isotropic
//! stable noise), Monte Carlo checks of drift conditions, ergodic-average
//! diagnostics and an encoded table of the theoretical CLT and rate verdicts
//! for each sampler.
//!
//! Ensembles of chains run data-parallel through rayon when the `parallel`
//! feature is enabled (the default) and sequentially otherwise. Results are
//! identical in both modes: every chain owns a counter-based random stream
//! keyed by its index.

pub mod diagnostics;
pub mod drift;
mod error;
pub mod kernels;
pub mod oracle;
pub mod par;
pub mod quad;
pub mod random;
pub mod runner;
pub mod sphere;
pub mod targets;

pub use error::{Error, Result};
pub use kernels::{Algorithm, ChainState, DriftKind, Kernel, KernelConfig};
pub use random::RngStream;
pub use targets::{TargetKind, TargetSpec};
