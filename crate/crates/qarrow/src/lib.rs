//! Simulation and verification toolkit for continuously monitored quantum
//! systems under measurement feedback.
//!
//! The crate integrates stochastic master equations for diffusive weak
//! measurement, computes Girsanov path-measure densities and arrow-of-time
//! statistics over trajectory ensembles, certifies numerically that the
//! feedback operator r·A/τ acts as the score of the trajectory distribution
//! (Fréchet, Kähler and flow checks), and trains small score regressors from
//! measurement records for the regimes where the analytic formula degrades
//! (inefficient detection, feedback delay, non-Gaussian noise).
//!
//! Ensembles evaluate in parallel with the `parallel` feature (on by
//! default); results are bit-identical to the sequential fallback because all
//! randomness comes from counter-derived per-trajectory streams and
//! reductions are order-stable.

pub mod algebra;
pub mod error;
pub mod export;
pub mod learning;
pub mod path_measure;
pub mod rng;
pub mod score;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
