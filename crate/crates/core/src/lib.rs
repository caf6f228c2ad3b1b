//! Estimation of received-signal-strength (RSS) fields on a fixed grid from
//! noisy, crowdsourced sensor reports.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the whole numerical
//! pipeline:
//!
//! - [`model`]: positions, grids, snapshots and the log-distance features.
//! - [`synth`]: ground-truth fields with correlated shadowing and noisy reports.
//! - [`localize`]: recursive weighted-centroid transmitter localization and
//!   least-squares refinement.
//! - [`empbayes`]: empirical-Bayes estimation of the path-loss exponent and
//!   transmit power hyper-parameters.
//! - [`gp`]: the composite kernel, marginal-likelihood fitting and the static
//!   field posterior.
//! - [`recursive`]: the forgetting-factor recursion over time steps.
//! - [`bounds`]: the hybrid Cramér-Rao bound on per-node MSE.
//! - [`baseline`]: ordinary kriging on detrended residuals.
//!
//! File formats, configuration and the command line live in the companion
//! `rssfield-cli` crate.

#![no_std]

extern crate alloc;

pub mod baseline;
pub mod bounds;
pub mod empbayes;
mod error;
pub mod gp;
pub mod linalg;
pub mod localize;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod recursive;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    log_distance_feature, pairwise_distance, rho_u_from, Grid, MeasurementSnapshot, NoiseModel,
    Position, PropagationParams, SensorReport, D_MIN,
};
