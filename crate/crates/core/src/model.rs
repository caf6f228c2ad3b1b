//! Domain types and the geometric primitives shared by every stage.
//!
//! Units: positions and distances in meters, RSS in dBm, variances in dB².
//! The location-error scale `rho_u` is kept numerically as `10·α·σ_d·log10(e)`
//! so that the per-sensor standard deviation is `rho_u / d̂` in dB.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LOG10_E;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result};

/// Floor applied to every sensor/node to transmitter distance before taking
/// logarithms or forming the `1/d̂²` location-error weights.
pub const D_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        pairwise_distance(*self, *other)
    }
}

/// Euclidean distance between two points.
pub fn pairwise_distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Distance clamped below at [`D_MIN`].
pub fn clamped_distance(a: Position, b: Position) -> f64 {
    pairwise_distance(a, b).max(D_MIN)
}

/// `10·log10(d)`, the log-distance regressor multiplying the path-loss exponent.
pub fn log_distance_feature(d_hat: f64) -> Result<f64> {
    if d_hat > 0.0 && d_hat.is_finite() {
        Ok(10.0 * d_hat.log10())
    } else {
        Err(Error::NonPositiveDistance(d_hat))
    }
}

/// Feature of an already-clamped distance; never fails.
pub(crate) fn feature_clamped(d: f64) -> f64 {
    10.0 * d.max(D_MIN).log10()
}

/// Location-error scale `10·α·σ_d·log10(e)`.
pub fn rho_u_from(alpha: f64, sigma_d: f64) -> f64 {
    10.0 * alpha * sigma_d * LOG10_E
}

/// The fixed set of locations where the field is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<Position>,
}

impl Grid {
    /// Builds a grid, rejecting empty node lists, non-finite coordinates and
    /// duplicate nodes.
    pub fn new(nodes: Vec<Position>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one node".into()));
        }
        if let Some(i) = nodes.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("grid node {i} is not finite")));
        }
        let mut sorted: Vec<(u64, u64, usize)> = nodes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.x.to_bits(), p.y.to_bits(), i))
            .collect();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidInput(format!(
                    "grid nodes {} and {} coincide",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// Cell-centred uniform lattice over `[0, width] × [0, height]`, rows of
    /// `cols` nodes, row-major from the origin.
    pub fn uniform(width: f64, height: f64, cols: usize, rows: usize) -> Result<Self> {
        if cols == 0 || rows == 0 || !(width > 0.0) || !(height > 0.0) {
            return Err(Error::InvalidInput("uniform grid needs positive extent and counts".into()));
        }
        let dx = width / cols as f64;
        let dy = height / rows as f64;
        let nodes = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| Position::new((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy))
            })
            .collect();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[Position] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReport {
    pub sensor_id: u64,
    /// Position reported by the sensor, possibly wrong.
    pub position: Position,
    pub rss: f64,
}

/// Everything reported at one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSnapshot {
    pub t: u64,
    pub sensors: Vec<SensorReport>,
}

impl MeasurementSnapshot {
    pub fn new(t: u64, sensors: Vec<SensorReport>) -> Result<Self> {
        let snap = Self { t, sensors };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.sensors.iter().enumerate() {
            if !s.rss.is_finite() || !s.position.is_finite() {
                return Err(Error::InvalidInput(format!("report {i} has non-finite values")));
            }
        }
        let mut ids: Vec<u64> = self.sensors.iter().map(|s| s.sensor_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!("duplicate sensor id {}", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.sensors.iter().map(|s| s.position).collect()
    }

    pub fn rss(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.rss).collect()
    }
}

/// Ground-truth propagation parameters of a single transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    pub alpha: f64,
    /// EIRP in dBm.
    pub power: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_v: f64,
    /// Shadowing decorrelation distance, m.
    pub d_corr: f64,
    /// Additive measurement noise standard deviation, dB.
    pub sigma_w: f64,
    /// Standard deviation of the sensor-to-transmitter distance error, m.
    pub sigma_d: f64,
    pub tx_position: Position,
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.power, self.sigma_v, self.d_corr, self.sigma_w, self.sigma_d];
        if all.iter().any(|v| !v.is_finite()) || !self.tx_position.is_finite() {
            return Err(Error::InvalidInput("propagation parameters must be finite".into()));
        }
        if self.alpha < 0.0 || self.sigma_v < 0.0 || self.sigma_w < 0.0 || self.sigma_d < 0.0 {
            return Err(Error::InvalidInput("alpha and standard deviations must be >= 0".into()));
        }
        if self.d_corr <= 0.0 {
            return Err(Error::InvalidInput("d_corr must be > 0".into()));
        }
        Ok(())
    }

    pub fn rho_u(&self) -> f64 {
        rho_u_from(self.alpha, self.sigma_d)
    }

    /// Noise-free mean RSS at `p` for transmit power `power`.
    pub fn mean_rss(&self, p: Position, power: f64) -> f64 {
        power - self.alpha * feature_clamped(pairwise_distance(p, self.tx_position))
    }
}

/// Measurement noise seen by the regression: white noise plus the
/// location-error term, `σ_w² + ρ_u²/d̂²` per sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub rho_u: f64,
    pub sigma_w: f64,
}

impl NoiseModel {
    pub fn new(rho_u: f64, sigma_w: f64) -> Result<Self> {
        if !(rho_u >= 0.0) || !(sigma_w >= 0.0) {
            return Err(Error::InvalidInput("rho_u and sigma_w must be >= 0".into()));
        }
        Ok(Self { rho_u, sigma_w })
    }

    pub fn variance_at(&self, d_hat: f64) -> f64 {
        let d = d_hat.max(D_MIN);
        self.sigma_w * self.sigma_w + self.rho_u * self.rho_u / (d * d)
    }
}
