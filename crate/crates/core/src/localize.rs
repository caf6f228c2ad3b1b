//! Transmitter localization: a weighted centroid accumulated over all past
//! reports (weights `10^(z/10)`, i.e. linear received power), followed by a
//! least-squares refinement against the fitted path-loss model.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{clamped_distance, MeasurementSnapshot, Position};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::synth::Area;
use crate::{Error, Result};

/// Recursive weighted-centroid accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CentroidState {
    pub weighted_sum: (f64, f64),
    pub total_weight: f64,
}

impl CentroidState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn has_fix(&self) -> bool {
        self.total_weight > 0.0
    }

    /// Current centroid, or [`Error::NoFix`] before any positive weight was seen.
    pub fn estimate(&self) -> Result<Position> {
        if self.has_fix() {
            Ok(Position::new(
                self.weighted_sum.0 / self.total_weight,
                self.weighted_sum.1 / self.total_weight,
            ))
        } else {
            Err(Error::NoFix)
        }
    }
}

/// Folds one snapshot into the accumulator. Equivalent to
/// `x̂₀' = (Σ wᵢ·x̂ᵢ + ŵ·x̂₀)/(ŵ + Σ wᵢ)` with `wᵢ = 10^(zᵢ/10)`.
pub fn centroid_update(state: &CentroidState, snapshot: &MeasurementSnapshot) -> Result<CentroidState> {
    let mut next = *state;
    for s in &snapshot.sensors {
        let w = 10f64.powf(s.rss / 10.0);
        next.weighted_sum.0 += w * s.position.x;
        next.weighted_sum.1 += w * s.position.y;
        next.total_weight += w;
    }
    if !next.total_weight.is_finite() || !next.weighted_sum.0.is_finite() || !next.weighted_sum.1.is_finite() {
        return Err(Error::InvalidInput("centroid weights overflowed".into()));
    }
    if !next.has_fix() {
        return Err(Error::NoFix);
    }
    Ok(next)
}

/// Distances from each position to the centroid estimate, floored at `D_MIN`.
pub fn distances_to_estimate(state: &CentroidState, positions: &[Position]) -> Result<Vec<f64>> {
    let tx = state.estimate()?;
    Ok(distances_to(tx, positions))
}

pub fn distances_to(tx: Position, positions: &[Position]) -> Vec<f64> {
    positions.iter().map(|&p| clamped_distance(p, tx)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub position: Position,
    /// True when there were too few sensors to refine and `init` was returned.
    pub degenerate: bool,
    pub objective: f64,
}

/// `Σ (zᵢ − μ_P + 10·μ_α·log10‖xᵢ − x₀‖)²` with distances floored at `D_MIN`.
pub fn refinement_objective(positions: &[Position], z: &[f64], mu_p: f64, mu_alpha: f64, x0: Position) -> f64 {
    positions
        .iter()
        .zip(z)
        .map(|(&p, &zi)| {
            let r = zi - mu_p + 10.0 * mu_alpha * clamped_distance(p, x0).log10();
            r * r
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub nelder_mead: NelderMeadOptions,
    /// Side of the initial simplex, meters.
    pub initial_step: f64,
    /// Candidate positions are clamped into this rectangle.
    pub area: Option<Area>,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            nelder_mead: NelderMeadOptions { max_iter: 200, ftol: 1e-6, xtol: 1e-10 },
            initial_step: 10.0,
            area: None,
        }
    }
}

/// Re-estimates the transmitter position by minimizing the path-loss residual
/// over `x₀`, starting from `init`. Needs at least three sensors.
pub fn refine_transmitter(
    positions: &[Position],
    z: &[f64],
    mu_p: f64,
    mu_alpha: f64,
    init: Position,
    opts: &RefineOptions,
) -> Refinement {
    let init = opts.area.map_or(init, |a| a.clamp(init));
    let f0 = refinement_objective(positions, z, mu_p, mu_alpha, init);
    if positions.len() < 3 || positions.len() != z.len() {
        return Refinement { position: init, degenerate: true, objective: f0 };
    }
    let bounds = opts.area.map(|a| [(0.0, a.width), (0.0, a.height)]);
    let m = nelder_mead(
        |x| refinement_objective(positions, z, mu_p, mu_alpha, Position::new(x[0], x[1])),
        &[init.x, init.y],
        &[opts.initial_step, opts.initial_step],
        bounds.as_ref().map(|b| &b[..]),
        opts.nelder_mead,
    );
    if m.f <= f0 {
        Refinement { position: Position::new(m.x[0], m.x[1]), degenerate: false, objective: m.f }
    } else {
        Refinement { position: init, degenerate: false, objective: f0 }
    }
}
