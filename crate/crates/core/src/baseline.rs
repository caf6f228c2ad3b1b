//! Ordinary kriging of detrended residuals (OKD).
//!
//! The trend `μ_P − μ_α·q̂` is removed, an exponential semivariogram is fitted
//! to the residuals and the residual field is kriged onto the grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::empbayes::{nnls_pair, HyperEstimate};
use crate::gp::prior_mean;
use crate::linalg::pinv_general;
use crate::model::{pairwise_distance, Grid, Position};
use crate::{Error, Result};

pub const MIN_POINTS: usize = 10;
pub const BINS: usize = 15;
/// Pairs a bin needs before it counts towards the fit.
pub const MIN_PAIRS_PER_BIN: usize = 3;
/// Non-empty bins needed for a fit.
pub const MIN_BINS: usize = 3;

/// Exponential semivariogram `γ(h) = nugget + sill·(1 − exp(−h/range))` for
/// `h > 0`, `γ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramModel {
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn gamma(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.nugget + self.sill * (1.0 - (-h / self.range).exp())
        }
    }
}

/// One bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramBin {
    pub lag: f64,
    pub semivariance: f64,
    pub pairs: usize,
}

/// Empirical semivariogram: a zero-lag bin for coincident pairs followed by
/// `bins` equal-width bins on `(0, cutoff]`. Bins without pairs are dropped.
pub fn empirical_variogram(residuals: &[f64], positions: &[Position], cutoff: f64, bins: usize) -> Vec<VariogramBin> {
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); bins + 1];
    let width = cutoff / bins as f64;
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let h = pairwise_distance(positions[i], positions[j]);
            let k = if h == 0.0 {
                0
            } else if h <= cutoff {
                (((h / width).ceil() as usize).clamp(1, bins)) as usize
            } else {
                continue;
            };
            let dr = residuals[i] - residuals[j];
            sums[k].0 += h;
            sums[k].1 += 0.5 * dr * dr;
            sums[k].2 += 1;
        }
    }
    sums.into_iter()
        .filter(|s| s.2 > 0)
        .map(|(h, g, n)| VariogramBin { lag: h / n as f64, semivariance: g / n as f64, pairs: n })
        .collect()
}

fn usable(bins: &[VariogramBin]) -> usize {
    bins.iter().filter(|b| b.lag > 0.0 && b.pairs >= MIN_PAIRS_PER_BIN).count()
}

// Pair-count weighted fit of (nugget, sill) at a fixed range.
fn fit_at_range(bins: &[VariogramBin], range: f64) -> (f64, f64, f64) {
    let w: Vec<f64> = bins.iter().map(|b| (b.pairs as f64).sqrt()).collect();
    let y: Vec<f64> = bins.iter().zip(&w).map(|(b, wi)| wi * b.semivariance).collect();
    let c1: Vec<f64> = w.clone();
    let c2: Vec<f64> = bins
        .iter()
        .zip(&w)
        .map(|(b, wi)| wi * (1.0 - (-b.lag / range).exp()))
        .collect();
    let (nugget, sill) = nnls_pair(&y, &c1, &c2);
    let cost = (0..y.len()).map(|i| (nugget * c1[i] + sill * c2[i] - y[i]).powi(2)).sum();
    (nugget, sill, cost)
}

/// Least-squares fit of the exponential family to the empirical
/// semivariogram. The bins span half the largest pairwise distance, widened
/// to the whole span when too few bins are populated.
pub fn fit_variogram(residuals: &[f64], positions: &[Position]) -> Result<VariogramModel> {
    let n = positions.len();
    if residuals.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: residuals.len() });
    }
    if n < MIN_POINTS {
        return Err(Error::Degenerate(format!("{n} points; the variogram fit needs at least {MIN_POINTS}")));
    }
    let mut hmax = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            hmax = hmax.max(pairwise_distance(positions[i], positions[j]));
        }
    }
    if hmax <= 0.0 {
        return Err(Error::Degenerate("all positions coincide".into()));
    }
    let mut bins = empirical_variogram(residuals, positions, 0.5 * hmax, BINS);
    if usable(&bins) < MIN_BINS {
        bins = empirical_variogram(residuals, positions, hmax, BINS);
        if usable(&bins) < MIN_BINS {
            return Err(Error::Degenerate("too few point pairs to fit a variogram".into()));
        }
    }
    let bins: Vec<VariogramBin> = bins.into_iter().filter(|b| b.lag == 0.0 || b.pairs >= MIN_PAIRS_PER_BIN).collect();
    let min_lag = bins.iter().filter(|b| b.lag > 0.0).map(|b| b.lag).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((0.1 * min_lag).ln(), (10.0 * hmax).ln());
    // coarse log-spaced scan, then golden-section refinement around the best
    const SCAN: usize = 120;
    let at = |k: usize| lo + (hi - lo) * k as f64 / (SCAN - 1) as f64;
    let mut best_k = 0;
    let mut best_cost = f64::INFINITY;
    for k in 0..SCAN {
        let c = fit_at_range(&bins, at(k).exp()).2;
        if c < best_cost {
            best_cost = c;
            best_k = k;
        }
    }
    let mut a = at(best_k.saturating_sub(1));
    let mut b = at((best_k + 1).min(SCAN - 1));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let cost = |u: f64| fit_at_range(&bins, u.exp()).2;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = cost(x2);
        }
    }
    let mut log_range = 0.5 * (a + b);
    if cost(log_range) > best_cost {
        log_range = at(best_k);
    }
    let range = log_range.exp();
    let (nugget, sill, _) = fit_at_range(&bins, range);
    Ok(VariogramModel { nugget, sill, range })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OkdPrediction {
    pub mean: Vec<f64>,
    /// Kriging variance `wᵀγ₀ + μ` per node.
    pub variance: Vec<f64>,
    /// `Σ wᵢ` per node; 1 up to rounding.
    pub weight_sums: Vec<f64>,
    pub variogram: VariogramModel,
    /// The kriging system was singular and a pseudo-inverse was used.
    pub singular: bool,
}

/// Detrend, fit the variogram, krige the residuals and add the trend back.
pub fn okd_predict(positions: &[Position], z: &[f64], grid: &Grid, hyper: &HyperEstimate) -> Result<OkdPrediction> {
    let m = prior_mean(positions, hyper);
    if z.len() != positions.len() {
        return Err(Error::LengthMismatch { expected: positions.len(), got: z.len() });
    }
    let r: Vec<f64> = z.iter().zip(&m).map(|(a, b)| a - b).collect();
    let variogram = fit_variogram(&r, positions)?;
    okd_with_variogram(positions, z, grid, hyper, &variogram)
}

/// Ordinary kriging with a given variogram, solving the bordered system
/// `[Γ 1; 1ᵀ 0]·[w; μ] = [γ₀; 1]` for all nodes at once.
pub fn okd_with_variogram(
    positions: &[Position],
    z: &[f64],
    grid: &Grid,
    hyper: &HyperEstimate,
    variogram: &VariogramModel,
) -> Result<OkdPrediction> {
    let n = positions.len();
    if z.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: z.len() });
    }
    if n == 0 {
        return Err(Error::Degenerate("kriging needs at least one training point".into()));
    }
    let nodes = grid.nodes();
    let mtrain = prior_mean(positions, hyper);
    let r = DVector::from_fn(n, |i, _| z[i] - mtrain[i]);
    let system = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => variogram.gamma(pairwise_distance(positions[i], positions[j])),
        (false, false) => 0.0,
        _ => 1.0,
    });
    let rhs = DMatrix::from_fn(n + 1, nodes.len(), |i, j| {
        if i < n {
            variogram.gamma(pairwise_distance(positions[i], nodes[j]))
        } else {
            1.0
        }
    });
    let lu = system.clone().lu();
    let mut singular = false;
    let sol = match lu.solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => {
            singular = true;
            let (pinv, _) = pinv_general(&system, 1e-12);
            &pinv * &rhs
        }
    };
    let trend = prior_mean(nodes, hyper);
    let mut mean = Vec::with_capacity(nodes.len());
    let mut variance = Vec::with_capacity(nodes.len());
    let mut weight_sums = Vec::with_capacity(nodes.len());
    for j in 0..nodes.len() {
        let col = sol.column(j);
        let w = col.rows(0, n);
        mean.push(trend[j] + w.dot(&r));
        variance.push(w.dot(&rhs.column(j).rows(0, n)) + col[n]);
        weight_sums.push(w.sum());
    }
    Ok(OkdPrediction { mean, variance, weight_sums, variogram: *variogram, singular })
}
