//! Empirical-Bayes estimation of the path-loss hyper-parameters.
//!
//! The means `(μ_P, μ_α)` come from a weighted least-squares fit of
//! `z ≈ μ_P − q̂·μ_α` with weights `d̂ᵢ²`, subject to `μ_α ≥ 2`. The variances
//! `(σ_P², σ_α²)` come from a two-variable non-negative least-squares fit of the
//! squared residuals, once the known part of the covariance is removed.

use alloc::format;
use alloc::vec::Vec;

use crate::localize::{centroid_update, distances_to, refine_transmitter, CentroidState, RefineOptions};
use crate::model::{feature_clamped, MeasurementSnapshot, NoiseModel, Position};
use crate::{Error, Result};

#[allow(unused_imports)]
use num_traits::Float;

/// Default limit on refinement passes.
pub const DEFAULT_PASSES: usize = 10;
/// Transmitter movement, meters, below which further passes are skipped.
pub const PASS_TOLERANCE: f64 = 1e-9;

/// Lower bound on the path-loss exponent mean.
pub const MIN_MU_ALPHA: f64 = 2.0;

/// Estimated hyper-parameters `θ̂` of the path-loss prior plus the transmitter
/// position they were computed with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperEstimate {
    pub mu_p: f64,
    pub mu_alpha: f64,
    pub var_p: f64,
    pub var_alpha: f64,
    pub tx: Position,
}

impl HyperEstimate {
    /// Model mean `μ_P − μ_α·10·log10(d)` at `p`.
    pub fn mean_at(&self, p: Position) -> f64 {
        self.mu_p - self.mu_alpha * feature_clamped(p.distance_to(&self.tx))
    }
}

/// Weighted least squares of `z ≈ μ_P − q·μ_α` with weights `d̂²`, constrained
/// to `μ_α ≥ 2`.
pub fn estimate_means(z: &[f64], q_hat: &[f64], d_hat: &[f64]) -> Result<(f64, f64)> {
    let w: Vec<f64> = d_hat.iter().map(|d| d * d).collect();
    estimate_means_weighted(z, q_hat, &w)
}

/// Same fit with arbitrary non-negative weights.
pub fn estimate_means_weighted(z: &[f64], q: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let n = z.len();
    if q.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: q.len() });
    }
    if w.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: w.len() });
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} report(s); at least 2 are needed to fit power and exponent")));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    let qbar = w.iter().zip(q).map(|(wi, qi)| wi * qi).sum::<f64>() / sw;
    let zbar = w.iter().zip(z).map(|(wi, zi)| wi * zi).sum::<f64>() / sw;
    let mut sqq = 0.0;
    let mut sqz = 0.0;
    let mut scale = 0.0;
    for i in 0..n {
        let dq = q[i] - qbar;
        sqq += w[i] * dq * dq;
        sqz += w[i] * dq * (z[i] - zbar);
        scale += w[i] * q[i] * q[i];
    }
    if sqq <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "all distances to the transmitter are equal; power and exponent are not separable".into(),
        ));
    }
    let mu_alpha = -sqz / sqq;
    if mu_alpha >= MIN_MU_ALPHA {
        Ok((zbar + mu_alpha * qbar, mu_alpha))
    } else {
        Ok((zbar + MIN_MU_ALPHA * qbar, MIN_MU_ALPHA))
    }
}

/// Minimizes `‖x₁·1 + x₂·b − a‖²` over `x₁, x₂ ≥ 0`.
pub fn nnls_two(a: &[f64], b: &[f64]) -> (f64, f64) {
    let ones = alloc::vec![1.0; a.len()];
    nnls_pair(a, &ones, b)
}

/// Minimizes `‖x₁·c₁ + x₂·c₂ − y‖²` over `x₁, x₂ ≥ 0`: the unconstrained
/// solution if feasible, else the best of the boundary candidates.
pub fn nnls_pair(y: &[f64], c1: &[f64], c2: &[f64]) -> (f64, f64) {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let cost = |x1: f64, x2: f64| {
        (0..y.len()).map(|i| (x1 * c1[i] + x2 * c2[i] - y[i]).powi(2)).sum::<f64>()
    };
    let s11 = dot(c1, c1);
    let s22 = dot(c2, c2);
    let s12 = dot(c1, c2);
    let s1y = dot(c1, y);
    let s2y = dot(c2, y);
    let det = s11 * s22 - s12 * s12;
    if det > 1e-12 * s11 * s22 {
        let x1 = (s22 * s1y - s12 * s2y) / det;
        let x2 = (s11 * s2y - s12 * s1y) / det;
        if x1 >= 0.0 && x2 >= 0.0 {
            return (x1, x2);
        }
    }
    let mut best = (0.0, 0.0);
    let mut best_cost = cost(0.0, 0.0);
    let only_first = (if s11 > 0.0 { (s1y / s11).max(0.0) } else { 0.0 }, 0.0);
    let only_second = (0.0, if s22 > 0.0 { (s2y / s22).max(0.0) } else { 0.0 });
    for cand in [only_first, only_second] {
        let c = cost(cand.0, cand.1);
        if c < best_cost {
            best = cand;
            best_cost = c;
        }
    }
    best
}

/// Moment fit of `(σ_P², σ_α²)`: the diagonal of `(z − μ̂_z)(z − μ̂_z)ᵀ − Σ_{z|α,P}`
/// regressed on `[1, q̂∘q̂]` with both coefficients kept non-negative.
///
/// `known_diag` is the diagonal of `Σ_{z|α,P} = ρ_u²·D̂ + Σ_v + σ_w²·I`.
pub fn estimate_variances(
    z: &[f64],
    mu_p: f64,
    mu_alpha: f64,
    q_hat: &[f64],
    known_diag: &[f64],
) -> Result<(f64, f64)> {
    let n = z.len();
    for len in [q_hat.len(), known_diag.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    let a: Vec<f64> = (0..n)
        .map(|i| {
            let r = z[i] - (mu_p - q_hat[i] * mu_alpha);
            r * r - known_diag[i]
        })
        .collect();
    let b: Vec<f64> = q_hat.iter().map(|q| q * q).collect();
    Ok(nnls_two(&a, &b))
}

/// Shadowing parameters, when known, enable the moment estimate of the
/// variances; otherwise they are left to the kernel fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowingPrior {
    pub sigma_v: f64,
    pub d_corr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub noise: NoiseModel,
    pub shadowing: Option<ShadowingPrior>,
    pub refine: RefineOptions,
    /// Bypasses localization entirely when the transmitter position is known.
    pub known_tx: Option<Position>,
    /// Upper limit on refine-then-re-estimate passes after the centroid fit.
    /// Passes stop early once the transmitter estimate stops moving.
    pub passes: usize,
}

impl RefineConfig {
    pub fn new(noise: NoiseModel) -> Self {
        Self { noise, shadowing: None, refine: RefineOptions::default(), known_tx: None, passes: DEFAULT_PASSES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub hyper: HyperEstimate,
    pub centroid: CentroidState,
    /// Set when the position refinement was skipped for lack of sensors.
    pub refine_degenerate: bool,
}

fn features(d: &[f64]) -> Vec<f64> {
    d.iter().map(|&v| feature_clamped(v)).collect()
}

/// Centroid fix, mean fit, position refinement and mean re-fit, followed by
/// the variance moment fit when the shadowing parameters are configured.
pub fn refine_all(
    snapshot: &MeasurementSnapshot,
    centroid: &CentroidState,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    if snapshot.is_empty() {
        return Err(Error::Degenerate("empty snapshot".into()));
    }
    let positions = snapshot.positions();
    let z = snapshot.rss();
    let (next_centroid, mut tx) = match config.known_tx {
        Some(tx) => (*centroid, tx),
        None => {
            let c = centroid_update(centroid, snapshot)?;
            (c, c.estimate()?)
        }
    };
    let mut d = distances_to(tx, &positions);
    let mut q = features(&d);
    let (mut mu_p, mut mu_alpha) = estimate_means(&z, &q, &d)?;
    let mut refine_degenerate = false;
    if config.known_tx.is_none() {
        for _ in 0..config.passes {
            let r = refine_transmitter(&positions, &z, mu_p, mu_alpha, tx, &config.refine);
            refine_degenerate |= r.degenerate;
            if r.degenerate {
                break;
            }
            let moved = r.position.distance_to(&tx);
            tx = r.position;
            d = distances_to(tx, &positions);
            q = features(&d);
            (mu_p, mu_alpha) = estimate_means(&z, &q, &d)?;
            if moved <= PASS_TOLERANCE {
                break;
            }
        }
    }
    let (var_p, var_alpha) = match config.shadowing {
        Some(sh) => {
            let rho2 = config.noise.rho_u * config.noise.rho_u;
            let base = sh.sigma_v * sh.sigma_v + config.noise.sigma_w * config.noise.sigma_w;
            let diag: Vec<f64> = d.iter().map(|di| rho2 / (di * di) + base).collect();
            estimate_variances(&z, mu_p, mu_alpha, &q, &diag)?
        }
        None => (0.0, 0.0),
    };
    Ok(RefineOutcome {
        hyper: HyperEstimate { mu_p, mu_alpha, var_p, var_alpha, tx },
        centroid: next_centroid,
        refine_degenerate,
    })
}
