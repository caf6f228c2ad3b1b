//! Hybrid Cramér-Rao bound (HCRB) on the per-node MSE, treating
//! `(μ_P, μ_α, x̂₀)` as deterministic:
//! `bound = σ_g² + gᵀM⁻¹g`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::empbayes::HyperEstimate;
use crate::gp::{kernel_eval, kernel_matrix, prior_mean, training_covariance, KernelParams};
use crate::linalg::{pinv_symmetric, to_dvector, SpdFactor};
use crate::model::{clamped_distance, feature_clamped, Grid, NoiseModel, Position};
use crate::{Error, Result};

/// Relative eigenvalue cutoff for the pseudo-inverse of `M`.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcrbReport {
    pub node_index: usize,
    pub gp_variance: f64,
    pub added_term: f64,
    pub bound: f64,
    /// `M` was rank-deficient and a pseudo-inverse was used.
    pub singular: bool,
}

/// Node-independent pieces shared by all grid nodes.
struct Shared {
    factor: SpdFactor,
    /// `[1, −q̂, A]`, `N × 4`.
    design: DMatrix<f64>,
    m_pinv: DMatrix<f64>,
    singular: bool,
    /// `C⁻¹ m_X ∘ a_j` for `j = 1, 2`, where `A_j = diag(a_j)`.
    weighted: [DVector<f64>; 2],
    c: f64,
}

fn shared(positions: &[Position], hyper: &HyperEstimate, kernel: &KernelParams, noise: &NoiseModel) -> Result<Shared> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::Degenerate("bound needs at least one training point".into()));
    }
    let tx = hyper.tx;
    let factor = SpdFactor::new(training_covariance(positions, tx, kernel, noise))?;
    let c = -10.0 * hyper.mu_alpha * core::f64::consts::LOG10_E;
    let rho2 = noise.rho_u * noise.rho_u;
    let mut design = DMatrix::zeros(n, 4);
    let mut a = [DVector::zeros(n), DVector::zeros(n)];
    for (i, p) in positions.iter().enumerate() {
        let d = clamped_distance(*p, tx);
        let inv_d2 = 1.0 / (d * d);
        let delta = [tx.x - p.x, tx.y - p.y];
        design[(i, 0)] = 1.0;
        design[(i, 1)] = -feature_clamped(d);
        for j in 0..2 {
            design[(i, 2 + j)] = c * inv_d2 * delta[j];
            a[j][i] = -2.0 * rho2 * inv_d2 * inv_d2 * delta[j];
        }
    }
    let cinv_design = factor.solve_mat(&design);
    let m = design.transpose() * &cinv_design;
    let (m_pinv, singular) = pinv_symmetric(&m, PINV_CUTOFF);
    let m_x = to_dvector(&prior_mean(positions, hyper));
    let cinv_m = factor.solve_vec(&m_x);
    let weighted = [cinv_m.component_mul(&a[0]), cinv_m.component_mul(&a[1])];
    Ok(Shared { factor, design, m_pinv, singular, weighted, c })
}

fn g_vector(s: &Shared, node: Position, cinv_k: &DVector<f64>, tx: Position) -> DVector<f64> {
    let d_g = clamped_distance(node, tx);
    let mut g = DVector::from_column_slice(&[
        1.0,
        -feature_clamped(d_g),
        s.c / (d_g * d_g) * (tx.x - node.x),
        s.c / (d_g * d_g) * (tx.y - node.y),
    ]);
    g -= s.design.transpose() * cinv_k;
    g[2] += s.weighted[0].dot(cinv_k);
    g[3] += s.weighted[1].dot(cinv_k);
    g
}

fn report(
    s: &Shared,
    node_index: usize,
    node: Position,
    k: &DVector<f64>,
    cinv_k: &DVector<f64>,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
) -> HcrbReport {
    let tx = hyper.tx;
    let g = g_vector(s, node, cinv_k, tx);
    let gp_variance = kernel_eval(node, node, kernel, tx) - k.dot(cinv_k);
    let added_term = g.dot(&(&s.m_pinv * &g)).max(0.0);
    HcrbReport { node_index, gp_variance, added_term, bound: gp_variance + added_term, singular: s.singular }
}

/// HCRB at one grid node.
pub fn hcrb(
    node: usize,
    positions: &[Position],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<HcrbReport> {
    let g = *grid
        .nodes()
        .get(node)
        .ok_or_else(|| Error::InvalidInput(alloc::format!("node {node} outside a grid of {}", grid.len())))?;
    let s = shared(positions, hyper, kernel, noise)?;
    let k = kernel_matrix(positions, &[g], kernel, hyper.tx).column(0).into_owned();
    let cinv_k = s.factor.solve_vec(&k);
    Ok(report(&s, node, g, &k, &cinv_k, hyper, kernel))
}

/// HCRB at every grid node with one factorization of `K_X + Σ_ε`.
pub fn hcrb_all(
    positions: &[Position],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<Vec<HcrbReport>> {
    let s = shared(positions, hyper, kernel, noise)?;
    let k_xg = kernel_matrix(positions, grid.nodes(), kernel, hyper.tx);
    let cinv_k = s.factor.solve_mat(&k_xg);
    Ok(grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let k = k_xg.column(j).into_owned();
            let ck = cinv_k.column(j).into_owned();
            report(&s, j, g, &k, &ck, hyper, kernel)
        })
        .collect())
}
