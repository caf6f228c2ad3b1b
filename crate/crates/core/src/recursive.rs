//! Recursive field estimation: each step's static evidence is blended with
//! the carried posterior through a forgetting factor `λ`.
//!
//! With `μ_prior = μ_g[t−1] − m_g[t−1]` and `Σ_prior = K_g[t−1] − Σ_g[t−1]`,
//!
//! ```text
//! μ_g[t] = m_g[t] + (1−λ)·μ_prior + λ·μ_post
//! Σ_g[t] = K_g[t] − ((1−λ)·Σ_prior + λ·Σ_post)
//! ```
//!
//! where `μ_post`, `Σ_post` are the data terms of the static posterior.
//!
//! The subtraction stays positive definite only while `K_g` is unchanged.
//! When a refit moves the kernel, `Σ_prior` is first carried into the new
//! prior through the whitening `L_new L_old⁻¹ Σ_prior L_old⁻ᵀ L_newᵀ`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::gp::{conditioning, fit_kernel, FieldPosterior};
use crate::linalg::{symmetrize, SpdFactor};
use crate::localize::CentroidState;
use crate::model::{Grid, MeasurementSnapshot};
use crate::pipeline::{estimate, run_static, KernelSource, StaticConfig};
use crate::{Error, Result};

/// When kernel parameters are re-fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefitCadence {
    EveryStep,
    #[default]
    FreezeAfterInit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursiveConfig {
    pub lambda: f64,
    pub static_config: StaticConfig,
    pub cadence: RefitCadence,
    /// Keep the init step's `μ_P`, `μ_α`, variances and transmitter fix
    /// instead of re-estimating them from every snapshot.
    pub freeze_hyper: bool,
}

impl RecursiveConfig {
    pub fn new(static_config: StaticConfig) -> Self {
        Self { lambda: 0.5, static_config, cadence: RefitCadence::default(), freeze_hyper: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidInput(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveState {
    pub posterior: FieldPosterior,
    pub lambda: f64,
    pub centroid: CentroidState,
    /// `m_g` and `K_g` of the step that produced `posterior`.
    pub grid_prior_mean: Vec<f64>,
    pub grid_prior_cov: DMatrix<f64>,
    /// Set when the last step had no reports and the state was carried over.
    pub carried: bool,
}

/// Runs the static pipeline on the first snapshot.
pub fn init_state(snapshot0: &MeasurementSnapshot, grid: &Grid, config: &RecursiveConfig) -> Result<RecursiveState> {
    config.validate()?;
    if snapshot0.is_empty() {
        return Err(Error::Degenerate("initial snapshot is empty".into()));
    }
    let out = run_static(snapshot0, grid, &CentroidState::new(), &config.static_config)?;
    Ok(RecursiveState {
        centroid: out.estimation.refine.centroid,
        posterior: out.posterior,
        lambda: config.lambda,
        grid_prior_mean: out.grid_prior_mean,
        grid_prior_cov: out.grid_prior_cov,
        carried: false,
    })
}

/// One recursion step. An empty snapshot carries the state forward as if
/// `λ = 0` and sets [`RecursiveState::carried`].
pub fn rgp_step(
    state: &RecursiveState,
    snapshot: &MeasurementSnapshot,
    grid: &Grid,
    config: &RecursiveConfig,
) -> Result<RecursiveState> {
    config.validate()?;
    if state.posterior.mean.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: state.posterior.mean.len() });
    }
    if snapshot.is_empty() {
        let mut next = state.clone();
        next.posterior.t = snapshot.t;
        next.carried = true;
        return Ok(next);
    }
    let mut cfg = config.static_config;
    if config.cadence == RefitCadence::FreezeAfterInit {
        cfg.kernel = KernelSource::Fixed(state.posterior.kernel);
    }
    let (hyper, kernel, centroid) = if config.freeze_hyper {
        let hyper = state.posterior.hyper;
        let kernel = match cfg.kernel {
            KernelSource::Fit(mut opts) => {
                if cfg.refine.shadowing.is_some() {
                    opts.frozen = Some((hyper.var_alpha.sqrt(), hyper.var_p.sqrt()));
                }
                fit_kernel(&snapshot.positions(), &snapshot.rss(), &hyper, &cfg.refine.noise, &opts)?.params
            }
            KernelSource::Fixed(k) => k,
            // the frozen moment estimates give the same kernel as before
            KernelSource::Shadowing => state.posterior.kernel,
        };
        (hyper, kernel, state.centroid)
    } else {
        let est = estimate(snapshot, &state.centroid, &cfg)?;
        (est.refine.hyper, est.kernel, est.refine.centroid)
    };
    let c = conditioning(&snapshot.positions(), &snapshot.rss(), grid, &hyper, &kernel, &cfg.refine.noise)?;

    let lambda = config.lambda;
    let keep = 1.0 - lambda;
    let mean: Vec<f64> = (0..grid.len())
        .map(|j| {
            let mu_prior = state.posterior.mean[j] - state.grid_prior_mean[j];
            c.prior_mean[j] + keep * mu_prior + lambda * c.mean_shift[j]
        })
        .collect();
    let mut sigma_prior = &state.grid_prior_cov - &state.posterior.cov;
    if kernel != state.posterior.kernel {
        sigma_prior = rewhiten(&sigma_prior, &state.grid_prior_cov, &c.prior_cov)?;
    }
    let mut cov = &c.prior_cov - (sigma_prior * keep + &c.cov_reduction * lambda);
    symmetrize(&mut cov);

    Ok(RecursiveState {
        posterior: FieldPosterior { t: snapshot.t, mean, cov, hyper, kernel },
        lambda,
        centroid,
        grid_prior_mean: c.prior_mean,
        grid_prior_cov: c.prior_cov,
        carried: false,
    })
}

/// Maps a reduction of prior `from` onto prior `to`, keeping `to − r` PSD
/// whenever `from − r` was.
fn rewhiten(r: &DMatrix<f64>, from: &DMatrix<f64>, to: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let old = SpdFactor::new(from.clone())?;
    let new = SpdFactor::new(to.clone())?;
    let half = old.solve_lower(r);
    let w = old.solve_lower(&half.transpose());
    let l = new.l();
    let mut out = &l * w * l.transpose();
    symmetrize(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewhiten_is_identity_on_an_unchanged_prior() {
        let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 0.8, 0.0, 0.1, 0.0, 0.5]);
        let out = rewhiten(&r, &k, &k).unwrap();
        assert!((out - r).abs().max() < 1e-12);
    }

    #[test]
    fn rewhiten_keeps_the_remainder_positive() {
        let from = DMatrix::from_row_slice(2, 2, &[10.0, 6.0, 6.0, 10.0]);
        let to = DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.1]);
        let r = DMatrix::from_row_slice(2, 2, &[9.0, 6.0, 6.0, 9.5]);
        assert!(!crate::linalg::is_positive_definite(&(&to - &r)));
        let moved = rewhiten(&r, &from, &to).unwrap();
        assert!(crate::linalg::is_positive_definite(&(&to - moved)));
    }
}
