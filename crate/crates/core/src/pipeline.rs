//! The static estimator: hyper-parameter estimation, kernel fit and grid
//! posterior for one snapshot.

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::empbayes::{refine_all, RefineConfig, RefineOutcome};
use crate::gp::{conditioning, fit_kernel, FieldPosterior, FitOptions, KernelFit, KernelParams};
use crate::localize::CentroidState;
use crate::model::{Grid, MeasurementSnapshot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSource {
    /// Fit by NLML minimization.
    Fit(FitOptions),
    /// Use as given.
    Fixed(KernelParams),
    /// Exponential term from the known shadowing (`σ_k = σ_v`, `2l² = D_corr`),
    /// `σ_α`, `σ_P` from the moment estimates. Needs the variance path.
    Shadowing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticConfig {
    pub refine: RefineConfig,
    pub kernel: KernelSource,
}

/// Hyper-parameters and kernel chosen for one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub refine: RefineOutcome,
    pub kernel: KernelParams,
    pub fit: Option<KernelFit>,
}

/// Empirical-Bayes estimation followed by the kernel choice. When the
/// variance path is active, the kernel's `σ_α`, `σ_P` are frozen at the
/// moment estimates.
pub fn estimate(snapshot: &MeasurementSnapshot, centroid: &CentroidState, config: &StaticConfig) -> Result<Estimation> {
    let refine = refine_all(snapshot, centroid, &config.refine)?;
    let (kernel, fit) = match config.kernel {
        KernelSource::Fixed(k) => (k, None),
        KernelSource::Shadowing => {
            let sh = config.refine.shadowing.ok_or_else(|| {
                Error::InvalidInput("a shadowing-derived kernel needs the shadowing parameters".into())
            })?;
            let k = KernelParams::from_decay(sh.sigma_v, sh.d_corr, refine.hyper.var_alpha.sqrt(), refine.hyper.var_p.sqrt());
            (k, None)
        }
        KernelSource::Fit(opts) => {
            let mut opts = opts;
            if config.refine.shadowing.is_some() {
                opts.frozen = Some((refine.hyper.var_alpha.sqrt(), refine.hyper.var_p.sqrt()));
            }
            let fit = fit_kernel(&snapshot.positions(), &snapshot.rss(), &refine.hyper, &config.refine.noise, &opts)?;
            (fit.params, Some(fit))
        }
    };
    Ok(Estimation { refine, kernel, fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticOutcome {
    pub posterior: FieldPosterior,
    pub estimation: Estimation,
    /// Prior moments on the grid, `m_g` and `K_g`, under the same estimates.
    pub grid_prior_mean: alloc::vec::Vec<f64>,
    pub grid_prior_cov: DMatrix<f64>,
}

/// Full static pipeline on one snapshot.
pub fn run_static(
    snapshot: &MeasurementSnapshot,
    grid: &Grid,
    centroid: &CentroidState,
    config: &StaticConfig,
) -> Result<StaticOutcome> {
    let estimation = estimate(snapshot, centroid, config)?;
    let hyper = estimation.refine.hyper;
    let c = conditioning(
        &snapshot.positions(),
        &snapshot.rss(),
        grid,
        &hyper,
        &estimation.kernel,
        &config.refine.noise,
    )?;
    let mean = c.prior_mean.iter().zip(&c.mean_shift).map(|(a, b)| a + b).collect();
    let cov = &c.prior_cov - &c.cov_reduction;
    Ok(StaticOutcome {
        posterior: FieldPosterior { t: snapshot.t, mean, cov, hyper, kernel: estimation.kernel },
        estimation,
        grid_prior_mean: c.prior_mean,
        grid_prior_cov: c.prior_cov,
    })
}
