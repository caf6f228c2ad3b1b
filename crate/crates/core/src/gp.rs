//! Static GP regression of the field: the composite kernel, negative log
//! marginal likelihood (NLML) fitting and the grid posterior.
//!
//! The kernel is
//! `k(xᵢ, xⱼ) = σ_k²·exp(−‖xᵢ − xⱼ‖/(2l²)) + σ_α²·q̂(xᵢ)q̂(xⱼ) + σ_P²`
//! with `q̂(x) = 10·log10(max(‖x − x̂₀‖, D_MIN))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::empbayes::HyperEstimate;
use crate::linalg::{distance_matrix, symmetrize, to_dvector, to_vec, SpdFactor};
use crate::model::{clamped_distance, feature_clamped, Grid, NoiseModel, Position};
use crate::optim::{bfgs, BfgsOptions};
use crate::{Error, Result};

/// Bounds on the fitted variance terms, dB² (or unitless² for `σ_α²`).
pub const VARIANCE_BOUNDS: (f64, f64) = (1e-4, 1e4);
/// Bounds on the decay scale `2l²`, meters.
pub const DECAY_BOUNDS: (f64, f64) = (1.0, 2000.0);

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma_k: f64,
    pub length_scale: f64,
    pub sigma_alpha: f64,
    pub sigma_p: f64,
}

impl KernelParams {
    /// Builds the parameters from the decay scale `2l²` instead of `l`.
    pub fn from_decay(sigma_k: f64, decay: f64, sigma_alpha: f64, sigma_p: f64) -> Self {
        Self { sigma_k, length_scale: (decay / 2.0).sqrt(), sigma_alpha, sigma_p }
    }

    /// `2l²`, the meter-valued decay scale of the exponential term.
    pub fn decay(&self) -> f64 {
        2.0 * self.length_scale * self.length_scale
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_k, self.length_scale, self.sigma_alpha, self.sigma_p];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.length_scale <= 0.0 {
            return Err(Error::InvalidInput(format!("invalid kernel parameters {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian posterior of the field on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPosterior {
    pub t: u64,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub hyper: HyperEstimate,
    pub kernel: KernelParams,
}

impl FieldPosterior {
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }
}

pub fn kernel_eval(xi: Position, xj: Position, params: &KernelParams, tx: Position) -> f64 {
    let qi = feature_clamped(xi.distance_to(&tx));
    let qj = feature_clamped(xj.distance_to(&tx));
    let d = xi.distance_to(&xj);
    params.sigma_k * params.sigma_k * (-d / params.decay()).exp()
        + params.sigma_alpha * params.sigma_alpha * (qi * qj)
        + params.sigma_p * params.sigma_p
}

fn features_to(tx: Position, positions: &[Position]) -> Vec<f64> {
    positions.iter().map(|p| feature_clamped(p.distance_to(&tx))).collect()
}

/// Kernel matrix between two point sets.
pub fn kernel_matrix(a: &[Position], b: &[Position], params: &KernelParams, tx: Position) -> DMatrix<f64> {
    let qa = features_to(tx, a);
    let qb = features_to(tx, b);
    let sk2 = params.sigma_k * params.sigma_k;
    let sa2 = params.sigma_alpha * params.sigma_alpha;
    let sp2 = params.sigma_p * params.sigma_p;
    let decay = params.decay();
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        sk2 * (-a[i].distance_to(&b[j]) / decay).exp() + sa2 * (qa[i] * qb[j]) + sp2
    })
}

/// `μ_P − μ_α·q̂(x)` for each position.
pub fn prior_mean(positions: &[Position], hyper: &HyperEstimate) -> Vec<f64> {
    positions.iter().map(|&p| hyper.mean_at(p)).collect()
}

/// Diagonal of `Σ_ε = σ_w²I + ρ_u²D̂`.
pub fn noise_variances(d_hat: &[f64], noise: &NoiseModel) -> Vec<f64> {
    d_hat.iter().map(|&d| noise.variance_at(d)).collect()
}

pub fn noise_cov(d_hat: &[f64], noise: &NoiseModel) -> DMatrix<f64> {
    DMatrix::from_diagonal(&to_dvector(&noise_variances(d_hat, noise)))
}

fn sensor_noise(positions: &[Position], tx: Position, noise: &NoiseModel) -> Vec<f64> {
    positions.iter().map(|&p| noise.variance_at(clamped_distance(p, tx))).collect()
}

/// `K_X + Σ_ε` for the training positions.
pub fn training_covariance(
    positions: &[Position],
    tx: Position,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> DMatrix<f64> {
    let mut c = kernel_matrix(positions, positions, kernel, tx);
    for (i, v) in sensor_noise(positions, tx, noise).into_iter().enumerate() {
        c[(i, i)] += v;
    }
    c
}

fn check_training(positions: &[Position], z: &[f64]) -> Result<()> {
    if positions.len() != z.len() {
        return Err(Error::LengthMismatch { expected: positions.len(), got: z.len() });
    }
    if z.iter().any(|v| !v.is_finite()) || positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    Ok(())
}

/// NLML of the detrended data `r = z − m_X` as a function of the kernel
/// parameters, with the geometry and noise precomputed.
#[derive(Debug, Clone)]
pub struct NlmlProblem {
    dist: DMatrix<f64>,
    q: DVector<f64>,
    r: DVector<f64>,
    noise: Vec<f64>,
}

/// Kernel parameters in the optimizer's coordinates:
/// `[ln σ_k², ln 2l², ln σ_α², ln σ_P²]`.
pub fn to_log_params(p: &KernelParams) -> [f64; 4] {
    [
        (p.sigma_k * p.sigma_k).ln(),
        p.decay().ln(),
        (p.sigma_alpha * p.sigma_alpha).ln(),
        (p.sigma_p * p.sigma_p).ln(),
    ]
}

pub fn from_log_params(v: &[f64; 4]) -> KernelParams {
    KernelParams::from_decay((v[0] / 2.0).exp(), v[1].exp(), (v[2] / 2.0).exp(), (v[3] / 2.0).exp())
}

impl NlmlProblem {
    pub fn new(positions: &[Position], z: &[f64], hyper: &HyperEstimate, noise: &NoiseModel) -> Result<Self> {
        check_training(positions, z)?;
        let m = prior_mean(positions, hyper);
        Ok(Self {
            dist: distance_matrix(positions, positions),
            q: to_dvector(&features_to(hyper.tx, positions)),
            r: DVector::from_fn(z.len(), |i, _| z[i] - m[i]),
            noise: sensor_noise(positions, hyper.tx, noise),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Sample variance of the detrended data, used to scale the starts.
    pub fn residual_variance(&self) -> f64 {
        let n = self.r.len().max(1) as f64;
        let mean = self.r.sum() / n;
        self.r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    // `C` and its exponential part `E`, filled from the lower triangle.
    fn covariance(&self, p: &KernelParams) -> (DMatrix<f64>, DMatrix<f64>) {
        let sk2 = p.sigma_k * p.sigma_k;
        let sa2 = p.sigma_alpha * p.sigma_alpha;
        let sp2 = p.sigma_p * p.sigma_p;
        let decay = p.decay();
        let n = self.len();
        let mut e = DMatrix::zeros(n, n);
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let ev = sk2 * (-self.dist[(i, j)] / decay).exp();
                let cv = ev + sa2 * (self.q[i] * self.q[j]) + sp2;
                e[(i, j)] = ev;
                e[(j, i)] = ev;
                c[(i, j)] = cv;
                c[(j, i)] = cv;
            }
            c[(j, j)] += self.noise[j];
        }
        (c, e)
    }

    pub fn value(&self, p: &KernelParams) -> Result<f64> {
        let (c, _) = self.covariance(p);
        let f = SpdFactor::new(c)?;
        let alpha = f.solve_vec(&self.r);
        Ok(0.5 * self.r.dot(&alpha) + 0.5 * f.log_det() + 0.5 * self.len() as f64 * LN_2PI)
    }

    /// Value and gradient with respect to [`to_log_params`] coordinates.
    pub fn value_and_log_gradient(&self, p: &KernelParams) -> Result<(f64, [f64; 4])> {
        let (c, e) = self.covariance(p);
        let f = SpdFactor::new(c)?;
        let alpha = f.solve_vec(&self.r);
        let value = 0.5 * self.r.dot(&alpha) + 0.5 * f.log_det() + 0.5 * self.len() as f64 * LN_2PI;
        let cinv = f.inverse();
        let n = self.len();
        let decay = p.decay();
        // 0.5·tr((C⁻¹ − ααᵀ)·∂C), summed over the lower triangle
        let mut g_k = 0.0;
        let mut g_l = 0.0;
        for j in 0..n {
            for i in j..n {
                let w = cinv[(i, j)] - alpha[i] * alpha[j];
                let t = if i == j { w * e[(i, j)] } else { 2.0 * w * e[(i, j)] };
                g_k += t;
                g_l += t * self.dist[(i, j)];
            }
        }
        g_l /= decay;
        let cq = &cinv * &self.q;
        let aq = alpha.dot(&self.q);
        let g_a = p.sigma_alpha * p.sigma_alpha * (self.q.dot(&cq) - aq * aq);
        let ones_c: f64 = cinv.iter().sum();
        let a1 = alpha.sum();
        let g_p = p.sigma_p * p.sigma_p * (ones_c - a1 * a1);
        Ok((value, [0.5 * g_k, 0.5 * g_l, 0.5 * g_a, 0.5 * g_p]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub starts: usize,
    pub bfgs: BfgsOptions,
    /// `(σ_α, σ_P)` held fixed; only `σ_k` and `l` are fitted.
    pub frozen: Option<(f64, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 4, bfgs: BfgsOptions { ftol: 1e-7, ..BfgsOptions::default() }, frozen: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFit {
    pub params: KernelParams,
    pub nlml: f64,
    /// NLML at each start, in start order (infinite when it was not factorizable).
    pub start_nlml: Vec<f64>,
    /// NLML reached from each start.
    pub end_nlml: Vec<f64>,
    /// Objective evaluations spent on each start.
    pub evaluations: Vec<usize>,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

// Log-space box for each free coordinate, mapped onto ℝ by a sigmoid.
#[derive(Clone, Copy)]
struct Boxed {
    lo: f64,
    hi: f64,
}

impl Boxed {
    fn to_theta(&self, u: f64) -> (f64, f64) {
        let s = sigmoid(u);
        (self.lo + (self.hi - self.lo) * s, (self.hi - self.lo) * s * (1.0 - s))
    }

    fn to_u(&self, theta: f64) -> f64 {
        let margin = 1e-3 * (self.hi - self.lo);
        let t = theta.clamp(self.lo + margin, self.hi - margin);
        let s = (t - self.lo) / (self.hi - self.lo);
        (s / (1.0 - s)).ln()
    }
}

/// Deterministic starting points derived from the residual variance.
fn starts(problem: &NlmlProblem, count: usize) -> Vec<[f64; 4]> {
    let v = problem.residual_variance().max(1e-2);
    let q2 = (problem.q.iter().map(|q| q * q).sum::<f64>() / problem.len().max(1) as f64).max(1.0);
    let table = [
        (1.0, 50.0, 1e-2, 1e-2),
        (0.5, 200.0, 1e-1, 1e-1),
        (2.0, 25.0, 1e-3, 1e-3),
        (0.25, 800.0, 5e-2, 5e-2),
    ];
    (0..count)
        .map(|i| {
            let (fk, decay, fa, fp) = table[i % table.len()];
            let scale = 1.0 + (i / table.len()) as f64;
            [(v * fk * scale).ln(), decay.ln(), (v * fa / q2).ln(), (v * fp).ln()]
        })
        .collect()
}

/// Minimizes the NLML over the kernel parameters from several deterministic
/// starts and returns the best result (lowest start index on ties).
pub fn fit_kernel(
    positions: &[Position],
    z: &[f64],
    hyper: &HyperEstimate,
    noise: &NoiseModel,
    opts: &FitOptions,
) -> Result<KernelFit> {
    if positions.len() < 3 {
        return Err(Error::Degenerate(format!("{} training points; kernel fit needs at least 3", positions.len())));
    }
    let problem = NlmlProblem::new(positions, z, hyper, noise)?;
    let var_box = Boxed { lo: VARIANCE_BOUNDS.0.ln(), hi: VARIANCE_BOUNDS.1.ln() };
    let decay_box = Boxed { lo: DECAY_BOUNDS.0.ln(), hi: DECAY_BOUNDS.1.ln() };
    let free: Vec<usize> = if opts.frozen.is_some() { vec![0, 1] } else { vec![0, 1, 2, 3] };
    let boxes = [var_box, decay_box, var_box, var_box];

    let assemble = |u: &[f64]| -> ([f64; 4], [f64; 4]) {
        let mut theta = [0.0; 4];
        let mut jac = [0.0; 4];
        for (k, &idx) in free.iter().enumerate() {
            let (t, d) = boxes[idx].to_theta(u[k]);
            theta[idx] = t;
            jac[idx] = d;
        }
        (theta, jac)
    };
    let params_of = |theta: &[f64; 4]| -> KernelParams {
        match opts.frozen {
            Some((sa, sp)) => KernelParams::from_decay((theta[0] / 2.0).exp(), theta[1].exp(), sa, sp),
            None => from_log_params(theta),
        }
    };

    let mut best: Option<(f64, KernelParams)> = None;
    let mut start_nlml = Vec::with_capacity(opts.starts);
    let mut end_nlml = Vec::with_capacity(opts.starts);
    let mut evaluations = Vec::with_capacity(opts.starts);
    for s in starts(&problem, opts.starts.max(1)) {
        let u0: Vec<f64> = free.iter().map(|&idx| boxes[idx].to_u(s[idx])).collect();
        let f0 = {
            let (theta, _) = assemble(&u0);
            problem.value(&params_of(&theta)).unwrap_or(f64::INFINITY)
        };
        start_nlml.push(f0);
        let m = bfgs(
            |u: &[f64]| {
                let (theta, jac) = assemble(u);
                match problem.value_and_log_gradient(&params_of(&theta)) {
                    Ok((v, g)) => (v, free.iter().map(|&idx| g[idx] * jac[idx]).collect()),
                    Err(_) => (f64::INFINITY, vec![0.0; u.len()]),
                }
            },
            &u0,
            opts.bfgs,
        );
        let (theta, _) = assemble(&m.x);
        let p = params_of(&theta);
        let f = if m.f.is_finite() && m.f <= f0 { m.f } else { f0 };
        let p = if m.f.is_finite() && m.f <= f0 { p } else { params_of(&assemble(&u0).0) };
        end_nlml.push(f);
        evaluations.push(m.evaluations);
        if f.is_finite() && best.map_or(true, |(bf, _)| f < bf) {
            best = Some((f, p));
        }
    }
    match best {
        Some((nlml, params)) => Ok(KernelFit { params, nlml, start_nlml, end_nlml, evaluations }),
        None => {
            let n = problem.len();
            Err(Error::NotPositiveDefinite { size: n, max_jitter: crate::linalg::JITTER_MAX })
        }
    }
}

/// Prior moments on the grid and the data-dependent corrections:
/// `μ_g = m_g + mean_shift`, `Σ_g = K_g − cov_reduction`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub prior_mean: Vec<f64>,
    pub prior_cov: DMatrix<f64>,
    pub mean_shift: Vec<f64>,
    pub cov_reduction: DMatrix<f64>,
}

fn factor_training(
    positions: &[Position],
    z: &[f64],
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<(SpdFactor, DVector<f64>)> {
    let c = training_covariance(positions, hyper.tx, kernel, noise);
    let f = SpdFactor::new(c)?;
    let m = prior_mean(positions, hyper);
    let r = DVector::from_fn(z.len(), |i, _| z[i] - m[i]);
    let alpha = f.solve_vec(&r);
    Ok((f, alpha))
}

pub fn conditioning(
    positions: &[Position],
    z: &[f64],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<Conditioning> {
    check_training(positions, z)?;
    kernel.validate()?;
    let nodes = grid.nodes();
    let prior_mean = prior_mean(nodes, hyper);
    let mut prior_cov = kernel_matrix(nodes, nodes, kernel, hyper.tx);
    symmetrize(&mut prior_cov);
    let m = nodes.len();
    if positions.is_empty() {
        return Ok(Conditioning {
            prior_mean,
            prior_cov,
            mean_shift: vec![0.0; m],
            cov_reduction: DMatrix::zeros(m, m),
        });
    }
    let (f, alpha) = factor_training(positions, z, hyper, kernel, noise)?;
    let k_xg = kernel_matrix(positions, nodes, kernel, hyper.tx);
    let mean_shift = to_vec(&(k_xg.transpose() * &alpha));
    let v = f.solve_lower(&k_xg);
    let mut cov_reduction = v.transpose() * &v;
    symmetrize(&mut cov_reduction);
    Ok(Conditioning { prior_mean, prior_cov, mean_shift, cov_reduction })
}

/// Posterior of the field on the grid given the training reports.
pub fn posterior(
    positions: &[Position],
    z: &[f64],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
    t: u64,
) -> Result<FieldPosterior> {
    let c = conditioning(positions, z, grid, hyper, kernel, noise)?;
    let mean = c.prior_mean.iter().zip(&c.mean_shift).map(|(a, b)| a + b).collect();
    let cov = c.prior_cov - c.cov_reduction;
    Ok(FieldPosterior { t, mean, cov, hyper: *hyper, kernel: *kernel })
}

/// Posterior mean only; skips the `M×M` covariance.
pub fn posterior_mean(
    positions: &[Position],
    z: &[f64],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_training(positions, z)?;
    kernel.validate()?;
    let nodes = grid.nodes();
    let mut mean = prior_mean(nodes, hyper);
    if positions.is_empty() {
        return Ok(mean);
    }
    let (_, alpha) = factor_training(positions, z, hyper, kernel, noise)?;
    let k_xg = kernel_matrix(positions, nodes, kernel, hyper.tx);
    let shift = k_xg.transpose() * &alpha;
    for (m, s) in mean.iter_mut().zip(shift.iter()) {
        *m += s;
    }
    Ok(mean)
}

/// Posterior mean and marginal variances without forming the full covariance.
pub fn posterior_marginals(
    positions: &[Position],
    z: &[f64],
    grid: &Grid,
    hyper: &HyperEstimate,
    kernel: &KernelParams,
    noise: &NoiseModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_training(positions, z)?;
    kernel.validate()?;
    let nodes = grid.nodes();
    let mut mean = prior_mean(nodes, hyper);
    let mut var: Vec<f64> = nodes.iter().map(|&p| kernel_eval(p, p, kernel, hyper.tx)).collect();
    if positions.is_empty() {
        return Ok((mean, var));
    }
    let (f, alpha) = factor_training(positions, z, hyper, kernel, noise)?;
    let k_xg = kernel_matrix(positions, nodes, kernel, hyper.tx);
    let shift = k_xg.transpose() * &alpha;
    let v = f.solve_lower(&k_xg);
    for j in 0..nodes.len() {
        mean[j] += shift[j];
        var[j] -= v.column(j).norm_squared();
    }
    Ok((mean, var))
}
