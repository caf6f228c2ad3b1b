//! Replicated synthetic experiments and their metrics files.
//!
//! Replicate `r` draws everything from `replicate_rng(seed, r)`, so results do
//! not depend on scheduling. Replicates run on the rayon pool and are
//! collected back in replicate order.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rssfield::baseline::okd_predict;
use rssfield::empbayes::{refine_all, HyperEstimate};
use rssfield::gp::{posterior_mean, FieldPosterior};
use rssfield::linalg::SpdFactor;
use rssfield::localize::CentroidState;
use rssfield::metrics::compute_mse;
use rssfield::pipeline::{estimate, run_static};
use rssfield::recursive::{init_state, rgp_step, RecursiveState};
use rssfield::synth::{replicate_rng, Scenario, ShadowingSampler, SyntheticWorld};
use rssfield::{MeasurementSnapshot, NoiseModel, Position};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, TextFile};

/// Which positions and noise model a case uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Case {
    /// True positions, no location-error term.
    TruePositions,
    /// Reported positions with the location-error term.
    Modeled,
    /// Reported positions, location error ignored.
    Ignored,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::TruePositions, Case::Modeled, Case::Ignored];

    pub fn number(self) -> u8 {
        match self {
            Case::TruePositions => 1,
            Case::Modeled => 2,
            Case::Ignored => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment: &'static str,
    pub estimator: EstimatorKind,
    /// 0 outside the case study.
    pub case: u8,
    pub sigma_v2: f64,
    pub replicate: usize,
    pub t: u64,
    pub mse: f64,
    pub mu_alpha: f64,
    pub mu_p: f64,
    /// Distance from the transmitter estimate to the truth, when known.
    pub tx_error: Option<f64>,
    pub runtime_ms: f64,
    /// Whether the grid covariance factorized, when it was checked.
    pub grid_cov_pd: Option<bool>,
}

impl MetricsRecord {
    fn new(experiment: &'static str, estimator: EstimatorKind, replicate: usize, t: u64, sigma_v2: f64) -> Self {
        Self {
            experiment,
            estimator,
            case: 0,
            sigma_v2,
            replicate,
            t,
            mse: f64::NAN,
            mu_alpha: f64::NAN,
            mu_p: f64::NAN,
            tx_error: None,
            runtime_ms: 0.0,
            grid_cov_pd: None,
        }
    }

    fn hyper(&mut self, h: &HyperEstimate, true_tx: Option<Position>) {
        self.mu_alpha = h.mu_alpha;
        self.mu_p = h.mu_p;
        self.tx_error = true_tx.map(|t| t.distance_to(&h.tx));
    }
}

fn estimator_name(k: EstimatorKind) -> &'static str {
    match k {
        EstimatorKind::Sgp => "sgp",
        EstimatorKind::Rgp => "rgp",
        EstimatorKind::Okd => "okd",
    }
}

/// Deterministic metrics: everything except run times.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.header(&["experiment", "estimator", "case", "sigma_v2_db2", "replicate", "t", "mse_db2", "mu_alpha", "mu_p_dbm", "tx_error_m"])?;
    for r in records {
        f.line(&[
            r.experiment.to_string(),
            estimator_name(r.estimator).to_string(),
            r.case.to_string(),
            fmt_f64(r.sigma_v2),
            r.replicate.to_string(),
            r.t.to_string(),
            fmt_f64(r.mse),
            fmt_f64(r.mu_alpha),
            fmt_f64(r.mu_p),
            r.tx_error.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    f.finish()
}

pub fn write_timings(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.header(&["experiment", "case", "sigma_v2_db2", "replicate", "t", "runtime_ms"])?;
    for r in records {
        f.line(&[
            r.experiment.to_string(),
            r.case.to_string(),
            fmt_f64(r.sigma_v2),
            r.replicate.to_string(),
            r.t.to_string(),
            format!("{:.3}", r.runtime_ms),
        ])?;
    }
    f.finish()
}

/// One-sided paired t-test of `mean(b − a) > 0`. Fewer than two pairs give
/// NaN statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(rssfield::Error::LengthMismatch { expected: a.len(), got: b.len() }.into());
    }
    let n = a.len();
    if n < 2 {
        let mean_diff = if n == 1 { b[0] - a[0] } else { f64::NAN };
        return Ok(PairedTest { n, mean_diff, t: f64::NAN, p_value: f64::NAN });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| CliError::Config(e.to_string()))?;
    let p_value = if t.is_finite() { dist.sf(t) } else if t > 0.0 { 0.0 } else { 1.0 };
    Ok(PairedTest { n, mean_diff: mean, t, p_value })
}

/// Per-σ_v² means and the two ordering tests (Case 2 above Case 1, Case 3 above Case 2).
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    pub sigma_v2: f64,
    pub mean_mse: [f64; 3],
    pub gap_12: PairedTest,
    pub gap_23: PairedTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CasesReport {
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<CaseSummary>,
}

/// The reports with every position replaced by the true one.
pub fn with_true_positions(snapshot: &MeasurementSnapshot, truth: &[Position]) -> MeasurementSnapshot {
    let mut s = snapshot.clone();
    for (r, &p) in s.sensors.iter_mut().zip(truth) {
        r.position = p;
    }
    s
}

fn shared_sampler(scenario: &Scenario) -> Result<Arc<ShadowingSampler>> {
    Ok(Arc::new(ShadowingSampler::new(&scenario.grid, scenario.params.d_corr)?))
}

/// Static GP on one snapshot of the case study: hyper-parameters, fitted
/// kernel and grid mean, scored against the true field.
fn case_run(
    cfg: &ExperimentConfig,
    case: Case,
    snapshot: &MeasurementSnapshot,
    truth_positions: &[Position],
    grid_truth: &[f64],
    scenario: &Scenario,
    mut rec: MetricsRecord,
) -> Result<MetricsRecord> {
    let start = Instant::now();
    let rho_u = if case == Case::Modeled { cfg.rho_u() } else { 0.0 };
    let noise = NoiseModel::new(rho_u, scenario.params.sigma_w)?;
    let snap = if case == Case::TruePositions { with_true_positions(snapshot, truth_positions) } else { snapshot.clone() };
    let mut sc = cfg.static_config(noise, None);
    if let Some(sh) = sc.refine.shadowing.as_mut() {
        sh.sigma_v = scenario.params.sigma_v;
    }
    let est = estimate(&snap, &CentroidState::new(), &sc)?;
    let mean = posterior_mean(&snap.positions(), &snap.rss(), &scenario.grid, &est.refine.hyper, &est.kernel, &noise)?;
    rec.case = case.number();
    rec.mse = compute_mse(&mean, grid_truth)?;
    rec.hyper(&est.refine.hyper, Some(scenario.params.tx_position));
    rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}

/// The three-case study over the σ_v² sweep. Every σ_v² of a replicate
/// reuses the same random stream, and all cases share one snapshot.
pub fn run_cases(cfg: &ExperimentConfig) -> Result<CasesReport> {
    cfg.validate()?;
    let base = cfg.scenario(cfg.seed)?;
    let sampler = shared_sampler(&base)?;
    let sweep = cfg.cases.sigma_v2_sweep_db2.clone();
    let per_rep: Vec<Vec<MetricsRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<MetricsRecord>> {
            let mut out = Vec::with_capacity(sweep.len() * 3);
            for &sv2 in &sweep {
                let mut scenario = base.clone();
                scenario.params.sigma_v = sv2.sqrt();
                let mut rng = replicate_rng(cfg.seed, r as u64);
                let world = SyntheticWorld::with_sampler(scenario.clone(), sampler.clone(), &mut rng)?;
                let (snap, truth) = world.observe(&mut rng)?;
                for case in Case::ALL {
                    let rec = MetricsRecord::new("cases", EstimatorKind::Sgp, r, snap.t, sv2);
                    out.push(case_run(cfg, case, &snap, &truth.sensor_true_positions, &truth.grid_field, &scenario, rec)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<MetricsRecord> = per_rep.into_iter().flatten().collect();
    let summary = summarize_cases(&records, &sweep)?;
    Ok(CasesReport { records, summary })
}

pub fn summarize_cases(records: &[MetricsRecord], sweep: &[f64]) -> Result<Vec<CaseSummary>> {
    sweep
        .iter()
        .map(|&sv2| {
            let mse = |c: u8| -> Vec<f64> {
                records.iter().filter(|r| r.case == c && r.sigma_v2 == sv2).map(|r| r.mse).collect()
            };
            let m = [mse(1), mse(2), mse(3)];
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
            Ok(CaseSummary {
                sigma_v2: sv2,
                mean_mse: [mean(&m[0]), mean(&m[1]), mean(&m[2])],
                gap_12: paired_t_test(&m[0], &m[1])?,
                gap_23: paired_t_test(&m[1], &m[2])?,
            })
        })
        .collect()
}

pub fn write_case_summary(path: &Path, summary: &[CaseSummary]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.header(&[
        "sigma_v2_db2", "mean_mse_case1", "mean_mse_case2", "mean_mse_case3", "n", "diff_21", "t_21", "p_21", "diff_32", "t_32", "p_32",
    ])?;
    for s in summary {
        f.line(&[
            fmt_f64(s.sigma_v2),
            fmt_f64(s.mean_mse[0]),
            fmt_f64(s.mean_mse[1]),
            fmt_f64(s.mean_mse[2]),
            s.gap_12.n.to_string(),
            fmt_f64(s.gap_12.mean_diff),
            fmt_f64(s.gap_12.t),
            fmt_f64(s.gap_12.p_value),
            fmt_f64(s.gap_23.mean_diff),
            fmt_f64(s.gap_23.t),
            fmt_f64(s.gap_23.p_value),
        ])?;
    }
    f.finish()
}

/// Options for [`run_replicates`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Factor every produced grid covariance and record the outcome.
    pub check_pd: bool,
}

fn factorizes(post: &FieldPosterior) -> bool {
    SpdFactor::new(post.cov.clone()).is_ok()
}

/// `steps` snapshots per replicate (times 1..=steps) scored against the true
/// grid field. `sgp` and `okd` treat each step on its own; `rgp` starts
/// with the static pipeline and recurses.
pub fn run_replicates(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let scenario = cfg.scenario(cfg.seed)?;
    let sampler = shared_sampler(&scenario)?;
    let kind = cfg.estimator.kind;
    let noise = NoiseModel::new(cfg.rho_u(), scenario.params.sigma_w)?;
    let experiment = match kind {
        EstimatorKind::Rgp => "recursive",
        _ => "static",
    };
    let per_rep: Vec<Vec<MetricsRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<MetricsRecord>> {
            let mut rng = replicate_rng(cfg.seed, r as u64);
            let mut world = SyntheticWorld::with_sampler(scenario.clone(), sampler.clone(), &mut rng)?;
            let mut state: Option<RecursiveState> = None;
            let rc = cfg.recursive_config(noise, None);
            let mut out = Vec::with_capacity(cfg.steps);
            for _ in 0..cfg.steps {
                let (snap, truth) = world.step(&mut rng)?;
                let start = Instant::now();
                let mut rec = MetricsRecord::new(experiment, kind, r, snap.t, cfg.scenario.sigma_v2_db2);
                let tx = Some(scenario.params.tx_position);
                match kind {
                    EstimatorKind::Rgp => {
                        let next = match &state {
                            None => init_state(&snap, &scenario.grid, &rc)?,
                            Some(s) => rgp_step(s, &snap, &scenario.grid, &rc)?,
                        };
                        rec.mse = compute_mse(&next.posterior.mean, &truth.grid_field)?;
                        rec.hyper(&next.posterior.hyper, tx);
                        if opts.check_pd {
                            rec.grid_cov_pd = Some(factorizes(&next.posterior));
                        }
                        state = Some(next);
                    }
                    EstimatorKind::Sgp => {
                        let sc = rc.static_config;
                        if opts.check_pd {
                            let o = run_static(&snap, &scenario.grid, &CentroidState::new(), &sc)?;
                            rec.mse = compute_mse(&o.posterior.mean, &truth.grid_field)?;
                            rec.hyper(&o.posterior.hyper, tx);
                            rec.grid_cov_pd = Some(factorizes(&o.posterior));
                        } else {
                            let est = estimate(&snap, &CentroidState::new(), &sc)?;
                            let h = est.refine.hyper;
                            let mean = posterior_mean(&snap.positions(), &snap.rss(), &scenario.grid, &h, &est.kernel, &noise)?;
                            rec.mse = compute_mse(&mean, &truth.grid_field)?;
                            rec.hyper(&h, tx);
                        }
                    }
                    EstimatorKind::Okd => {
                        let h = refine_all(&snap, &CentroidState::new(), &rc.static_config.refine)?.hyper;
                        let p = okd_predict(&snap.positions(), &snap.rss(), &scenario.grid, &h)?;
                        rec.mse = compute_mse(&p.mean, &truth.grid_field)?;
                        rec.hyper(&h, tx);
                    }
                }
                rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
                out.push(rec);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}
