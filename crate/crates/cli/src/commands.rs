//! Subcommand bodies. Each writes its files under the output directory and
//! returns a short human-readable summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rssfield::baseline::okd_predict;
use rssfield::bounds::hcrb_all;
use rssfield::empbayes::refine_all;
use rssfield::gp::{posterior_marginals, FieldPosterior};
use rssfield::localize::CentroidState;
use rssfield::pipeline::estimate;
use rssfield::recursive::{init_state, rgp_step};
use rssfield::synth::{replicate_rng, SyntheticWorld};
use rssfield::{Grid, MeasurementSnapshot, NoiseModel, Position};

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiments::{run_cases, run_replicates, write_case_summary, write_metrics, write_timings, MetricsRecord, RunOptions};
use crate::io::{self, read_field, read_measurements, read_truth, write_field, TruthRow};
use crate::real::ingest_real;

/// Where a single-field command takes its data from.
#[derive(Debug, Clone, Default)]
pub struct DataArgs {
    /// Measurement CSV; the command uses its snapshots instead of the config's data.
    pub measurements: Option<PathBuf>,
    /// Truth or field CSV whose node positions form the grid.
    pub grid: Option<PathBuf>,
    /// Truth CSV to score the estimate against.
    pub truth: Option<PathBuf>,
}

/// Snapshots, grid, optional truth rows and the estimator's noise model.
struct Input {
    snapshots: Vec<MeasurementSnapshot>,
    grid: Grid,
    truth: Option<Vec<TruthRow>>,
    noise: NoiseModel,
    known_tx: Option<Position>,
    true_tx: Option<Position>,
}

fn grid_file(path: &Path) -> Result<Grid> {
    // accept either a truth file or a field file
    match read_truth(path) {
        Ok(rows) => io::grid_from_rows(path, rows.iter().map(|r| (r.node_id, r.position))),
        Err(CliError::BadRow { row: 0, .. }) => {
            let rows = read_field(path)?;
            io::grid_from_rows(path, rows.iter().map(|r| (r.node_id, r.position)))
        }
        Err(e) => Err(e),
    }
}

fn resolve(cfg: &ExperimentConfig, data: &DataArgs) -> Result<Input> {
    let scenario = cfg.scenario(cfg.seed)?;
    if let Some(m) = &data.measurements {
        let snapshots = read_measurements(m)?;
        if snapshots.is_empty() {
            return Err(CliError::BadRow { path: m.clone(), row: 0, message: "no measurements".into() });
        }
        let truth = data.truth.as_deref().map(read_truth).transpose()?;
        let grid = match (&data.grid, &data.truth, &truth) {
            (Some(g), _, _) => grid_file(g)?,
            (None, Some(path), Some(rows)) => io::grid_from_rows(path, rows.iter().map(|r| (r.node_id, r.position)))?,
            _ => scenario.grid.clone(),
        };
        let (noise, known_tx) = match &cfg.real {
            Some(r) => (r.noise()?, r.known_tx()),
            None => (NoiseModel::new(cfg.rho_u(), scenario.params.sigma_w)?, None),
        };
        return Ok(Input { snapshots, grid, truth, noise, known_tx, true_tx: known_tx });
    }
    if let Some(real) = &cfg.real {
        let split = ingest_real(&real.measurements, real.split_seed)?;
        return Ok(Input {
            snapshots: vec![split.train],
            grid: split.grid,
            truth: Some(split.truth),
            noise: real.noise()?,
            known_tx: real.known_tx(),
            true_tx: real.known_tx(),
        });
    }
    // one synthetic replicate
    let mut rng = replicate_rng(cfg.seed, 0);
    let mut world = SyntheticWorld::new(scenario.clone(), &mut rng)?;
    let mut snapshots = Vec::with_capacity(cfg.steps);
    let mut last_truth = Vec::new();
    for _ in 0..cfg.steps {
        let (s, t) = world.step(&mut rng)?;
        snapshots.push(s);
        last_truth = t.grid_field;
    }
    Ok(Input {
        truth: Some(io::truth_rows(&scenario.grid, &last_truth)),
        snapshots,
        grid: scenario.grid,
        noise: NoiseModel::new(cfg.rho_u(), scenario.params.sigma_w)?,
        known_tx: None,
        true_tx: Some(scenario.params.tx_position),
    })
}

fn score(input: &Input, mean: &[f64]) -> Result<Option<f64>> {
    let Some(truth) = &input.truth else { return Ok(None) };
    let rows: Vec<io::FieldRow> = input
        .grid
        .nodes()
        .iter()
        .zip(mean)
        .enumerate()
        .map(|(i, (&p, &m))| io::FieldRow { node_id: i, position: p, mean: m, variance: 0.0, hcrb: None })
        .collect();
    io::field_mse(&rows, truth).map(Some)
}

fn single_record(input: &Input, kind: EstimatorKind, t: u64, mse: Option<f64>, hyper: &rssfield::empbayes::HyperEstimate) -> MetricsRecord {
    MetricsRecord {
        experiment: "single",
        estimator: kind,
        case: 0,
        sigma_v2: f64::NAN,
        replicate: 0,
        t,
        mse: mse.unwrap_or(f64::NAN),
        mu_alpha: hyper.mu_alpha,
        mu_p: hyper.mu_p,
        tx_error: input.true_tx.map(|p| p.distance_to(&hyper.tx)),
        runtime_ms: 0.0,
        grid_cov_pd: None,
    }
}

fn finish_single(out: &Path, input: &Input, records: &[MetricsRecord], report: &mut String) -> Result<()> {
    if input.truth.is_some() {
        write_metrics(&out.join("metrics.csv"), records)?;
        if let Some(r) = records.last() {
            let _ = writeln!(report, "mse_db2 = {:.6}", r.mse);
        }
    }
    if let Some(r) = records.last() {
        let _ = writeln!(report, "mu_alpha = {:.6}, mu_p = {:.6} dBm", r.mu_alpha, r.mu_p);
    }
    Ok(())
}

fn data_mode(data: &DataArgs, cfg: &ExperimentConfig) -> bool {
    data.measurements.is_some() || cfg.real.is_some()
}

/// `synth`: measurement and per-step truth files for each replicate.
pub fn synth(cfg: &ExperimentConfig, replicates: usize, out: &Path) -> Result<String> {
    let scenario = cfg.scenario(cfg.seed)?;
    let mut report = String::new();
    for r in 0..replicates {
        let dir = if replicates == 1 { out.to_path_buf() } else { out.join(format!("rep_{r:04}")) };
        let mut rng = replicate_rng(cfg.seed, r as u64);
        let mut world = SyntheticWorld::new(scenario.clone(), &mut rng)?;
        let mut snaps = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            let (s, truth) = world.step(&mut rng)?;
            io::write_truth(&dir.join(format!("truth_t{:04}.csv", s.t)), &io::truth_rows(&scenario.grid, &truth.grid_field))?;
            snaps.push(s);
        }
        io::write_measurements(&dir.join("measurements.csv"), &snaps)?;
        let _ = writeln!(report, "wrote {} ({} steps)", dir.display(), cfg.steps);
    }
    Ok(report)
}

/// `fit-static` and `baseline-okd`: one field from files or real data, or
/// replicated synthetic metrics otherwise.
pub fn fit_single(cfg: &ExperimentConfig, kind: EstimatorKind, data: &DataArgs, out: &Path) -> Result<String> {
    let mut report = String::new();
    if !data_mode(data, cfg) {
        let mut c = cfg.clone();
        c.estimator.kind = kind;
        let recs = run_replicates(&c, RunOptions::default())?;
        write_replicate_files(out, &recs, &mut report)?;
        return Ok(report);
    }
    let input = resolve(cfg, data)?;
    let snap = input.snapshots.last().expect("resolve returns at least one snapshot");
    let sc = cfg.static_config(input.noise, input.known_tx);
    let (mean, var, hyper) = match kind {
        EstimatorKind::Okd => {
            let h = refine_all(snap, &CentroidState::new(), &sc.refine)?.hyper;
            let p = okd_predict(&snap.positions(), &snap.rss(), &input.grid, &h)?;
            if p.singular {
                let _ = writeln!(report, "warning: kriging system was singular; used a pseudo-inverse");
            }
            (p.mean, p.variance, h)
        }
        _ => {
            let est = estimate(snap, &CentroidState::new(), &sc)?;
            let h = est.refine.hyper;
            let (m, v) = posterior_marginals(&snap.positions(), &snap.rss(), &input.grid, &h, &est.kernel, &input.noise)?;
            let k = est.kernel;
            let _ = writeln!(
                report,
                "kernel: sigma_k = {:.6}, two_l2 = {:.6} m, sigma_alpha = {:.6}, sigma_p = {:.6}",
                k.sigma_k,
                k.decay(),
                k.sigma_alpha,
                k.sigma_p
            );
            (m, v, h)
        }
    };
    write_field(&out.join("field.csv"), &input.grid, &mean, &var, None)?;
    let mse = score(&input, &mean)?;
    finish_single(out, &input, &[single_record(&input, kind, snap.t, mse, &hyper)], &mut report)?;
    Ok(report)
}

fn write_replicate_files(out: &Path, recs: &[MetricsRecord], report: &mut String) -> Result<()> {
    write_metrics(&out.join("metrics.csv"), recs)?;
    write_timings(&out.join("timings.csv"), recs)?;
    let mut by_t: std::collections::BTreeMap<u64, (f64, usize)> = Default::default();
    for r in recs {
        let e = by_t.entry(r.t).or_default();
        e.0 += r.mse;
        e.1 += 1;
    }
    for (t, (s, n)) in by_t {
        let _ = writeln!(report, "t = {t}: mean mse = {:.6} dB^2 over {n} replicates", s / n as f64);
    }
    Ok(())
}

/// `fit-recursive`: the recursion over every snapshot of a file (one field
/// file per step), or replicated synthetic metrics.
pub fn fit_recursive(cfg: &ExperimentConfig, data: &DataArgs, out: &Path) -> Result<String> {
    let mut report = String::new();
    if !data_mode(data, cfg) {
        let mut c = cfg.clone();
        c.estimator.kind = EstimatorKind::Rgp;
        let recs = run_replicates(&c, RunOptions::default())?;
        write_replicate_files(out, &recs, &mut report)?;
        return Ok(report);
    }
    let input = resolve(cfg, data)?;
    let rc = cfg.recursive_config(input.noise, input.known_tx);
    let mut state = init_state(&input.snapshots[0], &input.grid, &rc)?;
    let mut records = Vec::new();
    for (i, snap) in input.snapshots.iter().enumerate() {
        if i > 0 {
            state = rgp_step(&state, snap, &input.grid, &rc)?;
            if state.carried {
                let _ = writeln!(report, "t = {}: no reports, state carried over", snap.t);
            }
        }
        io::emit_field(&out.join(format!("field_t{:04}.csv", snap.t)), &input.grid, &state.posterior, None)?;
        let mse = if i + 1 == input.snapshots.len() { score(&input, &state.posterior.mean)? } else { None };
        records.push(single_record(&input, EstimatorKind::Rgp, snap.t, mse, &state.posterior.hyper));
    }
    if input.truth.is_some() {
        // truth describes the final step only
        records.retain(|r| !r.mse.is_nan());
    }
    finish_single(out, &input, &records, &mut report)?;
    Ok(report)
}

/// `bound`: static posterior of the last snapshot with the per-node bound.
pub fn bound(cfg: &ExperimentConfig, data: &DataArgs, out: &Path) -> Result<String> {
    let mut report = String::new();
    let input = resolve(cfg, data)?;
    let snap = input.snapshots.last().expect("resolve returns at least one snapshot");
    let sc = cfg.static_config(input.noise, input.known_tx);
    let est = estimate(snap, &CentroidState::new(), &sc)?;
    let h = est.refine.hyper;
    let (mean, var) = posterior_marginals(&snap.positions(), &snap.rss(), &input.grid, &h, &est.kernel, &input.noise)?;
    let reports = hcrb_all(&snap.positions(), &input.grid, &h, &est.kernel, &input.noise)?;
    let singular = reports.iter().filter(|r| r.singular).count();
    if singular > 0 {
        let _ = writeln!(report, "warning: {singular} nodes used a pseudo-inverse of M");
    }
    let b: Vec<f64> = reports.iter().map(|r| r.bound).collect();
    write_field(&out.join("field.csv"), &input.grid, &mean, &var, Some(&b))?;
    let mse = score(&input, &mean)?;
    let mean_bound = b.iter().sum::<f64>() / b.len() as f64;
    let _ = writeln!(report, "mean bound = {mean_bound:.6} dB^2");
    finish_single(out, &input, &[single_record(&input, EstimatorKind::Sgp, snap.t, mse, &h)], &mut report)?;
    Ok(report)
}

/// `cases`: the three-case study with its per-replicate records and summary.
pub fn cases(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    if cfg.real.is_some() {
        return Err(CliError::Config("the case study needs a synthetic scenario".into()));
    }
    let rep = run_cases(cfg)?;
    write_metrics(&out.join("metrics.csv"), &rep.records)?;
    write_timings(&out.join("timings.csv"), &rep.records)?;
    write_case_summary(&out.join("cases_summary.csv"), &rep.summary)?;
    let mut report = String::new();
    for s in &rep.summary {
        let _ = writeln!(
            report,
            "sigma_v2 = {:>5}: mse case1 {:.4}  case2 {:.4}  case3 {:.4}  (p21 {:.2e}, p32 {:.2e})",
            s.sigma_v2, s.mean_mse[0], s.mean_mse[1], s.mean_mse[2], s.gap_12.p_value, s.gap_23.p_value
        );
    }
    Ok(report)
}

/// `eval`: MSE of a field file against a truth file.
pub fn eval(field: &Path, truth: &Path, out: Option<&Path>) -> Result<String> {
    let f = read_field(field)?;
    let t = read_truth(truth)?;
    let mse = io::field_mse(&f, &t)?;
    if let Some(dir) = out {
        let mut w = io::TextFile::create(&dir.join("eval.csv"))?;
        w.header(&["field", "truth", "n", "mse_db2"])?;
        w.line(&[field.display().to_string(), truth.display().to_string(), t.len().to_string(), io::fmt_f64(mse)])?;
        w.finish()?;
    }
    Ok(format!("mse_db2 = {mse:.6} over {} truth rows\n", t.len()))
}

/// `ingest-real`: writes the training reports and the test truth.
pub fn ingest(measurements: &Path, split_seed: u64, out: &Path) -> Result<String> {
    let split = ingest_real(measurements, split_seed)?;
    io::write_measurements(&out.join("train.csv"), std::slice::from_ref(&split.train))?;
    io::write_truth(&out.join("test_truth.csv"), &split.truth)?;
    Ok(format!(
        "train {} rows, test {} rows on {} distinct nodes\n",
        split.train.len(),
        split.test_len(),
        split.grid.len()
    ))
}

/// Exposed for tests: the static posterior on a file snapshot.
pub fn static_posterior(cfg: &ExperimentConfig, data: &DataArgs) -> Result<(Grid, FieldPosterior)> {
    let input = resolve(cfg, data)?;
    let snap = input.snapshots.last().expect("resolve returns at least one snapshot");
    let sc = cfg.static_config(input.noise, input.known_tx);
    let out = rssfield::pipeline::run_static(snap, &input.grid, &CentroidState::new(), &sc)?;
    Ok((input.grid, out.posterior))
}
