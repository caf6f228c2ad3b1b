//! Acceptance suite. Runs every criterion in order inside one test so the
//! timed runs do not compete for the CPU, prints one PASS/FAIL line per
//! criterion and fails if any criterion fails.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rssfield::baseline::{okd_with_variogram, VariogramModel};
use rssfield::bounds::hcrb_all;
use rssfield::empbayes::{HyperEstimate, RefineConfig, ShadowingPrior};
use rssfield::gp::{posterior, posterior_mean, FieldPosterior, FitOptions, KernelParams};
use rssfield::linalg::SpdFactor;
use rssfield::localize::CentroidState;
use rssfield::metrics::compute_mse;
use rssfield::pipeline::{estimate, run_static, KernelSource, StaticConfig};
use rssfield::recursive::{init_state, rgp_step, RecursiveConfig};
use rssfield::synth::{location_error_db, place_sensors, replicate_rng, Area, Scenario, ShadowingSampler, SyntheticWorld};
use rssfield::{rho_u_from, Grid, MeasurementSnapshot, NoiseModel, Position, SensorReport};
use rssfield_cli::config::{DynamicsKind, EstimatorKind};
use rssfield_cli::experiments::{run_cases, run_replicates, RunOptions};
use rssfield_cli::ExperimentConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Tally of grid-covariance factorizations attempted by criteria 1 to 8.
#[derive(Default)]
struct PdLog {
    checks: usize,
    failures: Vec<String>,
}

impl PdLog {
    fn check(&mut self, what: &str, post: &FieldPosterior) {
        self.checks += 1;
        if SpdFactor::new(post.cov.clone()).is_err() {
            self.failures.push(what.to_string());
        }
    }

    fn record(&mut self, what: &str, ok: Option<bool>) {
        if let Some(ok) = ok {
            self.checks += 1;
            if !ok {
                self.failures.push(what.to_string());
            }
        }
    }
}

fn say(line: &str) {
    // bypasses the harness capture so the lines land in the test log
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn noise_free_recovery(pd: &mut PdLog) -> Outcome {
    let mut s = Scenario::reference(11);
    s.params.sigma_v = 0.0;
    s.params.sigma_w = 0.0;
    s.params.sigma_d = 0.0;
    let mut rng = replicate_rng(11, 0);
    let world = SyntheticWorld::new(s.clone(), &mut rng).unwrap();
    let (snap, truth) = world.observe(&mut rng).unwrap();
    let cfg = StaticConfig {
        refine: RefineConfig::new(NoiseModel::new(0.0, 0.0).unwrap()),
        kernel: KernelSource::Fit(FitOptions::default()),
    };
    let start = Instant::now();
    let out = match run_static(&snap, &s.grid, &CentroidState::new(), &cfg) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("pipeline error: {e}")),
    };
    let elapsed = start.elapsed();
    pd.check("criterion 1 posterior", &out.posterior);
    let h = out.posterior.hyper;
    let mse = compute_mse(&out.posterior.mean, &truth.grid_field).unwrap();
    let tx_err = h.tx.distance_to(&s.params.tx_position);
    let pass = (h.mu_alpha - 3.5).abs() <= 1e-6
        && (h.mu_p + 10.0).abs() <= 1e-6
        && tx_err <= 0.5
        && mse <= 1e-6
        && elapsed < Duration::from_secs(10);
    Outcome::new(
        pass,
        format!(
            "mu_alpha err {:.1e}, mu_p err {:.1e}, tx err {:.1e} m, mse {:.1e} dB^2, {:.2} s",
            (h.mu_alpha - 3.5).abs(),
            (h.mu_p + 10.0).abs(),
            tx_err,
            mse,
            secs(elapsed)
        ),
    )
}

fn case_ordering() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 2017;
    cfg.replicates = 100;
    let start = Instant::now();
    let rep = match run_cases(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("run error: {e}")),
    };
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(600);
    let mut parts = Vec::new();
    for s in &rep.summary {
        let [m1, m2, m3] = s.mean_mse;
        let ok = m1 <= m2 && m2 <= m3 && s.gap_12.p_value < 0.05 && s.gap_23.p_value < 0.05;
        pass &= ok;
        parts.push(format!(
            "sv2={}: {:.3}/{:.3}/{:.3} p21={:.1e} p32={:.1e}",
            s.sigma_v2, m1, m2, m3, s.gap_12.p_value, s.gap_23.p_value
        ));
    }
    Outcome::new(pass, format!("{}; {:.0} s", parts.join("; "), secs(elapsed)))
}

fn small_scenario(seed: u64, n: usize) -> Scenario {
    let mut s = Scenario::reference(seed);
    s.area = Area { width: 120.0, height: 100.0 };
    s.grid = Grid::uniform(120.0, 100.0, 5, 4).unwrap();
    s.params.tx_position = Position::new(60.0, 50.0);
    s.params.d_corr = 30.0;
    s.n_sensors = n;
    s
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn lambda_one(pd: &mut PdLog) -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = replicate_rng(300 + k, 0);
        let n = rng.random_range(8..=30);
        let s = small_scenario(300 + k, n);
        let mut world = SyntheticWorld::new(s.clone(), &mut rng).unwrap();
        let (s0, _) = world.step(&mut rng).unwrap();
        let (s1, _) = world.step(&mut rng).unwrap();
        let noise = NoiseModel::new(rho_u_from(3.5, s.params.sigma_d), s.params.sigma_w).unwrap();
        let sc = StaticConfig { refine: RefineConfig::new(noise), kernel: KernelSource::Fit(FitOptions::default()) };
        let mut rc = RecursiveConfig::new(sc);
        rc.lambda = 1.0;
        let state = match init_state(&s0, &s.grid, &rc) {
            Ok(st) => st,
            Err(e) => return Outcome::new(false, format!("scenario {k}: init error {e}")),
        };
        let next = rgp_step(&state, &s1, &s.grid, &rc).unwrap();
        let frozen = StaticConfig { kernel: KernelSource::Fixed(state.posterior.kernel), ..sc };
        let direct = run_static(&s1, &s.grid, &state.centroid, &frozen).unwrap();
        pd.check("criterion 3 rgp", &next.posterior);
        pd.check("criterion 3 sgp", &direct.posterior);
        worst = worst
            .max(max_abs_diff(next.posterior.mean.iter().copied(), direct.posterior.mean.iter().copied()))
            .max(max_abs_diff(next.posterior.cov.iter().copied(), direct.posterior.cov.iter().copied()));
    }
    Outcome::new(worst <= 1e-8, format!("max element difference {worst:.1e} over 20 scenarios"))
}

fn recursive_improvement(pd: &mut PdLog) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 404;
    cfg.replicates = 100;
    cfg.steps = 10;
    cfg.estimator.kind = EstimatorKind::Rgp;
    cfg.estimator.lambda = 0.5;
    cfg.estimator.freeze_hyper = true;
    cfg.scenario.grid_cols = 17;
    cfg.scenario.grid_rows = 16;
    cfg.scenario.dynamics = DynamicsKind::Moving;
    cfg.scenario.step_std_m = 5.0;
    let opts = RunOptions { check_pd: true };
    let moving = match run_replicates(&cfg, opts) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("moving run error: {e}")),
    };
    cfg.scenario.dynamics = DynamicsKind::Intermittent;
    cfg.scenario.drop_fraction = 0.2;
    let intermittent = match run_replicates(&cfg, opts) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("intermittent run error: {e}")),
    };
    for r in moving.iter().chain(&intermittent) {
        pd.record("criterion 4 rgp step", r.grid_cov_pd);
    }
    let at = |recs: &[rssfield_cli::MetricsRecord], rep: usize, t: u64| {
        recs.iter().find(|r| r.replicate == rep && r.t == t).map(|r| r.mse).unwrap()
    };
    let improved = (0..100).filter(|&r| at(&moving, r, 10) < at(&moving, r, 1)).count();
    let first = |recs: &[rssfield_cli::MetricsRecord]| (0..100).map(|r| at(recs, r, 1)).sum::<f64>() / 100.0;
    let (m1, i1) = (first(&moving), first(&intermittent));
    Outcome::new(
        improved >= 90 && i1 > m1,
        format!("mse(t=10) < mse(t=1) in {improved}/100; mean mse(t=1) intermittent {i1:.3} vs moving {m1:.3}"),
    )
}

fn hcrb_dominance(pd: &mut PdLog) -> Outcome {
    let noise = NoiseModel::new(rho_u_from(3.5, 13.16), 7f64.sqrt()).unwrap();
    let mut refine = RefineConfig::new(noise);
    refine.shadowing = Some(ShadowingPrior { sigma_v: 10f64.sqrt(), d_corr: 50.0 });
    let shadow_cfg = StaticConfig { refine, kernel: KernelSource::Shadowing };
    let base = Scenario::reference(0);
    let sampler = Arc::new(ShadowingSampler::new(&base.grid, 50.0).unwrap());

    let mut below = 0usize;
    let mut nodes = 0usize;
    for k in 0..50u64 {
        let s = Scenario::reference(500 + k);
        let mut rng = replicate_rng(500 + k, 0);
        let world = SyntheticWorld::with_sampler(s.clone(), sampler.clone(), &mut rng).unwrap();
        let (snap, _) = world.observe(&mut rng).unwrap();
        let out = run_static(&snap, &s.grid, &CentroidState::new(), &shadow_cfg).unwrap();
        pd.check("criterion 5 posterior", &out.posterior);
        let reps = hcrb_all(&snap.positions(), &s.grid, &out.posterior.hyper, &out.posterior.kernel, &noise).unwrap();
        let var = out.posterior.variances();
        nodes += reps.len();
        below += reps.iter().zip(&var).filter(|(r, v)| !(r.bound >= **v - 1e-9 * v.abs().max(1.0))).count();
    }

    // Monte-Carlo at fixed geometry. The bound comes from the first draw;
    // the probe is the node at the median distance from the transmitter.
    let s = Scenario::reference(5);
    let mut rng = replicate_rng(5, 0);
    let positions = place_sensors(&s.area, s.n_sensors, &mut rng);
    let world = SyntheticWorld::with_positions(s.clone(), sampler.clone(), positions.clone(), &mut rng).unwrap();
    let (snap0, _) = world.observe(&mut rng).unwrap();
    let est0 = estimate(&snap0, &CentroidState::new(), &shadow_cfg).unwrap();
    let reps = hcrb_all(&snap0.positions(), &s.grid, &est0.refine.hyper, &est0.kernel, &noise).unwrap();
    let tx = s.params.tx_position;
    let mut order: Vec<usize> = (0..s.grid.len()).collect();
    let dist = |j: usize| s.grid.nodes()[j].distance_to(&tx);
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    let probe = order[order.len() / 2];
    let fixed = StaticConfig { kernel: KernelSource::Fixed(est0.kernel), ..shadow_cfg };
    let redraws = 500u64;
    let mut se = 0.0;
    for r in 0..redraws {
        let mut rng = replicate_rng(5, 1 + r);
        let w = SyntheticWorld::with_positions(s.clone(), sampler.clone(), positions.clone(), &mut rng).unwrap();
        let (snap, truth) = w.observe(&mut rng).unwrap();
        let est = estimate(&snap, &CentroidState::new(), &fixed).unwrap();
        let mean = posterior_mean(&snap.positions(), &snap.rss(), &s.grid, &est.refine.hyper, &est.kernel, &noise).unwrap();
        se += (mean[probe] - truth.grid_field[probe]).powi(2);
    }
    let mc = se / redraws as f64;
    let bound = reps[probe].bound;
    Outcome::new(
        below == 0 && mc >= 0.8 * bound,
        format!(
            "bound < variance at {below}/{nodes} nodes; probe at {:.0} m: MC mse {mc:.3} vs bound {bound:.3} (ratio {:.2})",
            dist(probe),
            mc / bound
        ),
    )
}

fn linearization() -> Outcome {
    let alpha = 3.5;
    let mut pass = true;
    let mut parts = Vec::new();
    for (sigma_d, quoted_rho) in [(13.16, 200.0), (75.0, 1140.0)] {
        let rho = rho_u_from(alpha, sigma_d);
        let ok_rho = (rho - quoted_rho).abs() <= 0.01 * quoted_rho;
        pass &= ok_rho;
        let mut worst: f64 = 0.0;
        for (i, mult) in [10.0, 15.0, 25.0].into_iter().enumerate() {
            let d = mult * sigma_d;
            let mut rng = replicate_rng(606, i as u64 + if sigma_d > 50.0 { 10 } else { 0 });
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| location_error_db(alpha, sigma_d, d, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
            worst = worst.max((sd / (rho / d) - 1.0).abs());
        }
        pass &= worst <= 0.10;
        parts.push(format!("sigma_d={sigma_d}: rho_u={rho:.1} mdB, worst relative std error {:.1}%", 100.0 * worst));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Dense solve by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            for k in 0..b[r].len() {
                b[r][k] -= f * b[c][k];
            }
        }
    }
    for c in (0..n).rev() {
        for k in 0..b[c].len() {
            let mut v = b[c][k];
            for j in c + 1..n {
                v -= a[c][j] * b[j][k];
            }
            b[c][k] = v / a[c][c];
        }
    }
    b
}

fn feature(p: Position, tx: Position) -> f64 {
    10.0 * p.distance_to(&tx).max(1.0).log10()
}

fn kernel(a: Position, b: Position, k: &KernelParams, tx: Position) -> f64 {
    k.sigma_k.powi(2) * (-a.distance_to(&b) / k.decay()).exp() + k.sigma_alpha.powi(2) * feature(a, tx) * feature(b, tx) + k.sigma_p.powi(2)
}

fn noise_var(p: Position, tx: Position, n: &NoiseModel) -> f64 {
    n.sigma_w.powi(2) + n.rho_u.powi(2) / p.distance_to(&tx).max(1.0).powi(2)
}

/// Prior moments and data-dependent corrections by direct conditioning.
struct Direct {
    m_g: Vec<f64>,
    k_g: Vec<Vec<f64>>,
    shift: Vec<f64>,
    reduction: Vec<Vec<f64>>,
}

fn direct_conditioning(x: &[Position], z: &[f64], g: &[Position], h: &HyperEstimate, k: &KernelParams, noise: &NoiseModel) -> Direct {
    let m = |p: Position| h.mu_p - h.mu_alpha * feature(p, h.tx);
    let n = x.len();
    let c: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel(x[i], x[j], k, h.tx) + if i == j { noise_var(x[i], h.tx, noise) } else { 0.0 }).collect())
        .collect();
    // right-hand sides: residual and one column per grid node
    let rhs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![z[i] - m(x[i])];
            row.extend(g.iter().map(|&q| kernel(x[i], q, k, h.tx)));
            row
        })
        .collect();
    let sol = gauss_solve(c, rhs.clone());
    let shift = (0..g.len()).map(|a| (0..n).map(|i| rhs[i][1 + a] * sol[i][0]).sum()).collect();
    let reduction = (0..g.len())
        .map(|a| (0..g.len()).map(|b| (0..n).map(|i| rhs[i][1 + a] * sol[i][1 + b]).sum()).collect())
        .collect();
    Direct {
        m_g: g.iter().map(|&p| m(p)).collect(),
        k_g: g.iter().map(|&a| g.iter().map(|&b| kernel(a, b, k, h.tx)).collect()).collect(),
        shift,
        reduction,
    }
}

fn two_point_means(s: &MeasurementSnapshot, tx: Position) -> HyperEstimate {
    let (a, b) = (&s.sensors[0], &s.sensors[1]);
    let (qa, qb) = (feature(a.position, tx), feature(b.position, tx));
    let mu_alpha = -(a.rss - b.rss) / (qa - qb);
    assert!(mu_alpha >= 2.0, "fixture must keep the exponent unconstrained");
    HyperEstimate { mu_p: a.rss + mu_alpha * qa, mu_alpha, var_p: 0.0, var_alpha: 0.0, tx }
}

fn oracles(pd: &mut PdLog) -> Outcome {
    // joint-Gaussian conditioning on small instances
    let mut worst_gp: f64 = 0.0;
    for k in 0..10u64 {
        let mut rng = replicate_rng(707, k);
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let pts = |rng: &mut rssfield::synth::SimRng, c: usize| -> Vec<Position> {
            (0..c).map(|_| Position::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect()
        };
        let x = pts(&mut rng, n);
        let grid = Grid::new(pts(&mut rng, m)).unwrap();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-90.0..-40.0)).collect();
        let h = HyperEstimate { mu_p: -12.0, mu_alpha: 3.2, var_p: 0.0, var_alpha: 0.0, tx: Position::new(40.0, 55.0) };
        let kp = KernelParams::from_decay(rng.random_range(1.0..4.0), rng.random_range(10.0..200.0), 0.2, 0.7);
        let noise = NoiseModel::new(rng.random_range(0.0..300.0), rng.random_range(0.5..3.0)).unwrap();
        let post = posterior(&x, &z, &grid, &h, &kp, &noise, 0).unwrap();
        pd.check("criterion 7 posterior", &post);
        let d = direct_conditioning(&x, &z, grid.nodes(), &h, &kp, &noise);
        for a in 0..m {
            worst_gp = worst_gp.max((post.mean[a] - (d.m_g[a] + d.shift[a])).abs());
            for b in 0..m {
                worst_gp = worst_gp.max((post.cov[(a, b)] - (d.k_g[a][b] - d.reduction[a][b])).abs());
            }
        }
    }

    // hand-unrolled recursion: 2 nodes, 2 sensors, known transmitter
    let tx = Position::new(50.0, 50.0);
    let grid = Grid::new(vec![Position::new(20.0, 30.0), Position::new(80.0, 65.0)]).unwrap();
    let kp = KernelParams::from_decay(2.0, 40.0, 0.3, 0.5);
    let noise = NoiseModel::new(200.0, 7f64.sqrt()).unwrap();
    let snaps: Vec<MeasurementSnapshot> = [
        [(10.0, 10.0, -71.0), (90.0, 40.0, -66.5)],
        [(30.0, 80.0, -62.0), (75.0, 20.0, -64.0)],
        [(5.0, 55.0, -67.5), (60.0, 100.0, -69.0)],
    ]
    .iter()
    .enumerate()
    .map(|(t, rows)| MeasurementSnapshot {
        t: t as u64,
        sensors: rows
            .iter()
            .enumerate()
            .map(|(i, &(x, y, z))| SensorReport { sensor_id: i as u64, position: Position::new(x, y), rss: z })
            .collect(),
    })
    .collect();
    let mut refine = RefineConfig::new(noise);
    refine.known_tx = Some(tx);
    let mut rc = RecursiveConfig::new(StaticConfig { refine, kernel: KernelSource::Fixed(kp) });
    rc.lambda = 0.5;
    let mut state = init_state(&snaps[0], &grid, &rc).unwrap();
    let lam = rc.lambda;
    let step = |s: &MeasurementSnapshot| {
        let h = two_point_means(s, tx);
        (h, direct_conditioning(&s.positions(), &s.rss(), grid.nodes(), &h, &kp, &noise))
    };
    let (_, d0) = step(&snaps[0]);
    let mut mu: Vec<f64> = (0..2).map(|a| d0.m_g[a] + d0.shift[a]).collect();
    let mut sigma: Vec<Vec<f64>> = (0..2).map(|a| (0..2).map(|b| d0.k_g[a][b] - d0.reduction[a][b]).collect()).collect();
    let mut prev = d0;
    let mut worst_rgp = max_abs_diff(mu.iter().copied(), state.posterior.mean.iter().copied());
    for s in &snaps[1..] {
        state = rgp_step(&state, s, &grid, &rc).unwrap();
        pd.check("criterion 7 rgp", &state.posterior);
        let (h, d) = step(s);
        let mu_prior: Vec<f64> = (0..2).map(|a| mu[a] - prev.m_g[a]).collect();
        let sigma_prior: Vec<Vec<f64>> = (0..2).map(|a| (0..2).map(|b| prev.k_g[a][b] - sigma[a][b]).collect()).collect();
        mu = (0..2).map(|a| d.m_g[a] + (1.0 - lam) * mu_prior[a] + lam * d.shift[a]).collect();
        sigma = (0..2)
            .map(|a| (0..2).map(|b| d.k_g[a][b] - ((1.0 - lam) * sigma_prior[a][b] + lam * d.reduction[a][b])).collect())
            .collect();
        worst_rgp = worst_rgp
            .max(max_abs_diff(mu.iter().copied(), state.posterior.mean.iter().copied()))
            .max((h.mu_alpha - state.posterior.hyper.mu_alpha).abs())
            .max((h.mu_p - state.posterior.hyper.mu_p).abs());
        for a in 0..2 {
            for b in 0..2 {
                worst_rgp = worst_rgp.max((sigma[a][b] - state.posterior.cov[(a, b)]).abs());
            }
        }
        prev = d;
    }

    // bordered kriging system: 4 points, 1 node
    let x = [Position::new(0.0, 0.0), Position::new(30.0, 5.0), Position::new(12.0, 40.0), Position::new(45.0, 38.0)];
    let z = [-60.0, -63.5, -58.25, -66.0];
    let node = Position::new(20.0, 20.0);
    let h = HyperEstimate { mu_p: -10.0, mu_alpha: 3.5, var_p: 0.0, var_alpha: 0.0, tx: Position::new(100.0, 100.0) };
    let vg = VariogramModel { nugget: 0.5, sill: 4.0, range: 25.0 };
    let okd = okd_with_variogram(&x, &z, &Grid::new(vec![node]).unwrap(), &h, &vg).unwrap();
    let gamma = |a: Position, b: Position| {
        let d = a.distance_to(&b);
        if d == 0.0 { 0.0 } else { vg.nugget + vg.sill * (1.0 - (-d / vg.range).exp()) }
    };
    let mut a = vec![vec![0.0; 5]; 5];
    let mut b = vec![vec![0.0]; 5];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = gamma(x[i], x[j]);
        }
        a[i][4] = 1.0;
        a[4][i] = 1.0;
        b[i][0] = gamma(x[i], node);
    }
    b[4][0] = 1.0;
    let w = gauss_solve(a, b);
    let trend = |p: Position| h.mu_p - h.mu_alpha * feature(p, h.tx);
    let krig = trend(node) + (0..4).map(|i| w[i][0] * (z[i] - trend(x[i]))).sum::<f64>();
    let worst_okd = (krig - okd.mean[0]).abs();

    Outcome::new(
        worst_gp <= 1e-8 && worst_rgp <= 1e-8 && worst_okd <= 1e-8,
        format!("posterior {worst_gp:.1e}, recursion {worst_rgp:.1e}, kriging {worst_okd:.1e}"),
    )
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rssfield")).args(args).arg("--out").arg(dir).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("small.toml");
    std::fs::write(
        &cfg_path,
        "replicates = 3\nsteps = 3\n[scenario]\ngrid_cols = 8\ngrid_rows = 8\nn_sensors = 60\ndynamics = \"moving\"\n[cases]\nsigma_v2_sweep_db2 = [4.0, 10.0]\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let runs = [("cases", "cases_summary.csv"), ("fit-recursive", "metrics.csv"), ("baseline-okd", "metrics.csv")];
    let mut compared = 0;
    for (cmd, extra) in runs {
        let a = tmp.path().join(format!("{cmd}_a"));
        let b = tmp.path().join(format!("{cmd}_b"));
        for dir in [&a, &b] {
            if let Err(e) = run_cli(&[cmd, "--config", cfg, "--seed", "77"], dir) {
                return Outcome::new(false, e);
            }
        }
        for file in ["metrics.csv", extra] {
            let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
            if x != y {
                return Outcome::new(false, format!("{cmd}: {file} differs between runs"));
            }
            compared += 1;
        }
    }
    Outcome::new(true, format!("{compared} metrics files byte-identical across two runs"))
}

#[test]
fn acceptance() {
    let mut pd = PdLog::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        say(&format!("[{}] criterion {id} {name}: {} ({:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, secs(start.elapsed())));
        results.push((id, name, o));
    };
    run(1, "noise-free recovery", &mut || noise_free_recovery(&mut pd));
    run(2, "case ordering", &mut case_ordering);
    run(3, "lambda=1 equivalence", &mut || lambda_one(&mut pd));
    run(4, "recursive improvement", &mut || recursive_improvement(&mut pd));
    run(5, "hcrb dominance", &mut || hcrb_dominance(&mut pd));
    run(6, "appendix linearization", &mut linearization);
    run(7, "oracle equivalence", &mut || oracles(&mut pd));
    run(8, "determinism", &mut determinism);
    let pd9 = Outcome::new(
        pd.checks > 0 && pd.failures.is_empty(),
        format!("{} grid covariances factorized, {} failed {:?}", pd.checks, pd.failures.len(), pd.failures),
    );
    run(9, "pd safety", &mut || Outcome::new(pd9.pass, pd9.detail.clone()));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    say(&format!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
