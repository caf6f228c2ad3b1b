//! Synthetic ground truth and crowdsourced reports.
//!
//! Shadowing is one zero-mean Gaussian field with covariance
//! `σ_v²·exp(−d/D_corr)` shared by sensors and grid nodes. It is sampled grid
//! first and then conditionally at sensor locations, which is the same joint
//! law but lets the grid factorization be reused across replicates and keeps
//! the field static while sensors move.
//!
//! Reports carry the true-distance RSS `P − 10α·log10(d) + v + w` together
//! with a position perturbed by isotropic Gaussian noise of per-axis std `σ_d`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{distance_matrix, SpdFactor};
use crate::model::{Grid, MeasurementSnapshot, Position, PropagationParams, SensorReport};
use crate::{Error, Result};

/// Seedable generator used by every stochastic routine.
pub type SimRng = ChaCha8Rng;

/// Relative diagonal jitter added to the shadowing correlation matrix.
pub const SHADOWING_JITTER: f64 = 1e-8;

/// Generator for replicate `replicate` of an experiment seeded with `seed`.
/// Streams are independent for distinct replicate indices.
pub fn replicate_rng(seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn center(&self) -> Position {
        Position::new(0.5 * self.width, 0.5 * self.height)
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Static,
    /// At every step `t ≥ 1` a fresh uniformly random subset of
    /// `⌈(1 − drop_fraction)·N⌉` sensors reports; the rest are silent.
    Intermittent { drop_fraction: f64 },
    /// True positions follow a Gaussian random walk with per-axis std `step_std`.
    Moving { step_std: f64 },
    /// `(t, P)` pairs; the power at `t` is the last entry with time `≤ t`.
    PowerSchedule(Vec<(u64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: PropagationParams,
    pub grid: Grid,
    pub area: Area,
    pub n_sensors: usize,
    pub seed: u64,
    pub dynamics: Dynamics,
}

impl Scenario {
    /// The 500 m × 500 m setting with a centred transmitter, 1088 grid nodes
    /// (34 × 32), 218 sensors, α = 3.5, P = −10 dBm, σ_w² = 7, σ_v² = 10,
    /// D_corr = 50 m and σ_d = 13.16 m.
    pub fn reference(seed: u64) -> Self {
        let area = Area { width: 500.0, height: 500.0 };
        Self {
            params: PropagationParams {
                alpha: 3.5,
                power: -10.0,
                sigma_v: 10f64.sqrt(),
                d_corr: 50.0,
                sigma_w: 7f64.sqrt(),
                sigma_d: 13.16,
                tx_position: area.center(),
            },
            grid: Grid::uniform(area.width, area.height, 34, 32).expect("static grid is valid"),
            area,
            n_sensors: 218,
            seed,
            dynamics: Dynamics::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return Err(Error::InvalidInput("area must have positive extent".into()));
        }
        match &self.dynamics {
            Dynamics::Static => {}
            Dynamics::Intermittent { drop_fraction } => {
                if !(0.0..1.0).contains(drop_fraction) {
                    return Err(Error::InvalidInput("drop_fraction must lie in [0, 1)".into()));
                }
            }
            Dynamics::Moving { step_std } => {
                if !(*step_std >= 0.0) {
                    return Err(Error::InvalidInput("step_std must be >= 0".into()));
                }
            }
            Dynamics::PowerSchedule(s) => {
                if s.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::InvalidInput(
                        "power schedule times must be strictly increasing".into(),
                    ));
                }
                if s.iter().any(|(_, p)| !p.is_finite()) {
                    return Err(Error::InvalidInput("power schedule values must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Transmit power in effect at step `t`.
    pub fn power_at(&self, t: u64) -> f64 {
        match &self.dynamics {
            Dynamics::PowerSchedule(s) => {
                s.iter().take_while(|(ts, _)| *ts <= t).last().map_or(self.params.power, |(_, p)| *p)
            }
            _ => self.params.power,
        }
    }

    /// Noise-free field at the grid nodes for step `t`.
    pub fn mean_field(&self, t: u64) -> Vec<f64> {
        let p = self.power_at(t);
        self.grid.nodes().iter().map(|&x| self.params.mean_rss(x, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// True RSS at every grid node, shadowing included.
    pub grid_field: Vec<f64>,
    /// True positions of the reporting sensors, in snapshot order.
    pub sensor_true_positions: Vec<Position>,
    /// Shadowing at the reporting sensors, in snapshot order.
    pub sensor_shadowing: Vec<f64>,
}

/// Shadowing covariance `σ_v²·exp(−d_ij/D_corr)` over `positions`.
pub fn shadowing_covariance(positions: &[Position], sigma_v: f64, d_corr: f64) -> DMatrix<f64> {
    let var = sigma_v * sigma_v;
    let mut k = distance_matrix(positions, positions);
    k.apply(|d| *d = var * (-*d / d_corr).exp());
    k
}

fn correlation(a: &[Position], b: &[Position], d_corr: f64) -> DMatrix<f64> {
    let mut k = distance_matrix(a, b);
    k.apply(|d| *d = (-*d / d_corr).exp());
    k
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Unit-variance shadowing sampler with the grid correlation factored once.
#[derive(Debug, Clone)]
pub struct ShadowingSampler {
    grid: Vec<Position>,
    d_corr: f64,
    grid_factor: SpdFactor,
}

/// A realization of the unit-variance field at the grid nodes. `white` is the
/// whitened draw `L⁻¹ v_g`, kept for conditioning.
#[derive(Debug, Clone)]
pub struct GridDraw {
    pub values: DVector<f64>,
    white: DVector<f64>,
}

impl ShadowingSampler {
    pub fn new(grid: &Grid, d_corr: f64) -> Result<Self> {
        if !(d_corr > 0.0) {
            return Err(Error::InvalidInput("d_corr must be > 0".into()));
        }
        let nodes = grid.nodes().to_vec();
        let mut k = correlation(&nodes, &nodes, d_corr);
        for i in 0..nodes.len() {
            k[(i, i)] += SHADOWING_JITTER;
        }
        Ok(Self { grid: nodes, d_corr, grid_factor: SpdFactor::new(k)? })
    }

    pub fn d_corr(&self) -> f64 {
        self.d_corr
    }

    pub fn sample_grid<R: Rng + ?Sized>(&self, rng: &mut R) -> GridDraw {
        let white = standard_normal_vec(rng, self.grid.len());
        GridDraw { values: self.grid_factor.mul_lower(&white), white }
    }

    /// Draws the unit-variance field at `points` conditionally on the grid draw.
    pub fn sample_at<R: Rng + ?Sized>(
        &self,
        grid: &GridDraw,
        points: &[Position],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let k_gx = correlation(&self.grid, points, self.d_corr);
        let a = self.grid_factor.solve_lower(&k_gx);
        let mean = a.transpose() * &grid.white;
        let mut cov = correlation(points, points, self.d_corr) - a.transpose() * &a;
        for i in 0..points.len() {
            cov[(i, i)] += SHADOWING_JITTER;
        }
        crate::linalg::symmetrize(&mut cov);
        let factor = conditional_factor(cov)?;
        let z = standard_normal_vec(rng, points.len());
        Ok((mean + factor.mul_lower(&z)).iter().copied().collect())
    }
}

fn conditional_factor(cov: DMatrix<f64>) -> Result<SpdFactor> {
    // points sitting on grid nodes have (numerically) zero conditional variance
    let n = cov.nrows();
    let mut floored = cov;
    for i in 0..n {
        if floored[(i, i)] < SHADOWING_JITTER {
            floored[(i, i)] = SHADOWING_JITTER;
        }
    }
    SpdFactor::new(floored)
}

fn uniform_positions<R: Rng + ?Sized>(area: &Area, n: usize, rng: &mut R) -> Vec<Position> {
    (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * area.width;
            let y = rng.random::<f64>() * area.height;
            Position::new(x, y)
        })
        .collect()
}

/// Reported position: isotropic Gaussian perturbation with per-axis std `sigma_d`.
fn perturb<R: Rng + ?Sized>(p: Position, sigma_d: f64, rng: &mut R) -> Position {
    if sigma_d == 0.0 {
        return p;
    }
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    Position::new(p.x + sigma_d * dx, p.y + sigma_d * dy)
}

/// Which sensors report at a step, and with what transmit power.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEffect {
    /// Indices into the sensor population, ascending.
    pub active: Vec<usize>,
    pub power: f64,
}

/// Mutable population state carried between steps.
#[derive(Debug, Clone)]
pub struct Population {
    pub true_positions: Vec<Position>,
    /// Unit-variance shadowing at each sensor's current true position.
    pub shadowing: Vec<f64>,
}

/// Applies the scenario dynamics for step `t ≥ 1`: moves sensors (resampling
/// their shadowing from the static field), picks the reporting subset and the
/// power in effect.
pub fn advance_dynamics<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: u64,
    population: &mut Population,
    field: Option<(&ShadowingSampler, &GridDraw)>,
    rng: &mut R,
) -> Result<StepEffect> {
    if t == 0 {
        return Err(Error::InvalidInput("dynamics apply from t = 1 onwards".into()));
    }
    let n = population.true_positions.len();
    let mut active: Vec<usize> = (0..n).collect();
    match &scenario.dynamics {
        Dynamics::Static | Dynamics::PowerSchedule(_) => {}
        Dynamics::Intermittent { drop_fraction } => {
            let keep = (((1.0 - drop_fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize;
            let mut out = index::sample(rng, n, n - keep.min(n)).into_vec();
            out.sort_unstable();
            active.retain(|i| out.binary_search(i).is_err());
        }
        Dynamics::Moving { step_std } => {
            if *step_std > 0.0 {
                for p in population.true_positions.iter_mut() {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    *p = scenario.area.clamp(Position::new(p.x + step_std * dx, p.y + step_std * dy));
                }
                if let Some((sampler, draw)) = field {
                    population.shadowing = sampler.sample_at(draw, &population.true_positions, rng)?;
                }
            }
        }
    }
    Ok(StepEffect { active, power: scenario.power_at(t) })
}

/// A synthetic world evolving over time: a static shadowing field, a sensor
/// population and the scenario dynamics.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    scenario: Scenario,
    sampler: Arc<ShadowingSampler>,
    grid_draw: GridDraw,
    population: Population,
    t: u64,
}

impl SyntheticWorld {
    /// Builds a world, factoring the grid shadowing correlation.
    pub fn new<R: Rng + ?Sized>(scenario: Scenario, rng: &mut R) -> Result<Self> {
        let sampler = Arc::new(ShadowingSampler::new(&scenario.grid, scenario.params.d_corr)?);
        Self::with_sampler(scenario, sampler, rng)
    }

    /// Builds a world reusing a sampler for the same grid and `d_corr`.
    pub fn with_sampler<R: Rng + ?Sized>(
        scenario: Scenario,
        sampler: Arc<ShadowingSampler>,
        rng: &mut R,
    ) -> Result<Self> {
        let positions = uniform_positions(&scenario.area, scenario.n_sensors, rng);
        Self::with_positions(scenario, sampler, positions, rng)
    }

    /// Builds a world with the sensors at `positions` and a fresh field draw.
    pub fn with_positions<R: Rng + ?Sized>(
        scenario: Scenario,
        sampler: Arc<ShadowingSampler>,
        positions: Vec<Position>,
        rng: &mut R,
    ) -> Result<Self> {
        scenario.validate()?;
        if sampler.grid != scenario.grid.nodes() || sampler.d_corr != scenario.params.d_corr {
            return Err(Error::InvalidInput("sampler does not match the scenario grid".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("sensor positions must be finite".into()));
        }
        let grid_draw = sampler.sample_grid(rng);
        let shadowing = sampler.sample_at(&grid_draw, &positions, rng)?;
        Ok(Self {
            scenario,
            sampler,
            grid_draw,
            population: Population { true_positions: positions, shadowing },
            t: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    /// Reports and truth at the current step with every sensor active.
    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(MeasurementSnapshot, GroundTruth)> {
        let all: Vec<usize> = (0..self.population.true_positions.len()).collect();
        self.observe_subset(&all, self.scenario.power_at(self.t), rng)
    }

    /// Advances to the next step and observes it.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(MeasurementSnapshot, GroundTruth)> {
        self.t += 1;
        let effect = advance_dynamics(
            &self.scenario,
            self.t,
            &mut self.population,
            Some((&self.sampler, &self.grid_draw)),
            rng,
        )?;
        self.observe_subset(&effect.active, effect.power, rng)
    }

    fn observe_subset<R: Rng + ?Sized>(
        &self,
        active: &[usize],
        power: f64,
        rng: &mut R,
    ) -> Result<(MeasurementSnapshot, GroundTruth)> {
        let p = &self.scenario.params;
        let mut sensors = Vec::with_capacity(active.len());
        let mut true_pos = Vec::with_capacity(active.len());
        let mut shadow = Vec::with_capacity(active.len());
        for &i in active {
            let x = self.population.true_positions[i];
            let v = p.sigma_v * self.population.shadowing[i];
            let w: f64 = if p.sigma_w > 0.0 { p.sigma_w * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            let reported = perturb(x, p.sigma_d, rng);
            sensors.push(SensorReport {
                sensor_id: i as u64,
                position: reported,
                rss: p.mean_rss(x, power) + v + w,
            });
            true_pos.push(x);
            shadow.push(v);
        }
        let grid_field = self
            .scenario
            .grid
            .nodes()
            .iter()
            .zip(self.grid_draw.values.iter())
            .map(|(&x, &v)| p.mean_rss(x, power) + p.sigma_v * v)
            .collect();
        let snapshot = MeasurementSnapshot { t: self.t, sensors };
        Ok((snapshot, GroundTruth { grid_field, sensor_true_positions: true_pos, sensor_shadowing: shadow }))
    }
}

/// One-shot draw: places the sensors, samples the joint shadowing field and
/// returns the reports and truth for step `t` (power taken from the schedule).
pub fn sample_snapshot<R: Rng + ?Sized>(
    scenario: &Scenario,
    t: u64,
    rng: &mut R,
) -> Result<(MeasurementSnapshot, GroundTruth)> {
    let mut world = SyntheticWorld::new(scenario.clone(), rng)?;
    world.t = t;
    world.observe(rng)
}

/// Reported-distance error in dB scaled by α: `10α·(log10 d̂ − log10 d)` for
/// one sensor at distance `d` from `tx`, drawn with the report mechanism used
/// by [`SyntheticWorld`].
pub fn location_error_db<R: Rng + ?Sized>(
    alpha: f64,
    sigma_d: f64,
    d: f64,
    rng: &mut R,
) -> f64 {
    let tx = Position::new(0.0, 0.0);
    let x = Position::new(d, 0.0);
    let reported = perturb(x, sigma_d, rng);
    let d_hat = reported.distance_to(&tx).max(crate::model::D_MIN);
    10.0 * alpha * (d_hat.log10() - d.log10())
}

/// Convenience for tests and small tools: `n` sensors uniform in `area`.
pub fn place_sensors<R: Rng + ?Sized>(area: &Area, n: usize, rng: &mut R) -> Vec<Position> {
    uniform_positions(area, n, rng)
}

/// Joint sensor-plus-grid shadowing covariance (scaled, jittered), used to
/// check positive definiteness of the combined field.
pub fn joint_shadowing_covariance(
    sensors: &[Position],
    grid: &Grid,
    sigma_v: f64,
    d_corr: f64,
) -> DMatrix<f64> {
    let all: Vec<Position> = sensors.iter().chain(grid.nodes()).copied().collect();
    let mut k = shadowing_covariance(&all, sigma_v, d_corr);
    let jitter = SHADOWING_JITTER * sigma_v * sigma_v;
    for i in 0..all.len() {
        k[(i, i)] += jitter;
    }
    k
}
