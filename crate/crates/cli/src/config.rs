//! Experiment configuration. Every key is optional; defaults reproduce the
//! reference simulation (500 m square, 218 sensors, 34 × 32 grid, α = 3.5,
//! P = −10 dBm, σ_v² = 10, D_corr = 50 m, σ_w² = 7, σ_d = 13.16 m).
//!
//! ```toml
//! seed = 1
//! replicates = 100
//! steps = 10
//! out = "out"
//!
//! [scenario]
//! dynamics = "moving"      # static | moving | intermittent | power_schedule
//! step_std_m = 5.0
//!
//! [estimator]
//! kind = "rgp"             # sgp | rgp | okd
//! lambda = 0.5
//!
//! [cases]
//! sigma_v2_sweep_db2 = [4.0, 10.0, 16.0]
//! ```

use std::path::{Path, PathBuf};

use rssfield::empbayes::{RefineConfig, ShadowingPrior};
use rssfield::gp::FitOptions;
use rssfield::pipeline::{KernelSource, StaticConfig};
use rssfield::recursive::{RecursiveConfig, RefitCadence};
use rssfield::synth::{Area, Dynamics, Scenario};
use rssfield::{rho_u_from, Grid, NoiseModel, Position, PropagationParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    pub steps: usize,
    pub out: PathBuf,
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub cases: CasesConfig,
    /// Real measurements replace the synthetic scenario when present.
    pub real: Option<RealConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replicates: 100,
            steps: 10,
            out: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            estimator: EstimatorConfig::default(),
            cases: CasesConfig::default(),
            real: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    Static,
    Moving,
    Intermittent,
    PowerSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub n_sensors: usize,
    pub alpha: f64,
    pub power_dbm: f64,
    pub sigma_v2_db2: f64,
    pub d_corr_m: f64,
    pub sigma_w2_db2: f64,
    pub sigma_d_m: f64,
    /// Defaults to the centre of the area.
    pub tx_x_m: Option<f64>,
    pub tx_y_m: Option<f64>,
    pub dynamics: DynamicsKind,
    pub step_std_m: f64,
    pub drop_fraction: f64,
    /// `[t, power_dbm]` pairs, strictly increasing in `t`.
    pub power_schedule: Vec<(u64, f64)>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width_m: 500.0,
            height_m: 500.0,
            grid_cols: 34,
            grid_rows: 32,
            n_sensors: 218,
            alpha: 3.5,
            power_dbm: -10.0,
            sigma_v2_db2: 10.0,
            d_corr_m: 50.0,
            sigma_w2_db2: 7.0,
            sigma_d_m: 13.16,
            tx_x_m: None,
            tx_y_m: None,
            dynamics: DynamicsKind::Static,
            step_std_m: 5.0,
            drop_fraction: 0.2,
            power_schedule: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sgp,
    Rgp,
    Okd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    EveryStep,
    FreezeAfterInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub lambda: f64,
    pub refit: Cadence,
    /// Recursive runs keep the first step's μ_P, μ_α and transmitter fix.
    pub freeze_hyper: bool,
    /// Moment-fit σ_α², σ_P² from the known shadowing and freeze them in the kernel.
    pub variance_path: bool,
    /// Location-error scale in the noise model, m·dB. Defaults to `10α·σ_d/ln 10`.
    pub rho_u_mdb: Option<f64>,
    pub fit_starts: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Sgp,
            lambda: 0.5,
            refit: Cadence::FreezeAfterInit,
            freeze_hyper: false,
            variance_path: false,
            rho_u_mdb: None,
            fit_starts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CasesConfig {
    pub sigma_v2_sweep_db2: Vec<f64>,
}

impl Default for CasesConfig {
    fn default() -> Self {
        Self { sigma_v2_sweep_db2: vec![4.0, 10.0, 16.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealConfig {
    /// Measurement CSV; relative paths resolve against the config file.
    pub measurements: PathBuf,
    pub split_seed: u64,
    pub rho_u_mdb: f64,
    pub sigma_w2_db2: f64,
    /// Known transmitter position; localization is skipped when both are set.
    pub tx_x_m: Option<f64>,
    pub tx_y_m: Option<f64>,
}

impl Default for RealConfig {
    fn default() -> Self {
        Self {
            measurements: PathBuf::from("measurements.csv"),
            split_seed: 0,
            rho_u_mdb: 1140.0,
            sigma_w2_db2: 7.0,
            tx_x_m: None,
            tx_y_m: None,
        }
    }
}

impl RealConfig {
    pub fn known_tx(&self) -> Option<Position> {
        match (self.tx_x_m, self.tx_y_m) {
            (Some(x), Some(y)) => Some(Position::new(x, y)),
            _ => None,
        }
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        Ok(NoiseModel::new(self.rho_u_mdb, nonneg_sqrt(self.sigma_w2_db2, "real.sigma_w2_db2")?)?)
    }
}

fn nonneg_sqrt(v: f64, key: &str) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v.sqrt())
    } else {
        Err(CliError::Config(format!("{key} must be a finite value >= 0, got {v}")))
    }
}

impl ExperimentConfig {
    /// Reads a TOML file. Relative real-data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(real), Some(dir)) = (cfg.real.as_mut(), path.parent()) {
            if real.measurements.is_relative() {
                real.measurements = dir.join(&real.measurements);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(CliError::Config("steps must be >= 1".into()));
        }
        if self.replicates < 1 {
            return Err(CliError::Config("replicates must be >= 1".into()));
        }
        if !(self.estimator.lambda > 0.0 && self.estimator.lambda <= 1.0) {
            return Err(CliError::Config(format!("lambda must lie in (0, 1], got {}", self.estimator.lambda)));
        }
        if self.scenario.n_sensors < 2 {
            return Err(CliError::Config("scenario.n_sensors must be >= 2".into()));
        }
        if self.estimator.fit_starts < 1 {
            return Err(CliError::Config("fit_starts must be >= 1".into()));
        }
        if self.estimator.rho_u_mdb.is_some_and(|r| !(r >= 0.0)) {
            return Err(CliError::Config("rho_u_mdb must be >= 0".into()));
        }
        if self.cases.sigma_v2_sweep_db2.iter().any(|v| !(*v >= 0.0)) {
            return Err(CliError::Config("sigma_v2_sweep_db2 entries must be >= 0".into()));
        }
        if self.real.is_some() && self.estimator.variance_path {
            return Err(CliError::Config("variance_path needs known shadowing and is not available for real data".into()));
        }
        if let Some(real) = &self.real {
            real.noise()?;
            if real.tx_x_m.is_some() != real.tx_y_m.is_some() {
                return Err(CliError::Config("real.tx_x_m and real.tx_y_m must be given together".into()));
            }
        }
        if self.scenario.tx_x_m.is_some() != self.scenario.tx_y_m.is_some() {
            return Err(CliError::Config("scenario.tx_x_m and scenario.tx_y_m must be given together".into()));
        }
        self.scenario(self.seed).map(|_| ())
    }

    /// The synthetic scenario, with σ_v² taken from `[scenario]`.
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let s = &self.scenario;
        let area = Area { width: s.width_m, height: s.height_m };
        let grid = Grid::uniform(s.width_m, s.height_m, s.grid_cols, s.grid_rows)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let dynamics = match s.dynamics {
            DynamicsKind::Static => Dynamics::Static,
            DynamicsKind::Moving => Dynamics::Moving { step_std: s.step_std_m },
            DynamicsKind::Intermittent => Dynamics::Intermittent { drop_fraction: s.drop_fraction },
            DynamicsKind::PowerSchedule => Dynamics::PowerSchedule(s.power_schedule.clone()),
        };
        let scenario = Scenario {
            params: PropagationParams {
                alpha: s.alpha,
                power: s.power_dbm,
                sigma_v: nonneg_sqrt(s.sigma_v2_db2, "scenario.sigma_v2_db2")?,
                d_corr: s.d_corr_m,
                sigma_w: nonneg_sqrt(s.sigma_w2_db2, "scenario.sigma_w2_db2")?,
                sigma_d: s.sigma_d_m,
                tx_position: Position::new(s.tx_x_m.unwrap_or(0.5 * s.width_m), s.tx_y_m.unwrap_or(0.5 * s.height_m)),
            },
            grid,
            area,
            n_sensors: s.n_sensors,
            seed,
            dynamics,
        };
        scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(scenario)
    }

    /// Location-error scale used by the estimator on synthetic data.
    pub fn rho_u(&self) -> f64 {
        self.estimator.rho_u_mdb.unwrap_or_else(|| rho_u_from(self.scenario.alpha, self.scenario.sigma_d_m))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { starts: self.estimator.fit_starts, ..FitOptions::default() }
    }

    /// Static estimator settings for a given noise model. The variance path
    /// uses the scenario's shadowing parameters.
    pub fn static_config(&self, noise: NoiseModel, known_tx: Option<Position>) -> StaticConfig {
        let mut refine = RefineConfig::new(noise);
        refine.known_tx = known_tx;
        if self.estimator.variance_path {
            refine.shadowing = Some(ShadowingPrior {
                sigma_v: self.scenario.sigma_v2_db2.max(0.0).sqrt(),
                d_corr: self.scenario.d_corr_m,
            });
        }
        StaticConfig { refine, kernel: KernelSource::Fit(self.fit_options()) }
    }

    pub fn recursive_config(&self, noise: NoiseModel, known_tx: Option<Position>) -> RecursiveConfig {
        let mut rc = RecursiveConfig::new(self.static_config(noise, known_tx));
        rc.lambda = self.estimator.lambda;
        rc.cadence = match self.estimator.refit {
            Cadence::EveryStep => RefitCadence::EveryStep,
            Cadence::FreezeAfterInit => RefitCadence::FreezeAfterInit,
        };
        rc.freeze_hyper = self.estimator.freeze_hyper;
        rc
    }
}
