//! Run configuration: one TOML file with a section per stage.

use serde::{Deserialize, Serialize};

use crate::learning::{PretrainConfig, TrainConfig};
use crate::plant_sim::{BaselinePolicy, PlantSpec};
use crate::rc::{ParamLayout, ZoneTopology};
use crate::scenarios::WeatherParams;
use crate::scheduler::{ComfortSchedule, Tariff};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn field(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingConfig {
    pub floors: usize,
    pub zones_per_floor: usize,
    /// restrict α to same-floor and vertically stacked pairs
    pub adjacency_mask: bool,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        Self {
            floors: 3,
            zones_per_floor: 5,
            adjacency_mask: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffConfig {
    pub off_peak: f64,
    pub peak: f64,
    /// `[start, end)` hours at the peak price
    pub peak_hours: (f64, f64),
    pub demand_charge: f64,
}

impl Default for TariffConfig {
    fn default() -> Self {
        Self {
            off_peak: 0.3,
            peak: 0.6,
            peak_hours: (6.0, 19.0),
            demand_charge: 10.0,
        }
    }
}

impl TariffConfig {
    pub fn tariff(&self, steps: usize, dt: f64) -> Tariff {
        Tariff {
            energy_price: (0..steps)
                .map(|t| {
                    let h = (t as f64 * dt) % 24.0;
                    if h >= self.peak_hours.0 && h < self.peak_hours.1 {
                        self.peak
                    } else {
                        self.off_peak
                    }
                })
                .collect(),
            demand_charge: self.demand_charge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    /// pin the coldest, hottest and most variable days
    pub fixed_extremes: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 10,
            fixed_extremes: true,
        }
    }
}

/// Adjustments on top of [`PlantSpec::office`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub noise_std: f64,
    pub fan_rating: f64,
    pub ventilation_min: f64,
    pub duct_loss: f64,
    pub convection_exponent: f64,
    pub substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let base = PlantSpec::office(&ZoneTopology::uniform(1, 1));
        Self {
            noise_std: base.noise_std,
            fan_rating: base.fan_rating,
            ventilation_min: base.ventilation_min,
            duct_loss: base.duct_loss,
            convection_exponent: base.convection_exponent,
            substeps: base.substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dt: f64,
    pub building: BuildingConfig,
    pub weather: WeatherParams,
    pub cluster: ClusterConfig,
    pub tariff: TariffConfig,
    pub comfort: ComfortSchedule,
    pub plant: PlantConfig,
    pub baseline: BaselinePolicy,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dt: 1.0,
            building: BuildingConfig::default(),
            weather: WeatherParams::default(),
            cluster: ClusterConfig::default(),
            tariff: TariffConfig::default(),
            comfort: ComfortSchedule::default(),
            plant: PlantConfig::default(),
            baseline: BaselinePolicy::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Desk-scale reduction: `n` zones as floors of at most five.
    pub fn with_zones(mut self, n: usize) -> Self {
        let per_floor = n.clamp(1, 5);
        if n % per_floor == 0 {
            self.building.floors = n / per_floor;
            self.building.zones_per_floor = per_floor;
        } else {
            self.building.floors = 1;
            self.building.zones_per_floor = n;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && (24.0 / self.dt).fract() == 0.0) {
            return Err(field("dt", "must divide 24 h"));
        }
        if self.dt != 1.0 {
            return Err(field("dt", "the plant reports hourly; only 1.0 is supported"));
        }
        if self.building.floors == 0 {
            return Err(field("building.floors", "must be positive"));
        }
        if self.building.zones_per_floor == 0 {
            return Err(field("building.zones_per_floor", "must be positive"));
        }
        if self.cluster.k == 0 || self.cluster.k > 365 {
            return Err(field("cluster.k", "must lie in 1..=365"));
        }
        if self.cluster.fixed_extremes && self.cluster.k < 3 {
            return Err(field("cluster.k", "must be at least 3 with fixed extremes"));
        }
        let t = &self.tariff;
        if !(t.off_peak > 0.0 && t.peak > 0.0) {
            return Err(field("tariff.off_peak", "energy prices must be positive"));
        }
        if !(t.demand_charge >= 0.0) {
            return Err(field("tariff.demand_charge", "must be non-negative"));
        }
        let c = &self.comfort;
        if ![c.working, c.evening, c.night].iter().all(|&w| w >= 0.0 && w.is_finite()) {
            return Err(field("comfort", "weights must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.plant.duct_loss) {
            return Err(field("plant.duct_loss", "must lie in [0, 1)"));
        }
        if !(self.plant.noise_std >= 0.0) {
            return Err(field("plant.noise_std", "must be non-negative"));
        }
        if self.plant.substeps == 0 {
            return Err(field("plant.substeps", "must be positive"));
        }
        if !(self.weather.ar_phi.abs() < 1.0 && self.weather.ar_std >= 0.0) {
            return Err(field("weather.ar_phi", "needs |ϕ| < 1 and a non-negative std"));
        }
        if !(self.pretrain.lr >= 0.0) || self.pretrain.patience == 0 {
            return Err(field("pretrain", "lr must be non-negative and patience positive"));
        }
        let tr = &self.train;
        if !(tr.lr >= 0.0) {
            return Err(field("train.lr", "must be non-negative"));
        }
        if tr.patience > tr.max_epochs {
            return Err(field("train.patience", "must not exceed train.max_epochs"));
        }
        if !(tr.snr > 0.0) {
            return Err(field("train.snr", "must be positive"));
        }
        if !((0.0..1.0).contains(&tr.beta1) && (0.0..1.0).contains(&tr.beta2) && tr.eps > 0.0) {
            return Err(field("train.beta1", "Adam needs betas in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    pub fn topology(&self) -> ZoneTopology {
        ZoneTopology::uniform(self.building.floors, self.building.zones_per_floor)
    }

    pub fn layout(&self) -> ParamLayout {
        let topo = self.topology();
        if self.building.adjacency_mask {
            ParamLayout::masked(topo.num_zones, &topo.adjacency_mask()).expect("mask matches topology")
        } else {
            ParamLayout::dense(topo.num_zones)
        }
    }

    pub fn plant_spec(&self) -> PlantSpec {
        let mut spec = PlantSpec::office(&self.topology());
        spec.noise_std = self.plant.noise_std;
        spec.fan_rating = self.plant.fan_rating;
        spec.ventilation_min = self.plant.ventilation_min;
        spec.duct_loss = self.plant.duct_loss;
        spec.convection_exponent = self.plant.convection_exponent;
        spec.substeps = self.plant.substeps;
        spec
    }

    pub fn day_tariff(&self) -> Tariff {
        self.tariff.tariff((24.0 / self.dt) as usize, self.dt)
    }

    /// Independent seed for a named stage.
    pub fn stream(&self, stage: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stage.wrapping_mul(0xD1B5_4A32_D192_ED03)
    }
}
