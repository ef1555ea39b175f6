//! Ground-truth building: two-node zones, nonlinear envelope convection,
//! PI setpoint tracking at sub-hourly resolution, ambient-dependent COP,
//! duct losses and a cubic-law AHU fan per floor.
//!
//! The plant only exposes observations: hourly zone air temperatures and
//! hourly mean electrical powers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rc::{ThetaParams, ZoneTopology};
use crate::scenarios::is_weekday;
use crate::scheduler::{Capacities, Tariff};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid plant spec: {0}")]
    Invalid(String),
}

/// Linear in ambient, clamped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopCurve {
    pub intercept: f64,
    pub slope: f64,
    pub min: f64,
    pub max: f64,
}

impl CopCurve {
    pub fn at(&self, ambient: f64) -> f64 {
        (self.intercept + self.slope * ambient).clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonePlant {
    /// kWh/K
    pub c_air: f64,
    /// kWh/K
    pub c_mass: f64,
    /// air-mass conductance, kW/K
    pub h_air_mass: f64,
    /// envelope conductance at the reference difference, kW/K
    pub ua: f64,
    /// occupied-hours internal gain, kW
    pub occupancy_gain: f64,
    /// solar gain at solar noon, kW
    pub solar_peak: f64,
    /// thermal kW
    pub rating_h: f64,
    pub rating_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub topology: ZoneTopology,
    pub zones: Vec<ZonePlant>,
    /// kW/K between adjacent zones
    pub interzone_ua: f64,
    /// envelope flux is `ua·Δ·(|Δ|/ref)^(n−1)`
    pub convection_exponent: f64,
    pub convection_reference: f64,
    /// AHU coil ratings per floor, thermal kW
    pub floor_rating_h: Vec<f64>,
    pub floor_rating_c: Vec<f64>,
    /// AHU fan electrical power at full flow, kW per floor
    pub fan_rating: f64,
    /// minimum flow fraction while occupied
    pub ventilation_min: f64,
    pub cop_heat: CopCurve,
    pub cop_cool: CopCurve,
    pub duct_loss: f64,
    /// occupied hours `[start, end)` on weekdays
    pub occupancy_hours: (f64, f64),
    /// std of the per-substep internal-gain noise, kW
    pub noise_std: f64,
    /// kW/K
    pub kp: f64,
    /// kW/(K·h)
    pub ki: f64,
    pub substeps: usize,
}

impl PlantSpec {
    /// Office-like building: perimeter zones with solar exposure, a core
    /// zone per floor, a roof on the top floor.
    pub fn office(topology: &ZoneTopology) -> Self {
        let top = topology.num_floors().saturating_sub(1);
        let mut zones = vec![];
        for (f, members) in topology.floors.iter().enumerate() {
            let n = members.len();
            for k in 0..n {
                let core = n > 1 && k == n - 1;
                let orientation = [0.9, 1.3, 1.0, 0.5][k % 4];
                zones.push(ZonePlant {
                    c_air: if core { 1.2 } else { 0.8 },
                    c_mass: if core { 8.0 } else { 6.0 },
                    h_air_mass: 1.2,
                    ua: if core { 0.08 } else { 0.22 } + if f == top { 0.08 } else { 0.0 },
                    occupancy_gain: 0.6,
                    solar_peak: if core { 0.0 } else { 0.7 * orientation },
                    rating_h: 7.0,
                    rating_c: 7.0,
                });
            }
        }
        let floors = topology.num_floors();
        Self {
            topology: topology.clone(),
            zones,
            interzone_ua: 0.25,
            convection_exponent: 1.25,
            convection_reference: 10.0,
            floor_rating_h: vec![26.0; floors],
            floor_rating_c: vec![26.0; floors],
            fan_rating: 3.0,
            ventilation_min: 0.3,
            cop_heat: CopCurve {
                intercept: 2.6,
                slope: 0.06,
                min: 1.2,
                max: 5.0,
            },
            cop_cool: CopCurve {
                intercept: 6.5,
                slope: -0.1,
                min: 1.5,
                max: 8.0,
            },
            duct_loss: 0.12,
            occupancy_hours: (8.0, 18.0),
            noise_std: 0.05,
            kp: 4.0,
            ki: 8.0,
            substeps: 12,
        }
    }

    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Invalid(m.into()));
        self.topology
            .validate()
            .map_err(|e| PlantError::Invalid(e.to_string()))?;
        if self.zones.len() != self.topology.num_zones {
            return bad("one zone entry per topology zone");
        }
        let floors = self.topology.num_floors();
        if self.floor_rating_h.len() != floors || self.floor_rating_c.len() != floors {
            return bad("one AHU rating per floor");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        for z in &self.zones {
            if ![z.c_air, z.c_mass, z.rating_h, z.rating_c].into_iter().all(positive) {
                return bad("capacitances and ratings must be positive");
            }
            if ![z.h_air_mass, z.ua, z.occupancy_gain, z.solar_peak]
                .into_iter()
                .all(|v| v.is_finite() && v >= 0.0)
            {
                return bad("conductances and gains must be non-negative");
            }
        }
        if !self
            .floor_rating_h
            .iter()
            .chain(&self.floor_rating_c)
            .all(|&v| positive(v))
        {
            return bad("AHU ratings must be positive");
        }
        if !(0.0..1.0).contains(&self.duct_loss) {
            return bad("duct_loss must lie in [0, 1)");
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        for cop in [self.cop_heat, self.cop_cool] {
            if !(cop.min > 0.0 && cop.max >= cop.min) {
                return bad("COP bounds must be positive");
            }
        }
        if !(positive(self.convection_exponent) && positive(self.convection_reference)) {
            return bad("convection exponent and reference must be positive");
        }
        if !(self.fan_rating >= 0.0 && (0.0..=1.0).contains(&self.ventilation_min)) {
            return bad("fan rating must be non-negative and ventilation_min in [0, 1]");
        }
        if self.substeps == 0 || !(self.kp >= 0.0 && self.ki >= 0.0) {
            return bad("controller needs substeps > 0 and non-negative gains");
        }
        Ok(())
    }

    /// Electrical capacities for the scheduler, from the thermal nameplates
    /// at design conditions (heating at 0 °C, cooling at 35 °C).
    pub fn capacities(&self) -> Capacities {
        let heat = self.cop_heat.at(0.0) * (1.0 - self.duct_loss);
        let cool = self.cop_cool.at(35.0) * (1.0 - self.duct_loss);
        let floor_h: Vec<f64> = self.floor_rating_h.iter().map(|r| r / heat).collect();
        let floor_c: Vec<f64> = self.floor_rating_c.iter().map(|r| r / cool).collect();
        let line = floor_h
            .iter()
            .zip(&floor_c)
            .map(|(h, c)| h.max(*c))
            .sum::<f64>()
            + self.fan_rating * self.topology.num_floors() as f64;
        Capacities {
            zone_h: self.zones.iter().map(|z| z.rating_h / heat).collect(),
            zone_c: self.zones.iter().map(|z| z.rating_c / cool).collect(),
            floor_h,
            floor_c,
            line,
        }
    }

    fn occupied(&self, hour: f64, weekday: bool) -> bool {
        let h = hour.rem_euclid(24.0);
        weekday && h >= self.occupancy_hours.0 && h < self.occupancy_hours.1
    }

    fn envelope_flux(&self, ua: f64, delta: f64) -> f64 {
        let n = self.convection_exponent;
        ua * delta * (delta.abs() / self.convection_reference).powf(n - 1.0)
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let z = self.num_zones();
        let mask = self.topology.adjacency_mask();
        (0..z)
            .map(|i| (0..z).filter(|&j| j != i && mask[i * z + j]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub air: Vec<f64>,
    pub mass: Vec<f64>,
    pub integral_h: Vec<f64>,
    pub integral_c: Vec<f64>,
}

impl PlantState {
    /// Air and mass at the same temperature, controller at rest.
    pub fn settled(tau: &[f64]) -> Self {
        Self {
            air: tau.to_vec(),
            mass: tau.to_vec(),
            integral_h: vec![0.0; tau.len()],
            integral_c: vec![0.0; tau.len()],
        }
    }
}

/// Cumulative energy bookkeeping over a simulated horizon, kWh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub delivered_heat: f64,
    pub delivered_cool: f64,
    /// heat lost through the envelope (negative when gaining)
    pub envelope_loss: f64,
    pub internal_gains: f64,
    /// change in air + mass stored heat
    pub storage_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    /// T+1 × Z
    pub tau_obs: Vec<Vec<f64>>,
    /// T × Z hourly mean electrical powers
    pub p_h_obs: Vec<Vec<f64>>,
    pub p_c_obs: Vec<Vec<f64>>,
    pub p_hvac_obs: Vec<Vec<f64>>,
    pub p_import_obs: Vec<f64>,
    pub final_state: PlantState,
    pub balance: EnergyBalance,
    /// per hour, per substep, per zone delivered thermal power (heat − cool)
    #[serde(skip)]
    pub substep_heat: Option<Vec<Vec<Vec<f64>>>>,
}

impl SimulationTrace {
    pub fn steps(&self) -> usize {
        self.p_import_obs.len()
    }

    pub fn expost_cost(&self, tariff: &Tariff, dt: f64) -> f64 {
        let peak = self.p_import_obs.iter().copied().fold(0.0, f64::max);
        let energy: f64 = self
            .p_import_obs
            .iter()
            .zip(&tariff.energy_price)
            .map(|(p, l)| p * l * dt)
            .sum();
        peak * tariff.demand_charge + energy
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,zone,tau_obs,p_hvac_obs\n");
        for (t, row) in self.p_hvac_obs.iter().enumerate() {
            for (z, p) in row.iter().enumerate() {
                s.push_str(&format!("{t},{z},{},{p}\n", self.tau_obs[t][z]));
            }
        }
        s
    }

    pub fn summary(&self, tariff: &Tariff, dt: f64) -> serde_json::Value {
        serde_json::json!({
            "steps": self.steps(),
            "energy_kwh": self.p_import_obs.iter().sum::<f64>() * dt,
            "peak_kw": self.p_import_obs.iter().copied().fold(0.0, f64::max),
            "expost_cost": self.expost_cost(tariff, dt),
        })
    }
}

/// Setpoint pair per hour boundary: the controller heats below `heat` and
/// cools above `cool`. Between boundaries the pair is interpolated linearly
/// when `ramp` is set and held at the end value otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointPath {
    pub heat: Vec<Vec<f64>>,
    pub cool: Vec<Vec<f64>>,
    pub ramp: bool,
}

impl SetpointPath {
    /// Exact tracking of a temperature profile.
    pub fn tracking(setpoints: &[Vec<f64>]) -> Self {
        Self {
            heat: setpoints.to_vec(),
            cool: setpoints.to_vec(),
            ramp: true,
        }
    }

    fn at(&self, t: usize, frac: f64, z: usize) -> (f64, f64) {
        let w = if self.ramp { frac } else { 1.0 };
        let lerp = |m: &[Vec<f64>]| m[t][z] + w * (m[t + 1][z] - m[t][z]);
        (lerp(&self.heat), lerp(&self.cool))
    }
}

/// Conventional occupancy-based thermostat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinePolicy {
    pub occupied: f64,
    pub setback_heat: f64,
    pub setback_cool: f64,
    /// `[start, end)` hours with the occupied setpoint on weekdays
    pub hours: (f64, f64),
}

impl Default for BaselinePolicy {
    fn default() -> Self {
        Self {
            occupied: 21.0,
            setback_heat: 17.0,
            setback_cool: 26.0,
            hours: (7.0, 19.0),
        }
    }
}

impl BaselinePolicy {
    /// Setpoints at the T+1 hour boundaries of a day; boundary t+1 carries
    /// the value in force during hour t.
    pub fn day(&self, steps: usize, zones: usize, weekday: bool) -> SetpointPath {
        let pair = |t: usize| {
            let h = (t as f64).rem_euclid(24.0);
            if weekday && h >= self.hours.0 && h < self.hours.1 {
                (self.occupied, self.occupied)
            } else {
                (self.setback_heat, self.setback_cool)
            }
        };
        let mut heat = Vec::with_capacity(steps + 1);
        let mut cool = Vec::with_capacity(steps + 1);
        for b in 0..=steps {
            let (h, c) = pair(if b == 0 { 0 } else { b - 1 });
            heat.push(vec![h; zones]);
            cool.push(vec![c; zones]);
        }
        SetpointPath {
            heat,
            cool,
            ramp: false,
        }
    }
}

/// Runs the plant for `ambient.len()` hours from `state`.
pub fn simulate(
    spec: &PlantSpec,
    state: &PlantState,
    path: &SetpointPath,
    ambient: &[f64],
    start_day: usize,
    seed: u64,
    record_substeps: bool,
) -> Result<SimulationTrace, PlantError> {
    let steps = ambient.len();
    let nz = spec.num_zones();
    for (name, m) in [("heat setpoints", &path.heat), ("cool setpoints", &path.cool)] {
        if m.len() != steps + 1 || m.iter().any(|r| r.len() != nz) {
            return Err(PlantError::Shape(format!("{name} must be {}×{nz}", steps + 1)));
        }
    }
    for v in [&state.air, &state.mass, &state.integral_h, &state.integral_c] {
        if v.len() != nz {
            return Err(PlantError::Shape(format!("state vectors must have {nz} entries")));
        }
    }
    if ambient.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::Shape("ambient must be finite".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("finite std"));
    let neighbours = spec.neighbours();
    let floors = spec.topology.num_floors();
    let sub = spec.substeps;
    let h = 1.0 / sub as f64;

    let mut s = state.clone();
    let stored = |s: &PlantState| -> f64 {
        spec.zones
            .iter()
            .enumerate()
            .map(|(i, z)| z.c_air * s.air[i] + z.c_mass * s.mass[i])
            .sum()
    };
    let stored0 = stored(&s);
    let mut balance = EnergyBalance::default();

    let mut trace = SimulationTrace {
        tau_obs: vec![s.air.clone()],
        p_h_obs: Vec::with_capacity(steps),
        p_c_obs: Vec::with_capacity(steps),
        p_hvac_obs: Vec::with_capacity(steps),
        p_import_obs: Vec::with_capacity(steps),
        final_state: s.clone(),
        balance: EnergyBalance::default(),
        substep_heat: record_substeps.then(Vec::new),
    };

    let mut q_h = vec![0.0; nz];
    let mut q_c = vec![0.0; nz];
    for t in 0..steps {
        let amb = ambient[t];
        let day = start_day + t / 24;
        let weekday = is_weekday(day % 365);
        let cop_h = spec.cop_heat.at(amb);
        let cop_c = spec.cop_cool.at(amb);
        let mut e_h = vec![0.0; nz];
        let mut e_c = vec![0.0; nz];
        let mut hour_heat = Vec::with_capacity(if record_substeps { sub } else { 0 });

        for k in 0..sub {
            let hour = t as f64 + (k as f64 + 0.5) * h;
            let occupied = spec.occupied(hour, weekday);

            // PI loops, integrators frozen at the upper limit
            for i in 0..nz {
                let (sp_h, sp_c) = path.at(t, (k + 1) as f64 / sub as f64, i);
                let err_h = sp_h - s.air[i];
                let err_c = s.air[i] - sp_c;
                let z = &spec.zones[i];
                let raw_h = spec.kp * err_h + s.integral_h[i];
                let raw_c = spec.kp * err_c + s.integral_c[i];
                let (a, b) = (raw_h.clamp(0.0, z.rating_h), raw_c.clamp(0.0, z.rating_c));
                // one coil at a time
                q_h[i] = a - a.min(b);
                q_c[i] = b - a.min(b);
                if !(raw_h >= z.rating_h && err_h > 0.0) {
                    s.integral_h[i] = (s.integral_h[i] + spec.ki * err_h * h).clamp(0.0, z.rating_h);
                }
                if !(raw_c >= z.rating_c && err_c > 0.0) {
                    s.integral_c[i] = (s.integral_c[i] + spec.ki * err_c * h).clamp(0.0, z.rating_c);
                }
            }
            // shared AHU coil: scale the whole floor down proportionally
            for f in 0..floors {
                let members = &spec.topology.floors[f];
                for (q, rating) in [(&mut q_h, spec.floor_rating_h[f]), (&mut q_c, spec.floor_rating_c[f])] {
                    let total: f64 = members.iter().map(|&i| q[i]).sum();
                    if total > rating {
                        let scale = rating / total;
                        for &i in members {
                            q[i] *= scale;
                        }
                    }
                }
            }

            // electricity: coil through COP and duct losses, fan by floor
            for f in 0..floors {
                let members = &spec.topology.floors[f];
                let load: f64 = members.iter().map(|&i| q_h[i] + q_c[i]).sum();
                let rating = spec.floor_rating_h[f].max(spec.floor_rating_c[f]);
                let vent = if occupied { spec.ventilation_min } else { 0.0 };
                let flow = (load / rating).max(vent).min(1.0);
                let fan = spec.fan_rating * flow.powi(3);
                for &i in members {
                    let share = if load > 0.0 {
                        (q_h[i] + q_c[i]) / load
                    } else {
                        1.0 / members.len() as f64
                    };
                    let heat_e = q_h[i] / (1.0 - spec.duct_loss) / cop_h;
                    let cool_e = q_c[i] / (1.0 - spec.duct_loss) / cop_c;
                    let heating_mode = q_h[i] > q_c[i] || (q_h[i] == q_c[i] && amb < s.air[i]);
                    let (fh, fc) = if heating_mode { (fan * share, 0.0) } else { (0.0, fan * share) };
                    e_h[i] += (heat_e + fh) * h;
                    e_c[i] += (cool_e + fc) * h;
                }
            }

            // thermal update (explicit Euler)
            let solar_angle = std::f64::consts::PI * (hour.rem_euclid(24.0) - 6.0) / 12.0;
            let solar = solar_angle.sin().max(0.0);
            let mut next_air = s.air.clone();
            let mut next_mass = s.mass.clone();
            let mut sub_heat = Vec::with_capacity(if record_substeps { nz } else { 0 });
            for i in 0..nz {
                let z = &spec.zones[i];
                let mut gain = z.solar_peak * solar;
                if occupied {
                    gain += z.occupancy_gain;
                }
                if let Some(n) = &noise {
                    gain += n.sample(&mut rng);
                }
                let envelope = spec.envelope_flux(z.ua, amb - s.air[i]);
                let exchange: f64 = neighbours[i]
                    .iter()
                    .map(|&j| spec.interzone_ua * (s.air[j] - s.air[i]))
                    .sum();
                let to_mass = z.h_air_mass * (s.mass[i] - s.air[i]);
                let hvac = q_h[i] - q_c[i];
                next_air[i] += h * (hvac + gain + envelope + exchange + to_mass) / z.c_air;
                next_mass[i] -= h * to_mass / z.c_mass;
                balance.delivered_heat += q_h[i] * h;
                balance.delivered_cool += q_c[i] * h;
                balance.envelope_loss -= envelope * h;
                balance.internal_gains += gain * h;
                if record_substeps {
                    sub_heat.push(hvac);
                }
            }
            s.air = next_air;
            s.mass = next_mass;
            if record_substeps {
                hour_heat.push(sub_heat);
            }
        }

        let row_h: Vec<f64> = e_h.iter().map(|v| v.max(0.0)).collect();
        let row_c: Vec<f64> = e_c.iter().map(|v| v.max(0.0)).collect();
        let row: Vec<f64> = row_h.iter().zip(&row_c).map(|(a, b)| a + b).collect();
        trace.p_import_obs.push(row.iter().sum());
        trace.p_hvac_obs.push(row);
        trace.p_h_obs.push(row_h);
        trace.p_c_obs.push(row_c);
        trace.tau_obs.push(s.air.clone());
        if let Some(rec) = trace.substep_heat.as_mut() {
            rec.push(hour_heat);
        }
    }
    balance.storage_change = stored(&s) - stored0;
    trace.final_state = s;
    trace.balance = balance;
    Ok(trace)
}

/// Anything that turns a day of hourly setpoints into observations.
pub trait Plant: Sync {
    fn num_zones(&self) -> usize;

    /// `setpoints` is T+1 × Z with row 0 the current temperatures.
    fn simulate_day(
        &self,
        setpoints: &[Vec<f64>],
        ambient: &[f64],
        day: usize,
        seed: u64,
    ) -> Result<SimulationTrace, PlantError>;
}

impl Plant for PlantSpec {
    fn num_zones(&self) -> usize {
        PlantSpec::num_zones(self)
    }

    /// Starts from settled air and mass at `setpoints[0]`.
    fn simulate_day(
        &self,
        setpoints: &[Vec<f64>],
        ambient: &[f64],
        day: usize,
        seed: u64,
    ) -> Result<SimulationTrace, PlantError> {
        let first = setpoints
            .first()
            .ok_or_else(|| PlantError::Shape("setpoints need at least one row".into()))?;
        simulate(
            self,
            &PlantState::settled(first),
            &SetpointPath::tracking(setpoints),
            ambient,
            day,
            seed,
            false,
        )
    }
}

/// A plant that is exactly the learnable RC model with hidden parameters.
/// It inverts one step per hour to hit each setpoint; no capacity limits,
/// no noise.
#[derive(Debug, Clone, PartialEq)]
pub struct RcPlant {
    pub theta: ThetaParams,
    pub dt: f64,
}

impl Plant for RcPlant {
    fn num_zones(&self) -> usize {
        self.theta.num_zones()
    }

    fn simulate_day(
        &self,
        setpoints: &[Vec<f64>],
        ambient: &[f64],
        _day: usize,
        _seed: u64,
    ) -> Result<SimulationTrace, PlantError> {
        let steps = ambient.len();
        let nz = self.num_zones();
        if setpoints.len() != steps + 1 || setpoints.iter().any(|r| r.len() != nz) {
            return Err(PlantError::Shape(format!("setpoints must be {}×{nz}", steps + 1)));
        }
        let th = &self.theta;
        let (eta_h, eta_c, r, c) = (th.eta_h(), th.eta_c(), th.r(), th.c());
        let mut trace = SimulationTrace {
            tau_obs: vec![setpoints[0].clone()],
            p_h_obs: vec![],
            p_c_obs: vec![],
            p_hvac_obs: vec![],
            p_import_obs: vec![],
            final_state: PlantState::settled(&setpoints[0]),
            balance: EnergyBalance::default(),
            substep_heat: None,
        };
        for t in 0..steps {
            let tau = trace.tau_obs[t].clone();
            let mut p_h = vec![0.0; nz];
            let mut p_c = vec![0.0; nz];
            for i in 0..nz {
                let coupling: f64 = (0..nz).map(|j| th.alpha(i, j) * tau[j]).sum();
                let envelope = (ambient[t] - tau[i]) / (r[i] * c[i]);
                let u = c[i] * (setpoints[t + 1][i] / self.dt - coupling - envelope);
                if u >= 0.0 {
                    p_h[i] = u / eta_h[i];
                } else {
                    p_c[i] = -u / eta_c[i];
                }
            }
            let next = crate::rc::rc_step(th, &tau, ambient[t], &p_h, &p_c, self.dt)
                .map_err(|e| PlantError::Shape(e.to_string()))?;
            let row: Vec<f64> = p_h.iter().zip(&p_c).map(|(a, b)| a + b).collect();
            trace.p_import_obs.push(row.iter().sum());
            trace.p_hvac_obs.push(row);
            trace.p_h_obs.push(p_h);
            trace.p_c_obs.push(p_c);
            trace.tau_obs.push(next);
        }
        trace.final_state = PlantState::settled(trace.tau_obs.last().expect("non-empty"));
        Ok(trace)
    }
}

/// One hour of history across all zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub hour: usize,
    pub tau: Vec<f64>,
    pub ambient: f64,
    pub p_h: Vec<f64>,
    pub p_c: Vec<f64>,
    pub tau_next: Vec<f64>,
}

/// A year (or any span) of operation under the baseline thermostat,
/// starting settled at the occupied setpoint on day 0.
pub fn historical_rollout(
    spec: &PlantSpec,
    weather: &[f64],
    policy: &BaselinePolicy,
    seed: u64,
) -> Result<Vec<Transition>, PlantError> {
    let nz = spec.num_zones();
    let mut state = PlantState::settled(&vec![policy.occupied; nz]);
    let mut out = Vec::with_capacity(weather.len());
    for (d, day) in weather.chunks(24).enumerate() {
        let path = policy.day(day.len(), nz, is_weekday(d % 365));
        let trace = simulate(spec, &state, &path, day, d, seed.wrapping_add(d as u64), false)?;
        for t in 0..day.len() {
            out.push(Transition {
                hour: d * 24 + t,
                tau: trace.tau_obs[t].clone(),
                ambient: day[t],
                p_h: trace.p_h_obs[t].clone(),
                p_c: trace.p_c_obs[t].clone(),
                tau_next: trace.tau_obs[t + 1].clone(),
            });
        }
        state = trace.final_state;
    }
    Ok(out)
}

/// Zone temperatures after a day under the baseline policy on `weather`.
pub fn warm_up(spec: &PlantSpec, weather: &[f64], day: usize, policy: &BaselinePolicy, seed: u64) -> Result<Vec<f64>, PlantError> {
    let nz = spec.num_zones();
    let state = PlantState::settled(&vec![policy.occupied; nz]);
    let path = policy.day(weather.len(), nz, is_weekday(day % 365));
    Ok(simulate(spec, &state, &path, weather, day, seed, false)?.final_state.air)
}
