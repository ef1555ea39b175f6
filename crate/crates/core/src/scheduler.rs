//! Day-ahead HVAC scheduling QP.
//!
//! Variables, block by block: τ ((T+1)·Z), pʰ, pᶜ, pʰᵛᵃᶜ (T·Z each), pⁱ (T),
//! pᵈ (1). Comfort enters the objective only, so the problem stays feasible
//! whatever θ is, as long as the capacities admit zero power.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::linalg::CscMatrix;
use crate::qp::{self, DataBlock, DataEntry, QpError, QpProblem, QpSolution, SolverSettings, SparseLinearMap};
use crate::rc::{coefficient_jacobian, Coef, RcError, ThetaParams, ZoneTopology};
use crate::scenarios::DayScenario;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid schedule input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rc(#[from] RcError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    /// €/kWh per step
    pub energy_price: Vec<f64>,
    /// €/kW on the daily peak
    pub demand_charge: f64,
}

impl Tariff {
    /// 0.3 €/kWh, rising to 0.6 €/kWh from 6am to 7pm (excluded).
    pub fn time_of_use(steps: usize, dt: f64, demand_charge: f64) -> Self {
        let energy_price = (0..steps)
            .map(|t| {
                let hour = (t as f64 * dt) % 24.0;
                if (6.0..19.0).contains(&hour) {
                    0.6
                } else {
                    0.3
                }
            })
            .collect();
        Self {
            energy_price,
            demand_charge,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !self.energy_price.iter().all(|&p| p.is_finite() && p > 0.0) {
            return Err(ScheduleError::Invalid("energy prices must be positive".into()));
        }
        if !(self.demand_charge.is_finite() && self.demand_charge >= 0.0) {
            return Err(ScheduleError::Invalid("demand charge must be non-negative".into()));
        }
        Ok(())
    }

    /// Energy price with the demand charge added at `peak_step`.
    pub fn all_inclusive_price(&self, peak_step: usize) -> Vec<f64> {
        let mut out = self.energy_price.clone();
        if let Some(p) = out.get_mut(peak_step) {
            *p += self.demand_charge;
        }
        out
    }
}

/// Index of the largest entry; the earliest one on ties.
pub fn peak_step(series: &[f64]) -> usize {
    let mut best = 0;
    for (t, &v) in series.iter().enumerate() {
        if v > series[best] {
            best = t;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// h
    pub dt: f64,
    /// T×Z °C; row t is the target for the state reached after step t
    pub comfort_target: Vec<Vec<f64>>,
    /// T×Z €/(°C²·h)
    pub comfort_weight: Vec<Vec<f64>>,
    /// T×Z kW, `f64::INFINITY` for no cap
    pub zone_cap_h: Vec<Vec<f64>>,
    pub zone_cap_c: Vec<Vec<f64>>,
    /// T×F kW
    pub floor_cap_h: Vec<Vec<f64>>,
    pub floor_cap_c: Vec<Vec<f64>>,
    /// kW
    pub line_capacity: f64,
}

/// Hour-of-day comfort weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComfortSchedule {
    pub target: f64,
    /// weekdays 7am–6pm
    pub working: f64,
    /// 6pm–midnight, and weekend daytime
    pub evening: f64,
    /// midnight–7am
    pub night: f64,
}

impl Default for ComfortSchedule {
    fn default() -> Self {
        Self {
            target: 21.0,
            working: 5.0,
            evening: 0.5,
            night: 0.1,
        }
    }
}

impl ComfortSchedule {
    pub fn weight(&self, hour: f64, weekday: bool) -> f64 {
        if hour < 7.0 {
            self.night
        } else if hour < 18.0 && weekday {
            self.working
        } else {
            self.evening
        }
    }
}

/// Nameplate capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacities {
    pub zone_h: Vec<f64>,
    pub zone_c: Vec<f64>,
    pub floor_h: Vec<f64>,
    pub floor_c: Vec<f64>,
    pub line: f64,
}

impl Capacities {
    pub fn unbounded(topology: &ZoneTopology) -> Self {
        let (z, f) = (topology.num_zones, topology.num_floors());
        Self {
            zone_h: vec![f64::INFINITY; z],
            zone_c: vec![f64::INFINITY; z],
            floor_h: vec![f64::INFINITY; f],
            floor_c: vec![f64::INFINITY; f],
            line: f64::INFINITY,
        }
    }
}

impl ScheduleConfig {
    /// Hourly configuration for one day; the scheduled step t covers hour
    /// `t·dt` and its target applies at the end of the step.
    pub fn for_day(
        steps: usize,
        dt: f64,
        weekday: bool,
        comfort: &ComfortSchedule,
        caps: &Capacities,
    ) -> Self {
        let z = caps.zone_h.len();
        let rows = |f: &dyn Fn(usize) -> Vec<f64>| (0..steps).map(f).collect::<Vec<_>>();
        Self {
            dt,
            comfort_target: rows(&|_| vec![comfort.target; z]),
            comfort_weight: rows(&|t| {
                let hour = ((t + 1) as f64 * dt) % 24.0;
                vec![comfort.weight(hour, weekday); z]
            }),
            zone_cap_h: rows(&|_| caps.zone_h.clone()),
            zone_cap_c: rows(&|_| caps.zone_c.clone()),
            floor_cap_h: rows(&|_| caps.floor_h.clone()),
            floor_cap_c: rows(&|_| caps.floor_c.clone()),
            line_capacity: caps.line,
        }
    }

    pub fn steps(&self) -> usize {
        self.comfort_target.len()
    }

    fn validate(&self, steps: usize, zones: usize, floors: usize) -> Result<(), ScheduleError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ScheduleError::Invalid("dt must be positive".into()));
        }
        let check = |name: &str, m: &[Vec<f64>], cols: usize, nonneg: bool| {
            if m.len() != steps || m.iter().any(|r| r.len() != cols) {
                return Err(ScheduleError::Shape(format!("{name} must be {steps}×{cols}")));
            }
            if nonneg && m.iter().flatten().any(|&v| v.is_nan() || v < 0.0) {
                return Err(ScheduleError::Invalid(format!("{name} must be non-negative")));
            }
            Ok(())
        };
        check("comfort_target", &self.comfort_target, zones, false)?;
        if self.comfort_target.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ScheduleError::Invalid("comfort_target must be finite".into()));
        }
        check("comfort_weight", &self.comfort_weight, zones, true)?;
        if self.comfort_weight.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ScheduleError::Invalid("comfort_weight must be finite".into()));
        }
        check("zone_cap_h", &self.zone_cap_h, zones, true)?;
        check("zone_cap_c", &self.zone_cap_c, zones, true)?;
        check("floor_cap_h", &self.floor_cap_h, floors, true)?;
        check("floor_cap_c", &self.floor_cap_c, floors, true)?;
        if self.line_capacity.is_nan() || self.line_capacity < 0.0 {
            return Err(ScheduleError::Invalid("line_capacity must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Tau,
    HeatPower,
    CoolPower,
    HvacPower,
    Import,
    Peak,
}

/// Positions of every QP variable and of the dynamics rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarIndex {
    pub steps: usize,
    pub zones: usize,
}

impl VarIndex {
    pub fn tau(&self, t: usize, z: usize) -> usize {
        t * self.zones + z
    }

    fn block(&self, k: usize) -> usize {
        (self.steps + 1) * self.zones + k * self.steps * self.zones
    }

    pub fn p_h(&self, t: usize, z: usize) -> usize {
        self.block(0) + t * self.zones + z
    }

    pub fn p_c(&self, t: usize, z: usize) -> usize {
        self.block(1) + t * self.zones + z
    }

    pub fn p_hvac(&self, t: usize, z: usize) -> usize {
        self.block(2) + t * self.zones + z
    }

    pub fn p_import(&self, t: usize) -> usize {
        self.block(3) + t
    }

    pub fn p_peak(&self) -> usize {
        self.block(3) + self.steps
    }

    pub fn num_vars(&self) -> usize {
        self.p_peak() + 1
    }

    /// Kind, step and zone of a variable (zone 0 for the scalar series).
    pub fn kind_of(&self, idx: usize) -> Option<(VarKind, usize, usize)> {
        let z = self.zones;
        let tz = self.steps * z;
        let tau_len = (self.steps + 1) * z;
        if idx < tau_len {
            return Some((VarKind::Tau, idx / z, idx % z));
        }
        let rest = idx - tau_len;
        let kinds = [VarKind::HeatPower, VarKind::CoolPower, VarKind::HvacPower];
        if rest < 3 * tz {
            let k = rest / tz;
            let r = rest % tz;
            return Some((kinds[k], r / z, r % z));
        }
        let rest = rest - 3 * tz;
        if rest < self.steps {
            return Some((VarKind::Import, rest, 0));
        }
        (rest == self.steps).then_some((VarKind::Peak, 0, 0))
    }

    /// Equality row of the dynamics for step t, zone z.
    pub fn dynamics_row(&self, t: usize, z: usize) -> usize {
        self.zones + t * self.zones + z
    }
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub problem: QpProblem,
    pub index: VarIndex,
    /// Σ w Δt T², dropped from the QP objective
    pub objective_constant: f64,
}

pub fn assemble(
    theta: &ThetaParams,
    scenario: &DayScenario,
    tariff: &Tariff,
    config: &ScheduleConfig,
    topology: &ZoneTopology,
) -> Result<Assembled, ScheduleError> {
    let steps = scenario.ambient.len();
    let zones = theta.num_zones();
    topology.validate()?;
    if topology.num_zones != zones {
        return Err(ScheduleError::Shape(format!(
            "θ has {zones} zones, topology {}",
            topology.num_zones
        )));
    }
    if scenario.initial_tau.len() != zones {
        return Err(ScheduleError::Shape(format!(
            "initial_tau has {} zones, expected {zones}",
            scenario.initial_tau.len()
        )));
    }
    if tariff.energy_price.len() != steps {
        return Err(ScheduleError::Shape(format!(
            "tariff has {} steps, scenario {steps}",
            tariff.energy_price.len()
        )));
    }
    tariff.validate()?;
    config.validate(steps, zones, topology.num_floors())?;
    if !theta.is_finite() {
        return Err(ScheduleError::Invalid("θ is not finite".into()));
    }
    if !scenario.ambient.iter().chain(&scenario.initial_tau).all(|v| v.is_finite()) {
        return Err(ScheduleError::Invalid("scenario is not finite".into()));
    }

    let ix = VarIndex { steps, zones };
    let n = ix.num_vars();
    let dt = config.dt;
    let co = theta.coefficients(dt);

    let mut q_trip = Vec::new();
    let mut q = vec![0.0; n];
    let mut constant = 0.0;
    for t in 0..steps {
        for z in 0..zones {
            let w = config.comfort_weight[t][z] * dt;
            let target = config.comfort_target[t][z];
            let i = ix.tau(t + 1, z);
            q_trip.push((i, i, 2.0 * w));
            q[i] = -2.0 * w * target;
            constant += w * target * target;
        }
        q[ix.p_import(t)] = tariff.energy_price[t] * dt;
    }
    q[ix.p_peak()] = tariff.demand_charge;

    let mut a_trip = Vec::new();
    let mut b = Vec::new();
    for z in 0..zones {
        a_trip.push((b.len(), ix.tau(0, z), 1.0));
        b.push(scenario.initial_tau[z]);
    }
    for t in 0..steps {
        for z in 0..zones {
            let row = b.len();
            debug_assert_eq!(row, ix.dynamics_row(t, z));
            a_trip.push((row, ix.tau(t + 1, z), 1.0));
            for j in 0..zones {
                if j == z || theta.layout.is_learnable(z, j) {
                    a_trip.push((row, ix.tau(t, j), -co.a[z * zones + j]));
                }
            }
            a_trip.push((row, ix.p_h(t, z), -co.g_h[z]));
            a_trip.push((row, ix.p_c(t, z), co.g_c[z]));
            b.push(co.k[z] * scenario.ambient[t]);
        }
    }
    for t in 0..steps {
        for z in 0..zones {
            let row = b.len();
            a_trip.push((row, ix.p_hvac(t, z), 1.0));
            a_trip.push((row, ix.p_h(t, z), -1.0));
            a_trip.push((row, ix.p_c(t, z), -1.0));
            b.push(0.0);
        }
    }
    for t in 0..steps {
        let row = b.len();
        a_trip.push((row, ix.p_import(t), 1.0));
        for z in 0..zones {
            a_trip.push((row, ix.p_hvac(t, z), -1.0));
        }
        b.push(0.0);
    }

    let mut g_trip = Vec::new();
    let mut h = Vec::new();
    let mut push_row = |entries: &[(usize, f64)], rhs: f64| {
        let row = h.len();
        for &(j, v) in entries {
            g_trip.push((row, j, v));
        }
        h.push(rhs);
    };
    for t in 0..steps {
        for z in 0..zones {
            if config.zone_cap_h[t][z].is_finite() {
                push_row(&[(ix.p_h(t, z), 1.0)], config.zone_cap_h[t][z]);
            }
            if config.zone_cap_c[t][z].is_finite() {
                push_row(&[(ix.p_c(t, z), 1.0)], config.zone_cap_c[t][z]);
            }
        }
        for (f, floor) in topology.floors.iter().enumerate() {
            if config.floor_cap_h[t][f].is_finite() {
                let e: Vec<_> = floor.iter().map(|&z| (ix.p_h(t, z), 1.0)).collect();
                push_row(&e, config.floor_cap_h[t][f]);
            }
            if config.floor_cap_c[t][f].is_finite() {
                let e: Vec<_> = floor.iter().map(|&z| (ix.p_c(t, z), 1.0)).collect();
                push_row(&e, config.floor_cap_c[t][f]);
            }
        }
        push_row(&[(ix.p_import(t), 1.0), (ix.p_peak(), -1.0)], 0.0);
    }
    if config.line_capacity.is_finite() {
        push_row(&[(ix.p_peak(), 1.0)], config.line_capacity);
    }
    for t in 0..steps {
        for z in 0..zones {
            push_row(&[(ix.p_h(t, z), -1.0)], 0.0);
            push_row(&[(ix.p_c(t, z), -1.0)], 0.0);
        }
        push_row(&[(ix.p_import(t), -1.0)], 0.0);
    }

    let problem = QpProblem::new(
        CscMatrix::from_triplets(n, n, &q_trip),
        q,
        CscMatrix::from_triplets(b.len(), n, &a_trip),
        b,
        CscMatrix::from_triplets(h.len(), n, &g_trip),
        h,
    )?;
    Ok(Assembled {
        problem,
        index: ix,
        objective_constant: constant,
    })
}

/// Jacobian of the assembled QP data with respect to the flat θ vector.
pub fn parameter_map(theta: &ThetaParams, scenario: &DayScenario, assembled: &Assembled, dt: f64) -> SparseLinearMap {
    let ix = &assembled.index;
    let jac = coefficient_jacobian(theta, dt);
    jac.to_data_map(|coef, push| {
        for t in 0..ix.steps {
            match coef {
                Coef::A(z, j) => push(
                    DataEntry::matrix(DataBlock::A, ix.dynamics_row(t, z), ix.tau(t, j)),
                    -1.0,
                ),
                Coef::Gh(z) => push(
                    DataEntry::matrix(DataBlock::A, ix.dynamics_row(t, z), ix.p_h(t, z)),
                    -1.0,
                ),
                Coef::Gc(z) => push(
                    DataEntry::matrix(DataBlock::A, ix.dynamics_row(t, z), ix.p_c(t, z)),
                    1.0,
                ),
                Coef::K(z) => push(
                    DataEntry::vector(DataBlock::B, ix.dynamics_row(t, z)),
                    scenario.ambient[t],
                ),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    /// (T+1)×Z °C
    pub tau_in: Vec<Vec<f64>>,
    /// T×Z kW
    pub p_h: Vec<Vec<f64>>,
    pub p_c: Vec<Vec<f64>>,
    pub p_hvac: Vec<Vec<f64>>,
    /// T kW
    pub p_import: Vec<f64>,
    pub p_peak: f64,
    /// € (electricity only)
    pub expected_cost: f64,
    /// €
    pub comfort_penalty: f64,
}

/// Everything needed to differentiate the schedule afterwards.
#[derive(Debug, Clone)]
pub struct Scheduled {
    pub assembled: Assembled,
    pub solution: QpSolution,
    pub result: ScheduleResult,
}

pub fn expected_cost(result: &ScheduleResult, tariff: &Tariff, dt: f64) -> f64 {
    let energy: f64 = result
        .p_import
        .iter()
        .zip(&tariff.energy_price)
        .map(|(p, l)| p * l * dt)
        .sum();
    result.p_peak * tariff.demand_charge + energy
}

pub fn solve_schedule(
    theta: &ThetaParams,
    scenario: &DayScenario,
    tariff: &Tariff,
    config: &ScheduleConfig,
    topology: &ZoneTopology,
) -> Result<ScheduleResult, ScheduleError> {
    solve_schedule_with(theta, scenario, tariff, config, topology, &SolverSettings::default())
        .map(|s| s.result)
}

pub fn solve_schedule_with(
    theta: &ThetaParams,
    scenario: &DayScenario,
    tariff: &Tariff,
    config: &ScheduleConfig,
    topology: &ZoneTopology,
    settings: &SolverSettings,
) -> Result<Scheduled, ScheduleError> {
    let assembled = assemble(theta, scenario, tariff, config, topology)?;
    let solution = qp::solve_with(&assembled.problem, settings)?.into_optimal()?;
    let ix = &assembled.index;
    let u = &solution.primal;
    let (steps, zones) = (ix.steps, ix.zones);
    let grid = |f: &dyn Fn(usize, usize) -> usize, rows: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|t| (0..zones).map(|z| u[f(t, z)]).collect()).collect()
    };
    let tau_in = grid(&|t, z| ix.tau(t, z), steps + 1);
    let mut comfort_penalty = 0.0;
    for t in 0..steps {
        for z in 0..zones {
            let d = tau_in[t + 1][z] - config.comfort_target[t][z];
            comfort_penalty += config.comfort_weight[t][z] * d * d * config.dt;
        }
    }
    let mut result = ScheduleResult {
        tau_in,
        p_h: grid(&|t, z| ix.p_h(t, z), steps),
        p_c: grid(&|t, z| ix.p_c(t, z), steps),
        p_hvac: grid(&|t, z| ix.p_hvac(t, z), steps),
        p_import: (0..steps).map(|t| u[ix.p_import(t)]).collect(),
        p_peak: u[ix.p_peak()],
        expected_cost: 0.0,
        comfort_penalty,
    };
    result.expected_cost = expected_cost(&result, tariff, config.dt);
    Ok(Scheduled {
        assembled,
        solution,
        result,
    })
}

impl ScheduleResult {
    /// `t,zone,tau_in,p_h,p_c,p_hvac`; `tau_in` is the state at the start of
    /// step t, and a final row per zone carries the end state with empty
    /// power columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,zone,tau_in,p_h,p_c,p_hvac\n");
        let steps = self.p_h.len();
        for t in 0..=steps {
            for z in 0..self.tau_in[t].len() {
                if t < steps {
                    let _ = writeln!(
                        s,
                        "{t},{z},{},{},{},{}",
                        self.tau_in[t][z], self.p_h[t][z], self.p_c[t][z], self.p_hvac[t][z]
                    );
                } else {
                    let _ = writeln!(s, "{t},{z},{},,,", self.tau_in[t][z]);
                }
            }
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "expected_cost": self.expected_cost,
            "comfort_penalty": self.comfort_penalty,
            "p_peak": self.p_peak,
            "energy_kwh": self.p_import.iter().sum::<f64>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rc::ParamLayout;

    fn scenario(ambient: Vec<f64>, tau0: Vec<f64>) -> DayScenario {
        DayScenario::new(ambient, tau0)
    }

    fn flat_config(steps: usize, zones: usize, floors: usize, weight: f64, target: f64) -> ScheduleConfig {
        ScheduleConfig {
            dt: 1.0,
            comfort_target: vec![vec![target; zones]; steps],
            comfort_weight: vec![vec![weight; zones]; steps],
            zone_cap_h: vec![vec![f64::INFINITY; zones]; steps],
            zone_cap_c: vec![vec![f64::INFINITY; zones]; steps],
            floor_cap_h: vec![vec![f64::INFINITY; floors]; steps],
            floor_cap_c: vec![vec![f64::INFINITY; floors]; steps],
            line_capacity: f64::INFINITY,
        }
    }

    fn unit_theta(zones: usize, r: f64) -> ThetaParams {
        let mut alpha = vec![0.0; zones * zones];
        for z in 0..zones {
            alpha[z * zones + z] = 1.0;
        }
        ThetaParams::from_natural(
            ParamLayout::dense(zones),
            alpha,
            &vec![1.0; zones],
            &vec![1.0; zones],
            &vec![r; zones],
            &vec![1.0; zones],
        )
        .unwrap()
    }

    #[test]
    fn variable_count_for_one_step_one_zone() {
        let ix = VarIndex { steps: 1, zones: 1 };
        assert_eq!(ix.num_vars(), 7);
        let kinds: Vec<_> = (0..7).map(|i| ix.kind_of(i).unwrap().0).collect();
        assert_eq!(
            kinds,
            [
                VarKind::Tau,
                VarKind::Tau,
                VarKind::HeatPower,
                VarKind::CoolPower,
                VarKind::HvacPower,
                VarKind::Import,
                VarKind::Peak
            ]
        );
        assert_eq!(ix.kind_of(7), None);
    }

    #[test]
    fn no_incentive_means_no_power() {
        let topo = ZoneTopology::uniform(1, 2);
        let theta = unit_theta(2, 10.0);
        let sc = scenario(vec![5.0; 4], vec![20.0, 18.0]);
        let tariff = Tariff {
            energy_price: vec![0.3; 4],
            demand_charge: 0.0,
        };
        let cfg = flat_config(4, 2, 1, 0.0, 21.0);
        let r = solve_schedule(&theta, &sc, &tariff, &cfg, &topo).unwrap();
        assert!(r.p_hvac.iter().flatten().all(|&p| p.abs() < 1e-6));
        assert!(r.expected_cost.abs() < 1e-6);
    }

    #[test]
    fn one_kilowatt_hour_raises_one_degree() {
        // zone 0: 1 kWh/°C, no envelope coupling; target +1 °C after one step
        let topo = ZoneTopology::uniform(1, 2);
        let theta = unit_theta(2, 1e9);
        let sc = scenario(vec![20.0], vec![20.0, 20.0]);
        let tariff = Tariff {
            energy_price: vec![0.3],
            demand_charge: 0.0,
        };
        let mut cfg = flat_config(1, 2, 1, 1e4, 20.0);
        cfg.comfort_target[0][0] = 21.0;
        let r = solve_schedule(&theta, &sc, &tariff, &cfg, &topo).unwrap();
        assert!((r.p_h[0][0] - 1.0).abs() < 1e-3, "{}", r.p_h[0][0]);
        assert!(r.p_hvac[0][1].abs() < 1e-6);
    }

    #[test]
    fn perfect_insulation_holds_temperature_for_free() {
        let topo = ZoneTopology::uniform(1, 1);
        let theta = unit_theta(1, 1e12);
        let sc = scenario(vec![-10.0; 24], vec![21.0]);
        let tariff = Tariff::time_of_use(24, 1.0, 10.0);
        let cfg = flat_config(24, 1, 1, 5.0, 21.0);
        let r = solve_schedule(&theta, &sc, &tariff, &cfg, &topo).unwrap();
        assert!(r.p_hvac.iter().flatten().all(|&p| p.abs() < 1e-5));
        assert!(r.tau_in.iter().flatten().all(|&t| (t - 21.0).abs() < 1e-4));
    }

    #[test]
    fn expected_cost_arithmetic() {
        let tariff = Tariff {
            energy_price: vec![0.3; 24],
            demand_charge: 10.0,
        };
        let r = ScheduleResult {
            tau_in: vec![],
            p_h: vec![],
            p_c: vec![],
            p_hvac: vec![],
            p_import: vec![1.0; 24],
            p_peak: 1.0,
            expected_cost: 0.0,
            comfort_penalty: 0.0,
        };
        assert!((expected_cost(&r, &tariff, 1.0) - 17.2).abs() < 1e-12);
    }

    #[test]
    fn tariff_shape() {
        let t = Tariff::time_of_use(24, 1.0, 10.0);
        assert_eq!(t.energy_price[5], 0.3);
        assert_eq!(t.energy_price[6], 0.6);
        assert_eq!(t.energy_price[18], 0.6);
        assert_eq!(t.energy_price[19], 0.3);
        assert_eq!(t.all_inclusive_price(3)[3], 10.3);
        assert_eq!(peak_step(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let topo = ZoneTopology::uniform(1, 2);
        let theta = unit_theta(2, 10.0);
        let sc = scenario(vec![5.0; 4], vec![20.0]);
        let tariff = Tariff::time_of_use(4, 1.0, 10.0);
        let cfg = flat_config(4, 2, 1, 1.0, 21.0);
        assert!(matches!(
            assemble(&theta, &sc, &tariff, &cfg, &topo),
            Err(ScheduleError::Shape(_))
        ));
    }
}
