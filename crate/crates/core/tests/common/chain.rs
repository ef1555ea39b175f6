//! Two-zone, four-step scheduling problem for checking dL/dθ end to end.

use hvac_dfl::learning::{schedule_loss_gradient, Task};
use hvac_dfl::rc::{ParamLayout, ThetaParams, ZoneTopology};
use hvac_dfl::scenarios::DayScenario;
use hvac_dfl::scheduler::{solve_schedule_with, Capacities, ComfortSchedule, Tariff};

pub fn theta_star() -> ThetaParams {
    ThetaParams::from_natural(
        ParamLayout::dense(2),
        vec![0.93, 0.03, 0.04, 0.91],
        &[3.0, 2.6],
        &[2.5, 2.2],
        &[6.0, 4.0],
        &[3.0, 4.0],
    )
    .unwrap()
}

pub fn two_zone_task(demand_charge: f64) -> Task {
    let topo = ZoneTopology::uniform(1, 2);
    let mut task = Task::new(
        topo.clone(),
        Tariff {
            energy_price: vec![0.3, 0.6, 0.6, 0.3],
            demand_charge,
        },
        Capacities::unbounded(&topo),
    );
    task.comfort = ComfortSchedule {
        target: 21.0,
        working: 5.0,
        evening: 5.0,
        night: 5.0,
    };
    task.solver.tolerance = 1e-11;
    task
}

pub struct ChainCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// smallest heating power in the plan
    pub min_heat: f64,
}

impl ChainCheck {
    /// ‖analytic − numeric‖ / ‖numeric‖
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self.analytic.iter().zip(&self.numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        diff / self.numeric.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Heating in both zones at every step, observed trace fixed at the plan
/// plus signed offsets, so no loss kink or constraint switches under the
/// finite-difference steps.
pub fn end_to_end_check() -> ChainCheck {
    let task = two_zone_task(0.2);
    let theta = theta_star();
    let scenario = DayScenario::new(vec![2.0, 3.0, 5.0, 4.0], vec![19.0, 20.0]);
    let config = task.config_for(&scenario);
    let plan = solve_schedule_with(&theta, &scenario, &task.tariff, &config, &task.topology, &task.solver).unwrap();
    let min_heat = plan.result.p_h.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let offsets = [0.4, -0.3, 0.5, -0.6, 0.3, 0.7, -0.5, 0.45];
    let observed: Vec<Vec<f64>> = plan
        .result
        .p_hvac
        .iter()
        .enumerate()
        .map(|(t, r)| r.iter().enumerate().map(|(z, p)| p + offsets[2 * t + z]).collect())
        .collect();
    let (_, analytic, _) = schedule_loss_gradient(&theta, &scenario, &task, &observed).unwrap();
    let loss_at = |flat: &[f64]| {
        let th = ThetaParams::unpack(&theta.layout, flat).unwrap();
        schedule_loss_gradient(&th, &scenario, &task, &observed).unwrap().0
    };
    let base = theta.pack();
    let h = 1e-6;
    let numeric = (0..base.len())
        .map(|k| {
            let mut up = base.clone();
            let mut down = base.clone();
            up[k] += h;
            down[k] -= h;
            (loss_at(&up) - loss_at(&down)) / (2.0 * h)
        })
        .collect();
    ChainCheck {
        analytic,
        numeric,
        min_heat,
    }
}
