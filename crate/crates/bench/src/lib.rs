//! Fixtures shared by the benchmarks.

use hvac_dfl::pipeline::{self, STREAM_SCHEDULING_WEATHER};
use hvac_dfl::scenarios::{days_of, synthesize_year};
use hvac_dfl::{CscMatrix, DayScenario, Plant, PlantSpec, QpProblem, RunConfig, Task, ThetaParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense strictly convex QP with `n` variables, `n / 3` equalities and
/// `n` inequalities, feasible at a random interior point.
pub fn random_qp(n: usize, seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let m = draw(n);
    let q_mat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    let a = draw(n / 3);
    let g = draw(n);
    let q = draw(1).remove(0);
    let x0 = draw(1).remove(0);
    let dot = |r: &Vec<f64>| r.iter().zip(&x0).map(|(p, x)| p * x).sum::<f64>();
    let b = a.iter().map(dot).collect();
    let h = g.iter().map(|r| dot(r) + 0.1).collect();
    QpProblem::new(
        CscMatrix::from_dense(&q_mat, n),
        q,
        CscMatrix::from_dense(&a, n),
        b,
        CscMatrix::from_dense(&g, n),
        h,
    )
    .expect("consistent dimensions")
}

/// One winter day on a building of `zones` zones with the initial model.
pub struct DayFixture {
    pub cfg: RunConfig,
    pub theta: ThetaParams,
    pub scenario: DayScenario,
    pub task: Task,
    pub plant: PlantSpec,
    /// observed HVAC power when the plant tracks the model's plan
    pub observed: Vec<Vec<f64>>,
}

pub fn day_fixture(zones: usize) -> DayFixture {
    let cfg = RunConfig::default().with_zones(zones);
    let days = days_of(&synthesize_year(cfg.stream(STREAM_SCHEDULING_WEATHER), &cfg.weather));
    let scenario = DayScenario::new(days[20].clone(), vec![20.0; zones]);
    let theta = pipeline::initial_theta(&cfg);
    let task = pipeline::task(&cfg);
    let plant = cfg.plant_spec();
    let config = task.config_for(&scenario);
    let plan = hvac_dfl::scheduler::solve_schedule(&theta, &scenario, &task.tariff, &config, &task.topology)
        .expect("fixture schedule solves");
    let observed = plant
        .simulate_day(&plan.tau_in, &scenario.ambient, scenario.day, 1)
        .expect("fixture simulation runs")
        .p_hvac_obs;
    DayFixture {
        cfg,
        theta,
        scenario,
        task,
        plant,
        observed,
    }
}
