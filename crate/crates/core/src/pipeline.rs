//! The multi-stage protocol: weather, scenarios, history, pre-training,
//! decision-focused training and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::learning::{self, inject_noise, DflOutcome, LearningError, Pretrained, Task};
use crate::plant_sim::{historical_rollout, warm_up, PlantError, PlantSpec, Transition};
use crate::rc::ThetaParams;
use crate::reporting::{compare, evaluate_split, Comparison, EvaluatedSplit, MetricsReport};
use crate::scenarios::{
    build_hot_year, daily_mean, days_of, kmedoid_cluster, order_cycle, pick_extremes, sample_validation_test,
    scenario_for_day, synthesize_year, Clustering, DayScenario, ScenarioError, DAYS_PER_YEAR,
};

pub const STREAM_HISTORICAL_WEATHER: u64 = 1;
pub const STREAM_SCHEDULING_WEATHER: u64 = 2;
pub const STREAM_SAMPLING: u64 = 3;
pub const STREAM_PLANT: u64 = 4;
pub const STREAM_NOISE: u64 = 5;
pub const STREAM_INIT: u64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    /// year used for the historical operation record
    pub historical: Vec<f64>,
    /// year the representative days are drawn from
    pub scheduling: Vec<f64>,
}

pub fn synth_weather(cfg: &RunConfig) -> Weather {
    Weather {
        historical: synthesize_year(cfg.stream(STREAM_HISTORICAL_WEATHER), &cfg.weather),
        scheduling: synthesize_year(cfg.stream(STREAM_SCHEDULING_WEATHER), &cfg.weather),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub extremes: Option<[usize; 3]>,
    pub clustering: Clustering,
    /// medoid cluster indices in training order
    pub order: Vec<usize>,
    pub train: Vec<DayScenario>,
    pub validation: Vec<DayScenario>,
    pub test: Vec<DayScenario>,
    pub hot_year: Vec<DayScenario>,
}

impl ScenarioBundle {
    pub fn split(&self, name: &str) -> Option<&[DayScenario]> {
        match name {
            "train" => Some(&self.train),
            "validation" => Some(&self.validation),
            "test" => Some(&self.test),
            "hot-year" => Some(&self.hot_year),
            _ => None,
        }
    }
}

pub const SPLITS: [&str; 4] = ["train", "validation", "test", "hot-year"];

fn with_initial_state(
    mut s: DayScenario,
    days: &[Vec<f64>],
    spec: &PlantSpec,
    cfg: &RunConfig,
) -> Result<DayScenario, PlantError> {
    let previous = (s.day + DAYS_PER_YEAR - 1) % DAYS_PER_YEAR;
    s.initial_tau = warm_up(spec, &days[previous], previous, &cfg.baseline, cfg.stream(STREAM_PLANT) ^ previous as u64)?;
    Ok(s)
}

/// Clusters the scheduling year and derives every scenario set; initial
/// zone temperatures come from a baseline warm-up on the preceding day.
pub fn build_scenarios(cfg: &RunConfig, scheduling_year: &[f64]) -> Result<ScenarioBundle, PipelineError> {
    let days = days_of(scheduling_year);
    if days.len() != DAYS_PER_YEAR || days.iter().any(|d| d.len() != 24) {
        return Err(PipelineError::Input("weather must hold 365 full days".into()));
    }
    let spec = cfg.plant_spec();
    let extremes = cfg.cluster.fixed_extremes.then(|| pick_extremes(&days));
    let fixed: Vec<usize> = extremes.map(|e| e.to_vec()).unwrap_or_default();
    let clustering = kmedoid_cluster(&days, cfg.cluster.k, &fixed)?;
    let means: Vec<f64> = clustering.medoids.iter().map(|&m| daily_mean(&days[m])).collect();
    let order = order_cycle(&means);
    let prepare = |s: DayScenario| with_initial_state(s, &days, &spec, cfg);

    let train = order
        .iter()
        .map(|&c| prepare(scenario_for_day(&days, clustering.medoids[c], c, clustering.weights[c])))
        .collect::<Result<Vec<_>, _>>()?;
    let (val_days, test_days) = sample_validation_test(&clustering, cfg.stream(STREAM_SAMPLING));
    let sampled = |picked: &[usize]| {
        picked
            .iter()
            .enumerate()
            .map(|(c, &d)| prepare(scenario_for_day(&days, d, c, clustering.weights[c])))
            .collect::<Result<Vec<_>, _>>()
    };
    let validation = sampled(&val_days)?;
    let test = sampled(&test_days)?;
    let hot_year = build_hot_year(&days, &clustering)
        .into_iter()
        .map(prepare)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioBundle {
        extremes,
        clustering,
        order,
        train,
        validation,
        test,
        hot_year,
    })
}

pub fn baseline_rollout(cfg: &RunConfig, historical_year: &[f64]) -> Result<Vec<Transition>, PipelineError> {
    Ok(historical_rollout(
        &cfg.plant_spec(),
        historical_year,
        &cfg.baseline,
        cfg.stream(STREAM_PLANT),
    )?)
}

pub fn initial_theta(cfg: &RunConfig) -> ThetaParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream(STREAM_INIT));
    ThetaParams::initial(cfg.layout(), cfg.dt, 0.01, &mut rng)
}

/// The identify-then-optimize model.
pub fn pretrain_ito(cfg: &RunConfig, history: &[Transition]) -> Result<Pretrained, PipelineError> {
    let mut pc = cfg.pretrain.clone();
    pc.dt = cfg.dt;
    Ok(learning::pretrain(history, &initial_theta(cfg), &pc)?)
}

pub fn task(cfg: &RunConfig) -> Task {
    let spec = cfg.plant_spec();
    let mut task = Task::new(cfg.topology(), cfg.day_tariff(), spec.capacities());
    task.comfort = cfg.comfort;
    task.dt = cfg.dt;
    task.plant_seed = cfg.stream(STREAM_PLANT);
    task
}

/// Noise-injected ITO parameters trained on the ordered medoids.
pub fn train_dfl(cfg: &RunConfig, ito: &ThetaParams, bundle: &ScenarioBundle) -> Result<DflOutcome, PipelineError> {
    let start = inject_noise(ito, cfg.train.snr, cfg.stream(STREAM_NOISE));
    let spec = cfg.plant_spec();
    Ok(learning::dfl_train(
        &start,
        &bundle.train,
        &bundle.validation,
        &task(cfg),
        &spec,
        &cfg.train,
    )?)
}

pub fn evaluate(cfg: &RunConfig, theta: &ThetaParams, bundle: &ScenarioBundle, split: &str) -> Result<EvaluatedSplit, PipelineError> {
    let scenarios = bundle
        .split(split)
        .ok_or_else(|| PipelineError::Input(format!("unknown split `{split}`")))?;
    Ok(evaluate_split(theta, split, scenarios, &task(cfg), &cfg.plant_spec()))
}

/// Everything the full protocol produces, in memory.
pub struct RunOutput {
    pub weather: Weather,
    pub bundle: ScenarioBundle,
    pub history: Vec<Transition>,
    pub pretrained: Pretrained,
    pub dfl: DflOutcome,
    pub ito_report: MetricsReport,
    pub dfl_report: MetricsReport,
    pub comparisons: Vec<Comparison>,
    pub evaluated: Vec<(String, EvaluatedSplit, EvaluatedSplit)>,
}

pub fn full_run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::Input(e.to_string()))?;
    let weather = synth_weather(cfg);
    let bundle = build_scenarios(cfg, &weather.scheduling)?;
    let history = baseline_rollout(cfg, &weather.historical)?;
    let pretrained = pretrain_ito(cfg, &history)?;
    let dfl = train_dfl(cfg, &pretrained.theta, &bundle)?;
    let mut ito_report = MetricsReport {
        model: "ito".into(),
        splits: vec![],
    };
    let mut dfl_report = MetricsReport {
        model: "dfl".into(),
        splits: vec![],
    };
    let mut comparisons = vec![];
    let mut evaluated = vec![];
    for split in SPLITS {
        let a = evaluate(cfg, &pretrained.theta, &bundle, split)?;
        let b = evaluate(cfg, &dfl.theta, &bundle, split)?;
        comparisons.push(compare(&a.report, &b.report));
        ito_report.splits.push(a.report.clone());
        dfl_report.splits.push(b.report.clone());
        evaluated.push((split.to_string(), a, b));
    }
    Ok(RunOutput {
        weather,
        bundle,
        history,
        pretrained,
        dfl,
        ito_report,
        dfl_report,
        comparisons,
        evaluated,
    })
}
