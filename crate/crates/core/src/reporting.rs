//! Metric tables, model comparison and plot-ready CSV files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::learning::{aggregate, evaluate_all, EpochRecord, ScenarioOutcome, SplitMetrics, Task};
use crate::plant_sim::Plant;
use crate::rc::{ThetaParams, ZoneTopology};
use crate::scenarios::DayScenario;
use crate::scheduler::ScheduleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    /// averaged with cluster weights
    pub weighted: SplitMetrics,
    pub unweighted: SplitMetrics,
    /// ex-post minus expected, weighted
    pub cost_error: f64,
    pub scenarios: usize,
    pub failed: usize,
    /// excluded from the JSON so reruns compare byte for byte
    #[serde(skip)]
    pub wall_time: f64,
}

impl SplitReport {
    pub fn from_outcomes(split: &str, outcomes: &[ScenarioOutcome], failed: usize, wall_time: f64) -> Self {
        let weighted = aggregate(outcomes, false);
        Self {
            split: split.into(),
            cost_error: weighted.expost_cost - weighted.expected_cost,
            unweighted: aggregate(outcomes, true),
            weighted,
            scenarios: outcomes.len(),
            failed,
            wall_time,
        }
    }

    pub fn is_partial(&self) -> bool {
        self.failed > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub splits: Vec<SplitReport>,
}

impl MetricsReport {
    pub fn split(&self, name: &str) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// One row per metric, one column per split.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("metric");
        for sp in &self.splits {
            let _ = write!(s, ",{}", sp.split);
        }
        s.push('\n');
        let rows: [(&str, fn(&SplitReport) -> f64); 9] = [
            ("hier_loss", |r| r.weighted.hier_loss),
            ("mae", |r| r.weighted.mae),
            ("mse", |r| r.weighted.mse),
            ("err_mean", |r| r.weighted.err_mean),
            ("err_std", |r| r.weighted.err_std),
            ("expected_cost", |r| r.weighted.expected_cost),
            ("expost_cost", |r| r.weighted.expost_cost),
            ("cost_error", |r| r.cost_error),
            ("wall_time", |r| r.wall_time),
        ];
        for (name, get) in rows {
            s.push_str(name);
            for sp in &self.splits {
                let _ = write!(s, ",{}", get(sp));
            }
            s.push('\n');
        }
        s
    }
}

/// Outcomes of one evaluated split, kept for plot files.
pub struct EvaluatedSplit {
    pub report: SplitReport,
    pub outcomes: Vec<ScenarioOutcome>,
}

pub fn evaluate_split(
    theta: &ThetaParams,
    split: &str,
    scenarios: &[DayScenario],
    task: &Task,
    plant: &dyn Plant,
) -> EvaluatedSplit {
    let start = Instant::now();
    let (outcomes, failed) = evaluate_all(theta, scenarios, task, plant);
    let report = SplitReport::from_outcomes(split, &outcomes, failed, start.elapsed().as_secs_f64());
    EvaluatedSplit { report, outcomes }
}

pub fn evaluate_model(
    theta: &ThetaParams,
    model: &str,
    splits: &[(&str, &[DayScenario])],
    task: &Task,
    plant: &dyn Plant,
) -> MetricsReport {
    MetricsReport {
        model: model.into(),
        splits: splits
            .iter()
            .map(|(name, sc)| evaluate_split(theta, name, sc, task, plant).report)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub dfl_hier_loss_better: bool,
    pub dfl_cost_error_better: bool,
    pub dfl_expost_cost_leq: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub ito: f64,
    pub dfl: f64,
    /// dfl / ito (1 when both are zero)
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: String,
    pub rows: Vec<ComparisonRow>,
    pub verdict: Verdict,
}

fn ratio(dfl: f64, ito: f64) -> f64 {
    if dfl == ito {
        1.0
    } else {
        dfl / ito
    }
}

/// Side-by-side metrics. Every flag is a strict improvement, so identical
/// reports raise none.
pub fn compare(ito: &SplitReport, dfl: &SplitReport) -> Comparison {
    let pairs = [
        ("hier_loss", ito.weighted.hier_loss, dfl.weighted.hier_loss),
        ("mae", ito.weighted.mae, dfl.weighted.mae),
        ("mse", ito.weighted.mse, dfl.weighted.mse),
        ("err_mean", ito.weighted.err_mean, dfl.weighted.err_mean),
        ("err_std", ito.weighted.err_std, dfl.weighted.err_std),
        ("expected_cost", ito.weighted.expected_cost, dfl.weighted.expected_cost),
        ("expost_cost", ito.weighted.expost_cost, dfl.weighted.expost_cost),
        ("cost_error", ito.cost_error, dfl.cost_error),
    ];
    Comparison {
        split: ito.split.clone(),
        rows: pairs
            .iter()
            .map(|&(m, i, d)| ComparisonRow {
                metric: m.into(),
                ito: i,
                dfl: d,
                ratio: ratio(d, i),
            })
            .collect(),
        verdict: Verdict {
            dfl_hier_loss_better: dfl.weighted.hier_loss < ito.weighted.hier_loss,
            dfl_cost_error_better: dfl.cost_error.abs() < ito.cost_error.abs(),
            dfl_expost_cost_leq: dfl.weighted.expost_cost < ito.weighted.expost_cost,
        },
    }
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,ito,dfl,ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.metric, r.ito, r.dfl, r.ratio);
        }
        s
    }

    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

const CURVE_HEADER: &str = "epoch,lr,hier_loss,mae,mse,err_mean,err_std,expected_cost,expost_cost";

/// Per-epoch curves of one split.
pub fn curves_csv(log: &[EpochRecord], split: &str) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for r in log.iter().filter(|r| r.split == split) {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.lr, m.hier_loss, m.mae, m.mse, m.err_mean, m.err_std, m.expected_cost, m.expost_cost
        );
    }
    s
}

/// Flat training log: `epoch,split,...`.
pub fn training_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,split,hier_loss,mae,mse,err_mean,err_std,expected_cost,expost_cost\n");
    for r in log {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, r.split, m.hier_loss, m.mae, m.mse, m.err_mean, m.err_std, m.expected_cost, m.expost_cost
        );
    }
    s
}

/// Expected and ex-post power at zone, floor and building level. Floor rows
/// sum their zones; the building row sums the floor rows.
pub fn power_levels_csv(expected: &[Vec<f64>], observed: &[Vec<f64>], topology: &ZoneTopology) -> String {
    let mut s = String::from("t,level,id,expected_kw,expost_kw\n");
    for t in 0..expected.len() {
        for z in 0..topology.num_zones {
            let _ = writeln!(s, "{t},zone,{z},{},{}", expected[t][z], observed[t][z]);
        }
        let mut building = (0.0, 0.0);
        for (f, members) in topology.floors.iter().enumerate() {
            let e: f64 = members.iter().map(|&z| expected[t][z]).sum();
            let o: f64 = members.iter().map(|&z| observed[t][z]).sum();
            building.0 += e;
            building.1 += o;
            let _ = writeln!(s, "{t},floor,{f},{e},{o}");
        }
        let _ = writeln!(s, "{t},building,0,{},{}", building.0, building.1);
    }
    s
}

/// Expected vs observed temperature with the comfort target and weight of
/// the step ending at each row.
pub fn temperature_csv(expected: &[Vec<f64>], observed: &[Vec<f64>], config: &ScheduleConfig) -> String {
    let mut s = String::from("t,zone,tau_expected,tau_obs,target,weight\n");
    for t in 0..expected.len() {
        for z in 0..expected[t].len() {
            let (target, weight) = if t == 0 {
                (f64::NAN, 0.0)
            } else {
                (config.comfort_target[t - 1][z], config.comfort_weight[t - 1][z])
            };
            let _ = writeln!(s, "{t},{z},{},{},{target},{weight}", expected[t][z], observed[t][z]);
        }
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
}

/// `{root}/{split}/curves.csv` for the train and validation splits.
pub fn emit_training_curves(root: &Path, log: &[EpochRecord]) -> std::io::Result<()> {
    for split in ["train", "validation"] {
        write_file(&root.join(split).join("curves.csv"), &curves_csv(log, split))?;
    }
    Ok(())
}

/// Day traces of one evaluated split under `{root}/{split}/`.
pub fn emit_day_traces(root: &Path, split: &str, outcomes: &[ScenarioOutcome], task: &Task) -> std::io::Result<()> {
    let dir = root.join(split);
    for o in outcomes {
        let label = format!("day{:03}", o.day);
        write_file(
            &dir.join(format!("{label}_power.csv")),
            &power_levels_csv(&o.scheduled.result.p_hvac, &o.trace.p_hvac_obs, &task.topology),
        )?;
        write_file(
            &dir.join(format!("{label}_temperature.csv")),
            &temperature_csv(&o.scheduled.result.tau_in, &o.trace.tau_obs, &o.config),
        )?;
    }
    Ok(())
}
