//! One function per subcommand. Every stage reads its inputs from the run
//! directory and writes its outputs back there, so stages can run in
//! separate processes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hvac_dfl::config::{ConfigError, RunConfig};
use hvac_dfl::pipeline::{self, PipelineError, ScenarioBundle, Weather, SPLITS};
use hvac_dfl::plant_sim::Transition;
use hvac_dfl::rc::{self, ThetaParams};
use hvac_dfl::scenarios;
use hvac_dfl::reporting::{self, compare, write_file, MetricsReport, SplitReport, Verdict};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{digest_bytes, RunManifest, StageLog};

pub const HISTORICAL_WEATHER: &str = "weather/historical.csv";
pub const SCHEDULING_WEATHER: &str = "weather/scheduling.csv";
pub const SCENARIOS: &str = "scenarios.json";
pub const MEDOIDS: &str = "medoids.csv";
pub const HISTORY: &str = "history.json";
pub const PRETRAIN_LOG: &str = "models/pretrain_log.csv";
pub const TRAINING_LOG: &str = "training/log.csv";
pub const TRAINING_SUMMARY: &str = "training/summary.json";
pub const VERDICT: &str = "verdict.json";
pub const STRESS: &str = "stress.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input file(s): {}", .0.join(", "))]
    MissingInput(Vec<String>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::MissingInput(_) => 4,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let message = self.to_string();
        match self {
            CliError::MissingInput(paths) => json!({"error": "missing_input", "message": message, "paths": paths}),
            CliError::Config(ConfigError::Field { path, .. }) => {
                json!({"error": "config", "message": message, "field": path})
            }
            CliError::Config(ConfigError::Parse(_)) => json!({"error": "config", "message": message}),
            CliError::Pipeline(_) => json!({"error": "pipeline", "message": message}),
            CliError::Corrupt { path, .. } => json!({"error": "corrupt_input", "message": message, "paths": [path]}),
            CliError::Io(_) => json!({"error": "io", "message": message}),
        }
    }
}

fn corrupt(path: &Path, message: impl ToString) -> CliError {
    CliError::Corrupt {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Model {
    Ito,
    Dfl,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Ito => "ito",
            Model::Dfl => "dfl",
        }
    }

    fn checkpoint(self) -> String {
        format!("models/{}.ckpt", self.name())
    }
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub config_path: String,
    config_digest: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf, config_path: String) -> Result<Self, CliError> {
        cfg.validate()?;
        let config_digest = digest_bytes(cfg.to_toml().as_bytes());
        Ok(Self {
            cfg,
            out,
            config_path,
            config_digest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn fresh_manifest(&self) -> RunManifest {
        let streams = [
            ("historical_weather", pipeline::STREAM_HISTORICAL_WEATHER),
            ("scheduling_weather", pipeline::STREAM_SCHEDULING_WEATHER),
            ("sampling", pipeline::STREAM_SAMPLING),
            ("plant", pipeline::STREAM_PLANT),
            ("noise", pipeline::STREAM_NOISE),
            ("init", pipeline::STREAM_INIT),
        ];
        RunManifest {
            run_id: self.config_digest[..16].to_string(),
            config_path: self.config_path.clone(),
            seed: self.cfg.seed,
            seeds: streams
                .iter()
                .map(|&(name, s)| (name.to_string(), self.cfg.stream(s)))
                .collect::<BTreeMap<_, _>>(),
            stages: vec![],
        }
    }

    /// Checks inputs, runs `body`, then records digests of everything it
    /// read and wrote.
    fn stage<F>(&self, name: &str, inputs: &[String], body: F) -> Result<(), CliError>
    where
        F: FnOnce(&Ctx) -> Result<Vec<PathBuf>, CliError>,
    {
        let missing: Vec<String> = inputs
            .iter()
            .map(|r| self.path(r))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::MissingInput(missing));
        }
        log::info!("stage {name}");
        let mut log = StageLog::start(&self.out, name, &self.config_digest);
        for r in inputs {
            log.input(&self.path(r))?;
        }
        let written = body(self)?;
        let config = self.path("config.toml");
        write_file(&config, &self.cfg.to_toml())?;
        log.output(&config)?;
        for p in &written {
            log.output(p)?;
        }
        let mut manifest = RunManifest::load_or_new(&self.out, || self.fresh_manifest())?;
        if let Some(prev) = manifest.stages.iter().find(|s| s.config_digest != self.config_digest) {
            log::warn!("stage {} of this run used a different config", prev.stage);
        }
        manifest.record(log.finish());
        manifest.save(&self.out)?;
        Ok(())
    }

    fn write(&self, rel: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let p = self.path(rel);
        write_file(&p, text)?;
        written.push(p);
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, CliError> {
        let p = self.path(rel);
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| corrupt(&p, e))
    }

    fn read_weather(&self, rel: &str) -> Result<Vec<f64>, CliError> {
        let p = self.path(rel);
        let file = std::io::BufReader::new(std::fs::File::open(&p)?);
        scenarios::read_weather_csv(file).map_err(|e| corrupt(&p, e))
    }

    fn read_model(&self, model: Model) -> Result<ThetaParams, CliError> {
        let p = self.path(&model.checkpoint());
        let text = std::fs::read_to_string(&p)?;
        let (theta, topology) = rc::load_checkpoint(&text).map_err(|e| corrupt(&p, e))?;
        if topology != self.cfg.topology() {
            return Err(corrupt(&p, "zone topology differs from the configured building"));
        }
        Ok(theta)
    }

    fn report_rel(model: Model, split: &str) -> String {
        format!("{}/{split}/report.json", model.name())
    }
}

fn json_text<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn weather_csv(year: &[f64]) -> String {
    let mut buf = Vec::new();
    scenarios::write_weather_csv(year, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

pub fn synth_weather(ctx: &Ctx) -> Result<(), CliError> {
    ctx.stage("synth-weather", &[], |ctx| {
        let Weather { historical, scheduling } = pipeline::synth_weather(&ctx.cfg);
        let mut w = vec![];
        ctx.write(HISTORICAL_WEATHER, &weather_csv(&historical), &mut w)?;
        ctx.write(SCHEDULING_WEATHER, &weather_csv(&scheduling), &mut w)?;
        Ok(w)
    })
}

pub fn cluster(ctx: &Ctx) -> Result<(), CliError> {
    ctx.stage("cluster", &[SCHEDULING_WEATHER.into()], |ctx| {
        let year = ctx.read_weather(SCHEDULING_WEATHER)?;
        let bundle = pipeline::build_scenarios(&ctx.cfg, &year)?;
        let c = &bundle.clustering;
        let fixed = bundle.extremes.map(|e| e.to_vec()).unwrap_or_default();
        let mut medoids = String::from("cluster,day,weight,members,fixed,train_position\n");
        for (k, &day) in c.medoids.iter().enumerate() {
            let members = c.assignment.iter().filter(|&&a| a == k).count();
            let position = bundle.order.iter().position(|&o| o == k).unwrap_or(usize::MAX);
            medoids.push_str(&format!(
                "{k},{day},{},{members},{},{position}\n",
                c.weights[k],
                fixed.contains(&day)
            ));
        }
        let mut w = vec![];
        ctx.write(SCENARIOS, &json_text(&bundle), &mut w)?;
        ctx.write(MEDOIDS, &medoids, &mut w)?;
        Ok(w)
    })
}

pub fn baseline_rollout(ctx: &Ctx) -> Result<(), CliError> {
    ctx.stage("baseline-rollout", &[HISTORICAL_WEATHER.into()], |ctx| {
        let year = ctx.read_weather(HISTORICAL_WEATHER)?;
        let history = pipeline::baseline_rollout(&ctx.cfg, &year)?;
        let mut w = vec![];
        ctx.write(HISTORY, &serde_json::to_string(&history).expect("serializable"), &mut w)?;
        Ok(w)
    })
}

pub fn pretrain(ctx: &Ctx) -> Result<(), CliError> {
    ctx.stage("pretrain", &[HISTORY.into()], |ctx| {
        let history: Vec<Transition> = ctx.read_json(HISTORY)?;
        let pre = pipeline::pretrain_ito(&ctx.cfg, &history)?;
        let mut log = String::from("epoch,train_mse,holdout_mse\n");
        for r in &pre.log {
            log.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.holdout_mse));
        }
        let mut w = vec![];
        let ckpt = rc::save_checkpoint(&pre.theta, &ctx.cfg.topology());
        ctx.write(&Model::Ito.checkpoint(), &ckpt, &mut w)?;
        ctx.write(PRETRAIN_LOG, &log, &mut w)?;
        Ok(w)
    })
}

pub fn train_dfl(ctx: &Ctx) -> Result<(), CliError> {
    ctx.stage("train-dfl", &[SCENARIOS.into(), Model::Ito.checkpoint()], |ctx| {
        let bundle: ScenarioBundle = ctx.read_json(SCENARIOS)?;
        let ito = ctx.read_model(Model::Ito)?;
        let out = pipeline::train_dfl(&ctx.cfg, &ito, &bundle)?;
        let mut w = vec![];
        let ckpt = rc::save_checkpoint(&out.theta, &ctx.cfg.topology());
        ctx.write(&Model::Dfl.checkpoint(), &ckpt, &mut w)?;
        ctx.write(TRAINING_LOG, &reporting::training_log_csv(&out.log), &mut w)?;
        let summary = json!({
            "best_epoch": out.best_epoch,
            "best_validation": out.best_validation,
            "skipped": out.skipped,
            "rejected_steps": out.rejected_steps,
        });
        ctx.write(TRAINING_SUMMARY, &json_text(&summary), &mut w)?;
        for split in ["train", "validation"] {
            let rel = format!("training/{split}/curves.csv");
            ctx.write(&rel, &reporting::curves_csv(&out.log, split), &mut w)?;
        }
        Ok(w)
    })
}

/// Resolves `all` to every split, otherwise checks the name.
pub fn resolve_splits(split: &str) -> Result<Vec<&'static str>, CliError> {
    if split == "all" {
        return Ok(SPLITS.to_vec());
    }
    SPLITS
        .iter()
        .find(|s| **s == split)
        .map(|s| vec![*s])
        .ok_or_else(|| {
            CliError::Config(ConfigError::Field {
                path: "--split".into(),
                message: format!("expected one of {} or all, got `{split}`", SPLITS.join(", ")),
            })
        })
}

pub fn evaluate(ctx: &Ctx, model: Model, splits: &[&str]) -> Result<(), CliError> {
    let name = format!("evaluate:{}:{}", model.name(), splits.join("+"));
    ctx.stage(&name, &[SCENARIOS.into(), model.checkpoint()], |ctx| {
        let bundle: ScenarioBundle = ctx.read_json(SCENARIOS)?;
        let theta = ctx.read_model(model)?;
        let task = pipeline::task(&ctx.cfg);
        let mut w = vec![];
        for &split in splits {
            let ev = pipeline::evaluate(&ctx.cfg, &theta, &bundle, split)?;
            if ev.report.is_partial() {
                log::warn!("{} on {split}: {} scenario(s) failed", model.name(), ev.report.failed);
            }
            let root = ctx.path(model.name());
            reporting::emit_day_traces(&root, split, &ev.outcomes, &task)?;
            for o in &ev.outcomes {
                for kind in ["power", "temperature"] {
                    w.push(root.join(split).join(format!("day{:03}_{kind}.csv", o.day)));
                }
            }
            let single = MetricsReport {
                model: model.name().into(),
                splits: vec![ev.report.clone()],
            };
            ctx.write(&Ctx::report_rel(model, split), &json_text(&ev.report), &mut w)?;
            ctx.write(&format!("{}/{split}/table.csv", model.name()), &single.table_csv(), &mut w)?;
        }
        Ok(w)
    })
}

/// Gathers per-split reports of both models into metric files, side by
/// side comparisons and a verdict per split.
pub fn summarize(ctx: &Ctx, splits: &[&str]) -> Result<(), CliError> {
    let inputs: Vec<String> = [Model::Ito, Model::Dfl]
        .iter()
        .flat_map(|&m| splits.iter().map(move |s| Ctx::report_rel(m, s)))
        .collect();
    ctx.stage(&format!("summarize:{}", splits.join("+")), &inputs, |ctx| {
        let mut reports = [Model::Ito, Model::Dfl].map(|m| MetricsReport {
            model: m.name().into(),
            splits: vec![],
        });
        for (r, m) in reports.iter_mut().zip([Model::Ito, Model::Dfl]) {
            for s in splits {
                r.splits.push(ctx.read_json::<SplitReport>(&Ctx::report_rel(m, s))?);
            }
        }
        let [ito, dfl] = &reports;
        let mut w = vec![];
        let mut verdicts: BTreeMap<String, Verdict> = BTreeMap::new();
        for (a, b) in ito.splits.iter().zip(&dfl.splits) {
            let c = compare(a, b);
            ctx.write(&format!("{}/comparison.csv", a.split), &c.to_csv(), &mut w)?;
            verdicts.insert(a.split.clone(), c.verdict);
        }
        for r in &reports {
            ctx.write(&format!("metrics/{}.json", r.model), &(r.to_json() + "\n"), &mut w)?;
            ctx.write(&format!("metrics/{}.csv", r.model), &r.table_csv(), &mut w)?;
        }
        ctx.write(VERDICT, &json_text(&verdicts), &mut w)?;
        if let (Some(stress), true) = (stress_summary(ito, dfl), splits.contains(&"hot-year")) {
            ctx.write(STRESS, &json_text(&stress), &mut w)?;
        }
        Ok(w)
    })
}

fn stress_summary(ito: &MetricsReport, dfl: &MetricsReport) -> Option<serde_json::Value> {
    let degradation = |r: &MetricsReport| -> Option<f64> {
        let test = r.split("test")?.weighted.hier_loss;
        let hot = r.split("hot-year")?.weighted.hier_loss;
        Some((hot - test) / test)
    };
    let (di, dd) = (degradation(ito)?, degradation(dfl)?);
    let (ci, cd) = (ito.split("hot-year")?.cost_error, dfl.split("hot-year")?.cost_error);
    Some(json!({
        "loss_degradation": {"ito": di, "dfl": dd},
        "hot_year_cost_error": {"ito": ci, "dfl": cd},
        "cost_error_ratio": cd.abs() / ci.abs(),
        "dfl_degrades_no_more": dd <= di,
    }))
}

pub fn stress_hot_year(ctx: &Ctx) -> Result<(), CliError> {
    let splits = ["test", "hot-year"];
    for m in [Model::Ito, Model::Dfl] {
        evaluate(ctx, m, &splits)?;
    }
    summarize(ctx, &splits)
}

pub fn full_run(ctx: &Ctx) -> Result<(), CliError> {
    synth_weather(ctx)?;
    cluster(ctx)?;
    baseline_rollout(ctx)?;
    pretrain(ctx)?;
    train_dfl(ctx)?;
    for m in [Model::Ito, Model::Dfl] {
        evaluate(ctx, m, &SPLITS)?;
    }
    summarize(ctx, &SPLITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weather_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = Ctx::new(RunConfig::default(), dir.path().into(), "default".into()).unwrap();
        let year: Vec<f64> = (0..8760).map(|h| (h as f64 * 0.37).sin() * 13.1 + 1e-13).collect();
        write_file(&ctx.path("w.csv"), &weather_csv(&year)).unwrap();
        assert_eq!(ctx.read_weather("w.csv").unwrap(), year);
    }

    #[test]
    fn bad_weather_line_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = Ctx::new(RunConfig::default(), dir.path().into(), "default".into()).unwrap();
        write_file(&ctx.path("w.csv"), "hour,temp_c\n0,1.5\n1,oops\n").unwrap();
        let e = ctx.read_weather("w.csv").unwrap_err();
        assert!(matches!(e, CliError::Corrupt { .. }));
        assert!(e.to_string().contains("line 3"));
    }

    #[test]
    fn splits_resolve() {
        assert_eq!(resolve_splits("all").unwrap().len(), 4);
        assert_eq!(resolve_splits("hot-year").unwrap(), ["hot-year"]);
        let e = resolve_splits("winter").unwrap_err();
        assert_eq!(e.to_json()["field"], "--split");
    }

    #[test]
    fn missing_inputs_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = Ctx::new(RunConfig::default(), dir.path().into(), "default".into()).unwrap();
        let e = train_dfl(&ctx).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert_eq!(e.to_json()["paths"].as_array().unwrap().len(), 2);
    }
}
