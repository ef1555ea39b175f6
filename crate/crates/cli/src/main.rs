mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hvac_dfl::config::RunConfig;

use stages::{CliError, Ctx, Model};

/// Decision-focused identification of building thermal models for
/// day-ahead HVAC scheduling.
///
/// Every flag can also be set through an environment variable prefixed
/// with `DFLHVAC_`, for example `DFLHVAC_SEED=11`. Flags win over the
/// environment, and both win over the config file.
#[derive(Debug, Parser)]
#[command(name = "hvac-dfl", version)]
struct Cli {
    /// Config file, or `default` for the built-in configuration
    #[arg(long, global = true, env = "DFLHVAC_CONFIG", default_value = "default")]
    config: String,
    #[arg(long, global = true, env = "DFLHVAC_SEED")]
    seed: Option<u64>,
    /// Run directory
    #[arg(long, global = true, env = "DFLHVAC_OUT", default_value = "runs/default")]
    out: PathBuf,
    /// Desk-scale building with this many zones, floors of at most five
    #[arg(long, global = true, env = "DFLHVAC_ZONES")]
    zones: Option<usize>,
    /// Cap on DFL training epochs
    #[arg(long, global = true, env = "DFLHVAC_EPOCHS")]
    epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Fixed {
    Extremes,
    None,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the historical and scheduling weather years
    SynthWeather,
    /// Pick representative days and derive every scenario set
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        fixed: Option<Fixed>,
    },
    /// Operate the plant for a year under the baseline controller
    BaselineRollout,
    /// Fit the identify-then-optimize model on the history
    Pretrain,
    /// Decision-focused training from the noise-injected ITO model
    TrainDfl,
    /// Schedule and simulate one model on one split (or `all`)
    Evaluate {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Both models on the test and hot-year sets, with degradation summary
    StressHotYear,
    /// Every stage in order
    FullRun,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = if cli.config == "default" {
        RunConfig::default()
    } else {
        let path = PathBuf::from(&cli.config);
        if !path.is_file() {
            return Err(CliError::MissingInput(vec![cli.config.clone()]));
        }
        RunConfig::from_toml(&std::fs::read_to_string(&path)?)?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.zones {
        cfg = cfg.with_zones(n);
    }
    if let Some(n) = cli.epochs {
        cfg.train.max_epochs = n;
        cfg.train.patience = cfg.train.patience.min(n);
    }
    if let Command::Cluster { k, fixed } = &cli.command {
        if let Some(k) = k {
            cfg.cluster.k = *k;
        }
        if let Some(f) = fixed {
            cfg.cluster.fixed_extremes = *f == Fixed::Extremes;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let ctx = Ctx::new(cfg, cli.out.clone(), cli.config.clone())?;
    match cli.command {
        Command::SynthWeather => stages::synth_weather(&ctx),
        Command::Cluster { .. } => stages::cluster(&ctx),
        Command::BaselineRollout => stages::baseline_rollout(&ctx),
        Command::Pretrain => stages::pretrain(&ctx),
        Command::TrainDfl => stages::train_dfl(&ctx),
        Command::Evaluate { model, split } => stages::evaluate(&ctx, model, &stages::resolve_splits(&split)?),
        Command::StressHotYear => stages::stress_hot_year(&ctx),
        Command::FullRun => stages::full_run(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = serde_json::json!({"error": "usage", "message": e.to_string().trim_end()});
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("hvac-dfl").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_the_config() {
        let cli = parse(&["cluster", "--k", "6", "--fixed", "none", "--seed", "11", "--zones", "4", "--epochs", "3"]);
        let cfg = load_config(&cli).unwrap();
        assert_eq!((cfg.cluster.k, cfg.cluster.fixed_extremes), (6, false));
        assert_eq!((cfg.seed, cfg.train.max_epochs), (11, 3));
        assert_eq!(cfg.topology().num_zones, 4);
    }

    #[test]
    fn zero_zones_fail_validation_with_a_field_path() {
        let cli = parse(&["synth-weather", "--zones", "0"]);
        let cfg = load_config(&cli).unwrap();
        let e = Ctx::new(cfg, "unused".into(), "default".into()).err().unwrap();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_json()["field"].as_str().unwrap().starts_with("building."));
    }

    #[test]
    fn evaluate_requires_a_model() {
        assert!(Cli::try_parse_from(["hvac-dfl", "evaluate"]).is_err());
    }
}
