//! Command-line front end.
//!
//! Exit codes: 0 success, 1 experiment failure (a run that produced no
//! usable signal), 2 usage or configuration error. The effective seed is
//! resolved `--seed` > `ZL_SEED` > config file, so a scripted sweep can pin
//! seeds without editing scenarios.

use crate::calibrate::{self, load_calibrate_config};
use crate::error::HarnessError;
use crate::experiments;
use crate::report::Outcome;
use crate::scenario::{load_scenario, ScenarioConfig, UarchName};
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Parser)]
#[command(
    name = "zlsim",
    version,
    about = "Fill-buffer leakage simulator and recovery experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Override the scenario seed (wins over ZL_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory to write report.json and experiment artifacts into.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Report format printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Independent seeded repetitions (recovery experiments only).
    #[arg(long, global = true, default_value_t = 1)]
    trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UarchArg {
    PreSkylake,
    Skylake,
}

impl From<UarchArg> for UarchName {
    fn from(u: UarchArg) -> UarchName {
        match u {
            UarchArg::PreSkylake => UarchName::PreSkylake,
            UarchArg::Skylake => UarchName::Skylake,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a sampling window against the configured victim.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Covert-channel experiments.
    #[command(subcommand)]
    Covert(CovertCmd),
    /// Secret-recovery experiments.
    #[command(subcommand)]
    Recover(RecoverCmd),
    /// Measure the fill-buffer size from store latencies.
    FbSize {
        /// Optional scenario supplying the machine section.
        config: Option<PathBuf>,
        /// Core generation; overrides the scenario's machine.uarch.
        #[arg(long, value_enum)]
        uarch: Option<UarchArg>,
        /// Alternate stores between the two hardware threads.
        #[arg(long)]
        dual: bool,
    },
    /// Fit the background noise mix to the accuracy targets.
    Calibrate { config: PathBuf },
}

#[derive(Debug, Subcommand)]
enum SimCmd {
    /// `sim run <scenario.json>`
    Run { config: PathBuf },
}

#[derive(Debug, Subcommand)]
enum CovertCmd {
    /// Loopback throughput and error-rate benchmark.
    Bench { config: PathBuf },
}

#[derive(Debug, Subcommand)]
enum RecoverCmd {
    /// AES-128 key recovery from trigger-windowed samples.
    Aes { config: PathBuf },
    /// URL reconstruction across page reloads.
    Url { config: PathBuf },
    /// Planted-byte detection via the bounds-check gadget.
    Targeted { config: PathBuf },
}

/// `--seed` beats `ZL_SEED` beats the config file.
fn resolve_seed(cli: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::config(format!("ZL_SEED `{v}` is not a 64-bit seed"))),
        None => Ok(config),
    }
}

fn env_seed() -> Option<String> {
    std::env::var("ZL_SEED").ok()
}

fn load_with_seed(path: &Path, cli_seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut scn = load_scenario(path)?;
    scn.seed = resolve_seed(cli_seed, env_seed().as_deref(), scn.seed)?;
    Ok(scn)
}

fn write_results(dir: &Path, outcome: &Outcome) -> Result<()> {
    let io = |e: std::io::Error| {
        HarnessError::experiment(format!("cannot write results under `{}`: {e}", dir.display()))
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json()).map_err(io)?;
    std::fs::write(dir.join("report.csv"), outcome.report.to_csv()).map_err(io)?;
    for a in &outcome.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents).map_err(io)?;
    }
    Ok(())
}

fn emit(outcome: &Outcome, format: Format, out: Option<&Path>) -> Result<()> {
    match format {
        Format::Json => print!("{}", outcome.report.to_json()),
        Format::Csv => print!("{}", outcome.report.to_csv()),
    }
    if let Some(dir) = out {
        write_results(dir, outcome)?;
    }
    Ok(())
}

/// Reject `--trials` where fan-out has no meaning, so a run can't silently
/// ignore what the user asked for.
fn single_trial_only(trials: u64, cmd: &str) -> Result<()> {
    if trials != 1 {
        return Err(HarnessError::config(format!("`{cmd}` does not support --trials")));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cal = calibrate::shipped();
    let outcome = match cli.cmd {
        Cmd::Sim(SimCmd::Run { config }) => {
            single_trial_only(cli.trials, "sim run")?;
            experiments::run_sim(&load_with_seed(&config, cli.seed)?, cal)?
        }
        Cmd::Covert(CovertCmd::Bench { config }) => {
            single_trial_only(cli.trials, "covert bench")?;
            experiments::run_covert(&load_with_seed(&config, cli.seed)?, cal)?
        }
        Cmd::Recover(RecoverCmd::Aes { config }) => {
            experiments::run_recover_aes(&load_with_seed(&config, cli.seed)?, cal, cli.trials)?
        }
        Cmd::Recover(RecoverCmd::Url { config }) => {
            single_trial_only(cli.trials, "recover url")?;
            experiments::run_recover_url(&load_with_seed(&config, cli.seed)?, cal)?
        }
        Cmd::Recover(RecoverCmd::Targeted { config }) => {
            experiments::run_recover_targeted(&load_with_seed(&config, cli.seed)?, cal, cli.trials)?
        }
        Cmd::FbSize { config, uarch, dual } => {
            single_trial_only(cli.trials, "fb-size")?;
            let mut scn = match config {
                Some(path) => load_scenario(&path)?,
                None => ScenarioConfig::default(),
            };
            scn.seed = resolve_seed(cli.seed, env_seed().as_deref(), scn.seed)?;
            if let Some(u) = uarch {
                scn.machine.uarch = u.into();
            }
            experiments::run_fb_size(&scn, dual)?
        }
        Cmd::Calibrate { config } => {
            single_trial_only(cli.trials, "calibrate")?;
            let mut ccfg = load_calibrate_config(&config)?;
            ccfg.seed = resolve_seed(cli.seed, env_seed().as_deref(), ccfg.seed)?;
            experiments::run_calibrate(&ccfg)?.0
        }
    };
    emit(&outcome, cli.format, cli.out.as_deref())
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
