//! `bdce` — experiment driver for beam-delay domain channel estimation.
//!
//! Subcommands:
//!   run       Monte-Carlo sweep over a scenario, CSV output.
//!   selftest  Oracle and property checks, one pass/fail line each.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use bdce_core::experiment::{
    csv_string, run_experiment, EstimatorKind, ExperimentOptions, ExperimentSpec, SweepVar,
};
use bdce_core::ScenarioConfig;

#[derive(Parser)]
#[command(name = "bdce", about = "Beam-delay domain channel estimation experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 64 antennas, 16 pilot subcarriers: dictionary fits easily in memory.
    Desk,
    /// 256 antennas, 64 pilot subcarriers: dense dictionary needs tens of
    /// gigabytes; building it fails with a sizing report unless the memory
    /// limit is raised.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep and write one CSV row per
    /// (sweep value, estimator).
    Run {
        /// Scenario JSON file (overrides --preset).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in scenario preset.
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        /// Swept variable: snr_db | n_pilot_symbols | eta_max | bandwidth.
        #[arg(long)]
        sweep: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Monte-Carlo trials per sweep value.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Master seed; per-trial seeds derive from it deterministically.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated estimators: hmp, mdgpp, somp, oracle.
        #[arg(long, value_delimiter = ',', default_value = "hmp,mdgpp")]
        estimators: Vec<String>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Write wall_ms as 0 so identical runs give identical bytes.
        #[arg(long, default_value_t = false)]
        redact_timing: bool,
        /// Draw path parameters on grid tuples instead of the continuum.
        #[arg(long, default_value_t = false)]
        on_grid: bool,
        /// Dictionary memory limit in MiB.
        #[arg(long)]
        dict_limit_mib: Option<usize>,
        /// Tolerated flagged (failed) trials before a nonzero exit.
        #[arg(long, default_value_t = 0)]
        max_flagged: usize,
    },
    /// Run the oracle and property checks.
    Selftest,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            preset,
            sweep,
            values,
            trials,
            seed,
            estimators,
            out,
            threads,
            redact_timing,
            on_grid,
            dict_limit_mib,
            max_flagged,
        } => {
            let scenario = match config {
                Some(path) => ScenarioConfig::from_json_file(&path)
                    .with_context(|| format!("loading scenario from {}", path.display()))?,
                None => match preset {
                    Preset::Desk => ScenarioConfig::desk_scale(),
                    Preset::Full => ScenarioConfig::full_scale(),
                },
            };
            let sweep: SweepVar = sweep.parse()?;
            let estimators = estimators
                .iter()
                .map(|s| s.parse::<EstimatorKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let spec = ExperimentSpec {
                scenario,
                sweep,
                values,
                trials,
                seed,
                estimators,
                out: Some(out.clone()),
            };
            let mut opts = ExperimentOptions {
                threads,
                redact_wall_time: redact_timing,
                on_grid,
                ..ExperimentOptions::default()
            };
            if let Some(mib) = dict_limit_mib {
                opts.dictionary_limit = mib << 20;
            }

            let records = run_experiment(&spec, &opts)?;
            std::fs::write(&out, csv_string(&records))
                .with_context(|| format!("writing {}", out.display()))?;

            let mut flagged = 0;
            for r in &records {
                println!(
                    "{} = {:<12} {:<8} nmse {:>9.3} dB over {} trials ({} flagged)",
                    r.sweep_var.name(),
                    r.sweep_value,
                    r.estimator.name(),
                    r.nmse_db,
                    r.trials,
                    r.failed_trials
                );
                flagged += r.failed_trials;
            }
            println!("wrote {}", out.display());
            if flagged > max_flagged {
                bail!("{flagged} flagged trials exceed the allowed {max_flagged}");
            }
            Ok(())
        }
        Command::Selftest => {
            let mut failures = 0;
            for check in bdce_core::selftest::run_all() {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", check.name, check.detail);
                if !check.passed {
                    failures += 1;
                }
            }
            if failures > 0 {
                bail!("{failures} selftest check(s) failed");
            }
            Ok(())
        }
    }
}
