use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use she_core::array_model::SystemConfig;
use she_core::config::{load_config, ConfigFile};
use she_core::driver::{check_constraints, run_variant, RunOptions, RunResult, RunStatus, Variant};
use she_core::experiment::{run_experiment, ExperimentFile};
use she_core::io::{self, SavedBeamformer};
use she_core::metrics::beampattern_effective;
use she_core::{linear_to_db, Result};

#[derive(Parser)]
#[command(name = "she", version, about = "Secure hybrid beamforming for DFRC base stations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the proposed design on one channel realization.
    Run(RunArgs),
    /// Run a benchmark variant on one channel realization.
    Baseline {
        /// SHE, FD-BF, ConvHBF, CommOnly-I2S or CommOnly-Conv.
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a Monte Carlo sweep described by a TOML spec.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the transmit beampattern of a saved beamformer as CSV.
    Pattern {
        #[arg(long)]
        beamformer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
        stop: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
    },
    /// Parse a scenario (or sweep spec) and print the resolved settings.
    ValidateConfig {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        config: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; the desk preset is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn scenario(path: Option<&Path>) -> Result<(SystemConfig, RunOptions)> {
    match path {
        Some(p) => load_config(p),
        None => ConfigFile::default().resolve(),
    }
}

fn report(result: &RunResult, config: &SystemConfig) {
    let m = &result.metrics;
    let checks = check_constraints(result, config);
    println!("variant            {}", result.variant);
    println!("status             {}", result.status);
    println!("worst-case SR      {:.6} bit/s/Hz", m.secrecy_rate_worst);
    println!("min user rate      {:.6} bit/s/Hz", m.min_lue_rate);
    println!(
        "max eve rate       {:.6} bit/s/Hz",
        m.eue_rate_worst.iter().copied().fold(0.0, f64::max)
    );
    println!("min radar SINR     {:.3} dB", linear_to_db(m.min_radar_sinr));
    println!("detection prob.    {:.6}", m.detection_probability);
    println!("transmit power     {:.9}", m.transmit_power);
    println!("outer iterations   {}", result.trace.len());
    println!("wall time          {:.2} s", result.wall_time);
    println!("constraints        {}", if checks.all() { "satisfied" } else { "VIOLATED" });
    if result.status == RunStatus::InfeasibleRelaxed {
        eprintln!(
            "warning: radar SINR target relaxed to {:.2} dB (requested {:.2} dB)",
            linear_to_db(result.achieved_gamma_radar),
            linear_to_db(config.radar_sinr_target)
        );
    }
    if result.power_slack {
        eprintln!("warning: power budget not fully used to keep constraints satisfied");
    }
}

fn single_run(variant: Variant, args: &RunArgs) -> Result<ExitCode> {
    let (config, options) = scenario(args.config.as_deref())?;
    let result = run_variant(&config, variant, args.seed, &options)?;
    io::write_run(&args.out, &result, &config)?;
    report(&result, &config);
    println!("results written to {}", args.out.display());
    Ok(if result.status == RunStatus::InfeasibleRelaxed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => single_run(Variant::She, &args),
        Command::Baseline { variant, run } => single_run(variant.parse()?, &run),
        Command::Sweep { spec, out } => {
            let mut spec = ExperimentFile::load(&spec)?.resolve()?;
            if let Some(dir) = out {
                spec.output_dir = dir;
            }
            let report = run_experiment(&spec)?;
            println!("{:<14} {:>10} {:>10} {:>10} {:>7} {:>8}", "variant", spec.parameter.name(), "mean SR", "std", "trials", "failed");
            for a in &report.aggregates {
                println!(
                    "{:<14} {:>10} {:>10.4} {:>10.4} {:>7} {:>8}",
                    a.variant.name(),
                    a.value,
                    a.mean,
                    a.std,
                    a.trials,
                    a.failures
                );
            }
            let relaxed: usize = report.aggregates.iter().map(|a| a.relaxed).sum();
            println!("results written to {}", spec.output_dir.display());
            if relaxed > 0 {
                eprintln!("warning: {relaxed} trial(s) ran with a relaxed radar SINR target");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Pattern { beamformer, out, start, stop, step } => {
            if !(step > 0.0) || !(stop >= start) {
                return Err(she_core::SheError::InvalidConfig("pattern needs step > 0 and stop >= start".into()));
            }
            let saved: SavedBeamformer = io::read_json(&beamformer)?;
            let effective = saved.beamformers()?.effective();
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            let angles: Vec<f64> = (0..count).map(|i| start + step * i as f64).collect();
            let gains = beampattern_effective(&effective, &angles, &saved.config);
            io::write_csv(&out, &io::beampattern_rows(&angles, &gains))?;
            println!("{} angles written to {}", angles.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { config, spec } => {
            let text = match (config, spec) {
                (Some(path), _) => {
                    let (c, o) = load_config(&path)?;
                    serde_json::to_string_pretty(&serde_json::json!({ "system": c, "solver": o }))?
                }
                (None, Some(path)) => serde_json::to_string_pretty(&ExperimentFile::load(&path)?.resolve()?)?,
                (None, None) => unreachable!("clap requires one of --config or --spec"),
            };
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
