//! Batch front end: parse a scenario config, dispatch the harness, write
//! artifacts, and print a summary table.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spikefilt::config::{parse_config, ScenarioConfig};
use spikefilt::harness::{
    monte_carlo, neuron_sweep, run_single, runtime_profile, MetricsRecord, Scenario,
};
use spikefilt::report::ArtifactLog;
use spikefilt::systems::validate_jacobians;
use spikefilt::Error;

#[derive(Parser)]
#[command(name = "spikefilt", version, about = "Spiking and classical state-estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory, all filters, per-sample estimate CSVs.
    Run(CommonArgs),
    /// Monte-Carlo batch: RMSE series, summary table, spike rasters.
    Mc(CommonArgs),
    /// Neuron-count sweep: combined RMSE per (filter, N).
    Sweep(CommonArgs),
    /// Serial per-step runtime profile per (filter, N).
    Profile(CommonArgs),
    /// Config check plus Jacobian finite-difference self-test; no simulation.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo run-count override.
    #[arg(long)]
    runs: Option<usize>,
    /// Suppress the human-readable summary.
    #[arg(long)]
    quiet: bool,
}

impl CommonArgs {
    fn load(&self) -> spikefilt::Result<ScenarioConfig> {
        let mut config = parse_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.scenario.master_seed = seed;
        }
        if let Some(runs) = self.runs {
            config.scenario.mc_runs = runs;
        }
        if let Some(out) = &self.out {
            config.scenario.output_dir = Some(out.display().to_string());
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, verb): (&CommonArgs, &str) = match &cli.command {
        Command::Run(a) => (a, "run"),
        Command::Mc(a) => (a, "mc"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Profile(a) => (a, "profile"),
        Command::Validate(a) => (a, "validate"),
    };
    match dispatch(verb, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spikefilt {verb}: {e}");
            let code = match e {
                Error::Divergence { .. } => 3,
                Error::Io(_) => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(verb: &str, args: &CommonArgs) -> spikefilt::Result<()> {
    let config = args.load()?;
    let out_dir = PathBuf::from(config.output_dir());
    let scenario = Scenario::from_config(config)?;

    match verb {
        "validate" => {
            validate_jacobians(scenario.model(), 100, 12345)?;
            if !args.quiet {
                println!(
                    "config ok: scenario '{}' ({} filters), Jacobians match finite differences",
                    scenario.config.scenario.name,
                    scenario.config.scenario.filters.len()
                );
            }
            Ok(())
        }
        "run" => {
            let (trajectory, outputs) = run_single(&scenario, 0, None, None)?;
            let mut log = ArtifactLog::new(&out_dir)?;
            log.write_estimates(&trajectory, &outputs)?;
            log.write_manifest(&scenario.config)?;
            if !args.quiet {
                println!(
                    "run '{}': {} steps, artifacts in {}",
                    scenario.config.scenario.name,
                    trajectory.steps(),
                    out_dir.display()
                );
            }
            Ok(())
        }
        "mc" => {
            let record = monte_carlo(&scenario)?;
            let mut log = ArtifactLog::new(&out_dir)?;
            log.write_rmse(&record)?;
            log.write_rasters(&record)?;
            log.write_summary(&record)?;
            log.write_runtimes(&record)?;
            log.write_manifest(&scenario.config)?;
            if !args.quiet {
                print_summary(&scenario, &record);
                println!("artifacts in {}", out_dir.display());
            }
            Ok(())
        }
        "sweep" => {
            let n_values = scenario
                .config
                .sweep
                .as_ref()
                .map(|s| s.n_values.clone())
                .ok_or_else(|| Error::Config("sweep verb needs a [sweep] section".into()))?;
            let points = neuron_sweep(&scenario, &n_values)?;
            let mut log = ArtifactLog::new(&out_dir)?;
            log.write_sweep(&points)?;
            log.write_manifest(&scenario.config)?;
            if !args.quiet {
                println!("{:<16} {:>8} {:>14}", "filter", "N", "delta_x");
                for p in &points {
                    println!("{:<16} {:>8} {:>14.6e}", p.kind.name(), p.n_neurons, p.delta_x);
                }
                println!("artifacts in {}", out_dir.display());
            }
            Ok(())
        }
        "profile" => {
            let (n_values, reps) = scenario
                .config
                .profile
                .as_ref()
                .map(|p| (p.n_values.clone(), p.repetitions))
                .unwrap_or((vec![50, 100, 300], 3));
            let points = runtime_profile(&scenario, &n_values, reps)?;
            let mut log = ArtifactLog::new(&out_dir)?;
            log.write_profile(&points)?;
            log.write_manifest(&scenario.config)?;
            if !args.quiet {
                println!("{:<16} {:>8} {:>12} {:>12}", "filter", "N", "mean_ms", "p95_ms");
                for p in &points {
                    println!(
                        "{:<16} {:>8} {:>12.4} {:>12.4}",
                        p.kind.name(),
                        p.n_neurons,
                        p.mean_ms,
                        p.p95_ms
                    );
                }
                println!("artifacts in {}", out_dir.display());
            }
            Ok(())
        }
        _ => unreachable!("clap restricts the verb set"),
    }
}

fn print_summary(scenario: &Scenario, record: &MetricsRecord) {
    println!(
        "scenario '{}': {} runs x {} steps (window {} s)",
        scenario.config.scenario.name,
        record.mc_runs,
        record.steps,
        scenario.config.rmse_window()
    );
    println!(
        "{:<16} {:>12} {:>10} {:>10} {:>12} {:>10} {:>6}",
        "filter", "delta_x", "coverage", "spike_frac", "mean_ms", "p95_ms", "div"
    );
    for m in &record.per_filter {
        let cov = m
            .coverage
            .map(|c| format!("{c:.3}"))
            .unwrap_or_else(|| "-".into());
        let frac = m
            .spike_fraction
            .map(|f| format!("{f:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>12.5e} {:>10} {:>10} {:>12.4} {:>10.4} {:>6}",
            m.kind.name(),
            m.delta_x,
            cov,
            frac,
            m.runtime_mean_ms,
            m.runtime_p95_ms,
            m.divergent_runs
        );
    }
}
