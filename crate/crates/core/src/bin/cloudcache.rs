use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cloudcache::cli::{
    analytic_table, emit_analytic_csv, emit_csv, emit_validation_csv, parse_grid, write_output,
    CliError, ExperimentConfig, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "cloudcache",
    version,
    about = "Cost-driven cache policy simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replication seed; repeat to run several. Overrides the config.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Default)]
struct Grids {
    #[arg(long)]
    ttl_grid: Option<String>,
    #[arg(long)]
    capacity_grid: Option<String>,
    #[arg(long)]
    window_grid: Option<String>,
    #[arg(long)]
    lambda_grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured policy on every seed.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a parameter grid on paired traces.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grids: Grids,
    },
    /// Closed-form costs over TTL and rate grids.
    Analytic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grids: Grids,
    },
    /// Compare simulated costs with the closed form.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grids: Grids,
    },
}

impl Grids {
    /// The one grid given on the command line, if any.
    fn selected(&self) -> Result<Option<(SweepAxis, Vec<f64>)>, CliError> {
        let given: Vec<(SweepAxis, &String)> = [
            (SweepAxis::Ttl, &self.ttl_grid),
            (SweepAxis::Capacity, &self.capacity_grid),
            (SweepAxis::Window, &self.window_grid),
            (SweepAxis::Lambda, &self.lambda_grid),
        ]
        .into_iter()
        .filter_map(|(axis, g)| g.as_ref().map(|g| (axis, g)))
        .collect();
        match given.as_slice() {
            [] => Ok(None),
            [(axis, text)] => Ok(Some((*axis, parse_grid(text)?))),
            _ => Err(CliError::Usage("give at most one grid flag".into())),
        }
    }

    fn or_config(&self, cfg: &ExperimentConfig) -> Result<Option<(SweepAxis, Vec<f64>)>, CliError> {
        Ok(self
            .selected()?
            .or_else(|| cfg.sweep.as_ref().map(|s| (s.axis, s.grid.clone()))))
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if !common.seeds.is_empty() {
        cfg.run.seeds = common.seeds.clone();
    }
    Ok(cfg)
}

fn experiment(common: &Common) -> Result<cloudcache::cli::Experiment, CliError> {
    Ok(cloudcache::cli::Experiment::new(load(common)?)?.with_jobs(common.jobs))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common } => {
            let rows = experiment(&common)?.run()?;
            write_output(common.out.as_deref(), |buf| emit_csv(&rows, buf))
        }
        Command::Sweep { common, grids } => {
            let exp = experiment(&common)?;
            let (axis, grid) = grids.or_config(exp.config())?.ok_or_else(|| {
                CliError::Usage("sweep needs a grid flag or a [sweep] section".into())
            })?;
            let report = exp.sweep(axis, &grid)?;
            write_output(common.out.as_deref(), |buf| emit_csv(&report.rows, buf))?;
            eprintln!(
                "best {} = {} (cost per request {:.6e})",
                axis.name(),
                report.best.0,
                report.best.1
            );
            Ok(())
        }
        Command::Analytic { common, grids } => {
            let cfg = load(&common)?;
            let pm = cfg.population_model()?;
            let from_config = |axis: SweepAxis| {
                cfg.sweep
                    .as_ref()
                    .filter(|s| s.axis == axis)
                    .map(|s| s.grid.clone())
            };
            let lambdas = match &grids.lambda_grid {
                Some(text) => parse_grid(text)?,
                None => from_config(SweepAxis::Lambda).unwrap_or_else(|| vec![pm.lambda()]),
            };
            let ttls = match &grids.ttl_grid {
                Some(text) => parse_grid(text)?,
                None => from_config(SweepAxis::Ttl)
                    .unwrap_or_else(|| (0..=60).map(|k| 10.0 * k as f64).collect()),
            };
            let rows = analytic_table(
                &pm,
                &cfg.cost_model()?,
                cfg.monte_carlo_spec()?,
                &lambdas,
                &ttls,
            )?;
            write_output(common.out.as_deref(), |buf| emit_analytic_csv(&rows, buf))
        }
        Command::Validate { common, grids } => {
            let exp = experiment(&common)?;
            let sweep = grids.or_config(exp.config())?;
            let rows = exp.validate(sweep.as_ref().map(|(a, g)| (*a, g.as_slice())))?;
            write_output(common.out.as_deref(), |buf| emit_validation_csv(&rows, buf))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
