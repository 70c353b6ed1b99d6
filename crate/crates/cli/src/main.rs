use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mbgk::exec::set_threads;
use mbgk::integrate::{run, Integrator};
use mbgk::output::{emit_outputs, exact_profile_csv, summary, summary_text};
use mbgk::scenario::ScenarioConfig;
use mbgk::{Error, Execution};

#[derive(Parser)]
#[command(name = "mbgk", version, about = "Multi-species BGK slab solver")]
struct Cli {
    /// Output directory; overrides the scenario's `output.directory`.
    #[arg(long, global = true, env = "MBGK_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads for the cell-parallel loops (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Run the cell loops on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    /// Repeat for more detail on stdout.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write profiles, step diagnostics and a summary.
    Run {
        config: PathBuf,
        /// Override the scenario's integrator.
        #[arg(long, value_enum)]
        integrator: Option<IntegratorArg>,
        /// Override the scenario's final time.
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Check a scenario file and report every invalid field.
    Validate { config: PathBuf },
    /// Write the exact shock-tube profile of a scenario with a comparison block.
    SodExact {
        config: PathBuf,
        /// Sampling time; defaults to the scenario's final time.
        #[arg(long)]
        time: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Imex,
    Explicit,
}

fn output_dir(cli: &Cli, cfg: &ScenarioConfig) -> PathBuf {
    cli.output_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn execute(cli: &Cli) -> Result<(), Error> {
    set_threads(cli.threads);
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Validate { config } => {
            let cfg = ScenarioConfig::load(config)?;
            cfg.build(exec)?;
            println!("ok {}", cfg.name);
        }
        Command::Run { config, integrator, t_final } => {
            let mut cfg = ScenarioConfig::load(config)?;
            if let Some(kind) = integrator {
                cfg.integrator.kind = match kind {
                    IntegratorArg::Imex => Integrator::Imex,
                    IntegratorArg::Explicit => Integrator::Explicit,
                };
            }
            if let Some(t) = t_final {
                cfg.physics.t_final = *t;
            }
            let scenario = cfg.build(exec)?;
            if cli.verbose > 0 {
                eprintln!(
                    "running {} ({} cells x {} velocities) to t = {}",
                    cfg.name,
                    cfg.grid.cells,
                    cfg.grid.velocities,
                    cfg.physics.t_final
                );
            }
            let traj = run(&scenario.problem, scenario.initial.clone(), &scenario.options)?;
            let dir = output_dir(cli, &cfg);
            let paths = emit_outputs(&scenario, &traj, &dir)?;
            if cli.verbose > 0 {
                print!("{}", summary_text(&summary(&scenario, &traj)));
            } else {
                println!("{} steps, wrote {}", traj.step_count(), paths.profiles.display());
            }
        }
        Command::SodExact { config, time } => {
            let cfg = ScenarioConfig::load(config)?;
            let scenario = cfg.build(exec)?;
            let tube = scenario
                .comparison
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("scenario {} has no comparison block", cfg.name)))?;
            let t = time.unwrap_or(cfg.physics.t_final);
            if !tube.valid_at(t) {
                eprintln!("warning: waves from the jump and the wrap-around point interact by t = {t}");
            }
            let dir = output_dir(cli, &cfg);
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = dir.join("exact.csv");
            write_file(&path, &exact_profile_csv(&scenario.problem.space, tube, t))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "contract" | "domain" => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
