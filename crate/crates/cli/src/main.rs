use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vpsaddle_cli::{oracle, report, run, scatter, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "vpsaddle",
    version,
    about = "Vlasov-Poisson saddle simulations"
)]
struct Cli {
    /// Output directory (default: <root>/<config name> for run and oracle,
    /// <run_dir>/scatter and <run_dir>/report otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default output root for run and oracle.
    #[arg(long, global = true, env = "VPSADDLE_OUT", default_value = "runs")]
    out_root: PathBuf,
    /// Zero the wall-clock fields of manifests.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configuration to t_final.
    Run { config: PathBuf },
    /// Compare grid forces and trajectories against direct-sum references.
    Oracle { config: PathBuf },
    /// Extract the scattering state from a completed run.
    Scatter { run_dir: PathBuf },
    /// Plot a run and summarize the acceptance criteria.
    Report { run_dir: PathBuf },
}

fn default_out(root: &Path, config: &Path, suffix: &str) -> PathBuf {
    let stem = config
        .file_stem()
        .map_or("run".into(), |s| s.to_string_lossy().into_owned());
    root.join(format!("{stem}{suffix}"))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let repro = cli.reproducible;
    match &cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(config)?;
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| default_out(&cli.out_root, config, ""));
            run::cmd_run(&cfg, &out, repro)?;
            println!("run written to {}", out.display());
        }
        Command::Oracle { config } => {
            let cfg = RunConfig::load(config)?;
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| default_out(&cli.out_root, config, "-oracle"));
            let s = oracle::cmd_oracle(&cfg, &out, repro)?;
            println!("force RMS relative error      {:.3e}", s.force_rms_rel);
            println!("radial field max relative error {:.3e}", s.radial_max_rel);
            println!("trajectory max relative error {:.3e}", s.trajectory_max_rel);
            println!("oracle written to {}", out.display());
        }
        Command::Scatter { run_dir } => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| run_dir.join(report::SCATTER_DIR));
            scatter::cmd_scatter(run_dir, &out, repro)?;
            println!("scattering outputs written to {}", out.display());
        }
        Command::Report { run_dir } => {
            let out = cli.out.clone().unwrap_or_else(|| run_dir.join("report"));
            report::cmd_report(run_dir, &out, repro)?;
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("error: cannot start {k} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
