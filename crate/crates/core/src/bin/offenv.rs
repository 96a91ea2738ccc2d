use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use offenv_core::env;
use offenv_core::harness::{self, ExperimentConfig};
use offenv_core::Error;

#[derive(Parser)]
#[command(name = "offenv", version, about = "Off-environment policy evaluation experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the simulator and real MDPs of a config as JSON.
    GenEnv,
    /// Run a sweep and write results.csv and summary.json.
    Sweep,
    /// Summarize a results CSV into a log10-MSE table and rate slopes.
    Report {
        /// Results CSV; defaults to <out>/results.csv.
        results: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf, Error> {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.as_ref().map(PathBuf::from)))
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn gen_env(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, Some(&cfg))?;
    std::fs::create_dir_all(&dir)?;
    let sim = cfg.grid.build(cfg.eps_sim)?;
    std::fs::write(dir.join("mdp_sim.json"), sim.to_json()?)?;
    for &eps in &cfg.eps_real_list {
        let real = cfg.grid.build(eps)?;
        std::fs::write(dir.join(format!("mdp_real_{eps}.json")), real.to_json()?)?;
    }
    let base = env::optimal_policy(&sim)?;
    std::fs::write(dir.join("policy_optimal.json"), serde_json::to_string_pretty(&base)?)?;
    println!("wrote {} MDPs to {}", cfg.eps_real_list.len() + 1, dir.display());
    Ok(())
}

fn sweep(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, Some(&cfg))?;
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = harness::run_sweep(&cfg, jobs)?;
    let summary = harness::write_sweep_outputs(&rows, &dir)?;
    print!("{}", harness::render_report(&summary));
    Ok(())
}

fn report(cli: &Cli, results: Option<&Path>) -> Result<(), Error> {
    let (input, dir) = match (results, &cli.out) {
        (Some(path), Some(out)) => (path.to_path_buf(), out.clone()),
        (Some(path), None) => (path.to_path_buf(), path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)),
        (None, Some(out)) => (out.join("results.csv"), out.clone()),
        (None, None) => return Err(Error::Config("pass a results CSV or --out".into())),
    };
    let rows = harness::read_rows_csv(std::fs::File::open(&input)?)?;
    let summary = harness::summarize(&rows);
    let text = harness::render_report(&summary);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.txt"), &text)?;
    harness::write_table_csv(&summary.table, std::fs::File::create(dir.join("report.csv"))?)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenEnv => gen_env(&cli),
        Command::Sweep => sweep(&cli),
        Command::Report { results } => report(&cli, results.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
