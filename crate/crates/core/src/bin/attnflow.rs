use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attnflow::experiments::config::{ExperimentConfig, ExperimentKind};
use attnflow::experiments::output::write_manifest;
use attnflow::experiments::{run_cone2d, run_meanfield, run_rank_histogram, run_single, run_validation_suite};
use attnflow::Error;

#[derive(Parser)]
#[command(name = "attnflow", version, about = "Transformer-PDE experiments on Gaussian and empirical token measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance trajectories of 2-d Gaussians on an equal-trace grid.
    Cone2d(Common),
    /// Histogram of limiting covariance ranks over random seeds.
    RankHist(Common),
    /// Particle runs against the Gaussian moment flow.
    Meanfield(Common),
    /// Closed-form parity and invariant checks.
    Validate(Common),
    /// A single moment or particle trajectory.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the configured output, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes {:?}, not {kind:?}",
            cfg.experiment
        )));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn finish(dir: &Path, cfg: &ExperimentConfig, files: Vec<PathBuf>) -> Result<(), Error> {
    write_manifest(dir, cfg, &files)?;
    println!("wrote {} files to {}", files.len() + 1, dir.display());
    Ok(())
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Cone2d(c) => {
            let cfg = load(&c, ExperimentKind::Cone2d)?;
            let dir = out_dir(&c, Some(&cfg));
            let res = run_cone2d(&cfg)?;
            let files = res.write(&dir)?;
            finish(&dir, &cfg, files)?;
        }
        Command::RankHist(c) => {
            let cfg = load(&c, ExperimentKind::RankHistogram)?;
            let dir = out_dir(&c, Some(&cfg));
            let hist = run_rank_histogram(&cfg)?;
            let files = hist.write(&dir)?;
            println!(
                "ranks {:?}; not converged {}, blow-up {}, diverged {}, failed {}",
                hist.counts, hist.not_converged, hist.blowup, hist.diverged, hist.failed
            );
            finish(&dir, &cfg, files)?;
        }
        Command::Meanfield(c) => {
            let cfg = load(&c, ExperimentKind::MeanField)?;
            let dir = out_dir(&c, Some(&cfg));
            let res = run_meanfield(&cfg)?;
            let files = res.write(&dir)?;
            finish(&dir, &cfg, files)?;
        }
        Command::Run(c) => {
            let cfg = load(&c, ExperimentKind::SingleRun)?;
            let dir = out_dir(&c, Some(&cfg));
            let res = run_single(&cfg)?;
            let files = res.write(&dir)?;
            println!("status: {}", res.status().label());
            finish(&dir, &cfg, files)?;
        }
        Command::Validate(c) => {
            let cfg = match &c.config {
                Some(_) => Some(load(&c, ExperimentKind::Validate)?),
                None => None,
            };
            let seed = c.seed.or(cfg.as_ref().map(|x| x.seed)).unwrap_or(0);
            let dir = out_dir(&c, cfg.as_ref());
            let report = run_validation_suite(seed);
            for check in &report.checks {
                println!(
                    "{} {:<32} {:.3e} (tol {:.1e}) {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.measured,
                    check.tolerance,
                    check.detail
                );
            }
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("validation.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("report written to {}", path.display());
            if !report.passed {
                return Ok(EXIT_VALIDATION);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Cone2d(c)
        | Command::RankHist(c)
        | Command::Meanfield(c)
        | Command::Validate(c)
        | Command::Run(c) => c.threads,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
