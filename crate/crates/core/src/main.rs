use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cbmoco::harness::{self, files, ExperimentConfig, Reconstructions};
use cbmoco::io::{read_json, read_volume};
use cbmoco::motion::motion_to_matrices;
use cbmoco::optimizer::MotionEstimate;
use cbmoco::{Error, Result};

#[derive(Parser)]
#[command(name = "cbmoco", version, about = "Cone-beam CT rigid motion compensation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Takes precedence over --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the motion seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the numeric kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom, motion-corrupted projections and filtering.
    Simulate,
    /// Motion estimation on a simulated output directory.
    Estimate,
    /// Reference, initial and compensated reconstructions.
    Reconstruct,
    /// Report for an output directory holding all earlier stages.
    Evaluate,
    /// All stages in one go.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => ExperimentConfig::from_json_file(path)?,
        (None, Some(Preset::Paper)) => ExperimentConfig::paper(),
        (None, _) => ExperimentConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.motion.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn read_estimate(out: &Path) -> Result<MotionEstimate> {
    read_json(&out.join(files::ESTIMATE))
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Run => {
            let cfg = load_config(cli)?;
            let out = output_dir(cli, Some(&cfg))?;
            let report = harness::run_experiment(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let out = output_dir(cli, Some(&cfg))?;
            let sim = harness::simulate(&cfg).map_err(|e| e.in_stage("simulate"))?;
            harness::write_simulation(&out, &cfg, &sim).map_err(|e| e.in_stage("simulate"))?;
        }
        Command::Estimate => {
            let out = output_dir(cli, None)?;
            let s = harness::load_simulation(&out).map_err(|e| e.in_stage("estimate"))?;
            let est = harness::estimate(&s.config, &s.filtered, &s.p_init, Some(&s.target_motion))
                .map_err(|e| e.in_stage("estimate"))?;
            harness::write_estimate(&out, &s.config, &est, &s.p_init).map_err(|e| e.in_stage("estimate"))?;
        }
        Command::Reconstruct => {
            let out = output_dir(cli, None)?;
            let stage = |e: Error| e.in_stage("reconstruct");
            let s = harness::load_simulation(&out).map_err(stage)?;
            let est = read_estimate(&out).map_err(stage)?;
            let p_est = motion_to_matrices(&est.x_star, &s.p_init).map_err(stage)?;
            let recon = harness::reconstruct(&s.config, &s.filtered, &s.p_init, &p_est, &s.p_true).map_err(stage)?;
            harness::write_reconstructions(&out, &recon).map_err(stage)?;
        }
        Command::Evaluate => {
            let out = output_dir(cli, None)?;
            let stage = |e: Error| e.in_stage("evaluate");
            let s = harness::load_simulation(&out).map_err(stage)?;
            let est = read_estimate(&out).map_err(stage)?;
            let recon = Reconstructions {
                reference: read_volume(&out.join(files::VOLUME_REFERENCE)).map_err(stage)?,
                initial: read_volume(&out.join(files::VOLUME_INITIAL)).map_err(stage)?,
                compensated: read_volume(&out.join(files::VOLUME_COMPENSATED)).map_err(stage)?,
            };
            let report = harness::evaluate(&s.config, &s.p_init, &s.p_true, &s.gt_motion, &est, &recon).map_err(stage)?;
            harness::write_report(&out, &report, &s.gt_motion, &est.x_star, s.p_init.len()).map_err(stage)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
