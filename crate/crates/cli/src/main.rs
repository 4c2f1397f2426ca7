use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sgg_core::anonymizer::{run_job, AnonymizationJob, AnonymizeOptions};
use sgg_core::checkpoint::Checkpoint;
use sgg_core::dataset::DirectoryDataset;
use sgg_core::eval::{diversity_study, invariance_studies, Family};
use sgg_core::synthetic::{Synthetic, SyntheticSpec};
use sgg_core::training::MetricsLog;
use sgg_core::{DiscriminatorConfig, Error, GeneratorConfig, Modulation, SurfaceGan, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "sgg", version, about = "Surface-guided GAN inpainting and full-body anonymization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replace every detected person in a directory of annotated images.
    Anonymize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        dilation: usize,
        #[arg(long, default_value_t = 0.1)]
        score_threshold: f64,
        /// Reuse one latent for every person.
        #[arg(long)]
        fixed_z: bool,
    },
    /// Run an invariance or diversity study and write a JSON report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        study: Study,
        /// Transform family for the invariance study; all families when omitted.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Truncation for the diversity study.
        #[arg(long, default_value_t = 1.0)]
        truncation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic dataset from a JSON spec (missing fields take defaults).
    MakeDataset {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the desk-size model on an annotation directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint written periodically and at the end.
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON training config (missing fields take defaults).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModulationArg::Vsam)]
        modulation: ModulationArg,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the checkpoint if it exists.
        #[arg(long)]
        resume: bool,
        /// Append-only metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Invariance,
    Diversity,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModulationArg {
    Vsam,
    Sam,
    None,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => Ok(T::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Anonymize { input, output, checkpoint, truncation, seed, dilation, score_threshold, fixed_z } => {
            let options = AnonymizeOptions { truncation, seed, dilation, score_threshold, fixed_z, ..Default::default() };
            let report = run_job(&AnonymizationJob { input, output, checkpoint, options })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Evaluate { checkpoint, dataset, study, family, samples, seed, truncation, out } => {
            let model = SurfaceGan::load(&checkpoint)?;
            let data = DirectoryDataset::open(&dataset)?;
            match study {
                Study::Invariance => {
                    let families = match family {
                        Some(f) => vec![Family::parse(&f)?],
                        None => Family::ALL.to_vec(),
                    };
                    write_json(&out, &invariance_studies(&model, &data, &families, samples, seed)?)?;
                }
                Study::Diversity => {
                    if !(0.0..=1.0).contains(&truncation) {
                        return Err(format!("truncation must lie in [0, 1], got {truncation}").into());
                    }
                    write_json(&out, &diversity_study(&model, &data, samples, 6, seed, truncation)?)?;
                }
            }
        }
        Command::MakeDataset { spec, out } => {
            let spec: SyntheticSpec = read_json(spec.as_deref())?;
            Synthetic::new(spec)?.write_dataset(&out)?;
        }
        Command::Train { dataset, checkpoint, config, modulation, steps, resume, log } => {
            let data = DirectoryDataset::open(&dataset)?;
            let mut trainer = if resume && checkpoint.exists() {
                Trainer::from_checkpoint(&Checkpoint::load(&checkpoint)?)?
            } else {
                let mut cfg: TrainConfig = read_json(config.as_deref())?;
                if let Some(s) = steps {
                    cfg.total_steps = s;
                }
                let table = data
                    .vertex_table()?
                    .ok_or_else(|| format!("{} has no vertex table", dataset.display()))?;
                let modulation = match modulation {
                    ModulationArg::Vsam => Modulation::VSam,
                    ModulationArg::Sam => Modulation::Sam,
                    ModulationArg::None => Modulation::None,
                };
                Trainer::new(GeneratorConfig::desk(modulation), DiscriminatorConfig::desk(), cfg, table)?
            };
            if resume {
                if let Some(s) = steps {
                    trainer.config.total_steps = s;
                }
            }
            let mut log = log.map(|p| MetricsLog::open(&p)).transpose()?;
            trainer.train(&data, log.as_mut(), Some(&checkpoint), |_, report| {
                if report.step % 100 == 0 {
                    eprintln!("step {}: d {:.4} g {:.4}", report.step, report.d.total, report.g.total);
                }
                true
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(Error::Divergence { .. }) = e.downcast_ref::<Error>() {
                return ExitCode::from(3);
            }
            ExitCode::FAILURE
        }
    }
}
