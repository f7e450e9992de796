//! `ecgibi`: prepare noisy ECG datasets, train the denoiser, evaluate IBI accuracy.

mod config;
mod eval_cmd;
mod fetch;
mod manifest;
mod prepare;
mod report;
mod train_cmd;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecgibi_core::{Error, ErrorKind};

use config::{Denoiser, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "ecgibi", version, about = "ECG denoising and inter-beat interval evaluation pipeline")]
struct Cli {
    /// Pipeline configuration (TOML, dotted keys allowed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the noise-mixing and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides `paths.output_root`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the reduced model and schedule.
    #[arg(long, global = true)]
    smoke: bool,
    /// Worker threads; 1 gives byte-reproducible outputs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest records, resample to 360 Hz, build SNR ladders, write the manifest.
    Prepare,
    /// Train the denoiser on the prepared training split.
    Train,
    /// Denoise, detect beats and score IBIs on the test split.
    Eval {
        #[arg(long, value_enum)]
        denoiser: Option<Denoiser>,
        /// Defaults to `<out>/train/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Only these test records (`record` or `dataset/record`).
        #[arg(long, value_delimiter = ',')]
        records: Vec<String>,
    },
    /// Print the tables from an evaluation report.
    Report,
    /// Download records from the public archive (requires `fetch.enabled` or `--enable`).
    Fetch {
        #[arg(long)]
        enable: bool,
        /// Limit to these datasets (`noise` for the noise sources).
        #[arg(long, value_delimiter = ',')]
        dataset: Vec<String>,
    },
}

pub(crate) fn write_resolved(cfg: &PipelineConfig, dir: &Path) -> anyhow::Result<()> {
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_flat_toml()?)
        .map_err(|e| Error::InvalidInput(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Numeric) => 3,
        Some(ErrorKind::Data) | None => 2,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    PipelineConfig::load(
        path,
        &Overrides {
            seed: cli.seed,
            out: cli.out.clone(),
            smoke: cli.smoke,
        },
    )
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let deterministic = cli.threads == Some(1);

    match &cli.command {
        Command::Prepare => {
            let cfg = load_config(&cli)?;
            let hash = prepare::run(&cfg)?;
            println!("manifest {} sha256 {hash}", cfg.dataset_dir().join(manifest::MANIFEST_FILE).display());
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let s = train_cmd::run(&cfg, !deterministic)?;
            println!(
                "trained on {} windows: loss {:.6} -> {:.6}; checkpoint {}",
                s.n_windows,
                s.first_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Eval {
            denoiser,
            checkpoint,
            records,
        } => {
            let cfg = load_config(&cli)?;
            let checkpoint = checkpoint
                .clone()
                .unwrap_or_else(|| cfg.train_dir().join(train_cmd::CHECKPOINT_FILE));
            let report = eval_cmd::run(
                &cfg,
                &eval_cmd::EvalRequest {
                    denoiser: denoiser.unwrap_or(cfg.eval.denoiser),
                    checkpoint: &checkpoint,
                    records,
                },
            )?;
            print!("{}", report::render(&report));
            println!("reports written to {}", cfg.eval_dir().display());
        }
        Command::Report => {
            let dir = match (&cli.out, &cli.config) {
                (Some(out), _) => out.join("eval"),
                (None, Some(_)) => load_config(&cli)?.eval_dir(),
                (None, None) => return Err(Error::Config("report needs --config or --out".into()).into()),
            };
            print!("{}", report::render(&report::load(&dir)?));
        }
        Command::Fetch { enable, dataset } => {
            let cfg = load_config(&cli)?;
            if !(cfg.fetch.enabled || *enable) {
                return Err(Error::Config(
                    "network fetch is disabled; set `fetch.enabled = true` or pass --enable".into(),
                )
                .into());
            }
            fetch::run(&cfg, dataset)?;
            for (name, ds) in &cfg.datasets {
                if ds.root.is_dir() {
                    for (file, sha) in fetch::hash_dir(&ds.root)? {
                        println!("datasets.{name}.sha256.\"{file}\" = \"{sha}\"");
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
