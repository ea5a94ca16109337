use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use kgalign_core::synthetic::{SyntheticBenchmark, SyntheticConfig};
use kgalign_core::{run_pipeline, Mode, NoFeedback, PipelineConfig, ProgressEvent};
use kgalign_service::{router, DatasetFiles, ManagerConfig, TaskManager};
use tracing_subscriber::EnvFilter;

/// Name of the dataset generated into an empty datasets directory.
const DEFAULT_BUILTIN: &str = "synthetic";

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Unsupervised knowledge graph alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP task service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Task records and exports.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// One subdirectory per builtin dataset.
        #[arg(long, default_value = "datasets")]
        datasets_dir: PathBuf,
        /// Tasks run at the same time.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Align a dataset directory and write the mappings as TSV.
    Align {
        dataset: PathBuf,
        /// JSON pipeline configuration; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write mappings here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print graph statistics for a dataset directory as JSON.
    Stats { dataset: PathBuf },
    /// Write a synthetic benchmark with a known reference alignment.
    Generate {
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 3000)]
        rel_triples: usize,
        #[arg(long, default_value_t = 1500)]
        attr_triples: usize,
    },
}

fn load(dir: &Path) -> anyhow::Result<kgalign_service::dataset::LoadedDataset> {
    let files = DatasetFiles::read_from(dir).with_context(|| format!("reading {}", dir.display()))?;
    Ok(files.parse()?)
}

fn align(dataset: &Path, config: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let config: PipelineConfig = match config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if config.mode == Mode::SemiAutomatic {
        bail!("the command line runs automatically; use the service for feedback");
    }
    let data = load(dataset)?;
    let mut log = |e: &ProgressEvent| {
        let loss = e.loss.map(|l| format!(" loss={l:.4}")).unwrap_or_default();
        eprintln!("{:?} {}ms mappings={}{loss}", e.stage, e.elapsed_ms, e.num_mappings);
    };
    let outcome = run_pipeline(Arc::new(data.left), Arc::new(data.right), &config, &mut log, &mut NoFeedback)?;
    if let Some(gold) = &data.reference {
        let m = outcome.metrics(gold)?;
        eprintln!("precision={:.4} recall={:.4} f1={:.4}", m.precision, m.recall, m.f1);
    }
    let tsv = outcome.export_tsv();
    match out {
        Some(path) => std::fs::write(path, tsv)?,
        None => print!("{tsv}"),
    }
    Ok(())
}

async fn serve(bind: SocketAddr, data_dir: PathBuf, datasets_dir: PathBuf, workers: usize) -> anyhow::Result<()> {
    if kgalign_service::dataset::builtin_names(&datasets_dir).is_empty() {
        let dir = datasets_dir.join(DEFAULT_BUILTIN);
        tracing::info!(dir = %dir.display(), "generating the builtin synthetic dataset");
        SyntheticBenchmark::generate(&SyntheticConfig::default()).write_to_dir(&dir)?;
    }
    let manager = TaskManager::start(ManagerConfig { data_dir, datasets_dir, workers })?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(%bind, "listening");
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).init();
    match Cli::parse().command {
        Command::Serve { bind, data_dir, datasets_dir, workers } => tokio::runtime::Runtime::new()?
            .block_on(serve(bind, data_dir, datasets_dir, workers)),
        Command::Align { dataset, config, out } => align(&dataset, config.as_deref(), out.as_deref()),
        Command::Stats { dataset } => {
            let data = load(&dataset)?;
            let stats = serde_json::json!({ "left": data.left.stats(), "right": data.right.stats() });
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
        Command::Generate { out, seed, entities, rel_triples, attr_triples } => {
            let config = SyntheticConfig {
                seed,
                num_entities: entities,
                num_rel_triples: rel_triples,
                num_attr_triples: attr_triples,
                ..Default::default()
            };
            SyntheticBenchmark::generate(&config).write_to_dir(&out)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}
