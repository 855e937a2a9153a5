use std::io::BufRead;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use oromon_server::analyzers::ModelLoader;
use oromon_server::app;
use oromon_server::auth::PasswordHasher;
use oromon_server::config::Config;
use oromon_server::db::{Clinician, Db};
use oromon_server::models::OnnxLoader;
use oromon_server::pipeline::WorkerPool;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "oromon-server", version, about = "Telemonitoring ingestion and analysis service")]
struct Cli {
    /// Path to the TOML configuration file.
    #[arg(long, short, global = true, default_value = "oromon.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API together with the worker pool.
    Serve {
        /// Overrides `listen` from the config file.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Create or upgrade the database schema and exit.
    Migrate,
    /// Register a clinician account. The password is read from
    /// OROMON_PASSWORD, or from the first line of stdin.
    AddClinician {
        username: String,
        #[arg(long)]
        display_name: Option<String>,
    },
    /// Run one backstop sweep and process the queues until they are empty.
    Sweep,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = Config::load(&cli.config)?;
    match cli.command {
        Command::Serve { listen } => serve(config, listen),
        Command::Migrate => {
            std::fs::create_dir_all(&config.data_dir)?;
            let db = Db::open(&config.database_path())?;
            println!("schema version {}", db.schema_version()?);
            Ok(())
        }
        Command::AddClinician { username, display_name } => add_clinician(&config, username, display_name),
        Command::Sweep => {
            let pipeline = pipeline(&config)?;
            let found = pipeline.sweep()?;
            let handled = pipeline.drain()?;
            println!("orchestrated {found} archives, handled {handled} messages");
            Ok(())
        }
    }
}

fn pipeline(config: &Config) -> anyhow::Result<Arc<oromon_server::pipeline::Pipeline>> {
    let loader: Arc<dyn ModelLoader> = Arc::new(OnnxLoader::new(&config.data_dir));
    app::build_pipeline(config, app::system_clock(), Some(loader))
}

fn add_clinician(config: &Config, username: String, display_name: Option<String>) -> anyhow::Result<()> {
    let password = match std::env::var("OROMON_PASSWORD") {
        Ok(p) => p,
        Err(_) => {
            let mut line = String::new();
            std::io::stdin().lock().read_line(&mut line)?;
            line.trim_end_matches(['\r', '\n']).to_string()
        }
    };
    anyhow::ensure!(password.len() >= 8, "password must have at least 8 characters");
    std::fs::create_dir_all(&config.data_dir)?;
    let db = Db::open(&config.database_path())?;
    let clinician = Clinician {
        clinician_id: uuid::Uuid::new_v4().to_string(),
        display_name: display_name.unwrap_or_else(|| username.clone()),
        username,
        created_at: oromon_server::clock::iso8601(chrono::Utc::now()),
    };
    db.insert_clinician(&clinician, &PasswordHasher::default().hash(&password))?;
    println!("{}", clinician.clinician_id);
    Ok(())
}

fn serve(config: Config, listen: Option<SocketAddr>) -> anyhow::Result<()> {
    let pipeline = pipeline(&config)?;
    let addr = listen.unwrap_or(config.listen);
    let pool = WorkerPool::start(pipeline.clone(), app::pool_timing(&config));
    let router = oromon_server::api::router(app::api_state(&config, pipeline));
    let runtime = tokio::runtime::Runtime::new()?;
    let served = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server failed")
    });
    pool.shutdown();
    served
}
