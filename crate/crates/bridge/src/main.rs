use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::Parser;
use falconry_bridge::{serve, BridgeOptions, SimDriver};
use falconry_core::{RunConfig, Scenario};

/// Serve a live simulation on a web socket.
#[derive(Parser)]
#[command(name = "falconry-bridge", version)]
struct Cli {
    #[arg(long, default_value = "127.0.0.1:8765")]
    bind: SocketAddr,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Built-in name or path of the starting scenario.
    #[arg(long, default_value = "approach_static")]
    scenario: String,
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_target(false).init();
    let cli = Cli::parse();
    ensure!(
        cli.time_scale > 0.0 && cli.time_scale.is_finite(),
        "--time-scale must be a positive number"
    );
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let scenario = Scenario::resolve(&cli.scenario)?;
    let driver = SimDriver::new(cfg, scenario)?;
    let listener = tokio::net::TcpListener::bind(cli.bind)
        .await
        .with_context(|| format!("cannot bind {}", cli.bind))?;
    tracing::info!("serving on ws://{}/ws", listener.local_addr()?);
    let options = BridgeOptions {
        time_scale: cli.time_scale,
        ..Default::default()
    };
    serve(listener, driver, options).await
}
