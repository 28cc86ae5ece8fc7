use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use cardkit_core::catalog::Catalog;
use cardkit_service::{router, AppState, ServiceConfig};
use clap::Parser;

/// Serve deck storage, validation and simulated execution over HTTP.
#[derive(Parser)]
#[command(name = "cardkit-service", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory for JSON snapshots of decks and finished executions.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Simulated seconds per real second; 0 runs as fast as possible.
    #[arg(long, default_value_t = 10.0)]
    ratio: f64,
    /// Deck passes allowed under RepeatDeck; unbounded when omitted.
    #[arg(long)]
    max_repeats: Option<u32>,
    #[arg(long, default_value_t = 10)]
    telemetry_every: u32,
    /// Extension catalog merged into the built-in drone cards.
    #[arg(long, env = "CARDKIT_CATALOG")]
    catalog: Option<PathBuf>,
}

async fn serve(args: Args) -> Result<(), String> {
    let mut catalog = Catalog::drone();
    if let Some(path) = &args.catalog {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        catalog.extend_from_json(&text).map_err(|e| format!("catalog: {e}"))?;
    }
    let config = ServiceConfig {
        ratio: args.ratio,
        data_dir: args.data_dir,
        max_repeats: args.max_repeats,
        telemetry_every: Some(args.telemetry_every).filter(|&n| n > 0),
    };
    let state = AppState::new(catalog, config).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind(args.addr).await.map_err(|e| e.to_string())?;
    eprintln!("listening on {}", args.addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    match serve(Args::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
