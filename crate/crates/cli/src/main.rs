use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cardkit_core::catalog::{Catalog, CatalogError};
use cardkit_core::corpus;
use cardkit_core::model::{Deck, SchemaError, Value};
use cardkit_core::notation::{parse_notation, print_notation, NotationError};
use cardkit_core::runtime::{DeckStatus, RunOptions, StopHandle};
use cardkit_core::sim::{simulate, SimConfig, SimError, SimRunError};
use cardkit_core::validate::{has_errors, to_jsonl, validate_deck};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Validate, format and simulate card decks.
#[derive(Parser)]
#[command(name = "cardkit", version)]
struct Cli {
    /// Extension catalog merged into the built-in drone cards.
    #[arg(long, env = "CARDKIT_CATALOG", global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a deck and print diagnostics as JSON lines.
    Validate {
        deck: PathBuf,
        #[command(flatten)]
        source: Source,
    },
    /// Execute a deck against the simulator and write its trace.
    Run(RunArgs),
    /// List the card catalog.
    Catalog {
        #[arg(long)]
        json: bool,
    },
    /// Print a notation file as canonical JSON, or re-print it as notation.
    Fmt {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        to: Format,
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args)]
struct Source {
    /// Read the deck as card notation instead of JSON.
    #[arg(long)]
    from_notation: bool,
    /// JSON object of named values for `[placeholder]` literals, merged over
    /// the bundled reference bindings.
    #[arg(long)]
    bindings: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    deck: PathBuf,
    #[command(flatten)]
    source: Source,
    /// World configuration JSON; defaults to an empty world at the origin.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_sim_time: Option<f64>,
    /// Deck passes allowed under RepeatDeck.
    #[arg(long, default_value_t = 1000)]
    max_repeats: u32,
    #[arg(long)]
    estop_at: Option<f64>,
    /// Seconds a hand may go without progress before the run faults.
    #[arg(long)]
    watchdog: Option<f64>,
    /// Emit a Telemetry event every N ticks.
    #[arg(long)]
    telemetry_every: Option<u32>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Notation,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Notation(#[from] NotationError),
    #[error("{0}")]
    Schema(#[from] SchemaError),
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("world: {0}")]
    World(#[from] SimError),
    #[error("{0}")]
    Run(#[from] SimRunError),
    #[error("bindings: {0}")]
    Bindings(String),
    #[error("deck has errors")]
    Invalid,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn catalog(extension: Option<&Path>) -> Result<Catalog, CliError> {
    let mut catalog = Catalog::drone();
    if let Some(path) = extension {
        catalog.extend_from_json(&read(path)?)?;
    }
    Ok(catalog)
}

fn bindings(path: Option<&Path>) -> Result<BTreeMap<String, Value>, CliError> {
    let mut all = corpus::bindings();
    if let Some(path) = path {
        let extra: BTreeMap<String, Value> =
            serde_json::from_str(&read(path)?).map_err(|e| CliError::Bindings(e.to_string()))?;
        all.extend(extra);
    }
    Ok(all)
}

fn load(path: &Path, source: &Source, catalog: &Catalog) -> Result<Deck, CliError> {
    let text = read(path)?;
    if source.from_notation {
        Ok(parse_notation(&text, catalog, &bindings(source.bindings.as_deref())?)?)
    } else {
        Ok(Deck::from_json(&text)?)
    }
}

fn validate(deck: &Path, source: &Source, catalog: &Catalog) -> Result<ExitCode, CliError> {
    let deck = load(deck, source, catalog)?;
    let diags = validate_deck(&deck, catalog);
    print!("{}", to_jsonl(&diags));
    Ok(ExitCode::from(if has_errors(&diags) { 1 } else { 0 }))
}

fn run(args: &RunArgs, catalog: &Catalog) -> Result<ExitCode, CliError> {
    let deck = load(&args.deck, &args.source, catalog)?;
    let diags = validate_deck(&deck, catalog);
    if has_errors(&diags) {
        print!("{}", to_jsonl(&diags));
        return Err(CliError::Invalid);
    }
    let world = match &args.world {
        Some(path) => SimConfig::from_json(&read(path)?)?,
        None => SimConfig::default(),
    };
    let opts = RunOptions {
        max_repeats: Some(args.max_repeats),
        max_sim_time: args.max_sim_time,
        estop_at: args.estop_at,
        watchdog: args.watchdog,
        telemetry_every: args.telemetry_every,
        ..RunOptions::default()
    };
    let (trace, _) = simulate(&deck, catalog, world, args.seed, &opts, &StopHandle::new(), &mut ())?;
    fs::write(&args.trace, trace.to_jsonl()).map_err(|source| CliError::Io { path: args.trace.clone(), source })?;
    Ok(ExitCode::from(match trace.status {
        DeckStatus::Completed => 0,
        DeckStatus::Stopped => 3,
        DeckStatus::Faulted => 4,
    }))
}

fn fmt(path: &Path, to: Format, source: &Source, catalog: &Catalog) -> Result<ExitCode, CliError> {
    let text = read(path)?;
    let deck = if source.from_notation || !text.trim_start().starts_with('{') {
        parse_notation(&text, catalog, &bindings(source.bindings.as_deref())?)?
    } else {
        Deck::from_json(&text)?
    };
    match to {
        Format::Json => println!("{}", deck.to_canonical_json()),
        Format::Notation => print!("{}", print_notation(&deck, catalog)),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = catalog(cli.catalog.as_deref()).and_then(|catalog| match &cli.command {
        Command::Validate { deck, source } => validate(deck, source, &catalog),
        Command::Run(args) => run(args, &catalog),
        Command::Catalog { json } => {
            if *json {
                println!("{}", catalog.to_json());
            } else {
                for d in catalog.contents() {
                    println!("{}", d.path);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fmt { path, to, source } => fmt(path, *to, source, &catalog),
    });
    match result {
        Ok(code) => code,
        Err(CliError::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("cardkit: {e}");
            ExitCode::from(2)
        }
    }
}
