//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Decks may be given as card notation or as deck JSON (anything starting
//! with `{`). Every entry point returns a JSON string.

use cardkit_core::catalog::Catalog;
use cardkit_core::corpus;
use cardkit_core::model::Deck;
use cardkit_core::notation::parse_notation;
use cardkit_core::runtime::{RunOptions, StopHandle};
use cardkit_core::sim::{simulate, SimConfig};
use cardkit_core::validate::{has_errors, validate_deck};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Deck passes allowed under RepeatDeck in the demo.
pub const MAX_REPEATS: u32 = 3;
/// Simulated seconds before a demo run is cut off.
pub const MAX_SIM_TIME: f64 = 3600.0;

fn parse(text: &str, catalog: &Catalog) -> Result<Deck, String> {
    if text.trim_start().starts_with('{') {
        Deck::from_json(text).map_err(|e| e.to_string())
    } else {
        parse_notation(text, catalog, &corpus::bindings()).map_err(|e| e.to_string())
    }
}

/// `{"ok": bool, "diagnostics": [...]}`, or `{"ok": false, "error": ...}` if
/// the deck does not parse.
pub fn check(text: &str) -> Value {
    let catalog = Catalog::drone();
    match parse(text, &catalog) {
        Ok(deck) => {
            let diagnostics = validate_deck(&deck, &catalog);
            json!({ "ok": !has_errors(&diagnostics), "diagnostics": diagnostics })
        }
        Err(error) => json!({ "ok": false, "error": error, "diagnostics": [] }),
    }
}

pub fn canonical(text: &str) -> Result<String, String> {
    parse(text, &Catalog::drone()).map(|d| d.to_canonical_json())
}

/// Runs a valid deck. Positions are local east/north/up metres from home.
pub fn run(text: &str, world: &str, seed: u64) -> Result<Value, String> {
    let catalog = Catalog::drone();
    let deck = parse(text, &catalog)?;
    let diagnostics = validate_deck(&deck, &catalog);
    if has_errors(&diagnostics) {
        return Err(format!("deck has {} error diagnostics", diagnostics.iter().filter(|d| d.is_error()).count()));
    }
    let cfg = if world.trim().is_empty() {
        SimConfig::default()
    } else {
        SimConfig::from_json(world).map_err(|e| e.to_string())?
    };
    let opts = RunOptions {
        max_repeats: Some(MAX_REPEATS),
        max_sim_time: Some(MAX_SIM_TIME),
        ..RunOptions::default()
    };
    let (trace, sim) = simulate(&deck, &catalog, cfg.clone(), seed, &opts, &StopHandle::new(), &mut ())
        .map_err(|e| e.to_string())?;
    let frame = sim.frame();
    let path: Vec<[f64; 4]> = sim.track().iter().map(|p| [p.t, p.east, p.north, p.up]).collect();
    let photos: Vec<[f64; 2]> = sim
        .photos()
        .iter()
        .map(|p| {
            let e = frame.to_enu(&p.location);
            [e.east, e.north]
        })
        .collect();
    let fields: Vec<Value> = [("gas", &cfg.gas_fields), ("humidity", &cfg.humidity_fields)]
        .into_iter()
        .flat_map(|(kind, fields)| {
            fields.iter().map(move |f| {
                let c = frame.to_enu(&f.center);
                json!({ "kind": kind, "east": c.east, "north": c.north, "radius": f.radius })
            })
        })
        .collect();
    Ok(json!({
        "status": trace.status,
        "events": trace.events,
        "path": path,
        "photos": photos,
        "fields": fields,
    }))
}

/// Bundled example decks with the world each is meant for.
pub fn examples() -> Value {
    let worlds: Value = corpus::WORLDS
        .iter()
        .map(|(name, text)| (name.to_string(), serde_json::from_str::<Value>(text).expect("bundled world")))
        .collect::<serde_json::Map<_, _>>()
        .into();
    let decks: Vec<Value> = corpus::DECKS
        .iter()
        .map(|e| json!({ "name": e.name, "notation": e.notation, "world": e.world }))
        .collect();
    json!({ "decks": decks, "worlds": worlds })
}

#[wasm_bindgen(js_name = validateDeck)]
pub fn validate_js(text: &str) -> String {
    check(text).to_string()
}

#[wasm_bindgen(js_name = toCanonicalJson)]
pub fn canonical_js(text: &str) -> Result<String, JsError> {
    canonical(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateDeck)]
pub fn simulate_js(text: &str, world: &str, seed: u32) -> Result<String, JsError> {
    run(text, world, seed as u64).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = exampleDecks)]
pub fn examples_js() -> String {
    examples().to_string()
}
