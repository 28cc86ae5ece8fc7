//! Reference decks and worlds shipped with the crate.

use std::collections::BTreeMap;

use crate::catalog::Catalog;
use crate::model::{Deck, Value};
use crate::notation::{parse_notation, NotationError};
use crate::sim::SimConfig;

pub struct Entry {
    pub name: &'static str,
    pub notation: &'static str,
    /// Name of the world the deck is meant to run in.
    pub world: &'static str,
}

pub const DECKS: &[Entry] = &[
    Entry {
        name: "delivery",
        notation: include_str!("../corpus/delivery.cards"),
        world: "default",
    },
    Entry {
        name: "ski-follow",
        notation: include_str!("../corpus/ski-follow.cards"),
        world: "ski-follow",
    },
    Entry {
        name: "gas-sweep",
        notation: include_str!("../corpus/gas-sweep.cards"),
        world: "gas-sweep-leak",
    },
    Entry {
        name: "house-photo",
        notation: include_str!("../corpus/house-photo.cards"),
        world: "default",
    },
    Entry {
        name: "house-photos",
        notation: include_str!("../corpus/house-photos.cards"),
        world: "default",
    },
    Entry {
        name: "humidity-wait",
        notation: include_str!("../corpus/humidity-wait.cards"),
        world: "humidity-wait",
    },
    Entry {
        name: "yield-flow",
        notation: include_str!("../corpus/yield-flow.cards"),
        world: "default",
    },
];

pub const WORLDS: &[(&str, &str)] = &[
    ("default", include_str!("../corpus/default.json")),
    ("ski-follow", include_str!("../corpus/ski-follow.json")),
    ("gas-sweep-leak", include_str!("../corpus/gas-sweep-leak.json")),
    ("gas-sweep-clear", include_str!("../corpus/gas-sweep-clear.json")),
    ("humidity-wait", include_str!("../corpus/humidity-wait.json")),
];

pub const BINDINGS: &str = include_str!("../corpus/bindings.json");

/// Named literal values used by the reference decks.
pub fn bindings() -> BTreeMap<String, Value> {
    serde_json::from_str(BINDINGS).expect("bundled bindings are valid")
}

pub fn entry(name: &str) -> Option<&'static Entry> {
    DECKS.iter().find(|e| e.name == name)
}

pub fn deck(name: &str, catalog: &Catalog) -> Option<Result<Deck, NotationError>> {
    entry(name).map(|e| parse_notation(e.notation, catalog, &bindings()))
}

pub fn world(name: &str) -> Option<SimConfig> {
    WORLDS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| SimConfig::from_json(text).expect("bundled world is valid"))
}
