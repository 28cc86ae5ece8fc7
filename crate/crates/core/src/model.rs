//! Deck data model and its canonical JSON form.
//!
//! A [`Deck`] is an ordered list of [`Hand`]s. Each hand holds Action card
//! instances whose inputs are either literals (the stacked Input cards) or
//! references to yields of earlier hands. Hand cards (`Any`, `Repeat`,
//! `Branch`, `And`/`Or`/`Not`) and the `RepeatDeck` deck card are folded
//! into fields of the hand and deck respectively.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Kind of a value flowing into an input slot or out of a yield.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataKind {
    Location,
    Distance,
    Duration,
    Altitude,
    Image,
    Audio,
    Threshold,
    BoundingBox,
    RelativePosition,
    Boolean,
    Number,
    Text,
    SequenceOf(Box<DataKind>),
}

impl DataKind {
    pub const SCALARS: [DataKind; 12] = [
        DataKind::Location,
        DataKind::Distance,
        DataKind::Duration,
        DataKind::Altitude,
        DataKind::Image,
        DataKind::Audio,
        DataKind::Threshold,
        DataKind::BoundingBox,
        DataKind::RelativePosition,
        DataKind::Boolean,
        DataKind::Number,
        DataKind::Text,
    ];

    pub fn sequence_of(inner: DataKind) -> Result<DataKind, KindError> {
        if matches!(inner, DataKind::SequenceOf(_)) {
            return Err(KindError::NestedSequence);
        }
        Ok(DataKind::SequenceOf(Box::new(inner)))
    }

    /// Element kind of a sequence, `None` for scalars.
    pub fn element(&self) -> Option<&DataKind> {
        match self {
            DataKind::SequenceOf(inner) => Some(inner),
            _ => None,
        }
    }

    fn scalar_name(&self) -> &'static str {
        match self {
            DataKind::Location => "Location",
            DataKind::Distance => "Distance",
            DataKind::Duration => "Duration",
            DataKind::Altitude => "Altitude",
            DataKind::Image => "Image",
            DataKind::Audio => "Audio",
            DataKind::Threshold => "Threshold",
            DataKind::BoundingBox => "BoundingBox",
            DataKind::RelativePosition => "RelativePosition",
            DataKind::Boolean => "Boolean",
            DataKind::Number => "Number",
            DataKind::Text => "Text",
            DataKind::SequenceOf(_) => "SequenceOf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KindError {
    #[error("sequences of sequences are not allowed")]
    NestedSequence,
    #[error("unknown data kind `{0}`")]
    Unknown(String),
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataKind::SequenceOf(inner) => write!(f, "SequenceOf({inner})"),
            other => f.write_str(other.scalar_name()),
        }
    }
}

impl FromStr for DataKind {
    type Err = KindError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("SequenceOf(") {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| KindError::Unknown(s.to_string()))?;
            return DataKind::sequence_of(inner.parse()?);
        }
        DataKind::SCALARS
            .iter()
            .find(|k| k.scalar_name() == s)
            .cloned()
            .ok_or_else(|| KindError::Unknown(s.to_string()))
    }
}

impl Serialize for DataKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DataKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// WGS-84 position; altitude in meters above the home ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Self {
        Location { lat, lon, alt }
    }
}

/// Axis-aligned lat/lon box, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub south: f64,
    pub west: f64,
    pub north: f64,
    pub east: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.south && lat <= self.north && lon >= self.west && lon <= self.east
    }
}

/// Offset from a tracked object, in meters (east, north, up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativePosition {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

/// A typed literal or runtime value.
///
/// Literals are shape-typed in JSON: numbers, booleans, strings, the three
/// object shapes above, and flat arrays. The slot's [`DataKind`] decides
/// whether a shape is acceptable (see [`Value::conforms_to`]).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Bool(bool),
    Text(String),
    Location(Location),
    BoundingBox(BoundingBox),
    Relative(RelativePosition),
    List(Vec<Value>),
}

impl Value {
    pub fn conforms_to(&self, kind: &DataKind) -> bool {
        match (self, kind) {
            (Value::Number(v), DataKind::Duration | DataKind::Distance) => *v >= 0.0,
            (Value::Number(_), DataKind::Altitude | DataKind::Threshold | DataKind::Number) => {
                true
            }
            (Value::Bool(_), DataKind::Boolean) => true,
            (Value::Text(_), DataKind::Image | DataKind::Audio | DataKind::Text) => true,
            (Value::Location(_), DataKind::Location) => true,
            (Value::BoundingBox(b), DataKind::BoundingBox) => b.south <= b.north && b.west <= b.east,
            (Value::Relative(_), DataKind::RelativePosition) => true,
            (Value::List(items), DataKind::SequenceOf(inner)) => {
                items.iter().all(|v| v.conforms_to(inner))
            }
            _ => false,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_location(&self) -> Option<Location> {
        match self {
            Value::Location(l) => Some(*l),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Number(v) => serde_json::Number::from_f64(*v).map(J::Number).unwrap_or(J::Null),
            Value::Bool(b) => J::Bool(*b),
            Value::Text(s) => J::String(s.clone()),
            Value::Location(l) => serde_json::to_value(l).unwrap_or(J::Null),
            Value::BoundingBox(b) => serde_json::to_value(b).unwrap_or(J::Null),
            Value::Relative(r) => serde_json::to_value(r).unwrap_or(J::Null),
            Value::List(items) => J::Array(items.iter().map(Value::to_json).collect()),
        }
    }

    pub fn from_json(json: &serde_json::Value) -> Result<Value, String> {
        Self::from_json_depth(json, 0)
    }

    fn from_json_depth(json: &serde_json::Value, depth: usize) -> Result<Value, String> {
        use serde_json::Value as J;
        match json {
            J::Number(n) => n
                .as_f64()
                .filter(|v| v.is_finite())
                .map(Value::Number)
                .ok_or_else(|| format!("number {n} is not finite")),
            J::Bool(b) => Ok(Value::Bool(*b)),
            J::String(s) => Ok(Value::Text(s.clone())),
            J::Array(items) => {
                if depth > 0 {
                    return Err("nested lists are not allowed".into());
                }
                items
                    .iter()
                    .map(|v| Self::from_json_depth(v, depth + 1))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Value::List)
            }
            J::Object(map) => {
                let keys: BTreeSet<&str> = map.keys().map(String::as_str).collect();
                let shape = |want: &[&str]| keys == want.iter().copied().collect::<BTreeSet<_>>();
                let parsed = if shape(&["lat", "lon", "alt"]) {
                    serde_json::from_value(json.clone()).map(Value::Location)
                } else if shape(&["south", "west", "north", "east"]) {
                    serde_json::from_value(json.clone()).map(Value::BoundingBox)
                } else if shape(&["east", "north", "up"]) {
                    serde_json::from_value(json.clone()).map(Value::Relative)
                } else {
                    return Err(format!(
                        "object literal with keys {keys:?} matches no value shape"
                    ));
                };
                let value = parsed.map_err(|e| e.to_string())?;
                if !value.is_finite() {
                    return Err("literal coordinates must be finite".into());
                }
                Ok(value)
            }
            J::Null => Err("null is not a value".into()),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Value::Number(v) => v.is_finite(),
            Value::Location(l) => l.lat.is_finite() && l.lon.is_finite() && l.alt.is_finite(),
            Value::BoundingBox(b) => [b.south, b.west, b.north, b.east].iter().all(|v| v.is_finite()),
            Value::Relative(r) => [r.east, r.north, r.up].iter().all(|v| v.is_finite()),
            Value::List(items) => items.iter().all(Value::is_finite),
            Value::Bool(_) | Value::Text(_) => true,
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(deserializer)?;
        Value::from_json(&json).map_err(serde::de::Error::custom)
    }
}

/// Reference to a yield of a card in an earlier hand.
///
/// `name` may carry an element selector, `locations[0]`, which picks one
/// element of a sequence-valued yield.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldRef {
    pub hand: usize,
    pub card: String,
    pub name: String,
}

impl YieldRef {
    pub fn new(hand: usize, card: impl Into<String>, name: impl Into<String>) -> Self {
        YieldRef {
            hand,
            card: card.into(),
            name: name.into(),
        }
    }

    /// Splits `name` into the yield name and an optional element index.
    /// Returns `None` for a malformed selector.
    pub fn selector(&self) -> Option<(&str, Option<usize>)> {
        match self.name.split_once('[') {
            None => Some((self.name.as_str(), None)),
            Some((base, rest)) => {
                let index = rest.strip_suffix(']')?.parse().ok()?;
                Some((base, Some(index)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSource {
    #[serde(rename = "literal")]
    Literal(Value),
    #[serde(rename = "yield")]
    Yield(YieldRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardInstance {
    pub id: String,
    #[serde(rename = "card")]
    pub descriptor: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, InputSource>,
    #[serde(default)]
    pub tokens: BTreeMap<String, String>,
}

impl CardInstance {
    pub fn new(id: impl Into<String>, descriptor: impl Into<String>) -> Self {
        CardInstance {
            id: id.into(),
            descriptor: descriptor.into(),
            inputs: BTreeMap::new(),
            tokens: BTreeMap::new(),
        }
    }

    pub fn with_literal(mut self, slot: impl Into<String>, value: Value) -> Self {
        self.inputs.insert(slot.into(), InputSource::Literal(value));
        self
    }

    pub fn with_yield(mut self, slot: impl Into<String>, source: YieldRef) -> Self {
        self.inputs.insert(slot.into(), InputSource::Yield(source));
        self
    }

    pub fn with_token(mut self, slot: impl Into<String>, token: impl Into<String>) -> Self {
        self.tokens.insert(slot.into(), token.into());
        self
    }
}

/// Boolean tree over the end conditions of cards in one hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "card")]
    Card(String),
    #[serde(rename = "and")]
    And(Vec<Condition>),
    #[serde(rename = "or")]
    Or(Vec<Condition>),
    #[serde(rename = "not")]
    Not(Box<Condition>),
}

impl Condition {
    pub fn card(id: impl Into<String>) -> Self {
        Condition::Card(id.into())
    }

    pub fn evaluate(&self, satisfied: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Condition::Card(id) => satisfied(id),
            Condition::And(children) => children.iter().all(|c| c.evaluate(satisfied)),
            Condition::Or(children) => children.iter().any(|c| c.evaluate(satisfied)),
            Condition::Not(child) => !child.evaluate(satisfied),
        }
    }

    /// Visits every leaf with a flag telling whether it sits under a `Not`.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(&str, bool)) {
        self.walk(false, f);
    }

    fn walk(&self, negated: bool, f: &mut impl FnMut(&str, bool)) {
        match self {
            Condition::Card(id) => f(id, negated),
            Condition::And(children) | Condition::Or(children) => {
                children.iter().for_each(|c| c.walk(negated, f))
            }
            Condition::Not(child) => child.walk(true, f),
        }
    }

    pub fn has_empty_group(&self) -> bool {
        match self {
            Condition::Card(_) => false,
            Condition::And(children) | Condition::Or(children) => {
                children.is_empty() || children.iter().any(Condition::has_empty_group)
            }
            Condition::Not(child) => child.has_empty_group(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub when: Condition,
    /// Target hand index. `deck.hands.len()` denotes the end of the deck.
    pub goto: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hand {
    #[serde(default)]
    pub rule: Rule,
    /// Extra executions of the hand; `Repeat(n)` stores `n - 1`.
    #[serde(default)]
    pub repeat: u32,
    #[serde(default)]
    pub cards: Vec<CardInstance>,
    #[serde(default)]
    pub branches: Vec<Branch>,
}

impl Hand {
    pub fn new(cards: Vec<CardInstance>) -> Self {
        Hand {
            cards,
            ..Hand::default()
        }
    }

    pub fn card(&self, id: &str) -> Option<&CardInstance> {
        self.cards.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDecl {
    pub id: String,
    #[serde(rename = "type")]
    pub token_type: String,
}

impl TokenDecl {
    pub fn new(id: impl Into<String>, token_type: impl Into<String>) -> Self {
        TokenDecl {
            id: id.into(),
            token_type: token_type.into(),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct Deck {
    pub deck_id: String,
    #[serde(default)]
    pub tokens: Vec<TokenDecl>,
    #[serde(default)]
    pub repeat_deck: bool,
    #[serde(default = "default_true")]
    pub implicit_land: bool,
    pub hands: Vec<Hand>,
}

/// Malformed deck text or a violated structural invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema error at {path}: {reason}")]
pub struct SchemaError {
    pub path: String,
    pub reason: String,
}

impl SchemaError {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        SchemaError {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl Deck {
    pub fn new(deck_id: impl Into<String>, hands: Vec<Hand>) -> Self {
        Deck {
            deck_id: deck_id.into(),
            tokens: Vec::new(),
            repeat_deck: false,
            implicit_land: true,
            hands,
        }
    }

    pub fn with_token(mut self, id: impl Into<String>, token_type: impl Into<String>) -> Self {
        self.tokens.push(TokenDecl::new(id, token_type));
        self
    }

    pub fn token_type(&self, id: &str) -> Option<&str> {
        self.tokens
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.token_type.as_str())
    }

    /// Index of the sentinel branch target that ends the deck pass.
    pub fn end_target(&self) -> usize {
        self.hands.len()
    }

    /// Finds a card instance by id anywhere in the deck.
    pub fn find_card(&self, id: &str) -> Option<(usize, &CardInstance)> {
        self.hands
            .iter()
            .enumerate()
            .find_map(|(h, hand)| hand.card(id).map(|c| (h, c)))
    }

    /// Checks the structural invariants that hold without a catalog.
    pub fn check_structure(&self) -> Result<(), SchemaError> {
        if self.hands.is_empty() {
            return Err(SchemaError::new("hands", "a deck needs at least one hand"));
        }
        let mut token_ids = BTreeMap::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if let Some(prev) = token_ids.insert(t.id.as_str(), i) {
                return Err(SchemaError::new(
                    format!("tokens[{i}]"),
                    format!("token id `{}` already declared at tokens[{prev}]", t.id),
                ));
            }
        }
        let mut card_ids: BTreeMap<&str, String> = BTreeMap::new();
        for (h, hand) in self.hands.iter().enumerate() {
            for (c, card) in hand.cards.iter().enumerate() {
                let path = format!("hands[{h}].cards[{c}]");
                if card.id.is_empty() {
                    return Err(SchemaError::new(path, "card id is empty"));
                }
                if let Some(prev) = card_ids.insert(card.id.as_str(), path.clone()) {
                    return Err(SchemaError::new(
                        path.clone(),
                        format!("duplicate card id `{}` (also at {prev} and {path})", card.id),
                    ));
                }
                for (slot, source) in &card.inputs {
                    if let InputSource::Literal(v) = source {
                        if let Some(reason) = literal_shape_problem(v) {
                            return Err(SchemaError::new(format!("{path}.inputs.{slot}"), reason));
                        }
                    }
                }
            }
            for (b, branch) in hand.branches.iter().enumerate() {
                let path = format!("hands[{h}].branches[{b}]");
                if branch.goto <= h {
                    return Err(SchemaError::new(
                        path,
                        format!(
                            "branch target {} is not after hand {h}; branches only go forward",
                            branch.goto
                        ),
                    ));
                }
                if branch.when.has_empty_group() {
                    return Err(SchemaError::new(
                        format!("{path}.when"),
                        "and/or groups need at least one operand",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON text: lexicographic key order, compact, deterministic.
    pub fn to_canonical_json(&self) -> String {
        let mut json = serde_json::to_value(self).expect("deck serializes");
        sort_keys(&mut json);
        serde_json::to_string(&json).expect("json value serializes")
    }

    pub fn from_json(text: &str) -> Result<Deck, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let deck: Deck = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            SchemaError::new(if path == "." { "$".into() } else { path }, e.inner().to_string())
        })?;
        deck.check_structure()?;
        Ok(deck)
    }
}

fn literal_shape_problem(v: &Value) -> Option<String> {
    match v {
        Value::List(items) if items.iter().any(|i| matches!(i, Value::List(_))) => {
            Some("nested lists are not allowed".into())
        }
        _ if !v.is_finite() => Some("literal must be finite".into()),
        _ => None,
    }
}

fn sort_keys(json: &mut serde_json::Value) {
    match json {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<_> = std::mem::take(map).into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            for (k, mut v) in entries {
                sort_keys(&mut v);
                map.insert(k, v);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(sort_keys),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn house_photo() -> Deck {
        Deck::new(
            "house-photo",
            vec![
                Hand::new(vec![CardInstance::new("fly", "Action/Movement/FlyTo")
                    .with_literal("destination", Value::Location(Location::new(41.0, -73.0, 10.0)))
                    .with_token("movement", "movement")]),
                Hand::new(vec![CardInstance::new("photo", "Action/Tech/TakeAPhoto")
                    .with_token("camera", "camera")]),
            ],
        )
        .with_token("camera", "camera")
        .with_token("movement", "movement")
    }

    #[test]
    fn serializes_descriptor_path_and_sorted_keys() {
        let text = house_photo().to_canonical_json();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["hands"][0]["cards"][0]["card"], "Action/Movement/FlyTo");
        assert!(text.starts_with(r#"{"deckId":"house-photo","hands":[{"branches":[],"cards":[{"card":"#));
        assert_eq!(Deck::from_json(&text).unwrap(), house_photo());
    }

    #[test]
    fn rejects_backward_branch() {
        let mut json: serde_json::Value =
            serde_json::from_str(&house_photo().to_canonical_json()).unwrap();
        json["hands"].as_array_mut().unwrap().push(serde_json::json!({
            "rule": "all", "repeat": 0, "cards": [],
            "branches": [{"when": {"card": "x"}, "goto": 0}]
        }));
        let err = Deck::from_json(&json.to_string()).unwrap_err();
        assert_eq!(err.path, "hands[2].branches[0]");
    }

    #[test]
    fn rejects_duplicate_id_citing_both_paths() {
        let mut deck = house_photo();
        deck.hands[1].cards[0].id = "fly".into();
        let err = Deck::from_json(&deck.to_canonical_json()).unwrap_err();
        assert!(err.reason.contains("hands[0].cards[0]"), "{err}");
        assert!(err.reason.contains("hands[1].cards[0]"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_literals() {
        let text = house_photo().to_canonical_json().replace(r#""deckId""#, r#""extra":1,"deckId""#);
        assert!(Deck::from_json(&text).is_err());
        let text = house_photo()
            .to_canonical_json()
            .replace(r#""alt":10.0"#, r#""alt":10.0,"speed":3"#);
        let err = Deck::from_json(&text).unwrap_err();
        assert!(err.path.contains("destination"), "{err}");
        assert!(Deck::from_json("{\"deckId\":\"x\",\"hands\":[]}").is_err());
        assert!(Deck::from_json("{\"deckId\":").is_err());
    }

    #[test]
    fn data_kind_text_form() {
        let k: DataKind = "SequenceOf(Location)".parse().unwrap();
        assert_eq!(k, DataKind::SequenceOf(Box::new(DataKind::Location)));
        assert_eq!(k.to_string(), "SequenceOf(Location)");
        assert_eq!(
            "SequenceOf(SequenceOf(Image))".parse::<DataKind>(),
            Err(KindError::NestedSequence)
        );
    }

    #[test]
    fn yield_selector() {
        assert_eq!(YieldRef::new(0, "a", "locations[2]").selector(), Some(("locations", Some(2))));
        assert_eq!(YieldRef::new(0, "a", "photos").selector(), Some(("photos", None)));
        assert_eq!(YieldRef::new(0, "a", "photos[x]").selector(), None);
    }

    #[test]
    fn value_conformance() {
        assert!(Value::Number(3.0).conforms_to(&DataKind::Duration));
        assert!(!Value::Number(-3.0).conforms_to(&DataKind::Duration));
        assert!(!Value::Text("pickup".into()).conforms_to(&DataKind::Location));
        let seq = DataKind::sequence_of(DataKind::Image).unwrap();
        assert!(Value::List(vec![Value::Text("p".into())]).conforms_to(&seq));
    }
}
