//! Card descriptors and the drone card catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::behavior::{BehaviorContract, BehaviorKind};
use crate::model::{DataKind, RelativePosition, Value};
use crate::token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionSubkind {
    Movement,
    Tech,
    Think,
    Trigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CardKind {
    Action(ActionSubkind),
    Input,
    Hand,
    Deck,
    Token,
}

impl CardKind {
    pub fn is_action(self) -> bool {
        matches!(self, CardKind::Action(_))
    }
}

impl fmt::Display for CardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CardKind::Action(sub) => write!(f, "Action/{sub:?}"),
            CardKind::Input => f.write_str("Input"),
            CardKind::Hand => f.write_str("Hand"),
            CardKind::Deck => f.write_str("Deck"),
            CardKind::Token => f.write_str("Token"),
        }
    }
}

impl FromStr for CardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Action/Movement" => CardKind::Action(ActionSubkind::Movement),
            "Action/Tech" => CardKind::Action(ActionSubkind::Tech),
            "Action/Think" => CardKind::Action(ActionSubkind::Think),
            "Action/Trigger" => CardKind::Action(ActionSubkind::Trigger),
            "Input" => CardKind::Input,
            "Hand" => CardKind::Hand,
            "Deck" => CardKind::Deck,
            "Token" => CardKind::Token,
            other => return Err(format!("unknown card kind `{other}`")),
        })
    }
}

impl Serialize for CardKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CardKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSlot {
    pub name: String,
    pub kind: DataKind,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSlotSpec {
    pub slot: String,
    #[serde(rename = "type")]
    pub token_type: String,
    /// Consumed (starburst) tokens admit one user per hand; shared ones any.
    pub consumed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldSpec {
    pub name: String,
    pub kind: DataKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardDescriptor {
    pub path: String,
    pub kind: CardKind,
    #[serde(default)]
    pub inputs: Vec<InputSlot>,
    #[serde(default)]
    pub tokens: Vec<TokenSlotSpec>,
    #[serde(default)]
    pub yields: Vec<YieldSpec>,
    #[serde(default)]
    pub ends: bool,
    /// Input cards: the slot name this card prefers when stacked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binds: Option<String>,
    /// Input cards: value used when the card is played without a literal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    /// Token cards: the token type granted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grants: Option<String>,
}

impl CardDescriptor {
    /// Last path segment, the name used in notation.
    pub fn name(&self) -> &str {
        self.path.rsplit('/').next().unwrap_or(&self.path)
    }

    pub fn input(&self, name: &str) -> Option<&InputSlot> {
        self.inputs.iter().find(|s| s.name == name)
    }

    pub fn token_slot(&self, slot: &str) -> Option<&TokenSlotSpec> {
        self.tokens.iter().find(|s| s.slot == slot)
    }

    pub fn yield_kind(&self, name: &str) -> Option<&DataKind> {
        self.yields.iter().find(|y| y.name == name).map(|y| &y.kind)
    }

    /// Kind of value an Input card provides.
    pub fn produces(&self) -> Option<&DataKind> {
        match self.kind {
            CardKind::Input => self.yields.first().map(|y| &y.kind),
            _ => None,
        }
    }

    /// Violations of the descriptor invariants.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let action = self.kind.is_action();
        if !action && (!self.tokens.is_empty() || self.ends) {
            out.push(format!("{}: only Action cards take tokens or end", self.path));
        }
        match self.kind {
            CardKind::Input => {
                if self.yields.len() != 1 || !self.inputs.is_empty() {
                    out.push(format!("{}: Input cards produce exactly one value", self.path));
                }
            }
            CardKind::Action(_) => {}
            _ if !self.yields.is_empty() => {
                out.push(format!("{}: only Action and Input cards yield", self.path))
            }
            _ => {}
        }
        if action && !self.ends && self.tokens.is_empty() {
            out.push(format!("{}: card has neither an end condition nor a token", self.path));
        }
        if matches!(self.kind, CardKind::Action(ActionSubkind::Movement))
            && !self
                .tokens
                .iter()
                .any(|t| t.token_type == token::MOVEMENT && t.consumed)
        {
            out.push(format!("{}: Movement cards consume the movement token", self.path));
        }
        if self.kind == CardKind::Token && self.grants.is_none() {
            out.push(format!("{}: Token cards grant a token type", self.path));
        }
        let mut slots = BTreeSet::new();
        for t in &self.tokens {
            if !slots.insert(t.slot.as_str()) {
                out.push(format!("{}: duplicate token slot `{}`", self.path, t.slot));
            }
        }
        let mut inputs = BTreeSet::new();
        for i in &self.inputs {
            if !inputs.insert(i.name.as_str()) {
                out.push(format!("{}: duplicate input slot `{}`", self.path, i.name));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("no card `{0}` in the catalog")]
    NotFound(String),
    #[error("`{0}` is not an Action card")]
    NotAnAction(String),
    #[error("invalid catalog entry: {0}")]
    Invalid(String),
}

/// Descriptors plus the behaviors backing every Action descriptor.
#[derive(Debug, Clone)]
pub struct Catalog {
    descriptors: BTreeMap<String, CardDescriptor>,
    behaviors: BTreeMap<String, BehaviorKind>,
}

impl Catalog {
    pub fn empty() -> Self {
        Catalog {
            descriptors: BTreeMap::new(),
            behaviors: BTreeMap::new(),
        }
    }

    /// The built-in drone card set.
    pub fn drone() -> Self {
        drone_catalog()
    }

    pub fn insert(&mut self, descriptor: CardDescriptor, behavior: Option<BehaviorKind>) -> Result<(), CatalogError> {
        let problems = descriptor.problems();
        if !problems.is_empty() {
            return Err(CatalogError::Invalid(problems.join("; ")));
        }
        if self.descriptors.contains_key(&descriptor.path) {
            return Err(CatalogError::Invalid(format!("duplicate path `{}`", descriptor.path)));
        }
        if self.by_name(descriptor.name()).is_some() {
            return Err(CatalogError::Invalid(format!("duplicate card name `{}`", descriptor.name())));
        }
        match (descriptor.kind.is_action(), behavior) {
            (true, Some(b)) => {
                self.behaviors.insert(descriptor.path.clone(), b);
            }
            (true, None) => {
                return Err(CatalogError::Invalid(format!("{} has no behavior", descriptor.path)))
            }
            (false, Some(_)) => {
                return Err(CatalogError::Invalid(format!(
                    "{} is not an Action card and cannot carry a behavior",
                    descriptor.path
                )))
            }
            (false, None) => {}
        }
        self.descriptors.insert(descriptor.path.clone(), descriptor);
        Ok(())
    }

    pub fn lookup(&self, path: &str) -> Result<&CardDescriptor, CatalogError> {
        self.descriptors
            .get(path)
            .ok_or_else(|| CatalogError::NotFound(path.to_string()))
    }

    /// Finds a descriptor by its short name (`FlyTo`).
    pub fn by_name(&self, name: &str) -> Option<&CardDescriptor> {
        self.descriptors.values().find(|d| d.name() == name)
    }

    pub fn contents(&self) -> impl Iterator<Item = &CardDescriptor> {
        self.descriptors.values()
    }

    pub fn behavior(&self, path: &str) -> Result<BehaviorKind, CatalogError> {
        let descriptor = self.lookup(path)?;
        if !descriptor.kind.is_action() {
            return Err(CatalogError::NotAnAction(path.to_string()));
        }
        self.behaviors
            .get(path)
            .copied()
            .ok_or_else(|| CatalogError::NotAnAction(path.to_string()))
    }

    pub fn behavior_for(&self, path: &str) -> Result<BehaviorContract, CatalogError> {
        self.behavior(path).map(BehaviorKind::contract)
    }

    /// Token types granted by the Token cards.
    pub fn token_types(&self) -> BTreeSet<&str> {
        self.descriptors
            .values()
            .filter_map(|d| d.grants.as_deref())
            .collect()
    }

    /// Every invariant violation across the catalog; empty when sound.
    pub fn self_check(&self) -> Vec<String> {
        let mut out: Vec<String> = self.descriptors.values().flat_map(|d| d.problems()).collect();
        for d in self.descriptors.values() {
            if d.kind.is_action() != self.behaviors.contains_key(&d.path) {
                out.push(format!("{}: behavior table mismatch", d.path));
            }
        }
        out
    }

    /// Descriptor list in the JSON sub-schema used by decks.
    pub fn to_json(&self) -> String {
        let list: Vec<&CardDescriptor> = self.descriptors.values().collect();
        serde_json::to_string_pretty(&list).expect("descriptors serialize")
    }

    /// Adds descriptors from an extension file: a JSON array of descriptor
    /// objects. Action entries name an existing Action card in `behavior`
    /// whose implementation they reuse.
    pub fn extend_from_json(&mut self, text: &str) -> Result<usize, CatalogError> {
        let entries: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| CatalogError::Invalid(e.to_string()))?;
        let count = entries.len();
        for mut entry in entries {
            let behavior = match entry.as_object_mut().and_then(|m| m.remove("behavior")) {
                Some(serde_json::Value::String(path)) => Some(self.behavior(&path)?),
                Some(other) => {
                    return Err(CatalogError::Invalid(format!("behavior must be a path, got {other}")))
                }
                None => None,
            };
            let descriptor: CardDescriptor =
                serde_json::from_value(entry).map_err(|e| CatalogError::Invalid(e.to_string()))?;
            self.insert(descriptor, behavior)?;
        }
        Ok(count)
    }
}

fn slot(name: &str, kind: DataKind, required: bool) -> InputSlot {
    InputSlot {
        name: name.into(),
        kind,
        required,
    }
}

fn consumes(token_type: &str) -> TokenSlotSpec {
    TokenSlotSpec {
        slot: token_type.into(),
        token_type: token_type.into(),
        consumed: true,
    }
}

fn shares(token_type: &str) -> TokenSlotSpec {
    TokenSlotSpec {
        consumed: false,
        ..consumes(token_type)
    }
}

fn yields(name: &str, kind: DataKind) -> YieldSpec {
    YieldSpec {
        name: name.into(),
        kind,
    }
}

fn seq(kind: DataKind) -> DataKind {
    DataKind::SequenceOf(Box::new(kind))
}

fn bare(path: &str, kind: CardKind) -> CardDescriptor {
    CardDescriptor {
        path: path.into(),
        kind,
        inputs: Vec::new(),
        tokens: Vec::new(),
        yields: Vec::new(),
        ends: false,
        binds: None,
        default: None,
        grants: None,
    }
}

struct Action {
    descriptor: CardDescriptor,
    behavior: BehaviorKind,
}

fn action(
    sub: ActionSubkind,
    name: &str,
    behavior: BehaviorKind,
    inputs: Vec<InputSlot>,
    tokens: Vec<TokenSlotSpec>,
    yield_specs: Vec<YieldSpec>,
    ends: bool,
) -> Action {
    let mut inputs = inputs;
    if sub == ActionSubkind::Movement {
        inputs.push(slot("minAltitude", DataKind::Altitude, false));
    }
    Action {
        descriptor: CardDescriptor {
            inputs,
            tokens,
            yields: yield_specs,
            ends,
            ..bare(&format!("Action/{sub:?}/{name}"), CardKind::Action(sub))
        },
        behavior,
    }
}

fn input_card(name: &str, kind: DataKind, binds: Option<&str>, default: Option<Value>) -> CardDescriptor {
    CardDescriptor {
        yields: vec![yields("value", kind)],
        binds: binds.map(str::to_string),
        default,
        ..bare(&format!("Input/{name}"), CardKind::Input)
    }
}

fn drone_catalog() -> Catalog {
    use ActionSubkind::*;
    use BehaviorKind as B;
    use DataKind as K;

    let movement = || vec![consumes(token::MOVEMENT)];
    let actions = vec![
        action(Movement, "FlyTo", B::FlyTo, vec![slot("destination", K::Location, true)], movement(), vec![], true),
        action(Movement, "Land", B::Land, vec![], movement(), vec![], true),
        action(Movement, "Hover", B::Hover, vec![], movement(), vec![], false),
        action(Movement, "HoverToAltitude", B::HoverToAltitude, vec![slot("altitude", K::Distance, true)], movement(), vec![], true),
        action(Movement, "ReturnHome", B::ReturnHome, vec![], movement(), vec![], true),
        action(
            Movement,
            "CoverArea",
            B::CoverArea,
            vec![slot("area", K::BoundingBox, true), slot("avoid", K::BoundingBox, false)],
            movement(),
            vec![],
            true,
        ),
        action(
            Movement,
            "Circle",
            B::Circle,
            vec![slot("center", K::Location, true), slot("radius", K::Distance, true)],
            movement(),
            vec![],
            false,
        ),
        action(
            Movement,
            "Follow",
            B::Follow,
            vec![slot("offset", K::RelativePosition, true), slot("target", K::Image, true)],
            movement(),
            vec![],
            false,
        ),
        action(Tech, "TakeAPhoto", B::TakeAPhoto, vec![], vec![consumes(token::CAMERA)], vec![], true),
        action(
            Tech,
            "TakePhotos",
            B::TakePhotos,
            vec![slot("duration", K::Duration, true)],
            vec![consumes(token::CAMERA)],
            vec![yields("photos", seq(K::Image)), yields("locations", seq(K::Location))],
            false,
        ),
        action(Tech, "RecordVideo", B::RecordVideo, vec![], vec![consumes(token::CAMERA)], vec![yields("video", K::Text)], false),
        action(Tech, "PlayAudio", B::PlayAudio, vec![slot("audio", K::Audio, true)], vec![consumes(token::SPEAKER)], vec![], true),
        action(Tech, "PlayAudioLoop", B::PlayAudioLoop, vec![slot("audio", K::Audio, true)], vec![consumes(token::SPEAKER)], vec![], false),
        action(Tech, "OpenClaw", B::OpenClaw, vec![], vec![consumes(token::CLAW)], vec![], true),
        action(Tech, "CloseClaw", B::CloseClaw, vec![], vec![consumes(token::CLAW)], vec![], true),
        action(
            Tech,
            "LogHumidity",
            B::LogHumidity,
            vec![],
            vec![shares(token::HUMIDITY_SENSOR)],
            vec![yields("readings", seq(K::Number))],
            false,
        ),
        action(
            Think,
            "DetectOnGround",
            B::DetectOnGround,
            vec![slot("image", K::Image, true)],
            vec![consumes(token::CAMERA), consumes(token::GIMBAL)],
            vec![yields("detectedLocation", K::Location)],
            true,
        ),
        action(
            Think,
            "DetectInAir",
            B::DetectInAir,
            vec![slot("image", K::Image, true)],
            vec![consumes(token::CAMERA), consumes(token::GIMBAL)],
            vec![yields("detectedLocation", K::Location)],
            true,
        ),
        action(
            Think,
            "TrackOnGround",
            B::TrackOnGround,
            vec![slot("image", K::Image, true)],
            vec![shares(token::CAMERA), consumes(token::GIMBAL)],
            vec![yields("trackedPosition", K::Location)],
            false,
        ),
        action(Trigger, "SetATimer", B::SetATimer, vec![slot("duration", K::Duration, true)], vec![], vec![], true),
        action(
            Trigger,
            "WaitUntilLocation",
            B::WaitUntilLocation,
            vec![slot("location", K::Location, true)],
            vec![shares(token::MOVEMENT)],
            vec![],
            true,
        ),
        action(Trigger, "WaitForButtonPush", B::WaitForButtonPush, vec![], vec![shares(token::BUTTON)], vec![], true),
        action(
            Trigger,
            "WaitForGas",
            B::WaitForGas,
            vec![slot("threshold", K::Threshold, true)],
            vec![shares(token::GAS_SENSOR)],
            vec![],
            true,
        ),
        action(
            Trigger,
            "WaitForHumidity",
            B::WaitForHumidity,
            vec![slot("threshold", K::Threshold, true)],
            vec![shares(token::HUMIDITY_SENSOR)],
            vec![],
            true,
        ),
    ];

    let origin = RelativePosition {
        east: 0.0,
        north: 0.0,
        up: 0.0,
    };
    let passive = vec![
        input_card("Location", K::Location, None, None),
        input_card("Distance", K::Distance, None, None),
        input_card("Duration", K::Duration, None, None),
        input_card("Altitude", K::Altitude, Some("minAltitude"), None),
        input_card("Image", K::Image, None, None),
        input_card("Audio", K::Audio, None, None),
        input_card("Threshold", K::Threshold, None, None),
        input_card("BoundingBox", K::BoundingBox, None, None),
        input_card("Avoid", K::BoundingBox, Some("avoid"), None),
        input_card("RelativeToObject", K::RelativePosition, Some("offset"), Some(Value::Relative(origin))),
        bare("Hand/Any", CardKind::Hand),
        bare("Hand/Repeat", CardKind::Hand),
        bare("Hand/Branch", CardKind::Hand),
        bare("Hand/And", CardKind::Hand),
        bare("Hand/Or", CardKind::Hand),
        bare("Hand/Not", CardKind::Hand),
        bare("Deck/RepeatDeck", CardKind::Deck),
    ];
    let token_cards = [
        ("Movement", token::MOVEMENT),
        ("Camera", token::CAMERA),
        ("Gimbal", token::GIMBAL),
        ("Claw", token::CLAW),
        ("Speaker", token::SPEAKER),
        ("GasSensor", token::GAS_SENSOR),
        ("HumiditySensor", token::HUMIDITY_SENSOR),
        ("Button", token::BUTTON),
    ];

    let mut catalog = Catalog::empty();
    for a in actions {
        catalog.insert(a.descriptor, Some(a.behavior)).expect("built-in action is sound");
    }
    for d in passive {
        catalog.insert(d, None).expect("built-in card is sound");
    }
    for (name, grants) in token_cards {
        let d = CardDescriptor {
            grants: Some(grants.into()),
            ..bare(&format!("Token/{name}"), CardKind::Token)
        };
        catalog.insert(d, None).expect("built-in token card is sound");
    }
    catalog
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_sound() {
        assert_eq!(Catalog::drone().self_check(), Vec::<String>::new());
    }

    #[test]
    fn fly_to_consumes_movement_and_ends() {
        let c = Catalog::drone();
        let fly = c.lookup("Action/Movement/FlyTo").unwrap();
        assert!(fly.ends);
        assert_eq!(fly.tokens, vec![consumes("movement")]);
        assert_eq!(fly.inputs[0], slot("destination", DataKind::Location, true));
    }

    #[test]
    fn record_video_never_ends() {
        assert!(!Catalog::drone().lookup("Action/Tech/RecordVideo").unwrap().ends);
    }

    #[test]
    fn unknown_path() {
        assert_eq!(
            Catalog::drone().lookup("Action/NoSuchCard").unwrap_err(),
            CatalogError::NotFound("Action/NoSuchCard".into())
        );
    }

    #[test]
    fn detect_on_ground_needs_image_camera_gimbal() {
        let c = Catalog::drone();
        let d = c.lookup("Action/Think/DetectOnGround").unwrap();
        assert_eq!(d.inputs, vec![slot("image", DataKind::Image, true)]);
        assert_eq!(d.tokens, vec![consumes("camera"), consumes("gimbal")]);
        assert!(d.ends);
    }

    #[test]
    fn take_photos_yields_sequences() {
        let c = Catalog::drone();
        let d = c.lookup("Action/Tech/TakePhotos").unwrap();
        assert_eq!(
            d.yields,
            vec![
                yields("photos", seq(DataKind::Image)),
                yields("locations", seq(DataKind::Location))
            ]
        );
    }

    #[test]
    fn every_movement_card_consumes_movement() {
        let c = Catalog::drone();
        for d in c.contents().filter(|d| d.kind == CardKind::Action(ActionSubkind::Movement)) {
            assert!(d.tokens.contains(&consumes("movement")), "{}", d.path);
            assert!(d.input("minAltitude").is_some(), "{}", d.path);
        }
    }

    #[test]
    fn behaviors_only_for_actions() {
        let c = Catalog::drone();
        assert!(c.behavior_for("Action/Movement/Land").is_ok());
        assert_eq!(
            c.behavior_for("Input/Location").unwrap_err(),
            CatalogError::NotAnAction("Input/Location".into())
        );
    }

    #[test]
    fn extension_catalog() {
        let mut c = Catalog::drone();
        let text = r#"[{"path":"Action/Movement/Patrol","kind":"Action/Movement",
            "inputs":[{"name":"destination","kind":"Location","required":true}],
            "tokens":[{"slot":"movement","type":"movement","consumed":true}],
            "ends":true,"behavior":"Action/Movement/FlyTo"}]"#;
        assert_eq!(c.extend_from_json(text).unwrap(), 1);
        assert!(c.behavior("Action/Movement/Patrol").is_ok());
        let bad = r#"[{"path":"Input/Speed","kind":"Input","ends":true}]"#;
        assert!(c.extend_from_json(bad).is_err());
    }

    #[test]
    fn descriptor_json_round_trip() {
        let c = Catalog::drone();
        let list: Vec<CardDescriptor> = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(list.len(), c.contents().count());
        assert_eq!(&list[0], c.contents().next().unwrap());
    }
}
