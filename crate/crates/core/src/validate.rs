//! Static checks of a deck against a catalog.
//!
//! A deck with no error-severity diagnostics is executable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{CardDescriptor, Catalog};
use crate::model::{Condition, DataKind, Deck, Hand, InputSource, Rule, YieldRef};

pub mod codes {
    pub const TOKEN_CONFLICT: &str = "E_TOKEN_CONFLICT";
    pub const TOKEN_UNDECLARED: &str = "E_TOKEN_UNDECLARED";
    pub const TOKEN_UNBOUND: &str = "E_TOKEN_UNBOUND";
    pub const TOKEN_UNKNOWN_SLOT: &str = "E_TOKEN_UNKNOWN_SLOT";
    pub const TOKEN_TYPE_UNKNOWN: &str = "E_TOKEN_TYPE_UNKNOWN";
    pub const CARD_UNKNOWN: &str = "E_CARD_UNKNOWN";
    pub const CARD_NOT_ACTION: &str = "E_CARD_NOT_ACTION";
    pub const INPUT_MISSING: &str = "E_INPUT_MISSING";
    pub const INPUT_TYPE_MISMATCH: &str = "E_INPUT_TYPE_MISMATCH";
    pub const INPUT_UNKNOWN_SLOT: &str = "E_INPUT_UNKNOWN_SLOT";
    pub const YIELD_REF_FORWARD: &str = "E_YIELD_REF_FORWARD";
    pub const YIELD_REF_UNKNOWN: &str = "E_YIELD_REF_UNKNOWN";
    pub const YIELD_REF_MAYBE_UNSET: &str = "E_YIELD_REF_MAYBE_UNSET";
    pub const BRANCH_TARGET_UNKNOWN: &str = "E_BRANCH_TARGET_UNKNOWN";
    pub const BRANCH_BACKWARD: &str = "E_BRANCH_BACKWARD";
    pub const CONDITION_UNKNOWN_CARD: &str = "E_CONDITION_UNKNOWN_CARD";
    pub const CONDITION_NO_END: &str = "E_CONDITION_NO_END";
    pub const CONDITION_EMPTY: &str = "E_CONDITION_EMPTY";
    pub const NO_END_CONDITION: &str = "E_NO_END_CONDITION";
    pub const EMPTY_HAND: &str = "E_EMPTY_HAND";
    pub const UNREACHABLE_HAND: &str = "W_UNREACHABLE_HAND";
    pub const DEAD_YIELD: &str = "W_DEAD_YIELD";
}

/// Hands with more end-condition cards than this are not enumerated; all
/// their edges are assumed live.
const MAX_ENUMERATED_ENDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiagPath {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
}

impl DiagPath {
    fn deck() -> Self {
        DiagPath::default()
    }

    fn hand(hand: usize) -> Self {
        DiagPath {
            hand: Some(hand),
            ..Default::default()
        }
    }

    fn card(hand: usize, card: &str) -> Self {
        DiagPath {
            hand: Some(hand),
            card: Some(card.to_string()),
            slot: None,
        }
    }

    fn slot(hand: usize, card: &str, slot: &str) -> Self {
        DiagPath {
            slot: Some(slot.to_string()),
            ..DiagPath::card(hand, card)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub severity: Severity,
    pub path: DiagPath,
    pub message: String,
}

impl Diagnostic {
    fn new(code: &str, path: DiagPath, message: impl Into<String>) -> Self {
        let severity = if code.starts_with("W_") { Severity::Warning } else { Severity::Error };
        Diagnostic {
            code: code.to_string(),
            severity,
            path,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(Diagnostic::is_error)
}

pub fn to_jsonl(diagnostics: &[Diagnostic]) -> String {
    diagnostics.iter().map(|d| d.to_json() + "\n").collect()
}

/// Kind of a yield reference after applying any element selector.
pub fn yield_ref_kind(descriptor: &CardDescriptor, r: &YieldRef) -> Result<DataKind, String> {
    let (base, index) = r.selector().ok_or_else(|| format!("malformed yield name `{}`", r.name))?;
    let kind = descriptor
        .yield_kind(base)
        .ok_or_else(|| format!("`{}` has no yield named `{base}`", descriptor.name()))?;
    match index {
        None => Ok(kind.clone()),
        Some(_) => kind
            .element()
            .cloned()
            .ok_or_else(|| format!("yield `{base}` is a {kind}, not a sequence")),
    }
}

fn ends_of<'a>(hand: &'a Hand, catalog: &Catalog) -> Vec<&'a str> {
    hand.cards
        .iter()
        .filter(|c| catalog.lookup(&c.descriptor).is_ok_and(|d| d.kind.is_action() && d.ends))
        .map(|c| c.id.as_str())
        .collect()
}

/// Control-flow successors of one hand that some satisfaction order can take.
fn live_edges(deck: &Deck, h: usize, catalog: &Catalog) -> Vec<usize> {
    let hand = &deck.hands[h];
    let ends = ends_of(hand, catalog);
    let valid = |g: usize| g > h && g <= deck.hands.len();
    let mut branch_live = vec![false; hand.branches.len()];
    let mut fallthrough = false;
    if ends.len() > MAX_ENUMERATED_ENDS {
        branch_live.iter_mut().for_each(|b| *b = true);
        fallthrough = true;
    } else {
        for mask in 0u32..(1 << ends.len()) {
            let satisfied = |id: &str| ends.iter().position(|e| *e == id).is_some_and(|i| mask & (1 << i) != 0);
            match hand.branches.iter().position(|b| b.when.evaluate(&satisfied)) {
                Some(b) => branch_live[b] = true,
                None => {
                    let met = match hand.rule {
                        Rule::All => !ends.is_empty() && mask == (1 << ends.len()) - 1,
                        Rule::Any => mask != 0,
                    };
                    fallthrough |= met;
                }
            }
        }
    }
    let mut edges: Vec<usize> = hand
        .branches
        .iter()
        .zip(branch_live)
        .filter(|(b, live)| *live && valid(b.goto))
        .map(|(b, _)| b.goto)
        .collect();
    if fallthrough {
        edges.push(h + 1);
    }
    edges.retain(|&g| g < deck.hands.len());
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Which hands can execute, starting from hand 0.
pub fn reachability_map(deck: &Deck, catalog: &Catalog) -> Vec<bool> {
    let n = deck.hands.len();
    let mut reachable = vec![false; n];
    if n == 0 {
        return reachable;
    }
    reachable[0] = true;
    for h in 0..n {
        if reachable[h] {
            for g in live_edges(deck, h, catalog) {
                reachable[g] = true;
            }
        }
    }
    reachable
}

/// Dominator sets over the forward control-flow graph of reachable hands.
fn dominators(deck: &Deck, catalog: &Catalog, reachable: &[bool]) -> Vec<BTreeSet<usize>> {
    let n = deck.hands.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for h in (0..n).filter(|&h| reachable[h]) {
        for g in live_edges(deck, h, catalog) {
            preds[g].push(h);
        }
    }
    let mut dom: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for h in 0..n {
        if !reachable[h] {
            continue;
        }
        let mut set = preds[h]
            .iter()
            .map(|&p| dom[p].clone())
            .reduce(|a, b| a.intersection(&b).copied().collect())
            .unwrap_or_default();
        set.insert(h);
        dom[h] = set;
    }
    dom
}

pub fn validate_deck(deck: &Deck, catalog: &Catalog) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let declared: BTreeMap<&str, &str> = deck
        .tokens
        .iter()
        .map(|t| (t.id.as_str(), t.token_type.as_str()))
        .collect();
    let known_types = catalog.token_types();
    for t in &deck.tokens {
        if !known_types.contains(t.token_type.as_str()) {
            out.push(Diagnostic::new(
                codes::TOKEN_TYPE_UNKNOWN,
                DiagPath::deck(),
                format!("token `{}` has unknown type `{}`", t.id, t.token_type),
            ));
        }
    }

    let reachable = reachability_map(deck, catalog);
    let dom = dominators(deck, catalog, &reachable);
    let mut referenced: BTreeSet<(usize, String, String)> = BTreeSet::new();
    let last = deck.hands.len().saturating_sub(1);

    for (h, hand) in deck.hands.iter().enumerate() {
        if hand.cards.is_empty() {
            out.push(Diagnostic::new(codes::EMPTY_HAND, DiagPath::hand(h), format!("hand {h} has no Action cards")));
        }
        let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for card in &hand.cards {
            let descriptor = match catalog.lookup(&card.descriptor) {
                Ok(d) => d,
                Err(_) => {
                    out.push(Diagnostic::new(
                        codes::CARD_UNKNOWN,
                        DiagPath::card(h, &card.id),
                        format!("no card `{}` in the catalog", card.descriptor),
                    ));
                    continue;
                }
            };
            if !descriptor.kind.is_action() {
                out.push(Diagnostic::new(
                    codes::CARD_NOT_ACTION,
                    DiagPath::card(h, &card.id),
                    format!("`{}` is a {} card; only Action cards are played in a hand", card.descriptor, descriptor.kind),
                ));
                continue;
            }

            for slot in &descriptor.inputs {
                if slot.required && !card.inputs.contains_key(&slot.name) {
                    out.push(Diagnostic::new(
                        codes::INPUT_MISSING,
                        DiagPath::slot(h, &card.id, &slot.name),
                        format!("`{}` requires a {} input for `{}`", descriptor.name(), slot.kind, slot.name),
                    ));
                }
            }
            for (slot_name, source) in &card.inputs {
                let path = DiagPath::slot(h, &card.id, slot_name);
                let Some(slot) = descriptor.input(slot_name) else {
                    out.push(Diagnostic::new(
                        codes::INPUT_UNKNOWN_SLOT,
                        path,
                        format!("`{}` has no input slot `{slot_name}`", descriptor.name()),
                    ));
                    continue;
                };
                match source {
                    InputSource::Literal(v) => {
                        if !v.conforms_to(&slot.kind) {
                            out.push(Diagnostic::new(
                                codes::INPUT_TYPE_MISMATCH,
                                path,
                                format!("literal {} is not a valid {}", v.to_json(), slot.kind),
                            ));
                        }
                    }
                    InputSource::Yield(r) => {
                        if let Some((base, _)) = r.selector() {
                            referenced.insert((r.hand, r.card.clone(), base.to_string()));
                        }
                        if r.hand >= h {
                            out.push(Diagnostic::new(
                                codes::YIELD_REF_FORWARD,
                                path,
                                format!("yield from hand {} is not available in hand {h}; only earlier hands can be read", r.hand),
                            ));
                            continue;
                        }
                        let producer = deck.hands[r.hand].card(&r.card);
                        let Some(producer) = producer else {
                            out.push(Diagnostic::new(
                                codes::YIELD_REF_UNKNOWN,
                                path,
                                format!("hand {} has no card `{}`", r.hand, r.card),
                            ));
                            continue;
                        };
                        let Ok(pd) = catalog.lookup(&producer.descriptor) else {
                            continue;
                        };
                        match yield_ref_kind(pd, r) {
                            Err(reason) if reason.contains("not a sequence") => {
                                out.push(Diagnostic::new(codes::INPUT_TYPE_MISMATCH, path, reason));
                            }
                            Err(reason) => out.push(Diagnostic::new(codes::YIELD_REF_UNKNOWN, path, reason)),
                            Ok(kind) => {
                                if kind != slot.kind {
                                    out.push(Diagnostic::new(
                                        codes::INPUT_TYPE_MISMATCH,
                                        path.clone(),
                                        format!("yield `{}` is a {kind}, slot `{slot_name}` needs {}", r.name, slot.kind),
                                    ));
                                }
                                if reachable[h] && !dom[h].contains(&r.hand) {
                                    out.push(Diagnostic::new(
                                        codes::YIELD_REF_MAYBE_UNSET,
                                        path,
                                        format!("hand {h} can run without hand {} having run first", r.hand),
                                    ));
                                }
                            }
                        }
                    }
                }
            }

            for spec in &descriptor.tokens {
                let path = DiagPath::slot(h, &card.id, &spec.slot);
                let Some(id) = card.tokens.get(&spec.slot) else {
                    out.push(Diagnostic::new(
                        codes::TOKEN_UNBOUND,
                        path,
                        format!("`{}` needs a {} token for slot `{}`", descriptor.name(), spec.token_type, spec.slot),
                    ));
                    continue;
                };
                match declared.get(id.as_str()) {
                    None => out.push(Diagnostic::new(
                        codes::TOKEN_UNDECLARED,
                        path,
                        format!("token `{id}` is not declared by the deck"),
                    )),
                    Some(ty) if *ty != spec.token_type => out.push(Diagnostic::new(
                        codes::TOKEN_UNDECLARED,
                        path,
                        format!("token `{id}` is a {ty} token, slot `{}` needs {}", spec.slot, spec.token_type),
                    )),
                    Some(_) => {
                        if spec.consumed {
                            consumers.entry(id.as_str()).or_default().push(card.id.as_str());
                        }
                    }
                }
            }
            for slot in card.tokens.keys() {
                if descriptor.token_slot(slot).is_none() {
                    out.push(Diagnostic::new(
                        codes::TOKEN_UNKNOWN_SLOT,
                        DiagPath::slot(h, &card.id, slot),
                        format!("`{}` has no token slot `{slot}`", descriptor.name()),
                    ));
                }
            }
        }
        for (token, cards) in consumers {
            if cards.len() > 1 {
                out.push(Diagnostic::new(
                    codes::TOKEN_CONFLICT,
                    DiagPath {
                        hand: Some(h),
                        card: Some(cards[0].to_string()),
                        slot: None,
                    },
                    format!("token `{token}` is consumed by {} cards in hand {h}: {}", cards.len(), cards.join(", ")),
                ));
            }
        }

        let ends = ends_of(hand, catalog);
        if ends.is_empty() && h != last && !hand.cards.is_empty() {
            out.push(Diagnostic::new(
                codes::NO_END_CONDITION,
                DiagPath::hand(h),
                format!("hand {h} has no card with an end condition and is not the final hand"),
            ));
        }

        for (b, branch) in hand.branches.iter().enumerate() {
            let path = DiagPath {
                hand: Some(h),
                card: None,
                slot: Some(format!("branches[{b}]")),
            };
            if branch.goto > deck.hands.len() {
                out.push(Diagnostic::new(
                    codes::BRANCH_TARGET_UNKNOWN,
                    path.clone(),
                    format!("branch target {} does not exist (deck has {} hands)", branch.goto, deck.hands.len()),
                ));
            } else if branch.goto <= h {
                out.push(Diagnostic::new(
                    codes::BRANCH_BACKWARD,
                    path.clone(),
                    format!("branch target {} is not after hand {h}", branch.goto),
                ));
            }
            if branch.when.has_empty_group() {
                out.push(Diagnostic::new(codes::CONDITION_EMPTY, path.clone(), "and/or group without operands"));
            }
            let mut leaves = Vec::new();
            branch.when.for_each_leaf(&mut |id, negated| leaves.push((id.to_string(), negated)));
            for (id, negated) in leaves {
                match hand.card(&id) {
                    None => out.push(Diagnostic::new(
                        codes::CONDITION_UNKNOWN_CARD,
                        path.clone(),
                        format!("condition names `{id}`, which is not a card in hand {h}"),
                    )),
                    Some(_) if !negated && !ends.contains(&id.as_str()) => out.push(Diagnostic::new(
                        codes::CONDITION_NO_END,
                        path.clone(),
                        format!("card `{id}` has no end condition, so this condition can never hold"),
                    )),
                    Some(_) => {}
                }
            }
        }

        if !reachable[h] {
            out.push(Diagnostic::new(
                codes::UNREACHABLE_HAND,
                DiagPath::hand(h),
                format!("hand {h} cannot be reached from hand 0"),
            ));
        }
    }

    for (h, hand) in deck.hands.iter().enumerate() {
        for card in &hand.cards {
            let Ok(descriptor) = catalog.lookup(&card.descriptor) else {
                continue;
            };
            for y in &descriptor.yields {
                if !referenced.contains(&(h, card.id.clone(), y.name.clone())) {
                    out.push(Diagnostic::new(
                        codes::DEAD_YIELD,
                        DiagPath::slot(h, &card.id, &y.name),
                        format!("yield `{}` of `{}` is never read", y.name, card.id),
                    ));
                }
            }
        }
    }

    out.sort_by(|a, b| {
        (a.path.hand.is_some(), a.path.hand, &a.path.card, &a.code, &a.path.slot, &a.message).cmp(&(
            b.path.hand.is_some(),
            b.path.hand,
            &b.path.card,
            &b.code,
            &b.path.slot,
            &b.message,
        ))
    });
    out
}

/// Outcome of evaluating a hand condition at one satisfaction state; shared
/// with tests that check the runtime against brute force.
pub fn first_branch(hand: &Hand, satisfied: &dyn Fn(&str) -> bool) -> Option<usize> {
    hand.branches.iter().position(|b| b.when.evaluate(satisfied))
}

pub fn condition_leaves(c: &Condition) -> Vec<String> {
    let mut out = Vec::new();
    c.for_each_leaf(&mut |id, _| out.push(id.to_string()));
    out
}
