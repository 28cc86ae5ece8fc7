#![allow(dead_code)]

use std::collections::BTreeSet;

use cardkit_core::catalog::{CardDescriptor, Catalog};
use cardkit_core::model::{
    BoundingBox, Branch, CardInstance, Condition, DataKind, Deck, Hand, InputSource, Location,
    RelativePosition, Rule, TokenDecl, Value, YieldRef,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn actions(catalog: &Catalog) -> Vec<&CardDescriptor> {
    catalog.contents().filter(|d| d.kind.is_action()).collect()
}

fn number(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    match rng.random_range(0..3) {
        0 => rng.random_range(lo as i64..=hi as i64) as f64,
        1 => (rng.random_range(lo..hi) * 100.0).round() / 100.0,
        _ => rng.random_range(lo..hi),
    }
}

fn text(rng: &mut impl Rng) -> String {
    const CHARS: &[char] = &['a', 'b', 'z', 'Q', ' ', '[', ']', '\\', '-', '.', '/', 'é', '7', ';', '(', '←'];
    let n = rng.random_range(0..10);
    (0..n).map(|_| *CHARS.choose(rng).unwrap()).collect()
}

pub fn value_of(rng: &mut impl Rng, kind: &DataKind) -> Value {
    match kind {
        DataKind::Distance | DataKind::Duration => Value::Number(number(rng, 0.0, 500.0)),
        DataKind::Altitude | DataKind::Threshold | DataKind::Number => Value::Number(number(rng, -50.0, 500.0)),
        DataKind::Boolean => Value::Bool(rng.random()),
        DataKind::Image | DataKind::Audio | DataKind::Text => Value::Text(text(rng)),
        DataKind::Location => Value::Location(Location::new(
            number(rng, -0.01, 0.01),
            number(rng, -0.01, 0.01),
            number(rng, 0.0, 100.0),
        )),
        DataKind::BoundingBox => {
            let (s, w) = (number(rng, -0.01, 0.0), number(rng, -0.01, 0.0));
            Value::BoundingBox(BoundingBox {
                south: s,
                west: w,
                north: s + number(rng, 0.0, 0.01),
                east: w + number(rng, 0.0, 0.01),
            })
        }
        DataKind::RelativePosition => Value::Relative(RelativePosition {
            east: number(rng, -20.0, 20.0),
            north: number(rng, -20.0, 20.0),
            up: number(rng, -20.0, 20.0),
        }),
        DataKind::SequenceOf(inner) => Value::List((0..rng.random_range(0..3)).map(|_| value_of(rng, inner)).collect()),
    }
}

fn condition(rng: &mut impl Rng, ids: &[String], depth: u32) -> Condition {
    let leaf = depth == 0 || rng.random_bool(0.4);
    if leaf {
        return Condition::Card(ids.choose(rng).unwrap().clone());
    }
    let n = rng.random_range(1..=3);
    let children = (0..n).map(|_| condition(rng, ids, depth - 1)).collect();
    match rng.random_range(0..3) {
        0 => Condition::And(children),
        1 => Condition::Or(children),
        _ => Condition::Not(Box::new(condition(rng, ids, depth - 1))),
    }
}

/// A structurally well-formed deck over `catalog`: unique ids, declared
/// tokens of the right type, yields from earlier hands, forward branches.
pub fn deck(rng: &mut impl Rng, catalog: &Catalog) -> Deck {
    let actions = actions(catalog);
    let hand_count = rng.random_range(1..=6);
    let mut hands: Vec<Hand> = Vec::new();
    let mut custom = 0;
    for h in 0..hand_count {
        let mut hand = Hand::default();
        if rng.random_bool(0.3) {
            hand.rule = Rule::Any;
        }
        if rng.random_bool(0.2) {
            hand.repeat = rng.random_range(1..4);
        }
        let card_count = rng.random_range(0..=4);
        for k in 0..card_count {
            let desc = *actions.choose(rng).unwrap();
            let id = if rng.random_bool(0.2) {
                custom += 1;
                format!("x{custom}")
            } else {
                format!("h{}c{}", h + 1, k + 1)
            };
            let mut card = CardInstance::new(id, desc.path.clone());
            for slot in &desc.inputs {
                if !slot.required && rng.random_bool(0.5) {
                    continue;
                }
                let producers: Vec<YieldRef> = hands
                    .iter()
                    .enumerate()
                    .flat_map(|(ph, hand)| hand.cards.iter().map(move |c| (ph, c)))
                    .flat_map(|(ph, c)| {
                        let d = catalog.lookup(&c.descriptor).unwrap();
                        d.yields
                            .iter()
                            .filter_map(|y| {
                                if y.kind == slot.kind {
                                    Some(YieldRef::new(ph, c.id.clone(), y.name.clone()))
                                } else if y.kind.element() == Some(&slot.kind) {
                                    Some(YieldRef::new(ph, c.id.clone(), format!("{}[{}]", y.name, ph % 3)))
                                } else {
                                    None
                                }
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let source = match producers.choose(rng) {
                    Some(r) if rng.random_bool(0.5) => InputSource::Yield(r.clone()),
                    _ => InputSource::Literal(value_of(rng, &slot.kind)),
                };
                card.inputs.insert(slot.name.clone(), source);
            }
            hand.cards.push(card);
        }
        hands.push(hand);
    }

    let n = hands.len();
    for (h, hand) in hands.iter_mut().enumerate() {
        if hand.cards.is_empty() || h + 1 > n {
            continue;
        }
        let ids: Vec<String> = hand.cards.iter().map(|c| c.id.clone()).collect();
        for _ in 0..rng.random_range(0..3) {
            let goto = rng.random_range(h + 1..=n);
            hand.branches.push(Branch {
                when: condition(rng, &ids, 3),
                goto,
            });
        }
    }

    let used: BTreeSet<String> = hands
        .iter()
        .flat_map(|h| &h.cards)
        .flat_map(|c| catalog.lookup(&c.descriptor).unwrap().tokens.iter().map(|t| t.token_type.clone()))
        .collect();
    let mut tokens: Vec<TokenDecl> = Vec::new();
    if rng.random_bool(0.6) {
        tokens = used.iter().map(|t| TokenDecl::new(t.clone(), t.clone())).collect();
    } else {
        for (i, t) in used.iter().enumerate() {
            for j in 0..rng.random_range(1..=2) {
                tokens.push(TokenDecl::new(format!("{t}-{i}{j}"), t.clone()));
            }
        }
        if rng.random_bool(0.3) {
            tokens.push(TokenDecl::new("spare", "button"));
        }
    }
    for hand in &mut hands {
        for card in &mut hand.cards {
            let desc = catalog.lookup(&card.descriptor).unwrap();
            for spec in &desc.tokens {
                let choices: Vec<&TokenDecl> = tokens.iter().filter(|t| t.token_type == spec.token_type).collect();
                let pick = choices.choose(rng).unwrap();
                card.tokens.insert(spec.slot.clone(), pick.id.clone());
            }
        }
    }

    let deck_id = if rng.random_bool(0.5) { "deck".to_string() } else { format!("mission-{}", rng.random_range(0..100)) };
    Deck {
        deck_id,
        tokens,
        repeat_deck: rng.random_bool(0.2),
        implicit_land: rng.random_bool(0.8),
        hands,
    }
}
