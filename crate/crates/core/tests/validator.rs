mod common;

use std::collections::BTreeMap;

use cardkit_core::catalog::Catalog;
use cardkit_core::model::{Branch, CardInstance, Condition, Deck, Hand, Rule, Value, YieldRef};
use cardkit_core::notation::parse_notation;
use cardkit_core::validate::{codes, has_errors, reachability_map, validate_deck, Diagnostic, Severity};
use proptest::prelude::*;

fn parse(text: &str) -> Deck {
    parse_notation(text, &Catalog::drone(), &BTreeMap::new()).unwrap()
}

fn check(text: &str) -> Vec<Diagnostic> {
    validate_deck(&parse(text), &Catalog::drone())
}

fn codes_of(diags: &[Diagnostic]) -> Vec<&str> {
    diags.iter().filter(|d| d.is_error()).map(|d| d.code.as_str()).collect()
}

#[test]
fn fly_to_and_circle_conflict_once() {
    let diags = check("Hand 1: FlyTo ← Location [1, 2, 3] ; Circle ← (Location [1, 2, 3] + Distance [5])");
    let conflicts: Vec<&Diagnostic> = diags.iter().filter(|d| d.code == codes::TOKEN_CONFLICT).collect();
    assert_eq!(conflicts.len(), 1);
    assert!(conflicts[0].message.contains("h1c1") && conflicts[0].message.contains("h1c2"));
    assert_eq!(conflicts[0].path.hand, Some(0));
}

#[test]
fn shared_tokens_do_not_conflict() {
    let diags = check("Hand 1: LogHumidity ; WaitForHumidity ← Threshold [0.4] ; Hover ; WaitUntilLocation ← Location [0, 0]");
    assert_eq!(codes_of(&diags), Vec::<&str>::new());
}

#[test]
fn distinct_tokens_of_one_type_do_not_conflict() {
    let diags = check("Tokens: a:camera, b:camera\nHand 1: TakeAPhoto<camera=a> ; TakeAPhoto<camera=b>");
    assert!(!has_errors(&diags), "{diags:?}");
}

#[test]
fn missing_and_mistyped_inputs() {
    let diags = check("Hand 1: FlyTo\nHand 2: SetATimer ← Duration [soon]");
    assert_eq!(codes_of(&diags), [codes::INPUT_MISSING, codes::INPUT_TYPE_MISMATCH]);
    assert_eq!(diags[0].path.slot.as_deref(), Some("destination"));
}

#[test]
fn negative_duration_is_a_type_mismatch() {
    let diags = check("Hand 1: SetATimer ← Duration [-2 s]");
    assert_eq!(codes_of(&diags), [codes::INPUT_TYPE_MISMATCH]);
}

#[test]
fn undeclared_and_mistyped_tokens() {
    let diags = check("Tokens: cam:camera\nHand 1: TakeAPhoto<camera=nope> ; Land<movement=cam>");
    assert_eq!(codes_of(&diags), [codes::TOKEN_UNDECLARED, codes::TOKEN_UNDECLARED]);
}

#[test]
fn unbound_token_slot() {
    let diags = check("Tokens:\nHand 1: Land");
    assert_eq!(codes_of(&diags), [codes::TOKEN_UNBOUND]);
}

#[test]
fn yield_references() {
    let text = "Hand 1: FlyTo ← destination: Yield(Hand 2, h2c1, detectedLocation)\n\
                Hand 2: DetectOnGround ← Image [x]\n\
                Hand 3: FlyTo ← destination: Yield(Hand 2, h2c1, nothing)\n\
                Hand 4: FlyTo ← Yield(Hand 2, h2c1, detectedLocation)";
    let diags = check(text);
    assert_eq!(codes_of(&diags), [codes::YIELD_REF_FORWARD, codes::YIELD_REF_UNKNOWN]);
    assert!(!diags.iter().any(|d| d.code == codes::DEAD_YIELD));
}

#[test]
fn yield_kind_must_match_slot() {
    let mut deck = parse("Hand 1: TakePhotos ← Duration [3] ; Land\nHand 2: FlyTo ← Location [0, 0]");
    let card = &mut deck.hands[1].cards[0];
    card.inputs.insert(
        "destination".into(),
        cardkit_core::model::InputSource::Yield(YieldRef::new(0, "h1c1", "photos[0]")),
    );
    let diags = validate_deck(&deck, &Catalog::drone());
    assert_eq!(codes_of(&diags), [codes::INPUT_TYPE_MISMATCH]);
    card_selector_on_scalar();
}

fn card_selector_on_scalar() {
    let diags = check("Hand 1: DetectOnGround ← Image [x]\nHand 2: FlyTo ← destination: Yield(Hand 1, h1c1, detectedLocation[0])");
    assert_eq!(codes_of(&diags), [codes::INPUT_TYPE_MISMATCH]);
}

#[test]
fn yield_from_a_hand_that_may_be_skipped() {
    let text = "Hand 1: {Land ; Branch(Hand 3)} ; {SetATimer ← Duration [1] ; Branch(Hand 2)} ; Any\n\
                Hand 2: DetectOnGround ← Image [x]\n\
                Hand 3: FlyTo ← Yield(Hand 2, h2c1, detectedLocation)";
    assert_eq!(codes_of(&check(text)), [codes::YIELD_REF_MAYBE_UNSET]);
}

#[test]
fn hand_without_end_condition() {
    let diags = check("Hand 1: Hover\nHand 2: Land");
    assert_eq!(codes_of(&diags), [codes::NO_END_CONDITION]);
    assert!(!has_errors(&check("Hand 1: Land\nHand 2: Hover")));
}

#[test]
fn empty_hand_is_flagged() {
    assert_eq!(codes_of(&check("Hand 1: Repeat(3)")), [codes::EMPTY_HAND]);
}

#[test]
fn conditions_on_unknown_or_endless_cards() {
    let diags = check("Hand 1: Land ; LogHumidity ; (@ghost ; Branch(End)) ; (B ; Branch(End)) ; (NOT(B) ; Branch(End))");
    assert_eq!(codes_of(&diags), [codes::CONDITION_NO_END, codes::CONDITION_UNKNOWN_CARD]);
}

#[test]
fn branch_targets_out_of_range() {
    let mut deck = parse("Hand 1: Land\nHand 2: Land");
    deck.hands[0].branches.push(Branch { when: Condition::card("h1c1"), goto: 7 });
    let diags = validate_deck(&deck, &Catalog::drone());
    assert_eq!(codes_of(&diags), [codes::BRANCH_TARGET_UNKNOWN]);
    deck.hands[1].branches.push(Branch { when: Condition::card("h2c1"), goto: 0 });
    assert!(codes_of(&validate_deck(&deck, &Catalog::drone())).contains(&codes::BRANCH_BACKWARD));
}

#[test]
fn unknown_cards_and_non_action_cards() {
    let deck = Deck::new(
        "d",
        vec![Hand::new(vec![CardInstance::new("a", "Action/Tech/Teleport"), CardInstance::new("b", "Input/Location")])],
    );
    let diags = validate_deck(&deck, &Catalog::drone());
    assert_eq!(codes_of(&diags), [codes::CARD_UNKNOWN, codes::CARD_NOT_ACTION]);
}

#[test]
fn unreachable_hand_is_a_warning() {
    let diags = check("Hand 1: {Land ; Branch(Hand 3)}\nHand 2: Land\nHand 3: Land");
    let w: Vec<&Diagnostic> = diags.iter().filter(|d| d.code == codes::UNREACHABLE_HAND).collect();
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].severity, Severity::Warning);
    assert_eq!(w[0].path.hand, Some(1));
}

#[test]
fn branch_and_all_rule_with_no_ends_leaves_fallthrough_dead() {
    let deck = parse("Hand 1: Hover ; Repeat(2)\nHand 2: Land");
    assert_eq!(reachability_map(&deck, &Catalog::drone()), [true, false]);
}

#[test]
fn diagnostics_serialize_as_json_lines() {
    let diags = check("Hand 1: FlyTo");
    let line = diags[0].to_json();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["code"], "E_INPUT_MISSING");
    assert_eq!(v["severity"], "error");
    assert_eq!(v["path"]["hand"], 0);
    assert_eq!(v["path"]["card"], "h1c1");
}

#[test]
fn literal_values_are_accepted_for_their_kinds() {
    let deck = parse("Hand 1: CoverArea ← (BoundingBox [0, 0, 1, 1] + Avoid ← BoundingBox [0.2, 0.2, 0.3, 0.3])");
    assert!(!has_errors(&validate_deck(&deck, &Catalog::drone())));
    let mut bad = deck.clone();
    bad.hands[0].cards[0]
        .inputs
        .insert("area".into(), cardkit_core::model::InputSource::Literal(Value::Number(3.0)));
    assert_eq!(codes_of(&validate_deck(&bad, &Catalog::drone())), [codes::INPUT_TYPE_MISMATCH]);
}

/// Brute force: two cards conflict exactly when some token type is consumed
/// by both of them.
#[test]
fn conflicts_match_pairwise_oracle() {
    let catalog = Catalog::drone();
    let actions = common::actions(&catalog);
    for a in &actions {
        for b in &actions {
            let consumed = |d: &cardkit_core::catalog::CardDescriptor| {
                d.tokens.iter().filter(|t| t.consumed).map(|t| t.token_type.clone()).collect::<Vec<_>>()
            };
            let (ca, cb) = (consumed(a), consumed(b));
            let expected = ca.iter().filter(|t| cb.contains(t)).count();
            let mut deck = Deck::new("pair", vec![Hand::new(vec![CardInstance::new("a", a.path.clone()), CardInstance::new("b", b.path.clone())])]);
            for t in catalog.token_types() {
                deck = deck.with_token(t, t);
            }
            for card in &mut deck.hands[0].cards {
                let d = catalog.lookup(&card.descriptor).unwrap();
                for spec in &d.tokens {
                    card.tokens.insert(spec.slot.clone(), spec.token_type.clone());
                }
            }
            let found = validate_deck(&deck, &catalog).iter().filter(|d| d.code == codes::TOKEN_CONFLICT).count();
            assert_eq!(found, expected, "{} + {}", a.name(), b.name());
        }
    }
}

/// Successors found by running every completion schedule: cards become
/// satisfied in groups, the hand is evaluated after each group, and the
/// very first evaluation may happen before or after some cards complete.
fn edges_by_schedules(deck: &Deck, h: usize, catalog: &Catalog) -> Vec<usize> {
    let hand = &deck.hands[h];
    let ends: Vec<&str> = hand
        .cards
        .iter()
        .filter(|c| catalog.lookup(&c.descriptor).unwrap().ends)
        .map(|c| c.id.as_str())
        .collect();
    let outcome = |sat: &[bool]| -> Option<usize> {
        let is = |id: &str| ends.iter().position(|e| *e == id).is_some_and(|i| sat[i]);
        if let Some(b) = hand.branches.iter().find(|b| b.when.evaluate(&is)) {
            return Some(b.goto);
        }
        let met = match hand.rule {
            Rule::All => !sat.is_empty() && sat.iter().all(|&s| s),
            Rule::Any => sat.iter().any(|&s| s),
        };
        met.then_some(h + 1)
    };
    fn walk(sat: &mut Vec<bool>, evaluate: bool, outcome: &dyn Fn(&[bool]) -> Option<usize>, out: &mut Vec<usize>) {
        if evaluate {
            if let Some(g) = outcome(sat) {
                out.push(g);
                return;
            }
        }
        let free: Vec<usize> = (0..sat.len()).filter(|&i| !sat[i]).collect();
        for group in 1u32..(1 << free.len()) {
            let picked: Vec<usize> = (0..free.len()).filter(|b| group & (1 << b) != 0).map(|b| free[b]).collect();
            picked.iter().for_each(|&i| sat[i] = true);
            walk(sat, true, outcome, out);
            picked.iter().for_each(|&i| sat[i] = false);
        }
    }
    let mut out = Vec::new();
    let mut sat = vec![false; ends.len()];
    walk(&mut sat, true, &outcome, &mut out);
    walk(&mut sat, false, &outcome, &mut out);
    out.retain(|&g| g < deck.hands.len());
    out.sort_unstable();
    out.dedup();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn validation_is_deterministic_and_sorted(seed in any::<u64>()) {
        let catalog = Catalog::drone();
        let deck = common::deck(&mut common::rng(seed), &catalog);
        let a = validate_deck(&deck, &catalog);
        let b = validate_deck(&deck, &catalog);
        prop_assert_eq!(&a, &b);
        let deck_level = a.iter().take_while(|d| d.path.hand.is_none()).count();
        prop_assert!(a[deck_level..].iter().all(|d| d.path.hand.is_some()));
        prop_assert!(a[deck_level..].windows(2).all(|w| w[0].path.hand <= w[1].path.hand));
    }

    /// Every hand some schedule can reach is marked reachable, and every
    /// reachable hand is reached by some schedule.
    #[test]
    fn reachability_agrees_with_schedules(seed in any::<u64>()) {
        let catalog = Catalog::drone();
        let deck = common::deck(&mut common::rng(seed), &catalog);
        let mut reach = vec![false; deck.hands.len()];
        reach[0] = true;
        for h in 0..deck.hands.len() {
            if reach[h] {
                for g in edges_by_schedules(&deck, h, &catalog) {
                    reach[g] = true;
                }
            }
        }
        prop_assert_eq!(reachability_map(&deck, &catalog), reach);
    }
}
