mod common;

use std::collections::BTreeMap;

use cardkit_core::catalog::Catalog;
use cardkit_core::model::{
    CardInstance, Condition, Deck, Hand, InputSource, Location, Rule, Value, YieldRef,
};
use cardkit_core::notation::{parse_notation, print_notation, NotationError};
use proptest::prelude::*;

fn parse(text: &str) -> Result<Deck, NotationError> {
    parse_notation(text, &Catalog::drone(), &BTreeMap::new())
}

fn lit(v: Value) -> InputSource {
    InputSource::Literal(v)
}

#[test]
fn arrow_stacks_an_input() {
    let mut b = BTreeMap::new();
    b.insert("pickup".to_string(), Value::Location(Location::new(1.0, 2.0, 3.0)));
    let deck = parse_notation(
        "Hand 1: FlyTo ← Location [pickup]\nHand 2: Land ; WaitForButtonPush",
        &Catalog::drone(),
        &b,
    )
    .unwrap();
    assert_eq!(deck.hands.len(), 2);
    let fly = &deck.hands[0].cards[0];
    assert_eq!(fly.descriptor, "Action/Movement/FlyTo");
    assert_eq!(fly.inputs["destination"], lit(Value::Location(Location::new(1.0, 2.0, 3.0))));
    assert_eq!(deck.hands[1].cards.len(), 2);
    assert_eq!(deck.hands[1].cards[1].descriptor, "Action/Trigger/WaitForButtonPush");
}

#[test]
fn ascii_arrow_is_accepted() {
    assert_eq!(
        parse("Hand 1: FlyTo <- Location [1, 2]").unwrap(),
        parse("Hand 1: FlyTo ← Location [1, 2]").unwrap()
    );
}

#[test]
fn plus_and_parentheses_give_several_inputs() {
    let deck = parse("Hand 1: Circle ← (Location [1, 2, 30] + Distance [20 ft])").unwrap();
    let c = &deck.hands[0].cards[0];
    assert_eq!(c.inputs["center"], lit(Value::Location(Location::new(1.0, 2.0, 30.0))));
    assert_eq!(c.inputs["radius"], lit(Value::Number(20.0 * 0.3048)));
}

#[test]
fn semicolon_separates_concurrent_cards() {
    let deck = parse("Hand 1: Hover ; TakePhotos ← Duration [2 min.] ; LogHumidity").unwrap();
    let names: Vec<&str> = deck.hands[0].cards.iter().map(|c| c.descriptor.rsplit('/').next().unwrap()).collect();
    assert_eq!(names, ["Hover", "TakePhotos", "LogHumidity"]);
    assert_eq!(deck.hands[0].cards[1].inputs["duration"], lit(Value::Number(120.0)));
}

#[test]
fn braces_group_a_branch_arm() {
    let deck = parse(
        "Hand 1: {FlyTo ← Location [1, 2] ; Branch(1)} ; {DetectOnGround ← Image [dog] ; Branch(2)}\n\
         Hand 2 Branch 1: Land\n\
         Hand 2 Branch 2: ReturnHome",
    )
    .unwrap();
    let h = &deck.hands[0];
    assert_eq!(h.branches.len(), 2);
    assert_eq!(h.branches[0].when, Condition::card("h1c1"));
    assert_eq!(h.branches[0].goto, 1);
    assert_eq!(h.branches[1].when, Condition::card("h1c2"));
    assert_eq!(h.branches[1].goto, 2);
    // the first arm skips the second one
    assert_eq!(deck.hands[1].branches, vec![cardkit_core::model::Branch { when: Condition::card("h2c1"), goto: 3 }]);
    assert!(deck.hands[2].branches.is_empty());
}

#[test]
fn parenthesised_number_is_repeat_count() {
    let deck = parse("Hand 1: Repeat(3)").unwrap();
    assert_eq!(deck.hands.len(), 1);
    assert_eq!(deck.hands[0].repeat, 2);
    assert!(deck.hands[0].cards.is_empty());
}

#[test]
fn parameter_on_action_card_is_rejected() {
    assert!(matches!(parse("Hand 1: TakePhotos(3)"), Err(NotationError::Parse { line: 1, column: 19, .. })));
}

#[test]
fn brackets_carry_literals_and_units() {
    let deck = parse("Hand 1: HoverToAltitude ← Distance [5 ft.]\nHand 2: SetATimer ← Duration [3 min.]").unwrap();
    assert_eq!(deck.hands[0].cards[0].inputs["altitude"], lit(Value::Number(5.0 * 0.3048)));
    assert_eq!(deck.hands[1].cards[0].inputs["duration"], lit(Value::Number(180.0)));
}

#[test]
fn unknown_placeholder_stays_symbolic() {
    let deck = parse("Hand 1: FlyTo ← Location [my house]").unwrap();
    assert_eq!(deck.hands[0].cards[0].inputs["destination"], lit(Value::Text("my house".into())));
}

#[test]
fn condition_expressions_use_positional_letters() {
    let deck = parse(
        "Hand 1: SetATimer ← Duration [1] ; SetATimer ← Duration [2] ; SetATimer ← Duration [3] ; \
         SetATimer ← Duration [4] ; (AND(A, B) ; Branch(2a)) ; (OR(C, NOT(D)) ; Branch(2b))\n\
         Hand 2 Branch a: Land\n\
         Hand 2 Branch b: ReturnHome",
    )
    .unwrap();
    let h = &deck.hands[0];
    assert_eq!(h.branches[0].when, Condition::And(vec![Condition::card("h1c1"), Condition::card("h1c2")]));
    assert_eq!(h.branches[0].goto, 1);
    assert_eq!(
        h.branches[1].when,
        Condition::Or(vec![Condition::card("h1c3"), Condition::Not(Box::new(Condition::card("h1c4")))])
    );
    assert_eq!(h.branches[1].goto, 2);
}

#[test]
fn any_and_repeat_deck_fold_into_fields() {
    let deck = parse("Hand 1: Hover ; DetectInAir ← Image [bird] ; Any\nHand 2: RepeatDeck").unwrap();
    assert_eq!(deck.hands.len(), 1);
    assert_eq!(deck.hands[0].rule, Rule::Any);
    assert!(deck.repeat_deck);
}

#[test]
fn nested_action_is_hoisted_and_shares_its_literal() {
    let deck = parse("Hand 1: Follow ← (RelativeToObject + TrackOnGround ← Image [skier]) ; Altitude [300 ft.]").unwrap();
    let cards = &deck.hands[0].cards;
    assert_eq!(cards.len(), 2);
    assert_eq!(cards[1].descriptor, "Action/Think/TrackOnGround");
    assert_eq!(cards[0].inputs["target"], lit(Value::Text("skier".into())));
    assert_eq!(cards[1].inputs["image"], lit(Value::Text("skier".into())));
    assert_eq!(cards[0].inputs["minAltitude"], lit(Value::Number(300.0 * 0.3048)));
    assert!(matches!(cards[0].inputs["offset"], InputSource::Literal(Value::Relative(_))));
}

#[test]
fn yield_reference_resolves_hand_and_kind() {
    let deck = parse(
        "Hand 1: FlyTo ← Location [0, 0.001] ; TakePhotos ← Duration [5 s]\n\
         Hand 2: FlyTo ← Yield(Hand 1, h1c2, locations[0])",
    )
    .unwrap();
    assert_eq!(
        deck.hands[1].cards[0].inputs["destination"],
        InputSource::Yield(YieldRef::new(0, "h1c2", "locations[0]"))
    );
}

#[test]
fn tokens_are_declared_and_bound_automatically() {
    let deck = parse("Hand 1: TrackOnGround ← Image [x] ; RecordVideo").unwrap();
    let types: Vec<&str> = deck.tokens.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(types, ["camera", "gimbal"]);
    assert_eq!(deck.hands[0].cards[1].tokens["camera"], "camera");
}

#[test]
fn token_header_and_explicit_binding() {
    let deck = parse("Tokens: front:camera, rear:camera\nHand 1: TakeAPhoto<camera=rear>").unwrap();
    assert_eq!(deck.tokens.len(), 2);
    assert_eq!(deck.hands[0].cards[0].tokens["camera"], "rear");
}

#[test]
fn errors_carry_positions() {
    assert_eq!(
        parse("Hand 1: Land\nHand 2: Fly"),
        Err(NotationError::UnknownCard { name: "Fly".into(), line: 2, column: 9 })
    );
    assert!(matches!(parse("Hand 1: Land ; Branch(A)"), Err(NotationError::Parse { line: 1, column: 16, .. })));
    assert!(matches!(
        parse("Hand 1: {Land ; Branch(Q)}\nHand 2 Branch A: Hover"),
        Err(NotationError::BranchLabelUnresolved { .. })
    ));
    assert!(matches!(parse("Hand 2: Land\nHand 1: Land"), Err(NotationError::Parse { line: 2, column: 1, .. })));
    assert!(matches!(parse("Hand 2 Branch A: Land\nHand 2 Branch a: Land"), Err(NotationError::Parse { line: 2, .. })));
    assert!(matches!(parse("Hand 1: FlyTo ← Location [1, 2"), Err(NotationError::Parse { line: 1, .. })));
    assert!(matches!(parse(""), Err(NotationError::Invalid(_))));
}

#[test]
fn repeat_on_a_non_final_arm_is_rejected() {
    let text = "Hand 1: {Land ; Branch(A)} ; {SetATimer ← Duration [1] ; Branch(B)} ; Any\n\
                Hand 2 Branch A: Hover ; SetATimer ← Duration [1] ; Repeat(2)\n\
                Hand 2 Branch B: Land";
    assert!(matches!(parse(text), Err(NotationError::Parse { line: 2, .. })));
}

#[test]
fn house_photo_prints_as_two_lines() {
    let deck = Deck::new(
        "deck",
        vec![
            Hand::new(vec![CardInstance::new("h1c1", "Action/Movement/FlyTo")
                .with_literal("destination", Value::Text("...".into()))
                .with_token("movement", "movement")]),
            Hand::new(vec![CardInstance::new("h2c1", "Action/Tech/TakeAPhoto").with_token("camera", "camera")]),
        ],
    )
    .with_token("camera", "camera")
    .with_token("movement", "movement");
    assert_eq!(print_notation(&deck, &Catalog::drone()), "Hand 1: FlyTo ← Location [...]\nHand 2: TakeAPhoto\n");
}

#[test]
fn one_card_deck_prints_one_line() {
    let deck = Deck::new("deck", vec![Hand::new(vec![CardInstance::new("h1c1", "Action/Trigger/SetATimer")
        .with_literal("duration", Value::Number(4.0))])]);
    assert_eq!(print_notation(&deck, &Catalog::drone()), "Hand 1: SetATimer ← Duration [4 s]\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let catalog = Catalog::drone();
        let deck = common::deck(&mut common::rng(seed), &catalog);
        let text = print_notation(&deck, &catalog);
        let back = parse_notation(&text, &catalog, &BTreeMap::new());
        prop_assert_eq!(back.as_ref(), Ok(&deck), "{}", text);
    }

    #[test]
    fn parser_never_panics(text in "(Hand [0-9] ?(Branch [AB])?: )?([A-Za-z]{1,12}|[←;:+(){}<>=,@\\[\\] ]|\\[[0-9., a-z]{0,8}\\]|\n){0,40}") {
        let _ = parse_notation(&text, &Catalog::drone(), &BTreeMap::new());
    }

    #[test]
    fn parser_never_panics_on_mutated_decks(seed in any::<u64>(), cut in 0usize..400, junk in "[←;:+(){}\\[\\]<>=,@A-Z \\\\]{0,6}") {
        let catalog = Catalog::drone();
        let text = print_notation(&common::deck(&mut common::rng(seed), &catalog), &catalog);
        let at = text.char_indices().map(|(i, _)| i).nth(cut % text.chars().count().max(1)).unwrap_or(0);
        let mutated = format!("{}{}{}", &text[..at], junk, &text[at..]);
        let _ = parse_notation(&mutated, &catalog, &BTreeMap::new());
    }
}
