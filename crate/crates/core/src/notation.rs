//! Textual deck notation.
//!
//! ```text
//! Hand 1: FlyTo ← Location [pickup]
//! Hand 2: Land ; WaitForButtonPush
//! ```
//!
//! Each `Hand N:` line is one hand (or one branch arm with
//! `Hand N Branch X:`). Cards are separated by `;`, `←` stacks inputs onto a
//! card, `(A + B)` stacks several, `[...]` is a literal and `{... ; Branch(X)}`
//! marks a branch arm. See `docs/notation.md` for the grammar.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::catalog::{CardDescriptor, CardKind, Catalog};
use crate::model::{
    BoundingBox, Branch, CardInstance, Condition, DataKind, Deck, Hand, InputSource, Location,
    RelativePosition, Rule, SchemaError, TokenDecl, Value, YieldRef,
};
use crate::validate::yield_ref_kind;

const FEET: f64 = 0.3048;
const MINUTE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NotationError {
    #[error("line {line}, column {column}: expected {expected}")]
    Parse {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("line {line}, column {column}: unknown card `{name}`")]
    UnknownCard { name: String, line: usize, column: usize },
    #[error("line {line}: branch label `{label}` matches no hand")]
    BranchLabelUnresolved { label: String, line: usize },
    #[error(transparent)]
    Invalid(#[from] SchemaError),
}

type Result<T> = std::result::Result<T, NotationError>;

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

impl Pos {
    fn err(self, expected: impl Into<String>) -> NotationError {
        NotationError::Parse {
            line: self.line,
            column: self.col,
            expected: expected.into(),
        }
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    At(String),
    Lit(String),
    Arrow,
    Plus,
    Semi,
    Comma,
    Colon,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LAngle,
    RAngle,
    Eq,
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    col: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | '-' | '/')
}

fn lex(line: &str, lineno: usize) -> Result<Vec<Lexeme>> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let at = |i: usize| chars.get(i).copied();
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let pos = Pos { line: lineno, col };
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && at(i + 1) == Some('/') {
            break;
        }
        let single = match c {
            '←' => Some(Tok::Arrow),
            '+' => Some(Tok::Plus),
            ';' => Some(Tok::Semi),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '>' => Some(Tok::RAngle),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Lexeme { tok, col });
            i += 1;
            continue;
        }
        match c {
            '<' if at(i + 1) == Some('-') => {
                out.push(Lexeme { tok: Tok::Arrow, col });
                i += 2;
            }
            '<' => {
                out.push(Lexeme { tok: Tok::LAngle, col });
                i += 1;
            }
            '[' => {
                let mut depth = 1;
                let mut text = String::new();
                i += 1;
                loop {
                    match at(i) {
                        None => return Err(Pos { line: lineno, col: chars.len() + 1 }.err("`]` closing the literal")),
                        Some('\\') => {
                            let Some(next) = at(i + 1) else {
                                return Err(Pos { line: lineno, col: i + 2 }.err("a character after `\\`"));
                            };
                            text.push(next);
                            i += 2;
                        }
                        Some('[') => {
                            depth += 1;
                            text.push('[');
                            i += 1;
                        }
                        Some(']') => {
                            depth -= 1;
                            i += 1;
                            if depth == 0 {
                                break;
                            }
                            text.push(']');
                        }
                        Some(other) => {
                            text.push(other);
                            i += 1;
                        }
                    }
                }
                out.push(Lexeme { tok: Tok::Lit(text), col });
            }
            '@' => {
                let start = i + 1;
                let mut end = start;
                while end < chars.len() && is_word_char(chars[end]) {
                    end += 1;
                }
                if end == start {
                    return Err(Pos { line: lineno, col: start + 1 }.err("a card id after `@`"));
                }
                out.push(Lexeme {
                    tok: Tok::At(chars[start..end].iter().collect()),
                    col,
                });
                i = end;
            }
            c if is_word_char(c) => {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) && !(chars[i] == '/' && at(i + 1) == Some('/')) {
                    i += 1;
                }
                out.push(Lexeme {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    col,
                });
            }
            _ => return Err(pos.err("a card, `;`, `←`, `[`, `(` or `{`")),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- syntax tree

#[derive(Debug, Clone, PartialEq)]
enum LabelRef {
    End,
    Absolute { step: u32, arm: Option<String> },
    Arm { step: Option<u32>, arm: String, word: String },
}

#[derive(Debug, Clone)]
struct Label {
    text: String,
    target: LabelRef,
    pos: Pos,
}

#[derive(Debug)]
enum Atom<'c> {
    Literal {
        slot: String,
        text: String,
        pos: Pos,
    },
    Yield {
        slot: Option<String>,
        hand: Label,
        card: String,
        name: String,
        pos: Pos,
    },
    Input {
        slot: Option<String>,
        card: &'c CardDescriptor,
        literal: Option<String>,
        nested: Option<Box<Atom<'c>>>,
        pos: Pos,
    },
    Action(CardExpr<'c>),
}

#[derive(Debug)]
struct CardExpr<'c> {
    desc: &'c CardDescriptor,
    id: Option<String>,
    bindings: Vec<(String, String)>,
    inputs: Vec<Atom<'c>>,
}

#[derive(Debug)]
enum Cond {
    Ref(String, Pos),
    Id(String),
    And(Vec<Cond>),
    Or(Vec<Cond>),
    Not(Box<Cond>),
}

#[derive(Debug)]
enum Item<'c> {
    Card(CardExpr<'c>),
    Input(Atom<'c>),
    Token(String),
    Any,
    Repeat(u32),
    RepeatDeck,
    Group {
        cards: Vec<Item<'c>>,
        cond: Option<Cond>,
        label: Label,
    },
}

#[derive(Debug)]
struct Line<'c> {
    step: u32,
    arm: Option<String>,
    items: Vec<Item<'c>>,
    lineno: usize,
}

// ---------------------------------------------------------------- parser

struct Parser<'a, 'c> {
    toks: &'a [Lexeme],
    i: usize,
    line: usize,
    end_col: usize,
    catalog: &'c Catalog,
}

fn is_keyword(w: &str, kw: &str) -> bool {
    w.eq_ignore_ascii_case(kw)
}

fn is_operator(w: &str) -> bool {
    ["and", "or", "not"].iter().any(|k| is_keyword(w, k))
}

fn resolve_card<'c>(catalog: &'c Catalog, name: &str) -> Option<&'c CardDescriptor> {
    if name.contains('/') {
        catalog.lookup(name).ok()
    } else {
        catalog.by_name(name)
    }
}

impl<'a, 'c> Parser<'a, 'c> {
    fn peek(&self) -> Option<&Tok> {
        self.peek_at(0)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.i + n).map(|l| &l.tok)
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.toks.get(self.i).map_or(self.end_col, |l| l.col),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|l| l.tok.clone());
        self.i += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.i >= self.toks.len()
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.pos().err(what))
        }
    }

    fn word(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.i += 1;
                Ok(w)
            }
            _ => Err(self.pos().err(what)),
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let pos = self.pos();
        self.word(what)?.parse().map_err(|_| pos.err(what))
    }

    fn items(&mut self) -> Result<Vec<Item<'c>>> {
        let mut items = Vec::new();
        if self.at_end() {
            return Ok(items);
        }
        loop {
            items.push(self.item(false)?);
            if self.eat(&Tok::Semi) {
                continue;
            }
            if self.at_end() {
                return Ok(items);
            }
            return Err(self.pos().err("`;` or end of line"));
        }
    }

    fn item(&mut self, in_group: bool) -> Result<Item<'c>> {
        let pos = self.pos();
        let word = match self.peek() {
            Some(Tok::LBrace) if !in_group => return self.group(Tok::RBrace),
            Some(Tok::LParen) if !in_group => return self.group(Tok::RParen),
            Some(Tok::Word(w)) => w.clone(),
            _ => return Err(pos.err("a card")),
        };
        let hand_level = |item: Item<'c>| {
            if in_group {
                Err(pos.err("an Action or Input card inside a branch group"))
            } else {
                Ok(item)
            }
        };
        match word.as_str() {
            "Any" => {
                self.i += 1;
                return hand_level(Item::Any);
            }
            "RepeatDeck" => {
                self.i += 1;
                return hand_level(Item::RepeatDeck);
            }
            "Repeat" => {
                self.i += 1;
                self.expect(&Tok::LParen, "`(` after Repeat")?;
                let npos = self.pos();
                let n = self.number("a repeat count")?;
                if n == 0 {
                    return Err(npos.err("a repeat count of at least 1"));
                }
                self.expect(&Tok::RParen, "`)`")?;
                return hand_level(Item::Repeat(n));
            }
            "Branch" => return Err(pos.err("a branch group such as `{Card ; Branch(label)}`")),
            w if is_operator(w) => return Err(pos.err("a card (conditions belong inside a branch group)")),
            _ => {}
        }
        self.i += 1;
        let Some(desc) = resolve_card(self.catalog, &word) else {
            return Err(NotationError::UnknownCard {
                name: word,
                line: pos.line,
                column: pos.col,
            });
        };
        match desc.kind {
            CardKind::Action(_) => Ok(Item::Card(self.card_expr(desc)?)),
            CardKind::Input => Ok(Item::Input(self.input_atom(None, desc, pos)?)),
            CardKind::Token => hand_level(Item::Token(desc.grants.clone().unwrap_or_default())),
            CardKind::Deck => hand_level(Item::RepeatDeck),
            CardKind::Hand => match desc.name() {
                "Any" => hand_level(Item::Any),
                _ => Err(pos.err("`Any`, `Repeat(n)` or a branch group")),
            },
        }
    }

    fn is_condition_start(&self) -> bool {
        match self.peek() {
            Some(Tok::At(_)) => true,
            Some(Tok::Word(w)) if is_operator(w) => self.peek_at(1) == Some(&Tok::LParen),
            Some(Tok::Word(w)) => is_positional(w) && resolve_card(self.catalog, w).is_none(),
            _ => false,
        }
    }

    fn group(&mut self, close: Tok) -> Result<Item<'c>> {
        let pos = self.pos();
        self.i += 1;
        let mut cards = Vec::new();
        let mut cond = None;
        let mut label: Option<Label> = None;
        loop {
            let ipos = self.pos();
            if matches!(self.peek(), Some(Tok::Word(w)) if w == "Branch") && self.peek_at(1) == Some(&Tok::LParen) {
                if label.is_some() {
                    return Err(ipos.err("one `Branch(...)` per group"));
                }
                self.i += 1;
                label = Some(self.branch_label()?);
            } else if self.is_condition_start() {
                if cond.is_some() {
                    return Err(ipos.err("one condition per group"));
                }
                cond = Some(self.condition()?);
            } else {
                cards.push(self.item(true)?);
            }
            if self.eat(&Tok::Semi) {
                continue;
            }
            if self.eat(&close) {
                break;
            }
            let closer = if close == Tok::RBrace { "`;` or `}`" } else { "`;` or `)`" };
            return Err(self.pos().err(closer));
        }
        let Some(label) = label else {
            return Err(pos.err("`Branch(label)` inside the group"));
        };
        if cond.is_some() && !cards.is_empty() {
            return Err(pos.err("either cards or a condition in a branch group, not both"));
        }
        if cond.is_none() && !cards.iter().any(|c| matches!(c, Item::Card(_))) {
            return Err(pos.err("an Action card or a condition in the branch group"));
        }
        Ok(Item::Group { cards, cond, label })
    }

    fn condition(&mut self) -> Result<Cond> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::At(id)) => Ok(Cond::Id(id)),
            Some(Tok::Word(w)) if is_operator(&w) => {
                self.expect(&Tok::LParen, "`(`")?;
                let mut children = vec![self.condition()?];
                while self.eat(&Tok::Comma) {
                    children.push(self.condition()?);
                }
                self.expect(&Tok::RParen, "`,` or `)`")?;
                if is_keyword(&w, "not") {
                    if children.len() != 1 {
                        return Err(pos.err("exactly one operand for NOT"));
                    }
                    Ok(Cond::Not(Box::new(children.remove(0))))
                } else if is_keyword(&w, "and") {
                    Ok(Cond::And(children))
                } else {
                    Ok(Cond::Or(children))
                }
            }
            Some(Tok::Word(w)) if is_positional(&w) => Ok(Cond::Ref(w, pos)),
            _ => Err(pos.err("a condition (AND, OR, NOT, a card letter or @id)")),
        }
    }

    fn branch_label(&mut self) -> Result<Label> {
        let pos = self.pos();
        self.expect(&Tok::LParen, "`(` after Branch")?;
        let mut words = Vec::new();
        while let Some(Tok::Word(w)) = self.peek() {
            words.push(w.clone());
            self.i += 1;
        }
        if words.is_empty() {
            return Err(self.pos().err("a branch label"));
        }
        self.expect(&Tok::RParen, "`)` after the branch label")?;
        let text = words.join(" ");
        let target = parse_label_words(&words).ok_or_else(|| NotationError::BranchLabelUnresolved {
            label: text.clone(),
            line: self.line,
        })?;
        Ok(Label { text, target, pos })
    }

    fn card_expr(&mut self, desc: &'c CardDescriptor) -> Result<CardExpr<'c>> {
        let mut expr = CardExpr {
            desc,
            id: None,
            bindings: Vec::new(),
            inputs: Vec::new(),
        };
        if let Some(Tok::At(id)) = self.peek() {
            expr.id = Some(id.clone());
            self.i += 1;
        }
        if self.eat(&Tok::LAngle) {
            loop {
                let slot = self.word("a token slot name")?;
                self.expect(&Tok::Eq, "`=`")?;
                let token = self.word("a token id")?;
                expr.bindings.push((slot, token));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(&Tok::RAngle, "`,` or `>`")?;
        }
        if self.peek() == Some(&Tok::LParen) {
            return Err(self.pos().err("`←` with an Input card; `(#)` only identifies branches"));
        }
        if self.eat(&Tok::Arrow) {
            expr.inputs = self.rhs()?;
        }
        Ok(expr)
    }

    fn rhs(&mut self) -> Result<Vec<Atom<'c>>> {
        if self.eat(&Tok::LParen) {
            let mut atoms = vec![self.atom()?];
            while self.eat(&Tok::Plus) {
                atoms.push(self.atom()?);
            }
            self.expect(&Tok::RParen, "`+` or `)`")?;
            Ok(atoms)
        } else {
            Ok(vec![self.atom()?])
        }
    }

    fn atom(&mut self) -> Result<Atom<'c>> {
        let mut slot = None;
        if let (Some(Tok::Word(w)), Some(Tok::Colon)) = (self.peek(), self.peek_at(1)) {
            slot = Some(w.clone());
            self.i += 2;
        }
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Lit(text)) => {
                self.i += 1;
                match slot {
                    Some(slot) => Ok(Atom::Literal { slot, text, pos }),
                    None => Err(pos.err("an Input card before the literal, or `slot:`")),
                }
            }
            Some(Tok::Word(w)) if w == "Yield" && self.peek_at(1) == Some(&Tok::LParen) => {
                self.i += 2;
                self.yield_atom(slot, pos)
            }
            Some(Tok::Word(w)) => {
                self.i += 1;
                let Some(desc) = resolve_card(self.catalog, &w) else {
                    return Err(NotationError::UnknownCard {
                        name: w,
                        line: pos.line,
                        column: pos.col,
                    });
                };
                match desc.kind {
                    CardKind::Input => self.input_atom(slot, desc, pos),
                    CardKind::Action(_) if slot.is_none() => Ok(Atom::Action(self.card_expr(desc)?)),
                    CardKind::Action(_) => Err(pos.err("an Input card after `slot:`")),
                    _ => Err(pos.err("an Input card, an Action card or `Yield(...)`")),
                }
            }
            _ => Err(pos.err("an Input card, `Yield(...)` or `slot: [value]`")),
        }
    }

    fn input_atom(&mut self, slot: Option<String>, card: &'c CardDescriptor, pos: Pos) -> Result<Atom<'c>> {
        let mut literal = None;
        if let Some(Tok::Lit(text)) = self.peek() {
            literal = Some(text.clone());
            self.i += 1;
        }
        let mut nested = None;
        if self.eat(&Tok::Arrow) {
            let inner = if self.eat(&Tok::LParen) {
                let a = self.atom()?;
                self.expect(&Tok::RParen, "`)`")?;
                a
            } else {
                self.atom()?
            };
            if matches!(inner, Atom::Action(_)) {
                return Err(pos.err("an Input card or `Yield(...)` feeding an Input card"));
            }
            nested = Some(Box::new(inner));
        }
        Ok(Atom::Input {
            slot,
            card,
            literal,
            nested,
            pos,
        })
    }

    fn yield_atom(&mut self, slot: Option<String>, pos: Pos) -> Result<Atom<'c>> {
        let hpos = self.pos();
        let kw = self.word("`Hand N`")?;
        if !is_keyword(&kw, "hand") {
            return Err(hpos.err("`Hand N`"));
        }
        let step = self.number("a hand number")?;
        let mut arm = None;
        let mut text = format!("Hand {step}");
        if matches!(self.peek(), Some(Tok::Word(w)) if is_keyword(w, "branch")) {
            self.i += 1;
            let a = self.word("a branch letter")?;
            text = format!("{text} Branch {a}");
            arm = Some(a.to_uppercase());
        }
        self.expect(&Tok::Comma, "`,`")?;
        let card = match self.bump() {
            Some(Tok::Word(w)) | Some(Tok::At(w)) => w,
            _ => return Err(hpos.err("a card id")),
        };
        self.expect(&Tok::Comma, "`,`")?;
        let mut name = self.word("a yield name")?;
        if let Some(Tok::Lit(idx)) = self.peek() {
            name = format!("{name}[{idx}]");
            self.i += 1;
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(Atom::Yield {
            slot,
            hand: Label {
                text,
                target: LabelRef::Absolute { step, arm },
                pos: hpos,
            },
            card,
            name,
            pos,
        })
    }
}

fn is_positional(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_uppercase()) && !is_operator(w)
}

/// `A`, `B`, ..., `Z`, `AA`, `AB`, ...
fn letters(mut index: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn letter_index(w: &str) -> usize {
    w.bytes().fold(0, |acc, b| acc * 26 + (b - b'A') as usize + 1) - 1
}

fn parse_label_words(words: &[String]) -> Option<LabelRef> {
    match words {
        [w] if is_keyword(w, "end") => Some(LabelRef::End),
        [h, n] if is_keyword(h, "hand") => Some(LabelRef::Absolute {
            step: n.parse().ok()?,
            arm: None,
        }),
        [h, n, b, a] if is_keyword(h, "hand") && is_keyword(b, "branch") => Some(LabelRef::Absolute {
            step: n.parse().ok()?,
            arm: Some(a.to_uppercase()),
        }),
        [w] if w.chars().all(|c| c.is_alphanumeric()) => {
            let digits: String = w.chars().take_while(char::is_ascii_digit).collect();
            let rest = &w[digits.len()..];
            let step = if !digits.is_empty() && !rest.is_empty() {
                digits.parse().ok()
            } else {
                None
            };
            let arm = if step.is_some() { rest } else { w.as_str() };
            Some(LabelRef::Arm {
                step,
                arm: arm.to_uppercase(),
                word: w.to_uppercase(),
            })
        }
        _ => None,
    }
}

// ---------------------------------------------------------------- literals

fn unit_factor(unit: &str) -> Option<f64> {
    match unit.to_ascii_lowercase().as_str() {
        "" | "m" | "meter" | "meters" | "s" | "sec" | "secs" | "second" | "seconds" => Some(1.0),
        "ft" | "ft." | "feet" | "foot" => Some(FEET),
        "min" | "min." | "mins" | "minute" | "minutes" => Some(MINUTE),
        _ => None,
    }
}

fn parse_quantity(text: &str) -> Option<f64> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|&(i, c)| c.is_whitespace() || (c.is_alphabetic() && !(c == 'e' && i > 0)))
        .map_or(text.len(), |(i, _)| i);
    let (number, unit) = text.split_at(split);
    let mut v: f64 = number.parse().ok()?;
    v *= unit_factor(unit.trim())?;
    v.is_finite().then_some(v)
}

fn parse_numbers(text: &str, counts: &[usize]) -> Option<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()?;
    counts.contains(&parts.len()).then_some(parts)
}

fn parse_literal(text: &str, kind: Option<&DataKind>, bindings: &BTreeMap<String, Value>) -> Value {
    if let Some(v) = bindings.get(text.trim()) {
        return v.clone();
    }
    let parsed = match kind {
        Some(DataKind::Distance | DataKind::Duration | DataKind::Altitude | DataKind::Threshold | DataKind::Number) => {
            parse_quantity(text).map(Value::Number)
        }
        Some(DataKind::Boolean) => match text.trim() {
            "true" => Some(Value::Bool(true)),
            "false" => Some(Value::Bool(false)),
            _ => None,
        },
        Some(DataKind::Location) => parse_numbers(text, &[2, 3]).map(|n| {
            Value::Location(Location::new(n[0], n[1], n.get(2).copied().unwrap_or(0.0)))
        }),
        Some(DataKind::BoundingBox) => parse_numbers(text, &[4]).map(|n| {
            Value::BoundingBox(BoundingBox {
                south: n[0],
                west: n[1],
                north: n[2],
                east: n[3],
            })
        }),
        Some(DataKind::RelativePosition) => parse_numbers(text, &[3]).map(|n| {
            Value::Relative(RelativePosition {
                east: n[0],
                north: n[1],
                up: n[2],
            })
        }),
        Some(DataKind::SequenceOf(_)) | None => serde_json::from_str(text)
            .ok()
            .and_then(|j| Value::from_json(&j).ok()),
        Some(DataKind::Image | DataKind::Audio | DataKind::Text) => None,
    };
    parsed.unwrap_or_else(|| Value::Text(text.to_string()))
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

fn format_value(v: &Value, kind: Option<&DataKind>) -> String {
    let text = match (v, kind) {
        (Value::Number(x), Some(DataKind::Distance | DataKind::Altitude)) => format!("{x} m"),
        (Value::Number(x), Some(DataKind::Duration)) => format!("{x} s"),
        (Value::Number(x), Some(DataKind::Threshold | DataKind::Number)) => format!("{x}"),
        (Value::Bool(b), Some(DataKind::Boolean)) => b.to_string(),
        (Value::Text(s), Some(DataKind::Image | DataKind::Audio | DataKind::Text)) => s.clone(),
        (Value::Location(l), Some(DataKind::Location)) => format!("{}, {}, {}", l.lat, l.lon, l.alt),
        (Value::BoundingBox(b), Some(DataKind::BoundingBox)) => {
            format!("{}, {}, {}, {}", b.south, b.west, b.north, b.east)
        }
        (Value::Relative(r), Some(DataKind::RelativePosition)) => format!("{}, {}, {}", r.east, r.north, r.up),
        (Value::Text(s), Some(_)) => s.clone(),
        _ => v.to_json().to_string(),
    };
    format!("[{}]", escape(&text))
}

// ---------------------------------------------------------------- slot choice

/// The slot an input atom lands in: the explicit one, else the hint when it
/// is free and of the right kind, else the first free slot of that kind.
fn pick_slot(
    desc: &CardDescriptor,
    assigned: &BTreeMap<String, InputSource>,
    kind: Option<&DataKind>,
    hint: Option<&str>,
) -> Option<String> {
    let kind = kind?;
    let free = |name: &str| !assigned.contains_key(name);
    if let Some(hint) = hint {
        if desc.input(hint).is_some_and(|s| &s.kind == kind) && free(hint) {
            return Some(hint.to_string());
        }
    }
    desc.inputs
        .iter()
        .find(|s| &s.kind == kind && free(&s.name))
        .map(|s| s.name.clone())
}

fn yield_kind(hands: &[Hand], catalog: &Catalog, r: &YieldRef) -> Option<DataKind> {
    let producer = hands.get(r.hand)?.card(&r.card)?;
    let desc = catalog.lookup(&producer.descriptor).ok()?;
    yield_ref_kind(desc, r).ok()
}

fn auto_binding<'d>(tokens: &'d [TokenDecl], token_type: &str) -> Option<&'d str> {
    let mut of_type = tokens.iter().filter(|t| t.token_type == token_type);
    match (of_type.next(), of_type.next()) {
        (Some(t), None) => Some(t.id.as_str()),
        _ => None,
    }
}

fn auto_tokens<'a>(types: impl IntoIterator<Item = &'a str>) -> Vec<TokenDecl> {
    let types: BTreeSet<&str> = types.into_iter().collect();
    types.into_iter().map(|t| TokenDecl::new(t, t)).collect()
}

// ---------------------------------------------------------------- building

enum Target {
    Line(usize),
    End,
}

struct Builder<'l, 'c> {
    lines: &'l [Line<'c>],
    hand_of_line: Vec<Option<usize>>,
    hand_count: usize,
    catalog: &'c Catalog,
    bindings: &'l BTreeMap<String, Value>,
}

impl<'l, 'c> Builder<'l, 'c> {
    fn resolve(&self, current: usize, label: &Label) -> Result<Target> {
        let lines = self.lines;
        let unresolved = || NotationError::BranchLabelUnresolved {
            label: label.text.clone(),
            line: label.pos.line,
        };
        let find = |step: u32, arm: Option<&str>| {
            lines
                .iter()
                .position(|l| l.step == step && (arm.is_none() || l.arm.as_deref() == arm))
        };
        let next_step = lines.iter().map(|l| l.step).filter(|&s| s > lines[current].step).min();
        let found = match &label.target {
            LabelRef::End => return Ok(Target::End),
            LabelRef::Absolute { step, arm } => find(*step, arm.as_deref()),
            LabelRef::Arm { step: Some(step), arm, word } => find(*step, Some(arm))
                .filter(|&li| lines[li].arm.is_some())
                .or_else(|| next_step.and_then(|s| find(s, Some(word)))),
            LabelRef::Arm { step: None, arm, .. } => next_step.and_then(|s| find(s, Some(arm))),
        };
        found.map(Target::Line).ok_or_else(unresolved)
    }

    fn hand_index(&self, target: Target) -> usize {
        match target {
            Target::End => self.hand_count,
            Target::Line(li) => (li..self.lines.len())
                .find_map(|l| self.hand_of_line[l])
                .unwrap_or(self.hand_count),
        }
    }

    fn yield_ref(&self, current: usize, hand: &Label, card: &str, name: &str) -> Result<YieldRef> {
        let Target::Line(li) = self.resolve(current, hand)? else {
            return Err(hand.pos.err("a hand number"));
        };
        let h = self.hand_of_line[li].ok_or_else(|| hand.pos.err("a hand that holds cards"))?;
        Ok(YieldRef::new(h, card, name))
    }

    /// Resolves an input atom into a source for a slot of `kind`.
    fn source(&self, current: usize, atom: &Atom<'c>, kind: Option<&DataKind>) -> Result<InputSource> {
        match atom {
            Atom::Literal { text, .. } => Ok(InputSource::Literal(parse_literal(text, kind, self.bindings))),
            Atom::Yield { hand, card, name, .. } => Ok(InputSource::Yield(self.yield_ref(current, hand, card, name)?)),
            Atom::Input { card, literal, nested, .. } => {
                if let Some(text) = literal {
                    Ok(InputSource::Literal(parse_literal(text, kind, self.bindings)))
                } else if let Some(inner) = nested {
                    self.source(current, inner, kind)
                } else if let Some(default) = &card.default {
                    Ok(InputSource::Literal(default.clone()))
                } else {
                    Ok(InputSource::Literal(Value::Text(card.name().to_string())))
                }
            }
            Atom::Action(_) => unreachable!("action atoms are hoisted"),
        }
    }

    /// Kind and preferred slot of an atom, given the hands built so far.
    fn atom_kind(&self, current: usize, atom: &Atom<'c>, hands: &[Hand]) -> Result<(Option<DataKind>, Option<String>, Option<String>, Pos)> {
        Ok(match atom {
            Atom::Literal { slot, pos, .. } => (None, None, Some(slot.clone()), *pos),
            Atom::Yield { slot, hand, card, name, pos } => {
                let r = self.yield_ref(current, hand, card, name)?;
                (yield_kind(hands, self.catalog, &r), None, slot.clone(), *pos)
            }
            Atom::Input { slot, card, pos, .. } => (card.produces().cloned(), card.binds.clone(), slot.clone(), *pos),
            Atom::Action(_) => unreachable!("action atoms are hoisted"),
        })
    }

    fn place(
        &self,
        current: usize,
        atom: &Atom<'c>,
        desc: &CardDescriptor,
        inputs: &mut BTreeMap<String, InputSource>,
        hands: &[Hand],
    ) -> Result<()> {
        let (kind, hint, explicit, pos) = self.atom_kind(current, atom, hands)?;
        let slot = match explicit {
            Some(slot) => {
                if inputs.contains_key(&slot) {
                    return Err(pos.err(format!("a slot other than `{slot}`, which is already bound")));
                }
                slot
            }
            None => pick_slot(desc, inputs, kind.as_ref(), hint.as_deref()).ok_or_else(|| {
                pos.err(match &kind {
                    Some(k) => format!("a free {k} input on `{}`", desc.name()),
                    None => "`slot:` before a yield whose kind is unknown".to_string(),
                })
            })?,
        };
        let slot_kind = desc.input(&slot).map(|s| s.kind.clone());
        let source = self.source(current, atom, slot_kind.as_ref())?;
        inputs.insert(slot, source);
        Ok(())
    }

    /// Builds one card and its nested Action cards in depth-first order.
    fn build_card(
        &self,
        current: usize,
        h: usize,
        expr: &CardExpr<'c>,
        cards: &mut Vec<CardInstance>,
        hands: &[Hand],
    ) -> Result<usize> {
        let index = cards.len();
        let id = expr.id.clone().unwrap_or_else(|| format!("h{}c{}", h + 1, index + 1));
        let mut card = CardInstance::new(id, expr.desc.path.clone());
        for (slot, token) in &expr.bindings {
            card.tokens.insert(slot.clone(), token.clone());
        }
        cards.push(card);
        let mut inputs = BTreeMap::new();
        for atom in &expr.inputs {
            match atom {
                Atom::Action(child) => {
                    let ci = self.build_card(current, h, child, cards, hands)?;
                    let child_desc = child.desc;
                    let copied: Vec<(DataKind, InputSource)> = child_desc
                        .inputs
                        .iter()
                        .filter_map(|s| match cards[ci].inputs.get(&s.name) {
                            Some(src @ InputSource::Literal(_)) => Some((s.kind.clone(), src.clone())),
                            _ => None,
                        })
                        .collect();
                    for (kind, source) in copied {
                        if let Some(slot) = pick_slot(expr.desc, &inputs, Some(&kind), None) {
                            inputs.insert(slot, source);
                        }
                    }
                }
                other => self.place(current, other, expr.desc, &mut inputs, hands)?,
            }
        }
        cards[index].inputs = inputs;
        Ok(index)
    }

    fn condition(&self, cond: &Cond, cards: &[CardInstance]) -> Result<Condition> {
        Ok(match cond {
            Cond::Id(id) => Condition::Card(id.clone()),
            Cond::Ref(w, pos) => {
                let i = letter_index(w);
                let card = cards
                    .get(i)
                    .ok_or_else(|| pos.err(format!("a card letter between A and {}", letters(cards.len().max(1) - 1))))?;
                Condition::Card(card.id.clone())
            }
            Cond::And(children) => Condition::And(children.iter().map(|c| self.condition(c, cards)).collect::<Result<_>>()?),
            Cond::Or(children) => Condition::Or(children.iter().map(|c| self.condition(c, cards)).collect::<Result<_>>()?),
            Cond::Not(child) => Condition::Not(Box::new(self.condition(child, cards)?)),
        })
    }

    fn build_hand(&self, li: usize, h: usize, hands: &[Hand], used_types: &mut BTreeSet<String>) -> Result<Hand> {
        let line = &self.lines[li];
        let mut hand = Hand::default();
        let mut cards = Vec::new();
        let mut standalone = Vec::new();
        let mut pending: Vec<(Option<&Cond>, Vec<usize>, &Label)> = Vec::new();
        let mut repeat_pos = None;

        fn collect<'x, 'c>(
            b: &Builder<'_, 'c>,
            items: &'x [Item<'c>],
            li: usize,
            h: usize,
            hands: &[Hand],
            cards: &mut Vec<CardInstance>,
            standalone: &mut Vec<&'x Atom<'c>>,
            used_types: &mut BTreeSet<String>,
        ) -> Result<Vec<usize>> {
            let mut direct = Vec::new();
            for item in items {
                match item {
                    Item::Card(expr) => direct.push(b.build_card(li, h, expr, cards, hands)?),
                    Item::Input(atom) => standalone.push(atom),
                    Item::Token(t) => {
                        used_types.insert(t.clone());
                    }
                    _ => {}
                }
            }
            Ok(direct)
        }

        for item in &line.items {
            match item {
                Item::Any => hand.rule = Rule::Any,
                Item::Repeat(n) => {
                    hand.repeat = n - 1;
                    repeat_pos = Some(line.lineno);
                }
                Item::Group { cards: group, cond, label } => {
                    let direct = collect(self, group, li, h, hands, &mut cards, &mut standalone, used_types)?;
                    pending.push((cond.as_ref(), direct, label));
                }
                other => {
                    collect(self, std::slice::from_ref(other), li, h, hands, &mut cards, &mut standalone, used_types)?;
                }
            }
        }

        for atom in standalone {
            let Atom::Input { slot, card, pos, .. } = atom else {
                unreachable!("standalone atoms are Input cards")
            };
            let kind = card.produces();
            let hint = slot.as_deref().or(card.binds.as_deref());
            let free = |c: &CardInstance, name: &str, k: &DataKind| {
                !c.inputs.contains_key(name)
                    && self
                        .catalog
                        .lookup(&c.descriptor)
                        .ok()
                        .and_then(|d| d.input(name))
                        .is_some_and(|s| &s.kind == k)
            };
            let mut target = None;
            if let (Some(hint), Some(k)) = (hint, kind) {
                let with_hint: Vec<usize> = (0..cards.len()).filter(|&i| free(&cards[i], hint, k)).collect();
                match with_hint.as_slice() {
                    [one] => target = Some((*one, hint.to_string())),
                    [] => {}
                    _ => return Err(pos.err(format!("a single card with a free `{hint}` input for `{}`", card.name()))),
                }
            }
            if target.is_none() {
                let Some(k) = kind else {
                    return Err(pos.err("an Input card that produces a value"));
                };
                let matches: Vec<(usize, String)> = cards
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| {
                        let d = self.catalog.lookup(&c.descriptor).ok()?;
                        pick_slot(d, &c.inputs, Some(k), None).map(|s| (i, s))
                    })
                    .collect();
                match matches.len() {
                    1 => target = matches.into_iter().next(),
                    0 => return Err(pos.err(format!("a card in the hand with a free {k} input for `{}`", card.name()))),
                    _ => return Err(pos.err(format!("`←` to attach `{}`; several cards take a {k}", card.name()))),
                }
            }
            let (ci, slot_name) = target.expect("target chosen");
            let slot_kind = self
                .catalog
                .lookup(&cards[ci].descriptor)
                .ok()
                .and_then(|d| d.input(&slot_name))
                .map(|s| s.kind.clone());
            let source = self.source(li, atom, slot_kind.as_ref())?;
            cards[ci].inputs.insert(slot_name, source);
        }

        for (cond, direct, label) in pending {
            let when = match cond {
                Some(c) => self.condition(c, &cards)?,
                None if direct.len() == 1 => Condition::Card(cards[direct[0]].id.clone()),
                None => Condition::And(direct.iter().map(|&i| Condition::Card(cards[i].id.clone())).collect()),
            };
            let goto = self.hand_index(self.resolve(li, label)?);
            hand.branches.push(Branch { when, goto });
        }

        if line.arm.is_some() {
            let last_arm = (li..self.lines.len())
                .take_while(|&l| self.lines[l].step == line.step)
                .last()
                .expect("current line is an arm");
            if last_arm != li {
                if let Some(lineno) = repeat_pos {
                    return Err(NotationError::Parse {
                        line: lineno,
                        column: 1,
                        expected: "Repeat only on the last branch arm of a step".into(),
                    });
                }
                let ends: Vec<Condition> = cards
                    .iter()
                    .filter(|c| self.catalog.lookup(&c.descriptor).is_ok_and(|d| d.ends))
                    .map(|c| Condition::Card(c.id.clone()))
                    .collect();
                if !ends.is_empty() {
                    let mut ends = ends;
                    let when = if ends.len() == 1 {
                        ends.remove(0)
                    } else if hand.rule == Rule::Any {
                        Condition::Or(ends)
                    } else {
                        Condition::And(ends)
                    };
                    let goto = self.hand_index(Target::Line(last_arm + 1));
                    hand.branches.push(Branch { when, goto });
                }
            }
        }

        for card in &cards {
            if let Ok(d) = self.catalog.lookup(&card.descriptor) {
                used_types.extend(d.tokens.iter().map(|t| t.token_type.clone()));
            }
        }
        hand.cards = cards;
        Ok(hand)
    }
}

struct Headers {
    deck_id: String,
    tokens: Option<Vec<TokenDecl>>,
    implicit_land: bool,
}

fn parse_header(raw: &str, lineno: usize, headers: &mut Headers) -> Result<bool> {
    let trimmed = raw.trim_start();
    let offset = raw.len() - trimmed.len();
    let Some((key, rest)) = trimmed.split_once(':') else {
        return Ok(false);
    };
    let key = key.trim();
    let rest_col = offset + key.chars().count() + 2;
    let pos = |col: usize| Pos { line: lineno, col };
    if is_keyword(key, "deck") {
        let id = rest.trim();
        if id.is_empty() {
            return Err(pos(rest_col).err("a deck id"));
        }
        headers.deck_id = id.to_string();
        return Ok(true);
    }
    let is_tokens = is_keyword(key, "tokens");
    if !is_tokens && !is_keyword(key, "options") {
        return Ok(false);
    }
    let toks: Vec<Lexeme> = lex(rest, lineno)?
        .into_iter()
        .map(|l| Lexeme {
            col: l.col + rest_col - 1,
            ..l
        })
        .collect();
    let mut p = Parser {
        toks: &toks,
        i: 0,
        line: lineno,
        end_col: raw.chars().count() + 1,
        catalog: &EMPTY_CATALOG,
    };
    let mut entries = Vec::new();
    if !p.at_end() {
        loop {
            let first = p.word(if is_tokens { "a token id" } else { "an option" })?;
            if is_tokens {
                p.expect(&Tok::Colon, "`:` between token id and type")?;
                let ty = p.word("a token type")?;
                entries.push(TokenDecl::new(first, ty));
            } else if first == "no-implicit-land" {
                headers.implicit_land = false;
            } else {
                return Err(p.pos().err("the option `no-implicit-land`"));
            }
            if !p.eat(&Tok::Comma) {
                break;
            }
        }
        if !p.at_end() {
            return Err(p.pos().err("`,` or end of line"));
        }
    }
    if is_tokens {
        headers.tokens.get_or_insert_with(Vec::new).extend(entries);
    }
    Ok(true)
}

static EMPTY_CATALOG: std::sync::LazyLock<Catalog> = std::sync::LazyLock::new(Catalog::empty);

fn parse_lines<'c>(text: &str, catalog: &'c Catalog, headers: &mut Headers) -> Result<Vec<Line<'c>>> {
    let mut lines: Vec<Line<'c>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with("//") {
            continue;
        }
        if lines.is_empty() && parse_header(raw, lineno, headers)? {
            continue;
        }
        let toks = lex(raw, lineno)?;
        let mut p = Parser {
            toks: &toks,
            i: 0,
            line: lineno,
            end_col: raw.chars().count() + 1,
            catalog,
        };
        let label_pos = p.pos();
        match p.peek() {
            Some(Tok::Word(w)) if is_keyword(w, "hand") => p.i += 1,
            _ => return Err(label_pos.err("a `Hand N:` label")),
        }
        let step = p.number("a hand number")?;
        let mut arm = None;
        if matches!(p.peek(), Some(Tok::Word(w)) if is_keyword(w, "branch")) {
            p.i += 1;
            arm = Some(p.word("a branch letter")?.to_uppercase());
        }
        p.expect(&Tok::Colon, "`:` after the hand label")?;
        if let Some(prev) = lines.last() {
            if step < prev.step {
                return Err(label_pos.err(format!("a hand number of at least {}", prev.step)));
            }
            if step == prev.step {
                let same: Vec<&Line> = lines.iter().filter(|l| l.step == step).collect();
                if arm.is_none() || same.iter().any(|l| l.arm.is_none()) {
                    return Err(label_pos.err(format!("a new hand number; Hand {step} is already defined")));
                }
                if same.iter().any(|l| l.arm == arm) {
                    return Err(label_pos.err(format!(
                        "a new branch letter; Hand {step} Branch {} is already defined",
                        arm.as_deref().unwrap_or_default()
                    )));
                }
            }
        }
        let items = p.items()?;
        lines.push(Line {
            step,
            arm,
            items,
            lineno,
        });
    }
    Ok(lines)
}

/// Parses notation text into a deck. Named literals such as `[pickup]` are
/// looked up in `bindings`; unknown names stay as Text literals.
pub fn parse_notation(text: &str, catalog: &Catalog, bindings: &BTreeMap<String, Value>) -> Result<Deck> {
    let mut headers = Headers {
        deck_id: "deck".into(),
        tokens: None,
        implicit_land: true,
    };
    let lines = parse_lines(text, catalog, &mut headers)?;

    let mut repeat_deck = false;
    let mut hand_of_line = Vec::with_capacity(lines.len());
    let mut hand_count = 0;
    for line in &lines {
        let deck_only = !line.items.is_empty() && line.items.iter().all(|i| matches!(i, Item::RepeatDeck));
        repeat_deck |= line.items.iter().any(|i| matches!(i, Item::RepeatDeck));
        if deck_only {
            hand_of_line.push(None);
        } else {
            hand_of_line.push(Some(hand_count));
            hand_count += 1;
        }
    }

    let builder = Builder {
        lines: &lines,
        hand_of_line,
        hand_count,
        catalog,
        bindings,
    };
    let mut hands: Vec<Hand> = Vec::with_capacity(hand_count);
    let mut used_types = BTreeSet::new();
    for li in 0..lines.len() {
        if let Some(h) = builder.hand_of_line[li] {
            let hand = builder.build_hand(li, h, &hands, &mut used_types)?;
            hands.push(hand);
        }
    }

    let tokens = headers
        .tokens
        .unwrap_or_else(|| auto_tokens(used_types.iter().map(String::as_str)));
    for hand in &mut hands {
        for card in &mut hand.cards {
            let Ok(desc) = catalog.lookup(&card.descriptor) else {
                continue;
            };
            for spec in &desc.tokens {
                if !card.tokens.contains_key(&spec.slot) {
                    if let Some(id) = auto_binding(&tokens, &spec.token_type) {
                        card.tokens.insert(spec.slot.clone(), id.to_string());
                    }
                }
            }
        }
    }

    let deck = Deck {
        deck_id: headers.deck_id,
        tokens,
        repeat_deck,
        implicit_land: headers.implicit_land,
        hands,
    };
    deck.check_structure()?;
    Ok(deck)
}

// ---------------------------------------------------------------- printer

fn card_name<'a>(catalog: &Catalog, path: &'a str) -> &'a str {
    let name = path.rsplit('/').next().unwrap_or(path);
    match catalog.by_name(name) {
        Some(d) if d.path == path => name,
        _ => path,
    }
}

fn input_card_for<'c>(catalog: &'c Catalog, slot: &str, kind: &DataKind) -> Option<&'c CardDescriptor> {
    let candidates: Vec<&CardDescriptor> = catalog
        .contents()
        .filter(|d| d.kind == CardKind::Input && d.produces() == Some(kind))
        .filter(|d| catalog.by_name(d.name()).is_some_and(|b| b.path == d.path))
        .collect();
    candidates
        .iter()
        .find(|d| d.binds.as_deref() == Some(slot))
        .or_else(|| candidates.iter().find(|d| d.binds.is_none()))
        .or_else(|| candidates.first())
        .copied()
}

fn print_condition(c: &Condition, cards: &[CardInstance], catalog: &Catalog) -> String {
    match c {
        Condition::Card(id) => match cards.iter().position(|x| &x.id == id) {
            Some(i) if resolve_card(catalog, &letters(i)).is_none() && is_positional(&letters(i)) => letters(i),
            _ => format!("@{id}"),
        },
        Condition::And(children) => format!("AND({})", join_conditions(children, cards, catalog)),
        Condition::Or(children) => format!("OR({})", join_conditions(children, cards, catalog)),
        Condition::Not(child) => format!("NOT({})", print_condition(child, cards, catalog)),
    }
}

fn join_conditions(children: &[Condition], cards: &[CardInstance], catalog: &Catalog) -> String {
    children
        .iter()
        .map(|c| print_condition(c, cards, catalog))
        .collect::<Vec<_>>()
        .join(", ")
}

fn print_card(deck: &Deck, h: usize, k: usize, catalog: &Catalog) -> String {
    let card = &deck.hands[h].cards[k];
    let mut out = card_name(catalog, &card.descriptor).to_string();
    if card.id != format!("h{}c{}", h + 1, k + 1) {
        out.push('@');
        out.push_str(&card.id);
    }
    let desc = catalog.lookup(&card.descriptor).ok();
    let explicit: Vec<String> = card
        .tokens
        .iter()
        .filter(|(slot, id)| {
            let spec = desc.and_then(|d| d.token_slot(slot));
            spec.and_then(|s| auto_binding(&deck.tokens, &s.token_type)) != Some(id.as_str())
        })
        .map(|(slot, id)| format!("{slot}={id}"))
        .collect();
    if !explicit.is_empty() {
        out.push_str(&format!("<{}>", explicit.join(", ")));
    }

    let mut order: Vec<&str> = desc
        .map(|d| d.inputs.iter().map(|s| s.name.as_str()).filter(|n| card.inputs.contains_key(*n)).collect())
        .unwrap_or_default();
    for name in card.inputs.keys() {
        if !order.contains(&name.as_str()) {
            order.push(name);
        }
    }
    let mut assigned = BTreeMap::new();
    let mut atoms = Vec::new();
    for slot in order {
        let source = &card.inputs[slot];
        let slot_kind = desc.and_then(|d| d.input(slot)).map(|s| &s.kind);
        let atom = match (source, desc) {
            (InputSource::Literal(v), Some(d)) => match slot_kind.and_then(|k| input_card_for(catalog, slot, k)) {
                Some(ic) => {
                    let body = format!("{} {}", ic.name(), format_value(v, slot_kind));
                    let picked = pick_slot(d, &assigned, ic.produces(), ic.binds.as_deref());
                    if picked.as_deref() == Some(slot) {
                        body
                    } else {
                        format!("{slot}: {body}")
                    }
                }
                None => format!("{slot}: {}", format_value(v, slot_kind)),
            },
            (InputSource::Literal(v), None) => format!("{slot}: {}", format_value(v, slot_kind)),
            (InputSource::Yield(r), _) => {
                let (base, index) = match r.selector() {
                    Some((base, Some(i))) => (base.to_string(), format!("[{i}]")),
                    _ => (r.name.clone(), String::new()),
                };
                let body = format!("Yield(Hand {}, {}, {base}{index})", r.hand + 1, r.card);
                let kind = if r.hand < h { yield_kind(&deck.hands, catalog, r) } else { None };
                let picked = desc.and_then(|d| pick_slot(d, &assigned, kind.as_ref(), None));
                if picked.as_deref() == Some(slot) {
                    body
                } else {
                    format!("{slot}: {body}")
                }
            }
        };
        assigned.insert(slot.to_string(), source.clone());
        atoms.push(atom);
    }
    match atoms.len() {
        0 => {}
        1 => out.push_str(&format!(" ← {}", atoms[0])),
        _ => out.push_str(&format!(" ← ({})", atoms.join(" + "))),
    }
    out
}

/// Renders a deck as notation. Parsing the output with an empty bindings
/// table gives back an equal deck.
pub fn print_notation(deck: &Deck, catalog: &Catalog) -> String {
    let mut lines = Vec::new();
    if deck.deck_id != "deck" {
        lines.push(format!("Deck: {}", deck.deck_id));
    }
    let used = deck.hands.iter().flat_map(|h| &h.cards).flat_map(|c| {
        catalog
            .lookup(&c.descriptor)
            .map(|d| d.tokens.iter().map(|t| t.token_type.as_str()).collect::<Vec<_>>())
            .unwrap_or_default()
    });
    if auto_tokens(used) != deck.tokens {
        let list: Vec<String> = deck.tokens.iter().map(|t| format!("{}:{}", t.id, t.token_type)).collect();
        lines.push(format!("Tokens: {}", list.join(", ")).trim_end().to_string());
    }
    if !deck.implicit_land {
        lines.push("Options: no-implicit-land".into());
    }
    for (h, hand) in deck.hands.iter().enumerate() {
        let mut items: Vec<String> = (0..hand.cards.len()).map(|k| print_card(deck, h, k, catalog)).collect();
        if hand.rule == Rule::Any {
            items.push("Any".into());
        }
        if hand.repeat > 0 {
            items.push(format!("Repeat({})", hand.repeat as u64 + 1));
        }
        for b in &hand.branches {
            let target = if b.goto == deck.hands.len() {
                "End".to_string()
            } else {
                format!("Hand {}", b.goto + 1)
            };
            items.push(format!("({} ; Branch({target}))", print_condition(&b.when, &hand.cards, catalog)));
        }
        let body = items.join(" ; ");
        lines.push(format!("Hand {}:{}{body}", h + 1, if body.is_empty() { "" } else { " " }));
    }
    if deck.repeat_deck {
        lines.push(format!("Hand {}: RepeatDeck", deck.hands.len() + 1));
    }
    lines.join("\n") + "\n"
}
