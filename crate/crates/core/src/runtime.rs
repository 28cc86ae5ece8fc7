//! Deck execution: a fixed-tick scheduler over cooperative card tasks.
//!
//! Every tick the clock advances, token alerts are collected, each running
//! card is polled once in hand order and then the hand's branches and rule
//! are evaluated. Everything the scheduler does is recorded as an
//! [`ExecutionEvent`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{CardContext, CardTask, Inputs, Progress, TokenFault};
use crate::catalog::{Catalog, CatalogError};
use crate::model::{CardInstance, Deck, InputSource, Rule, Value, YieldRef};
use crate::token::{self, TokenAlert, TokenInterface, TokenReply, TokenRequest};

const EPS: f64 = 1e-9;

/// Source of simulated time. Advancing also steps whatever world sits behind
/// the tokens.
pub trait Clock: Send {
    fn tick(&self) -> f64;

    fn advance(&mut self);
}

/// A clock with nothing behind it, for decks that use no tokens.
#[derive(Debug, Clone)]
pub struct TickClock {
    tick: f64,
}

impl TickClock {
    pub fn new(tick: f64) -> Self {
        TickClock { tick }
    }
}

impl Clock for TickClock {
    fn tick(&self) -> f64 {
        self.tick
    }

    fn advance(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndReason {
    All,
    Any,
    Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopOrigin {
    External,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeckStatus {
    Completed,
    Stopped,
    Faulted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum EventKind {
    DeckStarted {
        deck: String,
    },
    HandStarted {
        hand: usize,
        iteration: u32,
        pass: u32,
    },
    CardStarted {
        hand: usize,
        card: String,
    },
    CardSatisfied {
        hand: usize,
        card: String,
    },
    CardTerminated {
        hand: usize,
        card: String,
    },
    YieldProduced {
        hand: usize,
        card: String,
        name: String,
        value: Value,
    },
    HandEnded {
        hand: usize,
        reason: EndReason,
    },
    BranchTaken {
        from: usize,
        branch: usize,
        target: usize,
    },
    ImplicitLand,
    BatteryCritical,
    EmergencyStop {
        origin: StopOrigin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
        reason: String,
    },
    TokenAcknowledged {
        token: String,
    },
    Telemetry {
        lat: f64,
        lon: f64,
        alt: f64,
        battery: f64,
    },
    DeckEnded {
        status: DeckStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub seq: u64,
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl ExecutionEvent {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub events: Vec<ExecutionEvent>,
    pub status: DeckStatus,
}

impl Trace {
    /// One JSON object per line, in trace order.
    pub fn to_jsonl(&self) -> String {
        self.events.iter().map(|e| e.to_json() + "\n").collect()
    }

    pub fn kinds(&self) -> impl Iterator<Item = &EventKind> {
        self.events.iter().map(|e| &e.kind)
    }
}

/// Receives events as they happen. `on_tick` runs after each clock advance.
pub trait EventSink {
    fn on_event(&mut self, _event: &ExecutionEvent) {}

    fn on_tick(&mut self, _now: f64) {}
}

impl EventSink for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Deck passes allowed under RepeatDeck; `None` repeats until stopped.
    pub max_repeats: Option<u32>,
    pub max_sim_time: Option<f64>,
    pub estop_at: Option<f64>,
    /// Seconds a hand may go without any card satisfying before faulting.
    pub watchdog: Option<f64>,
    pub telemetry_every: Option<u32>,
    /// Sim seconds to wait for a landing before giving up.
    pub landing_timeout: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_repeats: None,
            max_sim_time: None,
            estop_at: None,
            watchdog: None,
            telemetry_every: None,
            landing_timeout: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StopError {
    #[error("execution already stopped")]
    AlreadyStopped,
}

const RUNNING: u8 = 0;
const REQUESTED: u8 = 1;
const FINISHED: u8 = 2;

#[derive(Debug, Default)]
struct StopInner {
    state: AtomicU8,
    reason: Mutex<Option<String>>,
}

/// External e-stop trigger; cheap to clone and safe to fire from any thread.
#[derive(Debug, Clone, Default)]
pub struct StopHandle {
    inner: Arc<StopInner>,
}

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trigger(&self, reason: impl Into<String>) -> Result<(), StopError> {
        let mut slot = self.inner.reason.lock().unwrap_or_else(|e| e.into_inner());
        self.inner
            .state
            .compare_exchange(RUNNING, REQUESTED, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| StopError::AlreadyStopped)?;
        *slot = Some(reason.into());
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.inner.state.load(Ordering::SeqCst) == FINISHED
    }

    fn requested(&self) -> Option<String> {
        if self.inner.state.load(Ordering::SeqCst) != REQUESTED {
            return None;
        }
        let reason = self.inner.reason.lock().unwrap_or_else(|e| e.into_inner());
        Some(reason.clone().unwrap_or_else(|| "stop requested".into()))
    }

    fn latch(&self) {
        let _ = self
            .inner
            .state
            .compare_exchange(RUNNING, REQUESTED, Ordering::SeqCst, Ordering::SeqCst);
    }

    fn finish(&self) {
        self.inner.state.store(FINISHED, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("declared token `{0}` has no implementation bound")]
    TokenNotBound(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot resolve input `{slot}` of card `{card}`: {reason}")]
pub struct InputResolutionFault {
    pub card: String,
    pub slot: String,
    pub reason: String,
}

/// Yields of ended hands; a later write to the same key replaces the value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct YieldStore {
    entries: BTreeMap<(usize, String, String), Value>,
}

impl YieldStore {
    pub fn insert(&mut self, hand: usize, card: &str, name: &str, value: Value) {
        self.entries.insert((hand, card.to_string(), name.to_string()), value);
    }

    /// Looks up a reference, applying an element selector such as `locations[0]`.
    pub fn get(&self, r: &YieldRef) -> Result<Value, String> {
        let (base, index) = r.selector().ok_or_else(|| format!("malformed yield name `{}`", r.name))?;
        let value = self
            .entries
            .get(&(r.hand, r.card.clone(), base.to_string()))
            .ok_or_else(|| format!("hand {} card `{}` has not yielded `{base}`", r.hand, r.card))?;
        match index {
            None => Ok(value.clone()),
            Some(i) => match value {
                Value::List(items) => items
                    .get(i)
                    .cloned()
                    .ok_or_else(|| format!("`{base}` has {} elements, no index {i}", items.len())),
                _ => Err(format!("`{base}` is not a sequence")),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn resolve_inputs(card: &CardInstance, store: &YieldStore) -> Result<Inputs, InputResolutionFault> {
    let mut values = BTreeMap::new();
    for (slot, source) in &card.inputs {
        let value = match source {
            InputSource::Literal(v) => v.clone(),
            InputSource::Yield(r) => store.get(r).map_err(|reason| InputResolutionFault {
                card: card.id.clone(),
                slot: slot.clone(),
                reason,
            })?,
        };
        values.insert(slot.clone(), value);
    }
    Ok(Inputs(values))
}

struct Running {
    id: String,
    task: Box<dyn CardTask>,
    bindings: BTreeMap<String, String>,
    ends: bool,
    satisfied: bool,
}

enum Abort {
    Input(String),
    Token(TokenFault),
}

impl From<TokenFault> for Abort {
    fn from(f: TokenFault) -> Self {
        Abort::Token(f)
    }
}

enum Next {
    Hand(usize, u32),
    End,
}

struct Executor<'a> {
    deck: &'a Deck,
    catalog: &'a Catalog,
    tokens: &'a mut BTreeMap<String, Box<dyn TokenInterface>>,
    clock: &'a mut dyn Clock,
    stop: &'a StopHandle,
    opts: &'a RunOptions,
    sink: &'a mut dyn EventSink,
    movement: Vec<String>,
    tick: f64,
    now_ticks: u64,
    events: Vec<ExecutionEvent>,
    store: YieldStore,
    hand: usize,
    iteration: u32,
    pass: u32,
    cards: Vec<Running>,
    progress_ticks: u64,
}

/// Runs a validated deck to completion against bound token implementations.
pub fn execute_deck(
    deck: &Deck,
    catalog: &Catalog,
    tokens: &mut BTreeMap<String, Box<dyn TokenInterface>>,
    clock: &mut dyn Clock,
    stop: &StopHandle,
    opts: &RunOptions,
    sink: &mut dyn EventSink,
) -> Result<Trace, RuntimeError> {
    for t in &deck.tokens {
        if !tokens.contains_key(&t.id) {
            return Err(RuntimeError::TokenNotBound(t.id.clone()));
        }
    }
    for card in deck.hands.iter().flat_map(|h| &h.cards) {
        catalog.behavior(&card.descriptor)?;
    }
    let movement = deck
        .tokens
        .iter()
        .filter(|t| t.token_type == token::MOVEMENT)
        .map(|t| t.id.clone())
        .collect();
    let tick = clock.tick();
    let exec = Executor {
        deck,
        catalog,
        tokens,
        clock,
        stop,
        opts,
        sink,
        movement,
        tick,
        now_ticks: 0,
        events: Vec::new(),
        store: YieldStore::default(),
        hand: 0,
        iteration: 0,
        pass: 0,
        cards: Vec::new(),
        progress_ticks: 0,
    };
    Ok(exec.run())
}

impl Executor<'_> {
    fn now(&self) -> f64 {
        self.now_ticks as f64 * self.tick
    }

    fn emit(&mut self, kind: EventKind) {
        let event = ExecutionEvent {
            seq: self.events.len() as u64,
            t: (self.now() * 1e6).round() / 1e6,
            kind,
        };
        self.sink.on_event(&event);
        self.events.push(event);
    }

    fn advance(&mut self) {
        self.clock.advance();
        self.now_ticks += 1;
        let now = self.now();
        self.sink.on_tick(now);
        if let Some(n) = self.opts.telemetry_every.filter(|&n| n > 0) {
            if self.now_ticks.is_multiple_of(n as u64) {
                self.telemetry();
            }
        }
    }

    fn telemetry(&mut self) {
        let Some(id) = self.movement.first().cloned() else {
            return;
        };
        let reply = self.tokens.get_mut(&id).map(|t| t.request(TokenRequest::FlightState));
        if let Some(Ok(TokenReply::Flight { position, battery, .. })) = reply {
            self.emit(EventKind::Telemetry {
                lat: position.lat,
                lon: position.lon,
                alt: position.alt,
                battery,
            });
        }
    }

    fn run(mut self) -> Trace {
        self.emit(EventKind::DeckStarted {
            deck: self.deck.deck_id.clone(),
        });
        if let Err(abort) = self.start_hand(0, 0) {
            return self.abort(abort);
        }
        loop {
            self.advance();
            if let Some(reason) = self.stop.requested() {
                return self.emergency_stop(StopOrigin::External, None, reason);
            }
            if self.opts.estop_at.is_some_and(|at| self.now() + EPS >= at) {
                let _ = self.stop.trigger("scheduled emergency stop");
                return self.emergency_stop(StopOrigin::External, None, "scheduled emergency stop".into());
            }
            if self.opts.max_sim_time.is_some_and(|max| self.now() > max + EPS) {
                return self.fault("maximum sim time reached".into());
            }
            let ids: Vec<String> = self.tokens.keys().cloned().collect();
            for id in ids {
                let now = self.now();
                let alert = self.tokens.get_mut(&id).and_then(|t| t.alert(now));
                match alert {
                    Some(TokenAlert::BatteryCritical) => return self.battery_critical(),
                    Some(TokenAlert::Fault(reason)) => {
                        return self.emergency_stop(StopOrigin::Token, Some(id), reason)
                    }
                    None => {}
                }
            }
            if let Err(abort) = self.poll_cards() {
                return self.abort(abort);
            }
            match self.transition() {
                Ok(Some(Next::End)) => return self.finish(),
                Ok(_) => {}
                Err(abort) => return self.abort(abort),
            }
            if let Some(limit) = self.opts.watchdog {
                let exempt = self.hand + 1 == self.deck.hands.len() && !self.cards.iter().any(|c| c.ends);
                let idle = (self.now_ticks - self.progress_ticks) as f64 * self.tick;
                if !exempt && idle > limit + EPS {
                    let reason = format!("watchdog: hand {} made no progress for {limit} s", self.hand);
                    return self.fault(reason);
                }
            }
        }
    }

    fn context_parts(&mut self, i: usize) -> (u64, f64, &BTreeMap<String, String>, &mut BTreeMap<String, Box<dyn TokenInterface>>, &mut Box<dyn CardTask>) {
        let c = &mut self.cards[i];
        (self.now_ticks, self.tick, &c.bindings, self.tokens, &mut c.task)
    }

    fn with_card<R>(&mut self, i: usize, f: impl FnOnce(&mut Box<dyn CardTask>, &mut CardContext<'_>) -> R) -> R {
        let (now, tick, bindings, tokens, task) = self.context_parts(i);
        let mut ctx = CardContext::new(now, tick, bindings, tokens);
        f(task, &mut ctx)
    }

    fn start_hand(&mut self, hand: usize, iteration: u32) -> Result<(), Abort> {
        self.hand = hand;
        self.iteration = iteration;
        self.progress_ticks = self.now_ticks;
        self.emit(EventKind::HandStarted {
            hand,
            iteration,
            pass: self.pass,
        });
        let deck = self.deck;
        let mut cards = Vec::new();
        for card in &deck.hands[hand].cards {
            let descriptor = self.catalog.lookup(&card.descriptor).map_err(|e| Abort::Input(e.to_string()))?;
            let behavior = self.catalog.behavior(&card.descriptor).map_err(|e| Abort::Input(e.to_string()))?;
            let inputs = resolve_inputs(card, &self.store).map_err(|e| Abort::Input(e.to_string()))?;
            let task = behavior
                .instantiate(&inputs)
                .map_err(|reason| Abort::Input(format!("card `{}`: {reason}", card.id)))?;
            cards.push(Running {
                id: card.id.clone(),
                task,
                bindings: card.tokens.clone(),
                ends: descriptor.ends,
                satisfied: false,
            });
        }
        self.cards = cards;
        for i in 0..self.cards.len() {
            let card = self.cards[i].id.clone();
            self.emit(EventKind::CardStarted { hand, card });
            self.with_card(i, |task, ctx| task.start(ctx))?;
        }
        Ok(())
    }

    fn poll_cards(&mut self) -> Result<(), Abort> {
        for i in 0..self.cards.len() {
            if self.cards[i].satisfied {
                continue;
            }
            let progress = self.with_card(i, |task, ctx| task.poll(ctx))?;
            if progress == Progress::Satisfied && self.cards[i].ends {
                self.cards[i].satisfied = true;
                self.progress_ticks = self.now_ticks;
                let card = self.cards[i].id.clone();
                self.emit(EventKind::CardSatisfied { hand: self.hand, card });
            }
        }
        Ok(())
    }

    fn transition(&mut self) -> Result<Option<Next>, Abort> {
        let deck = self.deck;
        let hand = &deck.hands[self.hand];
        let satisfied: BTreeSet<&str> = self.cards.iter().filter(|c| c.satisfied).map(|c| c.id.as_str()).collect();
        let fired = hand
            .branches
            .iter()
            .position(|b| b.when.evaluate(&|id| satisfied.contains(id)));
        let mut ends = self.cards.iter().filter(|c| c.ends).peekable();
        let rule_met = match hand.rule {
            Rule::All => ends.peek().is_some() && ends.all(|c| c.satisfied),
            Rule::Any => ends.any(|c| c.satisfied),
        };
        let next = match (fired, rule_met) {
            (Some(b), _) => {
                self.end_hand(EndReason::Branch)?;
                let target = hand.branches[b].goto;
                self.emit(EventKind::BranchTaken {
                    from: self.hand,
                    branch: b,
                    target,
                });
                if target >= deck.hands.len() {
                    self.next_pass()
                } else {
                    Next::Hand(target, 0)
                }
            }
            (None, true) => {
                let reason = match hand.rule {
                    Rule::All => EndReason::All,
                    Rule::Any => EndReason::Any,
                };
                self.end_hand(reason)?;
                if self.iteration < hand.repeat {
                    Next::Hand(self.hand, self.iteration + 1)
                } else if self.hand + 1 < deck.hands.len() {
                    Next::Hand(self.hand + 1, 0)
                } else {
                    self.next_pass()
                }
            }
            (None, false) => return Ok(None),
        };
        if let Next::Hand(h, iteration) = next {
            self.start_hand(h, iteration)?;
        }
        Ok(Some(next))
    }

    fn next_pass(&mut self) -> Next {
        let more = self.opts.max_repeats.is_none_or(|max| self.pass + 1 < max);
        if self.deck.repeat_deck && more {
            self.pass += 1;
            Next::Hand(0, 0)
        } else {
            Next::End
        }
    }

    fn end_hand(&mut self, reason: EndReason) -> Result<(), Abort> {
        let mut fault = None;
        for i in 0..self.cards.len() {
            if !self.cards[i].satisfied {
                if let Err(f) = self.with_card(i, |task, ctx| task.terminate(ctx)) {
                    fault.get_or_insert(f);
                }
                let card = self.cards[i].id.clone();
                self.emit(EventKind::CardTerminated { hand: self.hand, card });
            }
        }
        for i in 0..self.cards.len() {
            let card = self.cards[i].id.clone();
            for (name, value) in self.cards[i].task.yields() {
                self.store.insert(self.hand, &card, &name, value.clone());
                self.emit(EventKind::YieldProduced {
                    hand: self.hand,
                    card: card.clone(),
                    name,
                    value,
                });
            }
        }
        self.cards.clear();
        self.emit(EventKind::HandEnded { hand: self.hand, reason });
        match fault {
            Some(f) => Err(Abort::Token(f)),
            None => Ok(()),
        }
    }

    /// Cancels every running card, ignoring token errors.
    fn cancel_cards(&mut self) {
        for i in 0..self.cards.len() {
            if !self.cards[i].satisfied {
                let _ = self.with_card(i, |task, ctx| task.terminate(ctx));
                let card = self.cards[i].id.clone();
                self.emit(EventKind::CardTerminated { hand: self.hand, card });
            }
        }
        self.cards.clear();
    }

    fn landed(&mut self) -> bool {
        let ids = self.movement.clone();
        ids.iter().all(|id| {
            matches!(
                self.tokens.get_mut(id).map(|t| t.request(TokenRequest::FlightState)),
                Some(Ok(TokenReply::Flight { airborne: false, .. }))
            )
        })
    }

    /// Advances time until every movement token reports it is on the ground.
    fn wait_for_landing(&mut self) -> bool {
        let start = self.now_ticks;
        while !self.landed() {
            if (self.now_ticks - start) as f64 * self.tick > self.opts.landing_timeout + EPS {
                return false;
            }
            self.advance();
        }
        true
    }

    fn end(mut self, status: DeckStatus, reason: Option<String>) -> Trace {
        self.emit(EventKind::DeckEnded { status, reason });
        self.stop.finish();
        Trace {
            events: self.events,
            status,
        }
    }

    fn finish(mut self) -> Trace {
        if self.deck.implicit_land && !self.movement.is_empty() {
            self.emit(EventKind::ImplicitLand);
            let ids = self.movement.clone();
            for id in &ids {
                if let Some(Err(e)) = self.tokens.get_mut(id).map(|t| t.request(TokenRequest::Land)) {
                    let fault = TokenFault {
                        token: id.clone(),
                        reason: e.0,
                    };
                    return self.emergency_stop(StopOrigin::Token, Some(fault.token), fault.reason);
                }
            }
            let start = self.now_ticks;
            while !self.landed() {
                if (self.now_ticks - start) as f64 * self.tick > self.opts.landing_timeout + EPS {
                    return self.end(DeckStatus::Faulted, Some("implicit landing did not complete".into()));
                }
                self.advance();
                if let Some(reason) = self.stop.requested() {
                    return self.emergency_stop(StopOrigin::External, None, reason);
                }
            }
        }
        self.end(DeckStatus::Completed, None)
    }

    fn abort(self, abort: Abort) -> Trace {
        match abort {
            Abort::Input(reason) => self.fault(reason),
            Abort::Token(f) => self.emergency_stop(StopOrigin::Token, Some(f.token), f.reason),
        }
    }

    fn fault(mut self, reason: String) -> Trace {
        self.cancel_cards();
        self.end(DeckStatus::Faulted, Some(reason))
    }

    fn emergency_stop(mut self, origin: StopOrigin, token: Option<String>, reason: String) -> Trace {
        self.stop.latch();
        self.emit(EventKind::EmergencyStop {
            origin,
            token,
            reason,
        });
        self.cancel_cards();
        let ids: Vec<String> = self.tokens.keys().cloned().collect();
        for id in ids {
            if let Some(t) = self.tokens.get_mut(&id) {
                let _ = t.emergency_stop();
            }
            self.emit(EventKind::TokenAcknowledged { token: id });
        }
        if self.wait_for_landing() {
            self.end(DeckStatus::Stopped, None)
        } else {
            self.end(DeckStatus::Faulted, Some("landing after emergency stop did not complete".into()))
        }
    }

    fn battery_critical(mut self) -> Trace {
        self.emit(EventKind::BatteryCritical);
        let final_open_hand = self.hand + 1 == self.deck.hands.len() && !self.cards.iter().any(|c| c.ends);
        self.cancel_cards();
        if !self.wait_for_landing() {
            return self.end(DeckStatus::Faulted, Some("forced landing did not complete".into()));
        }
        if final_open_hand {
            self.end(DeckStatus::Completed, None)
        } else {
            self.end(DeckStatus::Faulted, Some("battery critical before the deck completed".into()))
        }
    }
}
