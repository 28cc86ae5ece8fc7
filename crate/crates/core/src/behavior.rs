//! Executable behaviors of the drone Action cards.
//!
//! Each card instance becomes a [`CardTask`], a small state machine the
//! runtime starts once and then polls every tick until the hand ends.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{BoundingBox, Location, RelativePosition, Value};
use crate::token::{self, OpId, OpStatus, TokenInterface, TokenReply, TokenRequest};

/// Seconds between shots for `TakePhotos` and between `LogHumidity` samples.
pub const SAMPLE_INTERVAL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("token `{token}` failed: {reason}")]
pub struct TokenFault {
    pub token: String,
    pub reason: String,
}

/// Access to the tokens bound to one card, plus the current sim time.
pub struct CardContext<'a> {
    pub now_ticks: u64,
    pub tick: f64,
    bindings: &'a BTreeMap<String, String>,
    tokens: &'a mut BTreeMap<String, Box<dyn TokenInterface>>,
}

impl<'a> CardContext<'a> {
    pub fn new(
        now_ticks: u64,
        tick: f64,
        bindings: &'a BTreeMap<String, String>,
        tokens: &'a mut BTreeMap<String, Box<dyn TokenInterface>>,
    ) -> Self {
        CardContext {
            now_ticks,
            tick,
            bindings,
            tokens,
        }
    }

    pub fn now(&self) -> f64 {
        self.now_ticks as f64 * self.tick
    }

    fn token(&mut self, slot: &str) -> Result<(&str, &mut Box<dyn TokenInterface>), TokenFault> {
        let id = self.bindings.get(slot).ok_or_else(|| TokenFault {
            token: slot.to_string(),
            reason: format!("slot `{slot}` is not bound"),
        })?;
        let token = self.tokens.get_mut(id).ok_or_else(|| TokenFault {
            token: id.clone(),
            reason: "no implementation bound".into(),
        })?;
        Ok((id.as_str(), token))
    }

    pub fn request(&mut self, slot: &str, request: TokenRequest) -> Result<TokenReply, TokenFault> {
        let (id, token) = self.token(slot)?;
        token.request(request).map_err(|e| TokenFault {
            token: id.to_string(),
            reason: e.0,
        })
    }

    /// Polls a long-running operation; a failed operation is a fault.
    pub fn finished(&mut self, slot: &str, op: OpId) -> Result<bool, TokenFault> {
        let (id, token) = self.token(slot)?;
        match token.status(op) {
            Ok(OpStatus::Running) => Ok(false),
            Ok(OpStatus::Complete) => Ok(true),
            Ok(OpStatus::Failed(reason)) | Err(token::TokenError(reason)) => Err(TokenFault {
                token: id.to_string(),
                reason,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Running,
    Satisfied,
}

pub trait CardTask: Send {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault>;

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault>;

    /// Cooperative cancellation at hand end; rolls tokens to a safe idle.
    fn terminate(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault>;

    fn yields(&self) -> Vec<(String, Value)>;
}

/// Resolved input values of one card, keyed by slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs(pub BTreeMap<String, Value>);

impl Inputs {
    pub fn get(&self, slot: &str) -> Option<&Value> {
        self.0.get(slot)
    }

    fn missing(slot: &str) -> String {
        format!("input `{slot}` missing or of the wrong kind")
    }

    fn number(&self, slot: &str) -> Result<f64, String> {
        self.get(slot).and_then(Value::as_number).ok_or_else(|| Self::missing(slot))
    }

    fn text(&self, slot: &str) -> Result<String, String> {
        self.get(slot)
            .and_then(Value::as_text)
            .map(str::to_string)
            .ok_or_else(|| Self::missing(slot))
    }

    fn location(&self, slot: &str) -> Result<Location, String> {
        self.get(slot).and_then(Value::as_location).ok_or_else(|| Self::missing(slot))
    }

    fn bounding_box(&self, slot: &str) -> Result<Option<BoundingBox>, String> {
        match self.get(slot) {
            None => Ok(None),
            Some(Value::BoundingBox(b)) => Ok(Some(*b)),
            Some(_) => Err(Self::missing(slot)),
        }
    }

    fn relative(&self, slot: &str) -> Result<RelativePosition, String> {
        match self.get(slot) {
            Some(Value::Relative(r)) => Ok(*r),
            _ => Err(Self::missing(slot)),
        }
    }

    fn min_altitude(&self) -> Option<f64> {
        self.get("minAltitude").and_then(Value::as_number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BehaviorKind {
    FlyTo,
    Land,
    Hover,
    HoverToAltitude,
    ReturnHome,
    CoverArea,
    Circle,
    Follow,
    TakeAPhoto,
    TakePhotos,
    RecordVideo,
    PlayAudio,
    PlayAudioLoop,
    OpenClaw,
    CloseClaw,
    LogHumidity,
    DetectOnGround,
    DetectInAir,
    TrackOnGround,
    SetATimer,
    WaitUntilLocation,
    WaitForButtonPush,
    WaitForGas,
    WaitForHumidity,
}

/// Human-readable description of what a behavior does with its tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BehaviorContract {
    pub operations: Vec<&'static str>,
    pub satisfied_when: &'static str,
    pub on_terminate: Option<&'static str>,
}

impl BehaviorKind {
    pub fn contract(self) -> BehaviorContract {
        use BehaviorKind::*;
        let (operations, satisfied_when, on_terminate): (Vec<&'static str>, _, _) = match self {
            FlyTo => (vec!["movement.flyTo(destination)"], "movement reports arrival", Some("movement.hold")),
            Land => (vec!["movement.land()"], "touchdown", Some("movement.hold")),
            Hover => (vec!["movement.hover()"], "never", Some("movement.hold")),
            HoverToAltitude => (vec!["movement.hoverToAltitude(altitude)"], "altitude reached", Some("movement.hold")),
            ReturnHome => (vec!["movement.returnHome()"], "arrival above home", Some("movement.hold")),
            CoverArea => (vec!["movement.coverPath(area, avoid)"], "sweep complete", Some("movement.hold")),
            Circle => (vec!["movement.circle(center, radius)"], "never", Some("movement.hold")),
            Follow => (vec!["movement.followTarget(target, offset)"], "never", Some("movement.hold")),
            TakeAPhoto => (vec!["camera.takePhoto()"], "photo captured", None),
            TakePhotos => (vec!["camera.takePhoto() every second for duration"], "never", None),
            RecordVideo => (vec!["camera.startVideo()"], "never", Some("camera.stopVideo")),
            PlayAudio => (vec!["speaker.play(audio)"], "clip finished", Some("speaker.stopAudio")),
            PlayAudioLoop => (vec!["speaker.playLoop(audio)"], "never", Some("speaker.stopAudio")),
            OpenClaw => (vec!["claw.open()"], "claw open", None),
            CloseClaw => (vec!["claw.close()"], "claw closed", None),
            LogHumidity => (vec!["humidity-sensor.readLevel() every second"], "never", None),
            DetectOnGround => (vec!["gimbal.point(-90)", "camera.detect(image, ground)"], "object detected", None),
            DetectInAir => (vec!["gimbal.point(0)", "camera.detect(image, air)"], "object detected", None),
            TrackOnGround => (vec!["gimbal.point(-90)", "camera.track(image) each tick"], "never", None),
            SetATimer => (vec![], "duration elapsed", None),
            WaitUntilLocation => (vec!["movement.withinTolerance(location) each tick"], "drone at location", None),
            WaitForButtonPush => (vec!["button.awaitPress()"], "button pressed after start", None),
            WaitForGas => (vec!["gas-sensor.readLevel() each tick"], "level >= threshold", None),
            WaitForHumidity => (vec!["humidity-sensor.readLevel() each tick"], "level >= threshold", None),
        };
        BehaviorContract {
            operations,
            satisfied_when,
            on_terminate,
        }
    }

    /// Builds the task for one card instance from its resolved inputs.
    pub fn instantiate(self, inputs: &Inputs) -> Result<Box<dyn CardTask>, String> {
        use BehaviorKind::*;
        let min_altitude = inputs.min_altitude();
        let movement = |request: TokenRequest, ends: bool| -> Box<dyn CardTask> {
            Box::new(Move {
                request,
                ends,
                op: None,
                done: false,
            })
        };
        Ok(match self {
            FlyTo => {
                let mut goal = inputs.location("destination")?;
                if let Some(floor) = min_altitude {
                    goal.alt = goal.alt.max(floor);
                }
                movement(TokenRequest::FlyTo { goal }, true)
            }
            Land => movement(TokenRequest::Land, true),
            Hover => movement(TokenRequest::Hover { min_altitude }, false),
            HoverToAltitude => {
                let mut altitude = inputs.number("altitude")?;
                if let Some(floor) = min_altitude {
                    altitude = altitude.max(floor);
                }
                movement(TokenRequest::HoverToAltitude { altitude }, true)
            }
            ReturnHome => movement(TokenRequest::ReturnHome { min_altitude }, true),
            CoverArea => {
                let area = inputs.bounding_box("area")?.ok_or_else(|| Inputs::missing("area"))?;
                let avoid = inputs.bounding_box("avoid")?;
                movement(
                    TokenRequest::CoverPath {
                        area,
                        avoid,
                        min_altitude,
                    },
                    true,
                )
            }
            Circle => movement(
                TokenRequest::Circle {
                    center: inputs.location("center")?,
                    radius: inputs.number("radius")?,
                    min_altitude,
                },
                false,
            ),
            Follow => movement(
                TokenRequest::FollowTarget {
                    image: inputs.text("target")?,
                    offset: inputs.relative("offset")?,
                    min_altitude,
                },
                false,
            ),
            TakeAPhoto => Box::new(SinglePhoto { taken: false }),
            TakePhotos => Box::new(Photos {
                duration: inputs.number("duration")?,
                started: 0,
                last: None,
                photos: Vec::new(),
                locations: Vec::new(),
            }),
            RecordVideo => Box::new(Video { reference: None }),
            PlayAudio => Box::new(Actuate {
                slot: token::SPEAKER,
                request: TokenRequest::Play {
                    clip: inputs.text("audio")?,
                },
                cancel: Some(TokenRequest::StopAudio),
                ends: true,
                op: None,
                done: false,
            }),
            PlayAudioLoop => Box::new(Actuate {
                slot: token::SPEAKER,
                request: TokenRequest::PlayLoop {
                    clip: inputs.text("audio")?,
                },
                cancel: Some(TokenRequest::StopAudio),
                ends: false,
                op: None,
                done: false,
            }),
            OpenClaw | CloseClaw => Box::new(Actuate {
                slot: token::CLAW,
                request: if self == OpenClaw {
                    TokenRequest::OpenClaw
                } else {
                    TokenRequest::CloseClaw
                },
                cancel: None,
                ends: true,
                op: None,
                done: false,
            }),
            LogHumidity => Box::new(LevelLog {
                last: None,
                readings: Vec::new(),
            }),
            DetectOnGround | DetectInAir => Box::new(Detect {
                image: inputs.text("image")?,
                on_ground: self == DetectOnGround,
                found: None,
            }),
            TrackOnGround => Box::new(Track {
                image: inputs.text("image")?,
                latest: None,
            }),
            SetATimer => Box::new(Timer {
                duration: inputs.number("duration")?,
                started: 0,
            }),
            WaitUntilLocation => Box::new(WaitUntil {
                target: inputs.location("location")?,
            }),
            WaitForButtonPush => Box::new(Button { since: 0.0 }),
            WaitForGas => Box::new(LevelTrigger {
                slot: token::GAS_SENSOR,
                threshold: inputs.number("threshold")?,
            }),
            WaitForHumidity => Box::new(LevelTrigger {
                slot: token::HUMIDITY_SENSOR,
                threshold: inputs.number("threshold")?,
            }),
        })
    }
}

fn elapsed(ctx: &CardContext<'_>, since_ticks: u64) -> f64 {
    ctx.now_ticks.saturating_sub(since_ticks) as f64 * ctx.tick
}

// Duration comparisons on tick multiples tolerate float rounding.
const TIME_EPS: f64 = 1e-9;

struct Move {
    request: TokenRequest,
    ends: bool,
    op: Option<OpId>,
    done: bool,
}

impl CardTask for Move {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        match ctx.request(token::MOVEMENT, self.request.clone())? {
            TokenReply::Started(op) => self.op = Some(op),
            _ => self.done = true,
        }
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        if !self.done {
            if let Some(op) = self.op {
                self.done = ctx.finished(token::MOVEMENT, op)?;
            }
        }
        Ok(if self.done && self.ends {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        if !self.done {
            ctx.request(token::MOVEMENT, TokenRequest::Hold)?;
        }
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

/// One token operation that either completes (claw, clip) or runs until
/// cancelled (looping audio).
struct Actuate {
    slot: &'static str,
    request: TokenRequest,
    cancel: Option<TokenRequest>,
    ends: bool,
    op: Option<OpId>,
    done: bool,
}

impl CardTask for Actuate {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        match ctx.request(self.slot, self.request.clone())? {
            TokenReply::Started(op) => self.op = Some(op),
            _ => self.done = true,
        }
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        if !self.done {
            if let Some(op) = self.op {
                self.done = ctx.finished(self.slot, op)?;
            }
        }
        Ok(if self.done && self.ends {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        if let (false, Some(cancel)) = (self.done, &self.cancel) {
            ctx.request(self.slot, cancel.clone())?;
        }
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

struct SinglePhoto {
    taken: bool,
}

impl CardTask for SinglePhoto {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        ctx.request(token::CAMERA, TokenRequest::TakePhoto)?;
        self.taken = true;
        Ok(())
    }

    fn poll(&mut self, _ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        Ok(if self.taken {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

struct Photos {
    duration: f64,
    started: u64,
    last: Option<u64>,
    photos: Vec<Value>,
    locations: Vec<Value>,
}

impl CardTask for Photos {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        self.started = ctx.now_ticks;
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        let due = match self.last {
            None => true,
            Some(last) => elapsed(ctx, last) + TIME_EPS >= SAMPLE_INTERVAL,
        };
        if due && elapsed(ctx, self.started) <= self.duration + TIME_EPS {
            if let TokenReply::Photo { image, location } =
                ctx.request(token::CAMERA, TokenRequest::TakePhoto)?
            {
                self.photos.push(Value::Text(image));
                self.locations.push(Value::Location(location));
            }
            self.last = Some(ctx.now_ticks);
        }
        Ok(Progress::Running)
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        vec![
            ("photos".into(), Value::List(self.photos.clone())),
            ("locations".into(), Value::List(self.locations.clone())),
        ]
    }
}

struct Video {
    reference: Option<String>,
}

impl CardTask for Video {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        ctx.request(token::CAMERA, TokenRequest::StartVideo)?;
        Ok(())
    }

    fn poll(&mut self, _ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        Ok(Progress::Running)
    }

    fn terminate(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        if let TokenReply::Video(reference) = ctx.request(token::CAMERA, TokenRequest::StopVideo)? {
            self.reference = Some(reference);
        }
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        self.reference
            .iter()
            .map(|r| ("video".to_string(), Value::Text(r.clone())))
            .collect()
    }
}

struct LevelLog {
    last: Option<u64>,
    readings: Vec<Value>,
}

impl CardTask for LevelLog {
    fn start(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        let due = self
            .last
            .is_none_or(|last| elapsed(ctx, last) + TIME_EPS >= SAMPLE_INTERVAL);
        if due {
            if let TokenReply::Level(level) =
                ctx.request(token::HUMIDITY_SENSOR, TokenRequest::ReadLevel)?
            {
                self.readings.push(Value::Number(level));
            }
            self.last = Some(ctx.now_ticks);
        }
        Ok(Progress::Running)
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        vec![("readings".into(), Value::List(self.readings.clone()))]
    }
}

struct Detect {
    image: String,
    on_ground: bool,
    found: Option<Location>,
}

impl CardTask for Detect {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        let pitch_deg = if self.on_ground { -90.0 } else { 0.0 };
        ctx.request(token::GIMBAL, TokenRequest::PointGimbal { pitch_deg })?;
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        if self.found.is_none() {
            let request = TokenRequest::Detect {
                image: self.image.clone(),
                on_ground: self.on_ground,
            };
            if let TokenReply::Detection(hit) = ctx.request(token::CAMERA, request)? {
                self.found = hit;
            }
        }
        Ok(if self.found.is_some() {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        self.found
            .iter()
            .map(|l| ("detectedLocation".to_string(), Value::Location(*l)))
            .collect()
    }
}

struct Track {
    image: String,
    latest: Option<Location>,
}

impl CardTask for Track {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        ctx.request(token::GIMBAL, TokenRequest::PointGimbal { pitch_deg: -90.0 })?;
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        let request = TokenRequest::Track {
            image: self.image.clone(),
        };
        if let TokenReply::Detection(Some(at)) = ctx.request(token::CAMERA, request)? {
            self.latest = Some(at);
        }
        Ok(Progress::Running)
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        self.latest
            .iter()
            .map(|l| ("trackedPosition".to_string(), Value::Location(*l)))
            .collect()
    }
}

struct Timer {
    duration: f64,
    started: u64,
}

impl CardTask for Timer {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        self.started = ctx.now_ticks;
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        Ok(if elapsed(ctx, self.started) + TIME_EPS >= self.duration {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

struct WaitUntil {
    target: Location,
}

impl CardTask for WaitUntil {
    fn start(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        let reply = ctx.request(
            token::MOVEMENT,
            TokenRequest::WithinTolerance {
                target: self.target,
            },
        )?;
        Ok(if reply == TokenReply::Flag(true) {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

struct Button {
    since: f64,
}

impl CardTask for Button {
    fn start(&mut self, ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        self.since = ctx.now();
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        let reply = ctx.request(token::BUTTON, TokenRequest::PressedSince { since: self.since })?;
        Ok(if reply == TokenReply::Flag(true) {
            Progress::Satisfied
        } else {
            Progress::Running
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

struct LevelTrigger {
    slot: &'static str,
    threshold: f64,
}

impl CardTask for LevelTrigger {
    fn start(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn poll(&mut self, ctx: &mut CardContext<'_>) -> Result<Progress, TokenFault> {
        Ok(match ctx.request(self.slot, TokenRequest::ReadLevel)? {
            TokenReply::Level(level) if level >= self.threshold => Progress::Satisfied,
            _ => Progress::Running,
        })
    }

    fn terminate(&mut self, _ctx: &mut CardContext<'_>) -> Result<(), TokenFault> {
        Ok(())
    }

    fn yields(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::TokenError;

    /// Token double that records every request and completes operations
    /// after a fixed number of polls.
    struct Scripted {
        kind: &'static str,
        log: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
        polls_to_finish: u32,
        polls: u32,
        level: f64,
    }

    impl TokenInterface for Scripted {
        fn token_type(&self) -> &str {
            self.kind
        }

        fn request(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
            self.log.lock().unwrap().push(request.name().to_string());
            Ok(match request {
                TokenRequest::ReadLevel => TokenReply::Level(self.level),
                TokenRequest::Hold | TokenRequest::StopAudio => TokenReply::Done,
                _ => TokenReply::Started(1),
            })
        }

        fn status(&mut self, _op: OpId) -> Result<OpStatus, TokenError> {
            self.polls += 1;
            Ok(if self.polls >= self.polls_to_finish {
                OpStatus::Complete
            } else {
                OpStatus::Running
            })
        }

        fn emergency_stop(&mut self) -> Result<(), TokenError> {
            Ok(())
        }
    }

    fn setup(kind: &'static str, level: f64) -> (BTreeMap<String, String>, BTreeMap<String, Box<dyn TokenInterface>>, std::sync::Arc<std::sync::Mutex<Vec<String>>>) {
        let log = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut tokens: BTreeMap<String, Box<dyn TokenInterface>> = BTreeMap::new();
        tokens.insert(
            "t".into(),
            Box::new(Scripted {
                kind,
                log: log.clone(),
                polls_to_finish: 3,
                polls: 0,
                level,
            }),
        );
        let bindings = BTreeMap::from([(kind.to_string(), "t".to_string())]);
        (bindings, tokens, log)
    }

    #[test]
    fn land_maps_to_movement_land_and_holds_when_cancelled() {
        let (bindings, mut tokens, log) = setup(token::MOVEMENT, 0.0);
        let mut task = BehaviorKind::Land.instantiate(&Inputs::default()).unwrap();
        let mut ctx = CardContext::new(0, 0.1, &bindings, &mut tokens);
        task.start(&mut ctx).unwrap();
        assert_eq!(task.poll(&mut ctx).unwrap(), Progress::Running);
        task.terminate(&mut ctx).unwrap();
        assert_eq!(*log.lock().unwrap(), vec!["land", "hold"]);
    }

    #[test]
    fn movement_satisfies_when_operation_completes() {
        let (bindings, mut tokens, _) = setup(token::MOVEMENT, 0.0);
        let mut task = BehaviorKind::Land.instantiate(&Inputs::default()).unwrap();
        let mut ctx = CardContext::new(0, 0.1, &bindings, &mut tokens);
        task.start(&mut ctx).unwrap();
        let progress: Vec<_> = (0..3).map(|_| task.poll(&mut ctx).unwrap()).collect();
        assert_eq!(progress, vec![Progress::Running, Progress::Running, Progress::Satisfied]);
    }

    #[test]
    fn gas_trigger_compares_against_threshold() {
        for (level, expect) in [(0.4, Progress::Running), (0.5, Progress::Satisfied)] {
            let (bindings, mut tokens, _) = setup(token::GAS_SENSOR, level);
            let inputs = Inputs(BTreeMap::from([("threshold".into(), Value::Number(0.5))]));
            let mut task = BehaviorKind::WaitForGas.instantiate(&inputs).unwrap();
            let mut ctx = CardContext::new(0, 0.1, &bindings, &mut tokens);
            task.start(&mut ctx).unwrap();
            assert_eq!(task.poll(&mut ctx).unwrap(), expect);
        }
    }

    #[test]
    fn timer_counts_ticks() {
        let bindings = BTreeMap::new();
        let mut tokens = BTreeMap::new();
        let inputs = Inputs(BTreeMap::from([("duration".into(), Value::Number(0.3))]));
        let mut task = BehaviorKind::SetATimer.instantiate(&inputs).unwrap();
        task.start(&mut CardContext::new(10, 0.1, &bindings, &mut tokens)).unwrap();
        let mut states = Vec::new();
        for t in 11..=13 {
            states.push(task.poll(&mut CardContext::new(t, 0.1, &bindings, &mut tokens)).unwrap());
        }
        assert_eq!(states, vec![Progress::Running, Progress::Running, Progress::Satisfied]);
    }

    #[test]
    fn missing_inputs_are_reported() {
        assert!(BehaviorKind::FlyTo.instantiate(&Inputs::default()).is_err());
    }

    #[test]
    fn min_altitude_raises_fly_to_goal() {
        let inputs = Inputs(BTreeMap::from([
            ("destination".into(), Value::Location(Location::new(0.0, 0.0, 5.0))),
            ("minAltitude".into(), Value::Number(30.0)),
        ]));
        let mut task = BehaviorKind::FlyTo.instantiate(&inputs).unwrap();
        let mut tokens: BTreeMap<String, Box<dyn TokenInterface>> = BTreeMap::new();
        let seen = std::sync::Arc::new(std::sync::Mutex::new(None));
        struct Capture(std::sync::Arc<std::sync::Mutex<Option<TokenRequest>>>);
        impl TokenInterface for Capture {
            fn token_type(&self) -> &str {
                token::MOVEMENT
            }
            fn request(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
                *self.0.lock().unwrap() = Some(request);
                Ok(TokenReply::Started(7))
            }
            fn status(&mut self, _op: OpId) -> Result<OpStatus, TokenError> {
                Ok(OpStatus::Running)
            }
            fn emergency_stop(&mut self) -> Result<(), TokenError> {
                Ok(())
            }
        }
        tokens.insert("m".into(), Box::new(Capture(seen.clone())));
        let bindings = BTreeMap::from([(token::MOVEMENT.to_string(), "m".to_string())]);
        task.start(&mut CardContext::new(0, 0.1, &bindings, &mut tokens)).unwrap();
        let goal = match seen.lock().unwrap().clone() {
            Some(TokenRequest::FlyTo { goal }) => goal,
            other => panic!("unexpected request {other:?}"),
        };
        assert_eq!(goal.alt, 30.0);
    }
}
