//! Deterministic simulated drone implementing every token type.
//!
//! The world runs in a local east-north-up frame centered on `home`. It is
//! advanced one tick at a time by the runtime's clock; token requests take
//! effect at the next tick boundary.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoundingBox, Deck, Location, RelativePosition};
use crate::runtime::Clock;
use crate::token::{self, OpId, OpStatus, TokenAlert, TokenError, TokenInterface, TokenReply, TokenRequest};

pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Objects below this altitude count as on the ground for detection.
const GROUND_OBJECT_ALT: f64 = 1.0;

/// Clearance kept around Avoid boxes when routing a sweep past them.
const AVOID_MARGIN: f64 = 1.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("no simulated implementation for token type `{0}`")]
    UnknownTokenType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Enu {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl Enu {
    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Enu { east, north, up }
    }

    pub fn horizontal_distance(&self, other: &Enu) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn distance(&self, other: &Enu) -> f64 {
        self.horizontal_distance(other).hypot(self.up - other.up)
    }
}

/// Flat-earth conversion between WGS-84 degrees and local meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    origin: Location,
    cos_lat: f64,
}

impl Frame {
    pub fn new(origin: Location) -> Self {
        Frame {
            origin,
            cos_lat: origin.lat.to_radians().cos(),
        }
    }

    pub fn to_enu(&self, loc: &Location) -> Enu {
        Enu {
            east: (loc.lon - self.origin.lon).to_radians() * EARTH_RADIUS * self.cos_lat,
            north: (loc.lat - self.origin.lat).to_radians() * EARTH_RADIUS,
            up: loc.alt,
        }
    }

    pub fn to_location(&self, p: &Enu) -> Location {
        Location {
            lat: self.origin.lat + (p.north / EARTH_RADIUS).to_degrees(),
            lon: self.origin.lon + (p.east / (EARTH_RADIUS * self.cos_lat)).to_degrees(),
            alt: p.up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Field {
    pub center: Location,
    pub radius: f64,
    pub level: f64,
}

impl Field {
    fn level_at(&self, frame: &Frame, p: &Enu) -> f64 {
        let d = frame.to_enu(&self.center).distance(p);
        self.level * (1.0 - d / self.radius).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub location: Location,
}

/// A scripted object that Think cards can detect and track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScriptedObject {
    pub object_id: String,
    pub image: String,
    pub location: Location,
    #[serde(default)]
    pub visible_from: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_until: Option<f64>,
    /// Timed positions; when present they override `location`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<Waypoint>,
    /// Replays `path` every `period` seconds after its first waypoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl ScriptedObject {
    pub fn visible_at(&self, t: f64) -> bool {
        t + EPS >= self.visible_from && self.visible_until.is_none_or(|until| t <= until + EPS)
    }

    pub fn location_at(&self, t: f64) -> Location {
        let (first, last) = match (self.path.first(), self.path.last()) {
            (Some(first), Some(last)) => (first, last),
            _ => return self.location,
        };
        let mut t = t;
        if let Some(period) = self.period {
            if t > first.t {
                t = first.t + (t - first.t) % period;
            }
        }
        if t <= first.t {
            return first.location;
        }
        if t >= last.t {
            return last.location;
        }
        let i = self.path.windows(2).position(|w| t <= w[1].t).unwrap_or(0);
        let (a, b) = (&self.path[i], &self.path[i + 1]);
        let f = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
        let mix = |x: f64, y: f64| x + (y - x) * f;
        Location {
            lat: mix(a.location.lat, b.location.lat),
            lon: mix(a.location.lon, b.location.lon),
            alt: mix(a.location.alt, b.location.alt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SimConfig {
    pub home: Location,
    pub max_speed: f64,
    pub ascent_rate: f64,
    pub descent_rate: f64,
    pub tick: f64,
    pub battery_minutes: f64,
    pub critical_fraction: f64,
    pub arrival_tolerance: f64,
    pub cruise_altitude: f64,
    pub detection_range: f64,
    pub swath: f64,
    pub claw_seconds: f64,
    pub default_clip_seconds: f64,
    pub clip_seconds: BTreeMap<String, f64>,
    pub button_presses: Vec<f64>,
    pub gas_fields: Vec<Field>,
    pub humidity_fields: Vec<Field>,
    pub detections: Vec<ScriptedObject>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            home: Location::new(0.0, 0.0, 0.0),
            max_speed: 10.0,
            ascent_rate: 2.0,
            descent_rate: 2.0,
            tick: 0.1,
            battery_minutes: 20.0,
            critical_fraction: 0.10,
            arrival_tolerance: 2.0,
            cruise_altitude: 10.0,
            detection_range: 50.0,
            swath: 10.0,
            claw_seconds: 1.0,
            default_clip_seconds: 2.0,
            clip_seconds: BTreeMap::new(),
            button_presses: Vec::new(),
            gas_fields: Vec::new(),
            humidity_fields: Vec::new(),
            detections: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<SimConfig, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), SimError> {
        let positive = [
            ("tick", self.tick),
            ("maxSpeed", self.max_speed),
            ("ascentRate", self.ascent_rate),
            ("descentRate", self.descent_rate),
            ("batteryMinutes", self.battery_minutes),
            ("arrivalTolerance", self.arrival_tolerance),
            ("detectionRange", self.detection_range),
            ("swath", self.swath),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.ascent_rate > self.max_speed || self.descent_rate > self.max_speed {
            return Err(SimError::Config("vertical rates cannot exceed maxSpeed".into()));
        }
        if !(0.0..1.0).contains(&self.critical_fraction) {
            return Err(SimError::Config("criticalFraction must be in [0, 1)".into()));
        }
        if self.claw_seconds < 0.0 || self.default_clip_seconds < 0.0 || self.cruise_altitude < 0.0 {
            return Err(SimError::Config("durations and cruiseAltitude must be non-negative".into()));
        }
        for f in self.gas_fields.iter().chain(&self.humidity_fields) {
            if !(f.radius > 0.0) {
                return Err(SimError::Config("field radius must be positive".into()));
            }
        }
        for d in &self.detections {
            if d.period.is_some_and(|p| !(p > 0.0)) {
                return Err(SimError::Config(format!("object `{}`: period must be positive", d.object_id)));
            }
            if d.path.windows(2).any(|w| w[1].t < w[0].t) {
                return Err(SimError::Config(format!("object `{}`: path times must not decrease", d.object_id)));
            }
        }
        Ok(())
    }

    fn ticks(&self, seconds: f64) -> u64 {
        (seconds / self.tick - EPS).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimDroneState {
    pub time: f64,
    pub position: Location,
    pub enu: Enu,
    pub heading: f64,
    pub claw_closed: bool,
    pub recording: bool,
    pub battery_fraction: f64,
    pub airborne: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackPoint {
    pub t: f64,
    pub east: f64,
    pub north: f64,
    pub up: f64,
    pub battery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudioSpan {
    pub clip: String,
    pub looped: bool,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotoRecord {
    pub image: String,
    pub t: f64,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClawRecord {
    pub t: f64,
    pub close: bool,
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopRecord {
    pub token: String,
    pub t: f64,
}

#[derive(Debug, Clone)]
enum MotionKind {
    Goto(Enu),
    Land,
    Hover(f64),
    Path { points: Vec<Enu>, next: usize },
    Circle { center: Enu, radius: f64, alt: f64, angle: Option<f64> },
    Follow { image: String, offset: RelativePosition, floor: f64, locked: Option<String> },
}

#[derive(Debug, Clone)]
struct Motion {
    op: Option<OpId>,
    kind: MotionKind,
}

struct Audio {
    op: OpId,
    clip: String,
    started: u64,
    until: Option<u64>,
}

struct World {
    cfg: SimConfig,
    frame: Frame,
    now_ticks: u64,
    pos: Enu,
    heading: f64,
    airborne: bool,
    battery: f64,
    motion: Option<Motion>,
    forced_landing: bool,
    battery_alert: bool,
    battery_reported: bool,
    ops: BTreeMap<OpId, OpStatus>,
    next_op: OpId,
    claw_closed: bool,
    claw_op: Option<(OpId, u64, bool)>,
    recording: Option<String>,
    audio: Option<Audio>,
    gimbal_pitch: f64,
    rng: ChaCha8Rng,
    track: Vec<TrackPoint>,
    audio_log: Vec<AudioSpan>,
    photos: Vec<PhotoRecord>,
    claw_log: Vec<ClawRecord>,
    stop_log: Vec<StopRecord>,
}

impl World {
    fn new(cfg: SimConfig, seed: u64) -> Self {
        let frame = Frame::new(cfg.home);
        let pos = Enu::new(0.0, 0.0, cfg.home.alt.max(0.0));
        World {
            frame,
            now_ticks: 0,
            pos,
            heading: 0.0,
            airborne: pos.up > EPS,
            battery: 1.0,
            motion: None,
            forced_landing: false,
            battery_alert: false,
            battery_reported: false,
            ops: BTreeMap::new(),
            next_op: 1,
            claw_closed: false,
            claw_op: None,
            recording: None,
            audio: None,
            gimbal_pitch: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            track: Vec::new(),
            audio_log: Vec::new(),
            photos: Vec::new(),
            claw_log: Vec::new(),
            stop_log: Vec::new(),
            cfg,
        }
    }

    fn now(&self) -> f64 {
        self.now_ticks as f64 * self.cfg.tick
    }

    fn new_op(&mut self) -> OpId {
        let op = self.next_op;
        self.next_op += 1;
        self.ops.insert(op, OpStatus::Running);
        op
    }

    fn media_id(&mut self, prefix: &str) -> String {
        format!("{prefix}-{:016x}", self.rng.next_u64())
    }

    fn finish_op(&mut self, op: Option<OpId>, status: OpStatus) {
        if let Some(op) = op {
            if self.ops.get(&op) == Some(&OpStatus::Running) {
                self.ops.insert(op, status);
            }
        }
    }

    fn cancel_motion(&mut self, reason: &str) {
        if let Some(m) = self.motion.take() {
            self.finish_op(m.op, OpStatus::Failed(reason.into()));
        }
    }

    fn start_motion(&mut self, kind: MotionKind) -> Result<TokenReply, TokenError> {
        if self.forced_landing {
            return Err(TokenError::new("landing in progress; movement locked out"));
        }
        self.cancel_motion("preempted");
        let op = self.new_op();
        self.motion = Some(Motion { op: Some(op), kind });
        Ok(TokenReply::Started(op))
    }

    fn takeoff_altitude(&self, floor: Option<f64>) -> f64 {
        let base = if self.airborne { self.pos.up } else { self.cfg.cruise_altitude };
        base.max(floor.unwrap_or(0.0))
    }

    /// One integration step toward `target`; exact arrival on the last step.
    fn step_toward(&self, target: Enu) -> (Enu, bool) {
        let dt = self.cfg.tick;
        let target = Enu { up: target.up.max(0.0), ..target };
        let dz = (target.up - self.pos.up).clamp(-self.cfg.descent_rate * dt, self.cfg.ascent_rate * dt);
        let v_speed = dz.abs() / dt;
        let h_cap = (self.cfg.max_speed.powi(2) - v_speed.powi(2)).max(0.0).sqrt() * dt;
        let (de, dn) = (target.east - self.pos.east, target.north - self.pos.north);
        let d = de.hypot(dn);
        let (east, north) = if d <= h_cap {
            (target.east, target.north)
        } else {
            (self.pos.east + de / d * h_cap, self.pos.north + dn / d * h_cap)
        };
        let up = if (target.up - self.pos.up).abs() <= dz.abs() + EPS {
            target.up
        } else {
            self.pos.up + dz
        };
        let next = Enu { east, north, up };
        let arrived = next.east == target.east && next.north == target.north && next.up == target.up;
        (next, arrived)
    }

    fn object_position(&self, obj: &ScriptedObject) -> Enu {
        self.frame.to_enu(&obj.location_at(self.now()))
    }

    /// Nearest visible object with a matching image, optionally range-limited.
    fn nearest_object(&self, image: &str, on_ground: Option<bool>, range: Option<f64>) -> Option<(String, Enu)> {
        let t = self.now();
        self.cfg
            .detections
            .iter()
            .filter(|o| o.image == image && o.visible_at(t))
            .map(|o| (o.object_id.clone(), self.object_position(o)))
            .filter(|(_, p)| on_ground.is_none_or(|g| (p.up < GROUND_OBJECT_ALT) == g))
            .map(|(id, p)| (self.pos.horizontal_distance(&p), id, p))
            .filter(|(d, _, _)| range.is_none_or(|r| *d <= r))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
            .map(|(_, id, p)| (id, p))
    }

    fn step(&mut self) {
        self.now_ticks += 1;
        let dt = self.cfg.tick;
        let before = self.pos;
        if let Some(mut motion) = self.motion.take() {
            let mut keep = true;
            match &mut motion.kind {
                MotionKind::Goto(target) => {
                    let (next, arrived) = self.step_toward(*target);
                    self.pos = next;
                    if arrived {
                        self.finish_op(motion.op, OpStatus::Complete);
                        keep = false;
                    }
                }
                MotionKind::Land => {
                    let (next, arrived) = self.step_toward(Enu { up: 0.0, ..self.pos });
                    self.pos = next;
                    if arrived {
                        self.finish_op(motion.op, OpStatus::Complete);
                        keep = false;
                    }
                }
                MotionKind::Hover(alt) => {
                    if self.pos.up < *alt {
                        self.pos = self.step_toward(Enu { up: *alt, ..self.pos }).0;
                    }
                }
                MotionKind::Path { points, next } => {
                    if let Some(target) = points.get(*next).copied() {
                        let (p, arrived) = self.step_toward(target);
                        self.pos = p;
                        if arrived {
                            *next += 1;
                        }
                    }
                    if *next >= points.len() {
                        self.finish_op(motion.op, OpStatus::Complete);
                        keep = false;
                    }
                }
                MotionKind::Circle { center, radius, alt, angle } => {
                    let target = match angle {
                        None => {
                            let (de, dn) = (self.pos.east - center.east, self.pos.north - center.north);
                            let a = if de.hypot(dn) > EPS { dn.atan2(de) } else { 0.0 };
                            let entry = Enu::new(center.east + *radius * a.cos(), center.north + *radius * a.sin(), *alt);
                            if self.pos == entry {
                                *angle = Some(a);
                            }
                            entry
                        }
                        Some(a) => {
                            if *radius > EPS {
                                *a += self.cfg.max_speed * dt / *radius;
                            }
                            Enu::new(center.east + *radius * a.cos(), center.north + *radius * a.sin(), *alt)
                        }
                    };
                    let (p, arrived) = self.step_toward(target);
                    self.pos = p;
                    if arrived && angle.is_none() {
                        let (de, dn) = (p.east - center.east, p.north - center.north);
                        *angle = Some(if de.hypot(dn) > EPS { dn.atan2(de) } else { 0.0 });
                    }
                }
                MotionKind::Follow { image, offset, floor, locked } => {
                    let t = self.now();
                    let current = locked.as_ref().and_then(|id| {
                        self.cfg
                            .detections
                            .iter()
                            .find(|o| &o.object_id == id && o.visible_at(t))
                            .map(|o| self.object_position(o))
                    });
                    let target_obj = match current {
                        Some(p) => Some(p),
                        None => self.nearest_object(image, None, None).map(|(id, p)| {
                            *locked = Some(id);
                            p
                        }),
                    };
                    if let Some(obj) = target_obj {
                        let target = Enu::new(
                            obj.east + offset.east,
                            obj.north + offset.north,
                            (obj.up + offset.up).max(*floor),
                        );
                        self.pos = self.step_toward(target).0;
                    }
                }
            }
            if keep {
                self.motion = Some(motion);
            }
        }
        let (de, dn) = (self.pos.east - before.east, self.pos.north - before.north);
        if de.hypot(dn) > EPS {
            self.heading = de.atan2(dn).to_degrees().rem_euclid(360.0);
        }
        self.airborne = self.pos.up > EPS;
        let rate = dt / (self.cfg.battery_minutes * 60.0);
        self.battery = (self.battery - if self.airborne { rate } else { rate * 0.1 }).max(0.0);
        if self.airborne && self.battery <= self.cfg.critical_fraction && !self.battery_alert {
            self.battery_alert = true;
            self.force_landing("battery critical");
        }
        if let Some((op, until, close)) = self.claw_op {
            if self.now_ticks >= until {
                self.claw_closed = close;
                self.claw_op = None;
                self.finish_op(Some(op), OpStatus::Complete);
            }
        }
        if let Some(audio) = &self.audio {
            if audio.until.is_some_and(|until| self.now_ticks >= until) {
                self.stop_audio();
            }
        }
        self.track.push(TrackPoint {
            t: self.now(),
            east: self.pos.east,
            north: self.pos.north,
            up: self.pos.up,
            battery: self.battery,
        });
    }

    fn force_landing(&mut self, reason: &str) {
        self.cancel_motion(reason);
        self.forced_landing = true;
        if self.airborne {
            self.motion = Some(Motion {
                op: None,
                kind: MotionKind::Land,
            });
        }
    }

    fn stop_audio(&mut self) {
        if let Some(audio) = self.audio.take() {
            self.audio_log.push(AudioSpan {
                clip: audio.clip,
                looped: audio.until.is_none(),
                start: audio.started as f64 * self.cfg.tick,
                end: self.now(),
            });
            self.finish_op(Some(audio.op), OpStatus::Complete);
        }
    }

    fn sweep(&self, area: &BoundingBox, avoid: Option<&BoundingBox>, alt: f64) -> Vec<Enu> {
        let sw = self.frame.to_enu(&Location::new(area.south, area.west, 0.0));
        let ne = self.frame.to_enu(&Location::new(area.north, area.east, 0.0));
        let avoid = avoid.map(|b| {
            let a = self.frame.to_enu(&Location::new(b.south, b.west, 0.0));
            let c = self.frame.to_enu(&Location::new(b.north, b.east, 0.0));
            Rect {
                west: a.east,
                south: a.north,
                east: c.east,
                north: c.north,
            }
        });
        let cells = coverage_cells(sw.east, sw.north, ne.east, ne.north, self.cfg.swath, avoid.as_ref());
        let mut points = Vec::new();
        let mut from = self.pos;
        for c in cells {
            let to = Enu::new(c.0, c.1, alt);
            if let Some(rect) = &avoid {
                for (e, n) in detour(rect.expand(AVOID_MARGIN), (from.east, from.north), (to.east, to.north)) {
                    points.push(Enu::new(e, n, alt));
                }
            }
            points.push(to);
            from = to;
        }
        points
    }

    fn movement(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
        match request {
            TokenRequest::FlyTo { goal } => {
                let target = self.frame.to_enu(&goal);
                self.start_motion(MotionKind::Goto(target))
            }
            TokenRequest::Land => self.start_motion(MotionKind::Land),
            TokenRequest::Hover { min_altitude } => {
                let alt = self.takeoff_altitude(min_altitude);
                self.start_motion(MotionKind::Hover(alt))
            }
            TokenRequest::HoverToAltitude { altitude } => {
                let target = Enu { up: altitude, ..self.pos };
                self.start_motion(MotionKind::Goto(target))
            }
            TokenRequest::ReturnHome { min_altitude } => {
                let alt = self.takeoff_altitude(min_altitude);
                self.start_motion(MotionKind::Goto(Enu::new(0.0, 0.0, alt)))
            }
            TokenRequest::CoverPath { area, avoid, min_altitude } => {
                let alt = self.cfg.cruise_altitude.max(min_altitude.unwrap_or(0.0));
                let points = self.sweep(&area, avoid.as_ref(), alt);
                self.start_motion(MotionKind::Path { points, next: 0 })
            }
            TokenRequest::Circle { center, radius, min_altitude } => {
                let c = self.frame.to_enu(&center);
                let mut alt = c.up.max(min_altitude.unwrap_or(0.0));
                if alt <= EPS {
                    alt = self.cfg.cruise_altitude;
                }
                self.start_motion(MotionKind::Circle {
                    center: c,
                    radius: radius.max(0.0),
                    alt,
                    angle: None,
                })
            }
            TokenRequest::FollowTarget { image, offset, min_altitude } => {
                let floor = min_altitude.unwrap_or(self.cfg.cruise_altitude);
                self.start_motion(MotionKind::Follow {
                    image,
                    offset,
                    floor,
                    locked: None,
                })
            }
            TokenRequest::Hold => {
                if !self.forced_landing {
                    self.cancel_motion("held");
                }
                Ok(TokenReply::Done)
            }
            TokenRequest::FlightState => Ok(TokenReply::Flight {
                position: self.frame.to_location(&self.pos),
                airborne: self.airborne,
                battery: self.battery,
            }),
            TokenRequest::WithinTolerance { target } => {
                let d = self.frame.to_enu(&target).horizontal_distance(&self.pos);
                Ok(TokenReply::Flag(d <= self.cfg.arrival_tolerance))
            }
            other => Err(unsupported(token::MOVEMENT, &other)),
        }
    }

    fn camera(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
        match request {
            TokenRequest::TakePhoto => {
                let image = self.media_id("photo");
                let location = self.frame.to_location(&self.pos);
                self.photos.push(PhotoRecord {
                    image: image.clone(),
                    t: self.now(),
                    location,
                });
                Ok(TokenReply::Photo { image, location })
            }
            TokenRequest::StartVideo => {
                if self.recording.is_none() {
                    self.recording = Some(self.media_id("video"));
                }
                Ok(TokenReply::Done)
            }
            TokenRequest::StopVideo => Ok(match self.recording.take() {
                Some(id) => TokenReply::Video(id),
                None => TokenReply::Done,
            }),
            TokenRequest::Detect { image, on_ground } => Ok(TokenReply::Detection(
                self.nearest_object(&image, Some(on_ground), Some(self.cfg.detection_range))
                    .map(|(_, p)| self.frame.to_location(&p)),
            )),
            TokenRequest::Track { image } => Ok(TokenReply::Detection(
                self.nearest_object(&image, Some(true), Some(self.cfg.detection_range))
                    .map(|(_, p)| self.frame.to_location(&p)),
            )),
            other => Err(unsupported(token::CAMERA, &other)),
        }
    }

    fn claw(&mut self, close: bool) -> TokenReply {
        let target_now = match self.claw_op {
            Some((_, _, pending)) => pending,
            None => self.claw_closed,
        };
        if target_now == close {
            self.claw_log.push(ClawRecord {
                t: self.now(),
                close,
                noop: true,
            });
            return TokenReply::Done;
        }
        if let Some((op, _, _)) = self.claw_op.take() {
            self.finish_op(Some(op), OpStatus::Failed("preempted".into()));
        }
        let op = self.new_op();
        let until = self.now_ticks + self.cfg.ticks(self.cfg.claw_seconds);
        self.claw_log.push(ClawRecord {
            t: self.now(),
            close,
            noop: false,
        });
        if until == self.now_ticks {
            self.claw_closed = close;
            self.finish_op(Some(op), OpStatus::Complete);
        } else {
            self.claw_op = Some((op, until, close));
        }
        TokenReply::Started(op)
    }

    fn speaker(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
        match request {
            TokenRequest::Play { clip } => {
                self.stop_audio();
                let seconds = self.cfg.clip_seconds.get(&clip).copied().unwrap_or(self.cfg.default_clip_seconds);
                let op = self.new_op();
                self.audio = Some(Audio {
                    op,
                    clip,
                    started: self.now_ticks,
                    until: Some(self.now_ticks + self.cfg.ticks(seconds)),
                });
                Ok(TokenReply::Started(op))
            }
            TokenRequest::PlayLoop { clip } => {
                self.stop_audio();
                let op = self.new_op();
                self.audio = Some(Audio {
                    op,
                    clip,
                    started: self.now_ticks,
                    until: None,
                });
                Ok(TokenReply::Started(op))
            }
            TokenRequest::StopAudio => {
                self.stop_audio();
                Ok(TokenReply::Done)
            }
            other => Err(unsupported(token::SPEAKER, &other)),
        }
    }

    fn request(&mut self, kind: &str, request: TokenRequest) -> Result<TokenReply, TokenError> {
        match kind {
            token::MOVEMENT => self.movement(request),
            token::CAMERA => self.camera(request),
            token::GIMBAL => match request {
                TokenRequest::PointGimbal { pitch_deg } => {
                    self.gimbal_pitch = pitch_deg.clamp(-90.0, 30.0);
                    Ok(TokenReply::Done)
                }
                other => Err(unsupported(kind, &other)),
            },
            token::CLAW => match request {
                TokenRequest::OpenClaw => Ok(self.claw(false)),
                TokenRequest::CloseClaw => Ok(self.claw(true)),
                other => Err(unsupported(kind, &other)),
            },
            token::SPEAKER => self.speaker(request),
            token::GAS_SENSOR | token::HUMIDITY_SENSOR => match request {
                TokenRequest::ReadLevel => {
                    let fields = if kind == token::GAS_SENSOR { &self.cfg.gas_fields } else { &self.cfg.humidity_fields };
                    let level = fields.iter().map(|f| f.level_at(&self.frame, &self.pos)).fold(0.0, f64::max);
                    Ok(TokenReply::Level(level))
                }
                other => Err(unsupported(kind, &other)),
            },
            token::BUTTON => match request {
                TokenRequest::PressedSince { since } => {
                    let now = self.now();
                    let pressed = self.cfg.button_presses.iter().any(|&p| p + EPS >= since && p <= now + EPS);
                    Ok(TokenReply::Flag(pressed))
                }
                other => Err(unsupported(kind, &other)),
            },
            _ => Err(TokenError::new(format!("unknown token type `{kind}`"))),
        }
    }

    fn emergency_stop(&mut self, id: &str, kind: &str) {
        self.stop_log.push(StopRecord {
            token: id.to_string(),
            t: self.now(),
        });
        match kind {
            token::MOVEMENT => self.force_landing("emergency stop"),
            token::CAMERA => self.recording = None,
            token::SPEAKER => self.stop_audio(),
            token::CLAW => {
                if let Some((op, _, _)) = self.claw_op.take() {
                    self.finish_op(Some(op), OpStatus::Failed("emergency stop".into()));
                }
            }
            _ => {}
        }
    }
}

fn unsupported(kind: &str, request: &TokenRequest) -> TokenError {
    TokenError::new(format!("{kind} token does not support `{}`", request.name()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    west: f64,
    south: f64,
    east: f64,
    north: f64,
}

impl Rect {
    fn expand(&self, m: f64) -> Rect {
        Rect {
            west: self.west - m,
            south: self.south - m,
            east: self.east + m,
            north: self.north + m,
        }
    }

    fn contains(&self, e: f64, n: f64) -> bool {
        e >= self.west && e <= self.east && n >= self.south && n <= self.north
    }

    fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.west, self.south),
            (self.east, self.south),
            (self.east, self.north),
            (self.west, self.north),
        ]
    }

    /// True if the open segment a-b passes through the rectangle's interior.
    fn crosses(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let d = (b.0 - a.0, b.1 - a.1);
        for (p, q) in [
            (-d.0, a.0 - self.west),
            (d.0, self.east - a.0),
            (-d.1, a.1 - self.south),
            (d.1, self.north - a.1),
        ] {
            if p.abs() < EPS {
                if q <= EPS {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        t1 - t0 > EPS
    }
}

/// Centers of swath-sized cells in boustrophedon order, skipping avoided ones.
fn coverage_cells(west: f64, south: f64, east: f64, north: f64, swath: f64, avoid: Option<&Rect>) -> Vec<(f64, f64)> {
    let (w, h) = ((east - west).max(0.0), (north - south).max(0.0));
    let cols = ((w / swath - EPS).ceil() as usize).max(1);
    let rows = ((h / swath - EPS).ceil() as usize).max(1);
    let mut cells = Vec::new();
    for r in 0..rows {
        let n = (south + swath * (r as f64 + 0.5)).min(north);
        let mut row: Vec<(f64, f64)> = (0..cols)
            .map(|c| ((west + swath * (c as f64 + 0.5)).min(east), n))
            .filter(|&(e, n)| avoid.is_none_or(|a| !a.contains(e, n)))
            .collect();
        if r % 2 == 1 {
            row.reverse();
        }
        cells.extend(row);
    }
    cells
}

/// Intermediate corners that route a-b around `rect`; empty if no crossing.
fn detour(rect: Rect, a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    if !rect.crosses(a, b) {
        return Vec::new();
    }
    let corners = rect.corners();
    let len = |pts: &[(f64, f64)]| -> f64 {
        pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
    };
    let clear = |pts: &[(f64, f64)]| pts.windows(2).all(|w| !rect.crosses(w[0], w[1]));
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    let mut consider = |via: Vec<(f64, f64)>| {
        let mut pts = vec![a];
        pts.extend(&via);
        pts.push(b);
        if clear(&pts) {
            let l = len(&pts);
            if best.as_ref().is_none_or(|(bl, _)| l < *bl - EPS) {
                best = Some((l, via));
            }
        }
    };
    for i in 0..4 {
        consider(vec![corners[i]]);
        consider(vec![corners[i], corners[(i + 1) % 4]]);
        consider(vec![corners[(i + 1) % 4], corners[i]]);
    }
    for i in 0..4 {
        consider(vec![corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]]);
        consider(vec![corners[(i + 2) % 4], corners[(i + 1) % 4], corners[i]]);
    }
    best.map(|(_, via)| via).unwrap_or_default()
}

fn lock(world: &Mutex<World>) -> MutexGuard<'_, World> {
    world.lock().unwrap_or_else(|e| e.into_inner())
}

/// Shared handle to one simulated world.
#[derive(Clone)]
pub struct SimWorld {
    world: Arc<Mutex<World>>,
}

impl SimWorld {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        cfg.check()?;
        Ok(SimWorld {
            world: Arc::new(Mutex::new(World::new(cfg, seed))),
        })
    }

    pub fn config(&self) -> SimConfig {
        lock(&self.world).cfg.clone()
    }

    pub fn frame(&self) -> Frame {
        lock(&self.world).frame
    }

    pub fn token(&self, id: &str, token_type: &str) -> Result<Box<dyn TokenInterface>, SimError> {
        if !token::TOKEN_TYPES.contains(&token_type) {
            return Err(SimError::UnknownTokenType(token_type.into()));
        }
        Ok(Box::new(SimToken {
            id: id.into(),
            kind: token_type.into(),
            world: self.world.clone(),
        }))
    }

    /// One simulated token per declared deck token.
    pub fn tokens_for(&self, deck: &Deck) -> Result<BTreeMap<String, Box<dyn TokenInterface>>, SimError> {
        deck.tokens
            .iter()
            .map(|t| Ok((t.id.clone(), self.token(&t.id, &t.token_type)?)))
            .collect()
    }

    pub fn clock(&self) -> SimClock {
        SimClock { world: self.clone() }
    }

    /// Advances the world by `ticks` ticks.
    pub fn advance(&self, ticks: u64) {
        let mut w = lock(&self.world);
        for _ in 0..ticks {
            w.step();
        }
    }

    pub fn state(&self) -> SimDroneState {
        let w = lock(&self.world);
        SimDroneState {
            time: w.now(),
            position: w.frame.to_location(&w.pos),
            enu: w.pos,
            heading: w.heading,
            claw_closed: w.claw_closed,
            recording: w.recording.is_some(),
            battery_fraction: w.battery,
            airborne: w.airborne,
        }
    }

    pub fn track(&self) -> Vec<TrackPoint> {
        lock(&self.world).track.clone()
    }

    pub fn audio_log(&self) -> Vec<AudioSpan> {
        let w = lock(&self.world);
        let mut log = w.audio_log.clone();
        if let Some(a) = &w.audio {
            log.push(AudioSpan {
                clip: a.clip.clone(),
                looped: a.until.is_none(),
                start: a.started as f64 * w.cfg.tick,
                end: w.now(),
            });
        }
        log
    }

    pub fn photos(&self) -> Vec<PhotoRecord> {
        lock(&self.world).photos.clone()
    }

    pub fn claw_log(&self) -> Vec<ClawRecord> {
        lock(&self.world).claw_log.clone()
    }

    pub fn stop_log(&self) -> Vec<StopRecord> {
        lock(&self.world).stop_log.clone()
    }

    /// Sensor level at an arbitrary position, for inspection and tests.
    pub fn sensor_level(&self, token_type: &str, at: &Location) -> f64 {
        let w = lock(&self.world);
        let p = w.frame.to_enu(at);
        let fields = if token_type == token::GAS_SENSOR { &w.cfg.gas_fields } else { &w.cfg.humidity_fields };
        fields.iter().map(|f| f.level_at(&w.frame, &p)).fold(0.0, f64::max)
    }

    /// The sweep waypoints a coverPath request would fly from the current position.
    pub fn sweep_plan(&self, area: &BoundingBox, avoid: Option<&BoundingBox>) -> Vec<Enu> {
        let w = lock(&self.world);
        let alt = w.cfg.cruise_altitude;
        w.sweep(area, avoid, alt)
    }
}

pub struct SimClock {
    world: SimWorld,
}

impl Clock for SimClock {
    fn tick(&self) -> f64 {
        lock(&self.world.world).cfg.tick
    }

    fn advance(&mut self) {
        self.world.advance(1);
    }
}

struct SimToken {
    id: String,
    kind: String,
    world: Arc<Mutex<World>>,
}

impl TokenInterface for SimToken {
    fn token_type(&self) -> &str {
        &self.kind
    }

    fn request(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
        lock(&self.world).request(&self.kind, request)
    }

    fn status(&mut self, op: OpId) -> Result<OpStatus, TokenError> {
        lock(&self.world)
            .ops
            .get(&op)
            .cloned()
            .ok_or_else(|| TokenError::new(format!("unknown operation {op}")))
    }

    fn alert(&mut self, _now: f64) -> Option<TokenAlert> {
        if self.kind != token::MOVEMENT {
            return None;
        }
        let mut w = lock(&self.world);
        if w.battery_alert && !w.battery_reported {
            w.battery_reported = true;
            return Some(TokenAlert::BatteryCritical);
        }
        None
    }

    fn emergency_stop(&mut self) -> Result<(), TokenError> {
        lock(&self.world).emergency_stop(&self.id, &self.kind);
        Ok(())
    }
}

/// Wraps a token and injects a failure on a named operation or at a time.
pub struct FaultyToken {
    inner: Box<dyn TokenInterface>,
    fail_on: Option<String>,
    fail_at: Option<f64>,
    reason: String,
    fired: bool,
}

impl FaultyToken {
    pub fn on_request(inner: Box<dyn TokenInterface>, operation: &str, reason: &str) -> Self {
        FaultyToken {
            inner,
            fail_on: Some(operation.into()),
            fail_at: None,
            reason: reason.into(),
            fired: false,
        }
    }

    pub fn at_time(inner: Box<dyn TokenInterface>, t: f64, reason: &str) -> Self {
        FaultyToken {
            inner,
            fail_on: None,
            fail_at: Some(t),
            reason: reason.into(),
            fired: false,
        }
    }
}

impl TokenInterface for FaultyToken {
    fn token_type(&self) -> &str {
        self.inner.token_type()
    }

    fn request(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError> {
        if self.fail_on.as_deref() == Some(request.name()) {
            self.fired = true;
            return Err(TokenError::new(self.reason.clone()));
        }
        self.inner.request(request)
    }

    fn status(&mut self, op: OpId) -> Result<OpStatus, TokenError> {
        self.inner.status(op)
    }

    fn alert(&mut self, now: f64) -> Option<TokenAlert> {
        if let Some(alert) = self.inner.alert(now) {
            return Some(alert);
        }
        if !self.fired && self.fail_at.is_some_and(|t| now + EPS >= t) {
            self.fired = true;
            return Some(TokenAlert::Fault(self.reason.clone()));
        }
        None
    }

    fn emergency_stop(&mut self) -> Result<(), TokenError> {
        self.inner.emergency_stop()
    }
}

#[derive(Debug, Error)]
pub enum SimRunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Runtime(#[from] crate::runtime::RuntimeError),
}

/// Runs a deck against a fresh world built from `cfg`. Returns the trace and
/// the world for inspection.
pub fn simulate(
    deck: &Deck,
    catalog: &crate::catalog::Catalog,
    cfg: SimConfig,
    seed: u64,
    opts: &crate::runtime::RunOptions,
    stop: &crate::runtime::StopHandle,
    sink: &mut dyn crate::runtime::EventSink,
) -> Result<(crate::runtime::Trace, SimWorld), SimRunError> {
    let world = SimWorld::new(cfg, seed)?;
    let mut tokens = world.tokens_for(deck)?;
    let mut clock = world.clock();
    let trace = crate::runtime::execute_deck(deck, catalog, &mut tokens, &mut clock, stop, opts, sink)?;
    Ok((trace, world))
}
