//! The generic contract between Action card behaviors and hardware.
//!
//! A token implementation (the simulator, or a real drone layer) exposes one
//! capability: movement, camera, gimbal, claw, speaker, a sensor or a button.
//! Behaviors talk to it only through [`TokenRequest`]s. Long-running
//! operations return an [`OpId`] that is polled with
//! [`TokenInterface::status`].

use thiserror::Error;

use crate::model::{BoundingBox, Location, RelativePosition};

pub type OpId = u64;

pub const MOVEMENT: &str = "movement";
pub const CAMERA: &str = "camera";
pub const GIMBAL: &str = "gimbal";
pub const CLAW: &str = "claw";
pub const SPEAKER: &str = "speaker";
pub const GAS_SENSOR: &str = "gas-sensor";
pub const HUMIDITY_SENSOR: &str = "humidity-sensor";
pub const BUTTON: &str = "button";

pub const TOKEN_TYPES: [&str; 8] = [
    MOVEMENT,
    CAMERA,
    GIMBAL,
    CLAW,
    SPEAKER,
    GAS_SENSOR,
    HUMIDITY_SENSOR,
    BUTTON,
];

#[derive(Debug, Clone, PartialEq)]
pub enum TokenRequest {
    // movement
    FlyTo {
        goal: Location,
    },
    Land,
    Hover {
        min_altitude: Option<f64>,
    },
    HoverToAltitude {
        altitude: f64,
    },
    ReturnHome {
        min_altitude: Option<f64>,
    },
    CoverPath {
        area: BoundingBox,
        avoid: Option<BoundingBox>,
        min_altitude: Option<f64>,
    },
    FollowTarget {
        image: String,
        offset: RelativePosition,
        min_altitude: Option<f64>,
    },
    Circle {
        center: Location,
        radius: f64,
        min_altitude: Option<f64>,
    },
    /// Safe idle: stop the current maneuver and hold position.
    Hold,
    FlightState,
    /// Horizontal distance to `target` within the arrival tolerance.
    WithinTolerance {
        target: Location,
    },
    // camera
    TakePhoto,
    StartVideo,
    StopVideo,
    Detect {
        image: String,
        on_ground: bool,
    },
    Track {
        image: String,
    },
    // gimbal
    PointGimbal {
        pitch_deg: f64,
    },
    // claw
    OpenClaw,
    CloseClaw,
    // speaker
    Play {
        clip: String,
    },
    PlayLoop {
        clip: String,
    },
    StopAudio,
    // gas-sensor, humidity-sensor
    ReadLevel,
    // button
    PressedSince {
        since: f64,
    },
}

impl TokenRequest {
    /// Short operation name, as used in behavior contracts.
    pub fn name(&self) -> &'static str {
        match self {
            TokenRequest::FlyTo { .. } => "flyTo",
            TokenRequest::Land => "land",
            TokenRequest::Hover { .. } => "hover",
            TokenRequest::HoverToAltitude { .. } => "hoverToAltitude",
            TokenRequest::ReturnHome { .. } => "returnHome",
            TokenRequest::CoverPath { .. } => "coverPath",
            TokenRequest::FollowTarget { .. } => "followTarget",
            TokenRequest::Circle { .. } => "circle",
            TokenRequest::Hold => "hold",
            TokenRequest::FlightState => "flightState",
            TokenRequest::WithinTolerance { .. } => "withinTolerance",
            TokenRequest::TakePhoto => "takePhoto",
            TokenRequest::StartVideo => "startVideo",
            TokenRequest::StopVideo => "stopVideo",
            TokenRequest::Detect { .. } => "detect",
            TokenRequest::Track { .. } => "track",
            TokenRequest::PointGimbal { .. } => "point",
            TokenRequest::OpenClaw => "open",
            TokenRequest::CloseClaw => "close",
            TokenRequest::Play { .. } => "play",
            TokenRequest::PlayLoop { .. } => "playLoop",
            TokenRequest::StopAudio => "stopAudio",
            TokenRequest::ReadLevel => "readLevel",
            TokenRequest::PressedSince { .. } => "awaitPress",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenReply {
    /// A long-running operation began.
    Started(OpId),
    Done,
    Level(f64),
    Flag(bool),
    Detection(Option<Location>),
    Photo { image: String, location: Location },
    Video(String),
    Flight {
        position: Location,
        airborne: bool,
        battery: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpStatus {
    Running,
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenAlert {
    /// The battery hit its critical level and the drone is landing itself.
    BatteryCritical,
    Fault(String),
}

/// Failure reported by a token implementation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TokenError(pub String);

impl TokenError {
    pub fn new(reason: impl Into<String>) -> Self {
        TokenError(reason.into())
    }
}

pub trait TokenInterface: Send {
    fn token_type(&self) -> &str;

    fn request(&mut self, request: TokenRequest) -> Result<TokenReply, TokenError>;

    fn status(&mut self, op: OpId) -> Result<OpStatus, TokenError>;

    /// Asynchronous conditions raised by the hardware, polled once per tick.
    fn alert(&mut self, _now: f64) -> Option<TokenAlert> {
        None
    }

    /// Recover from an emergency. Movement tokens start a landing.
    fn emergency_stop(&mut self) -> Result<(), TokenError>;
}
