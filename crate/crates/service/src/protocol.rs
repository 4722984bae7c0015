//! Wire messages of the `/session` endpoint.
//!
//! Every frame is a JSON text object `{"type", "tick", "payload"}`. Server
//! frames carry a tick that strictly increases within a session; the tick
//! of a client frame is optional and ignored.

use std::collections::BTreeMap;

use blendlab::arbitration::Method;
use blendlab::interaction::InteractionParams;
use blendlab::simulator::{Metrics, ModeSummary, Scenario};
use blendlab::trajectory::Point2;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

/// Protocol revision, bumped on incompatible message changes.
pub const PROTOCOL_VERSION: u32 = 1;

pub const MESSAGE_TYPES: [&str; 6] = ["hello", "config", "input", "state", "metrics", "error"];

/// Server → client frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerMessage {
    pub tick: u64,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerBody {
    Hello(Box<HelloPayload>),
    State(Box<StatePayload>),
    Metrics(Box<MetricsPayload>),
    Error(ErrorPayload),
}

impl ServerBody {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerBody::Hello(_) => "hello",
            ServerBody::State(_) => "state",
            ServerBody::Metrics(_) => "metrics",
            ServerBody::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HelloPayload {
    /// Server package version.
    pub version: String,
    pub protocol: u32,
    pub scenario: Scenario,
    pub method: Method,
    pub methods: Vec<String>,
    pub tick_ms: u64,
    /// Speed in m/s that a unit joystick deflection commands.
    pub v_max: f64,
    pub params: InteractionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatePayload {
    pub step: usize,
    pub time: f64,
    pub method: Method,
    pub robot: Point2,
    pub goal: Point2,
    pub crowd: Vec<Point2>,
    /// Velocity executed this tick.
    pub command: Point2,
    /// Operator velocity fed to the models this tick (after scaling/decay).
    pub operator_input: Option<Point2>,
    /// Shared-control trajectory chosen this tick.
    pub trajectory: Option<Vec<Point2>>,
    pub operator_mean: Option<Vec<Point2>>,
    pub operator_modes: Vec<ModeSummary>,
    pub autonomy_modes: Vec<ModeSummary>,
    /// Arbitration diagnostics; non-finite values appear as strings.
    #[serde(serialize_with = "blendlab::serde_float::map::serialize")]
    pub diagnostics: BTreeMap<String, f64>,
    pub error: Option<String>,
    pub done: bool,
    pub reached_goal: bool,
    pub arbitration_ms: f64,
    pub search_budget: usize,
    pub budget_downgraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsPayload {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a JSON object with a string `type`.
    Malformed,
    UnknownType,
    InvalidInput,
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

/// Client → server frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello(ClientHello),
    Config(ConfigPayload),
    Input(InputPayload),
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientHello {
    #[serde(default)]
    pub client: Option<String>,
}

/// Live configuration changes; absent fields are left unchanged.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPayload {
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// `null` returns to the variance-derived gain.
    #[serde(default, deserialize_with = "present")]
    pub k_h: Option<Option<f64>>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub search_budget: Option<usize>,
    /// Restart the episode from the scenario's initial state.
    #[serde(default)]
    pub reset: bool,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

/// Joystick deflection with magnitude at most 1.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPayload {
    pub x: f64,
    pub y: f64,
}

/// Why a client frame was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
}

impl Rejection {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, Rejection> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Rejection::new(ErrorCode::Malformed, format!("invalid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Rejection::new(ErrorCode::Malformed, "frame must be a JSON object"));
        };
        let kind = match obj.get("type") {
            Some(Value::String(s)) => s.clone(),
            _ => return Err(Rejection::new(ErrorCode::Malformed, "frame needs a string \"type\"")),
        };
        if let Some(t) = obj.get("tick") {
            if !t.is_u64() {
                return Err(Rejection::new(
                    ErrorCode::Malformed,
                    "\"tick\" must be a non-negative integer",
                ));
            }
        }
        if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "type" | "tick" | "payload")) {
            return Err(Rejection::new(ErrorCode::Malformed, format!("unexpected field {k:?}")));
        }
        let payload = obj.remove("payload").unwrap_or(Value::Object(Default::default()));
        match kind.as_str() {
            "hello" => serde_json::from_value(payload)
                .map(ClientMessage::Hello)
                .map_err(|e| Rejection::new(ErrorCode::Malformed, format!("hello: {e}"))),
            "config" => serde_json::from_value(payload)
                .map(ClientMessage::Config)
                .map_err(|e| Rejection::new(ErrorCode::InvalidConfig, format!("config: {e}"))),
            "input" => {
                let input: InputPayload = serde_json::from_value(payload)
                    .map_err(|e| Rejection::new(ErrorCode::InvalidInput, format!("input: {e}")))?;
                let magnitude = input.x.hypot(input.y);
                if magnitude.is_nan() || magnitude > 1.0 + 1e-9 {
                    return Err(Rejection::new(
                        ErrorCode::InvalidInput,
                        format!("input magnitude {magnitude} exceeds 1"),
                    ));
                }
                Ok(ClientMessage::Input(input))
            }
            other if MESSAGE_TYPES.contains(&other) => Err(Rejection::new(
                ErrorCode::UnknownType,
                format!("{other:?} messages are sent by the server only"),
            )),
            other => Err(Rejection::new(
                ErrorCode::UnknownType,
                format!("unknown message type {other:?}; clients send hello, config or input"),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_three_client_types() {
        assert_eq!(
            ClientMessage::parse(r#"{"type":"input","tick":3,"payload":{"x":0.6,"y":-0.8}}"#).unwrap(),
            ClientMessage::Input(InputPayload { x: 0.6, y: -0.8 })
        );
        assert_eq!(
            ClientMessage::parse(r#"{"type":"hello"}"#).unwrap(),
            ClientMessage::Hello(ClientHello::default())
        );
        match ClientMessage::parse(r#"{"type":"config","payload":{"method":"lb","k_h":null}}"#).unwrap() {
            ClientMessage::Config(c) => {
                assert_eq!(c.method.as_deref(), Some("lb"));
                assert_eq!(c.k_h, Some(None));
                assert_eq!(c.gamma, None);
            }
            other => panic!("{other:?}"),
        }
        match ClientMessage::parse(r#"{"type":"config","payload":{}}"#).unwrap() {
            ClientMessage::Config(c) => assert_eq!(c.k_h, None),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejections_carry_codes() {
        let code = |t: &str| ClientMessage::parse(t).unwrap_err().code;
        assert_eq!(code("not json"), ErrorCode::Malformed);
        assert_eq!(code("[1]"), ErrorCode::Malformed);
        assert_eq!(code(r#"{"payload":{}}"#), ErrorCode::Malformed);
        assert_eq!(
            code(r#"{"type":"input","tick":-1,"payload":{"x":0,"y":0}}"#),
            ErrorCode::Malformed
        );
        assert_eq!(
            code(r#"{"type":"input","extra":1,"payload":{"x":0,"y":0}}"#),
            ErrorCode::Malformed
        );
        assert_eq!(code(r#"{"type":"warp"}"#), ErrorCode::UnknownType);
        assert_eq!(code(r#"{"type":"state"}"#), ErrorCode::UnknownType);
        assert_eq!(
            code(r#"{"type":"input","payload":{"x":1,"y":1}}"#),
            ErrorCode::InvalidInput
        );
        assert_eq!(code(r#"{"type":"input","payload":{"x":0.1}}"#), ErrorCode::InvalidInput);
        assert_eq!(
            code(r#"{"type":"config","payload":{"speed":3}}"#),
            ErrorCode::InvalidConfig
        );
    }

    #[test]
    fn server_frames_are_flat_objects() {
        let m = ServerMessage {
            tick: 7,
            body: ServerBody::Error(ErrorPayload {
                code: ErrorCode::UnknownType,
                message: "x".into(),
            }),
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["tick"], 7);
        assert_eq!(v["payload"]["code"], "unknown_type");
    }
}
