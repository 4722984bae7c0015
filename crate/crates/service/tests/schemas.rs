//! Every frame the service emits conforms to the published JSON schemas, and
//! the schemas agree with the server's own parser on client frames.

use std::path::PathBuf;
use std::sync::Arc;

use blendlab::arbitration::{ArbitratorRegistry, Method};
use blendlab::simulator::{scenario_crossing, scenario_open, EpisodeConfig, Scenario};
use blendlab_service::{ClientMessage, ServerMessage, Session, MESSAGE_TYPES};
use jsonschema::{Draft, JSONSchema};
use serde_json::{json, Value};

fn schema(kind: &str) -> JSONSchema {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../docs/schemas/{kind}.schema.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let value: &'static Value = Box::leak(Box::new(serde_json::from_str(&text).unwrap()));
    JSONSchema::options()
        .with_draft(Draft::Draft7)
        .compile(value)
        .unwrap_or_else(|e| panic!("{kind}: {e}"))
}

fn errors(schema: &JSONSchema, v: &Value) -> Vec<String> {
    match schema.validate(v) {
        Ok(()) => Vec::new(),
        Err(es) => es.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    }
}

fn assert_valid(frame: &ServerMessage) {
    let v = serde_json::to_value(frame).unwrap();
    let kind = v["type"].as_str().unwrap().to_string();
    let errs = errors(&schema(&kind), &v);
    assert!(errs.is_empty(), "{kind} frame invalid: {errs:?}\n{v}");
}

fn session(scenario: &Scenario, method: Method) -> Session {
    Session::new(
        scenario,
        EpisodeConfig::new(method),
        10_000,
        Arc::new(ArbitratorRegistry::standard()),
    )
    .unwrap()
}

#[test]
fn all_six_schemas_compile_and_pin_their_type() {
    for kind in MESSAGE_TYPES {
        let s = schema(kind);
        let wrong = json!({"type": "nope", "tick": 0, "payload": {}});
        assert!(!s.is_valid(&wrong), "{kind} accepts any type");
    }
}

#[test]
fn server_frames_of_a_whole_episode_validate() {
    for method in Method::ALL {
        let mut s = session(&scenario_open(), method);
        assert_valid(&s.hello());
        let mut kinds = Vec::new();
        for _ in 0..300 {
            s.receive(r#"{"type":"input","payload":{"x":0.5,"y":0.1}}"#);
            let out = s.tick().unwrap();
            for m in &out {
                assert_valid(m);
                kinds.push(m.body.kind());
            }
            if s.is_done() {
                break;
            }
        }
        assert_eq!(kinds.last(), Some(&"metrics"), "{method:?}");
    }
}

#[test]
fn non_finite_values_validate() {
    // no obstacles and no crowd: the minimum clearance is infinite
    let mut s = session(&scenario_open(), Method::Lb);
    let mut metrics = None;
    while metrics.is_none() {
        for m in s.tick().unwrap() {
            if m.body.kind() == "metrics" {
                metrics = Some(m);
            }
        }
    }
    let m = metrics.unwrap();
    let v = serde_json::to_value(&m).unwrap();
    assert_eq!(v["payload"]["metrics"]["min_clearance"], "inf");
    assert_valid(&m);
}

#[test]
fn states_with_a_crowd_validate() {
    let mut s = session(&scenario_crossing(), Method::Ctb);
    for _ in 0..3 {
        s.receive(r#"{"type":"input","payload":{"x":0.4,"y":0.0}}"#);
        for m in s.tick().unwrap() {
            assert_valid(&m);
        }
    }
}

#[test]
fn error_frames_validate() {
    let mut s = session(&scenario_open(), Method::Psc);
    for bad in [
        "{",
        r#"{"type":"warp"}"#,
        r#"{"type":"input","payload":{"x":2,"y":0}}"#,
        r#"{"type":"config","payload":{"method":"nope"}}"#,
    ] {
        let out = s.receive(bad);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].body.kind(), "error");
        assert_valid(&out[0]);
    }
}

#[test]
fn client_schemas_agree_with_the_parser() {
    let cases = [
        ("hello", json!({"type": "hello"}), true),
        (
            "hello",
            json!({"type": "hello", "tick": 0, "payload": {"client": "ui"}}),
            true,
        ),
        ("hello", json!({"type": "hello", "payload": {"name": "ui"}}), false),
        (
            "config",
            json!({"type": "config", "payload": {"method": "ltb", "gamma": 0.3}}),
            true,
        ),
        (
            "config",
            json!({"type": "config", "payload": {"k_h": null, "reset": true}}),
            true,
        ),
        (
            "config",
            json!({"type": "config", "payload": {"n_samples": 20, "search_budget": 400}}),
            true,
        ),
        ("config", json!({"type": "config", "payload": {"speed": 2}}), false),
        ("config", json!({"type": "config", "payload": {"gamma": "big"}}), false),
        (
            "input",
            json!({"type": "input", "tick": 4, "payload": {"x": 0.6, "y": -0.8}}),
            true,
        ),
        ("input", json!({"type": "input", "payload": {"x": 0.6}}), false),
        ("input", json!({"type": "input", "payload": {"x": 1.5, "y": 0}}), false),
        (
            "input",
            json!({"type": "input", "payload": {"x": 0, "y": 0}, "extra": true}),
            false,
        ),
        (
            "input",
            json!({"type": "input", "tick": -1, "payload": {"x": 0, "y": 0}}),
            false,
        ),
    ];
    for (kind, frame, ok) in cases {
        assert_eq!(schema(kind).is_valid(&frame), ok, "schema on {frame}");
        assert_eq!(
            ClientMessage::parse(&frame.to_string()).is_ok(),
            ok,
            "parser on {frame}"
        );
    }
}
