//! One live episode driven by a remote operator, independent of transport.
//!
//! The transport feeds client frames to [`Session::receive`] as they arrive
//! and calls [`Session::tick`] on its clock. Inputs are mailbox-latest: a
//! newer input replaces one not yet consumed by a tick.

use std::sync::Arc;
use std::time::Instant;

use blendlab::arbitration::{ArbitratorRegistry, Method};
use blendlab::simulator::{
    compute_metrics, Episode, EpisodeConfig, EpisodeLog, OperatorPolicy, Scenario, SimError, StepRecord,
};
use blendlab::trajectory::Point2;

use crate::protocol::{
    ClientMessage, ConfigPayload, ErrorCode, ErrorPayload, HelloPayload, InputPayload, MetricsPayload, Rejection,
    ServerBody, ServerMessage, StatePayload, PROTOCOL_VERSION,
};

/// Factor applied to the last input on every tick without a new one.
pub const INPUT_DECAY: f64 = 0.9;
/// Floor for the search budget when ticks overrun.
pub const MIN_SEARCH_BUDGET: usize = 50;
/// Floor for the CTB sample count when ticks overrun.
pub const MIN_SAMPLES: usize = 10;

pub struct Session {
    scenario: Scenario,
    registry: Arc<ArbitratorRegistry>,
    tick_ms: u64,
    episode: Episode,
    log: EpisodeLog,
    /// Input received since the last tick.
    mailbox: Option<Point2>,
    /// Joystick deflection used on the previous tick.
    last_input: Option<Point2>,
    next_tick: u64,
    budget_downgraded: bool,
    finished: bool,
}

impl Session {
    /// The scenario's operator becomes the remote client: scripted intent
    /// routes are dropped, so the operator model rests on live input only.
    pub fn new(
        scenario: &Scenario,
        config: EpisodeConfig,
        tick_ms: u64,
        registry: Arc<ArbitratorRegistry>,
    ) -> Result<Self, SimError> {
        if tick_ms == 0 {
            return Err(SimError::Config("tick_ms must be positive".into()));
        }
        registry.resolve(config.method.name())?;
        let mut scenario = scenario.clone();
        scenario.operator_policy = OperatorPolicy::Interactive;
        scenario.operator_routes.clear();
        let episode = Episode::new(&scenario, config)?;
        let log = EpisodeLog {
            header: episode.header(),
            steps: Vec::new(),
        };
        Ok(Self {
            scenario,
            registry,
            tick_ms,
            episode,
            log,
            mailbox: None,
            last_input: None,
            next_tick: 0,
            budget_downgraded: false,
            finished: false,
        })
    }

    pub fn method(&self) -> Method {
        self.episode.config().method
    }

    pub fn config(&self) -> &EpisodeConfig {
        self.episode.config()
    }

    pub fn is_done(&self) -> bool {
        self.episode.is_done()
    }

    /// Steps recorded since the last reset.
    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    fn frame(&mut self, body: ServerBody) -> ServerMessage {
        let tick = self.next_tick;
        self.next_tick += 1;
        ServerMessage { tick, body }
    }

    fn error(&mut self, code: ErrorCode, message: impl Into<String>) -> ServerMessage {
        self.frame(ServerBody::Error(ErrorPayload {
            code,
            message: message.into(),
        }))
    }

    pub fn hello(&mut self) -> ServerMessage {
        let config = self.episode.config();
        let body = ServerBody::Hello(Box::new(HelloPayload {
            version: env!("CARGO_PKG_VERSION").to_string(),
            protocol: PROTOCOL_VERSION,
            scenario: self.scenario.clone(),
            method: config.method,
            methods: self.registry.names().iter().map(|s| s.to_string()).collect(),
            tick_ms: self.tick_ms,
            v_max: config.arbitration.v_max,
            params: config.params,
        }));
        self.frame(body)
    }

    /// Handles one client frame; returns the immediate replies (errors, or a
    /// hello answering a hello). Invalid frames never end the session.
    pub fn receive(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::parse(text) {
            Ok(ClientMessage::Hello(_)) => vec![self.hello()],
            Ok(ClientMessage::Input(InputPayload { x, y })) => {
                self.mailbox = Some(Point2::new(x, y));
                Vec::new()
            }
            Ok(ClientMessage::Config(c)) => match self.apply(c) {
                Ok(()) => Vec::new(),
                Err(e) => vec![self.error(ErrorCode::InvalidConfig, e)],
            },
            Err(Rejection { code, message }) => vec![self.error(code, message)],
        }
    }

    /// Applies a configuration change atomically; it is used from the next
    /// tick on.
    fn apply(&mut self, c: ConfigPayload) -> Result<(), String> {
        let mut next = self.episode.config().clone();
        if let Some(m) = &c.method {
            let m: Method = m
                .parse()
                .map_err(|e: blendlab::arbitration::ArbitrationError| e.to_string())?;
            self.registry.resolve(m.name()).map_err(|e| e.to_string())?;
            next.method = m;
        }
        if let Some(g) = c.gamma {
            next.params.gamma = g;
        }
        if let Some(k) = c.k_h {
            next.arbitration.k_h = k;
        }
        if let Some(n) = c.n_samples {
            next.arbitration.n_samples = n;
        }
        if let Some(b) = c.search_budget {
            next.arbitration.search_budget = b;
            self.budget_downgraded = false;
        }
        next.validate().map_err(|e| e.to_string())?;
        if c.reset {
            self.episode = Episode::new(&self.scenario, next).map_err(|e| e.to_string())?;
            self.log = EpisodeLog {
                header: self.episode.header(),
                steps: Vec::new(),
            };
            self.mailbox = None;
            self.last_input = None;
            self.finished = false;
        } else {
            *self.episode.config_mut() = next;
        }
        Ok(())
    }

    /// Joystick deflection for this tick: the newest input, else the last
    /// one decayed, else none.
    fn take_input(&mut self) -> Option<Point2> {
        let u = match self.mailbox.take() {
            Some(u) => Some(u),
            None => self.last_input.map(|u| u * INPUT_DECAY),
        };
        self.last_input = u;
        u
    }

    /// Advances the simulation one step and reports it. After the episode
    /// ends, one metrics frame follows the final state and later ticks are
    /// silent until a reset.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, SimError> {
        if self.finished {
            return Ok(Vec::new());
        }
        let v_max = self.episode.config().arbitration.v_max;
        let command = self.take_input().map(|u| u * v_max);
        let sensed = self.episode.sense(command)?;
        let started = Instant::now();
        let record = self.episode.act(&self.registry, sensed)?;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let budget = self.episode.config().arbitration.search_budget;
        if elapsed > self.tick_ms as f64 {
            self.downgrade(elapsed);
        }
        let state = self.state(&record, elapsed, budget);
        self.log.steps.push(record);
        let mut out = vec![self.frame(ServerBody::State(Box::new(state)))];
        if self.episode.is_done() {
            self.finished = true;
            let config = self.episode.config();
            let metrics = MetricsPayload {
                scenario: self.scenario.name.clone(),
                method: config.method,
                seed: config.seed,
                metrics: compute_metrics(&self.log),
            };
            out.push(self.frame(ServerBody::Metrics(Box::new(metrics))));
        }
        Ok(out)
    }

    fn downgrade(&mut self, elapsed_ms: f64) {
        let a = &mut self.episode.config_mut().arbitration;
        let (budget, samples) = (a.search_budget, a.n_samples);
        a.search_budget = (budget / 2).max(MIN_SEARCH_BUDGET).min(budget);
        a.n_samples = (samples / 2).max(MIN_SAMPLES).min(samples);
        if a.search_budget < budget || a.n_samples < samples {
            self.budget_downgraded = true;
            tracing::warn!(
                elapsed_ms,
                tick_ms = self.tick_ms,
                search_budget = a.search_budget,
                n_samples = a.n_samples,
                "arbitration overran the tick; budget reduced"
            );
        }
    }

    fn state(&self, r: &StepRecord, arbitration_ms: f64, search_budget: usize) -> StatePayload {
        StatePayload {
            step: r.world.step,
            time: r.world.time,
            method: r.report.as_ref().map_or(self.method(), |rep| rep.method),
            robot: r.world.robot,
            goal: self.scenario.robot_goal,
            crowd: r.world.crowd.clone(),
            command: r.command,
            operator_input: r.operator_input,
            trajectory: r.report.as_ref().map(|rep| rep.control.trajectory.points().to_vec()),
            operator_mean: r.operator_mean.clone(),
            operator_modes: r.operator_modes.clone(),
            autonomy_modes: r.autonomy_modes.clone(),
            diagnostics: r.report.as_ref().map(|rep| rep.diagnostics.clone()).unwrap_or_default(),
            error: r.error.clone(),
            done: self.episode.is_done(),
            reached_goal: self.episode.reached_goal(),
            arbitration_ms,
            search_budget,
            budget_downgraded: self.budget_downgraded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use blendlab::simulator::{scenario_crossing, scenario_open};

    fn session(scenario: &Scenario, method: Method) -> Session {
        Session::new(
            scenario,
            EpisodeConfig::new(method),
            10_000,
            Arc::new(ArbitratorRegistry::standard()),
        )
        .unwrap()
    }

    fn state(msgs: &[ServerMessage]) -> &StatePayload {
        match &msgs[0].body {
            ServerBody::State(s) => s,
            other => panic!("{other:?}"),
        }
    }

    fn input(x: f64, y: f64) -> String {
        format!(r#"{{"type":"input","payload":{{"x":{x},"y":{y}}}}}"#)
    }

    #[test]
    fn hello_announces_version_and_methods() {
        let mut s = session(&scenario_open(), Method::Psc);
        let h = s.hello();
        assert_eq!(h.tick, 0);
        match h.body {
            ServerBody::Hello(p) => {
                assert_eq!(p.version, env!("CARGO_PKG_VERSION"));
                assert_eq!(p.methods, vec!["ctb", "lb", "ltb", "ltbo", "psc"]);
                assert_eq!(p.scenario.operator_policy, OperatorPolicy::Interactive);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn without_input_the_robot_follows_the_autonomy() {
        let mut s = session(&scenario_open(), Method::Psc);
        for _ in 0..4 {
            let out = s.tick().unwrap();
            let st = state(&out);
            assert_eq!(st.operator_input, None);
            assert_eq!(st.diagnostics["operator_absent"], 1.0);
            assert!(st.command.x > 0.5 && st.command.y.abs() < 1e-9);
        }
    }

    #[test]
    fn inputs_are_scaled_latest_wins_and_decay() {
        let mut s = session(&scenario_open(), Method::Lb);
        assert!(s.receive(&input(0.2, 0.0)).is_empty());
        assert!(s.receive(&input(0.5, 0.0)).is_empty());
        let v_max = s.config().arbitration.v_max;
        let out = s.tick().unwrap();
        assert_eq!(state(&out).operator_input, Some(Point2::new(0.5 * v_max, 0.0)));
        let out = s.tick().unwrap();
        assert_eq!(
            state(&out).operator_input,
            Some(Point2::new(0.5 * INPUT_DECAY * v_max, 0.0))
        );
        let out = s.tick().unwrap();
        let expected = 0.5 * INPUT_DECAY * INPUT_DECAY * v_max;
        assert!((state(&out).operator_input.unwrap().x - expected).abs() < 1e-15);
    }

    #[test]
    fn bad_frames_get_errors_and_the_session_continues() {
        let mut s = session(&scenario_open(), Method::Psc);
        s.receive(&input(0.5, 0.0));
        for (frame, code) in [
            ("{", ErrorCode::Malformed),
            (r#"{"type":"teleport"}"#, ErrorCode::UnknownType),
            (&input(0.9, 0.9), ErrorCode::InvalidInput),
            (
                r#"{"type":"config","payload":{"method":"blend"}}"#,
                ErrorCode::InvalidConfig,
            ),
            (r#"{"type":"config","payload":{"gamma":-1}}"#, ErrorCode::InvalidConfig),
        ] {
            let out = s.receive(frame);
            match &out[..] {
                [ServerMessage {
                    body: ServerBody::Error(e),
                    ..
                }] => assert_eq!(e.code, code, "{frame}"),
                other => panic!("{frame}: {other:?}"),
            }
        }
        // the rejected input did not replace the valid one, and the failed
        // configs changed nothing
        let out = s.tick().unwrap();
        assert_eq!(
            state(&out).operator_input.unwrap().x,
            0.5 * s.config().arbitration.v_max
        );
        assert_eq!(s.method(), Method::Psc);
        assert_eq!(s.config().params.gamma, 0.5);
    }

    #[test]
    fn method_switch_applies_on_the_next_tick() {
        let mut s = session(&scenario_open(), Method::Lb);
        s.receive(&input(1.0, 0.0));
        assert_eq!(state(&s.tick().unwrap()).method, Method::Lb);
        s.receive(r#"{"type":"config","payload":{"method":"psc","gamma":0.8}}"#);
        let out = s.tick().unwrap();
        assert_eq!(state(&out).method, Method::Psc);
        assert_eq!(s.config().params.gamma, 0.8);
    }

    #[test]
    fn ticks_strictly_increase_across_message_kinds() {
        let mut s = session(&scenario_open(), Method::Lb);
        let mut ticks = vec![s.hello().tick];
        for _ in 0..3 {
            ticks.extend(s.receive("nope").iter().map(|m| m.tick));
            ticks.extend(s.tick().unwrap().iter().map(|m| m.tick));
        }
        assert!(ticks.windows(2).all(|w| w[1] > w[0]), "{ticks:?}");
    }

    #[test]
    fn aligned_input_reaches_the_goal_with_negligible_disagreement() {
        let mut s = session(&scenario_open(), Method::Psc);
        let mut metrics = None;
        // the open scenario's autonomy drives its route at 1 m/s
        let deflection = 1.0 / s.config().arbitration.v_max;
        for _ in 0..200 {
            s.receive(&input(deflection, 0.0));
            let out = s.tick().unwrap();
            let st = state(&out);
            if let Some(a) = st.diagnostics.get("joint.agreeability") {
                // the first tick has a single observation to fit, and near the goal
                // the autonomy slows while the constant input does not
                if st.step > 1 && st.robot.x < 5.0 {
                    assert!(*a > -0.01, "step {}: agreeability {a}", st.step);
                }
            }
            if let Some(ServerMessage {
                body: ServerBody::Metrics(m),
                ..
            }) = out.get(1)
            {
                metrics = Some(m.metrics.clone());
                break;
            }
        }
        let m = metrics.expect("episode finished");
        assert!(m.time_to_goal.is_some() && !m.collision, "{m:?}");
        assert!(s.tick().unwrap().is_empty());
        s.receive(r#"{"type":"config","payload":{"reset":true}}"#);
        assert_eq!(state(&s.tick().unwrap()).step, 1);
    }

    #[test]
    fn overrunning_ticks_shrink_the_budget() {
        let mut s = Session::new(
            &scenario_crossing(),
            EpisodeConfig::new(Method::Psc),
            1,
            Arc::new(ArbitratorRegistry::standard()),
        )
        .unwrap();
        s.receive(&input(1.0, 0.0));
        let first = state(&s.tick().unwrap()).clone();
        assert!(first.arbitration_ms > 1.0);
        assert!(first.budget_downgraded);
        assert_eq!(first.search_budget, 2000);
        assert_eq!(s.config().arbitration.search_budget, 1000);
        for _ in 0..8 {
            s.tick().unwrap();
        }
        assert_eq!(s.config().arbitration.search_budget, MIN_SEARCH_BUDGET);
    }
}
