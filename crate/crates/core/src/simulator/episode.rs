//! Closed-loop episodes: observe, fit models, arbitrate, step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{compute_metrics, Metrics};
use super::models::{autonomy_model, crowd_models, mixture_moments, operator_model, pursuit_command};
use super::scenario::{OperatorPolicy, Scenario, ScenarioError};
use super::world::{mix_seed, CrowdAgent, WorldState};
use crate::arbitration::{
    ArbitrationConfig, ArbitrationError, ArbitrationInput, ArbitrationReport, ArbitratorRegistry, Method,
};
use crate::gaussian::GaussianMixture;
use crate::interaction::{InteractionParams, JointModels, OperatorModel};
use crate::trajectory::{horizon_times, unstack, AgentId, ObservationLog, Point2, TrajectoryError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error("malformed episode log: {0}")]
    Log(String),
}

/// Per-episode settings that do not belong to the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub method: Method,
    #[serde(default)]
    pub params: InteractionParams,
    #[serde(default)]
    pub arbitration: ArbitrationConfig,
    /// Seeds the crowd realization and all arbitration randomness.
    #[serde(default)]
    pub seed: u64,
}

impl EpisodeConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            params: InteractionParams::default(),
            arbitration: ArbitrationConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.arbitration.validate()?;
        Ok(())
    }
}

/// A predictive mode as shown to a viewer: weight and mean path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub weight: f64,
    pub mean: Vec<Point2>,
}

fn summarize(m: &GaussianMixture) -> Vec<ModeSummary> {
    m.components()
        .iter()
        .zip(m.weights())
        .map(|(c, weight)| ModeSummary {
            weight,
            mean: unstack(c.mean()),
        })
        .collect()
}

/// Everything that happened in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// World after the step.
    pub world: WorldState,
    /// Operator velocity command used this step.
    pub operator_input: Option<Point2>,
    /// Moment mean of the operator model over the horizon.
    pub operator_mean: Option<Vec<Point2>>,
    /// Per-waypoint standard deviation of the operator model.
    pub operator_std: Option<Vec<f64>>,
    pub operator_modes: Vec<ModeSummary>,
    pub autonomy_modes: Vec<ModeSummary>,
    /// Velocity actually executed.
    pub command: Point2,
    pub report: Option<ArbitrationReport>,
    /// Arbitration failure; the robot held position.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario: Scenario,
    pub config: EpisodeConfig,
    pub initial: WorldState,
}

/// Header plus one record per step; serialized as JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(Box<EpisodeHeader>),
    Step(Box<StepRecord>),
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a EpisodeHeader),
    Step(&'a StepRecord),
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LineRef<'_>| {
            out.push_str(&serde_json::to_string(&line).expect("episode records serialize"));
            out.push('\n');
        };
        push(LineRef::Header(&self.header));
        for s in &self.steps {
            push(LineRef::Step(s));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = match lines.next().map(serde_json::from_str::<Line>) {
            Some(Ok(Line::Header(h))) => *h,
            Some(Ok(_)) => return Err(SimError::Log("first line is not a header".into())),
            Some(Err(e)) => return Err(SimError::Log(e.to_string())),
            None => return Err(SimError::Log("empty log".into())),
        };
        let mut steps = Vec::new();
        for (i, l) in lines.enumerate() {
            match serde_json::from_str::<Line>(l) {
                Ok(Line::Step(s)) => steps.push(*s),
                Ok(Line::Header(_)) => return Err(SimError::Log(format!("line {} is a second header", i + 2))),
                Err(e) => return Err(SimError::Log(format!("line {}: {e}", i + 2))),
            }
        }
        Ok(Self { header, steps })
    }

    /// Robot positions from the start through every step.
    pub fn robot_path(&self) -> Vec<Point2> {
        std::iter::once(self.header.initial.robot)
            .chain(self.steps.iter().map(|s| s.world.robot))
            .collect()
    }

    pub fn worlds(&self) -> Vec<&WorldState> {
        std::iter::once(&self.header.initial)
            .chain(self.steps.iter().map(|s| &s.world))
            .collect()
    }
}

/// Measurements and models of one step, before arbitration.
#[derive(Debug, Clone)]
pub struct Sensed {
    pub operator_input: Option<Point2>,
    pub models: JointModels,
}

/// One isolated closed-loop episode.
#[derive(Debug, Clone)]
pub struct Episode {
    scenario: Scenario,
    config: EpisodeConfig,
    robot: Point2,
    time: f64,
    step: usize,
    crowd: Vec<CrowdAgent>,
    log: ObservationLog,
    reached_at: Option<f64>,
}

impl Episode {
    /// The crowd is relabeled into canonical order, so agent labels never
    /// influence an outcome.
    pub fn new(scenario: &Scenario, config: EpisodeConfig) -> Result<Self, SimError> {
        scenario.validate()?;
        config.validate()?;
        let scenario = scenario.canonical();
        let crowd_seed = mix_seed(scenario.seed, config.seed);
        let crowd = scenario
            .crowd
            .iter()
            .map(|c| CrowdAgent::new(c.clone(), crowd_seed))
            .collect();
        Ok(Self {
            robot: scenario.robot_start,
            time: 0.0,
            step: 0,
            crowd,
            log: ObservationLog::new(),
            reached_at: None,
            scenario,
            config,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    /// Changes take effect on the next step.
    pub fn config_mut(&mut self) -> &mut EpisodeConfig {
        &mut self.config
    }

    pub fn observations(&self) -> &ObservationLog {
        &self.log
    }

    pub fn world(&self) -> WorldState {
        WorldState {
            step: self.step,
            time: self.time,
            robot: self.robot,
            crowd: self.crowd.iter().map(|c| c.position).collect(),
        }
    }

    pub fn header(&self) -> EpisodeHeader {
        EpisodeHeader {
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            initial: self.world(),
        }
    }

    pub fn reached_goal(&self) -> bool {
        self.reached_at.is_some()
    }

    pub fn is_done(&self) -> bool {
        self.reached_goal() || self.time >= self.scenario.settings.timeout - 1e-9
    }

    fn times(&self) -> Vec<f64> {
        horizon_times(self.time, self.scenario.dt, self.scenario.horizon)
    }

    /// Predictive models for the current state and observations.
    pub fn models(&self) -> Result<JointModels, SimError> {
        let times = self.times();
        let operator = operator_model(&self.scenario, &self.log, self.robot, self.time, &times)?;
        let robot = autonomy_model(
            &self.scenario,
            self.robot,
            self.time,
            &times,
            self.config.params.safety_radius,
        )?;
        let crowd = crowd_models(&self.scenario, &self.log, &times)?;
        Ok(JointModels {
            times,
            operator: operator.map(OperatorModel::Predictive),
            robot,
            crowd,
        })
    }

    /// Operator command this step: `external` when given, otherwise the
    /// scripted policy (none for an interactive operator).
    fn operator_command(&self, external: Option<Point2>) -> Option<Point2> {
        if external.is_some() || self.scenario.operator_policy == OperatorPolicy::Interactive {
            return external;
        }
        let s = &self.scenario.settings;
        let route = &self.scenario.operator_routes[0].waypoints;
        Some(pursuit_command(
            route,
            self.robot,
            s.operator_speed,
            s.lookahead,
            self.scenario.dt,
        ))
    }

    /// Records the current measurements: pedestrian positions now, and the
    /// operator's commanded position one step ahead.
    fn observe(&mut self, operator_input: Option<Point2>) -> Result<(), SimError> {
        let s = &self.scenario.settings;
        for (i, agent) in self.crowd.iter_mut().enumerate() {
            let z = agent.measure(s.crowd_noise);
            self.log.push(AgentId::Crowd(i), self.time, z, s.crowd_noise)?;
        }
        if let Some(u) = operator_input {
            let z = self.robot + u * self.scenario.dt;
            self.log
                .push(AgentId::Operator, self.time + self.scenario.dt, z, s.operator_noise)?;
        }
        Ok(())
    }

    /// Advances one step. Arbitration failures are recorded and the robot
    /// holds position; only model-building failures are errors.
    pub fn step(&mut self, registry: &ArbitratorRegistry, external: Option<Point2>) -> Result<StepRecord, SimError> {
        let sensed = self.sense(external)?;
        self.act(registry, sensed)
    }

    /// First half of a step: choose the operator command, record this
    /// step's measurements and fit the predictive models.
    pub fn sense(&mut self, external: Option<Point2>) -> Result<Sensed, SimError> {
        let operator_input = self.operator_command(external);
        self.observe(operator_input)?;
        let models = self.models()?;
        Ok(Sensed { operator_input, models })
    }

    /// Arbitration input for `sensed`, exactly as [`Episode::act`] builds it.
    pub fn arbitration_input<'a>(&'a self, sensed: &'a Sensed) -> ArbitrationInput<'a> {
        let mut input = ArbitrationInput::new(&sensed.models, &self.config.arbitration);
        input.params = self.config.params;
        input.t0 = self.time;
        input.origin = self.robot;
        input.operator_input = sensed.operator_input;
        input.operator_log = Some(&self.log);
        input.seed = mix_seed(self.config.seed, self.step as u64);
        input
    }

    /// Second half of a step: arbitrate with the configured method and move
    /// the world forward by `dt`.
    pub fn act(&mut self, registry: &ArbitratorRegistry, sensed: Sensed) -> Result<StepRecord, SimError> {
        let arbitrator = registry.resolve(self.config.method.name())?;
        let (operator_mean, operator_std, operator_modes) = match &sensed.models.operator {
            Some(OperatorModel::Predictive(m)) => {
                let (mean, std) = mixture_moments(m);
                (Some(unstack(&mean)), Some(std), summarize(m))
            }
            _ => (None, None, Vec::new()),
        };
        let autonomy_modes = summarize(&sensed.models.robot);

        let (report, error, command) = match arbitrator.arbitrate(&self.arbitration_input(&sensed)) {
            Ok(r) => {
                let c = r.control.next_command;
                (Some(r), None, c)
            }
            Err(e) => (None, Some(e.to_string()), Point2::zeros()),
        };

        self.robot += command * self.scenario.dt;
        for agent in &mut self.crowd {
            agent.step(self.scenario.dt);
        }
        self.step += 1;
        self.time = self.step as f64 * self.scenario.dt;
        if self.reached_at.is_none()
            && (self.robot - self.scenario.robot_goal).norm() <= self.scenario.settings.goal_tolerance
        {
            self.reached_at = Some(self.time);
        }

        Ok(StepRecord {
            world: self.world(),
            operator_input: sensed.operator_input,
            operator_mean,
            operator_std,
            operator_modes,
            autonomy_modes,
            command,
            report,
            error,
        })
    }
}

/// Runs an episode to the goal or the timeout.
pub fn run_episode(
    scenario: &Scenario,
    config: EpisodeConfig,
    registry: &ArbitratorRegistry,
) -> Result<(EpisodeLog, Metrics), SimError> {
    let mut episode = Episode::new(scenario, config)?;
    let header = episode.header();
    let mut steps = Vec::new();
    while !episode.is_done() {
        steps.push(episode.step(registry, None)?);
    }
    let log = EpisodeLog { header, steps };
    let metrics = compute_metrics(&log);
    Ok((log, metrics))
}
