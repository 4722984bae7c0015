//! Scenario description, validation and the built-in scenario builders.
//!
//! The concrete coordinates of the built-in scenarios are constructions
//! chosen to reproduce qualitative archetypes (a safe operator near a
//! suboptimal autonomy mode, an unsafe operator, a bimodal operator, and a
//! pillar whose two safe detours average into a collision).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::world::{obstacle_clearance, CrowdAgentSpec, Obstacle};
use crate::trajectory::{GpPrior, Point2};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{name}` (valid: {valid})")]
    Unknown { name: String, valid: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario file: {0}")]
    Io(String),
    #[error("cannot parse scenario file: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// How the simulated operator produces input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorPolicy {
    /// Follows the shortest safe route.
    Optimal,
    /// Follows a safe route that is not the autonomy's favourite.
    SafeSuboptimal,
    /// Follows a route that passes through an obstacle.
    Unsafe,
    /// Follows the first of two intent routes while its predictive model
    /// mixes both.
    Bimodal,
    /// Input comes from outside (a live client).
    Interactive,
}

/// A route the operator may intend, as a polyline from near the robot start
/// to the goal, with its prior weight in the operator's predictive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRoute {
    pub waypoints: Vec<Point2>,
    pub weight: f64,
}

/// Numeric knobs of the closed loop. All lengths in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    /// Nominal speed of autonomy route modes.
    pub robot_speed: f64,
    /// Speed of the scripted operator's joystick command.
    pub operator_speed: f64,
    /// Pure-pursuit lookahead distance of the scripted operator.
    pub lookahead: f64,
    /// Noise level the operator GP assigns to each joystick observation.
    pub operator_noise: f64,
    /// Standard deviation of pedestrian position measurements.
    pub crowd_noise: f64,
    /// Spread of the operator intent pseudo-observation.
    pub intent_std: f64,
    pub goal_tolerance: f64,
    pub timeout: f64,
    /// Lateral clearance added to an obstacle's radius for detour modes.
    pub detour_margin: f64,
    /// Extra clearance over the safety radius required of an autonomy route.
    pub route_clearance_slack: f64,
    /// Signal variance of the autonomy mode covariance (m²).
    pub autonomy_variance: f64,
    /// Length-scale of the autonomy mode covariance (s).
    pub autonomy_length_scale: f64,
    /// Route-length difference per nat of log-weight (m).
    pub length_temperature: f64,
    pub operator_prior: GpPrior,
    pub crowd_prior: GpPrior,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            robot_speed: 1.0,
            operator_speed: 1.0,
            lookahead: 1.0,
            operator_noise: 0.2,
            crowd_noise: 0.05,
            intent_std: 0.3,
            goal_tolerance: 0.3,
            timeout: 60.0,
            detour_margin: 0.8,
            route_clearance_slack: 0.05,
            autonomy_variance: 0.05,
            autonomy_length_scale: 1.0,
            length_temperature: 0.5,
            operator_prior: GpPrior::default(),
            crowd_prior: GpPrior::default(),
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("robot_speed", self.robot_speed),
            ("operator_speed", self.operator_speed),
            ("lookahead", self.lookahead),
            ("operator_noise", self.operator_noise),
            ("crowd_noise", self.crowd_noise),
            ("intent_std", self.intent_std),
            ("goal_tolerance", self.goal_tolerance),
            ("timeout", self.timeout),
            ("autonomy_variance", self.autonomy_variance),
            ("autonomy_length_scale", self.autonomy_length_scale),
            ("length_temperature", self.length_temperature),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(invalid(format!("{name} must be positive (got {v})")));
        }
        if !(self.detour_margin >= 0.0) || !(self.route_clearance_slack >= 0.0) {
            return Err(invalid("detour_margin and route_clearance_slack must be non-negative"));
        }
        self.operator_prior.validate().map_err(|e| invalid(e.to_string()))?;
        self.crowd_prior.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

fn default_horizon() -> usize {
    20
}

fn default_dt() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub crowd: Vec<CrowdAgentSpec>,
    pub robot_start: Point2,
    pub robot_goal: Point2,
    pub operator_policy: OperatorPolicy,
    /// Intent routes; the scripted operator follows the first.
    #[serde(default)]
    pub operator_routes: Vec<IntentRoute>,
    /// Waypoints per predicted trajectory.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub settings: SimSettings,
}

pub const SCENARIO_NAMES: [&str; 6] = ["open", "fig2", "fig3", "fig4", "corridor", "crossing"];

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least one waypoint"));
        }
        if let Some(i) = self.obstacles.iter().position(|o| !o.is_valid()) {
            return Err(invalid(format!("obstacle {i} is degenerate")));
        }
        for (what, p) in [("robot_start", self.robot_start), ("robot_goal", self.robot_goal)] {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(invalid(format!("{what} is not finite")));
            }
            if obstacle_clearance(&self.obstacles, &p) <= 0.0 {
                return Err(invalid(format!("{what} lies inside an obstacle")));
            }
        }
        for (i, c) in self.crowd.iter().enumerate() {
            if !(c.speed >= 0.0) || !(c.noise >= 0.0) {
                return Err(invalid(format!("crowd agent {i} has negative speed or noise")));
            }
        }
        if self.operator_policy != OperatorPolicy::Interactive && self.operator_routes.is_empty() {
            return Err(invalid("a scripted operator needs at least one intent route"));
        }
        for (i, r) in self.operator_routes.iter().enumerate() {
            if r.waypoints.len() < 2 {
                return Err(invalid(format!("intent route {i} needs at least two waypoints")));
            }
            if !(r.weight > 0.0) || !r.weight.is_finite() {
                return Err(invalid(format!("intent route {i} needs a positive weight")));
            }
        }
        self.settings.validate()
    }

    /// Copy with the crowd sorted into canonical order, so that agent labels
    /// carry no information.
    pub fn canonical(&self) -> Scenario {
        let mut s = self.clone();
        s.crowd.sort_by(|a, b| a.canonical_cmp(b));
        s
    }

    pub fn builtin(name: &str) -> Result<Scenario, ScenarioError> {
        match name {
            "open" => Ok(scenario_open()),
            "fig2" => Ok(scenario_fig2()),
            "fig3" => Ok(scenario_fig3()),
            "fig4" => Ok(scenario_fig4()),
            "corridor" => Ok(scenario_corridor()),
            "crossing" => Ok(scenario_crossing()),
            _ => Err(ScenarioError::Unknown {
                name: name.to_string(),
                valid: SCENARIO_NAMES.join(", "),
            }),
        }
    }

    /// A built-in name, or a path to a JSON scenario file.
    pub fn load(name_or_path: &str) -> Result<Scenario, ScenarioError> {
        let scenario = if SCENARIO_NAMES.contains(&name_or_path) {
            Self::builtin(name_or_path)?
        } else if std::path::Path::new(name_or_path).is_file() {
            let text = std::fs::read_to_string(name_or_path).map_err(|e| ScenarioError::Io(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?
        } else {
            return Self::builtin(name_or_path);
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

fn route(points: &[(f64, f64)], weight: f64) -> IntentRoute {
    IntentRoute {
        waypoints: points.iter().map(|&(x, y)| p(x, y)).collect(),
        weight,
    }
}

fn base(name: &str, policy: OperatorPolicy, routes: Vec<IntentRoute>) -> Scenario {
    Scenario {
        name: name.to_string(),
        obstacles: vec![],
        crowd: vec![],
        robot_start: p(0.0, 0.0),
        robot_goal: p(10.0, 0.0),
        operator_policy: policy,
        operator_routes: routes,
        horizon: default_horizon(),
        dt: default_dt(),
        seed: 0,
        settings: SimSettings::default(),
    }
}

/// No obstacles, no crowd; the operator drives straight to the goal.
pub fn scenario_open() -> Scenario {
    base(
        "open",
        OperatorPolicy::Optimal,
        vec![route(&[(0.0, 0.0), (10.0, 0.0)], 1.0)],
    )
}

/// One pillar just above the straight line. The detour below is shorter
/// (the autonomy's global mode); the operator takes the safe detour above,
/// which is the autonomy's second mode. Blending the two halfway steers
/// into the pillar.
pub fn scenario_fig2() -> Scenario {
    let mut s = base(
        "fig2",
        OperatorPolicy::SafeSuboptimal,
        vec![route(&[(0.0, 0.0), (5.0, 2.3), (10.0, 0.0)], 1.0)],
    );
    s.obstacles = vec![Obstacle::Circle {
        center: p(5.0, 0.5),
        radius: 1.0,
    }];
    s
}

/// One pillar on the straight line; the operator drives straight through it.
pub fn scenario_fig3() -> Scenario {
    let mut s = base(
        "fig3",
        OperatorPolicy::Unsafe,
        vec![route(&[(0.0, 0.0), (10.0, 0.0)], 1.0)],
    );
    s.obstacles = vec![Obstacle::Circle {
        center: p(5.0, 0.2),
        radius: 1.0,
    }];
    s
}

/// Two pillars leave a central gap, so the autonomy has three modes (over,
/// through, under). The operator is ambiguous between going over and under;
/// the slight asymmetry keeps the two pairings from tying exactly.
pub fn scenario_fig4() -> Scenario {
    let mut s = base(
        "fig4",
        OperatorPolicy::Bimodal,
        vec![
            route(&[(0.0, 0.0), (5.0, 3.4), (10.0, 0.0)], 0.5),
            route(&[(0.0, 0.0), (5.0, -3.5), (10.0, 0.0)], 0.5),
        ],
    );
    s.obstacles = vec![
        Obstacle::Circle {
            center: p(5.0, 1.6),
            radius: 1.0,
        },
        Obstacle::Circle {
            center: p(5.0, -1.7),
            radius: 1.0,
        },
    ];
    s
}

/// A walled corridor with a pillar in the middle; each side of the pillar
/// is passable on its own.
pub fn scenario_corridor() -> Scenario {
    let mut s = base(
        "corridor",
        OperatorPolicy::Optimal,
        vec![route(&[(0.0, 0.0), (5.0, 1.6), (10.0, 0.0)], 1.0)],
    );
    s.obstacles = vec![
        Obstacle::Rectangle {
            min: p(-1.0, 3.0),
            max: p(11.0, 4.0),
        },
        Obstacle::Rectangle {
            min: p(-1.0, -4.0),
            max: p(11.0, -3.0),
        },
        Obstacle::Circle {
            center: p(5.0, 0.0),
            radius: 0.8,
        },
    ];
    s
}

/// Open floor with pedestrians crossing the robot's path.
pub fn scenario_crossing() -> Scenario {
    let mut s = scenario_open();
    s.name = "crossing".into();
    s.crowd = vec![
        CrowdAgentSpec {
            start: p(4.0, 4.0),
            goal: p(4.0, -4.0),
            speed: 0.8,
            noise: 0.1,
        },
        CrowdAgentSpec {
            start: p(7.0, -4.0),
            goal: p(7.0, 4.0),
            speed: 0.9,
            noise: 0.1,
        },
        CrowdAgentSpec {
            start: p(12.0, 0.5),
            goal: p(-2.0, 0.5),
            speed: 0.7,
            noise: 0.05,
        },
    ];
    s
}
