//! A 2-D world with static obstacles and goal-directed pedestrians, driven
//! in closed loop by any registered arbitrator.

pub mod episode;
pub mod metrics;
pub mod models;
pub mod scenario;
pub mod world;

pub use episode::{
    run_episode, Episode, EpisodeConfig, EpisodeHeader, EpisodeLog, ModeSummary, Sensed, SimError, StepRecord,
};
pub use metrics::{compute_metrics, Metrics, CSV_HEADER};
pub use scenario::{
    scenario_corridor, scenario_crossing, scenario_fig2, scenario_fig3, scenario_fig4, scenario_open, IntentRoute,
    OperatorPolicy, Scenario, ScenarioError, SimSettings, SCENARIO_NAMES,
};
pub use world::{CrowdAgent, CrowdAgentSpec, Obstacle, WorldState};
