//! Episode scores, computed purely from an [`EpisodeLog`].

use serde::{Deserialize, Serialize};

use super::episode::EpisodeLog;
use super::world::obstacle_clearance;
use crate::trajectory::Point2;

/// Interpolation points per step when measuring clearance along the path.
pub const CLEARANCE_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Smallest distance to an obstacle boundary or a pedestrian, in meters
    /// (`inf` with neither).
    #[serde(with = "crate::serde_float")]
    pub min_clearance: f64,
    /// `min_clearance < safety_radius`.
    pub collision: bool,
    pub path_length: f64,
    /// Seconds until the goal was first reached; `None` on timeout.
    pub time_to_goal: Option<f64>,
    /// Mean over steps of the agreeability between the executed next
    /// position and the operator model's mean next position (0 without any
    /// operator model).
    pub agreeability_score: f64,
    pub steps: usize,
    /// Steps where arbitration failed and the robot held position.
    pub infeasible_steps: usize,
}

pub const CSV_HEADER: &str =
    "scenario,method,seed,min_clearance,collision,path_length,time_to_goal,agreeability_score,steps,infeasible_steps";

impl Metrics {
    /// One CSV row matching [`CSV_HEADER`]. Floats use the shortest
    /// round-trip representation; a missing `time_to_goal` is `null`.
    pub fn csv_row(&self, scenario: &str, method: &str, seed: u64) -> String {
        let ttg = self.time_to_goal.map_or_else(|| "null".to_string(), |t| t.to_string());
        format!(
            "{scenario},{method},{seed},{},{},{},{ttg},{},{},{}",
            self.min_clearance,
            self.collision,
            self.path_length,
            self.agreeability_score,
            self.steps,
            self.infeasible_steps
        )
    }
}

/// Clearance of the robot over a straight step, against obstacles and
/// pedestrians moving linearly over the same interval.
fn step_clearance(obstacles: &[super::world::Obstacle], r0: Point2, r1: Point2, c0: &[Point2], c1: &[Point2]) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..=CLEARANCE_SUBSTEPS {
        let s = k as f64 / CLEARANCE_SUBSTEPS as f64;
        let r = r0 + (r1 - r0) * s;
        best = best.min(obstacle_clearance(obstacles, &r));
        for (a, b) in c0.iter().zip(c1) {
            best = best.min((a + (b - a) * s - r).norm());
        }
    }
    best
}

pub fn compute_metrics(log: &EpisodeLog) -> Metrics {
    let scenario = &log.header.scenario;
    let params = &log.header.config.params;
    let worlds = log.worlds();

    let mut min_clearance = step_clearance(
        &scenario.obstacles,
        worlds[0].robot,
        worlds[0].robot,
        &worlds[0].crowd,
        &worlds[0].crowd,
    );
    let mut path_length = 0.0;
    for w in worlds.windows(2) {
        min_clearance = min_clearance.min(step_clearance(
            &scenario.obstacles,
            w[0].robot,
            w[1].robot,
            &w[0].crowd,
            &w[1].crowd,
        ));
        path_length += (w[1].robot - w[0].robot).norm();
    }

    let time_to_goal = log
        .steps
        .iter()
        .find(|s| (s.world.robot - scenario.robot_goal).norm() <= scenario.settings.goal_tolerance)
        .map(|s| s.world.time);

    let scores: Vec<f64> = log
        .steps
        .iter()
        .filter_map(|s| {
            let mean = s.operator_mean.as_ref()?.first()?;
            let d2 = (s.world.robot - mean).norm_squared();
            Some(if params.gamma.is_infinite() {
                0.0
            } else {
                -0.5 * d2 / params.gamma
            })
        })
        .collect();
    let agreeability_score = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };

    Metrics {
        min_clearance,
        collision: min_clearance < params.safety_radius,
        path_length,
        time_to_goal,
        agreeability_score,
        steps: log.steps.len(),
        infeasible_steps: log.steps.iter().filter(|s| s.error.is_some()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Metrics {
        Metrics {
            min_clearance: 0.25,
            collision: true,
            path_length: 10.5,
            time_to_goal: None,
            agreeability_score: -0.125,
            steps: 240,
            infeasible_steps: 0,
        }
    }

    #[test]
    fn csv_row_matches_the_header_and_writes_null_on_timeout() {
        let row = sample().csv_row("fig2", "ltb", 3);
        assert_eq!(row, "fig2,ltb,3,0.25,true,10.5,null,-0.125,240,0");
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        let reached = Metrics {
            time_to_goal: Some(11.25),
            ..sample()
        };
        assert!(reached.csv_row("fig2", "ltb", 3).contains(",11.25,"));
    }

    #[test]
    fn json_keeps_infinite_clearance_and_null_time() {
        let m = Metrics {
            min_clearance: f64::INFINITY,
            ..sample()
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["min_clearance"], "inf");
        assert!(v["time_to_goal"].is_null());
        assert_eq!(serde_json::from_value::<Metrics>(v).unwrap(), m);
    }
}
