//! Builds the predictive models the arbitrators consume from the current
//! world state and observation log.

use nalgebra::{DMatrix, DVector};

use super::scenario::{IntentRoute, Scenario};
use super::world::{polyline_clearance, Obstacle};
use crate::gaussian::{GaussianDensity, GaussianMixture};
use crate::trajectory::{
    goal_conditioned_posterior, gp_posterior, interleave_axes, stack, AgentId, ObservationLog, Point2, TrajectoryError,
    GP_JITTER,
};

/// Arc length of the point on `route` nearest to `p`.
pub fn project_onto(route: &[Point2], p: &Point2) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut walked = 0.0;
    for w in route.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        let t = if len > 0.0 {
            ((p - w[0]).dot(&seg) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = (w[0] + seg * t - p).norm();
        if d < best.0 {
            best = (d, walked + t * len);
        }
        walked += len;
    }
    best.1
}

/// Point at arc length `s` along `route`, clamped to its ends.
pub fn point_at(route: &[Point2], s: f64) -> Point2 {
    let mut left = s.max(0.0);
    for w in route.windows(2) {
        let len = (w[1] - w[0]).norm();
        if left <= len && len > 0.0 {
            return w[0] + (w[1] - w[0]) * (left / len);
        }
        left -= len;
    }
    *route.last().expect("non-empty route")
}

pub fn route_length(route: &[Point2]) -> f64 {
    route.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Distance from `p` to the polyline `route`.
pub fn distance_to_route(route: &[Point2], p: &Point2) -> f64 {
    (point_at(route, project_onto(route, p)) - p).norm()
}

/// Pure-pursuit command of the scripted operator along `route`.
pub fn pursuit_command(route: &[Point2], robot: Point2, speed: f64, lookahead: f64, dt: f64) -> Point2 {
    let end = *route.last().expect("non-empty route");
    if (end - robot).norm() <= speed * dt {
        return (end - robot) / dt;
    }
    let target = point_at(route, project_onto(route, &robot) + lookahead);
    let to = target - robot;
    let n = to.norm();
    if n < 1e-12 {
        Point2::zeros()
    } else {
        to * (speed / n)
    }
}

/// Operator predictive model on `times`: the GP posterior of the operator
/// track, goal-conditioned on each intent route's point one horizon ahead.
/// `Ok(None)` before the first operator observation.
pub fn operator_model(
    scenario: &Scenario,
    log: &ObservationLog,
    robot: Point2,
    now: f64,
    times: &[f64],
) -> Result<Option<GaussianMixture>, TrajectoryError> {
    let s = &scenario.settings;
    let base = match gp_posterior(log, AgentId::Operator, &s.operator_prior, times) {
        Ok(b) => b,
        Err(TrajectoryError::ColdStart(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if scenario.operator_routes.is_empty() {
        return Ok(Some(GaussianMixture::single(base)));
    }
    let t_end = *times.last().expect("non-empty grid");
    let reach = s.operator_speed * (t_end - now);
    let mut comps = Vec::with_capacity(scenario.operator_routes.len());
    let mut weights = Vec::with_capacity(scenario.operator_routes.len());
    for IntentRoute { waypoints, weight } in &scenario.operator_routes {
        let goal = point_at(waypoints, project_onto(waypoints, &robot) + reach);
        comps.push(goal_conditioned_posterior(&base, times, goal, t_end, s.intent_std)?);
        weights.push(weight.ln());
    }
    Ok(Some(GaussianMixture::new(comps, weights)?))
}

/// Covariance of a route mode: an SE process pinned at the current position.
pub fn anchored_covariance(now: f64, times: &[f64], variance: f64, length_scale: f64) -> DMatrix<f64> {
    let k = |a: f64, b: f64| variance * (-0.5 * ((a - b) / length_scale).powi(2)).exp();
    let n = times.len();
    let per_axis = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (times[i], times[j]);
        k(a, b) - k(a, now) * k(now, b) / variance + if i == j { GP_JITTER } else { 0.0 }
    });
    interleave_axes(&per_axis)
}

const DETOUR_STEP: f64 = 0.1;
const DETOUR_WIDENINGS: usize = 30;

/// Candidate routes from `robot` to the goal: straight, and a detour on each
/// side of every obstacle ahead. Routes without enough clearance are dropped
/// (unless none survive) and near-duplicates merged.
pub fn autonomy_routes(scenario: &Scenario, robot: Point2, safety_radius: f64) -> Vec<Vec<Point2>> {
    let s = &scenario.settings;
    let goal = scenario.robot_goal;
    let span = goal - robot;
    let dist = span.norm();
    let threshold = s.route_clearance_slack + safety_radius;
    let mut candidates = vec![vec![robot, goal]];
    if dist > 1e-9 {
        let dir = span / dist;
        let normal = Point2::new(-dir.y, dir.x);
        for o in &scenario.obstacles {
            let (c, r) = o.bounding_circle();
            for side in [1.0, -1.0] {
                // Widen the detour until the legs clear this obstacle, so a
                // mode persists while the robot approaches at an angle.
                let mut offset = r + s.detour_margin;
                let mut detour = None;
                for _ in 0..=DETOUR_WIDENINGS {
                    let via = c + normal * (side * offset);
                    let along = (via - robot).dot(&dir);
                    if !(along > 0.0 && along < dist) {
                        break;
                    }
                    let route = vec![robot, via, goal];
                    let own = clearance_ahead(scenario, &route, std::slice::from_ref(o));
                    detour = Some(route);
                    if own >= threshold {
                        break;
                    }
                    offset += DETOUR_STEP;
                }
                candidates.extend(detour);
            }
        }
    }
    let safe: Vec<Vec<Point2>> = candidates
        .iter()
        .filter(|r| clearance_ahead(scenario, r, &scenario.obstacles) >= threshold)
        .cloned()
        .collect();
    let mut routes = if safe.is_empty() { candidates } else { safe };
    routes.sort_by(|a, b| route_length(a).total_cmp(&route_length(b)));
    let mut kept: Vec<Vec<Point2>> = Vec::new();
    for r in routes {
        let duplicate = kept.iter().any(|k| {
            r.iter().all(|p| distance_to_route(k, p) < 0.2) && k.iter().all(|p| distance_to_route(&r, p) < 0.2)
        });
        if !duplicate {
            kept.push(r);
        }
    }
    kept
}

/// Clearance along a route, ignoring the stretch covered by the first
/// step (the robot cannot change where it already is).
fn clearance_ahead(scenario: &Scenario, route: &[Point2], obstacles: &[Obstacle]) -> f64 {
    let skip = scenario.settings.robot_speed * scenario.dt;
    let mut rest = vec![point_at(route, skip)];
    let mut walked = 0.0;
    for w in route.windows(2) {
        walked += (w[1] - w[0]).norm();
        if walked > skip {
            rest.push(w[1]);
        }
    }
    polyline_clearance(obstacles, &rest, 0.05)
}

/// Autonomy predictive mixture: one mode per candidate route, moving at the
/// nominal speed, weighted by `exp(-(L - L_min)/temperature)`.
pub fn autonomy_model(
    scenario: &Scenario,
    robot: Point2,
    now: f64,
    times: &[f64],
    safety_radius: f64,
) -> Result<GaussianMixture, TrajectoryError> {
    let s = &scenario.settings;
    let routes = autonomy_routes(scenario, robot, safety_radius);
    let cov = anchored_covariance(now, times, s.autonomy_variance, s.autonomy_length_scale);
    let lengths: Vec<f64> = routes.iter().map(|r| route_length(r)).collect();
    let l_min = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut comps = Vec::with_capacity(routes.len());
    let mut weights = Vec::with_capacity(routes.len());
    for (r, l) in routes.iter().zip(&lengths) {
        let points: Vec<Point2> = times.iter().map(|t| point_at(r, s.robot_speed * (t - now))).collect();
        comps.push(GaussianDensity::new(stack(&points), cov.clone())?);
        weights.push(-(l - l_min) / s.length_temperature);
    }
    Ok(GaussianMixture::new(comps, weights)?)
}

/// Per-pedestrian GP posteriors, in crowd order.
pub fn crowd_models(
    scenario: &Scenario,
    log: &ObservationLog,
    times: &[f64],
) -> Result<Vec<GaussianDensity>, TrajectoryError> {
    (0..scenario.crowd.len())
        .map(|i| gp_posterior(log, AgentId::Crowd(i), &scenario.settings.crowd_prior, times))
        .collect()
}

/// Moment-matched mean and per-waypoint standard deviation of a mixture.
pub fn mixture_moments(m: &GaussianMixture) -> (DVector<f64>, Vec<f64>) {
    let w = m.weights();
    let d = m.dim();
    let mut mean = DVector::zeros(d);
    for (c, wi) in m.components().iter().zip(&w) {
        mean += c.mean() * *wi;
    }
    let mut var: DVector<f64> = DVector::zeros(d);
    for (c, wi) in m.components().iter().zip(&w) {
        let diff = c.mean() - &mean;
        for i in 0..d {
            var[i] += wi * (c.covariance()[(i, i)] + diff[i] * diff[i]);
        }
    }
    let std = (0..d / 2)
        .map(|k| (0.5 * (var[2 * k] + var[2 * k + 1])).max(0.0).sqrt())
        .collect();
    (mean, std)
}
