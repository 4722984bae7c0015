//! Geometry, crowd dynamics and the mutable world state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::trajectory::Point2;

/// Static obstacle: a circle or an axis-aligned rectangle (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Point2, radius: f64 },
    Rectangle { min: Point2, max: Point2 },
}

impl Obstacle {
    /// Distance to the boundary; negative inside.
    pub fn signed_distance(&self, p: &Point2) -> f64 {
        match self {
            Obstacle::Circle { center, radius } => (p - center).norm() - radius,
            Obstacle::Rectangle { min, max } => {
                let c = (min + max) * 0.5;
                let half = (max - min) * 0.5;
                let q = (p - c).abs() - half;
                let outside = Point2::new(q.x.max(0.0), q.y.max(0.0)).norm();
                outside + q.x.max(q.y).min(0.0)
            }
        }
    }

    /// Center and a radius that encloses the shape.
    pub fn bounding_circle(&self) -> (Point2, f64) {
        match self {
            Obstacle::Circle { center, radius } => (*center, *radius),
            Obstacle::Rectangle { min, max } => ((min + max) * 0.5, (max - min).norm() * 0.5),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Obstacle::Circle { radius, .. } => *radius > 0.0,
            Obstacle::Rectangle { min, max } => max.x > min.x && max.y > min.y,
        }
    }
}

/// Smallest signed distance from `p` to any obstacle (`inf` with none).
pub fn obstacle_clearance(obstacles: &[Obstacle], p: &Point2) -> f64 {
    obstacles
        .iter()
        .map(|o| o.signed_distance(p))
        .fold(f64::INFINITY, f64::min)
}

/// Smallest obstacle clearance along a polyline, sampled every `spacing`.
pub fn polyline_clearance(obstacles: &[Obstacle], points: &[Point2], spacing: f64) -> f64 {
    let mut best = f64::INFINITY;
    if let Some(p) = points.first() {
        best = obstacle_clearance(obstacles, p);
    }
    for w in points.windows(2) {
        let len = (w[1] - w[0]).norm();
        let n = ((len / spacing).ceil() as usize).max(1);
        for k in 1..=n {
            let p = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
            best = best.min(obstacle_clearance(obstacles, &p));
        }
    }
    best
}

/// A pedestrian's configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdAgentSpec {
    pub start: Point2,
    pub goal: Point2,
    /// m/s
    pub speed: f64,
    /// Heading noise standard deviation in radians per step.
    pub noise: f64,
}

impl CrowdAgentSpec {
    /// Total order used to canonicalize crowd labels.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let key = |s: &Self| [s.start.x, s.start.y, s.goal.x, s.goal.y, s.speed, s.noise];
        key(self)
            .iter()
            .zip(key(other).iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }

    /// Seed derived from the scenario seed and this agent's own parameters,
    /// so that relabeling agents does not change any realization.
    pub fn rng_seed(&self, scenario_seed: u64) -> u64 {
        let mut h = splitmix(scenario_seed ^ 0x5eed_c0de);
        for v in [
            self.start.x,
            self.start.y,
            self.goal.x,
            self.goal.y,
            self.speed,
            self.noise,
        ] {
            h = splitmix(h ^ v.to_bits());
        }
        h
    }
}

/// Deterministically combines two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A pedestrian in motion: heads for its goal at constant speed with
/// Gaussian heading noise, then stops.
#[derive(Debug, Clone)]
pub struct CrowdAgent {
    pub spec: CrowdAgentSpec,
    pub position: Point2,
    motion_rng: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
}

impl CrowdAgent {
    pub fn new(spec: CrowdAgentSpec, scenario_seed: u64) -> Self {
        let seed = spec.rng_seed(scenario_seed);
        Self {
            position: spec.start,
            spec,
            motion_rng: ChaCha8Rng::seed_from_u64(seed),
            sensor_rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 1)),
        }
    }

    /// Position measurement with isotropic Gaussian noise.
    pub fn measure(&mut self, noise_std: f64) -> Point2 {
        if noise_std <= 0.0 {
            return self.position;
        }
        let n = Normal::new(0.0, noise_std).expect("positive std");
        self.position + Point2::new(n.sample(&mut self.sensor_rng), n.sample(&mut self.sensor_rng))
    }

    pub fn step(&mut self, dt: f64) {
        let to_goal = self.spec.goal - self.position;
        let reach = self.spec.speed * dt;
        if to_goal.norm() <= reach {
            self.position = self.spec.goal;
            return;
        }
        let mut heading = to_goal.y.atan2(to_goal.x);
        if self.spec.noise > 0.0 {
            heading += Normal::new(0.0, self.spec.noise)
                .expect("positive std")
                .sample(&mut self.motion_rng);
        }
        self.position += Point2::new(heading.cos(), heading.sin()) * reach;
    }
}

/// Snapshot of the world after a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: usize,
    /// Seconds since the start of the episode.
    pub time: f64,
    pub robot: Point2,
    pub crowd: Vec<Point2>,
}
