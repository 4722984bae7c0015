//! Trajectories, observation logs and Gaussian-process predictive models
//! over discretized future paths.
//!
//! Stacked vectors interleave coordinates per waypoint:
//! `[x₀, y₀, x₁, y₁, …]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gaussian::{log_sum_exp, GaussianDensity, GaussianError, GaussianMixture};

pub type Point2 = Vector2<f64>;

/// Default speed cap in m/s.
pub const DEFAULT_V_MAX: f64 = 2.0;
/// Jitter added to every GP posterior covariance diagonal (m²).
pub const GP_JITTER: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no observations for agent {0}; supply a prior-only fallback")]
    ColdStart(AgentId),
    #[error("timestamps for agent {agent} must be non-decreasing ({previous} then {next})")]
    NonMonotonicTime { agent: AgentId, previous: f64, next: f64 },
    #[error("noise_std must be positive, got {0}")]
    InvalidNoise(f64),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

fn contract(msg: impl Into<String>) -> TrajectoryError {
    TrajectoryError::Contract(msg.into())
}

/// `[x₀, y₀, x₁, y₁, …]` from waypoints.
pub fn stack(points: &[Point2]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 2, points.iter().flat_map(|p| [p.x, p.y]))
}

pub fn unstack(v: &DVector<f64>) -> Vec<Point2> {
    v.as_slice().chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

// ============================================================================
// Trajectory
// ============================================================================

/// A discretized path: strictly increasing times and one 2-D waypoint each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    times: Vec<f64>,
    points: Vec<Point2>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    times: Vec<f64>,
    points: Vec<Point2>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = TrajectoryError;
    fn try_from(raw: RawTrajectory) -> Result<Self, Self::Error> {
        Trajectory::new(raw.times, raw.points)
    }
}

impl Trajectory {
    pub fn new(times: Vec<f64>, points: Vec<Point2>) -> Result<Self, TrajectoryError> {
        if times.is_empty() {
            return Err(contract("trajectory has no waypoints"));
        }
        if times.len() != points.len() {
            return Err(contract(format!(
                "{} times but {} waypoints",
                times.len(),
                points.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(contract("non-finite trajectory value"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(contract("trajectory times must be strictly increasing"));
        }
        Ok(Self { times, points })
    }

    pub fn from_stacked(times: &[f64], stacked: &DVector<f64>) -> Result<Self, TrajectoryError> {
        if stacked.len() != 2 * times.len() {
            return Err(contract(format!(
                "stacked vector of length {} for {} times",
                stacked.len(),
                times.len()
            )));
        }
        Self::new(times.to_vec(), unstack(stacked))
    }

    /// Constant-velocity path from `origin` over `times` (relative to `t0`).
    pub fn constant_velocity(
        t0: f64,
        origin: Point2,
        velocity: Point2,
        times: &[f64],
    ) -> Result<Self, TrajectoryError> {
        let points = times.iter().map(|t| origin + velocity * (t - t0)).collect();
        Self::new(times.to_vec(), points)
    }

    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.points)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn same_grid(&self, other: &Trajectory) -> bool {
        self.times.len() == other.times.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    }

    /// Waypoint-wise `k_h · self + (1 − k_h) · other`.
    pub fn blend(&self, other: &Trajectory, k_h: f64) -> Result<Trajectory, TrajectoryError> {
        if !self.same_grid(other) {
            return Err(contract("blended trajectories use different time grids"));
        }
        let k_r = 1.0 - k_h;
        let points = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a * k_h + b * k_r)
            .collect();
        Trajectory::new(self.times.clone(), points)
    }

    /// Indices `i` whose segment into waypoint `i` exceeds `v_max`; the
    /// segment into waypoint 0 starts at `start` when given.
    pub fn speed_violations(&self, start: Option<(f64, Point2)>, v_max: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = start;
        for (i, (t, p)) in self.times.iter().zip(&self.points).enumerate() {
            if let Some((t0, p0)) = prev {
                let speed = (p - p0).norm() / (t - t0);
                if speed > v_max * (1.0 + 1e-9) {
                    out.push(i);
                }
            }
            prev = Some((*t, *p));
        }
        out
    }

    pub fn path_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

// ============================================================================
// Agents and observations
// ============================================================================

/// Which agent an observation track belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentId {
    Operator,
    Robot,
    Crowd(usize),
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Operator => write!(f, "operator"),
            AgentId::Robot => write!(f, "robot"),
            AgentId::Crowd(i) => write!(f, "crowd-{i}"),
        }
    }
}

impl FromStr for AgentId {
    type Err = TrajectoryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "operator" => Ok(AgentId::Operator),
            "robot" => Ok(AgentId::Robot),
            _ => s
                .strip_prefix("crowd-")
                .and_then(|i| i.parse().ok())
                .map(AgentId::Crowd)
                .ok_or_else(|| contract(format!("unknown agent id {s:?}"))),
        }
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub agent: AgentId,
    pub times: Vec<f64>,
    pub points: Vec<Point2>,
    pub noise_std: Vec<f64>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Timestamped position measurements for every agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationLog {
    pub tracks: Vec<Track>,
}

impl ObservationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, agent: AgentId, time: f64, point: Point2, noise_std: f64) -> Result<usize, TrajectoryError> {
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(TrajectoryError::InvalidNoise(noise_std));
        }
        if !time.is_finite() || !point.x.is_finite() || !point.y.is_finite() {
            return Err(contract("non-finite observation"));
        }
        let idx = match self.tracks.iter().position(|t| t.agent == agent) {
            Some(i) => i,
            None => {
                self.tracks.push(Track {
                    agent,
                    times: vec![],
                    points: vec![],
                    noise_std: vec![],
                });
                self.tracks.len() - 1
            }
        };
        let track = &mut self.tracks[idx];
        if let Some(&previous) = track.times.last() {
            if time < previous {
                return Err(TrajectoryError::NonMonotonicTime {
                    agent,
                    previous,
                    next: time,
                });
            }
        }
        track.times.push(time);
        track.points.push(point);
        track.noise_std.push(noise_std);
        Ok(track.times.len() - 1)
    }

    pub fn track(&self, agent: AgentId) -> Option<&Track> {
        self.tracks.iter().find(|t| t.agent == agent)
    }

    pub fn count(&self, agent: AgentId) -> usize {
        self.track(agent).map_or(0, |t| t.len())
    }

    /// Checks the log-level invariants (useful after deserialization).
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        for t in &self.tracks {
            if t.times.len() != t.points.len() || t.times.len() != t.noise_std.len() {
                return Err(contract(format!("track {} has ragged fields", t.agent)));
            }
            if let Some(n) = t.noise_std.iter().find(|n| !(**n > 0.0)) {
                return Err(TrajectoryError::InvalidNoise(*n));
            }
            if let Some(w) = t.times.windows(2).find(|w| w[1] < w[0]) {
                return Err(TrajectoryError::NonMonotonicTime {
                    agent: t.agent,
                    previous: w[0],
                    next: w[1],
                });
            }
        }
        Ok(())
    }
}

// ============================================================================
// Operator statistics
// ============================================================================

/// What an operator statistic summarizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatisticValue {
    /// Final waypoint of the horizon.
    GoalPoint {
        point: Point2,
    },
    /// One waypoint at a grid time.
    Waypoint {
        time: f64,
        point: Point2,
    },
    FullTrajectory {
        trajectory: Trajectory,
    },
}

/// A summary `G` of operator data together with the observation indices it
/// was computed from and the spread used when conditioning on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorStatistic {
    pub value: StatisticValue,
    /// Standard deviation in meters; `inf` makes the statistic uninformative.
    pub std: f64,
    /// Indices into the operator track of the observation log.
    pub source: Vec<usize>,
}

impl OperatorStatistic {
    /// Every source index must refer to a logged operator observation.
    pub fn check_provenance(&self, log: &ObservationLog) -> Result<(), usize> {
        let n = log.count(AgentId::Operator);
        match self.source.iter().find(|i| **i >= n) {
            Some(i) => Err(*i),
            None => Ok(()),
        }
    }
}

// ============================================================================
// Gaussian-process prior and posterior
// ============================================================================

/// Squared-exponential GP prior shared by both coordinate axes, with a
/// constant-velocity mean extrapolated from the latest observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    /// Kernel length-scale in seconds.
    pub length_scale: f64,
    /// Kernel signal variance in m².
    pub signal_variance: f64,
    /// Number of most recent observations used.
    pub window: usize,
    /// Observations used for the velocity estimate of the mean function.
    pub velocity_window: usize,
}

impl Default for GpPrior {
    fn default() -> Self {
        Self {
            length_scale: 2.0,
            signal_variance: 1.0,
            window: 12,
            velocity_window: 4,
        }
    }
}

impl GpPrior {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.length_scale > 0.0) || !(self.signal_variance > 0.0) {
            return Err(contract("GP length-scale and signal variance must be positive"));
        }
        if self.window == 0 || self.velocity_window == 0 {
            return Err(contract("GP windows must be positive"));
        }
        Ok(())
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.length_scale;
        self.signal_variance * (-0.5 * d * d).exp()
    }
}

/// Least-squares slope of position over time; zero when time does not vary.
fn velocity_estimate(times: &[f64], points: &[Point2]) -> Point2 {
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let pm = points.iter().fold(Point2::zeros(), |a, p| a + p) / n;
    let mut stt = 0.0;
    let mut stp = Point2::zeros();
    for (t, p) in times.iter().zip(points) {
        stt += (t - tm) * (t - tm);
        stp += (p - pm) * (t - tm);
    }
    if stt <= 1e-12 {
        Point2::zeros()
    } else {
        stp / stt
    }
}

/// Interleaves a per-axis `n×n` covariance into a `2n×2n` stacked one.
pub fn interleave_axes(per_axis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = per_axis.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        if r % 2 == c % 2 {
            per_axis[(r / 2, c / 2)]
        } else {
            0.0
        }
    })
}

/// GP regression posterior over the stacked waypoints at `query_times`,
/// independently per axis.
pub fn gp_posterior(
    log: &ObservationLog,
    agent: AgentId,
    prior: &GpPrior,
    query_times: &[f64],
) -> Result<GaussianDensity, TrajectoryError> {
    prior.validate()?;
    if query_times.is_empty() {
        return Err(contract("no query times"));
    }
    let track = match log.track(agent) {
        Some(t) if !t.is_empty() => t,
        _ => return Err(TrajectoryError::ColdStart(agent)),
    };
    let start = track.len().saturating_sub(prior.window);
    let times = &track.times[start..];
    let points = &track.points[start..];
    let noise = &track.noise_std[start..];
    let t_last = *times.last().expect("non-empty");
    if query_times.iter().any(|q| *q < t_last - 1e-12) {
        return Err(contract("query times must not precede the last observation"));
    }

    let vstart = times.len().saturating_sub(prior.velocity_window);
    let velocity = velocity_estimate(&times[vstart..], &points[vstart..]);
    let p_last = *points.last().expect("non-empty");
    let mean_fn = |t: f64| p_last + velocity * (t - t_last);

    let n = times.len();
    let m = query_times.len();
    let k_oo = DMatrix::from_fn(n, n, |i, j| {
        prior.kernel(times[i], times[j]) + if i == j { noise[i] * noise[i] } else { 0.0 }
    });
    let k_qo = DMatrix::from_fn(m, n, |i, j| prior.kernel(query_times[i], times[j]));
    let k_qq = DMatrix::from_fn(m, m, |i, j| prior.kernel(query_times[i], query_times[j]));
    let chol = k_oo
        .cholesky()
        .ok_or_else(|| contract("observation covariance is not positive definite"))?;

    let mut mean = DVector::zeros(2 * m);
    for axis in 0..2 {
        let resid = DVector::from_fn(n, |i, _| points[i][axis] - mean_fn(times[i])[axis]);
        let alpha = chol.solve(&resid);
        let correction = &k_qo * alpha;
        for (i, q) in query_times.iter().enumerate() {
            mean[2 * i + axis] = mean_fn(*q)[axis] + correction[i];
        }
    }
    let solved = chol.solve(&k_qo.transpose());
    let mut cov = &k_qq - &k_qo * solved;
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..m {
        cov[(i, i)] += GP_JITTER;
    }
    Ok(GaussianDensity::new(mean, interleave_axes(&cov))?)
}

fn grid_index(times: &[f64], t: f64) -> Option<usize> {
    times.iter().position(|q| (q - t).abs() <= 1e-9 * (1.0 + t.abs()))
}

/// Conditions a stacked-waypoint density on a pseudo-observation of the
/// waypoint at `goal_time` located at `goal`, with isotropic spread
/// `goal_std`. `goal_std = inf` returns `base` unchanged.
pub fn goal_conditioned_posterior(
    base: &GaussianDensity,
    times: &[f64],
    goal: Point2,
    goal_time: f64,
    goal_std: f64,
) -> Result<GaussianDensity, TrajectoryError> {
    if base.dim() != 2 * times.len() {
        return Err(contract("density dimension does not match the time grid"));
    }
    let k = grid_index(times, goal_time)
        .ok_or_else(|| contract(format!("goal time {goal_time} is not on the query grid")))?;
    if !(goal_std > 0.0) {
        return Err(contract("goal_std must be positive"));
    }
    if goal_std.is_infinite() {
        return Ok(base.clone());
    }
    let sigma = base.covariance();
    let mu = base.mean();
    let d = base.dim();
    let rows = [2 * k, 2 * k + 1];
    let s = DMatrix::from_fn(2, 2, |i, j| {
        sigma[(rows[i], rows[j])] + if i == j { goal_std * goal_std } else { 0.0 }
    });
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| contract("singular innovation covariance"))?;
    let cross = DMatrix::from_fn(d, 2, |r, j| sigma[(r, rows[j])]);
    let gain = &cross * s_inv;
    let innovation = DVector::from_vec(vec![goal.x - mu[rows[0]], goal.y - mu[rows[1]]]);
    let mean = mu + &gain * innovation;
    let mut cov = sigma - &gain * cross.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianDensity::from_parts(mean, cov))
}

// ============================================================================
// Sampling and mixture fitting
// ============================================================================

/// Deterministic draws from `density`, each with its normalized log-density
/// as log-weight. Degenerate (all-zero) covariances give uniform weights.
pub fn sample_trajectories(
    density: &GaussianDensity,
    times: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<(Trajectory, f64)>, TrajectoryError> {
    if count == 0 {
        return Err(contract("sample count must be at least 1"));
    }
    if density.dim() != 2 * times.len() {
        return Err(contract("density dimension does not match the time grid"));
    }
    let draws = sample_stacked(density, count, seed);
    let log_w = normalized_log_densities(density, &draws);
    draws
        .iter()
        .zip(log_w)
        .map(|(x, w)| Ok((Trajectory::from_stacked(times, x)?, w)))
        .collect()
}

pub(crate) fn sample_stacked(density: &GaussianDensity, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = density.sampler();
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

pub(crate) fn normalized_log_densities(density: &GaussianDensity, draws: &[DVector<f64>]) -> Vec<f64> {
    let raw: Vec<f64> = match density.factor("density") {
        Ok(f) => {
            let c = -0.5 * (density.dim() as f64 * crate::gaussian::LN_2PI + f.log_det());
            draws
                .iter()
                .map(|x| c - 0.5 * f.quad_form(&(x - density.mean())))
                .collect()
        }
        Err(_) => vec![0.0; draws.len()],
    };
    let total = log_sum_exp(&raw);
    raw.into_iter().map(|v| v - total).collect()
}

/// Regularization added to every fitted covariance diagonal (m²).
pub const EM_REGULARIZATION: f64 = 1e-6;

/// Weighted EM over stacked samples with k-means++ seeding on the final
/// waypoints. `samples` carry log-weights (any normalization).
pub fn fit_mixture(samples: &[(DVector<f64>, f64)], k: usize, seed: u64) -> Result<GaussianMixture, TrajectoryError> {
    if samples.is_empty() {
        return Err(contract("empty sample set"));
    }
    if k == 0 || samples.len() < k {
        return Err(contract(format!(
            "need 1 ≤ k ≤ sample count, got k = {k} for {} samples",
            samples.len()
        )));
    }
    let d = samples[0].0.len();
    if d < 2 || samples.iter().any(|(x, _)| x.len() != d) {
        return Err(contract("samples must share one even dimension"));
    }
    let log_w: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let total = log_sum_exp(&log_w);
    if !total.is_finite() {
        return Err(contract("sample log-weights are not finite"));
    }
    let w: Vec<f64> = log_w.iter().map(|v| (v - total).exp()).collect();
    let xs: Vec<&DVector<f64>> = samples.iter().map(|s| &s.0).collect();

    if k == 1 {
        let (mean, cov) = weighted_moments(&xs, &w, d);
        return Ok(GaussianMixture::single(GaussianDensity::new(mean, cov)?));
    }

    // k-means++ on endpoints
    let endpoint = |x: &DVector<f64>| Point2::new(x[d - 2], x[d - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Point2> = vec![endpoint(xs[weighted_pick(&w, &mut rng)])];
    while centers.len() < k {
        let scores: Vec<f64> = xs
            .iter()
            .zip(&w)
            .map(|(x, wi)| {
                let e = endpoint(x);
                wi * centers
                    .iter()
                    .map(|c| (e - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let pick = if scores.iter().sum::<f64>() > 0.0 {
            weighted_pick(&scores, &mut rng)
        } else {
            weighted_pick(&w, &mut rng)
        };
        centers.push(endpoint(xs[pick]));
    }
    let mut resp: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let e = endpoint(x);
            let mut best = 0;
            for (j, c) in centers.iter().enumerate() {
                if (e - c).norm_squared() < (e - centers[best]).norm_squared() {
                    best = j;
                }
            }
            (0..k).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();

    let mut mixture: Option<GaussianMixture> = None;
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..200 {
        // M-step
        let mut comps = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        for j in 0..k {
            let wj: Vec<f64> = w.iter().zip(&resp).map(|(wi, r)| wi * r[j]).collect();
            let mass: f64 = wj.iter().sum();
            if mass <= 1e-300 {
                match &mixture {
                    Some(m) => comps.push(m.components()[j].clone()),
                    None => {
                        let (mean, cov) = weighted_moments(&xs, &w, d);
                        comps.push(GaussianDensity::new(mean, cov)?);
                    }
                }
                weights.push(f64::NEG_INFINITY);
                continue;
            }
            let norm: Vec<f64> = wj.iter().map(|v| v / mass).collect();
            let (mean, cov) = weighted_moments(&xs, &norm, d);
            comps.push(GaussianDensity::new(mean, cov)?);
            weights.push(mass.ln());
        }
        let mix = GaussianMixture::new(comps, weights)?;
        // E-step
        let prepared = mix.prepared()?;
        let mut loglik = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let terms = prepared.component_log_terms(x);
            let lse = log_sum_exp(&terms);
            loglik += w[i] * lse;
            for j in 0..k {
                resp[i][j] = (terms[j] - lse).exp();
            }
        }
        mixture = Some(mix);
        if (loglik - previous).abs() <= 1e-10 * (1.0 + loglik.abs()) {
            break;
        }
        previous = loglik;
    }
    Ok(mixture.expect("at least one EM iteration"))
}

fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn weighted_moments(xs: &[&DVector<f64>], w: &[f64], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean = DVector::zeros(d);
    for (x, wi) in xs.iter().zip(w) {
        mean.axpy(*wi, x, 1.0);
    }
    let mut cov = DMatrix::zeros(d, d);
    for (x, wi) in xs.iter().zip(w) {
        if *wi == 0.0 {
            continue;
        }
        let c = *x - &mean;
        cov.ger(*wi, &c, &c, 1.0);
    }
    cov = (&cov + cov.transpose()) * 0.5;
    for i in 0..d {
        cov[(i, i)] += EM_REGULARIZATION;
    }
    (mean, cov)
}

/// Marginal standard deviation of each waypoint (root of the mean of the
/// two axis variances).
pub fn waypoint_std(density: &GaussianDensity) -> Vec<f64> {
    let c = density.covariance();
    (0..density.dim() / 2)
        .map(|i| (0.5 * (c[(2 * i, 2 * i)] + c[(2 * i + 1, 2 * i + 1)])).max(0.0).sqrt())
        .collect()
}

/// Grid `t0 + dt, …, t0 + n·dt`.
pub fn horizon_times(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| t0 + dt * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_log(noise: f64) -> ObservationLog {
        let mut log = ObservationLog::new();
        log.push(AgentId::Operator, 0.0, Point2::new(0.0, 0.0), noise).unwrap();
        log.push(AgentId::Operator, 1.0, Point2::new(1.0, 0.5), noise).unwrap();
        log
    }

    #[test]
    fn trajectory_json_round_trip() {
        let t = Trajectory::new(vec![0.0, 0.5], vec![Point2::new(1.0, 2.0), Point2::new(1.5, 2.5)]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"times":[0.0,0.5],"points":[[1.0,2.0],[1.5,2.5]]}"#);
        let back: Trajectory = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<Trajectory>(r#"{"times":[1.0,0.5],"points":[[0,0],[0,0]]}"#).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::new(vec![], vec![]).is_err());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![Point2::zeros(); 2]).is_err());
        assert!(Trajectory::new(vec![0.0], vec![Point2::zeros(); 2]).is_err());
        let t = Trajectory::new(vec![1.0, 2.0], vec![Point2::new(0.0, 0.0), Point2::new(3.0, 0.0)]).unwrap();
        assert_eq!(t.speed_violations(None, 2.0), vec![1]);
        assert_eq!(t.speed_violations(Some((0.0, Point2::new(-1.0, 0.0))), 2.0), vec![1]);
        assert!(t.speed_violations(None, 3.0).is_empty());
    }

    #[test]
    fn agent_ids_and_log_json() {
        for a in [AgentId::Operator, AgentId::Robot, AgentId::Crowd(3)] {
            assert_eq!(a.to_string().parse::<AgentId>().unwrap(), a);
        }
        assert!("crowd-x".parse::<AgentId>().is_err());
        let log = line_log(0.1);
        let v = serde_json::to_value(&log).unwrap();
        assert_eq!(v["tracks"][0]["agent"], "operator");
        assert_eq!(v["tracks"][0]["noise_std"][1], 0.1);
        let back: ObservationLog = serde_json::from_value(v).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn log_rejects_bad_observations() {
        let mut log = line_log(0.1);
        assert!(matches!(
            log.push(AgentId::Operator, 0.5, Point2::zeros(), 0.1),
            Err(TrajectoryError::NonMonotonicTime { .. })
        ));
        assert!(matches!(
            log.push(AgentId::Operator, 2.0, Point2::zeros(), 0.0),
            Err(TrajectoryError::InvalidNoise(_))
        ));
        assert!(log.push(AgentId::Operator, 1.0, Point2::zeros(), 0.1).is_ok());
    }

    #[test]
    fn stationary_single_observation() {
        let mut log = ObservationLog::new();
        log.push(AgentId::Robot, 2.0, Point2::zeros(), 0.05).unwrap();
        let q = horizon_times(2.0, 0.25, 8);
        let post = gp_posterior(&log, AgentId::Robot, &GpPrior::default(), &q).unwrap();
        assert!(post.mean().amax() < 1e-12);
    }

    #[test]
    fn cold_start_and_past_queries() {
        let log = ObservationLog::new();
        assert_eq!(
            gp_posterior(&log, AgentId::Crowd(0), &GpPrior::default(), &[1.0]).unwrap_err(),
            TrajectoryError::ColdStart(AgentId::Crowd(0))
        );
        assert!(gp_posterior(&line_log(0.1), AgentId::Operator, &GpPrior::default(), &[0.5]).is_err());
    }

    #[test]
    fn line_continues_against_explicit_regression() {
        let log = line_log(1e-4);
        let prior = GpPrior::default();
        let q = [1.25];
        let post = gp_posterior(&log, AgentId::Operator, &prior, &q).unwrap();
        assert!((post.mean()[0] - 1.25).abs() < 1e-3);
        assert!((post.mean()[1] - 0.625).abs() < 1e-3);
        // explicit 2x2 regression with zero mean function on the x axis
        let k = |a: f64, b: f64| prior.kernel(a, b);
        let n2 = 1e-8;
        let a = k(0.0, 0.0) + n2;
        let b = k(0.0, 1.0);
        let det = a * a - b * b;
        let inv = [[a / det, -b / det], [-b / det, a / det]];
        let ks = [k(1.25, 0.0), k(1.25, 1.0)];
        let y = [0.0, 1.0];
        let alpha = [inv[0][0] * y[0] + inv[0][1] * y[1], inv[1][0] * y[0] + inv[1][1] * y[1]];
        let zero_mean_pred = ks[0] * alpha[0] + ks[1] * alpha[1];
        // the zero-mean GP reverts toward 0; the constant-velocity mean does not
        assert!(zero_mean_pred < 1.25 - 1e-3);
        let var = k(1.25, 1.25)
            - (ks[0] * (inv[0][0] * ks[0] + inv[0][1] * ks[1]) + ks[1] * (inv[1][0] * ks[0] + inv[1][1] * ks[1]));
        assert!((post.covariance()[(0, 0)] - var - GP_JITTER).abs() < 1e-9);
    }

    #[test]
    fn variance_grows_with_lead_time() {
        let log = line_log(0.05);
        let q = horizon_times(1.0, 0.25, 20);
        let post = gp_posterior(&log, AgentId::Operator, &GpPrior::default(), &q).unwrap();
        let s = waypoint_std(&post);
        assert!(s.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn goal_conditioning_limits() {
        let log = line_log(0.05);
        let q = horizon_times(1.0, 0.25, 8);
        let base = gp_posterior(&log, AgentId::Operator, &GpPrior::default(), &q).unwrap();
        let goal = Point2::new(3.0, -1.0);
        let same = goal_conditioned_posterior(&base, &q, goal, 3.0, f64::INFINITY).unwrap();
        assert!(same.kl_divergence(&base).unwrap().abs() < 1e-9);
        let loose = goal_conditioned_posterior(&base, &q, goal, 3.0, 1e7).unwrap();
        assert!(loose.kl_divergence(&base).unwrap().abs() < 1e-9);
        let pinned = goal_conditioned_posterior(&base, &q, goal, 3.0, 1e-6).unwrap();
        let m = pinned.mean();
        assert!((m[14] - 3.0).abs() < 1e-4 && (m[15] + 1.0).abs() < 1e-4);
        assert!(goal_conditioned_posterior(&base, &q, goal, 3.1, 0.1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_draw_is_mean() {
        let g = GaussianDensity::new(stack(&[Point2::new(1.0, 2.0)]), DMatrix::zeros(2, 2)).unwrap();
        let s = sample_trajectories(&g, &[0.5], 1, 7).unwrap();
        assert_eq!(s[0].0.first(), Point2::new(1.0, 2.0));
        assert_eq!(s[0].1, 0.0);
        let g = GaussianDensity::isotropic(DVector::zeros(4), 0.3).unwrap();
        let a = sample_trajectories(&g, &[0.1, 0.2], 5, 11).unwrap();
        let b = sample_trajectories(&g, &[0.1, 0.2], 5, 11).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.iter().map(|s| s.1.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(sample_trajectories(&g, &[0.1, 0.2], 0, 11).is_err());
    }

    #[test]
    fn fit_single_component_has_unit_weight() {
        let g = GaussianDensity::isotropic(DVector::from_vec(vec![1.0, -1.0]), 0.2).unwrap();
        let draws = sample_stacked(&g, 50, 3);
        let samples: Vec<_> = draws.into_iter().map(|x| (x, 0.3)).collect();
        let m = fit_mixture(&samples, 1, 0).unwrap();
        assert_eq!(m.log_weights(), &[0.0]);
        assert!(fit_mixture(&[], 1, 0).is_err());
        assert!(fit_mixture(&samples[..1], 2, 0).is_err());
    }
}
