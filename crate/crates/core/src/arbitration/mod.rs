//! Shared-control arbitration strategies behind one trait.
//!
//! Every strategy maps the current predictive models (and, for linear
//! blending, the raw operator input) to a shared-control trajectory and the
//! next actuator command. Strategies are registered by name in an
//! [`ArbitratorRegistry`] and selected at run time.
//!
//! # Diagnostics keys
//!
//! Reports carry a map of named scalars. Keys are stable:
//!
//! | key | meaning |
//! |-----|---------|
//! | `k_h`, `k_r` | blend gains (LB, LTB, LTBo) |
//! | `sigma_r` | autonomy variance used to derive default gains |
//! | `operator_absent` | 1 when no operator model was supplied |
//! | `operator_mode` | index of the operator component at `h̄` |
//! | `robot_mode` | index of the robot component dominating the output |
//! | `robot_log_weight.<k>` | robot mode log-weights after conditioning |
//! | `log_normalizer.<k>` | per-mode log-normalizers of that conditioning |
//! | `log_evidence` | log of the conditioning normalizer |
//! | `n_h`, `n_h_unique`, `n_r` | operator samples drawn / distinct, robot modes |
//! | `ctb_weight_sum` | sum of CTB sample weights (1 up to rounding) |
//! | `operator_data_reuse` | 1 when operator data entered twice (LTBo) |
//! | `statistic_std` | spread of the LTBo statistic |
//! | `joint_log_density`, `joint.<term>` | PSC objective and its breakdown |
//! | `ltb_joint_log_density` | joint at the LTB candidate (PSC) |
//! | `candidates`, `best_candidate`, `refine_passes` | PSC search statistics |
//! | `search_budget` | random draws used by the search |
//! | `tie` | 1 when distinct solutions reached the same value |
//! | `infeasible` | 1 when the command exceeded `v_max` and was scaled |

mod ctb;
mod lb;
mod ltb;
mod ltbo;
mod psc;
pub mod search;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ctb::{ctb_with_samples, Ctb};
pub use lb::Lb;
pub use ltb::Ltb;
pub use ltbo::{default_statistic, ltbo_with_statistic, Ltbo, StatisticChoice};
pub use psc::Psc;

use crate::gaussian::{mixture_argmax, GaussianError, GaussianMixture};
use crate::interaction::{InteractionError, InteractionParams, JointModels, JointPoint, OperatorModel, PreparedJoint};
use crate::trajectory::{ObservationLog, OperatorStatistic, Point2, Trajectory, TrajectoryError};
use search::{SearchConfig, SearchOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArbitrationError {
    #[error("unknown arbitration method {name:?}; valid methods: {}", valid.join(", "))]
    UnknownMethod { name: String, valid: Vec<String> },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("provenance error: statistic cites operator observation {index} but only {available} are logged")]
    Provenance { index: usize, available: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

fn contract(msg: impl Into<String>) -> ArbitrationError {
    ArbitrationError::Contract(msg.into())
}

// ============================================================================
// Methods, gains and results
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lb,
    Ltb,
    Ltbo,
    Ctb,
    Psc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Lb, Method::Ltb, Method::Ltbo, Method::Ctb, Method::Psc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lb => "lb",
            Method::Ltb => "ltb",
            Method::Ltbo => "ltbo",
            Method::Ctb => "ctb",
            Method::Psc => "psc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ArbitrationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ArbitrationError::UnknownMethod {
                name: s.to_string(),
                valid: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            })
    }
}

/// Operator and autonomy gains; `k_r` is always `1 − k_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlendGains {
    k_h: f64,
    k_r: f64,
}

impl BlendGains {
    pub fn new(k_h: f64) -> Result<Self, ArbitrationError> {
        if !(0.0..=1.0).contains(&k_h) {
            return Err(contract(format!("K_h must lie in [0, 1], got {k_h}")));
        }
        Ok(Self { k_h, k_r: 1.0 - k_h })
    }

    /// `K_h = σ_R / (σ_R + γ)`: the gains under which linear blending and
    /// precision combination coincide.
    pub fn from_variances(sigma_r: f64, gamma: f64) -> Result<Self, ArbitrationError> {
        if !(sigma_r > 0.0) || !(gamma > 0.0) {
            return Err(contract("variances must be positive"));
        }
        if gamma.is_infinite() {
            return Self::new(0.0);
        }
        Self::new(sigma_r / (sigma_r + gamma))
    }

    pub fn k_h(&self) -> f64 {
        self.k_h
    }

    pub fn k_r(&self) -> f64 {
        self.k_r
    }
}

/// The autonomy variance that makes precision combination reproduce a
/// blend with autonomy gain `k_r`: `σ_R = γ / K_R − γ`.
pub fn autonomy_variance_for_gain(gamma: f64, k_r: f64) -> f64 {
    gamma / k_r - gamma
}

/// `K_h u_h + K_R u_R`.
pub fn linear_blend(u_h: Point2, u_r: Point2, gains: BlendGains) -> Point2 {
    u_h * gains.k_h + u_r * gains.k_r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedControl {
    pub trajectory: Trajectory,
    /// Velocity command: first waypoint displacement over `dt`, scaled down
    /// to `v_max` when `infeasible`.
    pub next_command: Point2,
    pub infeasible: bool,
}

impl SharedControl {
    pub fn from_trajectory(
        trajectory: Trajectory,
        origin: Point2,
        t0: f64,
        v_max: f64,
    ) -> Result<Self, ArbitrationError> {
        let dt = trajectory.times()[0] - t0;
        if !(dt > 0.0) {
            return Err(contract("first waypoint must lie after the current time"));
        }
        let raw = (trajectory.first() - origin) / dt;
        let speed = raw.norm();
        let (next_command, infeasible) = if speed > v_max * (1.0 + 1e-9) {
            (raw * (v_max / speed), true)
        } else {
            (raw, false)
        };
        Ok(Self {
            trajectory,
            next_command,
            infeasible,
        })
    }
}

pub type Diagnostics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationReport {
    pub method: Method,
    pub control: SharedControl,
    #[serde(with = "crate::serde_float::map")]
    pub diagnostics: Diagnostics,
}

// ============================================================================
// Inputs and configuration
// ============================================================================

/// Tunables shared by all strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbitrationConfig {
    /// Fixed operator gain; `None` derives it from the autonomy variance.
    pub k_h: Option<f64>,
    /// Operator samples drawn by CTB.
    pub n_samples: usize,
    pub search_budget: usize,
    pub refine_top: usize,
    pub refine_passes: usize,
    pub analytic_seeds: bool,
    pub v_max: f64,
    pub ltbo_statistic: StatisticChoice,
    /// Spread of the LTBo statistic; `None` uses `√γ`.
    pub ltbo_std: Option<f64>,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self {
            k_h: None,
            n_samples: 200,
            search_budget: 2000,
            refine_top: 3,
            refine_passes: 20,
            analytic_seeds: true,
            v_max: crate::trajectory::DEFAULT_V_MAX,
            ltbo_statistic: StatisticChoice::FullTrajectory,
            ltbo_std: None,
        }
    }
}

impl ArbitrationConfig {
    pub fn validate(&self) -> Result<(), ArbitrationError> {
        if let Some(k) = self.k_h {
            BlendGains::new(k)?;
        }
        if self.n_samples == 0 {
            return Err(contract("n_samples must be at least 1"));
        }
        if !(self.v_max > 0.0) {
            return Err(contract("v_max must be positive"));
        }
        if let Some(s) = self.ltbo_std {
            if !(s > 0.0) {
                return Err(contract("ltbo_std must be positive"));
            }
        }
        Ok(())
    }

    pub fn search(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            budget: self.search_budget,
            refine_top: self.refine_top,
            passes: self.refine_passes,
            analytic_seeds: self.analytic_seeds,
            seed,
        }
    }
}

/// Everything a strategy may read for one arbitration step.
#[derive(Debug, Clone)]
pub struct ArbitrationInput<'a> {
    pub models: &'a JointModels,
    pub params: InteractionParams,
    pub config: &'a ArbitrationConfig,
    /// Current time; the model grid starts after it.
    pub t0: f64,
    /// Current robot position.
    pub origin: Point2,
    /// Raw operator velocity command, used by linear blending.
    pub operator_input: Option<Point2>,
    /// Operator observations, for provenance checks.
    pub operator_log: Option<&'a ObservationLog>,
    pub statistic: Option<&'a OperatorStatistic>,
    pub seed: u64,
}

impl<'a> ArbitrationInput<'a> {
    pub fn new(models: &'a JointModels, config: &'a ArbitrationConfig) -> Self {
        Self {
            models,
            params: InteractionParams::default(),
            config,
            t0: 0.0,
            origin: Point2::zeros(),
            operator_input: None,
            operator_log: None,
            statistic: None,
            seed: 0,
        }
    }

    pub fn dt(&self) -> f64 {
        self.models.times[0] - self.t0
    }

    fn validate(&self) -> Result<(), ArbitrationError> {
        self.params.validate()?;
        self.models.validate()?;
        self.config.validate()?;
        if !(self.dt() > 0.0) {
            return Err(contract("model grid must start after the current time"));
        }
        Ok(())
    }
}

// ============================================================================
// Strategy trait and registry
// ============================================================================

pub trait Arbitrator: Send + Sync {
    fn method(&self) -> Method;

    fn name(&self) -> &'static str {
        self.method().name()
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError>;
}

/// Name → strategy table.
pub struct ArbitratorRegistry {
    entries: BTreeMap<&'static str, Box<dyn Arbitrator>>,
}

impl Default for ArbitratorRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl ArbitratorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// All five built-in strategies.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Lb));
        r.register(Box::new(Ltb));
        r.register(Box::new(Ltbo));
        r.register(Box::new(Ctb));
        r.register(Box::new(Psc));
        r
    }

    /// Adds a strategy, replacing any previous one with the same name.
    pub fn register(&mut self, arbitrator: Box<dyn Arbitrator>) {
        self.entries.insert(arbitrator.name(), arbitrator);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Arbitrator> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn resolve(&self, name: &str) -> Result<&dyn Arbitrator, ArbitrationError> {
        self.get(name).ok_or_else(|| ArbitrationError::UnknownMethod {
            name: name.to_string(),
            valid: self.names().iter().map(|s| s.to_string()).collect(),
        })
    }
}

// ============================================================================
// Shared building blocks
// ============================================================================

fn put(d: &mut Diagnostics, key: impl Into<String>, value: f64) {
    d.insert(key.into(), value);
}

fn put_mode_weights(d: &mut Diagnostics, log_weights: &[f64], log_normalizers: Option<&[f64]>) {
    for (k, w) in log_weights.iter().enumerate() {
        put(d, format!("robot_log_weight.{k}"), *w);
    }
    if let Some(z) = log_normalizers {
        for (k, v) in z.iter().enumerate() {
            put(d, format!("log_normalizer.{k}"), *v);
        }
    }
}

/// `h̄ = argmax p(h | z^h)` and the operator component nearest to it.
pub(crate) fn operator_mode(models: &JointModels) -> Result<Option<(DVector<f64>, usize)>, ArbitrationError> {
    match &models.operator {
        None => Ok(None),
        Some(OperatorModel::Literal(v)) => Ok(Some((v.clone(), 0))),
        Some(OperatorModel::Predictive(m)) => {
            let means: Vec<DVector<f64>> = m.components().iter().map(|c| c.mean().clone()).collect();
            let h = mixture_argmax(m, &means)?;
            let k = dominant_component(m, &h)?;
            Ok(Some((h, k)))
        }
    }
}

/// Component with the largest responsibility at `x` (lowest index on ties).
pub(crate) fn dominant_component(m: &GaussianMixture, x: &DVector<f64>) -> Result<usize, ArbitrationError> {
    let terms = m.prepared()?.component_log_terms(x);
    let mut best = 0;
    for (i, t) in terms.iter().enumerate() {
        if *t > terms[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `f̄^R = argmax p(f^R, f | z^R, z^f)` under `robot`, crowd included.
pub(crate) fn autonomy_mode(
    input: &ArbitrationInput<'_>,
    robot: &GaussianMixture,
) -> Result<(DVector<f64>, usize), ArbitrationError> {
    let f = if input.models.crowd.is_empty() {
        let means: Vec<DVector<f64>> = robot.components().iter().map(|c| c.mean().clone()).collect();
        mixture_argmax(robot, &means)?
    } else {
        let models = JointModels {
            times: input.models.times.clone(),
            operator: None,
            robot: robot.clone(),
            crowd: input.models.crowd.clone(),
        };
        let joint = PreparedJoint::new(&models, &input.params)?;
        search::search(&joint, Vec::new(), &input.config.search(input.seed))?
            .point
            .robot
    };
    let k = dominant_component(robot, &f)?;
    Ok((f, k))
}

/// Configured gains, or `K_h = σ_R/(σ_R + γ)` with `σ_R` the mean diagonal
/// variance of robot component `mode`.
pub(crate) fn gains(
    input: &ArbitrationInput<'_>,
    robot: &GaussianMixture,
    mode: usize,
    diagnostics: &mut Diagnostics,
) -> Result<BlendGains, ArbitrationError> {
    let g = match input.config.k_h {
        Some(k) => BlendGains::new(k)?,
        None => {
            let c = robot.components()[mode].covariance();
            let sigma_r = c.trace() / c.nrows() as f64;
            put(diagnostics, "sigma_r", sigma_r);
            BlendGains::from_variances(sigma_r, input.params.gamma)?
        }
    };
    put(diagnostics, "k_h", g.k_h());
    put(diagnostics, "k_r", g.k_r());
    Ok(g)
}

pub(crate) fn report(
    method: Method,
    input: &ArbitrationInput<'_>,
    robot: &DVector<f64>,
    mut diagnostics: Diagnostics,
) -> Result<ArbitrationReport, ArbitrationError> {
    let trajectory = Trajectory::from_stacked(&input.models.times, robot)?;
    let control = SharedControl::from_trajectory(trajectory, input.origin, input.t0, input.config.v_max)?;
    put(
        &mut diagnostics,
        "infeasible",
        if control.infeasible { 1.0 } else { 0.0 },
    );
    Ok(ArbitrationReport {
        method,
        control,
        diagnostics,
    })
}

/// Without an operator model every strategy reduces to the autonomy mode.
pub(crate) fn autonomy_only(
    method: Method,
    input: &ArbitrationInput<'_>,
) -> Result<ArbitrationReport, ArbitrationError> {
    let mut d = Diagnostics::new();
    let (f, k) = autonomy_mode(input, &input.models.robot)?;
    put(&mut d, "operator_absent", 1.0);
    put(&mut d, "robot_mode", k as f64);
    put(&mut d, "n_r", input.models.robot.len() as f64);
    put_mode_weights(&mut d, input.models.robot.log_weights(), None);
    report(method, input, &f, d)
}

/// Joint point with crowd members at their predicted means.
pub(crate) fn point_with_crowd_means(models: &JointModels, h: Option<DVector<f64>>, robot: DVector<f64>) -> JointPoint {
    let h = match models.operator {
        Some(OperatorModel::Predictive(_)) => h,
        _ => None,
    };
    JointPoint {
        h,
        robot,
        crowd: models.crowd.iter().map(|c| c.mean().clone()).collect(),
    }
}

pub(crate) fn search_diagnostics(d: &mut Diagnostics, out: &SearchOutcome, budget: usize) {
    put(d, "joint_log_density", out.breakdown.total);
    put(d, "joint.agreeability", out.breakdown.agreeability);
    put(d, "joint.crowd_interaction", out.breakdown.crowd_interaction);
    put(d, "joint.operator_likelihood", out.breakdown.operator_likelihood);
    put(d, "joint.robot_likelihood", out.breakdown.robot_likelihood);
    put(d, "joint.crowd_likelihood", out.breakdown.crowd_likelihood);
    put(d, "candidates", out.candidates as f64);
    put(d, "best_candidate", out.best_candidate as f64);
    put(d, "refine_passes", out.passes as f64);
    put(d, "search_budget", budget as f64);
    put(d, "tie", if out.tie { 1.0 } else { 0.0 });
}
