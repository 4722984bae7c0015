//! Interaction potentials and the joint log-density over operator, robot
//! and crowd trajectories.
//!
//! * agreeability `ψ(h, f^R) = exp(−|h − f^R|² / 2γ)`;
//! * crowd cooperation `ψ(f^R, f) = Π_{i,t} (1 − α·exp(−|f^R_t − f^i_t|² / 2ℓ²))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{
    log_sum_exp, GaussianDensity, GaussianError, GaussianMixture, MixtureProduct, PreparedGaussian, PreparedMixture,
    SpdFactor, LN_2PI,
};
use crate::trajectory::{Trajectory, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: no predictive model for {0}")]
    MissingModel(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

fn contract(msg: impl Into<String>) -> InteractionError {
    InteractionError::Contract(msg.into())
}

/// Which waypoints the agreeability potential compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Every waypoint of the horizon.
    #[default]
    FullTrajectory,
    /// Only the next waypoint.
    NextStep,
}

impl Granularity {
    /// Number of stacked coordinates coupled by agreeability.
    pub fn coupled_dims(self, dim: usize) -> usize {
        match self {
            Granularity::FullTrajectory => dim,
            Granularity::NextStep => dim.min(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionParams {
    /// Operator-autonomy coupling variance in m²; `inf` decouples.
    pub gamma: f64,
    pub crowd_alpha: f64,
    /// Crowd repulsion length-scale in meters.
    pub crowd_lengthscale: f64,
    /// Clearance below which a collision is recorded, in meters.
    pub safety_radius: f64,
    pub granularity: Granularity,
}

impl Default for InteractionParams {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            crowd_alpha: 0.9,
            crowd_lengthscale: 0.6,
            safety_radius: 0.4,
            granularity: Granularity::FullTrajectory,
        }
    }
}

impl InteractionParams {
    pub fn validate(&self) -> Result<(), InteractionError> {
        if !(self.gamma > 0.0) {
            return Err(contract(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.crowd_alpha > 0.0 && self.crowd_alpha < 1.0) {
            return Err(contract(format!(
                "crowd_alpha must lie in (0, 1), got {}",
                self.crowd_alpha
            )));
        }
        if !(self.crowd_lengthscale > 0.0) || !self.crowd_lengthscale.is_finite() {
            return Err(contract("crowd_lengthscale must be positive and finite"));
        }
        if !(self.safety_radius > 0.0) || !self.safety_radius.is_finite() {
            return Err(contract("safety_radius must be positive and finite"));
        }
        Ok(())
    }
}

// ============================================================================
// Potentials
// ============================================================================

/// `−(1/2γ) Σ |h_t − f_t|²` over the coupled coordinates.
pub fn agreeability_log_stacked(h: &DVector<f64>, f: &DVector<f64>, gamma: f64, granularity: Granularity) -> f64 {
    let n = granularity.coupled_dims(h.len());
    let sq: f64 = h
        .rows(0, n)
        .iter()
        .zip(f.rows(0, n).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if gamma.is_infinite() {
        return 0.0;
    }
    -sq / (2.0 * gamma)
}

pub fn agreeability_log(h: &Trajectory, f_r: &Trajectory, params: &InteractionParams) -> Result<f64, InteractionError> {
    if !h.same_grid(f_r) {
        return Err(contract("agreeability over trajectories on different grids"));
    }
    Ok(agreeability_log_stacked(
        &h.stacked(),
        &f_r.stacked(),
        params.gamma,
        params.granularity,
    ))
}

#[inline]
fn repulsion_log(d2: f64, alpha: f64, ell: f64) -> f64 {
    (-alpha * (-d2 / (2.0 * ell * ell)).exp()).ln_1p()
}

/// Crowd potential between one robot and one pedestrian trajectory.
pub fn crowd_pair_log(f: &DVector<f64>, g: &DVector<f64>, alpha: f64, ell: f64) -> f64 {
    f.as_slice()
        .chunks_exact(2)
        .zip(g.as_slice().chunks_exact(2))
        .map(|(a, b)| {
            let dx = a[0] - b[0];
            let dy = a[1] - b[1];
            repulsion_log(dx * dx + dy * dy, alpha, ell)
        })
        .sum()
}

/// Gradient of `crowd_pair_log` with respect to `f` (the negative of the
/// gradient with respect to `g`).
pub fn crowd_pair_gradient(f: &DVector<f64>, g: &DVector<f64>, alpha: f64, ell: f64) -> DVector<f64> {
    let mut out = DVector::zeros(f.len());
    for t in 0..f.len() / 2 {
        let dx = f[2 * t] - g[2 * t];
        let dy = f[2 * t + 1] - g[2 * t + 1];
        let e = alpha * (-(dx * dx + dy * dy) / (2.0 * ell * ell)).exp();
        let s = e / (1.0 - e) / (ell * ell);
        out[2 * t] = s * dx;
        out[2 * t + 1] = s * dy;
    }
    out
}

/// Sum after sorting, so that the result does not depend on input order.
pub(crate) fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.into_iter().sum()
}

pub fn crowd_avoidance_log(
    f_r: &Trajectory,
    crowd: &[Trajectory],
    params: &InteractionParams,
) -> Result<f64, InteractionError> {
    if crowd.iter().any(|c| !c.same_grid(f_r)) {
        return Err(contract("crowd trajectory on a different grid"));
    }
    let f = f_r.stacked();
    Ok(order_free_sum(
        crowd
            .iter()
            .map(|c| crowd_pair_log(&f, &c.stacked(), params.crowd_alpha, params.crowd_lengthscale))
            .collect(),
    ))
}

// ============================================================================
// Joint density
// ============================================================================

/// The operator's contribution to the joint.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorModel {
    /// Operator data taken literally: `h` is fixed to this stacked vector.
    Literal(DVector<f64>),
    /// Predictive mixture `p(h | z^h)`.
    Predictive(GaussianMixture),
}

impl OperatorModel {
    pub fn dim(&self) -> usize {
        match self {
            OperatorModel::Literal(v) => v.len(),
            OperatorModel::Predictive(m) => m.dim(),
        }
    }
}

/// All predictive models on one shared time grid.
#[derive(Debug, Clone)]
pub struct JointModels {
    pub times: Vec<f64>,
    pub operator: Option<OperatorModel>,
    pub robot: GaussianMixture,
    pub crowd: Vec<GaussianDensity>,
}

impl JointModels {
    pub fn dim(&self) -> usize {
        2 * self.times.len()
    }

    pub fn validate(&self) -> Result<(), InteractionError> {
        let d = self.dim();
        if d == 0 {
            return Err(contract("empty time grid"));
        }
        if self.robot.dim() != d {
            return Err(contract("robot model does not match the time grid"));
        }
        if let Some(op) = &self.operator {
            if op.dim() != d {
                return Err(contract("operator model does not match the time grid"));
            }
        }
        if self.crowd.iter().any(|c| c.dim() != d) {
            return Err(contract("crowd model does not match the time grid"));
        }
        Ok(())
    }
}

/// A point in the joint space. `h` is ignored for a literal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPoint {
    pub h: Option<DVector<f64>>,
    pub robot: DVector<f64>,
    pub crowd: Vec<DVector<f64>>,
}

/// Per-term decomposition of the unnormalized joint log-density.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointBreakdown {
    pub agreeability: f64,
    pub crowd_interaction: f64,
    pub operator_likelihood: f64,
    pub robot_likelihood: f64,
    pub crowd_likelihood: f64,
    pub total: f64,
}

impl JointBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.agreeability
            + self.crowd_interaction
            + self.operator_likelihood
            + self.robot_likelihood
            + self.crowd_likelihood;
        self
    }
}

#[derive(Debug, Clone)]
enum PreparedOperator {
    Literal(DVector<f64>),
    Predictive(PreparedMixture),
}

/// Joint evaluator with all factorizations cached.
#[derive(Debug, Clone)]
pub struct PreparedJoint {
    params: InteractionParams,
    dim: usize,
    operator: Option<PreparedOperator>,
    robot: PreparedMixture,
    crowd: Vec<PreparedGaussian>,
}

impl PreparedJoint {
    pub fn new(models: &JointModels, params: &InteractionParams) -> Result<Self, InteractionError> {
        params.validate()?;
        models.validate()?;
        let operator = match &models.operator {
            None => None,
            Some(OperatorModel::Literal(v)) => Some(PreparedOperator::Literal(v.clone())),
            Some(OperatorModel::Predictive(m)) => Some(PreparedOperator::Predictive(m.prepared()?)),
        };
        let crowd = models
            .crowd
            .iter()
            .map(|c| c.prepared())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params: *params,
            dim: models.dim(),
            operator,
            robot: models.robot.prepared()?,
            crowd,
        })
    }

    pub fn params(&self) -> &InteractionParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn crowd_len(&self) -> usize {
        self.crowd.len()
    }

    pub fn robot(&self) -> &PreparedMixture {
        &self.robot
    }

    pub fn has_free_operator(&self) -> bool {
        matches!(self.operator, Some(PreparedOperator::Predictive(_)))
    }

    pub fn literal_operator(&self) -> Option<&DVector<f64>> {
        match &self.operator {
            Some(PreparedOperator::Literal(v)) => Some(v),
            _ => None,
        }
    }

    pub fn operator_mixture(&self) -> Option<&PreparedMixture> {
        match &self.operator {
            Some(PreparedOperator::Predictive(m)) => Some(m),
            _ => None,
        }
    }

    pub fn crowd_models(&self) -> &[PreparedGaussian] {
        &self.crowd
    }

    /// Checks the point against the models.
    pub fn check(&self, point: &JointPoint) -> Result<(), InteractionError> {
        if point.robot.len() != self.dim {
            return Err(contract("robot trajectory does not match the grid"));
        }
        match (&self.operator, &point.h) {
            (None, Some(_)) => return Err(InteractionError::MissingModel("operator".into())),
            (Some(PreparedOperator::Predictive(_)), None) => {
                return Err(contract("an operator trajectory is required"))
            }
            (_, Some(h)) if h.len() != self.dim => return Err(contract("operator trajectory does not match the grid")),
            _ => {}
        }
        if point.crowd.len() > self.crowd.len() {
            return Err(InteractionError::MissingModel(format!("crowd-{}", self.crowd.len())));
        }
        if point.crowd.len() < self.crowd.len() {
            return Err(contract(format!(
                "{} crowd trajectories for {} crowd models",
                point.crowd.len(),
                self.crowd.len()
            )));
        }
        if point.crowd.iter().any(|c| c.len() != self.dim) {
            return Err(contract("crowd trajectory does not match the grid"));
        }
        Ok(())
    }

    /// The operator trajectory entering agreeability, if any.
    pub fn effective_h<'a>(&'a self, point: &'a JointPoint) -> Option<&'a DVector<f64>> {
        match &self.operator {
            None => None,
            Some(PreparedOperator::Literal(v)) => Some(v),
            Some(PreparedOperator::Predictive(_)) => point.h.as_ref(),
        }
    }

    /// Joint log-density; the point must pass [`PreparedJoint::check`].
    pub fn evaluate(&self, point: &JointPoint) -> JointBreakdown {
        let p = &self.params;
        let mut out = JointBreakdown::default();
        if let Some(h) = self.effective_h(point) {
            out.agreeability = agreeability_log_stacked(h, &point.robot, p.gamma, p.granularity);
        }
        if let (Some(PreparedOperator::Predictive(m)), Some(h)) = (&self.operator, &point.h) {
            out.operator_likelihood = m.log_pdf(h);
        }
        out.robot_likelihood = self.robot.log_pdf(&point.robot);
        out.crowd_interaction = order_free_sum(
            point
                .crowd
                .iter()
                .map(|c| crowd_pair_log(&point.robot, c, p.crowd_alpha, p.crowd_lengthscale))
                .collect(),
        );
        out.crowd_likelihood = order_free_sum(point.crowd.iter().zip(&self.crowd).map(|(c, m)| m.log_pdf(c)).collect());
        out.finish()
    }

    pub fn try_evaluate(&self, point: &JointPoint) -> Result<JointBreakdown, InteractionError> {
        self.check(point)?;
        Ok(self.evaluate(point))
    }
}

/// Unnormalized joint log-density of stacked trajectories.
pub fn joint_log_density(
    point: &JointPoint,
    models: &JointModels,
    params: &InteractionParams,
) -> Result<JointBreakdown, InteractionError> {
    PreparedJoint::new(models, params)?.try_evaluate(point)
}

/// Trajectory-level form of [`joint_log_density`].
pub fn joint_log_density_of(
    h: Option<&Trajectory>,
    f_r: &Trajectory,
    crowd: &[Trajectory],
    models: &JointModels,
    params: &InteractionParams,
) -> Result<JointBreakdown, InteractionError> {
    let grid_ok = |t: &Trajectory| {
        t.times().len() == models.times.len()
            && t.times()
                .iter()
                .zip(&models.times)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()))
    };
    if !grid_ok(f_r) || h.is_some_and(|h| !grid_ok(h)) || crowd.iter().any(|c| !grid_ok(c)) {
        return Err(contract("trajectory not on the model grid"));
    }
    let point = JointPoint {
        h: h.map(|h| h.stacked()),
        robot: f_r.stacked(),
        crowd: crowd.iter().map(|c| c.stacked()).collect(),
    };
    joint_log_density(&point, models, params)
}

// ============================================================================
// Conditioning the autonomy on an operator trajectory
// ============================================================================

#[derive(Debug, Clone)]
struct ConditionedComponent {
    mean: DVector<f64>,
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    innovation: SpdFactor,
    log_weight: f64,
}

/// Multiplies a robot mixture by an isotropic Gaussian pseudo-observation
/// of some of its coordinates — `ψ(h, ·)` when the rows are the coupled
/// ones — for many targets, reusing every target-independent factorization.
#[derive(Debug, Clone)]
pub struct AgreeabilityConditioner {
    robot: GaussianMixture,
    rows: Vec<usize>,
    components: Option<Vec<ConditionedComponent>>,
}

impl AgreeabilityConditioner {
    pub fn new(robot: &GaussianMixture, gamma: f64, granularity: Granularity) -> Result<Self, InteractionError> {
        let s = granularity.coupled_dims(robot.dim());
        Self::on_rows(robot, (0..s).collect(), gamma)
    }

    /// Conditions on coordinates `rows` observed with variance `variance`;
    /// `variance = inf` leaves the mixture unchanged.
    pub fn on_rows(robot: &GaussianMixture, rows: Vec<usize>, variance: f64) -> Result<Self, InteractionError> {
        if !(variance > 0.0) {
            return Err(contract("conditioning variance must be positive"));
        }
        let d = robot.dim();
        if rows.is_empty() || rows.iter().any(|r| *r >= d) {
            return Err(contract("conditioning rows out of range"));
        }
        if variance.is_infinite() {
            return Ok(Self {
                robot: robot.clone(),
                rows,
                components: None,
            });
        }
        let s = rows.len();
        let mut components = Vec::with_capacity(robot.len());
        for (c, w) in robot.components().iter().zip(robot.log_weights()) {
            let sigma = c.covariance();
            let innov = DMatrix::from_fn(s, s, |i, j| {
                sigma[(rows[i], rows[j])] + if i == j { variance } else { 0.0 }
            });
            let factor = SpdFactor::new(&innov, "conditioning innovation")?;
            let cross = DMatrix::from_fn(d, s, |r, j| sigma[(r, rows[j])]);
            let gain = &cross * factor.inverse();
            let mut post = sigma - &gain * cross.transpose();
            post = (&post + post.transpose()) * 0.5;
            components.push(ConditionedComponent {
                mean: c.mean().clone(),
                gain,
                posterior_cov: post,
                innovation: factor,
                log_weight: *w,
            });
        }
        Ok(Self {
            robot: robot.clone(),
            rows,
            components: Some(components),
        })
    }

    fn innovation(&self, target: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| target[*r] - mean[*r]))
    }

    /// `log N(h_S | μ_S, Σ_SS + vI)` per component (zeros when decoupled).
    pub fn log_normalizers(&self, h: &DVector<f64>) -> Vec<f64> {
        let s = self.rows.len() as f64;
        match &self.components {
            None => vec![0.0; self.robot.len()],
            Some(cs) => cs
                .iter()
                .map(|c| {
                    let innov = self.innovation(h, &c.mean);
                    -0.5 * (s * LN_2PI + c.innovation.log_det() + c.innovation.quad_form(&innov))
                })
                .collect(),
        }
    }

    /// The reweighted, renormalized mixture with per-component
    /// log-normalizers and the log-evidence `log Σ_k β_k Z_k`. `h` is a full
    /// stacked vector; only the conditioned rows are read.
    pub fn condition(&self, h: &DVector<f64>) -> Result<MixtureProduct, InteractionError> {
        if h.len() != self.robot.dim() {
            return Err(contract("operator trajectory does not match the robot model"));
        }
        let Some(cs) = &self.components else {
            return Ok(MixtureProduct {
                mixture: self.robot.clone(),
                log_normalizers: vec![0.0; self.robot.len()],
                log_evidence: 0.0,
            });
        };
        let log_normalizers = self.log_normalizers(h);
        let mut comps = Vec::with_capacity(cs.len());
        let mut raw = Vec::with_capacity(cs.len());
        for (c, z) in cs.iter().zip(&log_normalizers) {
            let mean = &c.mean + &c.gain * self.innovation(h, &c.mean);
            comps.push(GaussianDensity::from_parts(mean, c.posterior_cov.clone()));
            raw.push(c.log_weight + z);
        }
        let log_evidence = log_sum_exp(&raw);
        Ok(MixtureProduct {
            mixture: GaussianMixture::new(comps, raw)?,
            log_normalizers,
            log_evidence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::mixture_times_gaussian;
    use crate::trajectory::Point2;
    use nalgebra::dvector;

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        let times = (1..=points.len()).map(|i| i as f64 * 0.25).collect();
        Trajectory::new(times, points.iter().map(|(x, y)| Point2::new(*x, *y)).collect()).unwrap()
    }

    #[test]
    fn agreeability_examples() {
        let p = InteractionParams::default();
        let a = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(agreeability_log(&a, &a, &p).unwrap(), 0.0);
        let p2 = InteractionParams { gamma: 2.0, ..p };
        let v = agreeability_log(&traj(&[(0.0, 0.0)]), &traj(&[(2.0, 0.0)]), &p2).unwrap();
        assert_eq!(v, -1.0);
        let b = traj(&[(0.3, -0.2), (1.5, 0.0)]);
        let p4 = InteractionParams { gamma: 4.0, ..p };
        let ab = agreeability_log(&a, &b, &p2).unwrap();
        assert_eq!(agreeability_log(&a, &b, &p4).unwrap(), ab / 2.0);
        assert_eq!(ab, agreeability_log(&b, &a, &p2).unwrap());
        let next = InteractionParams {
            granularity: Granularity::NextStep,
            ..p2
        };
        assert!((agreeability_log(&a, &b, &next).unwrap() + (0.09 + 0.04) / 4.0).abs() < 1e-15);
        assert!(agreeability_log(&a, &traj(&[(0.0, 0.0)]), &p).is_err());
    }

    #[test]
    fn crowd_examples() {
        let p = InteractionParams {
            crowd_alpha: 0.99,
            ..Default::default()
        };
        let r = traj(&[(1.0, 1.0)]);
        assert_eq!(crowd_avoidance_log(&r, &[], &p).unwrap(), 0.0);
        let v = crowd_avoidance_log(&r, &[traj(&[(1.0, 1.0)])], &p).unwrap();
        assert!((v - 0.01f64.ln()).abs() < 1e-12);
        assert!((v + 4.605).abs() < 1e-3);
        let far = crowd_avoidance_log(&r, &[traj(&[(1e3, 0.0)])], &p).unwrap();
        assert!(far <= 0.0 && far > -1e-300);
    }

    #[test]
    fn crowd_gradient_matches_finite_differences() {
        let f = dvector![0.1, 0.2, 0.5, 0.4];
        let g = dvector![0.3, -0.1, 0.9, 0.6];
        let grad = crowd_pair_gradient(&f, &g, 0.9, 0.6);
        for i in 0..4 {
            let mut a = f.clone();
            let mut b = f.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (crowd_pair_log(&a, &g, 0.9, 0.6) - crowd_pair_log(&b, &g, 0.9, 0.6)) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn params_validation() {
        assert!(InteractionParams::default().validate().is_ok());
        assert!(InteractionParams {
            gamma: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(InteractionParams {
            crowd_alpha: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(InteractionParams {
            gamma: f64::INFINITY,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    fn toy_models(crowd: usize) -> JointModels {
        let times = vec![0.25, 0.5];
        let robot = GaussianMixture::single(GaussianDensity::isotropic(dvector![1.0, 0.0, 2.0, 0.0], 0.2).unwrap());
        let op = GaussianMixture::single(GaussianDensity::isotropic(dvector![1.0, 0.5, 2.0, 1.0], 0.3).unwrap());
        let crowd = (0..crowd)
            .map(|i| GaussianDensity::isotropic(dvector![i as f64, 1.0, i as f64, 1.5], 0.1).unwrap())
            .collect();
        JointModels {
            times,
            operator: Some(OperatorModel::Predictive(op)),
            robot,
            crowd,
        }
    }

    #[test]
    fn missing_models_are_configuration_errors() {
        let models = toy_models(1);
        let p = InteractionParams::default();
        let x = dvector![0.0, 0.0, 0.0, 0.0];
        let point = JointPoint {
            h: Some(x.clone()),
            robot: x.clone(),
            crowd: vec![x.clone(), x.clone()],
        };
        assert!(matches!(
            joint_log_density(&point, &models, &p),
            Err(InteractionError::MissingModel(_))
        ));
        let mut no_op = models.clone();
        no_op.operator = None;
        let point = JointPoint {
            h: Some(x.clone()),
            robot: x.clone(),
            crowd: vec![x.clone()],
        };
        assert!(matches!(
            joint_log_density(&point, &no_op, &p),
            Err(InteractionError::MissingModel(_))
        ));
    }

    #[test]
    fn joint_is_sum_of_terms() {
        let models = toy_models(2);
        let p = InteractionParams::default();
        let point = JointPoint {
            h: Some(dvector![1.0, 0.4, 2.0, 0.8]),
            robot: dvector![1.0, 0.1, 2.0, 0.2],
            crowd: vec![dvector![0.0, 1.0, 0.0, 1.5], dvector![1.0, 1.0, 1.0, 1.5]],
        };
        let b = joint_log_density(&point, &models, &p).unwrap();
        let op = models.operator.as_ref().unwrap();
        let OperatorModel::Predictive(op) = op else {
            unreachable!()
        };
        let expected = op.log_pdf(point.h.as_ref().unwrap()).unwrap()
            + models.robot.log_pdf(&point.robot).unwrap()
            + models.crowd[0].log_pdf(&point.crowd[0]).unwrap()
            + models.crowd[1].log_pdf(&point.crowd[1]).unwrap()
            + agreeability_log_stacked(point.h.as_ref().unwrap(), &point.robot, p.gamma, p.granularity)
            + crowd_pair_log(&point.robot, &point.crowd[0], p.crowd_alpha, p.crowd_lengthscale)
            + crowd_pair_log(&point.robot, &point.crowd[1], p.crowd_alpha, p.crowd_lengthscale);
        assert!((b.total - expected).abs() < 1e-12);
        assert!(b.agreeability <= 0.0 && b.crowd_interaction <= 0.0);
    }

    #[test]
    fn conditioner_matches_mixture_product() {
        let robot = GaussianMixture::new(
            vec![
                GaussianDensity::isotropic(dvector![1.0, 0.0, 2.0, 0.0], 0.2).unwrap(),
                GaussianDensity::new(
                    dvector![1.0, 1.0, 2.0, 2.0],
                    DMatrix::from_row_slice(
                        4,
                        4,
                        &[
                            0.3, 0.1, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.0, 0.0, 0.5, 0.2, 0.0, 0.0, 0.2, 0.5,
                        ],
                    ),
                )
                .unwrap(),
            ],
            vec![0.3f64.ln(), 0.7f64.ln()],
        )
        .unwrap();
        let h = dvector![0.9, 0.6, 2.1, 1.2];
        let gamma = 0.5;
        let cond = AgreeabilityConditioner::new(&robot, gamma, Granularity::FullTrajectory).unwrap();
        let a = cond.condition(&h).unwrap();
        let b = mixture_times_gaussian(&robot, &GaussianDensity::isotropic(h.clone(), gamma).unwrap()).unwrap();
        for (x, y) in a.mixture.components().iter().zip(b.mixture.components()) {
            assert!((x.mean() - y.mean()).amax() < 1e-12);
            assert!((x.covariance() - y.covariance()).amax() < 1e-12);
        }
        for (x, y) in a.log_normalizers.iter().zip(&b.log_normalizers) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.log_evidence - b.log_evidence).abs() < 1e-12);
        let decoupled = AgreeabilityConditioner::new(&robot, f64::INFINITY, Granularity::FullTrajectory).unwrap();
        assert_eq!(decoupled.condition(&h).unwrap().mixture, robot);
    }
}
