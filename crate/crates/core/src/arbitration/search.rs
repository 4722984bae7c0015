//! Sample-then-refine maximization of the joint log-density.
//!
//! Candidates are scored in parallel and reduced in index order, so the
//! outcome depends only on the inputs and the seed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ArbitrationError;
use crate::gaussian::{GaussianSampler, PreparedMixture};
use crate::interaction::{crowd_pair_gradient, JointBreakdown, JointPoint, PreparedJoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Random candidate draws from the model priors.
    pub budget: usize,
    /// Best distinct candidates handed to local refinement.
    pub refine_top: usize,
    /// Maximum block-ascent passes per refined candidate.
    pub passes: usize,
    /// Seed every closed-form operator/robot component-pair mode.
    pub analytic_seeds: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            refine_top: 3,
            passes: 20,
            analytic_seeds: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub point: JointPoint,
    pub breakdown: JointBreakdown,
    /// Another distinct refined point reached the same joint value.
    pub tie: bool,
    pub candidates: usize,
    /// Index of the candidate whose refinement won.
    pub best_candidate: usize,
    pub passes: usize,
}

/// Distance below which two refined points count as the same solution.
const DISTINCT_TOL: f64 = 1e-6;

/// Maximizes the joint over `(h, f^R, f)`; `extra` candidates are always
/// scored (after the analytic seeds and mean pairs, before random draws).
pub fn search(
    joint: &PreparedJoint,
    extra: Vec<JointPoint>,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, ArbitrationError> {
    for p in &extra {
        joint.check(p)?;
    }
    let mut candidates = structured_candidates(joint, cfg.analytic_seeds)?;
    candidates.extend(extra);
    candidates.extend(random_candidates(joint, cfg.budget, cfg.seed));

    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let v = joint.evaluate(c).total;
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        })
        .collect();
    if !scores.iter().any(|s| s.is_finite()) {
        return Err(ArbitrationError::Infeasible(format!(
            "none of {} candidates has a finite joint density",
            candidates.len()
        )));
    }

    let mut order: Vec<usize> = (0..candidates.len()).filter(|i| scores[*i].is_finite()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let mut picked: Vec<usize> = Vec::new();
    for i in order {
        if picked.len() >= cfg.refine_top.max(1) {
            break;
        }
        if picked
            .iter()
            .all(|j| point_distance(&candidates[i], &candidates[*j]) > DISTINCT_TOL)
        {
            picked.push(i);
        }
    }

    let refined: Vec<(JointPoint, f64, usize)> = picked
        .par_iter()
        .map(|i| refine(joint, candidates[*i].clone(), scores[*i], cfg.passes))
        .collect();

    let mut best = 0;
    for (k, r) in refined.iter().enumerate() {
        if r.1 > refined[best].1 {
            best = k;
        }
    }
    let best_value = refined[best].1;
    let tie = refined.iter().enumerate().any(|(k, r)| {
        k != best
            && (r.1 - best_value).abs() <= 1e-12 * (1.0 + best_value.abs())
            && point_distance(&r.0, &refined[best].0) > DISTINCT_TOL
    });
    let (point, _, passes) = refined[best].clone();
    let breakdown = joint.evaluate(&point);
    Ok(SearchOutcome {
        point,
        breakdown,
        tie,
        candidates: candidates.len(),
        best_candidate: picked[best],
        passes,
    })
}

fn point_distance(a: &JointPoint, b: &JointPoint) -> f64 {
    let mut d = (&a.robot - &b.robot).amax();
    if let (Some(x), Some(y)) = (&a.h, &b.h) {
        d = d.max((x - y).amax());
    }
    for (x, y) in a.crowd.iter().zip(&b.crowd) {
        d = d.max((x - y).amax());
    }
    d
}

fn coupling(joint: &PreparedJoint) -> DVector<f64> {
    let p = joint.params();
    let d = joint.dim();
    let s = p.granularity.coupled_dims(d);
    let q = if p.gamma.is_infinite() { 0.0 } else { 1.0 / p.gamma };
    DVector::from_fn(d, |i, _| if i < s { q } else { 0.0 })
}

fn crowd_means(joint: &PreparedJoint) -> Vec<DVector<f64>> {
    joint.crowd_models().iter().map(|c| c.mean().clone()).collect()
}

/// Closed-form component-pair modes (ignoring the crowd) and mean pairs.
fn structured_candidates(joint: &PreparedJoint, analytic: bool) -> Result<Vec<JointPoint>, ArbitrationError> {
    let q = coupling(joint);
    let crowd = crowd_means(joint);
    let robot = joint.robot();
    let robot_parts: Vec<(DVector<f64>, DMatrix<f64>)> = robot_components(robot);
    let mut out = Vec::new();

    if let Some(op) = joint.operator_mixture() {
        let op_parts = robot_components(op);
        for (mu_m, p_m) in &op_parts {
            for (mu_n, p_n) in &robot_parts {
                if analytic {
                    if let Some((h, f)) = pair_mode(mu_m, p_m, mu_n, p_n, &q) {
                        out.push(JointPoint {
                            h: Some(h),
                            robot: f,
                            crowd: crowd.clone(),
                        });
                    }
                }
                out.push(JointPoint {
                    h: Some(mu_m.clone()),
                    robot: mu_n.clone(),
                    crowd: crowd.clone(),
                });
            }
        }
    } else {
        for (mu_n, p_n) in &robot_parts {
            if analytic {
                if let Some(z) = joint.literal_operator() {
                    let lhs = p_n + DMatrix::from_diagonal(&q);
                    let rhs = p_n * mu_n + q.component_mul(z);
                    if let Some(ch) = lhs.cholesky() {
                        out.push(JointPoint {
                            h: None,
                            robot: ch.solve(&rhs),
                            crowd: crowd.clone(),
                        });
                    }
                }
            }
            out.push(JointPoint {
                h: None,
                robot: mu_n.clone(),
                crowd: crowd.clone(),
            });
        }
    }
    Ok(out)
}

fn robot_components(m: &PreparedMixture) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    m.means().cloned().zip(m.precisions().cloned()).collect()
}

/// Mode of `N(h|μ_m,P_m⁻¹) N(f|μ_n,P_n⁻¹) exp(−½ (h−f)ᵀ Q (h−f))`.
fn pair_mode(
    mu_m: &DVector<f64>,
    p_m: &DMatrix<f64>,
    mu_n: &DVector<f64>,
    p_n: &DMatrix<f64>,
    q: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = mu_m.len();
    let qd = DMatrix::from_diagonal(q);
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    a.view_mut((0, 0), (d, d)).copy_from(&(p_m + &qd));
    a.view_mut((d, d), (d, d)).copy_from(&(p_n + &qd));
    a.view_mut((0, d), (d, d)).copy_from(&(-&qd));
    a.view_mut((d, 0), (d, d)).copy_from(&(-&qd));
    let mut b = DVector::zeros(2 * d);
    b.rows_mut(0, d).copy_from(&(p_m * mu_m));
    b.rows_mut(d, d).copy_from(&(p_n * mu_n));
    let x = a.cholesky()?.solve(&b);
    Some((x.rows(0, d).into_owned(), x.rows(d, d).into_owned()))
}

fn random_candidates(joint: &PreparedJoint, budget: usize, seed: u64) -> Vec<JointPoint> {
    if budget == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = joint.operator_mixture().map(|m| (m.clone(), m.samplers()));
    let robot_samplers = joint.robot().samplers();
    let crowd_samplers: Vec<GaussianSampler> = joint.crowd_models().iter().map(|c| c.sampler()).collect();
    (0..budget)
        .map(|_| {
            let h = op.as_ref().map(|(m, s)| m.sample(s, &mut rng));
            let robot = joint.robot().sample(&robot_samplers, &mut rng);
            let crowd = crowd_samplers.iter().map(|s| s.draw(&mut rng)).collect();
            JointPoint { h, robot, crowd }
        })
        .collect()
}

/// Block coordinate ascent: the coupled (operator, robot) block, then each
/// crowd trajectory. Steps are curvature-preconditioned and halved until
/// the joint increases.
fn refine(joint: &PreparedJoint, mut point: JointPoint, mut value: f64, passes: usize) -> (JointPoint, f64, usize) {
    let q = coupling(joint);
    let p = *joint.params();
    let d = joint.dim();
    let free_h = joint.has_free_operator();
    let mut used = 0;
    for _ in 0..passes {
        used += 1;
        let start = value;

        // operator + robot block
        let (grad, curv) = {
            let (_, g_f, m_f) = joint.robot().gradient_and_curvature(&point.robot);
            let mut g_f = g_f;
            for c in &point.crowd {
                g_f += crowd_pair_gradient(&point.robot, c, p.crowd_alpha, p.crowd_lengthscale);
            }
            match (free_h, joint.effective_h(&point).cloned()) {
                (true, Some(h)) => {
                    let op = joint.operator_mixture().expect("free operator");
                    let (_, g_h, m_h) = op.gradient_and_curvature(&h);
                    let diff = q.component_mul(&(&point.robot - &h));
                    let mut g = DVector::zeros(2 * d);
                    g.rows_mut(0, d).copy_from(&(g_h + &diff));
                    g.rows_mut(d, d).copy_from(&(g_f - &diff));
                    let qd = DMatrix::from_diagonal(&q);
                    let mut m = DMatrix::zeros(2 * d, 2 * d);
                    m.view_mut((0, 0), (d, d)).copy_from(&(m_h + &qd));
                    m.view_mut((d, d), (d, d)).copy_from(&(m_f + &qd));
                    m.view_mut((0, d), (d, d)).copy_from(&(-&qd));
                    m.view_mut((d, 0), (d, d)).copy_from(&(-&qd));
                    (g, m)
                }
                (_, Some(h)) => {
                    let g = g_f + q.component_mul(&(&h - &point.robot));
                    (g, m_f + DMatrix::from_diagonal(&q))
                }
                (_, None) => (g_f, m_f),
            }
        };
        let step = match curv.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad,
        };
        let apply = |pt: &JointPoint, t: f64| {
            let mut next = pt.clone();
            if step.len() == 2 * d {
                let h = next.h.as_mut().expect("free operator");
                h.axpy(t, &step.rows(0, d), 1.0);
                next.robot.axpy(t, &step.rows(d, d), 1.0);
            } else {
                next.robot.axpy(t, &step, 1.0);
            }
            next
        };
        if let Some((next, v)) = line_search(joint, &point, value, apply) {
            point = next;
            value = v;
        }

        // crowd blocks
        for i in 0..point.crowd.len() {
            let model = &joint.crowd_models()[i];
            let g = model.gradient(&point.crowd[i])
                - crowd_pair_gradient(&point.robot, &point.crowd[i], p.crowd_alpha, p.crowd_lengthscale);
            let step = model.covariance_times(&g);
            let apply = |pt: &JointPoint, t: f64| {
                let mut next = pt.clone();
                next.crowd[i].axpy(t, &step, 1.0);
                next
            };
            if let Some((next, v)) = line_search(joint, &point, value, apply) {
                point = next;
                value = v;
            }
        }

        if value - start <= 1e-14 * (1.0 + value.abs()) {
            break;
        }
    }
    (point, value, used)
}

fn line_search<F>(joint: &PreparedJoint, point: &JointPoint, value: f64, apply: F) -> Option<(JointPoint, f64)>
where
    F: Fn(&JointPoint, f64) -> JointPoint,
{
    let mut t = 1.0;
    for _ in 0..40 {
        let next = apply(point, t);
        let v = joint.evaluate(&next).total;
        if v > value {
            return Some((next, v));
        }
        t *= 0.5;
    }
    None
}
