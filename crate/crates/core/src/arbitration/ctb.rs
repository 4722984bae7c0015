//! Conditional trajectory blending: a weighted mixture of autonomy
//! posteriors, one per operator sample.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    autonomy_only, contract, put, report, search, ArbitrationError, ArbitrationInput, ArbitrationReport, Arbitrator,
    Diagnostics, Method,
};
use crate::gaussian::{log_sum_exp, GaussianMixture};
use crate::interaction::{AgreeabilityConditioner, JointModels, OperatorModel, PreparedJoint};

/// Merges bitwise-identical samples, keeping first-occurrence order.
fn merge_duplicates(samples: &[DVector<f64>]) -> Vec<(DVector<f64>, usize)> {
    let mut out: Vec<(DVector<f64>, usize)> = Vec::new();
    for s in samples {
        match out.iter_mut().find(|(u, _)| u == s) {
            Some((_, n)) => *n += 1,
            None => out.push((s.clone(), 1)),
        }
    }
    out
}

/// CTB over explicit operator samples.
///
/// Sample `b` (with multiplicity `n_b`) contributes the autonomy mixture
/// conditioned on `h^b` through agreeability, weighted by
/// `w^b ∝ n_b · Z_b` where `Z_b` is that conditioning's evidence. The
/// samples stand for draws from the operator model, so these importance
/// weights make the mixture approximate the joint's robot marginal.
pub fn ctb_with_samples(
    input: &ArbitrationInput<'_>,
    samples: &[DVector<f64>],
) -> Result<ArbitrationReport, ArbitrationError> {
    input.validate()?;
    if samples.is_empty() {
        return Err(contract("CTB needs at least one operator sample"));
    }
    let dim = input.models.dim();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(contract("operator sample does not match the grid"));
    }
    let unique = merge_duplicates(samples);
    let conditioner = AgreeabilityConditioner::new(&input.models.robot, input.params.gamma, input.params.granularity)?;
    let mut products = Vec::with_capacity(unique.len());
    let mut raw = Vec::with_capacity(unique.len());
    for (h, n) in &unique {
        let p = conditioner.condition(h)?;
        raw.push((*n as f64).ln() + p.log_evidence);
        products.push(p);
    }
    let total = log_sum_exp(&raw);
    let log_w: Vec<f64> = raw.iter().map(|r| r - total).collect();
    let weight_sum: f64 = log_w.iter().map(|w| w.exp()).sum();

    let n_r = input.models.robot.len();
    let mut components = Vec::with_capacity(unique.len() * n_r);
    let mut weights = Vec::with_capacity(unique.len() * n_r);
    for (p, w) in products.into_iter().zip(&log_w) {
        let lw = p.mixture.log_weights().to_vec();
        for (c, cw) in p.mixture.components().iter().zip(lw) {
            components.push(c.clone());
            weights.push(w + cw);
        }
    }
    let combined = GaussianMixture::new(components, weights)?;
    let models = JointModels {
        times: input.models.times.clone(),
        operator: None,
        robot: combined,
        crowd: input.models.crowd.clone(),
    };
    let joint = PreparedJoint::new(&models, &input.params)?;
    let out = search::search(&joint, Vec::new(), &input.config.search(input.seed))?;
    let f = out.point.robot;
    let mode = super::dominant_component(&models.robot, &f)?;

    let mut d = Diagnostics::new();
    put(&mut d, "n_h", samples.len() as f64);
    put(&mut d, "n_h_unique", unique.len() as f64);
    put(&mut d, "n_r", n_r as f64);
    put(&mut d, "ctb_weight_sum", weight_sum);
    put(&mut d, "robot_mode", (mode % n_r) as f64);
    put(&mut d, "log_evidence", total - (samples.len() as f64).ln());
    report(Method::Ctb, input, &f, d)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ctb;

impl Arbitrator for Ctb {
    fn method(&self) -> Method {
        Method::Ctb
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        input.validate()?;
        let n = input.config.n_samples;
        let samples = match &input.models.operator {
            None => return autonomy_only(Method::Ctb, input),
            Some(OperatorModel::Literal(v)) => vec![v.clone(); n],
            Some(OperatorModel::Predictive(m)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
                let samplers = m.samplers();
                (0..n).map(|_| m.sample(&samplers, &mut rng)).collect()
            }
        };
        ctb_with_samples(input, &samples)
    }
}
