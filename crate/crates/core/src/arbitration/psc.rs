//! Probabilistic shared control: the MAP of the joint over operator, robot
//! and crowd trajectories.

use super::{
    autonomy_mode, autonomy_only, dominant_component, gains, operator_mode, point_with_crowd_means, put,
    put_mode_weights, report, search, search_diagnostics, ArbitrationError, ArbitrationInput, ArbitrationReport,
    Arbitrator, Diagnostics, Method,
};
use crate::interaction::{AgreeabilityConditioner, PreparedJoint};

/// Sample-then-refine maximization of the joint. The operator mode, the
/// autonomy mode and the LTB trajectory are always scored, so the result
/// never scores below LTB.
#[derive(Debug, Clone, Copy, Default)]
pub struct Psc;

impl Arbitrator for Psc {
    fn method(&self) -> Method {
        Method::Psc
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        input.validate()?;
        let Some((h_bar, _)) = operator_mode(input.models)? else {
            return autonomy_only(Method::Psc, input);
        };
        let mut d = Diagnostics::new();
        let joint = PreparedJoint::new(input.models, &input.params)?;
        let (f_bar, mode) = autonomy_mode(input, &input.models.robot)?;
        let mut gain_diag = Diagnostics::new();
        let g = gains(input, &input.models.robot, mode, &mut gain_diag)?;
        let ltb = &h_bar * g.k_h() + &f_bar * g.k_r();
        let ltb_point = point_with_crowd_means(input.models, Some(h_bar.clone()), ltb);
        let extra = vec![
            point_with_crowd_means(input.models, Some(h_bar.clone()), f_bar),
            ltb_point.clone(),
        ];
        let cfg = input.config.search(input.seed);
        let out = search::search(&joint, extra, &cfg)?;
        search_diagnostics(&mut d, &out, cfg.budget);
        put(&mut d, "ltb_joint_log_density", joint.evaluate(&ltb_point).total);

        if let Some(h) = joint.effective_h(&out.point) {
            let conditioner =
                AgreeabilityConditioner::new(&input.models.robot, input.params.gamma, input.params.granularity)?;
            let product = conditioner.condition(h)?;
            put(&mut d, "log_evidence", product.log_evidence);
            put_mode_weights(&mut d, product.mixture.log_weights(), Some(&product.log_normalizers));
        }
        put(
            &mut d,
            "robot_mode",
            dominant_component(&input.models.robot, &out.point.robot)? as f64,
        );
        put(&mut d, "n_r", input.models.robot.len() as f64);
        report(Method::Psc, input, &out.point.robot, d)
    }
}
