//! Linear trajectory blending of the operator and autonomy modes.

use super::{
    autonomy_mode, autonomy_only, gains, operator_mode, put, put_mode_weights, report, ArbitrationError,
    ArbitrationInput, ArbitrationReport, Arbitrator, Diagnostics, Method,
};

/// `K_h h̄ + K_R f̄^R`, waypoint-wise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ltb;

impl Arbitrator for Ltb {
    fn method(&self) -> Method {
        Method::Ltb
    }

    fn arbitrate(&self, input: &ArbitrationInput<'_>) -> Result<ArbitrationReport, ArbitrationError> {
        input.validate()?;
        let Some((h, op_mode)) = operator_mode(input.models)? else {
            return autonomy_only(Method::Ltb, input);
        };
        let mut d = Diagnostics::new();
        let (f, mode) = autonomy_mode(input, &input.models.robot)?;
        let g = gains(input, &input.models.robot, mode, &mut d)?;
        let blended = &h * g.k_h() + &f * g.k_r();
        put(&mut d, "operator_mode", op_mode as f64);
        put(&mut d, "robot_mode", mode as f64);
        put(&mut d, "n_r", input.models.robot.len() as f64);
        put_mode_weights(&mut d, input.models.robot.log_weights(), None);
        report(Method::Ltb, input, &blended, d)
    }
}
